//! TOML scenario files and their translation into model objects.

use std::path::Path;

use detfun::conditions::ModelConstants;
use detfun::functionals::{completeness_defect, FunctionalSet, SpacePair};
use detfun::noise::CovarianceSpec;
use detfun::rds::{default_burn_in, NseParams};
use detfun::spectral::{SpectralField, SpectralGrid};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelBlock,
    pub noise: NoiseBlock,
    pub functionals: Option<FunctionalBlock>,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub constants: ConstantsBlock,
    pub initial: Option<InitialBlock>,
    pub sweep: Option<SweepBlock>,
    /// Output directory (overridden by `--out`).
    pub output: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub n_max: usize,
    pub nu: f64,
    pub kappa: f64,
    #[serde(default)]
    pub forcing: Vec<ModeValue>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModeValue {
    pub k: [i32; 2],
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    pub sigma2: f64,
    pub decay_p: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalBlock {
    /// `modes` or `volume_averages`.
    pub kind: String,
    pub cutoff_sq: Option<f64>,
    /// Nested mode families for `defect` (one CSV row each).
    pub cutoffs: Option<Vec<f64>>,
    pub centers: Option<Vec<[f64; 2]>>,
    /// `m` for an `m × m` lattice of disk centres.
    pub lattice: Option<usize>,
    pub radius: Option<f64>,
    /// `vh` (default) or `hw`.
    pub pair: Option<String>,
    /// Sobolev index of `W` for the `hw` pair.
    pub s: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunBlock {
    pub t_end: f64,
    pub dt: f64,
    pub pairs: usize,
    pub paths: usize,
    pub initial_conditions: usize,
    pub m_window: f64,
    pub window_start: f64,
    pub delta: f64,
    /// Exceedance level, relative to `‖w(0)‖_H`.
    pub delta_level: f64,
    pub max_exceedance: f64,
    pub radius_eps: f64,
    pub burn_in: Option<f64>,
    pub save_every: Option<usize>,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            dt: 1e-3,
            pairs: 16,
            paths: 16,
            initial_conditions: 4,
            m_window: 1.0,
            window_start: 0.0,
            delta: 0.1,
            delta_level: 1e-3,
            max_exceedance: 0.05,
            radius_eps: 0.1,
            burn_in: None,
            save_every: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsBlock {
    pub c_e: Option<f64>,
    pub a0: f64,
    pub a1: f64,
    pub eps_l: Option<f64>,
}

impl Default for ConstantsBlock {
    fn default() -> Self {
        Self { c_e: None, a0: 1.0, a1: 1.0, eps_l: None }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    #[serde(default)]
    pub modes: Vec<ModeValue>,
    /// Radius of a random initial field (instead of the absorbing radius).
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// One of `kappa`, `nu`, `sigma2`, `decay_p`, `cutoff_sq`, `eps_l`.
    pub parameter: String,
    pub values: Vec<f64>,
}

fn cfg(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl Scenario {
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
        let s: Scenario = toml::from_str(text).map_err(|e| cfg(format!("{}: {}", path.display(), e.message())))?;
        s.validate()?;
        Ok((s, bytes))
    }

    fn validate(&self) -> Result<(), CliError> {
        let r = &self.run;
        for (name, v) in [("run.t_end", r.t_end), ("run.dt", r.dt), ("run.m_window", r.m_window), ("run.delta", r.delta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(cfg(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.model.nu.is_nan() || self.model.nu <= 0.0 {
            return Err(cfg(format!("model.nu must be > 0, got {}", self.model.nu)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<SpectralGrid, CliError> {
        SpectralGrid::new(self.model.n_max).map_err(cfg)
    }

    fn field(grid: &SpectralGrid, modes: &[ModeValue], what: &str) -> Result<SpectralField, CliError> {
        let mut f = SpectralField::zeros(grid);
        for m in modes {
            f.set_mode(m.k, Complex64::new(m.re, m.im)).map_err(|e| cfg(format!("{what}: {e}")))?;
        }
        Ok(f)
    }

    pub fn params(&self) -> Result<NseParams, CliError> {
        let g = self.grid()?;
        let f = Self::field(&g, &self.model.forcing, "model.forcing")?;
        NseParams::new(self.model.nu, self.model.kappa, f).map_err(cfg)
    }

    pub fn covariance(&self) -> Result<CovarianceSpec, CliError> {
        let g = self.grid()?;
        if self.noise.sigma2 == 0.0 {
            return Ok(CovarianceSpec::zero(&g));
        }
        CovarianceSpec::power_law(&g, self.noise.sigma2, self.noise.decay_p).map_err(cfg)
    }

    pub fn initial_modes(&self) -> Result<Option<SpectralField>, CliError> {
        match &self.initial {
            Some(b) if !b.modes.is_empty() => Ok(Some(Self::field(&self.grid()?, &b.modes, "initial.modes")?)),
            _ => Ok(None),
        }
    }

    pub fn burn_in(&self) -> f64 {
        self.run.burn_in.unwrap_or_else(|| default_burn_in(self.model.nu, 1.0))
    }

    pub fn save_every(&self) -> usize {
        self.run.save_every.unwrap_or_else(|| (1.0 / self.run.dt).round().max(1.0) as usize)
    }

    pub fn pair(&self) -> Result<SpacePair, CliError> {
        let fb = self.functionals.as_ref();
        match fb.and_then(|f| f.pair.as_deref()).unwrap_or("vh") {
            "vh" => Ok(SpacePair::vh()),
            "hw" => SpacePair::hw(fb.and_then(|f| f.s).unwrap_or(1.0)).map_err(cfg),
            other => Err(cfg(format!("functionals.pair must be `vh` or `hw`, got `{other}`"))),
        }
    }

    fn block(&self) -> Result<&FunctionalBlock, CliError> {
        self.functionals.as_ref().ok_or_else(|| cfg("missing [functionals] block"))
    }

    /// The family at `cutoff_sq` (or the configured disks).
    pub fn functional_set(&self) -> Result<FunctionalSet, CliError> {
        let b = self.block()?;
        let cutoff = b.cutoff_sq.or_else(|| b.cutoffs.as_ref().and_then(|c| c.last().copied()));
        self.family_with_cutoff(cutoff)
    }

    pub fn family_with_cutoff(&self, cutoff: Option<f64>) -> Result<FunctionalSet, CliError> {
        let b = self.block()?;
        let g = self.grid()?;
        match b.kind.as_str() {
            "modes" => {
                let c = cutoff.ok_or_else(|| cfg("functionals.cutoff_sq is required for kind = \"modes\""))?;
                FunctionalSet::modes_cutoff(&g, c).map_err(cfg)
            }
            "volume_averages" => {
                let r = b.radius.ok_or_else(|| cfg("functionals.radius is required for volume averages"))?;
                match (&b.centers, b.lattice) {
                    (Some(c), _) => FunctionalSet::volume_averages(&g, c, r).map_err(cfg),
                    (None, Some(m)) => FunctionalSet::volume_average_lattice(&g, m, r).map_err(cfg),
                    _ => Err(cfg("functionals.centers or functionals.lattice is required")),
                }
            }
            other => Err(cfg(format!("functionals.kind must be `modes` or `volume_averages`, got `{other}`"))),
        }
    }

    /// `(V, H)` defect of the configured family unless overridden.
    pub fn eps_l(&self) -> Result<f64, CliError> {
        if let Some(e) = self.constants.eps_l {
            return Ok(e);
        }
        let l = self.functional_set()?;
        Ok(completeness_defect(&l, &SpacePair::vh(), None).map_err(cfg)?.eps)
    }

    pub fn model_constants(&self) -> Result<ModelConstants, CliError> {
        let p = self.params()?;
        let q = self.covariance()?;
        let mut c = ModelConstants::for_model(&p, &q, self.eps_l()?);
        if let Some(ce) = self.constants.c_e {
            c.c_e = ce;
        }
        c.sigma_a0 = self.constants.a0;
        c.sigma_a1 = self.constants.a1;
        c.m_window = self.run.m_window;
        c.validate().map_err(cfg)?;
        Ok(c)
    }

    /// Copy with one scalar parameter replaced (for sweeps).
    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self, CliError> {
        let mut s = self.clone();
        match name {
            "kappa" => s.model.kappa = value,
            "nu" => s.model.nu = value,
            "sigma2" => s.noise.sigma2 = value,
            "decay_p" => s.noise.decay_p = value,
            "eps_l" => s.constants.eps_l = Some(value),
            "cutoff_sq" => {
                let b = s.functionals.as_mut().ok_or_else(|| cfg("sweeping cutoff_sq needs a [functionals] block"))?;
                b.cutoff_sq = Some(value);
                b.cutoffs = None;
            }
            other => return Err(cfg(format!("sweep.parameter `{other}` is not sweepable"))),
        }
        s.validate()?;
        Ok(s)
    }
}
