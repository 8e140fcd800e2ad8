//! Pathwise and Monte Carlo checks of the determining property: same-noise
//! pair runs, the Gronwall bound for their difference, the expectation
//! condition on the Lipschitz rate, exceedance statistics, squeezing, and the
//! transfer of everything through the conjugation `v = u + z`.

mod conjugacy;
mod gronwall;
mod stats;

pub use conjugacy::{conjugacy_transfer, integrator_gap, ConjugacyReport};
pub use gronwall::{check_gronwall, check_gronwall_scaled, GronwallCheck, GronwallParams};
pub use stats::{
    convergence_in_probability, empirical_condition4, spearman, squeeze_estimate, theorem23_recursion, Branch,
    Condition4Report, ErgodicLedger, ExceedanceReport, Level, RecursionBound, SqueezeReport,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conditions::trapezoid;
use crate::ensemble::map_ordered;
use crate::error::{invalid, Error, Result};
use crate::functionals::{random_field, FunctionalSet};
use crate::noise::{CovarianceSpec, NoisePath, PathSpec};
use crate::rds::{lipschitz_l, lipschitz_l_pair, radius_path, NseParams, Scheme, Stepper, StepOptions, Termination};
use crate::spectral::{SpectralField, SpectralGrid};

/// Run settings shared by every pair of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Keep `u₁`, `u₂` every `save_every` steps (scalar diagnostics are kept
    /// at every step).
    pub save_every: usize,
    pub eps_l: f64,
    pub delta: f64,
}

impl PairOptions {
    pub fn new(t_end: f64, dt: f64, eps_l: f64) -> Self {
        let per_unit = (1.0 / dt).round().max(1.0) as usize;
        Self { t_end, dt, save_every: per_unit, eps_l, delta: 0.1 }
    }

    /// Integrator steps per unit of time.
    pub fn steps_per_unit(&self) -> Result<usize> {
        let r = 1.0 / self.dt;
        let n = r.round();
        if (r - n).abs() > 1e-9 * r || n < 1.0 {
            return Err(invalid("dt", "unit windows need 1/dt to be an integer"));
        }
        Ok(n as usize)
    }
}

/// Two solutions of the transformed equation driven by the same noise path,
/// with the diagnostics of their difference `w = u₁ - u₂` at every step.
#[derive(Debug, Clone, Serialize)]
pub struct PairTrace {
    pub seed: u64,
    pub dt: f64,
    pub nu: f64,
    pub eps_l: f64,
    pub delta: f64,
    /// Gronwall constant `c = ν/2`.
    pub c: f64,
    /// Radius of the sphere the initial data were drawn from (if sampled).
    pub radius: Option<f64>,
    pub times: Vec<f64>,
    pub w_h_sq: Vec<f64>,
    pub w_v_sq: Vec<f64>,
    /// `η_L = max_j |l_j(w)|²`.
    pub eta: Vec<f64>,
    /// Lipschitz rate `l` (smaller of the two solutions).
    pub l: Vec<f64>,
    /// `q = 2l - 2c (1+δ)^{-1} ε_L^{-2}`.
    pub q: Vec<f64>,
    /// Integrator step index of each stored snapshot.
    pub snapshot_steps: Vec<usize>,
    #[serde(skip)]
    pub u1: Vec<SpectralField>,
    #[serde(skip)]
    pub u2: Vec<SpectralField>,
    pub cfl_violation: Option<f64>,
    pub termination: Termination,
}

impl PairTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.termination == Termination::Completed
    }

    pub fn w_h(&self, n: usize) -> f64 {
        self.w_h_sq[n].sqrt()
    }

    /// `w` at a stored snapshot.
    pub fn w_snapshot(&self, i: usize) -> SpectralField {
        &self.u1[i] - &self.u2[i]
    }

    /// Snapshot slot holding integrator step `step`.
    pub fn snapshot_at_step(&self, step: usize) -> Option<usize> {
        self.snapshot_steps.binary_search(&step).ok()
    }

    fn index_of_time(&self, t: f64) -> Result<usize> {
        let r = t / self.dt;
        let n = r.round();
        if (r - n).abs() > 1e-9 * r.max(1.0) || n < 0.0 {
            return Err(Error::Misaligned(format!("t = {t} is not on the step grid")));
        }
        Ok(n as usize)
    }

    /// `∫_{t0}^{t0+width} η_L dτ` by the trapezoid rule.
    pub fn window_eta(&self, t0: f64, width: f64) -> Result<f64> {
        let a = self.index_of_time(t0)?;
        let b = self.index_of_time(t0 + width)?;
        if b >= self.eta.len() {
            return Err(Error::Misaligned(format!("window ends at {} past the trace", t0 + width)));
        }
        Ok(trapezoid(&self.eta[a..=b], self.dt))
    }

    /// `(t, ∫_t^{t+1} η_L)` for `t = 0, 1, …` while the window fits.
    pub fn unit_windows(&self) -> Vec<(f64, f64)> {
        let per = (1.0 / self.dt).round() as usize;
        if per == 0 {
            return Vec::new();
        }
        (0..)
            .map(|j| j * per)
            .take_while(|&a| a + per < self.eta.len())
            .map(|a| (a as f64 * self.dt, trapezoid(&self.eta[a..=a + per], self.dt)))
            .collect()
    }
}

/// Integrate both initial data with the identical noise path.
pub fn run_pair(
    x1: &SpectralField,
    x2: &SpectralField,
    path: &NoisePath,
    l: &FunctionalSet,
    params: &NseParams,
    opts: PairOptions,
) -> Result<PairTrace> {
    let grid = params.grid();
    grid.check_same(x1.grid())?;
    grid.check_same(x2.grid())?;
    grid.check_same(l.grid())?;
    if !(opts.eps_l > 0.0) {
        return Err(invalid("eps_L", "must be > 0"));
    }
    if !(opts.delta > 0.0) {
        return Err(invalid("delta", "must be > 0"));
    }
    let n_steps = StepOptions::new(opts.t_end, opts.dt).n_steps()?;
    let mut s1 = Stepper::new(Scheme::Transformed, x1, path, params, opts.dt)?;
    let mut s2 = Stepper::new(Scheme::Transformed, x2, path, params, opts.dt)?;
    if s1.remaining() < n_steps {
        return Err(invalid("t_end", format!("noise path covers {} < {}", path.horizon(), opts.t_end)));
    }
    let c = params.nu / 2.0;
    let q_shift = 2.0 * c / ((1.0 + opts.delta) * opts.eps_l * opts.eps_l);
    let save_every = opts.save_every.max(1);
    let mut tr = PairTrace {
        seed: path.seed(),
        dt: opts.dt,
        nu: params.nu,
        eps_l: opts.eps_l,
        delta: opts.delta,
        c,
        radius: None,
        times: Vec::with_capacity(n_steps + 1),
        w_h_sq: Vec::with_capacity(n_steps + 1),
        w_v_sq: Vec::with_capacity(n_steps + 1),
        eta: Vec::with_capacity(n_steps + 1),
        l: Vec::with_capacity(n_steps + 1),
        q: Vec::with_capacity(n_steps + 1),
        snapshot_steps: Vec::new(),
        u1: Vec::new(),
        u2: Vec::new(),
        cfl_violation: None,
        termination: Termination::Completed,
    };
    let record = |tr: &mut PairTrace, n: usize, a: &SpectralField, b: &SpectralField, z: &SpectralField| -> Result<()> {
        let w = a - b;
        let lv = lipschitz_l_pair(a, b, z, params.nu);
        tr.times.push(n as f64 * opts.dt);
        tr.w_h_sq.push(w.norm_h_sq());
        tr.w_v_sq.push(w.norm_v_sq());
        tr.eta.push(l.eta(&w)?);
        tr.l.push(lv);
        tr.q.push(2.0 * lv - q_shift);
        if n.is_multiple_of(save_every) || n == n_steps {
            tr.snapshot_steps.push(n);
            tr.u1.push(a.clone());
            tr.u2.push(b.clone());
        }
        Ok(())
    };
    record(&mut tr, 0, x1, x2, s1.z())?;
    for n in 1..=n_steps {
        let r = s1.advance().and_then(|()| s2.advance());
        if let Err(e) = r {
            if let Error::NumericalFailure { time, last_valid_time, reason } = e {
                tr.termination = Termination::Failed { time, last_valid_time, reason };
                break;
            }
            return Err(e);
        }
        record(&mut tr, n, s1.state(), s2.state(), s1.z())?;
    }
    tr.cfl_violation = match (s1.cfl_violation(), s2.cfl_violation()) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    Ok(tr)
}

/// `‖u‖²_V` and `l(u, z)` along a single transformed trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct SingleTrace {
    pub dt: f64,
    pub v_sq: Vec<f64>,
    pub l: Vec<f64>,
    pub termination: Termination,
}

pub fn trace_single(x0: &SpectralField, path: &NoisePath, params: &NseParams, t_end: f64, dt: f64) -> Result<SingleTrace> {
    let n_steps = StepOptions::new(t_end, dt).n_steps()?;
    let mut s = Stepper::new(Scheme::Transformed, x0, path, params, dt)?;
    if s.remaining() < n_steps {
        return Err(invalid("t_end", format!("noise path covers {} < {t_end}", path.horizon())));
    }
    let mut out = SingleTrace {
        dt,
        v_sq: vec![x0.norm_v_sq()],
        l: vec![lipschitz_l(x0, s.z(), params.nu)],
        termination: Termination::Completed,
    };
    for _ in 0..n_steps {
        if let Err(e) = s.advance() {
            if let Error::NumericalFailure { time, last_valid_time, reason } = e {
                out.termination = Termination::Failed { time, last_valid_time, reason };
                break;
            }
            return Err(e);
        }
        out.v_sq.push(s.state().norm_v_sq());
        out.l.push(lipschitz_l(s.state(), s.z(), params.nu));
    }
    Ok(out)
}

/// `count` fields with independent Gaussian directions on the `H`-sphere of
/// radius `r`.
pub fn sphere_samples(grid: &SpectralGrid, r: f64, count: usize, seed: u64) -> Vec<SpectralField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // stream reserved for initial data; never a stored mode's stream
    rng.set_stream(u64::MAX);
    (0..count)
        .map(|_| {
            let u = random_field(grid, &mut rng);
            let n = u.norm_h();
            if n == 0.0 { u } else { u.scaled(r / n) }
        })
        .collect()
}

/// Complete description of a same-noise pair experiment; each seed fixes
/// the noise path and the initial data.
#[derive(Debug, Clone)]
pub struct PairExperiment {
    pub params: NseParams,
    pub covariance: CovarianceSpec,
    pub functionals: FunctionalSet,
    pub opts: PairOptions,
    /// Prehistory length used for the pullback radius.
    pub burn_in: f64,
    pub radius_eps: f64,
}

impl PairExperiment {
    pub fn noise_path(&self, seed: u64) -> Result<NoisePath> {
        let n_steps = StepOptions::new(self.opts.t_end, self.opts.dt).n_steps()?;
        let burn_steps = (self.burn_in / self.opts.dt).round() as usize;
        NoisePath::generate(
            &self.covariance,
            &self.params.ou(),
            PathSpec { seed, dt: self.opts.dt, n_steps, burn_steps },
        )
    }

    /// `R(ω)` at time 0 from the pullback radius.
    pub fn radius(&self, path: &NoisePath) -> Result<f64> {
        Ok(radius_path(path, &self.params, self.radius_eps)?.r2[0].max(0.0).sqrt())
    }

    pub fn run(&self, seed: u64) -> Result<PairTrace> {
        let path = self.noise_path(seed)?;
        let r = self.radius(&path)?;
        let x = sphere_samples(self.params.grid(), r, 2, seed);
        let mut tr = run_pair(&x[0], &x[1], &path, &self.functionals, &self.params, self.opts)?;
        tr.radius = Some(r);
        Ok(tr)
    }

    /// One trace per seed, in seed order.
    pub fn run_ensemble(&self, seeds: &[u64]) -> Vec<Result<PairTrace>> {
        map_ordered(seeds, |&s| self.run(s))
    }

    /// `n_ic` single trajectories from the absorbing sphere of one path.
    pub fn single_traces(&self, seed: u64, n_ic: usize) -> Result<Vec<SingleTrace>> {
        let path = self.noise_path(seed)?;
        let r = self.radius(&path)?;
        sphere_samples(self.params.grid(), r, n_ic, seed)
            .iter()
            .map(|x| trace_single(x, &path, &self.params, self.opts.t_end, self.opts.dt))
            .collect()
    }

    pub fn single_ensemble(&self, seeds: &[u64], n_ic: usize) -> Result<Vec<Vec<SingleTrace>>> {
        map_ordered(seeds, |&s| self.single_traces(s, n_ic)).into_iter().collect()
    }
}
