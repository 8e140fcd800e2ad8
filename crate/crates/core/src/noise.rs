//! Trace-class Wiener noise and the stationary Ornstein–Uhlenbeck process
//! `dz + 2(κ+1)νAz dt = dw`, sampled exactly mode by mode.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectral::{SpectralField, SpectralGrid};

/// How the per-mode variances were produced; kept for reproducibility and
/// for the infinite-lattice trace checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decay {
    /// `q_k = σ² |k|^{-2p}`.
    PowerLaw { sigma2: f64, p: f64 },
    Explicit,
}

/// Diagonal covariance `Q`: variance `q_k` of the Wiener process along each
/// stored mode (so `E|ΔW_k|² = q_k dt`).
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    grid: SpectralGrid,
    q: Vec<f64>,
    decay: Decay,
}

impl CovarianceSpec {
    /// Power-law spectrum. `p > 1` is required for the trace to stay finite as
    /// the truncation is removed.
    pub fn power_law(grid: &SpectralGrid, sigma2: f64, p: f64) -> Result<Self> {
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(invalid("sigma2", format!("must be finite and >= 0, got {sigma2}")));
        }
        if !(p > 1.0) {
            return Err(invalid(
                "decay_p",
                format!("tr Q diverges on the full lattice unless decay_p > 1 (got {p})"),
            ));
        }
        let q = (0..grid.len())
            .map(|i| sigma2 * grid.wavenumber_sq(i).powf(-p))
            .collect();
        Ok(Self {
            grid: grid.clone(),
            q,
            decay: Decay::PowerLaw { sigma2, p },
        })
    }

    pub fn from_variances(grid: &SpectralGrid, q: Vec<f64>) -> Result<Self> {
        if q.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} variances for {} modes",
                q.len(),
                grid.len()
            )));
        }
        if let Some(bad) = q.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(invalid("q", format!("variances must be finite and >= 0, got {bad}")));
        }
        Ok(Self {
            grid: grid.clone(),
            q,
            decay: Decay::Explicit,
        })
    }

    pub fn zero(grid: &SpectralGrid) -> Self {
        Self {
            grid: grid.clone(),
            q: vec![0.0; grid.len()],
            decay: Decay::Explicit,
        }
    }

    /// Single nonzero variance on mode `k`.
    pub fn single_mode(grid: &SpectralGrid, k: [i32; 2], q: f64) -> Result<Self> {
        let idx = grid
            .index_of(k)
            .ok_or_else(|| invalid("k", format!("{k:?} is not a stored mode")))?;
        let mut v = vec![0.0; grid.len()];
        v[idx] = q;
        Self::from_variances(grid, v)
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn variances(&self) -> &[f64] {
        &self.q
    }

    pub fn decay(&self) -> Decay {
        self.decay
    }

    pub fn is_zero(&self) -> bool {
        self.q.iter().all(|&x| x == 0.0)
    }

    /// `tr_H Q`.
    pub fn trace(&self) -> f64 {
        self.q.iter().sum()
    }

    /// `tr_H(Q A^s)`.
    pub fn trace_weighted(&self, s: f64) -> f64 {
        self.q
            .iter()
            .zip(self.grid.eigenvalues())
            .map(|(q, a)| q * a.powf(s))
            .sum()
    }

    /// `tr_H(Q A²)`.
    pub fn trace_qa2(&self) -> f64 {
        self.trace_weighted(2.0)
    }

    /// Whether `tr(QA²)` stays finite when the truncation is removed. For an
    /// explicit list of variances there is nothing beyond the truncation.
    pub fn qa2_finite_in_limit(&self) -> bool {
        match self.decay {
            Decay::PowerLaw { sigma2, p } => sigma2 == 0.0 || p > 3.0,
            Decay::Explicit => true,
        }
    }

    /// Per-mode variances of the stationary OU law, `q_k / (4(κ+1)ν a_k)`.
    pub fn stationary_variances(&self, ou: &OuParams) -> Vec<f64> {
        self.q
            .iter()
            .zip(self.grid.eigenvalues())
            .map(|(q, &a)| q / (2.0 * ou.rate(a)))
            .collect()
    }

    /// `tr_H Q̃` of the stationary OU covariance.
    pub fn stationary_trace(&self, ou: &OuParams) -> f64 {
        self.stationary_variances(ou).iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub kappa: f64,
    pub nu: f64,
}

impl OuParams {
    pub fn new(kappa: f64, nu: f64) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(invalid("kappa", format!("must be finite and >= 0, got {kappa}")));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(invalid("nu", format!("must be finite and > 0, got {nu}")));
        }
        Ok(Self { kappa, nu })
    }

    /// Decay rate `2(κ+1)ν a` of a mode with Stokes eigenvalue `a`.
    pub fn rate(&self, a: f64) -> f64 {
        2.0 * (self.kappa + 1.0) * self.nu * a
    }
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Independent complex Gaussian per mode with `E|ΔW_k|² = q_k dt`.
pub fn sample_wiener_increment<R: Rng + ?Sized>(
    q: &CovarianceSpec,
    dt: f64,
    rng: &mut R,
) -> Result<SpectralField> {
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("must be > 0, got {dt}")));
    }
    let coeffs = q.q.iter().map(|&qk| complex_normal(rng, qk * dt)).collect();
    SpectralField::from_coeffs(&q.grid, coeffs)
}

/// `(1 - e^{-2x})/2`, the OU innovation variance in units of `q/λ`.
fn innovation_factor(x: f64) -> f64 {
    -0.5 * (-2.0 * x).exp_m1()
}

/// Exact OU transition over `dt`.
pub fn ou_step<R: Rng + ?Sized>(
    z: &SpectralField,
    dt: f64,
    ou: &OuParams,
    q: &CovarianceSpec,
    rng: &mut R,
) -> Result<SpectralField> {
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("must be > 0, got {dt}")));
    }
    q.grid.check_same(z.grid())?;
    let coeffs = z
        .coeffs()
        .iter()
        .zip(&q.q)
        .zip(q.grid.eigenvalues())
        .map(|((&zk, &qk), &a)| {
            let lam = ou.rate(a);
            let decay = (-lam * dt).exp();
            zk * decay + complex_normal(rng, qk * innovation_factor(lam * dt) / lam)
        })
        .collect();
    SpectralField::from_coeffs(&q.grid, coeffs)
}

/// Draw from the stationary OU law.
pub fn ou_stationary_sample<R: Rng + ?Sized>(
    ou: &OuParams,
    q: &CovarianceSpec,
    rng: &mut R,
) -> SpectralField {
    let coeffs = q
        .stationary_variances(ou)
        .into_iter()
        .map(|v| complex_normal(rng, v))
        .collect();
    SpectralField::from_coeffs(&q.grid, coeffs).expect("one variance per mode")
}

/// `E‖A^α z‖²_H = tr_H(Q A^{2α-1}) / (4(κ+1)ν)` for the stationary OU process.
pub fn stationary_moment(alpha: f64, ou: &OuParams, q: &CovarianceSpec) -> Result<f64> {
    if !(0.0..=1.5).contains(&alpha) {
        return Err(invalid("alpha", format!("must lie in [0, 3/2], got {alpha}")));
    }
    Ok(q.trace_weighted(2.0 * alpha - 1.0) / (4.0 * (ou.kappa + 1.0) * ou.nu))
}

/// `E‖z‖²_V = 2 E‖A^{1/2} z‖²_H`.
pub fn stationary_v_moment(ou: &OuParams, q: &CovarianceSpec) -> f64 {
    2.0 * stationary_moment(0.5, ou, q).expect("alpha in range")
}

/// `(2l-1)!!`, the Gaussian even-moment constant used as `c_l` in
/// `E‖A^α z‖^{2l} ≤ c_l (E‖A^α z‖²)^l`.
pub fn gaussian_moment_constant(l: u32) -> f64 {
    (1..=l).map(|j| f64::from(2 * j - 1)).product()
}

/// RNG stream for one mode of one noise path. The stream index encodes the
/// wavevector, so the draws for mode `k` do not depend on which other modes
/// are present or on the order they are generated in.
pub fn mode_rng(seed: u64, k: [i32; 2]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(k[0] as u32) << 32) | u64::from(k[1] as u32));
    rng
}

/// Settings for [`NoisePath::generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSpec {
    pub seed: u64,
    /// Fine time step of the stored path.
    pub dt: f64,
    /// Number of forward steps on `[0, n_steps·dt]`.
    pub n_steps: usize,
    /// Steps of stationary prehistory on `[-burn_steps·dt, 0]`; only
    /// `‖z‖²_V` is kept there (for the pullback radius).
    pub burn_steps: usize,
}

#[derive(Debug)]
struct PathData {
    seed: u64,
    dt: f64,
    ou: OuParams,
    q: CovarianceSpec,
    burn_steps: usize,
    z: Vec<SpectralField>,
    dw: Vec<SpectralField>,
    z_v_sq: Vec<f64>,
}

/// One realisation `ω` of the noise on a uniform grid: Wiener increments and
/// the stationary OU process `z(θ_t ω)` driven by them.
///
/// Increments and OU innovations are drawn jointly (they are correlated
/// Gaussians), so `z` is the exact OU functional of the stored Wiener path,
/// not merely a path with the right law.
#[derive(Debug, Clone)]
pub struct NoisePath {
    data: Arc<PathData>,
    offset: usize,
}

impl NoisePath {
    pub fn generate(q: &CovarianceSpec, ou: &OuParams, spec: PathSpec) -> Result<Self> {
        let PathSpec {
            seed,
            dt,
            n_steps,
            burn_steps,
        } = spec;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("must be > 0, got {dt}")));
        }
        let grid = q.grid.clone();
        let nm = grid.len();
        let total = burn_steps + n_steps;
        // mode-major generation, then transposed into per-time fields
        let mut z_modes = vec![Complex64::new(0.0, 0.0); nm * (n_steps + 1)];
        let mut dw_modes = vec![Complex64::new(0.0, 0.0); nm * n_steps];
        let mut z_v_sq = vec![0.0; total + 1];
        for (m, (&k, (&qk, &a))) in grid
            .modes()
            .iter()
            .zip(q.q.iter().zip(grid.eigenvalues()))
            .enumerate()
        {
            if qk == 0.0 {
                continue;
            }
            let mut rng = mode_rng(seed, k);
            let lam = ou.rate(a);
            let x = lam * dt;
            let decay = (-x).exp();
            let var_w = qk * dt;
            let cov = -qk * (-x).exp_m1() / lam;
            let var_cond = qk / lam * conditional_factor(x);
            let (sw, sc) = (var_w.sqrt(), var_cond.max(0.0).sqrt());
            let wk = 2.0 * a; // |k|²
            let z0 = complex_normal(&mut rng, qk / (2.0 * lam));
            // The prehistory runs backwards from the anchor (the stationary
            // law is reversible), on a separate block of the mode's stream:
            // a longer burn-in extends the same ω instead of redrawing it.
            if burn_steps > 0 {
                let mut back = mode_rng(seed, k);
                back.set_word_pos(1u128 << 64);
                let var_back = qk / lam * innovation_factor(x);
                let mut zb = z0;
                for i in (0..burn_steps).rev() {
                    zb = zb * decay + complex_normal(&mut back, var_back);
                    z_v_sq[i] += wk * zb.norm_sqr();
                }
            }
            z_v_sq[burn_steps] += wk * z0.norm_sqr();
            z_modes[m] = z0;
            let mut zk = z0;
            for j in 0..n_steps {
                let g1 = complex_normal(&mut rng, 1.0);
                let g2 = complex_normal(&mut rng, 1.0);
                dw_modes[j * nm + m] = g1 * sw;
                zk = zk * decay + g1 * (cov / sw) + g2 * sc;
                z_v_sq[burn_steps + j + 1] += wk * zk.norm_sqr();
                z_modes[(j + 1) * nm + m] = zk;
            }
        }
        let to_fields = |flat: Vec<Complex64>| -> Vec<SpectralField> {
            flat.chunks_exact(nm)
                .map(|c| SpectralField::from_coeffs(&grid, c.to_vec()).expect("mode count"))
                .collect()
        };
        Ok(Self {
            data: Arc::new(PathData {
                seed,
                dt,
                ou: *ou,
                q: q.clone(),
                burn_steps,
                z: to_fields(z_modes),
                dw: to_fields(dw_modes),
                z_v_sq,
            }),
            offset: 0,
        })
    }

    /// Path with `z ≡ 0` and no increments (deterministic runs).
    pub fn zero(grid: &SpectralGrid, dt: f64, n_steps: usize) -> Result<Self> {
        let ou = OuParams::new(0.0, 1.0)?;
        Self::generate(
            &CovarianceSpec::zero(grid),
            &ou,
            PathSpec {
                seed: 0,
                dt,
                n_steps,
                burn_steps: 0,
            },
        )
    }

    /// `θ_τ ω` for `τ = steps·dt`: the same realisation re-anchored at `τ`.
    pub fn shifted(&self, steps: usize) -> Result<Self> {
        if steps > self.n_steps() {
            return Err(invalid(
                "shift",
                format!("{steps} steps beyond a path of {} steps", self.n_steps()),
            ));
        }
        Ok(Self {
            data: Arc::clone(&self.data),
            offset: self.offset + steps,
        })
    }

    pub fn seed(&self) -> u64 {
        self.data.seed
    }

    pub fn dt(&self) -> f64 {
        self.data.dt
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.data.q.grid
    }

    pub fn covariance(&self) -> &CovarianceSpec {
        &self.data.q
    }

    pub fn ou_params(&self) -> &OuParams {
        &self.data.ou
    }

    /// Forward steps available from the current anchor.
    pub fn n_steps(&self) -> usize {
        self.data.dw.len() - self.offset
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps() as f64 * self.dt()
    }

    /// `z(θ_{t_j} ω)` at `t_j = j·dt` relative to the anchor.
    pub fn z(&self, j: usize) -> &SpectralField {
        &self.data.z[self.offset + j]
    }

    /// Wiener increment over `[t_j, t_{j+1}]`.
    pub fn dw(&self, j: usize) -> &SpectralField {
        &self.data.dw[self.offset + j]
    }

    /// Steps of history before the anchor (prehistory plus any shift).
    pub fn history_steps(&self) -> usize {
        self.data.burn_steps + self.offset
    }

    /// `‖z‖²_V` at `t = (i - history_steps)·dt`, `i = 0 ..= history_steps + n_steps`.
    pub fn z_v_sq_series(&self) -> &[f64] {
        &self.data.z_v_sq
    }

    pub fn z_v_sq(&self, j: usize) -> f64 {
        self.data.z_v_sq[self.history_steps() + j]
    }

    /// Ratio of an integrator step to the path step, if it is a whole number.
    pub fn stride(&self, dt: f64) -> Result<usize> {
        let r = dt / self.dt();
        let m = r.round();
        if m < 1.0 || (r - m).abs() > 1e-9 * r {
            return Err(invalid(
                "dt",
                format!("{dt} is not a multiple of the noise path step {}", self.dt()),
            ));
        }
        Ok(m as usize)
    }

    /// Wiener increment over `[t_j, t_{j+stride}]`, summed in a fixed order.
    pub fn dw_over(&self, j: usize, stride: usize) -> SpectralField {
        let mut acc = self.dw(j).clone();
        for i in 1..stride {
            acc.axpy(1.0, self.dw(j + i));
        }
        acc
    }

    /// NDJSON dump, one record per stored time; per-mode `z` values only when
    /// `with_modes` is set.
    pub fn write_ndjson<W: Write>(&self, mut out: W, with_modes: bool) -> Result<()> {
        for j in 0..=self.n_steps() {
            let t = j as f64 * self.dt();
            let mut rec = serde_json::json!({ "t": t, "z_v_sq": self.z_v_sq(j) });
            if with_modes {
                let modes: Vec<_> = self
                    .grid()
                    .modes()
                    .iter()
                    .zip(self.z(j).coeffs())
                    .map(|(k, c)| serde_json::json!([k[0], k[1], c.re, c.im]))
                    .collect();
                rec["z"] = serde_json::Value::Array(modes);
            }
            serde_json::to_writer(&mut out, &rec).map_err(|e| Error::Parse(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Conditional variance of the OU innovation given the Wiener increment,
/// in units of `q/λ`: `(1-e^{-2x})/2 - (1-e^{-x})²/x` with `x = λ dt`.
fn conditional_factor(x: f64) -> f64 {
    if x < 1e-3 {
        x * x * x * (1.0 / 12.0 - x / 12.0 + 17.0 / 360.0 * x * x)
    } else {
        let e = (-x).exp_m1();
        innovation_factor(x) - e * e / x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> SpectralGrid {
        SpectralGrid::new(3).unwrap()
    }

    #[test]
    fn power_law_validation() {
        let g = grid();
        assert!(CovarianceSpec::power_law(&g, 1.0, 1.0).is_err());
        assert!(CovarianceSpec::power_law(&g, -1.0, 2.0).is_err());
        let q = CovarianceSpec::power_law(&g, 1.0, 2.0).unwrap();
        assert!(!q.qa2_finite_in_limit());
        assert!(CovarianceSpec::power_law(&g, 1.0, 3.5).unwrap().qa2_finite_in_limit());
        let idx = g.index_of([1, 1]).unwrap();
        assert_relative_eq!(q.variances()[idx], 0.25);
    }

    #[test]
    fn ou_step_pure_decay() {
        let g = grid();
        let ou = OuParams::new(0.0, 1.0).unwrap();
        let q = CovarianceSpec::zero(&g);
        let z = SpectralField::single_mode(&g, [1, 0], Complex64::new(0.8, -0.4)).unwrap();
        let mut rng = mode_rng(1, [0, 0]);
        let z2 = ou_step(&z, std::f64::consts::LN_2, &ou, &q, &mut rng).unwrap();
        let c = z2.mode([1, 0]).unwrap();
        assert_relative_eq!(c.re, 0.4, max_relative = 1e-15);
        assert_relative_eq!(c.im, -0.2, max_relative = 1e-15);
        assert!(ou_step(&z, 0.0, &ou, &q, &mut rng).is_err());
    }

    #[test]
    fn stationary_moment_examples() {
        let g = grid();
        let ou = OuParams::new(0.0, 1.0).unwrap();
        let q = CovarianceSpec::single_mode(&g, [1, 0], 1.0).unwrap();
        assert_relative_eq!(stationary_moment(0.5, &ou, &q).unwrap(), 0.25);
        assert_eq!(q.stationary_variances(&ou)[g.index_of([1, 0]).unwrap()], 0.5);
        assert!(stationary_moment(1.6, &ou, &q).is_err());
        assert!(stationary_moment(-0.1, &ou, &q).is_err());
        assert_eq!(stationary_moment(1.0, &ou, &CovarianceSpec::zero(&g)).unwrap(), 0.0);
    }

    #[test]
    fn stationary_trace_bound() {
        let g = SpectralGrid::new(5).unwrap();
        for kappa in [0.0, 2.0, 30.0] {
            let ou = OuParams::new(kappa, 0.7).unwrap();
            let q = CovarianceSpec::power_law(&g, 0.3, 1.5).unwrap();
            let bound = q.trace() / (2.0 * g.lambda1() * (kappa + 1.0) * ou.nu);
            assert!(q.stationary_trace(&ou) <= bound);
        }
    }

    #[test]
    fn moment_constants() {
        assert_eq!(gaussian_moment_constant(0), 1.0);
        assert_eq!(gaussian_moment_constant(1), 1.0);
        assert_eq!(gaussian_moment_constant(2), 3.0);
        assert_eq!(gaussian_moment_constant(4), 105.0);
    }

    #[test]
    fn conditional_factor_series_matches_closed_form() {
        // independent evaluation with the plain formula at moderate x
        for &x in &[1e-3f64, 2e-3, 5e-3] {
            let direct = (1.0 - (-2.0 * x).exp()) / 2.0 - (1.0 - (-x).exp()).powi(2) / x;
            let series = x * x * x * (1.0 / 12.0 - x / 12.0 + 17.0 / 360.0 * x * x);
            assert_relative_eq!(direct, series, max_relative = 1e-6);
        }
        assert!(conditional_factor(1e-6) > 0.0);
    }

    #[test]
    fn path_is_reproducible_and_shift_consistent() {
        let g = grid();
        let ou = OuParams::new(1.0, 1.0).unwrap();
        let q = CovarianceSpec::power_law(&g, 0.1, 2.0).unwrap();
        let spec = PathSpec {
            seed: 7,
            dt: 0.01,
            n_steps: 50,
            burn_steps: 20,
        };
        let a = NoisePath::generate(&q, &ou, spec).unwrap();
        let b = NoisePath::generate(&q, &ou, spec).unwrap();
        for j in 0..=50 {
            assert_eq!(a.z(j), b.z(j));
        }
        let s = a.shifted(10).unwrap();
        assert_eq!(s.z(0), a.z(10));
        assert_eq!(s.dw(5), a.dw(15));
        assert_eq!(s.z_v_sq(3), a.z_v_sq(13));
        assert_eq!(s.n_steps(), 40);
        assert_relative_eq!(a.z_v_sq(7), a.z(7).norm_v_sq(), max_relative = 1e-13);
        assert_eq!(a.stride(0.02).unwrap(), 2);
        assert!(a.stride(0.015).is_err());
    }

    #[test]
    fn path_z_satisfies_ou_recursion() {
        // z_{j+1} - e^{-λdt} z_j is correlated with dw_j with the exact covariance;
        // check the regression coefficient cov/var_w over many modes and steps.
        let g = SpectralGrid::new(2).unwrap();
        let ou = OuParams::new(0.0, 1.0).unwrap();
        let q = CovarianceSpec::single_mode(&g, [1, 0], 1.0).unwrap();
        let dt = 0.5;
        let n = 40_000;
        let p = NoisePath::generate(&q, &ou, PathSpec { seed: 3, dt, n_steps: n, burn_steps: 0 }).unwrap();
        let lam = ou.rate(0.5);
        let decay = (-lam * dt).exp();
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for j in 0..n {
            let xi = p.z(j + 1).mode([1, 0]).unwrap() - p.z(j).mode([1, 0]).unwrap() * decay;
            let w = p.dw(j).mode([1, 0]).unwrap();
            sxy += xi.re * w.re + xi.im * w.im;
            sxx += w.norm_sqr();
        }
        let expected = (1.0 - decay) / lam / dt;
        assert!((sxy / sxx - expected).abs() < 0.02, "{} vs {expected}", sxy / sxx);
    }
}
