//! Time integration of the pathwise (transformed) equation
//!
//! ```text
//! du/dt = -2νAu - P[(v·∇)v] + 2νκAz + f,    v = u + z(θ_t ω),
//! ```
//!
//! its conjugation back to the stochastic equation, a direct integrator for
//! the stochastic equation `dv = (-2νAv - P[(v·∇)v] + f)dt + dW` used as an
//! independent cross-check, and the pullback absorbing radius.
//!
//! Both integrators are exponential Euler schemes: the linear part `-2νA` is
//! integrated exactly per mode, everything else is frozen at the left point.
//! Step `n` only reads `u_n` and path data at index `n·stride`; accumulated
//! time never enters the arithmetic, so a restart from a stored snapshot on the
//! shifted path reproduces the tail bit for bit.

mod radius;

pub use radius::{default_burn_in, radius_path, RadiusPath};

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exact::two_sum;
use crate::noise::{NoisePath, OuParams};
use crate::spectral::{nonlinear_term, nonlinear_term_with_speed, NormBundle, SpectralField, SpectralGrid};

/// Physical parameters of the Navier–Stokes model.
#[derive(Debug, Clone, PartialEq)]
pub struct NseParams {
    pub nu: f64,
    pub kappa: f64,
    pub forcing: SpectralField,
    pub lambda1: f64,
}

impl NseParams {
    pub fn new(nu: f64, kappa: f64, forcing: SpectralField) -> Result<Self> {
        OuParams::new(kappa, nu)?;
        if !forcing.is_finite() {
            return Err(invalid("forcing", "non-finite coefficients"));
        }
        let lambda1 = forcing.grid().lambda1();
        Ok(Self {
            nu,
            kappa,
            forcing,
            lambda1,
        })
    }

    /// Unforced model.
    pub fn unforced(grid: &SpectralGrid, nu: f64, kappa: f64) -> Result<Self> {
        Self::new(nu, kappa, SpectralField::zeros(grid))
    }

    pub fn grid(&self) -> &SpectralGrid {
        self.forcing.grid()
    }

    pub fn ou(&self) -> OuParams {
        OuParams {
            kappa: self.kappa,
            nu: self.nu,
        }
    }
}

/// Right-hand side of the transformed equation,
/// `-2νAu - P[(u+z)·∇(u+z)] + 2νκAz + f`.
pub fn rhs_transformed(u: &SpectralField, z: &SpectralField, p: &NseParams) -> Result<SpectralField> {
    u.grid().check_same(z.grid())?;
    u.grid().check_same(p.grid())?;
    let v = u + z;
    let mut out = nonlinear_term(&v, &v)?.scaled(-1.0);
    out.axpy(-2.0 * p.nu, &u.apply_stokes(1.0));
    out.axpy(2.0 * p.nu * p.kappa, &z.apply_stokes(1.0));
    out.axpy(1.0, &p.forcing);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Exponential Euler on the transformed random PDE.
    Transformed,
    /// Exponential Euler–Maruyama on the stochastic equation itself.
    Direct,
    /// `v = u + z` built from a transformed run.
    Conjugated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub nu: f64,
    pub kappa: f64,
    pub scheme: Scheme,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Failed {
        time: f64,
        last_valid_time: f64,
        reason: String,
    },
}

/// Stored solution: snapshots at `times`, with their norms.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<SpectralField>,
    pub norms: Vec<NormBundle>,
    /// `R²(θ_t ω)` at the snapshot times, when attached.
    pub radius_sq: Option<Vec<f64>>,
    /// For conjugated trajectories: the exact rounding error of each
    /// snapshot, so that `snapshot + rounding = u + z` holds exactly.
    pub rounding: Option<Vec<SpectralField>>,
    pub provenance: Provenance,
    /// First time the explicit-part stability heuristic
    /// `dt · max|v| · n_max ≤ 1` was exceeded.
    pub cfl_violation: Option<f64>,
    pub termination: Termination,
}

impl Trajectory {
    fn new(provenance: Provenance) -> Self {
        Self {
            times: Vec::new(),
            snapshots: Vec::new(),
            norms: Vec::new(),
            radius_sq: None,
            rounding: None,
            provenance,
            cfl_violation: None,
            termination: Termination::Completed,
        }
    }

    fn push(&mut self, t: f64, u: SpectralField) {
        self.norms.push(u.norms());
        self.times.push(t);
        self.snapshots.push(u);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &SpectralField {
        self.snapshots.last().expect("trajectory holds the initial state")
    }

    pub fn is_complete(&self) -> bool {
        self.termination == Termination::Completed
    }

    /// Turn a failed run into [`Error::NumericalFailure`].
    pub fn into_result(self) -> Result<Self> {
        match &self.termination {
            Termination::Completed => Ok(self),
            Termination::Failed {
                time,
                last_valid_time,
                reason,
            } => Err(Error::NumericalFailure {
                time: *time,
                last_valid_time: *last_valid_time,
                reason: reason.clone(),
            }),
        }
    }

    /// Write `t, h, v, v_dual, R2` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,h,v,v_dual,R2")?;
        for (i, (t, n)) in self.times.iter().zip(&self.norms).enumerate() {
            let r2 = self
                .radius_sq
                .as_ref()
                .map_or(String::new(), |r| format!("{:.16e}", r[i]));
            writeln!(out, "{t:.16e},{:.16e},{:.16e},{:.16e},{r2}", n.h, n.v, n.v_dual)?;
        }
        Ok(())
    }
}

/// Time-stepping options shared by both integrators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Keep every `save_every`-th state (the final state is always kept).
    pub save_every: usize,
}

impl StepOptions {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            save_every: 1,
        }
    }

    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(invalid("t_end", format!("must be >= 0, got {}", self.t_end)));
        }
        let r = self.t_end / self.dt;
        let n = r.round();
        if (r - n).abs() > 1e-9 * r.max(1.0) {
            return Err(invalid(
                "t_end",
                format!("{} is not a whole number of steps of {}", self.t_end, self.dt),
            ));
        }
        Ok(n as usize)
    }
}

/// Single-trajectory stepper; drives both schemes.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    scheme: Scheme,
    params: &'a NseParams,
    path: &'a NoisePath,
    stride: usize,
    dt: f64,
    decay: Vec<f64>,
    phi: Vec<f64>,
    state: SpectralField,
    step: usize,
    cfl_violation: Option<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        scheme: Scheme,
        x0: &SpectralField,
        path: &'a NoisePath,
        params: &'a NseParams,
        dt: f64,
    ) -> Result<Self> {
        if scheme == Scheme::Conjugated {
            return Err(invalid("scheme", "conjugated trajectories are not integrated"));
        }
        let grid = params.grid();
        grid.check_same(x0.grid())?;
        grid.check_same(path.grid())?;
        if !(dt > 0.0) {
            return Err(invalid("dt", format!("must be > 0, got {dt}")));
        }
        let stride = path.stride(dt)?;
        let (decay, phi) = grid
            .eigenvalues()
            .iter()
            .map(|&a| {
                let l = 2.0 * params.nu * a;
                let e = (-l * dt).exp_m1();
                (1.0 + e, -e / l)
            })
            .unzip();
        Ok(Self {
            scheme,
            params,
            path,
            stride,
            dt,
            decay,
            phi,
            state: x0.clone(),
            step: 0,
            cfl_violation: None,
        })
    }

    pub fn state(&self) -> &SpectralField {
        &self.state
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// Path index of the current time.
    pub fn path_index(&self) -> usize {
        self.step * self.stride
    }

    /// Steps the path can still support.
    pub fn remaining(&self) -> usize {
        (self.path.n_steps() / self.stride).saturating_sub(self.step)
    }

    pub fn cfl_violation(&self) -> Option<f64> {
        self.cfl_violation
    }

    /// `z(θ_t ω)` at the current time.
    pub fn z(&self) -> &SpectralField {
        self.path.z(self.path_index())
    }

    pub fn advance(&mut self) -> Result<()> {
        if self.remaining() == 0 {
            return Err(invalid("t_end", "noise path is shorter than the requested horizon"));
        }
        let j = self.path_index();
        let p = self.params;
        let (mut n, speed) = match self.scheme {
            Scheme::Transformed => {
                let z = self.path.z(j);
                let v = &self.state + z;
                let (b, speed) = nonlinear_term_with_speed(&v, &v)?;
                let mut n = b.scaled(-1.0);
                if p.kappa != 0.0 {
                    n.axpy(2.0 * p.nu * p.kappa, &z.apply_stokes(1.0));
                }
                (n, speed)
            }
            _ => {
                let (b, speed) = nonlinear_term_with_speed(&self.state, &self.state)?;
                (b.scaled(-1.0), speed)
            }
        };
        n.axpy(1.0, &p.forcing);
        if speed * self.dt * p.grid().n_max() as f64 > 1.0 && self.cfl_violation.is_none() {
            self.cfl_violation = Some(self.time());
        }
        let noise = (self.scheme == Scheme::Direct).then(|| self.path.dw_over(j, self.stride));
        let next = {
            let u = self.state.coeffs();
            let nn = n.coeffs();
            let mut c: Vec<_> = (0..u.len())
                .map(|i| u[i] * self.decay[i] + nn[i] * self.phi[i])
                .collect();
            if let Some(dw) = &noise {
                for (ci, (w, e)) in c.iter_mut().zip(dw.coeffs().iter().zip(&self.decay)) {
                    *ci += w * *e;
                }
            }
            SpectralField::from_coeffs(p.grid(), c)?
        };
        if !next.is_finite() {
            return Err(Error::NumericalFailure {
                time: self.time() + self.dt,
                last_valid_time: self.time(),
                reason: "non-finite state".into(),
            });
        }
        self.state = next;
        self.step += 1;
        Ok(())
    }
}

fn integrate(
    scheme: Scheme,
    x0: &SpectralField,
    path: &NoisePath,
    p: &NseParams,
    opts: StepOptions,
) -> Result<Trajectory> {
    let n_steps = opts.n_steps()?;
    let mut stepper = Stepper::new(scheme, x0, path, p, opts.dt)?;
    if stepper.remaining() < n_steps {
        return Err(invalid(
            "t_end",
            format!(
                "noise path covers {} but {} was requested",
                path.horizon(),
                opts.t_end
            ),
        ));
    }
    let save_every = opts.save_every.max(1);
    let mut traj = Trajectory::new(Provenance {
        seed: path.seed(),
        nu: p.nu,
        kappa: p.kappa,
        scheme,
        dt: opts.dt,
    });
    traj.push(0.0, x0.clone());
    for n in 1..=n_steps {
        if let Err(e) = stepper.advance() {
            if let Error::NumericalFailure {
                time,
                last_valid_time,
                reason,
            } = e
            {
                traj.termination = Termination::Failed {
                    time,
                    last_valid_time,
                    reason,
                };
                break;
            }
            return Err(e);
        }
        if n % save_every == 0 || n == n_steps {
            traj.push(stepper.time(), stepper.state().clone());
        }
    }
    traj.cfl_violation = stepper.cfl_violation();
    Ok(traj)
}

/// Integrate the transformed equation from `x0` on `[0, t_end]`.
pub fn integrate_transformed(
    x0: &SpectralField,
    path: &NoisePath,
    p: &NseParams,
    opts: StepOptions,
) -> Result<Trajectory> {
    integrate(Scheme::Transformed, x0, path, p, opts)
}

/// Integrate the stochastic equation directly, with the same Wiener increments.
pub fn integrate_sns_direct(
    v0: &SpectralField,
    path: &NoisePath,
    p: &NseParams,
    opts: StepOptions,
) -> Result<Trajectory> {
    integrate(Scheme::Direct, v0, path, p, opts)
}

/// `v(t) = u(t) + z(θ_t ω)`. Each snapshot is the rounded sum; its exact
/// rounding error is kept in [`Trajectory::rounding`].
pub fn conjugate(traj: &Trajectory, path: &NoisePath) -> Result<Trajectory> {
    let stride = path.stride(traj.provenance.dt)?;
    let mut out = Trajectory::new(Provenance {
        scheme: Scheme::Conjugated,
        ..traj.provenance.clone()
    });
    let mut rounding = Vec::with_capacity(traj.len());
    for (t, u) in traj.times.iter().zip(&traj.snapshots) {
        let steps = t / traj.provenance.dt;
        let n = steps.round();
        if (steps - n).abs() > 1e-9 * steps.max(1.0) || n as usize * stride > path.n_steps() {
            return Err(Error::Misaligned(format!("snapshot time {t} is not on the noise path")));
        }
        let z = path.z(n as usize * stride);
        u.grid().check_same(z.grid())?;
        let (sum, err): (Vec<_>, Vec<_>) = u
            .coeffs()
            .iter()
            .zip(z.coeffs())
            .map(|(a, b)| {
                let (sr, er) = two_sum(a.re, b.re);
                let (si, ei) = two_sum(a.im, b.im);
                (
                    num_complex::Complex64::new(sr, si),
                    num_complex::Complex64::new(er, ei),
                )
            })
            .unzip();
        out.push(*t, SpectralField::from_coeffs(u.grid(), sum)?);
        rounding.push(SpectralField::from_coeffs(u.grid(), err)?);
    }
    out.rounding = Some(rounding);
    out.radius_sq = traj.radius_sq.clone();
    out.cfl_violation = traj.cfl_violation;
    out.termination = traj.termination.clone();
    Ok(out)
}

/// `l(x₁, ω) = (2/ν)(‖x₁‖²_V + ‖z(ω)‖²_V)`.
pub fn lipschitz_l(u1: &SpectralField, z: &SpectralField, nu: f64) -> f64 {
    lipschitz_l_from_norms(u1.norm_v_sq(), z.norm_v_sq(), nu)
}

pub fn lipschitz_l_from_norms(u_v_sq: f64, z_v_sq: f64, nu: f64) -> f64 {
    2.0 / nu * (u_v_sq + z_v_sq)
}

/// Symmetric pair version: the one-sided bound holds with either solution in
/// the role of `x₁`, so the smaller of the two is used.
pub fn lipschitz_l_pair(u1: &SpectralField, u2: &SpectralField, z: &SpectralField, nu: f64) -> f64 {
    lipschitz_l_from_norms(u1.norm_v_sq().min(u2.norm_v_sq()), z.norm_v_sq(), nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{CovarianceSpec, PathSpec};
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn rhs_examples() {
        let g = SpectralGrid::new(3).unwrap();
        let p = NseParams::unforced(&g, 1.0, 0.0).unwrap();
        let u = SpectralField::single_mode(&g, [1, 0], c(0.7, 0.1)).unwrap();
        let zero = SpectralField::zeros(&g);
        let r = rhs_transformed(&u, &zero, &p).unwrap();
        for (a, b) in r.coeffs().iter().zip(u.coeffs()) {
            assert!((a + b).norm() < 1e-15);
        }
        let f = SpectralField::single_mode(&g, [1, 2], c(0.3, 0.0)).unwrap();
        let pf = NseParams::new(1.0, 2.0, f.clone()).unwrap();
        assert_eq!(rhs_transformed(&zero, &zero, &pf).unwrap(), f);
    }

    #[test]
    fn lipschitz_examples() {
        let g = SpectralGrid::new(2).unwrap();
        let zero = SpectralField::zeros(&g);
        assert_eq!(lipschitz_l(&zero, &zero, 1.0), 0.0);
        let u = SpectralField::single_mode(&g, [1, 0], c(1.0, 0.0)).unwrap();
        assert_relative_eq!(lipschitz_l(&u, &zero, 2.0), 1.0);
        let u2 = u.scaled(2.0);
        assert_eq!(
            lipschitz_l_pair(&u, &u2, &zero, 1.0),
            lipschitz_l_pair(&u2, &u, &zero, 1.0)
        );
    }

    #[test]
    fn heat_decay_of_single_mode() {
        let g = SpectralGrid::new(3).unwrap();
        let p = NseParams::unforced(&g, 1.0, 0.0).unwrap();
        let path = NoisePath::zero(&g, 1e-3, 1000).unwrap();
        let x0 = SpectralField::single_mode(&g, [1, 0], c(1.0, 0.0)).unwrap();
        let traj = integrate_transformed(&x0, &path, &p, StepOptions::new(1.0, 1e-3)).unwrap();
        assert_relative_eq!(traj.norms.last().unwrap().h, (-1.0f64).exp(), max_relative = 1e-12);
        assert!(traj.cfl_violation.is_none());
    }

    #[test]
    fn restart_on_shifted_path_is_bit_exact() {
        let g = SpectralGrid::new(3).unwrap();
        let q = CovarianceSpec::power_law(&g, 0.05, 2.0).unwrap();
        let f = SpectralField::single_mode(&g, [1, 1], c(0.5, 0.0)).unwrap();
        let p = NseParams::new(0.5, 1.0, f).unwrap();
        let spec = PathSpec {
            seed: 11,
            dt: 0.005,
            n_steps: 400,
            burn_steps: 0,
        };
        let path = NoisePath::generate(&q, &p.ou(), spec).unwrap();
        let x0 = SpectralField::from_fn(&g, |k| c(0.1 / f64::from(k[0].abs() + k[1]), 0.02));
        for scheme in [Scheme::Transformed, Scheme::Direct] {
            let full = integrate(scheme, &x0, &path, &p, StepOptions::new(2.0, 0.01)).unwrap();
            let first = integrate(scheme, &x0, &path, &p, StepOptions::new(1.0, 0.01)).unwrap();
            let tail = integrate(
                scheme,
                first.last(),
                &path.shifted(200).unwrap(),
                &p,
                StepOptions::new(1.0, 0.01),
            )
            .unwrap();
            assert_eq!(full.last(), tail.last(), "{scheme:?}");
        }
    }

    #[test]
    fn blow_up_is_reported_with_last_valid_time() {
        let g = SpectralGrid::new(3).unwrap();
        let p = NseParams::unforced(&g, 1e-3, 0.0).unwrap();
        let path = NoisePath::zero(&g, 0.5, 200).unwrap();
        let x0 = SpectralField::from_fn(&g, |_| c(1e3, -2e3));
        let traj = integrate_transformed(&x0, &path, &p, StepOptions::new(100.0, 0.5)).unwrap();
        assert!(traj.cfl_violation.is_some());
        match traj.termination.clone() {
            Termination::Failed { time, last_valid_time, .. } => {
                assert_relative_eq!(time - last_valid_time, 0.5);
                assert_relative_eq!(*traj.times.last().unwrap(), last_valid_time);
            }
            Termination::Completed => panic!("expected blow-up"),
        }
        assert!(traj.into_result().is_err());
    }
}
