//! Pullback approximation of the stationary absorbing radius: the scalar
//! random ODE
//!
//! ```text
//! dρ/dt = -(νλ₁ - (8/ν)‖z‖²_V) ρ + m,   m = (4/ν)((2/λ₁)‖z‖⁴_V + κ²ν²‖z‖²_V + ‖f‖²_{V'})
//! ```
//!
//! integrated from `ρ(-T_burn) = 0`, with `R² = (1 + ε) ρ`.

use serde::Serialize;

use super::NseParams;
use crate::error::{invalid, Result};
use crate::noise::NoisePath;

/// Pullback horizon `20/(νλ₁)`: the initial-condition error is damped by
/// `e^{-20}` in the noise-free case.
pub fn default_burn_in(nu: f64, lambda1: f64) -> f64 {
    20.0 / (nu * lambda1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusPath {
    /// Path times `j·dt`, `j = 0 ..= n_steps`.
    pub times: Vec<f64>,
    pub r2: Vec<f64>,
    pub rho: Vec<f64>,
    /// `m(θ_t ω)`.
    pub m: Vec<f64>,
    pub eps: f64,
    pub t_burn: f64,
    /// `λ₁ > 4 tr Q / ((κ+1)ν³)`; when false the radius need not be
    /// stationary or attracting.
    pub admissible: bool,
}

impl RadiusPath {
    /// `R²` at integrator step `n` for an integrator step of `stride` path steps.
    pub fn r2_at(&self, n: usize, stride: usize) -> f64 {
        self.r2[n * stride]
    }
}

/// `(1 - e^{-x})/x`, continuous at 0.
fn phi1(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

pub fn radius_path(path: &NoisePath, p: &NseParams, eps: f64) -> Result<RadiusPath> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid("eps_margin", format!("must be > 0, got {eps}")));
    }
    let hist = path.history_steps();
    if hist == 0 {
        return Err(invalid("t_burn", "the noise path has no prehistory (T_burn must be > 0)"));
    }
    let dt = path.dt();
    let (nu, l1, kappa) = (p.nu, p.lambda1, p.kappa);
    let f2 = p.forcing.norm_v_dual_sq();
    let series = &path.z_v_sq_series()[..=hist + path.n_steps()];
    let rate = |z: f64| nu * l1 - 8.0 / nu * z;
    let source = |z: f64| 4.0 / nu * (2.0 / l1 * z * z + kappa * kappa * nu * nu * z + f2);

    let mut rho = 0.0;
    let mut out_rho = Vec::with_capacity(path.n_steps() + 1);
    for i in 0..series.len() {
        if i >= hist {
            out_rho.push(rho);
        }
        if i + 1 == series.len() {
            break;
        }
        let a = 0.5 * (rate(series[i]) + rate(series[i + 1]));
        let m = 0.5 * (source(series[i]) + source(series[i + 1]));
        rho = (-a * dt).exp() * rho + dt * phi1(a * dt) * m;
    }
    let tr_q = path.covariance().trace();
    Ok(RadiusPath {
        times: (0..out_rho.len()).map(|j| j as f64 * dt).collect(),
        r2: out_rho.iter().map(|r| (1.0 + eps) * r).collect(),
        m: series[hist..].iter().map(|&z| source(z)).collect(),
        rho: out_rho,
        eps,
        t_burn: hist as f64 * dt,
        admissible: l1 > 4.0 * tr_q / ((kappa + 1.0) * nu.powi(3)),
    })
}
