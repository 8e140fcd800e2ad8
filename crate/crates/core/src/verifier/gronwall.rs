//! Pathwise audit of the Gronwall bound
//!
//! ```text
//! ‖w(t)‖² ≤ ‖w(0)‖² e^{∫₀ᵗ q} + 2c C_{δ,L} ∫₀ᵗ e^{∫ₛᵗ q} η_L(s) ds
//! ```
//!
//! which follows from `d‖w‖²/dt ≤ q‖w‖² + 2c C_{δ,L} η_L` once
//! `‖w‖²_V ≥ (1+δ)^{-1} ε_L^{-2} ‖w‖² - C_{δ,L} η_L` is inserted.

use serde::Serialize;

use super::PairTrace;
use crate::error::{invalid, Result};
use crate::functionals::{c_delta, DefectReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallParams {
    pub eps_l: f64,
    /// Dissipation share `c`; the transformed system supports `c = ν/2`.
    pub c: f64,
    pub delta: f64,
    /// `C_{δ,L}`.
    pub c_delta: f64,
}

impl GronwallParams {
    /// Parameters from a `(V, H)` defect report, `c = ν/2`.
    pub fn from_defect(report: &DefectReport, nu: f64, delta: f64) -> Result<Self> {
        if !report.pair.is_vh() {
            return Err(invalid("pair", "the Gronwall bound needs the (V, H) defect"));
        }
        Ok(Self {
            eps_l: report.eps,
            c: nu / 2.0,
            delta,
            c_delta: c_delta(report.eps, report.c_l, delta)?,
        })
    }

    fn q_shift(&self) -> f64 {
        2.0 * self.c / ((1.0 + self.delta) * self.eps_l * self.eps_l)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GronwallCheck {
    pub params: GronwallParams,
    pub times: Vec<f64>,
    /// `‖w(t)‖²_H`.
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub violations: Vec<f64>,
    /// `min (rhs - lhs)/rhs` over `t > 0` with `rhs > 0` (both sides agree at 0).
    pub min_relative_slack: f64,
}

impl GronwallCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Slack allowed for rounding when comparing the two sides.
const ROUNDING: f64 = 1e-12;

/// Evaluate both sides on the step grid. Exponents and the source integral
/// use the trapezoid rule; the right side is propagated step by step as
/// `B_{n+1} = e^{Q_n} B_n + κ·dt/2·(e^{Q_n} η_n + η_{n+1})` with
/// `Q_n = dt/2·(q_n + q_{n+1})`, `κ = 2c C_{δ,L}`.
pub fn check_gronwall(trace: &PairTrace, p: GronwallParams) -> GronwallCheck {
    check_gronwall_scaled(trace, p, 1.0)
}

/// As [`check_gronwall`], with `η_L` multiplied by `eta_scale` (audits).
pub fn check_gronwall_scaled(trace: &PairTrace, p: GronwallParams, eta_scale: f64) -> GronwallCheck {
    let n = trace.len();
    let shift = p.q_shift();
    let kappa = 2.0 * p.c * p.c_delta;
    let dt = trace.dt;
    let mut rhs = Vec::with_capacity(n);
    let mut b = trace.w_h_sq.first().copied().unwrap_or(0.0);
    rhs.push(b);
    for i in 0..n.saturating_sub(1) {
        let q0 = 2.0 * trace.l[i] - shift;
        let q1 = 2.0 * trace.l[i + 1] - shift;
        let g = (0.5 * dt * (q0 + q1)).exp();
        let (e0, e1) = (eta_scale * trace.eta[i], eta_scale * trace.eta[i + 1]);
        b = g * b + kappa * 0.5 * dt * (g * e0 + e1);
        rhs.push(b);
    }
    let mut violations = Vec::new();
    let mut min_slack = f64::INFINITY;
    for (i, (&l, &r)) in trace.w_h_sq.iter().zip(&rhs).enumerate() {
        if l > r * (1.0 + ROUNDING) {
            violations.push(trace.times[i]);
        }
        if i > 0 && r > 0.0 {
            min_slack = min_slack.min((r - l) / r);
        }
    }
    GronwallCheck {
        params: p,
        times: trace.times.clone(),
        lhs: trace.w_h_sq.clone(),
        rhs,
        violations,
        min_relative_slack: min_slack,
    }
}
