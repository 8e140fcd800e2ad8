//! Transfer of pair statistics through `v = u + z(θ_t ω)`.
//!
//! The shift cancels in differences, so `v₁ − v₂ = u₁ − u₂` holds exactly in
//! real arithmetic. On stored data the conjugated snapshots carry their exact
//! rounding residuals, and the identity is checked with an exact expansion
//! sum rather than by comparing rounded differences.

use serde::Serialize;

use super::PairTrace;
use crate::error::{Error, Result};
use crate::exact::{exact_sum_is_zero, two_sum};
use crate::functionals::FunctionalSet;
use crate::noise::NoisePath;
use crate::rds::{conjugate, integrate_sns_direct, integrate_transformed, NseParams, StepOptions};
use crate::spectral::SpectralField;

#[derive(Debug, Clone, Serialize)]
pub struct ConjugacyReport {
    pub snapshots_checked: usize,
    /// `(s₁ + e₁) − (s₂ + e₂) − (u₁ − u₂) = 0` exactly on every coordinate.
    pub exact_identity: bool,
    /// Largest `‖fl(v₁ − v₂) − fl(u₁ − u₂)‖_H` (rounding only).
    pub max_rounded_gap: f64,
    /// Largest relative gap between `η_L` of the two differences.
    pub max_eta_gap: f64,
    /// Same identity under the nonlinear map `x ↦ x·e^{−z}` (coefficient-wise);
    /// must be visibly nonzero.
    pub negative_control_gap: f64,
}

/// Coefficient-wise `x e^{-z}` on the real coordinates.
fn nonlinear_map(x: &SpectralField, z: &SpectralField) -> SpectralField {
    let xs = x.to_real_vec();
    let zs = z.to_real_vec();
    let v: Vec<f64> = xs.iter().zip(&zs).map(|(a, b)| a * (-b).exp()).collect();
    SpectralField::from_real_vec(x.grid(), &v).expect("same grid")
}

pub fn conjugacy_transfer(trace: &PairTrace, path: &NoisePath, l: &FunctionalSet) -> Result<ConjugacyReport> {
    let stride = path.stride(trace.dt)?;
    let mut exact = true;
    let mut max_rounded_gap = 0.0f64;
    let mut max_eta_gap = 0.0f64;
    let mut control = 0.0f64;
    for (i, &step) in trace.snapshot_steps.iter().enumerate() {
        let j = step * stride;
        if j > path.n_steps() {
            return Err(Error::Misaligned(format!("snapshot step {step} lies beyond the noise path")));
        }
        let z = path.z(j);
        let (u1, u2) = (&trace.u1[i], &trace.u2[i]);
        let (a, b, zz) = (u1.to_real_vec(), u2.to_real_vec(), z.to_real_vec());
        let mut v1 = Vec::with_capacity(a.len());
        let mut v2 = Vec::with_capacity(a.len());
        for k in 0..a.len() {
            let (s1, e1) = two_sum(a[k], zz[k]);
            let (s2, e2) = two_sum(b[k], zz[k]);
            exact &= exact_sum_is_zero(&[s1, e1, -s2, -e2, -a[k], b[k]]);
            v1.push(s1);
            v2.push(s2);
        }
        let grid = u1.grid();
        let dv = &SpectralField::from_real_vec(grid, &v1)? - &SpectralField::from_real_vec(grid, &v2)?;
        let du = u1 - u2;
        max_rounded_gap = max_rounded_gap.max((&dv - &du).norm_h());
        let (ev, eu) = (l.eta(&dv)?, l.eta(&du)?);
        if ev != eu {
            max_eta_gap = max_eta_gap.max((ev - eu).abs() / ev.abs().max(eu.abs()));
        }
        let dc = &nonlinear_map(u1, z) - &nonlinear_map(u2, z);
        control = control.max((&dc - &du).norm_h());
    }
    Ok(ConjugacyReport {
        snapshots_checked: trace.snapshot_steps.len(),
        exact_identity: exact,
        max_rounded_gap,
        max_eta_gap,
        negative_control_gap: control,
    })
}

/// `‖T⁻¹u(t) − v(t)‖_H` at `t_end`: the conjugated transformed solution
/// against the direct integrator, both from the same initial state and the
/// same Wiener path.
pub fn integrator_gap(v0: &SpectralField, path: &NoisePath, params: &NseParams, t_end: f64, dt: f64) -> Result<f64> {
    let opts = StepOptions { t_end, dt, save_every: usize::MAX };
    let u0 = v0 - path.z(0);
    let u = integrate_transformed(&u0, path, params, opts)?.into_result()?;
    let v = integrate_sns_direct(v0, path, params, opts)?.into_result()?;
    let conj = conjugate(&u, path)?;
    Ok((conj.last() - v.last()).norm_h())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{CovarianceSpec, PathSpec};
    use crate::spectral::SpectralGrid;
    use crate::verifier::{run_pair, sphere_samples, PairOptions};
    use num_complex::Complex64;

    #[test]
    fn differences_survive_conjugation() {
        let g = SpectralGrid::new(3).unwrap();
        let f = SpectralField::single_mode(&g, [1, 1], Complex64::new(0.4, 0.0)).unwrap();
        let p = NseParams::new(0.5, 1.0, f).unwrap();
        let q = CovarianceSpec::power_law(&g, 0.05, 2.0).unwrap();
        let path = NoisePath::generate(&q, &p.ou(), PathSpec { seed: 3, dt: 0.01, n_steps: 200, burn_steps: 0 }).unwrap();
        let l = FunctionalSet::modes_cutoff(&g, 2.0).unwrap();
        let x = sphere_samples(&g, 1.0, 2, 7);
        let mut o = PairOptions::new(2.0, 0.01, 0.5);
        o.save_every = 10;
        let tr = run_pair(&x[0], &x[1], &path, &l, &p, o).unwrap();
        let rep = conjugacy_transfer(&tr, &path, &l).unwrap();
        assert_eq!(rep.snapshots_checked, 21);
        assert!(rep.exact_identity);
        assert!(rep.max_rounded_gap < 1e-14);
        assert!(rep.max_eta_gap < 1e-12);
        assert!(rep.negative_control_gap > 1e-6);
    }
}
