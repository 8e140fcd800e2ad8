use num_complex::Complex64;

use super::{transform, SpectralField, SpectralGrid, BASIS_SCALE};
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Unconstrained vector field given by plain Fourier coefficients
/// `w(x) = Σ_k ŵ_k e^{ik·x}` over the full box `max(|k₁|,|k₂|) ≤ n_max`.
/// Used as input to the Leray projector and as an oracle format in tests.
#[derive(Debug, Clone, PartialEq)]
pub struct RawField {
    grid: SpectralGrid,
    coeffs: Vec<[Complex64; 2]>,
}

impl RawField {
    pub fn zeros(grid: &SpectralGrid) -> Self {
        let side = 2 * grid.n_max() + 1;
        Self {
            grid: grid.clone(),
            coeffs: vec![[ZERO; 2]; side * side],
        }
    }

    fn slot(&self, k: [i32; 2]) -> Option<usize> {
        let n = self.grid.n_max() as i32;
        if k[0].abs() > n || k[1].abs() > n {
            return None;
        }
        let side = 2 * self.grid.n_max() + 1;
        Some((k[0] + n) as usize * side + (k[1] + n) as usize)
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn get(&self, k: [i32; 2]) -> Option<[Complex64; 2]> {
        self.slot(k).map(|s| self.coeffs[s])
    }

    /// Set `ŵ_k` and its mirror `ŵ_{-k} = conj(ŵ_k)` so the field stays real.
    pub fn set_real(&mut self, k: [i32; 2], w: [Complex64; 2]) -> Result<()> {
        let (Some(a), Some(b)) = (self.slot(k), self.slot([-k[0], -k[1]])) else {
            return Err(Error::GridMismatch(format!(
                "wavevector {k:?} outside n_max = {}",
                self.grid.n_max()
            )));
        };
        self.coeffs[a] = w;
        self.coeffs[b] = [w[0].conj(), w[1].conj()];
        Ok(())
    }

    /// Set a single coefficient without touching its mirror.
    pub fn set(&mut self, k: [i32; 2], w: [Complex64; 2]) -> Result<()> {
        let s = self.slot(k).ok_or_else(|| {
            Error::GridMismatch(format!("wavevector {k:?} outside n_max = {}", self.grid.n_max()))
        })?;
        self.coeffs[s] = w;
        Ok(())
    }

    pub fn from_field(u: &SpectralField) -> Self {
        let mut raw = Self::zeros(u.grid());
        for ((&k, e), c) in u.grid().modes().iter().zip(u.grid().perp()).zip(u.coeffs()) {
            let w = [c * (e[0] / BASIS_SCALE), c * (e[1] / BASIS_SCALE)];
            raw.set_real(k, w).expect("half-lattice mode lies in the box");
        }
        raw
    }

    /// Sample-based construction from values on the `N × N` collocation
    /// grid (row-major, `x₁` slow). Content above `n_max` is discarded.
    pub fn from_physical(grid: &SpectralGrid, u1: &[f64], u2: &[f64]) -> Result<Self> {
        let n = grid.transform_size();
        if u1.len() != n * n || u2.len() != n * n {
            return Err(Error::GridMismatch(format!(
                "expected {} samples per component, got {} and {}",
                n * n,
                u1.len(),
                u2.len()
            )));
        }
        let mut buf: Vec<Complex64> = u1
            .iter()
            .zip(u2)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        transform::fft2(grid, &mut buf, false);
        let scale = 1.0 / (n * n) as f64;
        let mut raw = Self::zeros(grid);
        let m = grid.n_max() as i32;
        for k1 in -m..=m {
            for k2 in -m..=m {
                let f = buf[transform::wrap(n, [k1, k2])] * scale;
                let g = buf[transform::wrap(n, [-k1, -k2])].conj() * scale;
                let w = [(f + g) * 0.5, (f - g) * Complex64::new(0.0, -0.5)];
                raw.set([k1, k2], w)?;
            }
        }
        Ok(raw)
    }

    /// `‖w‖²_{L²} = (2π)² Σ |ŵ_k|²`.
    pub fn norm_l2_sq(&self) -> f64 {
        let area = self.grid.domain_period().powi(2);
        area * self
            .coeffs
            .iter()
            .map(|w| w[0].norm_sqr() + w[1].norm_sqr())
            .sum::<f64>()
    }

    /// `max_k |k·ŵ_k|`.
    pub fn max_divergence(&self) -> f64 {
        let n = self.grid.n_max() as i32;
        let side = 2 * self.grid.n_max() + 1;
        let mut worst = 0.0f64;
        for (s, w) in self.coeffs.iter().enumerate() {
            let k1 = (s / side) as i32 - n;
            let k2 = (s % side) as i32 - n;
            worst = worst.max((w[0] * f64::from(k1) + w[1] * f64::from(k2)).norm());
        }
        worst
    }

    /// Leray projection of the real part of `w`; the mean is dropped.
    pub fn leray_project(&self) -> SpectralField {
        let grid = &self.grid;
        SpectralField::from_fn(grid, |k| {
            let a = self.get(k).expect("mode in box");
            let b = self.get([-k[0], -k[1]]).expect("mode in box");
            let norm = f64::from(k[0] * k[0] + k[1] * k[1]).sqrt();
            let e = [-f64::from(k[1]) / norm, f64::from(k[0]) / norm];
            let w0 = (a[0] + b[0].conj()) * 0.5;
            let w1 = (a[1] + b[1].conj()) * 0.5;
            (w0 * e[0] + w1 * e[1]) * BASIS_SCALE
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn gradient_fields_project_to_zero() {
        let g = SpectralGrid::new(3).unwrap();
        let mut w = RawField::zeros(&g);
        // w = ∇φ with φ̂_k = 0.7 - 0.2i at k = (2,1)
        let phi = c(0.7, -0.2);
        let i = c(0.0, 1.0);
        w.set_real([2, 1], [i * 2.0 * phi, i * phi]).unwrap();
        assert!(w.leray_project().norm_h() < 1e-14);
    }

    #[test]
    fn projection_is_idempotent_and_contractive() {
        let g = SpectralGrid::new(3).unwrap();
        let mut w = RawField::zeros(&g);
        w.set_real([1, 2], [c(0.3, 0.1), c(-0.4, 0.2)]).unwrap();
        w.set_real([-3, 1], [c(0.05, 0.0), c(0.0, 0.9)]).unwrap();
        let p = w.leray_project();
        let pp = RawField::from_field(&p).leray_project();
        for (a, b) in p.coeffs().iter().zip(pp.coeffs()) {
            assert!((a - b).norm() < 1e-14);
        }
        assert!(p.norm_h_sq() <= w.norm_l2_sq() * (1.0 + 1e-14));
        assert!(RawField::from_field(&p).max_divergence() < 1e-15);
    }

    #[test]
    fn raw_round_trip_preserves_norm() {
        let g = SpectralGrid::new(4).unwrap();
        let u = SpectralField::from_fn(&g, |k| c(f64::from(k[0]) * 0.1, 0.05 * f64::from(k[1])));
        let raw = RawField::from_field(&u);
        assert_relative_eq!(raw.norm_l2_sq(), u.norm_h_sq(), max_relative = 1e-13);
        let back = raw.leray_project();
        for (a, b) in u.coeffs().iter().zip(back.coeffs()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn physical_round_trip() {
        let g = SpectralGrid::new(4).unwrap();
        let u = SpectralField::from_fn(&g, |k| c(0.3 / f64::from(k[0].abs() + k[1] + 1), 0.1));
        let [u1, u2] = u.to_physical();
        let back = RawField::from_physical(&g, &u1, &u2).unwrap().leray_project();
        for (a, b) in u.coeffs().iter().zip(back.coeffs()) {
            assert!((a - b).norm() < 1e-14);
        }
    }
}
