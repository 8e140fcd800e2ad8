//! Divergence-free velocity fields on the periodic torus `[0, 2π)²`.
//!
//! A field is stored as one complex amplitude `c_k` per wavevector of the
//! half lattice (`k₂ > 0`, or `k₂ = 0` and `k₁ > 0`) with `max(|k₁|,|k₂|) ≤ n_max`.
//! The velocity it represents is
//!
//! ```text
//! u(x) = Σ_k (c_k e^{ik·x} + conj(c_k) e^{-ik·x}) e_k / (2π√2),   e_k = (-k₂, k₁)/|k|
//! ```
//!
//! so every stored field is real, mean-zero and divergence-free by
//! construction, and the basis is orthonormal in `L²(T²)`:
//! `‖u‖²_H = Σ_k |c_k|²`. The Stokes operator is `A = -½Δ` with eigenvalue
//! `a_k = |k|²/2` on mode `k`.

mod raw;
mod snapshot;
mod transform;

pub use raw::RawField;
pub use snapshot::{read_snapshot, write_snapshot, Snapshot};

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};

/// `2π√2`: converts between stored amplitudes and plain Fourier coefficients.
pub(crate) const BASIS_SCALE: f64 = 2.0 * std::f64::consts::PI * std::f64::consts::SQRT_2;

/// Truncated wavevector lattice plus the FFT plans used by the pseudospectral
/// products. Cheap to clone.
#[derive(Clone)]
pub struct SpectralGrid {
    inner: Arc<GridInner>,
}

struct GridInner {
    n_max: usize,
    transform_size: usize,
    modes: Vec<[i32; 2]>,
    eigen: Vec<f64>,
    perp: Vec<[f64; 2]>,
    lookup: Vec<u32>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

const NO_MODE: u32 = u32::MAX;

fn is_half(k1: i32, k2: i32) -> bool {
    k2 > 0 || (k2 == 0 && k1 > 0)
}

/// Smallest `2^a 3^b 5^c` that is at least `n`.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

impl SpectralGrid {
    /// Grid retaining `max(|k₁|,|k₂|) ≤ n_max`; the physical transform grid is
    /// large enough (`≥ 3 n_max + 1` points per side) that every retained band
    /// sits inside the 2/3-rule cutoff and quadratic products are alias-free.
    pub fn new(n_max: usize) -> Result<Self> {
        Self::with_transform_size(n_max, smooth_size(3 * n_max + 1))
    }

    pub fn with_transform_size(n_max: usize, transform_size: usize) -> Result<Self> {
        if n_max < 2 {
            return Err(invalid("n_max", format!("must be at least 2, got {n_max}")));
        }
        if transform_size < 3 * n_max + 1 {
            return Err(invalid(
                "transform_size",
                format!(
                    "{transform_size} points cannot dealias a band of n_max = {n_max} (need >= {})",
                    3 * n_max + 1
                ),
            ));
        }
        let n = n_max as i32;
        let side = 2 * n_max + 1;
        let mut modes = Vec::new();
        let mut lookup = vec![NO_MODE; side * side];
        for k1 in -n..=n {
            for k2 in 0..=n {
                if is_half(k1, k2) {
                    lookup[(k1 + n) as usize * side + (k2 + n) as usize] = modes.len() as u32;
                    modes.push([k1, k2]);
                }
            }
        }
        let eigen = modes
            .iter()
            .map(|k| 0.5 * f64::from(k[0] * k[0] + k[1] * k[1]))
            .collect();
        let perp = modes
            .iter()
            .map(|k| {
                let norm = f64::from(k[0] * k[0] + k[1] * k[1]).sqrt();
                [-f64::from(k[1]) / norm, f64::from(k[0]) / norm]
            })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(transform_size);
        let inverse = planner.plan_fft_inverse(transform_size);
        Ok(Self {
            inner: Arc::new(GridInner {
                n_max,
                transform_size,
                modes,
                eigen,
                perp,
                lookup,
                forward,
                inverse,
            }),
        })
    }

    pub fn n_max(&self) -> usize {
        self.inner.n_max
    }

    /// Points per side of the physical collocation grid.
    pub fn transform_size(&self) -> usize {
        self.inner.transform_size
    }

    /// Highest retained `max(|k₁|,|k₂|)` after 2/3-rule dealiasing; every
    /// stored mode lies inside it.
    pub fn dealias_cutoff(&self) -> usize {
        self.inner.n_max
    }

    pub fn domain_period(&self) -> f64 {
        2.0 * std::f64::consts::PI
    }

    /// Number of stored (half-lattice) modes.
    pub fn len(&self) -> usize {
        self.inner.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.modes.is_empty()
    }

    pub fn modes(&self) -> &[[i32; 2]] {
        &self.inner.modes
    }

    /// Stokes eigenvalues `a_k = |k|²/2`, aligned with [`modes`](Self::modes).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.inner.eigen
    }

    /// Unit vectors `(-k₂, k₁)/|k|`, aligned with [`modes`](Self::modes).
    pub fn perp(&self) -> &[[f64; 2]] {
        &self.inner.perp
    }

    pub fn wavenumber_sq(&self, idx: usize) -> f64 {
        2.0 * self.inner.eigen[idx]
    }

    /// Smallest eigenvalue of `-Δ` on mean-zero fields (`= 2 min a_k = 1`).
    pub fn lambda1(&self) -> f64 {
        2.0 * self
            .inner
            .eigen
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Storage index of `k` if it is a retained half-lattice wavevector.
    pub fn index_of(&self, k: [i32; 2]) -> Option<usize> {
        let n = self.inner.n_max as i32;
        if k[0].abs() > n || k[1].abs() > n {
            return None;
        }
        let side = 2 * self.inner.n_max + 1;
        let slot = self.inner.lookup[(k[0] + n) as usize * side + (k[1] + n) as usize];
        (slot != NO_MODE).then_some(slot as usize)
    }

    /// True when every mode of `self` is also a mode of `other`.
    pub fn embeds_in(&self, other: &SpectralGrid) -> bool {
        self.n_max() <= other.n_max()
    }

    pub(crate) fn check_same(&self, other: &SpectralGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    pub(crate) fn forward_plan(&self) -> &Arc<dyn Fft<f64>> {
        &self.inner.forward
    }

    pub(crate) fn inverse_plan(&self) -> &Arc<dyn Fft<f64>> {
        &self.inner.inverse
    }
}

impl PartialEq for SpectralGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.n_max == other.inner.n_max
                && self.inner.transform_size == other.inner.transform_size)
    }
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("n_max", &self.inner.n_max)
            .field("transform_size", &self.inner.transform_size)
            .finish()
    }
}

/// Norms used throughout: `h = ‖u‖_H`, `v = ‖∇u‖ = √2‖A^{1/2}u‖`,
/// `v_dual = ‖A^{-1/2}u‖/√2` (the dual of `v`), and `hs` holding
/// `‖A^{s/2}u‖_H` for a few exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct NormBundle {
    pub h: f64,
    pub v: f64,
    pub v_dual: f64,
    pub hs: Vec<(f64, f64)>,
}

impl NormBundle {
    pub const EXPONENTS: [f64; 5] = [-1.0, 0.0, 1.0, 2.0, 3.0];

    pub fn hs(&self, s: f64) -> Option<f64> {
        self.hs.iter().find(|(e, _)| *e == s).map(|(_, v)| *v)
    }
}

/// A real, mean-zero, divergence-free velocity field.
#[derive(Clone, PartialEq)]
pub struct SpectralField {
    grid: SpectralGrid,
    coeffs: Vec<Complex64>,
}

impl fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralField")
            .field("grid", &self.grid)
            .field("h", &self.norm_h())
            .finish()
    }
}

impl SpectralField {
    pub fn zeros(grid: &SpectralGrid) -> Self {
        Self {
            grid: grid.clone(),
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_coeffs(grid: &SpectralGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} coefficients for a grid with {} modes",
                coeffs.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            coeffs,
        })
    }

    pub fn from_fn(grid: &SpectralGrid, mut f: impl FnMut([i32; 2]) -> Complex64) -> Self {
        let coeffs = grid.modes().iter().map(|&k| f(k)).collect();
        Self {
            grid: grid.clone(),
            coeffs,
        }
    }

    /// Field consisting of one Fourier mode with `‖u‖_H = |amplitude|`.
    /// `k` may lie in either half of the lattice.
    pub fn single_mode(grid: &SpectralGrid, k: [i32; 2], amplitude: Complex64) -> Result<Self> {
        let mut u = Self::zeros(grid);
        u.set_mode(k, amplitude)?;
        Ok(u)
    }

    /// Set the amplitude attached to `e^{ik·x}`; for `k` in the lower half
    /// this stores the equivalent upper-half amplitude `-conj(amplitude)`.
    pub fn set_mode(&mut self, k: [i32; 2], amplitude: Complex64) -> Result<()> {
        if let Some(i) = self.grid.index_of(k) {
            self.coeffs[i] = amplitude;
            return Ok(());
        }
        if let Some(i) = self.grid.index_of([-k[0], -k[1]]) {
            self.coeffs[i] = -amplitude.conj();
            return Ok(());
        }
        Err(invalid(
            "k",
            format!("wavevector {k:?} is zero or outside n_max = {}", self.grid.n_max()),
        ))
    }

    pub fn mode(&self, k: [i32; 2]) -> Option<Complex64> {
        self.grid.index_of(k).map(|i| self.coeffs[i])
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Coefficients as a real vector `(Re c₀, Im c₀, Re c₁, …)`.
    pub fn to_real_vec(&self) -> Vec<f64> {
        self.coeffs.iter().flat_map(|c| [c.re, c.im]).collect()
    }

    pub fn from_real_vec(grid: &SpectralGrid, x: &[f64]) -> Result<Self> {
        if x.len() != 2 * grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} real coordinates for {} modes",
                x.len(),
                grid.len()
            )));
        }
        let coeffs = x
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        Ok(Self {
            grid: grid.clone(),
            coeffs,
        })
    }

    /// Copy onto a grid containing this one (zero padding) or a smaller
    /// grid (truncation).
    pub fn regrid(&self, target: &SpectralGrid) -> Self {
        if *target == self.grid {
            return self.clone();
        }
        Self::from_fn(target, |k| {
            self.grid
                .index_of(k)
                .map_or(Complex64::new(0.0, 0.0), |i| self.coeffs[i])
        })
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// `A^s u`, applied mode by mode. Negative powers are fine since the
    /// zero mode is never stored.
    pub fn apply_stokes(&self, s: f64) -> Self {
        if s == 0.0 {
            return self.clone();
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(self.grid.eigenvalues())
            .map(|(c, a)| c * a.powf(s))
            .collect();
        Self {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// `H` inner product.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        debug_assert!(self.grid == other.grid);
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn norm_h_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm_h(&self) -> f64 {
        self.norm_h_sq().sqrt()
    }

    /// `‖u‖²_V = ‖∇u‖² = Σ |k|² |c_k|²`.
    pub fn norm_v_sq(&self) -> f64 {
        self.weighted_sq(|a| 2.0 * a)
    }

    /// `‖u‖²_{V'} = Σ |c_k|² / |k|²`.
    pub fn norm_v_dual_sq(&self) -> f64 {
        self.weighted_sq(|a| 0.5 / a)
    }

    /// `‖A^{s/2}u‖_H`.
    pub fn hs(&self, s: f64) -> f64 {
        self.weighted_sq(|a| a.powf(s)).sqrt()
    }

    fn weighted_sq(&self, w: impl Fn(f64) -> f64) -> f64 {
        self.coeffs
            .iter()
            .zip(self.grid.eigenvalues())
            .map(|(c, &a)| w(a) * c.norm_sqr())
            .sum()
    }

    pub fn norms(&self) -> NormBundle {
        NormBundle {
            h: self.norm_h(),
            v: self.norm_v_sq().sqrt(),
            v_dual: self.norm_v_dual_sq().sqrt(),
            hs: NormBundle::EXPONENTS
                .iter()
                .map(|&s| (s, self.hs(s)))
                .collect(),
        }
    }

    /// `self + alpha * other`, in place.
    pub fn axpy(&mut self, alpha: f64, other: &SpectralField) {
        debug_assert!(self.grid == other.grid);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * alpha;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            coeffs: self.coeffs.iter().map(|c| c * alpha).collect(),
        }
    }

    /// Keep only modes with `|k|² ≤ cutoff_sq` (orthogonal spectral projector).
    pub fn low_pass(&self, cutoff_sq: f64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if self.grid.wavenumber_sq(i) <= cutoff_sq {
                    c
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        Self {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// Velocity on the `N × N` collocation grid, `x_j = 2π j / N`, stored
    /// row-major with `x₁` as the slow index.
    pub fn to_physical(&self) -> [Vec<f64>; 2] {
        transform::to_physical(self)
    }

    /// `[∂₁u, ∂₂u]` on the collocation grid, same layout as [`Self::to_physical`].
    pub fn gradient_physical(&self) -> [[Vec<f64>; 2]; 2] {
        transform::gradient(self)
    }

    /// Pseudospectral `P[(self·∇)v]`; see [`nonlinear_term`].
    pub fn advect(&self, v: &SpectralField) -> Result<SpectralField> {
        nonlinear_term(self, v)
    }
}

/// Leray-projected convective term `P[(u·∇)v]`, computed on the dealiased
/// collocation grid. Exact (up to rounding) Galerkin truncation of the
/// product; bilinear in `(u, v)`.
pub fn nonlinear_term(u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    u.grid.check_same(&v.grid)?;
    Ok(transform::nonlinear(u, v))
}

/// [`nonlinear_term`] together with the peak speed `max_x |u(x)|` on the
/// collocation grid (used for the CFL heuristic).
pub fn nonlinear_term_with_speed(
    u: &SpectralField,
    v: &SpectralField,
) -> Result<(SpectralField, f64)> {
    u.grid.check_same(&v.grid)?;
    Ok(transform::nonlinear_with_speed(u, v))
}

/// Leray projector `I - kkᵀ/|k|²` on a raw (not necessarily solenoidal) field.
pub fn leray_project(w: &RawField) -> SpectralField {
    w.leray_project()
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        debug_assert!(self.grid == rhs.grid);
        SpectralField {
            grid: self.grid.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, rhs: f64) -> SpectralField {
        self.scaled(rhs)
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scaled(-1.0)
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
    fn grid_rejects_small_cutoff() {
        assert!(SpectralGrid::new(1).is_err());
        assert!(SpectralGrid::with_transform_size(4, 12).is_err());
        let g = SpectralGrid::new(4).unwrap();
        assert!(g.transform_size() >= 13);
        assert_eq!(g.len(), (9 * 9 - 1) / 2);
        assert_eq!(g.lambda1(), 1.0);
    }

    #[test]
    fn stokes_eigenvalues() {
        let g = SpectralGrid::new(3).unwrap();
        let u = SpectralField::single_mode(&g, [1, 0], c(1.0, 0.0)).unwrap();
        let au = u.apply_stokes(1.0);
        assert_eq!(au.mode([1, 0]).unwrap(), c(0.5, 0.0));
        assert_eq!(u.apply_stokes(0.0), u);
        let w = SpectralField::single_mode(&g, [1, 1], c(0.3, -0.7)).unwrap();
        let inv = w.apply_stokes(-1.0);
        assert_relative_eq!(inv.mode([1, 1]).unwrap().re, 0.3, max_relative = 1e-15);
        assert_relative_eq!(inv.mode([1, 1]).unwrap().im, -0.7, max_relative = 1e-15);
    }

    #[test]
    fn lower_half_modes_fold_onto_upper_half() {
        let g = SpectralGrid::new(2).unwrap();
        let u = SpectralField::single_mode(&g, [-1, 0], c(0.2, 0.5)).unwrap();
        assert_eq!(u.mode([1, 0]).unwrap(), c(-0.2, 0.5));
        let raw = RawField::from_field(&u);
        let [a, b] = raw.get([-1, 0]).unwrap();
        // e_{(-1,0)} = (0, -1), so the raw (-1,0) coefficient is -(0.2 + 0.5i) e₂
        assert!(a.norm() < 1e-15);
        assert_relative_eq!(b.re * BASIS_SCALE, -0.2, max_relative = 1e-14);
        assert_relative_eq!(b.im * BASIS_SCALE, -0.5, max_relative = 1e-14);
    }

    #[test]
    fn norm_examples() {
        let g = SpectralGrid::new(3).unwrap();
        let u = SpectralField::single_mode(&g, [1, 0], c(1.0, 0.0)).unwrap();
        let n = u.norms();
        assert_relative_eq!(n.h, 1.0);
        assert_relative_eq!(n.v, 1.0);
        assert_relative_eq!(n.v_dual, 1.0);
        assert_relative_eq!(n.v, std::f64::consts::SQRT_2 * n.hs(1.0).unwrap(), max_relative = 1e-15);

        let zero = SpectralField::zeros(&g).norms();
        assert_eq!((zero.h, zero.v, zero.v_dual), (0.0, 0.0, 0.0));

        let mut two = SpectralField::zeros(&g);
        two.set_mode([0, 1], c(1.0, 0.0)).unwrap();
        two.set_mode([1, 1], c(0.0, 1.0)).unwrap();
        let n = two.norms();
        assert_relative_eq!(n.h, 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(n.v, 3f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn physical_field_of_single_mode() {
        // c = 1 at k = (1,0): u = (0, √2/(2π) cos x₁)
        let g = SpectralGrid::new(2).unwrap();
        let u = SpectralField::single_mode(&g, [1, 0], c(1.0, 0.0)).unwrap();
        let [u1, u2] = u.to_physical();
        let n = g.transform_size();
        let amp = std::f64::consts::SQRT_2 / (2.0 * std::f64::consts::PI);
        for j1 in 0..n {
            let x1 = 2.0 * std::f64::consts::PI * j1 as f64 / n as f64;
            for j2 in 0..n {
                assert!(u1[j1 * n + j2].abs() < 1e-15);
                assert_relative_eq!(u2[j1 * n + j2], amp * x1.cos(), epsilon = 1e-15);
            }
        }
        // mean-square over the grid times the area recovers ‖u‖²_H
        let ms: f64 = u2.iter().map(|x| x * x).sum::<f64>() / (n * n) as f64;
        assert_relative_eq!(ms * 4.0 * std::f64::consts::PI.powi(2), 1.0, max_relative = 1e-13);
    }

    #[test]
    fn low_pass_keeps_small_wavenumbers() {
        let g = SpectralGrid::new(3).unwrap();
        let u = SpectralField::from_fn(&g, |_| c(1.0, 1.0));
        let p = u.low_pass(1.0);
        assert_eq!(p.coeffs().iter().filter(|z| z.norm() > 0.0).count(), 2);
    }
}
