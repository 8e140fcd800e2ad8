//! Collocation-grid transforms. Two real fields are packed into one complex
//! transform (`a + i b`), so the convective term costs three inverse and one
//! forward 2-D FFT.

use num_complex::Complex64;

use super::{SpectralField, SpectralGrid, BASIS_SCALE};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Flat index of wavevector `k` in an `n × n` DFT array.
pub(super) fn wrap(n: usize, k: [i32; 2]) -> usize {
    let n = n as i32;
    (k[0].rem_euclid(n) * n + k[1].rem_euclid(n)) as usize
}

/// In-place 2-D DFT, row-major `n × n`. The inverse is unnormalised, so it
/// evaluates `Σ_k F_k e^{ik·x_j}` directly.
pub(super) fn fft2(grid: &SpectralGrid, data: &mut [Complex64], inverse: bool) {
    let n = grid.transform_size();
    let plan = if inverse {
        grid.inverse_plan()
    } else {
        grid.forward_plan()
    };
    let mut scratch = vec![ZERO; plan.get_inplace_scratch_len()];
    plan.process_with_scratch(data, &mut scratch);
    let mut t = vec![ZERO; n * n];
    transpose(data, &mut t, n);
    plan.process_with_scratch(&mut t, &mut scratch);
    transpose(&t, data, n);
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            dst[j * n + i] = src[i * n + j];
        }
    }
}

/// Accumulate the spectrum of `A + iB` where `A`, `B` are real fields with
/// coefficients `a`, `b` at `k` (and conjugates at `-k`).
fn put_pair(buf: &mut [Complex64], n: usize, k: [i32; 2], a: Complex64, b: Complex64) {
    buf[wrap(n, k)] += a + I * b;
    buf[wrap(n, [-k[0], -k[1]])] += a.conj() + I * b.conj();
}

/// Split the spectrum `F` of `A + iB` back into `(Â_k, B̂_k)`.
fn split_pair(buf: &[Complex64], n: usize, k: [i32; 2]) -> (Complex64, Complex64) {
    let f = buf[wrap(n, k)];
    let g = buf[wrap(n, [-k[0], -k[1]])].conj();
    ((f + g) * 0.5, (f - g) * Complex64::new(0.0, -0.5))
}

pub(super) fn to_physical(u: &SpectralField) -> [Vec<f64>; 2] {
    let grid = u.grid();
    let n = grid.transform_size();
    let mut buf = vec![ZERO; n * n];
    for ((&k, e), c) in grid.modes().iter().zip(grid.perp()).zip(u.coeffs()) {
        let w = c / BASIS_SCALE;
        put_pair(&mut buf, n, k, w * e[0], w * e[1]);
    }
    fft2(grid, &mut buf, true);
    [
        buf.iter().map(|z| z.re).collect(),
        buf.iter().map(|z| z.im).collect(),
    ]
}

pub(super) fn nonlinear(u: &SpectralField, v: &SpectralField) -> SpectralField {
    nonlinear_with_speed(u, v).0
}

/// Convective term plus `max_x |u(x)|` over the collocation grid.
pub(super) fn nonlinear_with_speed(u: &SpectralField, v: &SpectralField) -> (SpectralField, f64) {
    let grid = u.grid();
    let n = grid.transform_size();
    let mut vel = vec![ZERO; n * n];
    let mut grad1 = vec![ZERO; n * n];
    let mut grad2 = vec![ZERO; n * n];
    for (idx, (&k, e)) in grid.modes().iter().zip(grid.perp()).enumerate() {
        let cu = u.coeffs()[idx] / BASIS_SCALE;
        let cv = v.coeffs()[idx] / BASIS_SCALE;
        if cu != ZERO {
            put_pair(&mut vel, n, k, cu * e[0], cu * e[1]);
        }
        if cv != ZERO {
            let ik1 = I * f64::from(k[0]);
            let ik2 = I * f64::from(k[1]);
            let (v1, v2) = (cv * e[0], cv * e[1]);
            put_pair(&mut grad1, n, k, ik1 * v1, ik2 * v1);
            put_pair(&mut grad2, n, k, ik1 * v2, ik2 * v2);
        }
    }
    fft2(grid, &mut vel, true);
    fft2(grid, &mut grad1, true);
    fft2(grid, &mut grad2, true);
    // (u·∇)v, both components packed into one array
    let mut speed_sq = 0.0f64;
    for ((w, g1), g2) in vel.iter_mut().zip(&grad1).zip(&grad2) {
        let (u1, u2) = (w.re, w.im);
        speed_sq = speed_sq.max(u1 * u1 + u2 * u2);
        *w = Complex64::new(u1 * g1.re + u2 * g1.im, u1 * g2.re + u2 * g2.im);
    }
    fft2(grid, &mut vel, false);
    let scale = BASIS_SCALE / (n * n) as f64;
    let coeffs = grid
        .modes()
        .iter()
        .zip(grid.perp())
        .map(|(&k, e)| {
            let (a, b) = split_pair(&vel, n, k);
            (a * e[0] + b * e[1]) * scale
        })
        .collect();
    let out = SpectralField::from_coeffs(grid, coeffs).expect("one coefficient per mode");
    (out, speed_sq.sqrt())
}

/// `[∂₁u, ∂₂u]` on the collocation grid; each entry is `[component 1, component 2]`.
pub(super) fn gradient(u: &SpectralField) -> [[Vec<f64>; 2]; 2] {
    let grid = u.grid();
    let n = grid.transform_size();
    let mut out: [[Vec<f64>; 2]; 2] = Default::default();
    for (j, slot) in out.iter_mut().enumerate() {
        let mut buf = vec![ZERO; n * n];
        for ((&k, e), c) in grid.modes().iter().zip(grid.perp()).zip(u.coeffs()) {
            let w = c * I * f64::from(k[j]) / BASIS_SCALE;
            put_pair(&mut buf, n, k, w * e[0], w * e[1]);
        }
        fft2(grid, &mut buf, true);
        *slot = [buf.iter().map(|z| z.re).collect(), buf.iter().map(|z| z.im).collect()];
    }
    out
}
