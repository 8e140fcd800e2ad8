//! Finite families of linear functionals on velocity fields and their
//! completeness defect
//!
//! ```text
//! ε_L(X, Y) = sup { ‖w‖_Y : l_j(w) = 0 ∀j, ‖w‖_X ≤ 1 },
//! ```
//!
//! together with a constant `C_L` for `‖u‖_Y ≤ ε_L‖u‖_X + C_L max_j |l_j(u)|`.
//!
//! Fields are handled in real coordinates `(Re c₀, Im c₀, Re c₁, …)`, in which
//! every norm of interest is diagonal. After whitening by the `X` weights the
//! defect is the top eigenvalue of the `Y/X` weight ratio compressed to the
//! null space of the functionals.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::spectral::{SpectralField, SpectralGrid, BASIS_SCALE};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Cube vertices are enumerated exactly up to this many functionals.
const MAX_EXACT_VERTICES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Modes,
    VolumeAverages,
    ExplicitMatrix,
}

impl FunctionalKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FunctionalKind::Modes => "modes",
            FunctionalKind::VolumeAverages => "volume_averages",
            FunctionalKind::ExplicitMatrix => "explicit_matrix",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Descriptor {
    Modes(Vec<[i32; 2]>),
    Disks { centers: Vec<[f64; 2]>, radius: f64 },
    Matrix,
}

/// A family `L = {l_j}` with its evaluation matrix against the real
/// coordinates of the grid.
#[derive(Debug, Clone)]
pub struct FunctionalSet {
    kind: FunctionalKind,
    descriptor: Descriptor,
    labels: Vec<String>,
    grid: SpectralGrid,
    matrix: DMatrix<f64>,
}

/// `2 J₁(ρ)/ρ`: average of `e^{ik·x}` over a disk of radius `r`, `ρ = |k| r`.
fn disk_factor(rho: f64) -> f64 {
    if rho < 1e-6 {
        1.0 - rho * rho / 8.0
    } else {
        2.0 * libm::j1(rho) / rho
    }
}

impl FunctionalSet {
    /// Real and imaginary parts of the listed Fourier coefficients (two
    /// functionals per wavevector; `k` and `-k` carry the same information).
    pub fn modes(grid: &SpectralGrid, wavevectors: &[[i32; 2]]) -> Result<Self> {
        let mut ks = Vec::with_capacity(wavevectors.len());
        for &k in wavevectors {
            let k = if grid.index_of(k).is_some() { k } else { [-k[0], -k[1]] };
            if grid.index_of(k).is_none() {
                return Err(invalid("modes", format!("{k:?} is zero or outside n_max = {}", grid.n_max())));
            }
            ks.push(k);
        }
        Self::build_modes(grid, ks)
    }

    fn build_modes(grid: &SpectralGrid, ks: Vec<[i32; 2]>) -> Result<Self> {
        let n = 2 * grid.len();
        let mut matrix = DMatrix::zeros(2 * ks.len(), n);
        let mut labels = Vec::with_capacity(2 * ks.len());
        for (j, k) in ks.iter().enumerate() {
            let idx = grid.index_of(*k).expect("checked above");
            matrix[(2 * j, 2 * idx)] = 1.0;
            matrix[(2 * j + 1, 2 * idx + 1)] = 1.0;
            labels.push(format!("re({},{})", k[0], k[1]));
            labels.push(format!("im({},{})", k[0], k[1]));
        }
        let set = Self {
            kind: FunctionalKind::Modes,
            descriptor: Descriptor::Modes(ks),
            labels,
            grid: grid.clone(),
            matrix,
        };
        set.check_rank()?;
        Ok(set)
    }

    /// All stored wavevectors with `|k|² ≤ cutoff_sq`.
    pub fn modes_cutoff(grid: &SpectralGrid, cutoff_sq: f64) -> Result<Self> {
        let ks = grid
            .modes()
            .iter()
            .enumerate()
            .filter(|(i, _)| grid.wavenumber_sq(*i) <= cutoff_sq)
            .map(|(_, &k)| k)
            .collect();
        Self::build_modes(grid, ks)
    }

    /// Averages of both velocity components over disks of radius `radius`
    /// centred at `centers` (two functionals per disk).
    pub fn volume_averages(grid: &SpectralGrid, centers: &[[f64; 2]], radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius < PI) {
            return Err(invalid("radius", format!("must lie in (0, π), got {radius}")));
        }
        let n = 2 * grid.len();
        let mut matrix = DMatrix::zeros(2 * centers.len(), n);
        let mut labels = Vec::with_capacity(2 * centers.len());
        for (j, x0) in centers.iter().enumerate() {
            for (idx, (k, e)) in grid.modes().iter().zip(grid.perp()).enumerate() {
                let kx = f64::from(k[0]) * x0[0] + f64::from(k[1]) * x0[1];
                let jk = disk_factor(grid.wavenumber_sq(idx).sqrt() * radius);
                let s = 2.0 / BASIS_SCALE * jk;
                for comp in 0..2 {
                    matrix[(2 * j + comp, 2 * idx)] = s * e[comp] * kx.cos();
                    matrix[(2 * j + comp, 2 * idx + 1)] = -s * e[comp] * kx.sin();
                }
            }
            labels.push(format!("avg_u1({:.4},{:.4})", x0[0], x0[1]));
            labels.push(format!("avg_u2({:.4},{:.4})", x0[0], x0[1]));
        }
        let set = Self {
            kind: FunctionalKind::VolumeAverages,
            descriptor: Descriptor::Disks {
                centers: centers.to_vec(),
                radius,
            },
            labels,
            grid: grid.clone(),
            matrix,
        };
        set.check_rank()?;
        Ok(set)
    }

    /// Disks on a uniform `m × m` lattice of centres.
    pub fn volume_average_lattice(grid: &SpectralGrid, m: usize, radius: f64) -> Result<Self> {
        let h = 2.0 * PI / m as f64;
        let centers: Vec<[f64; 2]> = (0..m)
            .flat_map(|i| (0..m).map(move |j| [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]))
            .collect();
        Self::volume_averages(grid, &centers, radius)
    }

    /// Rows of `matrix` act on real coordinates `(Re c₀, Im c₀, …)`.
    pub fn explicit(grid: &SpectralGrid, matrix: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if matrix.ncols() != 2 * grid.len() {
            return Err(Error::GridMismatch(format!(
                "matrix has {} columns, grid has {} real coordinates",
                matrix.ncols(),
                2 * grid.len()
            )));
        }
        if labels.len() != matrix.nrows() {
            return Err(invalid("labels", "one label per row required"));
        }
        let set = Self {
            kind: FunctionalKind::ExplicitMatrix,
            descriptor: Descriptor::Matrix,
            labels,
            grid: grid.clone(),
            matrix,
        };
        set.check_rank()?;
        Ok(set)
    }

    pub fn empty(grid: &SpectralGrid) -> Self {
        Self {
            kind: FunctionalKind::Modes,
            descriptor: Descriptor::Modes(Vec::new()),
            labels: Vec::new(),
            grid: grid.clone(),
            matrix: DMatrix::zeros(0, 2 * grid.len()),
        }
    }

    pub fn kind(&self) -> FunctionalKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn check_rank(&self) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        if ratio_ok(&self.matrix) {
            return Ok(());
        }
        // greedy scan for rows that do not add rank
        let mut kept: Vec<usize> = Vec::new();
        let mut offending = Vec::new();
        for r in 0..self.len() {
            let mut rows = kept.clone();
            rows.push(r);
            if ratio_ok(&self.matrix.select_rows(rows.iter())) {
                kept.push(r);
            } else {
                offending.push(r);
            }
        }
        Err(Error::RankDeficient {
            threshold: RANK_TOLERANCE,
            rows: offending,
        })
    }

    /// The same family on another grid (for defect truncations).
    pub fn regrid(&self, target: &SpectralGrid) -> Result<Self> {
        if *target == self.grid {
            return Ok(self.clone());
        }
        match &self.descriptor {
            Descriptor::Modes(ks) => {
                if let Some(k) = ks.iter().find(|k| target.index_of(**k).is_none()) {
                    return Err(Error::GridMismatch(format!("mode {k:?} not on the target grid")));
                }
                let mut out = Self::build_modes(target, ks.clone())?;
                out.labels = self.labels.clone();
                Ok(out)
            }
            Descriptor::Disks { centers, radius } => Self::volume_averages(target, centers, *radius),
            Descriptor::Matrix => {
                let mut m = DMatrix::zeros(self.len(), 2 * target.len());
                for (idx, &k) in self.grid.modes().iter().enumerate() {
                    let col = self.matrix.columns(2 * idx, 2);
                    match target.index_of(k) {
                        Some(t) => m.columns_mut(2 * t, 2).copy_from(&col),
                        None if col.iter().all(|&x| x == 0.0) => {}
                        None => {
                            return Err(Error::GridMismatch(format!(
                                "explicit functionals use mode {k:?} missing from the target grid"
                            )))
                        }
                    }
                }
                Self::explicit(target, m, self.labels.clone())
            }
        }
    }

    /// `(l_1(u), …, l_k(u))`.
    pub fn evaluate(&self, u: &SpectralField) -> Result<Vec<f64>> {
        self.grid.check_same(u.grid())?;
        let x = DVector::from_vec(u.to_real_vec());
        Ok((&self.matrix * x).iter().copied().collect())
    }

    /// `max_j |l_j(u)|²`, zero for the empty family.
    pub fn eta(&self, u: &SpectralField) -> Result<f64> {
        Ok(self
            .evaluate(u)?
            .iter()
            .fold(0.0f64, |m, x| m.max(x * x)))
    }
}

fn ratio_ok(m: &DMatrix<f64>) -> bool {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    max > 0.0 && sv.min() > RANK_TOLERANCE * max
}

/// A pair of norms `‖w‖ = scale · ‖A^{s/2} w‖_H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpacePair {
    pub s_x: f64,
    pub scale_x: f64,
    pub s_y: f64,
    pub scale_y: f64,
}

impl SpacePair {
    pub fn new(s_x: f64, scale_x: f64, s_y: f64, scale_y: f64) -> Result<Self> {
        if !(s_x > s_y) {
            return Err(invalid("pair", format!("X must embed in Y (need s_x > s_y, got {s_x} <= {s_y})")));
        }
        Ok(Self { s_x, scale_x, s_y, scale_y })
    }

    /// `X = V` (`‖·‖_V = √2 ‖A^{1/2}·‖`), `Y = H`.
    pub fn vh() -> Self {
        Self { s_x: 1.0, scale_x: std::f64::consts::SQRT_2, s_y: 0.0, scale_y: 1.0 }
    }

    /// `X = H`, `Y = W` with `‖·‖_W = ‖A^{-s/2}·‖`.
    pub fn hw(s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(invalid("s", format!("must be > 0, got {s}")));
        }
        Ok(Self { s_x: 0.0, scale_x: 1.0, s_y: -s, scale_y: 1.0 })
    }

    pub fn is_vh(&self) -> bool {
        *self == Self::vh()
    }

    /// Squared-norm weight of a mode with Stokes eigenvalue `a` in `X`.
    pub fn weight_x(&self, a: f64) -> f64 {
        self.scale_x * self.scale_x * a.powf(self.s_x)
    }

    pub fn weight_y(&self, a: f64) -> f64 {
        self.scale_y * self.scale_y * a.powf(self.s_y)
    }

    pub fn norm_x(&self, u: &SpectralField) -> f64 {
        weighted_norm(u, |a| self.weight_x(a))
    }

    pub fn norm_y(&self, u: &SpectralField) -> f64 {
        weighted_norm(u, |a| self.weight_y(a))
    }
}

fn weighted_norm(u: &SpectralField, w: impl Fn(f64) -> f64) -> f64 {
    u.coeffs()
        .iter()
        .zip(u.grid().eigenvalues())
        .map(|(c, &a)| w(a) * c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Result of [`completeness_defect`].
#[derive(Debug, Clone, Serialize)]
pub struct DefectReport {
    pub kind: FunctionalKind,
    pub k: usize,
    pub eps: f64,
    /// Certified constant: `‖u‖_Y ≤ eps ‖u‖_X + c_l max_j |l_j(u)|` holds for
    /// every field on the truncation.
    pub c_l: f64,
    /// Largest ratio actually attained by a sampled field (`≤ c_l`).
    pub c_l_lower: f64,
    pub truncation: usize,
    pub pair: SpacePair,
    #[serde(skip)]
    pub maximizer: SpectralField,
    #[serde(skip)]
    pub c_l_witness: SpectralField,
}

impl DefectReport {
    pub const CSV_HEADER: &'static str = "kind,k,eps_L,c_L,truncation";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.16e},{:.16e},{}",
            self.kind.as_str(),
            self.k,
            self.eps,
            self.c_l,
            self.truncation
        )
    }

    /// `C_{δ,L}` in `‖w‖²_X ≥ (1+δ)^{-1} ε^{-2} ‖w‖²_Y - C_{δ,L} max_j |l_j(w)|²`,
    /// obtained from `(a + b)² ≤ (1+δ)a² + (1+1/δ)b²`.
    pub fn c_delta(&self, delta: f64) -> Result<f64> {
        c_delta(self.eps, self.c_l, delta)
    }
}

/// See [`DefectReport::c_delta`].
pub fn c_delta(eps: f64, c_l: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(invalid("delta", format!("must be > 0, got {delta}")));
    }
    if !(eps > 0.0) {
        return Err(invalid("eps", "the defect must be positive"));
    }
    Ok(c_l * c_l / (delta * eps * eps))
}

/// Whitened problem data on a truncation.
struct Whitened {
    grid: SpectralGrid,
    /// `1/√(X weight)` per real coordinate.
    inv_sqrt_x: Vec<f64>,
    /// `Y/X` weight ratio per real coordinate.
    ratio: Vec<f64>,
    /// `M = L D_X^{-1/2}`.
    m: DMatrix<f64>,
}

impl Whitened {
    fn new(l: &FunctionalSet, pair: &SpacePair, truncation: &SpectralGrid) -> Result<Self> {
        let lt = l.regrid(truncation)?;
        let mut inv_sqrt_x = Vec::with_capacity(2 * truncation.len());
        let mut ratio = Vec::with_capacity(2 * truncation.len());
        for &a in truncation.eigenvalues() {
            let (wx, wy) = (pair.weight_x(a), pair.weight_y(a));
            for _ in 0..2 {
                inv_sqrt_x.push(1.0 / wx.sqrt());
                ratio.push(wy / wx);
            }
        }
        let mut m = lt.matrix.clone();
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col *= inv_sqrt_x[j];
        }
        Ok(Self {
            grid: truncation.clone(),
            inv_sqrt_x,
            ratio,
            m,
        })
    }

    fn field(&self, y: &DVector<f64>) -> SpectralField {
        let x: Vec<f64> = y.iter().zip(&self.inv_sqrt_x).map(|(v, s)| v * s).collect();
        SpectralField::from_real_vec(&self.grid, &x).expect("coordinate count")
    }

    /// `|G^{1/2} y|` with `G` the ratio weights.
    fn norm_y(&self, y: &DVector<f64>) -> f64 {
        y.iter()
            .zip(&self.ratio)
            .map(|(v, r)| r * v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// `ε_L(X, Y)` over the truncation (defaults to twice the family's grid
/// when `None`), the maximizing field, and the certified `C_L`.
pub fn completeness_defect(
    l: &FunctionalSet,
    pair: &SpacePair,
    truncation: Option<&SpectralGrid>,
) -> Result<DefectReport> {
    let doubled = default_truncation(l)?;
    let trunc = truncation.unwrap_or(&doubled);
    if !l.grid.embeds_in(trunc) {
        return Err(invalid("truncation", "must contain the functionals' grid"));
    }
    let w = Whitened::new(l, pair, trunc)?;
    let n = w.ratio.len();
    let k = w.m.nrows();
    // projector onto the null space of M
    let mut p = DMatrix::<f64>::identity(n, n);
    if k > 0 {
        let svd = w.m.clone().svd(false, true);
        let vt = svd.v_t.expect("requested");
        p -= vt.transpose() * &vt;
    }
    let mut gp = p.clone();
    for (i, mut row) in gp.row_iter_mut().enumerate() {
        row *= w.ratio[i];
    }
    let mut a = &p * gp;
    a = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(a);
    let (imax, &lmax) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("nonempty truncation");
    let eps = lmax.max(0.0).sqrt();
    let y = eig.eigenvectors.column(imax).into_owned();
    let maximizer = w.field(&y);
    let cert = certify_constant(&w, eps, 0xC0FFEE)?;
    Ok(DefectReport {
        kind: l.kind,
        k,
        eps,
        c_l: cert.value,
        c_l_lower: cert.lower,
        truncation: trunc.n_max(),
        pair: *pair,
        maximizer,
        c_l_witness: cert.witness,
    })
}

/// Constant of `‖u‖_Y ≤ eps ‖u‖_X + C max_j |l_j(u)|`.
#[derive(Debug, Clone)]
pub struct DefectConstant {
    /// Certified upper value (the inequality holds with it on the truncation).
    pub value: f64,
    /// Best ratio found by sampling; the optimal constant lies in `[lower, value]`.
    pub lower: f64,
    pub witness: SpectralField,
}

/// `C_L` for a given `eps ≥ ε_L`. Any `u` splits into a null-space part
/// (controlled by `eps`) and `M⁺ l(u)`; the constant is the `ℓ∞ → Y` norm of
/// `M⁺`, computed exactly over the cube vertices for up to 20 functionals and
/// bounded above otherwise.
pub fn defect_constant(
    l: &FunctionalSet,
    eps: f64,
    pair: &SpacePair,
    truncation: Option<&SpectralGrid>,
) -> Result<DefectConstant> {
    let doubled = default_truncation(l)?;
    let w = Whitened::new(l, pair, truncation.unwrap_or(&doubled))?;
    certify_constant(&w, eps, 0xC0FFEE)
}

fn default_truncation(l: &FunctionalSet) -> Result<SpectralGrid> {
    SpectralGrid::new(2 * l.grid.n_max())
}

fn certify_constant(w: &Whitened, eps: f64, seed: u64) -> Result<DefectConstant> {
    let k = w.m.nrows();
    let n = w.ratio.len();
    if k == 0 {
        return Ok(DefectConstant {
            value: 0.0,
            lower: 0.0,
            witness: SpectralField::zeros(&w.grid),
        });
    }
    // B = G^{1/2} M⁺ with M⁺ = Mᵀ (M Mᵀ)^{-1}
    let mmt = &w.m * w.m.transpose();
    let inv = mmt
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient { threshold: RANK_TOLERANCE, rows: Vec::new() })?;
    let pinv = w.m.transpose() * inv;
    let mut b = pinv.clone();
    for (i, mut row) in b.row_iter_mut().enumerate() {
        row *= w.ratio[i].sqrt();
    }
    let gram = b.transpose() * &b;

    let (value, best_eta) = if k <= MAX_EXACT_VERTICES {
        let mut best = (f64::NEG_INFINITY, 0u64);
        let mut eta = vec![0.0; k];
        for mask in 0u64..(1u64 << k) {
            for (j, e) in eta.iter_mut().enumerate() {
                *e = if mask >> j & 1 == 1 { -1.0 } else { 1.0 };
            }
            let mut q = 0.0;
            for i in 0..k {
                let mut s = 0.0;
                for j in 0..k {
                    s += gram[(i, j)] * eta[j];
                }
                q += eta[i] * s;
            }
            if q > best.0 {
                best = (q, mask);
            }
        }
        let eta = DVector::from_fn(k, |j, _| if best.1 >> j & 1 == 1 { -1.0 } else { 1.0 });
        // guard against rounding in the quadratic form
        (best.0.max(0.0).sqrt() * (1.0 + 1e-12), eta)
    } else {
        let col_sum: f64 = b.column_iter().map(|c| c.norm()).sum();
        let smax = b.clone().svd(false, false).singular_values.max();
        let eta = DVector::from_element(k, 1.0);
        (col_sum.min((k as f64).sqrt() * smax), eta)
    };

    // sampled lower bound: the vertex field itself, then random fields
    let ratio = |y: &DVector<f64>| -> f64 {
        let eta = &w.m * y;
        let lmax = eta.amax();
        if lmax == 0.0 {
            return f64::NEG_INFINITY;
        }
        (w.norm_y(y) - eps * y.norm()) / lmax
    };
    let y0 = &pinv * &best_eta;
    let mut lower = ratio(&y0);
    let mut witness = y0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..256 {
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = ratio(&y);
        if r > lower {
            lower = r;
            witness = y;
        }
    }
    Ok(DefectConstant {
        value,
        lower: lower.max(0.0),
        witness: w.field(&witness),
    })
}

/// Smallest `|k|²` on the integer lattice strictly above `cutoff_sq`.
pub fn next_lattice_wavenumber_sq(cutoff_sq: f64) -> u32 {
    let mut m = cutoff_sq.floor().max(0.0) as u32 + 1;
    loop {
        let r = f64::from(m).sqrt() as u32 + 1;
        if (0..=r).any(|a| (0..=r).any(|b| a * a + b * b == m)) {
            return m;
        }
        m += 1;
    }
}

/// Closed-form defect of the mode family `|k|² ≤ cutoff_sq` from the first
/// excluded eigenvalue, for the canonical pairs `(V,H)` and `(H,W)`.
pub fn modes_defect_analytic(cutoff_sq: f64, pair: &SpacePair) -> Result<f64> {
    let next = f64::from(next_lattice_wavenumber_sq(cutoff_sq));
    let a = next / 2.0;
    if pair.is_vh() {
        Ok(1.0 / next.sqrt())
    } else if pair.s_x == 0.0 && pair.scale_x == 1.0 && pair.scale_y == 1.0 && pair.s_y < 0.0 {
        Ok(a.powf(pair.s_y / 2.0))
    } else {
        Err(Error::Unsupported(format!("no closed form for the pair {pair:?}")))
    }
}

/// Random field with independent standard normal real coordinates.
pub fn random_field<R: Rng + ?Sized>(grid: &SpectralGrid, rng: &mut R) -> SpectralField {
    SpectralField::from_fn(grid, |_| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}
