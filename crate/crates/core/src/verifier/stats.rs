//! Ensemble statistics over pair and single traces.

use serde::Serialize;

use super::{PairTrace, SingleTrace};
use crate::conditions::trapezoid;
use crate::ensemble::ordered_mean;
use crate::error::{invalid, Error, Result};

/// Monte Carlo form of `(1/m) E sup_x ∫₀^m l(φ, z) dt < c ε_L^{-2}`.
#[derive(Debug, Clone, Serialize)]
pub struct Condition4Report {
    pub paths: usize,
    pub initial_conditions: usize,
    pub m_window: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
    /// Mean of the ergodic increments `Q_j` over all paths.
    pub ledger_mean: f64,
    pub ledger_mean_negative: bool,
    pub delta: f64,
}

/// Per-unit-interval increments `Q_j = sup_x 2∫_j^{j+1} l − 2c(1+δ)^{-1}ε_L^{-2}`
/// of one noise path, the sup taken over the sampled initial data.
#[derive(Debug, Clone, Serialize)]
pub struct ErgodicLedger {
    pub delta: f64,
    pub increments: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub mean: f64,
}

impl ErgodicLedger {
    pub fn from_traces(traces: &[SingleTrace], c: f64, eps_l: f64, delta: f64) -> Result<Self> {
        let first = traces.first().ok_or_else(|| invalid("traces", "need at least one trajectory"))?;
        let dt = first.dt;
        let per = (1.0 / dt).round() as usize;
        let len = traces.iter().map(|t| t.l.len()).min().unwrap_or(0);
        let shift = 2.0 * c / ((1.0 + delta) * eps_l * eps_l);
        let units = len.saturating_sub(1).checked_div(per).unwrap_or(0);
        let increments: Vec<f64> = (0..units)
            .map(|j| {
                let a = j * per;
                traces
                    .iter()
                    .map(|t| 2.0 * trapezoid(&t.l[a..=a + per], dt))
                    .fold(f64::NEG_INFINITY, f64::max)
                    - shift
            })
            .collect();
        let mut acc = 0.0;
        let partial_sums = increments
            .iter()
            .map(|q| {
                acc += q;
                acc
            })
            .collect();
        Ok(Self { delta, mean: ordered_mean(&increments), increments, partial_sums })
    }

    /// Least-squares slope of the partial sums over `n ≥ from`.
    pub fn slope(&self, from: usize) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .partial_sums
            .iter()
            .enumerate()
            .skip(from)
            .map(|(i, &s)| ((i + 1) as f64, s))
            .collect();
        let n = pts.len() as f64;
        if pts.len() < 2 {
            return f64::NAN;
        }
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }
}

/// `traces[p][i]`: path `p`, sampled initial condition `i`.
pub fn empirical_condition4(
    traces: &[Vec<SingleTrace>],
    m_window: f64,
    c: f64,
    eps_l: f64,
    delta: f64,
) -> Result<Condition4Report> {
    if traces.len() < 16 {
        return Err(Error::EnsembleTooSmall { what: "condition (4) paths", required: 16, got: traces.len() });
    }
    let ics = traces.iter().map(Vec::len).min().unwrap_or(0);
    if ics < 4 {
        return Err(Error::EnsembleTooSmall { what: "condition (4) initial conditions per path", required: 4, got: ics });
    }
    let mut sups = Vec::with_capacity(traces.len());
    let mut ledgers = Vec::with_capacity(traces.len());
    for path in traces {
        let dt = path[0].dt;
        let n = (m_window / dt).round() as usize;
        let mut best = f64::NEG_INFINITY;
        for t in path {
            if t.l.len() < n + 1 {
                return Err(invalid("m_window", "trajectories shorter than the window"));
            }
            best = best.max(trapezoid(&t.l[..=n], dt));
        }
        sups.push(best / m_window);
        ledgers.push(ErgodicLedger::from_traces(path, c, eps_l, delta)?.mean);
    }
    let lhs = ordered_mean(&sups);
    let rhs = c / (eps_l * eps_l);
    let ledger_mean = ordered_mean(&ledgers);
    Ok(Condition4Report {
        paths: traces.len(),
        initial_conditions: ics,
        m_window,
        lhs,
        rhs,
        margin: rhs - lhs,
        holds: lhs < rhs,
        ledger_mean,
        ledger_mean_negative: ledger_mean < 0.0,
        delta,
    })
}

/// Exceedance threshold on `‖w(t)‖_H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Level {
    Absolute(f64),
    /// Fraction of `‖w(0)‖_H`.
    Relative(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct ExceedanceReport {
    pub level: Level,
    pub times: Vec<f64>,
    /// Fraction of pairs with `‖w(t)‖_H` above the level.
    pub fraction: Vec<f64>,
    /// `(t, mean over pairs of ∫_t^{t+1} η_L)`.
    pub mean_window_eta: Vec<(f64, f64)>,
}

impl ExceedanceReport {
    /// First time from which the fraction stays at or below `max_fraction`.
    pub fn synchronization_time(&self, max_fraction: f64) -> Option<f64> {
        let mut first = None;
        for (&t, &f) in self.times.iter().zip(&self.fraction) {
            if f <= max_fraction {
                first.get_or_insert(t);
            } else {
                first = None;
            }
        }
        first
    }

    /// Spearman correlation of the mean windowed `η_L` with time over the
    /// trailing `share` of the windows (negative = decaying).
    pub fn eta_trend(&self, share: f64) -> f64 {
        let k = self.mean_window_eta.len();
        let start = k - ((k as f64 * share).ceil() as usize).min(k);
        let tail = &self.mean_window_eta[start..];
        let t: Vec<f64> = tail.iter().map(|p| p.0).collect();
        let e: Vec<f64> = tail.iter().map(|p| p.1).collect();
        spearman(&t, &e)
    }
}

/// Exceedance fractions per time. A failed pair counts as exceeding after
/// its last valid step.
pub fn convergence_in_probability(traces: &[PairTrace], level: Level) -> Result<ExceedanceReport> {
    let first = traces.first().ok_or_else(|| invalid("pairs", "empty ensemble"))?;
    let n = traces.iter().map(PairTrace::len).max().unwrap_or(0);
    if traces.iter().any(|t| t.dt != first.dt) {
        return Err(Error::Misaligned("pairs use different time steps".into()));
    }
    let times: Vec<f64> = (0..n).map(|i| i as f64 * first.dt).collect();
    let fraction = (0..n)
        .map(|i| {
            let hits = traces
                .iter()
                .filter(|t| {
                    if i >= t.len() {
                        return true;
                    }
                    let thr = match level {
                        Level::Absolute(a) => a,
                        Level::Relative(r) => r * t.w_h(0),
                    };
                    t.w_h(i) > thr
                })
                .count();
            hits as f64 / traces.len() as f64
        })
        .collect();
    let windows: Vec<Vec<(f64, f64)>> = traces.iter().map(PairTrace::unit_windows).collect();
    let nw = windows.iter().map(Vec::len).min().unwrap_or(0);
    let mean_window_eta = (0..nw)
        .map(|j| {
            let vals: Vec<f64> = windows.iter().map(|w| w[j].1).collect();
            (windows[0][j].0, ordered_mean(&vals))
        })
        .collect();
    Ok(ExceedanceReport { level, times, fraction, mean_window_eta })
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `‖(I−P)Δφ(1)‖ ≤ ‖PΔφ(1)‖` (ties land here).
    Projection,
    Contraction,
}

#[derive(Debug, Clone, Serialize)]
pub struct SqueezeReport {
    pub cutoff_sq: f64,
    /// `branches[p][j]` for pair `p`, unit step `[j, j+1]`.
    pub branches: Vec<Vec<Branch>>,
    pub projection_count: usize,
    pub contraction_count: usize,
    /// `log(‖Δφ(1)‖/‖Δx‖)` on the contraction branch.
    pub r_samples: Vec<f64>,
    pub mean_r: Option<f64>,
    /// `sup_{t∈[0,1]} ‖Δφ(t)‖/‖Δx‖`.
    pub m_samples: Vec<f64>,
    /// `N(Δφ(1)) = 2‖PΔφ(1)‖`.
    pub n_values: Vec<f64>,
    pub a0: f64,
    pub eps_hw: f64,
    /// `2a₀ ε_L(H,W) < 1`.
    pub threshold_pass: bool,
    /// `E r + log(1/(1 − 2a₀ε_L(H,W)))`.
    pub combined: Option<f64>,
    pub combined_pass: bool,
}

impl SqueezeReport {
    pub fn projection_frequency(&self) -> f64 {
        let total = self.projection_count + self.contraction_count;
        if total == 0 {
            0.0
        } else {
            self.projection_count as f64 / total as f64
        }
    }
}

/// Classify every unit-time step of every pair. Needs snapshots at integer
/// times (`save_every` dividing `1/dt`).
pub fn squeeze_estimate(traces: &[PairTrace], cutoff_sq: f64, a0: f64, eps_hw: f64) -> Result<SqueezeReport> {
    let mut branches = Vec::with_capacity(traces.len());
    let mut r_samples = Vec::new();
    let mut m_samples = Vec::new();
    let mut n_values = Vec::new();
    for tr in traces {
        let per = (1.0 / tr.dt).round() as usize;
        let units = tr.len().saturating_sub(1) / per.max(1);
        let mut row = Vec::with_capacity(units);
        for j in 0..units {
            let (a, b) = (j * per, (j + 1) * per);
            let (Some(ia), Some(ib)) = (tr.snapshot_at_step(a), tr.snapshot_at_step(b)) else {
                return Err(Error::Misaligned(format!("no snapshots at steps {a} and {b}")));
            };
            let w0 = tr.w_snapshot(ia);
            let w1 = tr.w_snapshot(ib);
            let low = w1.low_pass(cutoff_sq);
            let high = &w1 - &low;
            n_values.push(2.0 * low.norm_h());
            let d0 = w0.norm_h();
            if d0 > 0.0 {
                let m = (a..=b).map(|i| tr.w_h(i)).fold(0.0, f64::max) / d0;
                m_samples.push(m);
            }
            if high.norm_h() <= low.norm_h() {
                row.push(Branch::Projection);
            } else {
                row.push(Branch::Contraction);
                r_samples.push((w1.norm_h() / d0).ln());
            }
        }
        branches.push(row);
    }
    let projection_count = branches.iter().flatten().filter(|b| **b == Branch::Projection).count();
    let contraction_count = branches.iter().flatten().count() - projection_count;
    let mean_r = (!r_samples.is_empty()).then(|| ordered_mean(&r_samples));
    let threshold_pass = 2.0 * a0 * eps_hw < 1.0;
    let combined = match (mean_r, threshold_pass) {
        (Some(r), true) => Some(r + (1.0 / (1.0 - 2.0 * a0 * eps_hw)).ln()),
        _ => None,
    };
    Ok(SqueezeReport {
        cutoff_sq,
        branches,
        projection_count,
        contraction_count,
        r_samples,
        mean_r,
        m_samples,
        n_values,
        a0,
        eps_hw,
        threshold_pass,
        combined_pass: combined.is_some_and(|c| c < 0.0),
        combined,
    })
}

/// Both forms of the iterated squeezing bound, `d₀ ..= d_m`.
#[derive(Debug, Clone, Serialize)]
pub struct RecursionBound {
    pub recursive: Vec<f64>,
    pub closed_form: Vec<f64>,
    pub max_relative_gap: f64,
}

/// `d_m = N(m) + e^{∫_{m-1}^m r} d_{m-1}` against
/// `d_m = d₀ e^{∫₀^m r} + Σ_{j<m} N(m−j) e^{∫_{m−j}^m r}`;
/// `n_seq[i]` is `N(i+1)` and `r_integrals[i]` is `∫_i^{i+1} r`.
pub fn theorem23_recursion(d0: f64, n_seq: &[f64], r_integrals: &[f64]) -> Result<RecursionBound> {
    if n_seq.len() != r_integrals.len() {
        return Err(Error::Misaligned(format!(
            "{} values of N against {} exponents",
            n_seq.len(),
            r_integrals.len()
        )));
    }
    let m = n_seq.len();
    let mut recursive = Vec::with_capacity(m + 1);
    recursive.push(d0);
    for i in 0..m {
        let prev = recursive[i];
        recursive.push(n_seq[i] + r_integrals[i].exp() * prev);
    }
    // S[i] = ∫₀^i r
    let mut s = vec![0.0; m + 1];
    for i in 0..m {
        s[i + 1] = s[i] + r_integrals[i];
    }
    let closed_form: Vec<f64> = (0..=m)
        .map(|k| {
            let mut acc = d0 * s[k].exp();
            for i in 1..=k {
                acc += n_seq[i - 1] * (s[k] - s[i]).exp();
            }
            acc
        })
        .collect();
    let max_relative_gap = recursive
        .iter()
        .zip(&closed_form)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(RecursionBound { recursive, closed_form, max_relative_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recursion_fixtures() {
        let r = theorem23_recursion(2.0, &[0.0; 5], &[-0.5; 5]).unwrap();
        for (m, d) in r.recursive.iter().enumerate() {
            assert_relative_eq!(*d, 2.0 * (-0.5 * m as f64).exp(), max_relative = 1e-14);
        }
        let r = theorem23_recursion(0.0, &vec![0.3; 400], &vec![-0.2; 400]).unwrap();
        assert_relative_eq!(*r.recursive.last().unwrap(), 0.3 / (1.0 - (-0.2f64).exp()), max_relative = 1e-10);
        assert!(r.max_relative_gap < 1e-12);
    }

    #[test]
    fn spearman_basics() {
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 10.0, 100.0, 1000.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
    }

    #[test]
    fn ledger_sums() {
        let t = SingleTrace {
            dt: 0.5,
            v_sq: vec![0.0; 5],
            l: vec![1.0; 5],
            termination: crate::rds::Termination::Completed,
        };
        let led = ErgodicLedger::from_traces(&[t], 0.5, 1.0, 0.0).unwrap();
        // 2∫l = 2, shift = 1
        assert_eq!(led.increments, vec![1.0, 1.0]);
        assert_eq!(led.partial_sums, vec![1.0, 2.0]);
        assert_relative_eq!(led.slope(0), 1.0);
    }

    #[test]
    fn small_ensembles_are_refused() {
        assert!(matches!(
            empirical_condition4(&[], 1.0, 0.5, 0.5, 0.1),
            Err(Error::EnsembleTooSmall { .. })
        ));
    }
}
