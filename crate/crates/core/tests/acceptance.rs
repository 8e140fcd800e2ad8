//! End-to-end acceptance run: one line per criterion, non-zero exit if any
//! criterion fails.

use std::time::Instant;

use detfun::conditions::{
    check_admissibility, eps_threshold_algebraic, estimate_sigma_mc, g_k, h_k, h_k_denominator, main_condition,
    sigma_bound, ModelConstants,
};
use detfun::functionals::{completeness_defect, modes_defect_analytic, random_field, FunctionalSet, SpacePair};
use detfun::noise::{ou_stationary_sample, CovarianceSpec, NoisePath, OuParams, PathSpec};
use detfun::rds::{default_burn_in, integrate_transformed, radius_path, NseParams, StepOptions};
use detfun::spectral::{leray_project, nonlinear_term, RawField, SpectralField, SpectralGrid};
use detfun::verifier::{
    check_gronwall, conjugacy_transfer, convergence_in_probability, integrator_gap, run_pair, sphere_samples,
    theorem23_recursion, GronwallParams, Level, PairExperiment, PairOptions, PairTrace,
};
use detfun::Error;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// ---------------------------------------------------------------- 1

fn ou_moments() -> Outcome {
    let g = SpectralGrid::new(8).map_err(|e| e.to_string())?;
    let q = CovarianceSpec::power_law(&g, 1.0, 2.0).map_err(|e| e.to_string())?;
    let nu = 1.0;
    let mut worst = 0.0f64;
    for (ki, &kappa) in [0.0, 4.0, 63.0].iter().enumerate() {
        let ou = OuParams::new(kappa, nu).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + ki as u64);
        let n = 100_000;
        let mut acc = [0.0f64; 3];
        for _ in 0..n {
            let z = ou_stationary_sample(&ou, &q, &mut rng);
            for (i, alpha) in [0.0, 0.5, 1.0].iter().enumerate() {
                acc[i] += z.hs(2.0 * alpha).powi(2);
            }
        }
        for (i, alpha) in [0.0f64, 0.5, 1.0].iter().enumerate() {
            // Σ q_k a_k^{2α-1} / (4(κ+1)ν), a_k = |k|²/2
            let exact: f64 = g
                .modes()
                .iter()
                .map(|k| {
                    let k2 = f64::from(k[0] * k[0] + k[1] * k[1]);
                    k2.powi(-2) * (k2 / 2.0).powf(2.0 * alpha - 1.0)
                })
                .sum::<f64>()
                / (4.0 * (kappa + 1.0) * nu);
            worst = worst.max(rel(acc[i] / n as f64, exact));
        }
    }
    check(worst < 0.02, format!("max relative error {:.3}% over kappa x alpha", 100.0 * worst))
}

// ---------------------------------------------------------------- 2

/// `P[(u·∇)v]` by direct convolution of the plain Fourier coefficients.
fn convolution_oracle(u: &SpectralField, v: &SpectralField) -> SpectralField {
    let g = u.grid();
    let n = g.n_max() as i32;
    let (ru, rv) = (RawField::from_field(u), RawField::from_field(v));
    let mut out = RawField::zeros(g);
    for k1 in -n..=n {
        for k2 in -n..=n {
            let mut acc = [Complex64::new(0.0, 0.0); 2];
            for p1 in -n..=n {
                for p2 in -n..=n {
                    let (q1, q2) = (k1 - p1, k2 - p2);
                    let (Some(up), Some(vq)) = (ru.get([p1, p2]), rv.get([q1, q2])) else { continue };
                    let dot = up[0] * Complex64::new(0.0, f64::from(q1)) + up[1] * Complex64::new(0.0, f64::from(q2));
                    acc[0] += dot * vq[0];
                    acc[1] += dot * vq[1];
                }
            }
            out.set([k1, k2], acc).unwrap();
        }
    }
    leray_project(&out)
}

fn spectral_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut conv_err = 0.0f64;
    for n in 2..=5 {
        let g = SpectralGrid::new(n).map_err(|e| e.to_string())?;
        let u = random_field(&g, &mut rng);
        let v = random_field(&g, &mut rng);
        let b = nonlinear_term(&u, &v).map_err(|e| e.to_string())?;
        let o = convolution_oracle(&u, &v);
        conv_err = conv_err.max((&b - &o).norm_h() / o.norm_h().max(1.0));
    }
    let g = SpectralGrid::new(5).map_err(|e| e.to_string())?;
    let mut skew = 0.0f64;
    for _ in 0..100 {
        let u = random_field(&g, &mut rng);
        let b = nonlinear_term(&u, &u).map_err(|e| e.to_string())?;
        skew = skew.max(b.inner(&u).abs());
    }
    // Taylor–Green: u = (sin x cos y, -cos x sin y), spanned by k = (±1, 1)
    let n = g.transform_size();
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let mut u1 = Vec::with_capacity(n * n);
    let mut u2 = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (i as f64 * h, j as f64 * h);
            u1.push(x.sin() * y.cos());
            u2.push(-x.cos() * y.sin());
        }
    }
    let tg = RawField::from_physical(&g, &u1, &u2).map_err(|e| e.to_string())?.leray_project();
    let tg_b = nonlinear_term(&tg, &tg).map_err(|e| e.to_string())?.norm_h();
    check(
        conv_err <= 1e-10 && skew <= 1e-10 && tg_b <= 1e-10 && tg.norm_h() > 0.1,
        format!("convolution {conv_err:.2e}, skew {skew:.2e}, Taylor-Green {tg_b:.2e}"),
    )
}

// ---------------------------------------------------------------- 3

fn deterministic_limits() -> Outcome {
    let g = SpectralGrid::new(4).map_err(|e| e.to_string())?;
    let nu = 0.7;
    let p = NseParams::unforced(&g, nu, 0.0).map_err(|e| e.to_string())?;
    let path = NoisePath::zero(&g, 1e-3, 1000).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for k in [[1, 0], [1, 2], [-3, 1]] {
        let u0 = SpectralField::single_mode(&g, k, Complex64::new(0.6, -0.2)).map_err(|e| e.to_string())?;
        let tr = integrate_transformed(&u0, &path, &p, StepOptions::new(1.0, 1e-3)).map_err(|e| e.to_string())?;
        let k2 = f64::from(k[0] * k[0] + k[1] * k[1]);
        let expected = u0.norm_h() * (-nu * k2).exp();
        worst = worst.max(rel(tr.last().norm_h(), expected));
    }
    let f = SpectralField::single_mode(&g, [1, 1], Complex64::new(0.7, 0.0)).map_err(|e| e.to_string())?;
    let pf = NseParams::new(nu, 0.0, f.clone()).map_err(|e| e.to_string())?;
    let dt = 1e-3;
    let burn = (default_burn_in(nu, 1.0) / dt).round() as usize;
    let zp = NoisePath::generate(
        &CovarianceSpec::zero(&g),
        &pf.ou(),
        PathSpec { seed: 0, dt, n_steps: 10, burn_steps: burn },
    )
    .map_err(|e| e.to_string())?;
    let eps = 0.1;
    let r = radius_path(&zp, &pf, eps).map_err(|e| e.to_string())?;
    let fixed = (1.0 + eps) * 4.0 * f.norm_v_dual_sq() / (nu * nu);
    let r_err = rel(r.r2[0], fixed);
    check(worst <= 1e-6 && r_err <= 1e-6, format!("heat decay {worst:.2e}, radius {r_err:.2e}"))
}

// ---------------------------------------------------------------- 4

fn completeness() -> Outcome {
    let g = SpectralGrid::new(4).map_err(|e| e.to_string())?;
    let l = FunctionalSet::modes_cutoff(&g, 1.0).map_err(|e| e.to_string())?;
    let pair = SpacePair::vh();
    let rep = completeness_defect(&l, &pair, None).map_err(|e| e.to_string())?;
    let analytic = modes_defect_analytic(1.0, &pair).map_err(|e| e.to_string())?;
    let gap = (rep.eps - analytic).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    for i in 0..1000 {
        let mut u = random_field(&g, &mut rng);
        // half the samples concentrated on the low modes
        if i % 2 == 0 {
            u = u.low_pass(f64::from(rng.random_range(1..=8)));
        }
        let eta = l.eta(&u).map_err(|e| e.to_string())?;
        if u.norm_h() > rep.eps * u.norm_v_sq().sqrt() + rep.c_l * eta.sqrt() {
            violations += 1;
        }
    }
    check(
        gap <= 1e-10 && violations == 0,
        format!("eps_L = {:.12} vs 1/sqrt(2) (gap {gap:.1e}), C_L = {:.4}, {violations} violations / 1000", rep.eps, rep.c_l),
    )
}

// ---------------------------------------------------------------- 5

fn condition_fixtures() -> Outcome {
    let mut errs = Vec::new();
    let mut close = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-12 * want.abs().max(1.0) {
            errs.push(format!("{name}: {got} vs {want}"));
        }
    };
    let c = ModelConstants { tr_q: 1.0, ..ModelConstants::new(1.0, 63.0, 1.0) };
    let a = check_admissibility(&c);
    close("eq19", a.eq19.lhs, 0.0625);
    close("eq22a", a.eq22a.lhs, 0.25);
    close("eq22b", a.eq22b.lhs, 0.0625);
    let pass_all = a.eq19.pass && a.eq22a.pass && a.eq22b.pass;
    close("g_k", g_k(&ModelConstants { sigma_a1: 0.0, kappa: 2.0, ..c }), 2.0);
    let hk = h_k(&ModelConstants { c_e: 1.0, tr_qa2: 1.0, ..c }).map_err(|e| e.to_string())?;
    close("h_k", hk, 0.268_642_482_955_885_5);
    // sanity variant with a₀ = a₁ = 0: lhs = 16‖f‖² + 2/64
    let sanity = ModelConstants { sigma_a0: 0.0, sigma_a1: 0.0, f_vdual_sq: 0.5, eps_l: 0.2, ..c };
    let r = main_condition(&sanity).map_err(|e| e.to_string())?;
    close("lhs31", r.lhs31, 16.0 * 0.5 + 2.0 / 64.0);
    close("rhs31", r.rhs31, 25.0);
    let lim = main_condition(&ModelConstants { f_vdual_sq: 1.0, eps_l: 0.2, ..ModelConstants::new(1.0, 0.0, 1.0) })
        .map_err(|e| e.to_string())?;
    close("lhs31 noise-free", lim.lhs31, 16.0);
    close("eps threshold", lim.eps_threshold_33, 0.25);
    close("eps threshold formula", eps_threshold_algebraic(2.0, 9.0), 4.0 / 12.0);
    close("sigma bound noise-free", sigma_bound(&ModelConstants { f_vdual_sq: 2.0, ..ModelConstants::new(2.0, 1.0, 1.0) }).unwrap(), 2.0);
    // h_k domain error exactly when 22a fails
    let mut domain_ok = true;
    for tr_q in [0.0, 0.5, 1.0, 1.999, 2.0, 2.001, 5.0] {
        let c = ModelConstants { tr_q, ..ModelConstants::new(1.0, 31.0, 1.0) };
        let fails22a = !check_admissibility(&c).eq22a.pass;
        let domain = matches!(h_k(&c), Err(Error::HkDomain { .. }));
        domain_ok &= fails22a == domain && (h_k_denominator(&c) > 0.0) == !fails22a;
    }
    check(
        errs.is_empty() && pass_all && r.eq31_pass && lim.eq31_pass && domain_ok,
        if errs.is_empty() { "all fixtures to 1e-12, h_k domain matches (22a)".into() } else { errs.join("; ") },
    )
}

// ---------------------------------------------------------------- 6, 7

struct Gate {
    exp: PairExperiment,
    gronwall: GronwallParams,
    lhs31: f64,
    rhs31: f64,
}

fn gate_model() -> Result<(NseParams, CovarianceSpec), Error> {
    let g = SpectralGrid::new(4)?;
    // ‖f‖²_{V'} = |f|²/|k|² = 0.25 on k = (1,1)
    let f = SpectralField::single_mode(&g, [1, 1], Complex64::new(0.5f64.sqrt(), 0.0))?;
    let p = NseParams::new(1.0, 3.0, f)?;
    let q = CovarianceSpec::power_law(&g, 0.01, 4.0)?;
    Ok((p, q))
}

fn gate(dt: f64, t_end: f64) -> Result<Gate, Error> {
    let (p, q) = gate_model()?;
    let l = FunctionalSet::modes_cutoff(p.grid(), 8.0)?;
    let defect = completeness_defect(&l, &SpacePair::vh(), None)?;
    let constants = ModelConstants::for_model(&p, &q, defect.eps);
    let report = main_condition(&constants)?;
    if !(report.eq19_pass && report.eq22_pass && report.eq31_pass) {
        return Err(Error::Inadmissible(format!("gate scenario fails: {}", report.to_table())));
    }
    let mut opts = PairOptions::new(t_end, dt, defect.eps);
    opts.delta = 0.1;
    let gronwall = GronwallParams::from_defect(&defect, p.nu, opts.delta)?;
    Ok(Gate {
        exp: PairExperiment { burn_in: default_burn_in(p.nu, p.lambda1), radius_eps: 0.1, params: p, covariance: q, functionals: l, opts },
        gronwall,
        lhs31: report.lhs31,
        rhs31: report.rhs31,
    })
}

fn gronwall_audit(g: &Gate, traces: &[PairTrace]) -> Outcome {
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    let mut incomplete = 0;
    for tr in traces {
        incomplete += usize::from(!tr.is_complete());
        let chk = check_gronwall(tr, g.gronwall);
        violations += chk.violations.len();
        min_slack = min_slack.min(chk.min_relative_slack);
    }
    check(
        violations == 0 && incomplete == 0 && traces.len() >= 50,
        format!(
            "{} pairs, (31) lhs {:.3} < rhs {:.3}, {violations} violations, min relative slack {min_slack:.3e}",
            traces.len(),
            g.lhs31,
            g.rhs31
        ),
    )
}

fn determining(traces: &[PairTrace]) -> Outcome {
    let rep = convergence_in_probability(traces, Level::Relative(1e-3)).map_err(|e| e.to_string())?;
    let sync = rep.synchronization_time(0.05);
    let trend = rep.eta_trend(0.5);
    let final_fraction = *rep.fraction.last().unwrap_or(&1.0);
    check(
        sync.is_some() && trend < 0.0,
        format!(
            "synchronization time {}, final exceedance {final_fraction:.3}, windowed eta Spearman {trend:.3}",
            sync.map_or("none".into(), |t| format!("{t:.3}"))
        ),
    )
}

// ---------------------------------------------------------------- 8

fn conjugacy() -> Outcome {
    let (p, q) = gate_model().map_err(|e| e.to_string())?;
    let g = p.grid().clone();
    let l = FunctionalSet::modes_cutoff(&g, 8.0).map_err(|e| e.to_string())?;
    let path = NoisePath::generate(&q, &p.ou(), PathSpec { seed: 8, dt: 1e-3, n_steps: 2000, burn_steps: 0 })
        .map_err(|e| e.to_string())?;
    let x = sphere_samples(&g, 1.0, 2, 8);
    let mut o = PairOptions::new(2.0, 1e-3, 1.0 / 3.0);
    o.save_every = 50;
    let tr = run_pair(&x[0], &x[1], &path, &l, &p, o).map_err(|e| e.to_string())?;
    let rep = conjugacy_transfer(&tr, &path, &l).map_err(|e| e.to_string())?;

    let (mut coarse, mut fine) = (0.0, 0.0);
    for seed in 0..8u64 {
        let path = NoisePath::generate(&q, &p.ou(), PathSpec { seed, dt: 2.5e-3, n_steps: 400, burn_steps: 0 })
            .map_err(|e| e.to_string())?;
        let v0 = sphere_samples(&g, 1.0, 1, seed).remove(0);
        coarse += integrator_gap(&v0, &path, &p, 1.0, 0.02).map_err(|e| e.to_string())?;
        fine += integrator_gap(&v0, &path, &p, 1.0, 0.01).map_err(|e| e.to_string())?;
    }
    let ratio = coarse / fine;
    check(
        rep.exact_identity && rep.snapshots_checked > 0 && ratio >= 1.3 && rep.negative_control_gap > 0.0,
        format!(
            "{} snapshots bit-exact: {}, gap ratio dt/(dt/2) = {ratio:.3}, nonlinear control gap {:.2e}",
            rep.snapshots_checked, rep.exact_identity, rep.negative_control_gap
        ),
    )
}

// ---------------------------------------------------------------- 9

fn sigma_consistency() -> Outcome {
    let (p, q) = gate_model().map_err(|e| e.to_string())?;
    let constants = ModelConstants::for_model(&p, &q, 1.0 / 3.0);
    let margin = check_admissibility(&constants).eq22a.factor();
    let bound = sigma_bound(&constants).map_err(|e| e.to_string())?;
    let (window_start, dt) = (5.0, 5e-3);
    let exp = PairExperiment {
        burn_in: default_burn_in(p.nu, p.lambda1),
        radius_eps: 0.1,
        functionals: FunctionalSet::empty(p.grid()),
        opts: PairOptions::new(window_start + constants.m_window, dt, 1.0),
        params: p,
        covariance: q,
    };
    let mut below = 0;
    let mut worst: f64 = 0.0;
    for rep in 0..20u64 {
        let seeds: Vec<u64> = (0..8).map(|i| 10_000 + rep * 8 + i).collect();
        let ens = exp.single_ensemble(&seeds, 4).map_err(|e| e.to_string())?;
        let samples: Vec<Vec<Vec<f64>>> = ens.iter().map(|p| p.iter().map(|t| t.v_sq.clone()).collect()).collect();
        let est = estimate_sigma_mc(&samples, dt, window_start, &constants).map_err(|e| e.to_string())?;
        worst = worst.max(est.sigma_hat);
        below += usize::from(est.sigma_hat <= bound);
    }
    check(
        margin >= 4.0 && below >= 19,
        format!("(22a) margin x{margin:.1}, {below}/20 experiments below bound {bound:.4} (largest estimate {worst:.4})"),
    )
}

// ---------------------------------------------------------------- 10

fn recursion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let m = rng.random_range(1..60);
        let n: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
        let r: Vec<f64> = (0..m).map(|_| rng.random_range(-1.5..0.5)).collect();
        let d0 = rng.random_range(0.0..5.0);
        worst = worst.max(theorem23_recursion(d0, &n, &r).map_err(|e| e.to_string())?.max_relative_gap);
    }
    let (n0, r0) = (0.7, -0.3f64);
    let lim = theorem23_recursion(0.0, &vec![n0; 2000], &vec![r0; 2000]).map_err(|e| e.to_string())?;
    let err = rel(*lim.recursive.last().unwrap(), n0 / (1.0 - r0.exp()));
    check(worst <= 1e-12 && err <= 1e-10, format!("max recursion gap {worst:.2e}, geometric limit error {err:.2e}"))
}

fn main() {
    // `cargo test` passes harness flags such as `--quiet`; listing requests
    // must not run the suite.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failed = 0;
    let mut report = |n: u32, name: &str, start: Instant, r: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d} [{secs:.1}s]");
            }
        }
    };
    let t = Instant::now();
    report(1, "OU stationary moments", t, ou_moments());
    let t = Instant::now();
    report(2, "spectral kernel oracles", t, spectral_oracles());
    let t = Instant::now();
    report(3, "deterministic limits", t, deterministic_limits());
    let t = Instant::now();
    report(4, "completeness defect", t, completeness());
    let t = Instant::now();
    report(5, "condition evaluator fixtures", t, condition_fixtures());

    let t = Instant::now();
    match gate(1e-3, 10.0) {
        Ok(g) => {
            let seeds: Vec<u64> = (0..64).collect();
            let traces: Result<Vec<_>, _> = g.exp.run_ensemble(&seeds).into_iter().collect();
            match traces {
                Ok(traces) => {
                    report(6, "Gronwall audit", t, gronwall_audit(&g, &traces[..50]));
                    let t = Instant::now();
                    report(7, "determining behaviour", t, determining(&traces));
                }
                Err(e) => {
                    report(6, "Gronwall audit", t, Err(e.to_string()));
                    report(7, "determining behaviour", t, Err("ensemble failed".into()));
                }
            }
        }
        Err(e) => {
            report(6, "Gronwall audit", t, Err(e.to_string()));
            report(7, "determining behaviour", t, Err(e.to_string()));
        }
    }
    let t = Instant::now();
    report(8, "conjugacy", t, conjugacy());
    let t = Instant::now();
    report(9, "sigma bound consistency", t, sigma_consistency());
    let t = Instant::now();
    report(10, "squeezing recursion", t, recursion());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
