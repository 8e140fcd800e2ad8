use std::fmt::Write as _;

use detfun::conditions::{main_condition, ConditionReport};
use detfun::functionals::{completeness_defect, DefectReport, SpacePair};
use detfun::noise::{NoisePath, PathSpec};
use detfun::rds::{conjugate, integrate_transformed, radius_path, StepOptions, Termination};
use detfun::spectral::write_snapshot;
use detfun::verifier::{
    check_gronwall, convergence_in_probability, sphere_samples, squeeze_estimate, GronwallParams, Level,
    PairExperiment, PairOptions,
};
use log::info;
use serde_json::json;

use crate::output::{melt, Outputs};
use crate::{CliError, Context};

fn csv_text(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let s = &ctx.scenario;
    let p = s.params()?;
    let q = s.covariance()?;
    let dt = s.run.dt;
    let opts = StepOptions { t_end: s.run.t_end, dt, save_every: s.save_every() };
    let n_steps = opts.n_steps()?;
    let burn_steps = (s.burn_in() / dt).round() as usize;
    let path = NoisePath::generate(&q, &p.ou(), PathSpec { seed: s.noise.seed, dt, n_steps, burn_steps })?;
    let radius = if burn_steps > 0 { Some(radius_path(&path, &p, s.run.radius_eps)?) } else { None };
    let x0 = match s.initial_modes()? {
        Some(f) => f,
        None => {
            let r = s
                .initial
                .as_ref()
                .and_then(|b| b.radius)
                .or_else(|| radius.as_ref().map(|rp| rp.r2[0].max(0.0).sqrt()))
                .unwrap_or(1.0);
            sphere_samples(p.grid(), r, 1, s.noise.seed).remove(0)
        }
    };
    info!("integrating {n_steps} steps on n_max = {}", s.model.n_max);
    let mut traj = integrate_transformed(&x0, &path, &p, opts)?;
    if let Some(rp) = &radius {
        traj.radius_sq = Some(traj.times.iter().map(|t| rp.r2[(t / dt).round() as usize]).collect());
    }
    let sns = conjugate(&traj, &path)?;

    let mut out = Outputs::new(&ctx.out, "simulate", &ctx.scenario_bytes);
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    out.write("trajectory.csv", &buf)?;
    buf.clear();
    sns.write_csv(&mut buf)?;
    out.write("trajectory_sns.csv", &buf)?;
    buf.clear();
    write_snapshot(&mut buf, traj.last(), *traj.times.last().unwrap_or(&0.0))?;
    out.write("final_snapshot.csv", &buf)?;
    buf.clear();
    path.write_ndjson(&mut buf, false)?;
    out.write("noise.ndjson", &buf)?;
    let hash = out.finish()?;
    println!(
        "t = {:.6}: |u|_H = {:.6e} (initial {:.6e}); manifest {hash}",
        traj.times.last().unwrap_or(&0.0),
        traj.last().norm_h(),
        x0.norm_h()
    );
    if let Some(t) = traj.cfl_violation {
        log::warn!("step-size heuristic dt*max|v|*n_max <= 1 exceeded at t = {t}");
    }
    traj.into_result()?;
    Ok(())
}

pub fn defect(ctx: &Context) -> Result<(), CliError> {
    let s = &ctx.scenario;
    let pair = s.pair()?;
    let block = s.functionals.as_ref().ok_or_else(|| CliError::Config("missing [functionals] block".into()))?;
    let families = match (&block.cutoffs, block.kind.as_str()) {
        (Some(cs), "modes") => cs.iter().map(|&c| s.family_with_cutoff(Some(c))).collect::<Result<Vec<_>, _>>()?,
        _ => vec![s.functional_set()?],
    };
    let reports: Vec<DefectReport> =
        families.iter().map(|l| completeness_defect(l, &pair, None)).collect::<Result<_, _>>()?;
    let text = csv_text(DefectReport::CSV_HEADER, reports.iter().map(DefectReport::csv_row));
    let mut out = Outputs::new(&ctx.out, "defect", &ctx.scenario_bytes);
    out.write("defect.csv", text.as_bytes())?;
    out.finish()?;
    print!("{text}");
    Ok(())
}

fn condition_outputs(ctx: &Context, out: &mut Outputs) -> Result<ConditionReport, CliError> {
    let c = ctx.scenario.model_constants()?;
    let rep = main_condition(&c)?;
    let text = csv_text(ConditionReport::CSV_HEADER, [rep.csv_row()]);
    out.write("conditions.csv", text.as_bytes())?;
    Ok(rep)
}

pub fn conditions(ctx: &Context) -> Result<(), CliError> {
    let mut out = Outputs::new(&ctx.out, "conditions", &ctx.scenario_bytes);
    let rep = condition_outputs(ctx, &mut out)?;
    out.finish()?;
    print!("{}", rep.to_table());
    println!("{}", ConditionReport::CSV_HEADER);
    println!("{}", rep.csv_row());
    if rep.eq31_pass {
        Ok(())
    } else {
        Err(CliError::Gate(format!("main condition fails: lhs31 = {:.6e} >= rhs31 = {:.6e}", rep.lhs31, rep.rhs31)))
    }
}

pub fn verify(ctx: &Context) -> Result<(), CliError> {
    let s = &ctx.scenario;
    let mut out = Outputs::new(&ctx.out, "verify", &ctx.scenario_bytes);
    let rep = condition_outputs(ctx, &mut out)?;
    let gate = rep.eq19_pass && rep.eq22_pass && rep.eq31_pass;
    if !gate && !ctx.override_gate {
        out.finish()?;
        print!("{}", rep.to_table());
        return Err(CliError::Gate(
            "the scenario is outside the sufficient conditions; rerun with --override-gate to verify anyway".into(),
        ));
    }
    if !gate {
        log::warn!("running outside guarantee (gate overridden)");
    }
    let p = s.params()?;
    let l = s.functional_set()?;
    let defect = completeness_defect(&l, &SpacePair::vh(), None)?;
    let opts = PairOptions {
        t_end: s.run.t_end,
        dt: s.run.dt,
        save_every: s.save_every(),
        eps_l: defect.eps,
        delta: s.run.delta,
    };
    let gp = GronwallParams::from_defect(&defect, p.nu, s.run.delta)?;
    let exp = PairExperiment {
        burn_in: s.burn_in(),
        radius_eps: s.run.radius_eps,
        covariance: s.covariance()?,
        functionals: l.clone(),
        opts,
        params: p,
    };
    let seeds: Vec<u64> = (0..s.run.pairs as u64).map(|i| s.noise.seed.wrapping_add(i)).collect();
    info!("running {} same-noise pairs", seeds.len());
    let traces = exp.run_ensemble(&seeds).into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut ndjson = String::new();
    let mut total_violations = 0usize;
    let mut cumulative = vec![0usize; traces.iter().map(|t| t.len()).max().unwrap_or(0)];
    for tr in &traces {
        let chk = check_gronwall(tr, gp);
        total_violations += chk.violations.len();
        for &t in &chk.violations {
            cumulative[(t / tr.dt).round() as usize] += 1;
        }
        let rec = json!({
            "seed": tr.seed,
            "radius": tr.radius,
            "w_h_initial": tr.w_h(0),
            "w_h_final": tr.w_h(tr.len() - 1),
            "gronwall_violations": chk.violations.len(),
            "min_relative_slack": chk.min_relative_slack,
            "eta_window": tr.unit_windows().iter().map(|w| w.1).collect::<Vec<_>>(),
            "cfl_violation": tr.cfl_violation,
            "termination": tr.termination,
        });
        writeln!(ndjson, "{rec}").expect("string write");
    }
    for i in 1..cumulative.len() {
        cumulative[i] += cumulative[i - 1];
    }
    out.write("pairs.ndjson", ndjson.as_bytes())?;

    let exceed = convergence_in_probability(&traces, Level::Relative(s.run.delta_level))?;
    let per_unit = (1.0 / s.run.dt).round().max(1.0) as usize;
    let stride = (per_unit / 100).max(1);
    let mut summary = String::from("t,exceedance_fraction,eta_window,gronwall_violations\n");
    for (i, (&t, &f)) in exceed.times.iter().zip(&exceed.fraction).enumerate() {
        if i % stride != 0 && i + 1 != exceed.times.len() {
            continue;
        }
        let eta = if i % per_unit == 0 {
            exceed.mean_window_eta.get(i / per_unit).map_or(String::new(), |w| format!("{:.16e}", w.1))
        } else {
            String::new()
        };
        writeln!(summary, "{t:.16e},{f:.16e},{eta},{}", cumulative[i]).expect("string write");
    }
    out.write("summary.csv", summary.as_bytes())?;

    let cutoff = s.functionals.as_ref().and_then(|b| b.cutoff_sq).unwrap_or(0.0);
    let eps_hw = completeness_defect(&l, &SpacePair::hw(1.0)?, None)?.eps;
    let squeeze = squeeze_estimate(&traces, cutoff, s.constants.a0, eps_hw)?;
    let final_fraction = exceed.fraction.last().copied().unwrap_or(1.0);
    let failed = traces.iter().filter(|t| !t.is_complete()).count();
    let verdict = json!({
        "outside_guarantee": !gate,
        "status": if gate { "within guarantee" } else { "outside guarantee" },
        "pairs": traces.len(),
        "failed_pairs": failed,
        "eps_L": defect.eps,
        "c_L": defect.c_l,
        "delta": s.run.delta,
        "C_delta_L": gp.c_delta,
        "eq31_pass": rep.eq31_pass,
        "lhs31": rep.lhs31,
        "rhs31": rep.rhs31,
        "gronwall_violations": total_violations,
        "final_exceedance_fraction": final_fraction,
        "synchronization_time": exceed.synchronization_time(s.run.max_exceedance),
        "eta_window_trend": exceed.eta_trend(0.5),
        "squeeze": {
            "cutoff_sq": squeeze.cutoff_sq,
            "projection_frequency": squeeze.projection_frequency(),
            "mean_r": squeeze.mean_r,
            "eps_hw": squeeze.eps_hw,
            "threshold_pass": squeeze.threshold_pass,
            "combined": squeeze.combined,
        },
    });
    let mut text = serde_json::to_string_pretty(&verdict).expect("json");
    text.push('\n');
    out.write("verify.json", text.as_bytes())?;
    out.finish()?;
    print!("{text}");

    if failed > 0 {
        let first = traces.iter().find_map(|t| match &t.termination {
            Termination::Failed { reason, time, .. } => Some(format!("seed {}: {reason} at t = {time}", t.seed)),
            Termination::Completed => None,
        });
        return Err(CliError::Numerical(first.unwrap_or_default()));
    }
    if total_violations > 0 || final_fraction > s.run.max_exceedance {
        return Err(CliError::Verification(format!(
            "{total_violations} Gronwall violations, final exceedance fraction {final_fraction:.3}"
        )));
    }
    Ok(())
}

pub fn sweep(ctx: &Context) -> Result<(), CliError> {
    let s = &ctx.scenario;
    let sw = s.sweep.as_ref().ok_or_else(|| CliError::Config("missing [sweep] block".into()))?;
    let mut rows = Vec::with_capacity(sw.values.len());
    for &v in &sw.values {
        let sv = s.with_parameter(&sw.parameter, v)?;
        let rep = main_condition(&sv.model_constants()?)?;
        rows.push(format!("{},{v:.16e},{}", sw.parameter, rep.csv_row()));
    }
    let text = csv_text(&format!("parameter,value,{}", ConditionReport::CSV_HEADER), rows);
    let mut out = Outputs::new(&ctx.out, "sweep", &ctx.scenario_bytes);
    out.write("sweep.csv", text.as_bytes())?;
    out.finish()?;
    print!("{text}");
    Ok(())
}

pub fn report(ctx: &Context) -> Result<(), CliError> {
    let mut names: Vec<String> = std::fs::read_dir(&ctx.out)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv") && n != "report.csv")
        .collect();
    names.sort();
    let mut text = String::from("source,row,variable,value\n");
    for n in &names {
        if n == "final_snapshot.csv" {
            continue;
        }
        let body = std::fs::read_to_string(ctx.out.join(n))?;
        melt(n, &body, &mut text);
    }
    let mut out = Outputs::new(&ctx.out, "report", &ctx.scenario_bytes);
    out.write("report.csv", text.as_bytes())?;
    out.finish()?;
    println!("{} tables collected into {}", names.len(), ctx.out.join("report.csv").display());
    Ok(())
}
