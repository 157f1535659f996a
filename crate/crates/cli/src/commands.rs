//! Subcommand implementations.

use std::path::Path;
use std::process::ExitCode;

use hybrid_sis::chain::{check_stochastic, ControlledChain, TransitionLaw};
use hybrid_sis::simulate::{run_sis, run_siv, Feedback, GridPolicy1D, GridPolicy2D, PathOutcome, PathStats, SimConfig};
use hybrid_sis::verify::{audit_consistency_1d, audit_consistency_2d, hjb_residual, refinement_study, Clause, ConsistencyReport, ModelKind};
use hybrid_sis::{parse_config_str, value_iterate, Error, ProblemSpec, Result, SisChain, SivChain, Solution, SolverConfig};

use crate::fields;
use crate::output::{config_hash, Csv, Provenance};
use crate::{Command, Common, Model, ModelArgs, RefineArgs, SimulateArgs};

/// Exit status of a run that produced its artifacts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
    CheckFailed,
}

pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;
pub const EXIT_CHECK_FAILED: u8 = 5;
pub const EXIT_NUMERIC: u8 = 6;
pub const EXIT_IO: u8 = 7;

impl Status {
    pub fn exit_code(self) -> ExitCode {
        match self {
            Status::Ok => ExitCode::SUCCESS,
            Status::NotConverged => ExitCode::from(EXIT_NOT_CONVERGED),
            Status::CheckFailed => ExitCode::from(EXIT_CHECK_FAILED),
        }
    }

    fn worst(self, other: Status) -> Status {
        match (self, other) {
            (Status::Ok, s) | (s, Status::Ok) => s,
            (s, _) => s,
        }
    }
}

pub fn error_exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Parse { .. } => EXIT_CONFIG,
        Error::Domain(_) | Error::Numeric(_) => EXIT_NUMERIC,
        Error::Io(_) => EXIT_IO,
    }
}

struct Loaded {
    spec: ProblemSpec,
    prov: Provenance,
}

fn setup(c: &Common) -> Result<Loaded> {
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(Error::config("threads", "must be at least 1"));
        }
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if !(c.h > 0.0 && c.h < 1.0) {
        return Err(Error::config("h", "mesh size must lie in (0, 1)"));
    }
    let bytes = std::fs::read(&c.config)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Parse {
        line: 0,
        column: 0,
        message: format!("configuration is not UTF-8: {e}"),
    })?;
    let spec = parse_config_str(&text)?;
    Ok(Loaded {
        spec,
        prov: Provenance {
            config_hash: config_hash(&bytes),
            h: c.h,
            tol: c.tol,
            seed: c.seed,
        },
    })
}

fn solver_config(c: &Common) -> Result<SolverConfig> {
    let cfg = SolverConfig {
        tol: c.tol,
        max_iters: c.max_iters,
        sweep: c.sweep,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn verdict(pass: bool, name: &str, detail: impl std::fmt::Display) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

pub fn run(cmd: &Command) -> Result<Status> {
    match cmd {
        Command::Solve1d(c) => solve1d(c),
        Command::Solve2d(c) => solve2d(c),
        Command::Simulate(a) => simulate(a),
        Command::Consistency(a) => consistency(a),
        Command::Refine(a) => refine(a),
        Command::HjbResidual(c) => hjb(c),
    }
}

fn solve_status(name: &str, sol: &Solution) -> Status {
    verdict(
        sol.converged,
        name,
        format_args!("iterations={} final_increment={:e}", sol.iterations, sol.final_increment),
    );
    if sol.converged {
        Status::Ok
    } else {
        Status::NotConverged
    }
}

fn write_convergence(out: &Path, prov: &Provenance, sol: &Solution) -> Result<()> {
    let mut csv = Csv::create(out, "convergence.csv", prov, "iteration,increment")?;
    for (n, inc) in sol.increments.iter().enumerate() {
        csv.row(fields![n + 1, inc])?;
    }
    csv.finish()?;
    Ok(())
}

fn solve_sis(c: &Common) -> Result<(Loaded, SisChain, Solution)> {
    let l = setup(c)?;
    let chain = SisChain::new(l.spec.clone(), c.h)?;
    let sol = value_iterate(&chain, &solver_config(c)?)?;
    Ok((l, chain, sol))
}

fn solve_siv(c: &Common) -> Result<(Loaded, SivChain, Solution)> {
    let l = setup(c)?;
    let chain = SivChain::new(l.spec.clone(), c.h)?;
    let sol = value_iterate(&chain, &solver_config(c)?)?;
    Ok((l, chain, sol))
}

fn solve1d(c: &Common) -> Result<Status> {
    let (l, chain, sol) = solve_sis(c)?;
    let g = chain.grid();
    let mut csv = Csv::create(&c.out, "value_policy.csv", &l.prov, "i,regime,value,c")?;
    for ell in 0..g.m0 {
        for k in 0..=g.k_max {
            let s = g.state(k, ell);
            csv.row(fields![g.node(k), ell + 1, sol.value[s], chain.control(sol.policy[s]).c])?;
        }
    }
    csv.finish()?;
    write_convergence(&c.out, &l.prov, &sol)?;
    Ok(solve_status("solve1d converged", &sol))
}

fn solve2d(c: &Common) -> Result<Status> {
    let (l, chain, sol) = solve_siv(c)?;
    let g = chain.grid();
    let mut csv = Csv::create(&c.out, "value_policy.csv", &l.prov, "i,v,regime,value,c,p,q")?;
    for s in 0..chain.n_states() {
        let (k1, k2, ell) = chain.split(s);
        let u = chain.control(sol.policy[s]);
        csv.row(fields![g.value(k1), g.value(k2), ell + 1, sol.value[s], u.c, u.p, u.q])?;
    }
    csv.finish()?;
    write_convergence(&c.out, &l.prov, &sol)?;
    Ok(solve_status("solve2d converged", &sol))
}

fn sim_config(a: &SimulateArgs, spec: &ProblemSpec) -> Result<SimConfig> {
    let cfg = SimConfig {
        dt_sim: a.dt_sim,
        t_max: a.t_max.unwrap_or_else(|| SimConfig::horizon_for_tail(spec, 0.01).max(a.dt_sim)),
        n_paths: a.n_paths,
        seed: a.common.seed,
        record: a.trajectories > 0,
    };
    cfg.validate()?;
    if cfg.n_paths < 2 {
        return Err(Error::config("n_paths", "need at least 2 paths for an interval"));
    }
    Ok(cfg)
}

fn simulate(a: &SimulateArgs) -> Result<Status> {
    if a.regime == 0 {
        return Err(Error::config("regime", "regimes are numbered from 1"));
    }
    let ell0 = a.regime - 1;
    let (prov, solve, stats, paths, value) = match a.model {
        Model::Sis => {
            let (l, chain, sol) = solve_sis(&a.common)?;
            let cfg = sim_config(a, &l.spec)?;
            let policy = GridPolicy1D { chain: &chain, solution: &sol };
            let (stats, paths) = run_sis(&l.spec, &policy as &dyn Feedback, &cfg, a.i0, ell0)?;
            let g = chain.grid();
            let value = sol.value[g.state(g.nearest(a.i0), ell0)];
            (l.prov, solve_status("solve1d converged", &sol), stats, paths, value)
        }
        Model::Siv => {
            let (l, chain, sol) = solve_siv(&a.common)?;
            let cfg = sim_config(a, &l.spec)?;
            let policy = GridPolicy2D { chain: &chain, solution: &sol };
            let (stats, paths) = run_siv(&l.spec, &policy as &dyn Feedback, &cfg, a.i0, a.v0, ell0)?;
            let g = chain.grid();
            let (k1, k2) = g.nearest(a.i0, a.v0);
            let value = sol.value[g.state(k1, k2, ell0)];
            (l.prov, solve_status("solve2d converged", &sol), stats, paths, value)
        }
    };
    write_stats(&a.common.out, &prov, &stats, value)?;
    if a.trajectories > 0 {
        write_trajectories(&a.common.out, &prov, &paths[..a.trajectories.min(paths.len())])?;
    }
    let gap = (stats.mean_cost - value).abs();
    let allowance = stats.ci_halfwidth + stats.tail_bound;
    println!(
        "INFO simulate: mean_cost={} ci95={} tail_bound={} value={} gap={} eradicated={}",
        stats.mean_cost, stats.ci_halfwidth, stats.tail_bound, value, gap, stats.eradication_fraction
    );
    let positive = stats.violations == 0;
    verdict(positive, "simulate positivity", format_args!("violations={}", stats.violations));
    let status = if positive { Status::Ok } else { Status::CheckFailed };
    if gap > allowance {
        println!("INFO simulate: gap exceeds CI + tail bound by {}", gap - allowance);
    }
    Ok(solve.worst(status))
}

fn write_stats(out: &Path, prov: &Provenance, s: &PathStats, value: f64) -> Result<()> {
    let mut csv = Csv::create(
        out,
        "stats.csv",
        prov,
        "n_paths,mean_cost,std_dev,ci95_halfwidth,tail_bound,eradication_fraction,mean_tau,violations,value_at_start",
    )?;
    let tau = s.mean_tau.map_or_else(|| "NaN".to_string(), |t| t.to_string());
    csv.row(fields![
        s.n_paths,
        s.mean_cost,
        s.std_dev,
        s.ci_halfwidth,
        s.tail_bound,
        s.eradication_fraction,
        tau,
        s.violations,
        value
    ])?;
    csv.finish()?;
    Ok(())
}

fn write_trajectories(out: &Path, prov: &Provenance, paths: &[PathOutcome]) -> Result<()> {
    let mut csv = Csv::create(out, "trajectories.csv", prov, "path,t,i,v,regime,c,p,q")?;
    for (n, p) in paths.iter().enumerate() {
        for pt in &p.trajectory {
            csv.row(fields![n, pt.t, pt.i, pt.v, pt.regime + 1, pt.control.c, pt.control.p, pt.control.q])?;
        }
    }
    csv.finish()?;
    Ok(())
}

fn consistency(a: &ModelArgs) -> Result<Status> {
    let c = &a.common;
    let l = setup(c)?;
    let (law, report, locate): (TransitionLaw, ConsistencyReport, Box<dyn Fn(usize) -> String>) = match a.model {
        Model::Sis => {
            let chain = SisChain::new(l.spec.clone(), c.h)?;
            let law = TransitionLaw::build(&chain);
            let report = audit_consistency_1d(&chain, &law);
            let g = *chain.grid();
            (law, report, Box::new(move |s| {
                let (k, ell) = g.split(s);
                format!("{},,{}", g.node(k), ell + 1)
            }))
        }
        Model::Siv => {
            let chain = SivChain::new(l.spec.clone(), c.h)?;
            let law = TransitionLaw::build(&chain);
            let report = audit_consistency_2d(&chain, &law);
            let g = *chain.grid();
            (law, report, Box::new(move |s| {
                let n = g.n_nodes();
                let (k1, k2) = g.coords(s % n);
                format!("{},{},{}", g.value(k1), g.value(k2), s / n + 1)
            }))
        }
    };
    let stoch = check_stochastic(&law);
    let mut csv = Csv::create(
        &c.out,
        "consistency.csv",
        &l.prov,
        "i,v,regime,control,mean_error,variance_gap_over_dt,max_jump,boundary",
    )?;
    for r in &report.rows {
        csv.row(fields![locate(r.state), r.control, r.mean_error, r.variance_gap, r.max_jump, r.boundary as u8])?;
    }
    csv.finish()?;

    verdict(
        stoch.passed(),
        "consistency stochastic",
        format_args!("rows={} worst_sum_error={:e}", stoch.rows_checked, stoch.worst_sum_error),
    );
    for clause in [Clause::Mean, Clause::Variance, Clause::Switch, Clause::Stay, Clause::Jump] {
        let n = report.failures.iter().filter(|f| f.clause == clause).count();
        let detail = match clause {
            Clause::Mean => format!("worst_relative_error={:e} boundary_rows={}", report.worst_mean_error, report.boundary_rows),
            Clause::Variance => format!("C={}", report.variance_constant),
            Clause::Jump => format!("max_jump={}", report.max_jump),
            _ => String::new(),
        };
        verdict(n == 0, &format!("consistency {}", clause.name()), format_args!("failures={n} {detail}"));
    }
    for f in report.failures.iter().take(5) {
        eprintln!("  {} at state {} control {}: {}", f.clause.name(), locate(f.state), f.control, f.detail);
    }
    Ok(if stoch.passed() && report.passed() { Status::Ok } else { Status::CheckFailed })
}

fn refine(a: &RefineArgs) -> Result<Status> {
    let c = &a.common;
    let l = setup(c)?;
    let meshes = if a.meshes.is_empty() { vec![4.0 * c.h, 2.0 * c.h, c.h] } else { a.meshes.clone() };
    let kind = match a.model {
        Model::Sis => ModelKind::Sis,
        Model::Siv => ModelKind::Siv,
    };
    let report = refinement_study(&l.spec, kind, &solver_config(c)?, &meshes)?;
    let mut csv = Csv::create(&c.out, "refine.csv", &l.prov, "h,iterations,diff_to_next,ratio_to_next")?;
    for (j, (&h, iters)) in report.meshes.iter().zip(&report.iterations).enumerate() {
        let diff = report.diffs.get(j).map_or(String::new(), |d| d.to_string());
        let ratio = report.ratios.get(j).map_or(String::new(), |r| r.to_string());
        csv.row(fields![h, iters, diff, ratio])?;
    }
    csv.finish()?;
    if let Some(h) = report.aborted_at {
        verdict(false, "refine converged", format_args!("value iteration hit the cap at h={h}"));
        return Ok(Status::NotConverged);
    }
    let pass = report.passed();
    verdict(pass, "refine decreasing", format_args!("diffs={:?} ratios={:?}", report.diffs, report.ratios));
    Ok(if pass { Status::Ok } else { Status::CheckFailed })
}

fn hjb(c: &Common) -> Result<Status> {
    let (l, chain, sol) = solve_sis(c)?;
    let status = solve_status("solve1d converged", &sol);
    let report = hjb_residual(&chain, &sol)?;
    let mut csv = Csv::create(&c.out, "hjb.csv", &l.prov, "i,regime,residual")?;
    for n in &report.nodes {
        csv.row(fields![n.i, n.regime + 1, n.residual])?;
    }
    csv.finish()?;
    let finite = report.sup_abs.is_finite();
    verdict(
        finite,
        "hjb-residual",
        format_args!("nodes={} sup={} mean={}", report.nodes.len(), report.sup_abs, report.mean_abs),
    );
    Ok(status.worst(if finite { Status::Ok } else { Status::CheckFailed }))
}
