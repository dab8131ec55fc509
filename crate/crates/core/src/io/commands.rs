//! The subcommands behind the `gmcf` binary. Each returns a process exit
//! code: 0 success, 2 configuration or input error, 3 numerical failure,
//! 4 failed monitor flag or unsuccessful run status.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::flow::{rhs, run_with, FlowConfig, FlowRun, RunOptions, RunStatus, TimeStep};
use crate::io::config::{OutputFormat, RunConfig};
use crate::io::output::{
    parse_series_csv, residual_csv, series_csv, to_json, write_file, DecaySummary,
    InequalitiesSummary, ResidualRow, RunSummary, Tolerances, INEQUALITIES_FILE,
    INEQUALITIES_SCHEMA, RESIDUAL_FILE, SERIES_FILE, SUMMARY_FILE, SUMMARY_SCHEMA,
};
use crate::monitors::{
    check_area_decreasing_preserved, check_decay, check_monotone_min_omega, default_monotone_tol,
    residual_evolution_equation, MonitorFlag, MonitorSeries,
};
use crate::oracle::OracleSuite;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_MONITOR: i32 = 4;

/// Environment variable overriding the output directory of every subcommand.
pub const OUTPUT_DIR_ENV: &str = "GMCF_OUTPUT_DIR";

/// Residuals below this are treated as exact zeros and skip the ratio test.
pub const RESIDUAL_FLOOR: f64 = 1e-10;
/// Accepted range of successive residual ratios under a halving of `h`.
pub const RATIO_RANGE: (f64, f64) = (3.2, 4.8);

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical { .. } => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn report_error(err: &Error) -> i32 {
    eprintln!("error: {err}");
    exit_code(err)
}

/// Output directory: explicit flag, then the environment, then the fallback.
pub fn resolve_output_dir(flag: Option<&Path>, fallback: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(fallback),
    }
}

/// Inputs of the flag computation that a reader of the outputs can recover.
#[derive(Clone, Debug)]
pub struct FlagInputs {
    pub status: RunStatus,
    pub tolerances: Tolerances,
    /// Domain curvature `k₁`, target curvature `k₂` and domain dimension.
    pub k1: f64,
    pub k2: f64,
    pub n: usize,
}

/// Monitor flags of a series in their fixed order, and the decay outcome.
pub fn compute_flags(
    series: &MonitorSeries,
    inputs: &FlagInputs,
    branch: crate::monitors::BranchChoice,
) -> (Vec<MonitorFlag>, DecaySummary) {
    let graph = MonitorFlag {
        name: "graph_condition".into(),
        applicable: true,
        passed: inputs.status != RunStatus::GraphConditionLost,
        first_failure_time: (inputs.status == RunStatus::GraphConditionLost)
            .then(|| series.times.last().copied())
            .flatten(),
        tolerance: 0.0,
    };
    let monotone = check_monotone_min_omega(series, inputs.tolerances.monotone);
    let area = check_area_decreasing_preserved(series, inputs.tolerances.area);
    let covered = monotone.applicable;
    let (decay_flag, decay) =
        match check_decay(series, inputs.k1, inputs.k2, inputs.n, branch, inputs.tolerances.decay) {
            Ok(d) => (
                MonitorFlag {
                    name: "decay".into(),
                    applicable: covered,
                    passed: d.satisfied,
                    first_failure_time: d.first_failure_time,
                    tolerance: d.tolerance,
                },
                DecaySummary {
                    applicable: covered,
                    reason: (!covered).then(|| "initial det ratio is not below 4".to_string()),
                    branch: Some(d.branch),
                    c0: Some(d.c0),
                    epsilon: Some(d.epsilon),
                },
            ),
            Err(e) => (
                MonitorFlag {
                    name: "decay".into(),
                    applicable: false,
                    passed: true,
                    first_failure_time: None,
                    tolerance: inputs.tolerances.decay,
                },
                DecaySummary {
                    applicable: false,
                    reason: Some(e.to_string()),
                    branch: None,
                    c0: None,
                    epsilon: None,
                },
            ),
        };
    (vec![graph, monotone, area, decay_flag], decay)
}

fn success(status: RunStatus, flags: &[MonitorFlag]) -> bool {
    matches!(status, RunStatus::ReachedTEnd | RunStatus::Converged)
        && flags.iter().all(|f| !f.is_failure())
}

/// Result of an in-process run: the raw run, its series and summary.
pub struct RunOutcome {
    pub run: FlowRun,
    pub series: MonitorSeries,
    pub summary: RunSummary,
}

/// Runs the configured flow with monitors attached.
pub fn execute_run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let initial = cfg.initial_state()?;
    let opts = RunOptions { keep_neighbors: cfg.monitors.residual };
    let run = run_with(&initial, &cfg.flow, opts)?;
    let mut series = MonitorSeries::from_run(&run)?;

    let disc = &initial.disc;
    let auto_monotone = default_monotone_tol(run.max_dt, disc.min_spacing());
    let monotone = cfg.monitors.monotone_tol.resolve(auto_monotone);
    let tolerances = Tolerances {
        monotone,
        area: cfg.monitors.area_tol.resolve(0.0),
        decay: cfg.monitors.decay_tol.resolve(monotone),
    };
    let inputs = FlagInputs {
        status: run.status,
        tolerances,
        k1: disc.domain().curvature(),
        k2: disc.target().curvature(),
        n: disc.n(),
    };
    let (flags, decay) = compute_flags(&series, &inputs, cfg.monitors.decay_branch);
    series.flags = flags.clone();

    let summary = RunSummary {
        schema: SUMMARY_SCHEMA.into(),
        status: run.status,
        success: success(run.status, &flags),
        final_time: run.final_state().time,
        steps: run.steps,
        snapshots: run.snapshots.len(),
        max_dt: run.max_dt,
        final_sup_lambda: *series.sup_lambda.last().expect("nonempty series"),
        min_min_omega: series.min_omega.iter().copied().fold(f64::INFINITY, f64::min),
        flags,
        decay,
        tolerances,
        config: cfg.clone(),
    };
    Ok(RunOutcome { run, series, summary })
}

pub fn cmd_run(config: &Path, output_dir: Option<&Path>) -> i32 {
    let cfg = match RunConfig::load(config) {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    let dir = resolve_output_dir(output_dir, &cfg.output.directory);
    let outcome = match execute_run(&cfg) {
        Ok(o) => o,
        Err(e) => return report_error(&e),
    };
    let written = (|| -> Result<()> {
        if cfg.output.formats.contains(&OutputFormat::Csv) {
            write_file(&dir, SERIES_FILE, &series_csv(&outcome.series))?;
        }
        if cfg.output.formats.contains(&OutputFormat::Json) {
            write_file(&dir, SUMMARY_FILE, &to_json(&outcome.summary))?;
        }
        Ok(())
    })();
    if let Err(e) = written {
        return report_error(&e);
    }
    let s = &outcome.summary;
    println!(
        "status {} at t = {} after {} steps; sup λ₁ = {:.3e}, min *Ω = {:.6}",
        s.status, s.final_time, s.steps, s.final_sup_lambda, s.min_min_omega
    );
    for f in &s.flags {
        println!("  {:<26} {}", f.name, flag_word(f));
    }
    println!("outputs in {}", dir.display());
    if s.success {
        EXIT_OK
    } else {
        EXIT_MONITOR
    }
}

fn flag_word(f: &MonitorFlag) -> String {
    match (f.applicable, f.passed, f.first_failure_time) {
        (false, _, _) => "not applicable".into(),
        (true, true, _) => "pass".into(),
        (true, false, Some(t)) => format!("FAIL (first at t = {t})"),
        (true, false, None) => "FAIL".into(),
    }
}

pub fn load_suite(spec: Option<&Path>, samples: Option<usize>) -> Result<OracleSuite> {
    let mut suite = match spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<OracleSuite>(&text)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        }
        None => OracleSuite::default_suite(),
    };
    if let Some(n) = samples {
        for j in &mut suite.jobs {
            j.domain.sample_count = n;
        }
    }
    suite.validate()?;
    Ok(suite)
}

pub fn cmd_verify_inequalities(spec: Option<&Path>, samples: Option<usize>, output_dir: Option<&Path>) -> i32 {
    let reports = match load_suite(spec, samples).and_then(|s| s.run()) {
        Ok(r) => r,
        Err(e) => return report_error(&e),
    };
    let passed = reports.iter().all(|r| !r.asserting || r.passed());
    let summary = InequalitiesSummary { schema: INEQUALITIES_SCHEMA.into(), passed, reports };
    let dir = resolve_output_dir(output_dir, "gmcf-out");
    if let Err(e) = write_file(&dir, INEQUALITIES_FILE, &to_json(&summary)) {
        return report_error(&e);
    }
    for r in &summary.reports {
        println!(
            "{:<18} branch {:?}  checked {:>8}  violations {:>6}  worst margin {:.3e}{}",
            r.check,
            r.branch,
            r.checked,
            r.violation_count,
            r.worst_margin,
            if r.asserting { "" } else { "  (probe)" }
        );
    }
    println!("written {}", dir.join(INEQUALITIES_FILE).display());
    if passed {
        EXIT_OK
    } else {
        EXIT_MONITOR
    }
}

/// Refinement ladder: level `l` doubles the resolution per axis `l` times and
/// divides the step by `4^l`; the residual is measured at the snapshot time.
pub fn residual_ladder(cfg: &RunConfig) -> Result<Vec<ResidualRow>> {
    cfg.validate()?;
    let rc = cfg
        .residual
        .as_ref()
        .ok_or_else(|| Error::config("the residual subcommand needs a [residual] section"))?;
    let base = cfg.resolution()?;
    let dt_base = match (rc.dt_base, cfg.flow.dt) {
        (Some(dt), _) => dt,
        (None, TimeStep::Fixed(dt)) => dt,
        (None, TimeStep::Auto) => {
            let s0 = cfg.initial_state()?;
            let (_, stats) = rhs(&s0)?;
            stats.auto_dt(&s0.disc, cfg.flow.cfl_safety)
        }
    };
    // the base step shrinks to divide the snapshot time exactly
    let base_steps = (rc.snapshot_time / dt_base).ceil().max(1.0) as usize;
    let mut rows: Vec<ResidualRow> = Vec::new();
    for level in 0..rc.levels {
        let resolution: Vec<usize> = base.iter().map(|n| n << level).collect();
        let stride = base_steps << (2 * level);
        let dt = rc.snapshot_time / stride as f64;
        let mut flow: FlowConfig = cfg.flow.clone();
        flow.dt = TimeStep::Fixed(dt);
        flow.t_end = (stride + 2) as f64 * dt;
        flow.output_stride = stride;
        flow.stop_rules.sup_lambda_below = None;
        flow.stop_rules.max_steps = stride + 2;
        let initial = cfg.initial_state_at(&resolution)?;
        let run = run_with(&initial, &flow, RunOptions { keep_neighbors: true })?;
        let index = run
            .snapshots
            .iter()
            .position(|s| s.step == stride)
            .ok_or_else(|| Error::Inapplicable("the run stopped before the snapshot time".into()))?;
        let residual_linf = residual_evolution_equation(&run, index)?;
        let ratio = rows.last().map(|prev| prev.residual_linf / residual_linf);
        eprintln!("level {level}: resolution {resolution:?}, dt {dt:.3e}, residual {residual_linf:.3e}");
        rows.push(ResidualRow {
            level,
            resolution,
            dt,
            snapshot_time: run.snapshots[index].state.time,
            residual_linf,
            ratio,
        });
    }
    Ok(rows)
}

/// Whether a ladder shows second-order convergence (or vanishes identically).
pub fn ladder_passes(rows: &[ResidualRow]) -> bool {
    if rows.iter().all(|r| r.residual_linf < RESIDUAL_FLOOR) {
        return true;
    }
    rows.len() >= 2
        && rows
            .iter()
            .filter_map(|r| r.ratio)
            .all(|q| (RATIO_RANGE.0..=RATIO_RANGE.1).contains(&q))
}

pub fn cmd_residual(config: &Path, output_dir: Option<&Path>) -> i32 {
    let cfg = match RunConfig::load(config) {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    let rows = match residual_ladder(&cfg) {
        Ok(r) => r,
        Err(e) => return report_error(&e),
    };
    let dir = resolve_output_dir(output_dir, &cfg.output.directory);
    if let Err(e) = write_file(&dir, RESIDUAL_FILE, &residual_csv(&rows)) {
        return report_error(&e);
    }
    for r in &rows {
        match r.ratio {
            Some(q) => println!("{:?}  residual {:.6e}  ratio {:.4}", r.resolution, r.residual_linf, q),
            None => println!("{:?}  residual {:.6e}", r.resolution, r.residual_linf),
        }
    }
    println!("written {}", dir.join(RESIDUAL_FILE).display());
    if ladder_passes(&rows) {
        EXIT_OK
    } else {
        EXIT_MONITOR
    }
}

/// Reads `summary.json` and `series.csv` from `dir` and recomputes the flags
/// from the series. Returns the summary and the recomputed flags.
pub fn recompute_from_outputs(dir: &Path) -> Result<(RunSummary, Vec<MonitorFlag>)> {
    let read = |name: &str| {
        fs::read_to_string(dir.join(name))
            .map_err(|e| Error::config(format!("cannot read {}: {e}", dir.join(name).display())))
    };
    let summary: RunSummary = serde_json::from_str(&read(SUMMARY_FILE)?)
        .map_err(|e| Error::config(format!("{SUMMARY_FILE}: {e}")))?;
    if summary.schema != SUMMARY_SCHEMA {
        return Err(Error::config(format!("unknown summary schema `{}`", summary.schema)));
    }
    let series = parse_series_csv(&read(SERIES_FILE)?)?;
    let (dom, tar) = summary.config.models()?;
    let inputs = FlagInputs {
        status: summary.status,
        tolerances: summary.tolerances,
        k1: dom.curvature(),
        k2: tar.curvature(),
        n: dom.dim(),
    };
    let (flags, _) = compute_flags(&series, &inputs, summary.config.monitors.decay_branch);
    Ok((summary, flags))
}

pub fn cmd_report(dir: &Path) -> i32 {
    let (summary, flags) = match recompute_from_outputs(dir) {
        Ok(x) => x,
        Err(e) => return report_error(&e),
    };
    println!("run in {}", dir.display());
    println!("  status           {}", summary.status);
    println!("  final time       {}", summary.final_time);
    println!("  steps            {}", summary.steps);
    println!("  final sup λ₁     {:.6e}", summary.final_sup_lambda);
    println!("  min *Ω           {:.12}", summary.min_min_omega);
    if let (Some(b), Some(c0)) = (summary.decay.branch, summary.decay.c0) {
        println!("  decay branch     {b:?}, c₀ = {c0}");
    }
    let mut consistent = true;
    for (stored, again) in summary.flags.iter().zip(&flags) {
        let same = stored == again;
        consistent &= same;
        println!(
            "  {:<26} {}{}",
            stored.name,
            flag_word(stored),
            if same { "" } else { "  (differs from series.csv)" }
        );
    }
    consistent &= summary.flags.len() == flags.len();
    println!("  overall          {}", if summary.success { "success" } else { "failure" });
    if consistent {
        EXIT_OK
    } else {
        eprintln!("error: summary.json flags disagree with series.csv");
        EXIT_MONITOR
    }
}
