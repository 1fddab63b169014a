//! `run`, `sweep`, `report` and `validate`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use pjko::diagnostics::{self, LedgerOptions, StepLedger};
use pjko::energy::{self, derive};
use pjko::jko::{self, SchemeConfig, Trajectory};
use pjko::measure::{self, QuantileRep};
use pjko::reference::{self, FdConfig, Norm};
use pjko::suites::{self, Kernels, SuiteResult};
use pjko::tolerances as tol;

use crate::{CliError, RunConfig};

pub const DIAGNOSTICS_HEADER: &str = "step,t,energy,transport_term,slope_term,kinetic_term,edi_precursor_residual,tv,renyi_beta,lalpha,young_gap_term";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    /// An enabled assertion failed or the solver aborted.
    Fail,
    /// Config or IO problem; exit code 2.
    Error,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Error => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub assertion: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub steps: usize,
    pub expected_steps: usize,
    pub global_residual: Option<f64>,
    pub ledger_tolerance: Option<f64>,
    pub min_precursor_residual: Option<f64>,
    pub young_gap: Option<f64>,
    pub law_residual: Option<f64>,
    pub tv_decay_slope: Option<f64>,
    pub oracle_max_l1: Option<f64>,
    pub oracle_max_wp: Option<f64>,
    /// L¹ to the oracle at the last compared snapshot.
    pub oracle_terminal_l1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: Status,
    pub output: PathBuf,
    pub summary: Summary,
    pub failures: Vec<Failure>,
    pub manifest: Value,
    /// Last state reached, if the run got as far as the solver.
    pub terminal: Option<QuantileRep>,
}

fn opt(v: Option<f64>) -> Value {
    v.map(Value::from).unwrap_or(Value::Null)
}

fn fmt_row(r: &StepLedger) -> String {
    format!(
        "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
        r.k, r.t, r.energy, r.transport_term, r.slope_term, r.kinetic_term, r.edi_precursor_residual, r.tv, r.renyi, r.lalpha, r.young_gap_term
    )
}

struct Run {
    failures: Vec<Failure>,
    tolerances: Vec<(String, f64)>,
    summary: Summary,
    terminal: Option<QuantileRep>,
    error: Option<CliError>,
    solver_error: Option<String>,
}

impl Run {
    fn fail(&mut self, assertion: &str, detail: String) {
        self.failures.push(Failure { assertion: assertion.into(), detail });
    }
}

/// Runs one configuration and writes `diagnostics.csv`, `density_<t>.csv` and `manifest.json`.
///
/// The manifest is written whenever the output directory can be created,
/// including after solver aborts and after errors raised by the run itself.
pub fn execute_run(cfg: &RunConfig) -> RunOutcome {
    let started = Instant::now();
    let out = cfg.output_dir();
    let mut run = Run { failures: vec![], tolerances: vec![], summary: Summary::default(), terminal: None, error: None, solver_error: None };
    if let Err(e) = fs::create_dir_all(&out) {
        run.error = Some(CliError::Io(format!("{}: {e}", out.display())));
    } else if let Err(e) = run_body(cfg, &out, &mut run) {
        run.error = Some(e);
    }
    let status = if run.error.is_some() {
        Status::Error
    } else if run.failures.is_empty() {
        Status::Pass
    } else {
        Status::Fail
    };
    let manifest = build_manifest(cfg, &run, status, started.elapsed().as_secs_f64());
    if run.error.is_none() || out.is_dir() {
        if let Err(e) = fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("json value") + "\n") {
            eprintln!("cannot write manifest: {e}");
        }
    }
    RunOutcome { status, output: out, summary: run.summary, failures: run.failures, manifest, terminal: run.terminal }
}

fn run_body(cfg: &RunConfig, out: &Path, run: &mut Run) -> Result<(), CliError> {
    let spec = cfg.energy_spec()?;
    let e = derive(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    if !e.is_superlinear() && cfg.eps_schedule.is_empty() {
        return Err(CliError::Config(format!("energy '{}' is not superlinear; set eps_schedule", cfg.energy)));
    }
    let rho0 = cfg.initial.density(cfg.a, cfg.b, cfg.n)?;
    let scheme = SchemeConfig {
        p: cfg.p,
        tau: cfg.tau,
        horizon: cfg.horizon,
        m: cfg.m,
        eps_schedule: cfg.eps_schedule.clone(),
        inner_tol: cfg.inner_tol,
        inner_max_iter: cfg.inner_max_iter,
    };
    run.summary.expected_steps = scheme.step_count();
    let traj = match jko::run_scheme(&rho0, &scheme, &e) {
        Ok(t) => t,
        Err(err) => {
            run.solver_error = Some(err.to_string());
            run.fail("solver", err.to_string());
            return Ok(());
        }
    };
    run.summary.steps = traj.steps.len() - 1;
    run.terminal = traj.steps.last().cloned();
    if let Some(err) = &traj.failure {
        run.solver_error = Some(err.to_string());
        run.fail("solver", format!("stopped after {} of {} steps: {err}", traj.steps.len() - 1, scheme.step_count()));
    }

    let opts = LedgerOptions { renyi_beta: cfg.renyi_beta, lalpha_exponent: cfg.lalpha_exponent, precursor: cfg.edi, young: cfg.young };
    let mut rows = match diagnostics::ledger(&traj, &opts) {
        Ok(r) => r,
        Err(err) => {
            run.fail("ledger", err.to_string());
            return Ok(());
        }
    };
    if !cfg.lalpha {
        rows.iter_mut().for_each(|r| r.lalpha = 0.0);
    }
    let mut csv = String::from(DIAGNOSTICS_HEADER);
    csv.push('\n');
    rows.iter().for_each(|r| csv += &fmt_row(r));
    fs::write(out.join("diagnostics.csv"), csv)?;
    write_snapshots(cfg, &traj, out)?;

    check_ledger(cfg, &traj, &rows, run);
    check_flow_interchange(cfg, &traj, run);
    if cfg.oracle {
        check_oracle(cfg, &spec, &rho0, &traj, run);
    }
    Ok(())
}

fn snapshot_name(t: f64) -> String {
    format!("density_{t}.csv")
}

fn write_snapshots(cfg: &RunConfig, traj: &Trajectory, out: &Path) -> Result<(), CliError> {
    for &t in &cfg.snapshot_times {
        let k = (t / cfg.tau).round() as usize;
        if let Some(x) = traj.steps.get(k) {
            measure::quantile_to_density(x, cfg.n).write_csv(&out.join(snapshot_name(t))).map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    Ok(())
}

fn check_ledger(cfg: &RunConfig, traj: &Trajectory, rows: &[StepLedger], run: &mut Run) {
    let f0 = rows[0].energy;
    let mono = tol::ENERGY_MONOTONE_REL * (1.0 + f0.abs());
    run.tolerances.push(("energy_monotone".into(), mono));
    if let Some(k) = rows.windows(2).position(|w| w[1].energy > w[0].energy + mono) {
        run.fail("energy monotone", format!("F increases by {:.3e} at step {}", rows[k + 1].energy - rows[k].energy, k + 1));
    }
    let ledger_tol = tol::ledger_tol(cfg.inner_tol, f0);
    run.tolerances.push(("ledger".into(), ledger_tol));
    run.summary.ledger_tolerance = Some(ledger_tol);
    if rows.len() < 2 {
        return;
    }
    let tau = cfg.tau;
    let global = f0 - rows[rows.len() - 1].energy - rows[1..].iter().map(|r| tau * (r.slope_term + r.kinetic_term)).sum::<f64>();
    run.summary.global_residual = Some(global);
    if cfg.edi {
        let min_pre = rows[1..].iter().map(|r| r.edi_precursor_residual).fold(f64::INFINITY, f64::min);
        run.summary.min_precursor_residual = Some(min_pre);
        if min_pre < -ledger_tol {
            run.fail("EDI precursor", format!("min residual {min_pre:.3e} < -{ledger_tol:.1e}"));
        }
        if global < -ledger_tol {
            run.fail("EDI global", format!("residual {global:.3e} < -{ledger_tol:.1e}"));
        }
    }
    if cfg.young {
        let gap: f64 = rows.iter().map(|r| r.young_gap_term).sum();
        run.summary.young_gap = Some(gap);
        if gap < -ledger_tol {
            run.fail("Young gap", format!("gap {gap:.3e} < -{ledger_tol:.1e}"));
        }
        let e = traj.ledger_energy();
        let law = traj.steps.windows(2).map(|w| diagnostics::young_step(&w[0], &w[1], &e, cfg.p, tau).map(|y| y.law_residual)).sum::<Result<f64, _>>();
        match law {
            Ok(l) => run.summary.law_residual = Some(l),
            Err(err) => run.fail("Young gap", err.to_string()),
        }
    }
    let bv = diagnostics::bv_checks(traj);
    run.summary.tv_decay_slope = bv.decay_slope;
    if cfg.bv {
        run.tolerances.push(("bv_monotone".into(), tol::MONOTONE_ABS));
        if !bv.monotone {
            run.fail("BV monotone", format!("TV increases by {:.3e}", bv.max_increase));
        }
    }
}

fn check_flow_interchange(cfg: &RunConfig, traj: &Trajectory, run: &mut Run) {
    for &beta in &cfg.flow_interchange {
        match diagnostics::flow_interchange_check(traj, beta) {
            Ok(r) => {
                run.tolerances.push((format!("flow_interchange_monotone_beta_{beta}"), tol::MONOTONE_ABS));
                run.tolerances.push((format!("flow_interchange_budget_beta_{beta}"), r.tolerance));
                if !r.monotone {
                    run.fail("flow interchange", format!("beta {beta}: increase {:.3e}", r.max_increase));
                }
                if let Some(s) = r.budget_slack {
                    if s < -r.tolerance {
                        run.fail("flow interchange", format!("beta {beta}: budget slack {s:.3e} < -{:.1e}", r.tolerance));
                    }
                }
            }
            Err(err) => run.fail("flow interchange", format!("beta {beta}: {err}")),
        }
    }
}

fn check_oracle(cfg: &RunConfig, spec: &energy::EnergySpec, rho0: &measure::GridDensity, traj: &Trajectory, run: &mut Run) {
    let mut fc = FdConfig::new(cfg.horizon, cfg.snapshot_times.clone());
    fc.delta = cfg.fd_delta;
    let fd = match reference::fd_solve(rho0, spec, cfg.p, &fc) {
        Ok(f) => f,
        Err(err) => return run.fail("oracle", err.to_string()),
    };
    let reached: Vec<_> = fd.snapshots.into_iter().filter(|s| ((s.t / cfg.tau).round() as usize) < traj.steps.len()).collect();
    match reference::compare(traj, &reached, &[Norm::L1, Norm::Wp]) {
        Ok(t) => {
            run.summary.oracle_max_l1 = Some(t.max_l1);
            run.summary.oracle_max_wp = Some(t.max_wp);
            run.summary.oracle_terminal_l1 = t.rows.last().and_then(|r| r.l1);
            if let Some(bound) = cfg.oracle_tolerance {
                run.tolerances.push(("oracle_l1".into(), bound));
                if t.max_l1 > bound {
                    run.fail("oracle", format!("max L1 {:.3e} > {bound}", t.max_l1));
                }
            }
        }
        Err(err) => run.fail("oracle", err.to_string()),
    }
}

fn build_manifest(cfg: &RunConfig, run: &Run, status: Status, seconds: f64) -> Value {
    let (exps, mccann) = match cfg.energy_spec() {
        Ok(spec) => {
            let x = energy::exponents(&spec, cfg.p, cfg.d);
            let mc = match energy::check_mccann(&spec, cfg.d, &energy::default_probe()) {
                Ok(o) => format!("{o:?}"),
                Err(e) => format!("not applicable: {e}"),
            };
            (json!({"q": x.q, "alpha": x.alpha, "beta": x.beta, "theta": x.theta, "branch": format!("{:?}", x.branch)}), Value::from(mc))
        }
        Err(_) => (Value::Null, Value::Null),
    };
    let mut tolerances = serde_json::Map::new();
    for (k, v) in tol::all() {
        tolerances.insert(k.into(), v.into());
    }
    tolerances.insert("inner_tol".into(), cfg.inner_tol.into());
    tolerances.insert("fd_delta".into(), cfg.fd_delta.into());
    for (k, v) in &run.tolerances {
        tolerances.insert(k.clone(), (*v).into());
    }
    let s = &run.summary;
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "status": format!("{status:?}").to_lowercase(),
        "config": cfg.serialize(),
        "exponents": exps,
        "mccann": mccann,
        "wall_clock_seconds": seconds,
        "tolerances": tolerances,
        "steps_completed": s.steps,
        "steps_expected": s.expected_steps,
        "solver_error": run.solver_error,
        "error": run.error.as_ref().map(|e| e.to_string()),
        "summary": {
            "global_residual": opt(s.global_residual),
            "min_precursor_residual": opt(s.min_precursor_residual),
            "young_gap": opt(s.young_gap),
            "law_residual": opt(s.law_residual),
            "tv_decay_slope": opt(s.tv_decay_slope),
            "oracle_max_l1": opt(s.oracle_max_l1),
            "oracle_max_wp": opt(s.oracle_max_wp),
            "oracle_terminal_l1": opt(s.oracle_terminal_l1),
        },
        "failures": run.failures.iter().map(|f| json!({"assertion": f.assertion, "detail": f.detail})).collect::<Vec<_>>(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Tau,
    Eps,
    Grid,
}

impl std::str::FromStr for Axis {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "tau" => Ok(Axis::Tau),
            "eps" => Ok(Axis::Eps),
            "grid" => Ok(Axis::Grid),
            _ => Err(CliError::Config(format!("unknown sweep axis '{s}'; expected tau, eps or grid"))),
        }
    }
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Tau => "tau",
            Axis::Eps => "eps",
            Axis::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepLeg {
    pub value: f64,
    pub outcome: RunOutcome,
    pub wp_to_previous: Option<f64>,
    pub l1_to_previous: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub status: Status,
    pub legs: Vec<SweepLeg>,
    pub trend_failures: Vec<String>,
}

fn leg_config(base: &RunConfig, axis: Axis, v: f64) -> Result<RunConfig, CliError> {
    let mut c = base.clone();
    c.output = base.output.join(format!("{}_{v}", axis.name()));
    match axis {
        Axis::Tau => {
            let k = base.horizon / v;
            if (k - k.round()).abs() > 1e-9 * k {
                return Err(CliError::Config(format!("T = {} is not a multiple of tau = {v}", base.horizon)));
            }
            c.tau = v;
            c.snapshot_times.retain(|t| {
                let j = t / v;
                (j - j.round()).abs() <= 1e-9 * j.max(1.0)
            });
        }
        Axis::Eps => c.entropic_eps = v,
        Axis::Grid => {
            if v.fract() != 0.0 || v < 2.0 {
                return Err(CliError::Config(format!("grid value {v} is not an integer >= 2")));
            }
            c.m = v as usize;
            c.n = v as usize;
        }
    }
    c.validate()?;
    Ok(c)
}

/// Runs the legs one after another, finest last, and checks the refinement trends.
///
/// Values are sorted into refinement order: decreasing for `tau` and `eps`,
/// increasing for `grid`. Terminal distances are taken after resampling both
/// states to the finest grid.
pub fn execute_sweep(base: &RunConfig, axis: Axis, values: &[f64]) -> Result<SweepOutcome, CliError> {
    if values.len() < 2 {
        return Err(CliError::Config("a sweep needs at least two values".into()));
    }
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    if !increasing && !decreasing {
        return Err(CliError::Config("sweep values must be strictly monotone".into()));
    }
    if axis == Axis::Grid && !base.oracle {
        return Err(CliError::Config("a grid sweep compares against the oracle; set oracle = true".into()));
    }
    let mut vals = values.to_vec();
    vals.sort_by(|a, b| if axis == Axis::Grid { a.total_cmp(b) } else { b.total_cmp(a) });
    let configs = vals.iter().map(|&v| leg_config(base, axis, v)).collect::<Result<Vec<_>, _>>()?;
    let m_common = configs.iter().map(|c| c.m).max().unwrap();
    let n_common = configs.iter().map(|c| c.n).max().unwrap();

    let mut legs: Vec<SweepLeg> = vec![];
    for (c, &v) in configs.iter().zip(&vals) {
        let outcome = execute_run(c);
        let (mut wp, mut l1) = (None, None);
        if let (Some(prev), Some(x)) = (legs.last().and_then(|l| l.outcome.terminal.as_ref()), outcome.terminal.as_ref()) {
            let (dp, dx) = (measure::quantile_to_density(prev, n_common), measure::quantile_to_density(x, n_common));
            l1 = dp.l1_distance(&dx).ok();
            if let (Ok(qp), Ok(qx)) = (measure::density_to_quantile(&dp, m_common), measure::density_to_quantile(&dx, m_common)) {
                wp = measure::wasserstein_p(&qp, &qx, base.p).ok();
            }
        }
        legs.push(SweepLeg { value: v, outcome, wp_to_previous: wp, l1_to_previous: l1 });
    }

    let mut trend_failures = vec![];
    let mut trend = |name: &str, xs: Vec<Option<f64>>| {
        if xs.iter().any(|x| x.is_none()) {
            trend_failures.push(format!("{name}: missing on some leg"));
        } else if !xs.windows(2).all(|w| w[1].unwrap() < w[0].unwrap()) {
            let shown: Vec<String> = xs.iter().map(|x| format!("{:.3e}", x.unwrap())).collect();
            trend_failures.push(format!("{name} not decreasing: {}", shown.join(", ")));
        }
    };
    match axis {
        Axis::Tau => {
            if base.young {
                trend("young gap", legs.iter().map(|l| l.outcome.summary.young_gap).collect());
            }
            trend("global residual", legs.iter().map(|l| l.outcome.summary.global_residual).collect());
        }
        Axis::Eps => trend("W_p to previous eps", legs[1..].iter().map(|l| l.wp_to_previous).collect()),
        Axis::Grid => trend("terminal oracle L1", legs.iter().map(|l| l.outcome.summary.oracle_terminal_l1).collect()),
    }

    let root = base.output_dir();
    fs::create_dir_all(&root)?;
    let f = |x: Option<f64>| x.map(|v| format!("{v:.16e}")).unwrap_or_default();
    let mut csv = String::from("axis,value,status,steps,global_residual,young_gap,law_residual,wp_to_previous,l1_to_previous,oracle_max_l1,oracle_terminal_l1\n");
    for l in &legs {
        let s = &l.outcome.summary;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            axis.name(),
            l.value,
            format!("{:?}", l.outcome.status).to_lowercase(),
            s.steps,
            f(s.global_residual),
            f(s.young_gap),
            f(s.law_residual),
            f(l.wp_to_previous),
            f(l.l1_to_previous),
            f(s.oracle_max_l1),
            f(s.oracle_terminal_l1)
        );
    }
    fs::write(root.join("sweep.csv"), csv)?;

    let status = if legs.iter().any(|l| l.outcome.status == Status::Error) {
        Status::Error
    } else if legs.iter().any(|l| l.outcome.status == Status::Fail) || !trend_failures.is_empty() {
        Status::Fail
    } else {
        Status::Pass
    };
    Ok(SweepOutcome { status, legs, trend_failures })
}

/// Fixed-width table of `<dir>/diagnostics.csv`.
pub fn report(dir: &Path) -> Result<String, CliError> {
    let path = dir.join("diagnostics.csv");
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::Io(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != DIAGNOSTICS_HEADER {
        return Err(CliError::Io(format!("{}: unexpected header", path.display())));
    }
    let mut out = String::new();
    let _ = write!(out, "{:>5}", "step");
    for h in headers.iter().skip(1) {
        let _ = write!(out, " {:>22}", h);
    }
    out.push('\n');
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Io(e.to_string()))?;
        let _ = write!(out, "{:>5}", &rec[0]);
        for field in rec.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| CliError::Io(format!("{}: bad number '{field}'", path.display())))?;
            let _ = write!(out, " {:>22.10e}", v);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Every registered suite with the production kernels.
pub fn validate() -> (Vec<SuiteResult>, String) {
    let results = suites::run_all(&Kernels::default());
    let table = suites::format_table(&results);
    (results, table)
}
