//! Validation registry: every invariant family at desk scale, one named suite each.
//!
//! The quantile `W_p` kernel is injectable so that a deliberately broken
//! implementation can be shown to trip the metric-axiom suite alone.

use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{self, LedgerOptions};
use crate::energy::{self, derive, EnergySpec};
use crate::jko::{self, run_scheme, SchemeConfig, Trajectory};
use crate::measure::{self, initial, DiscreteMeasure, GridDensity, MeasureError, QuantileRep};
use crate::reference::{self, FdConfig, Norm};
use crate::tolerances as tol;

pub type WassersteinFn = fn(&QuantileRep, &QuantileRep, f64) -> Result<f64, MeasureError>;

#[derive(Clone, Copy)]
pub struct Kernels {
    pub wasserstein_p: WassersteinFn,
}

impl Default for Kernels {
    fn default() -> Self {
        Kernels { wasserstein_p: measure::wasserstein_p }
    }
}

type Check = Result<String, String>;

pub struct Suite {
    pub label: &'static str,
    /// Acceptance criterion the suite covers at reduced size, if any.
    pub criterion: Option<u8>,
    run: fn(&Kernels) -> Check,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub label: &'static str,
    pub criterion: Option<u8>,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

pub fn registry() -> Vec<Suite> {
    vec![
        Suite { label: "McCann catalog", criterion: Some(9), run: mccann_catalog },
        Suite { label: "truncated decomposition", criterion: Some(9), run: decomposition },
        Suite { label: "superlinear construction", criterion: Some(9), run: superlinear },
        Suite { label: "LP oracle", criterion: Some(8), run: lp_oracle },
        Suite { label: "metric axioms", criterion: Some(8), run: metric_axioms },
        Suite { label: "energy monotone and budget", criterion: None, run: energy_budget },
        Suite { label: "eps continuation", criterion: Some(10), run: eps_continuation },
        Suite { label: "heat oracle", criterion: Some(1), run: heat_oracle },
        Suite { label: "EDI precursor", criterion: Some(4), run: edi_precursor },
        Suite { label: "EDI global residual", criterion: Some(4), run: edi_global },
        Suite { label: "Young gap", criterion: Some(5), run: young },
        Suite { label: "flow interchange", criterion: Some(6), run: flow_interchange },
        Suite { label: "BV monotone", criterion: Some(7), run: bv_monotone },
        Suite { label: "BV decay", criterion: Some(7), run: bv_decay },
        Suite { label: "chain rule bound", criterion: None, run: chain_rule_bound },
    ]
}

pub fn run_suite(suite: &Suite, kernels: &Kernels) -> SuiteResult {
    let t0 = Instant::now();
    let out = (suite.run)(kernels);
    let (passed, detail) = match out {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    SuiteResult { label: suite.label, criterion: suite.criterion, passed, detail, seconds: t0.elapsed().as_secs_f64() }
}

pub fn run_all(kernels: &Kernels) -> Vec<SuiteResult> {
    registry().iter().map(|s| run_suite(s, kernels)).collect()
}

pub fn format_table(results: &[SuiteResult]) -> String {
    let mut out = format!("{:<28} {:>4} {:>6} {:>8}  {}\n", "suite", "crit", "status", "seconds", "detail");
    for r in results {
        let crit = r.criterion.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
        out += &format!("{:<28} {:>4} {:>6} {:>8.2}  {}\n", r.label, crit, if r.passed { "pass" } else { "FAIL" }, r.seconds, r.detail);
    }
    out
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn run(key: &str, p: f64, rho0: &GridDensity, tau: f64, t_end: f64, eps: &[f64]) -> Result<Trajectory, String> {
    let e = derive(&EnergySpec::from_key(key).map_err(err)?).map_err(err)?;
    let mut cfg = SchemeConfig::new(p, tau, t_end, rho0.n());
    cfg.eps_schedule = eps.to_vec();
    let traj = run_scheme(rho0, &cfg, &e).map_err(err)?;
    match &traj.failure {
        Some(f) => Err(format!("{key} p={p}: {f}")),
        None => Ok(traj),
    }
}

/// Heat, porous medium and p = 3 runs at reduced size.
fn desk_runs(tau: f64) -> Result<Vec<(&'static str, Trajectory)>, String> {
    let n = 64;
    let heat = initial::cosine(0.0, 1.0, n, 0.1).map_err(err)?;
    let pme = initial::bump(0.0, 1.0, n, 0.5, 0.3, 1.0, 0.0).map_err(err)?;
    let p3 = initial::sample(0.0, 1.0, n, |x| 1.0 + 2.0 * (-((x - 0.5) / 0.1f64).powi(2)).exp()).map_err(err)?;
    Ok(vec![
        ("heat", run("entropy", 2.0, &heat, tau, 0.016, &[])?),
        ("porous medium", run("power:m=2", 2.0, &pme, tau, 0.008, &[])?),
        ("p = 3", run("qlaplace:p=3", 3.0, &p3, tau, 0.008, &[1e-3, 1e-5, 1e-7])?),
    ])
}

fn mccann_catalog(_: &Kernels) -> Check {
    let probe = energy::default_probe();
    let pass = |spec: &EnergySpec, d| energy::check_mccann(spec, d, &probe).map(|o| o.passed()).map_err(err);
    ensure(pass(&EnergySpec::power(2.0).map_err(err)?, 2)?, || "Power(2) d=2 rejected".into())?;
    for d in 1..=3 {
        ensure(pass(&EnergySpec::entropy(), d)?, || format!("entropy d={d} rejected"))?;
    }
    for key in ["entropy", "power:m=2", "power:m=0.3", "power:m=3.5", "qlaplace:p=1.5"] {
        let spec = EnergySpec::from_key(key).map_err(err)?;
        if spec.f_at_zero.is_finite() {
            ensure(pass(&spec, 1)?, || format!("{key} d=1 rejected"))?;
        }
    }
    ensure(!pass(&EnergySpec::power(0.3).map_err(err)?, 2)?, || "Power(0.3) d=2 accepted".into())?;
    Ok("documented pass/fail cases".into())
}

fn decomposition(_: &Kernels) -> Check {
    let probe = energy::default_probe();
    let mut worst: f64 = 0.0;
    for (key, d) in [("power:m=2", 2), ("entropy", 2), ("power:m=3", 3), ("power:m=0.5", 2)] {
        let spec = EnergySpec::from_key(key).map_err(err)?;
        let dec = energy::decompose_truncated(&spec, 0.5, 2.0, d).map_err(err)?;
        let ft_max = probe.iter().map(|&z| dec.f_tilde(z).abs()).fold(0.0, f64::max);
        let e = probe.iter().map(|&z| (dec.f1(z) - dec.f2(z) - dec.f_tilde(z)).abs()).fold(0.0, f64::max) / (1.0 + ft_max);
        worst = worst.max(e);
        ensure(e <= 1e-8, || format!("{key} d={d}: reconstruction error {e:.3e}"))?;
        for (name, ok) in [
            ("f1", energy::check_mccann_map(|z| dec.f1(z), d, &probe).map_err(err)?.passed()),
            ("f2", energy::check_mccann_map(|z| dec.f2(z), d, &probe).map_err(err)?.passed()),
        ] {
            ensure(ok, || format!("{key} d={d}: {name} fails McCann"))?;
        }
    }
    Ok(format!("max relative error {worst:.1e}"))
}

fn superlinear(_: &Kernels) -> Check {
    let phi = |z: f64| if z > 1.0 { (z - 1.0) * (z - 1.0) } else { 0.0 };
    for d in [1, 2] {
        let maj = energy::construct_superlinear(phi, d, 1e-3, 1e6).map_err(err)?;
        ensure(maj.mccann.passed(), || format!("d={d}: McCann fails"))?;
        ensure(maj.growth_constant.is_finite(), || format!("d={d}: no growth constant"))?;
        for z in crate::quad::geometric_grid(1e-3, 1e6, 200) {
            ensure(maj.eval(z) <= maj.growth_constant * (phi(z) + 1.0) * (1.0 + 1e-9), || format!("d={d}: bound fails at {z}"))?;
        }
        ensure(maj.eval(1e6) / 1e6 > maj.eval(1e3) / 1e3, || format!("d={d}: not superlinear"))?;
    }
    Ok("(z-1)+^2 at d = 1, 2".into())
}

fn random_measure(rng: &mut ChaCha8Rng, max_atoms: usize) -> Result<DiscreteMeasure, String> {
    let k = rng.random_range(1..=max_atoms);
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut atoms: Vec<(f64, f64)> = w.iter().map(|w| (rng.random_range(-2.0..2.0), w / total)).collect();
    let s: f64 = atoms.iter().map(|a| a.1).sum();
    atoms[0].1 += 1.0 - s;
    DiscreteMeasure::new(atoms).map_err(err)
}

fn random_quantiles(rng: &mut ChaCha8Rng, m: usize) -> Result<QuantileRep, String> {
    let gaps: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let lead: f64 = rng.random_range(0.0..0.3);
    let span: f64 = rng.random_range(0.3..1.0 - lead);
    let total: f64 = gaps.iter().sum();
    let mut x = vec![lead];
    for g in gaps {
        x.push(x[x.len() - 1] + g * span / total);
    }
    QuantileRep::new(0.0, 1.0, x).map_err(err)
}

fn lp_oracle(_: &Kernels) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let (mu, nu) = (random_measure(&mut rng, 5)?, random_measure(&mut rng, 5)?);
        let p = [1.0, 1.5, 2.0, 3.0][i % 4];
        let a = measure::wasserstein_discrete(&mu, &nu, p);
        let b = measure::wasserstein_lp_oracle(&mu, &nu, p).map_err(err)?;
        worst = worst.max((a - b).abs());
        ensure((a - b).abs() <= 1e-12, || format!("instance {i}: {a} vs LP {b}"))?;
    }
    Ok(format!("100 instances, max gap {worst:.1e}"))
}

fn metric_axioms(k: &Kernels) -> Check {
    let w = k.wasserstein_p;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..100 {
        let (x, y, z) = (random_quantiles(&mut rng, 24)?, random_quantiles(&mut rng, 24)?, random_quantiles(&mut rng, 24)?);
        let p = [1.0, 2.0, 3.5][i % 3];
        let xy = w(&x, &y, p).map_err(err)?;
        ensure(w(&x, &x, p).map_err(err)?.abs() <= 1e-12, || format!("triple {i}: W(x, x) != 0"))?;
        ensure(xy > 0.0, || format!("triple {i}: W(x, y) = 0 for x != y"))?;
        ensure((xy - w(&y, &x, p).map_err(err)?).abs() <= 1e-12, || format!("triple {i}: asymmetric"))?;
        let via = w(&x, &z, p).map_err(err)? + w(&z, &y, p).map_err(err)?;
        ensure(xy <= via + 1e-12, || format!("triple {i}: triangle inequality fails"))?;
    }
    let t = QuantileRep::new(0.0, 1.0, vec![0.1, 0.2, 0.4]).map_err(err)?;
    let s = QuantileRep::new(0.0, 1.0, vec![0.35, 0.45, 0.65]).map_err(err)?;
    let d = w(&t, &s, 2.0).map_err(err)?;
    ensure((d - 0.25).abs() <= 1e-12, || format!("translation by 0.25 gives {d}"))?;
    Ok("100 triples".into())
}

fn energy_budget(_: &Kernels) -> Check {
    let mut n = 0;
    for (name, traj) in desk_runs(2e-3)? {
        let e = traj.ledger_energy();
        let f: Vec<f64> = traj.steps.iter().map(|x| measure::energy_quantile_form(x, &e)).collect::<Result<_, _>>().map_err(err)?;
        let slack = tol::ENERGY_MONOTONE_REL * (1.0 + f[0].abs());
        ensure(f.windows(2).all(|w| w[1] <= w[0] + slack), || format!("{name}: energy increased"))?;
        let budget: f64 = traj.results.iter().map(|r| r.transport_term).sum();
        ensure(budget <= f[0] - f[f.len() - 1] + 1e-8, || format!("{name}: transport budget {budget} exceeds energy drop"))?;
        for x in &traj.steps {
            ensure(x.x[0] >= x.a && x.x[x.m()] <= x.b && x.is_strictly_monotone(), || format!("{name}: left the domain"))?;
        }
        n += traj.results.len();
    }
    Ok(format!("{n} steps"))
}

fn eps_continuation(_: &Kernels) -> Check {
    let rho0 = initial::cosine(0.0, 1.0, 64, 0.1).map_err(err)?;
    let x0 = measure::density_to_quantile(&rho0, 64).map_err(err)?;
    let e = derive(&EnergySpec::entropy()).map_err(err)?;
    let r = jko::epsilon_continuation(&x0, &e, 2.0, 1e-3, &[1e-1, 1e-2, 1e-3, 1e-4], 1e-12, 200).map_err(err)?;
    let d: Vec<f64> = r.eps_record[1..].iter().map(|x| x.1).collect();
    ensure(d.windows(2).all(|w| w[1] < w[0]), || format!("consecutive distances not decreasing: {d:?}"))?;
    let direct = jko::jko_step_from(&x0, &x0, &e, 2.0, 1e-3, 0.0, 1e-12, 200).map_err(err)?;
    let gap = measure::wasserstein_p(&r.next, &direct.next, 2.0).map_err(err)?;
    ensure(gap <= 1e-6, || format!("eps limit vs direct: {gap:.3e}"))?;
    Ok(format!("limit vs direct {gap:.1e}"))
}

fn heat_oracle(_: &Kernels) -> Check {
    let rho0 = initial::cosine(0.0, 1.0, 128, 0.1).map_err(err)?;
    let traj = run("entropy", 2.0, &rho0, 2e-3, 0.02, &[])?;
    let times: Vec<f64> = (0..=5).map(|k| k as f64 * 4e-3).collect();
    let fd = reference::fd_solve(&rho0, &EnergySpec::entropy(), 2.0, &FdConfig::new(0.02, times)).map_err(err)?;
    let t = reference::compare(&traj, &fd.snapshots, &[Norm::L1]).map_err(err)?;
    ensure(t.max_l1 <= 0.05, || format!("max L1 {:.3e}", t.max_l1))?;
    let a0 = reference::cosine_mode(&fd.snapshots[0].density);
    for s in &fd.snapshots {
        let rel = reference::cosine_mode(&s.density) / (a0 * (-std::f64::consts::PI.powi(2) * s.t).exp()) - 1.0;
        ensure(rel.abs() <= 1e-3, || format!("cosine mode off by {rel:.3e} at t = {}", s.t))?;
    }
    Ok(format!("max L1 {:.2e}", t.max_l1))
}

fn edi_precursor(_: &Kernels) -> Check {
    let mut worst = f64::INFINITY;
    for (name, traj) in desk_runs(2e-3)? {
        let rep = diagnostics::edi_report(&traj, &LedgerOptions::default()).map_err(err)?;
        ensure(rep.min_precursor_residual >= -rep.tolerance, || format!("{name}: precursor residual {:.3e}", rep.min_precursor_residual))?;
        worst = worst.min(rep.min_precursor_residual);
    }
    Ok(format!("min residual {worst:.1e}"))
}

fn edi_global(_: &Kernels) -> Check {
    let opts = LedgerOptions { precursor: false, young: false, ..LedgerOptions::default() };
    let mut by_run: Vec<Vec<f64>> = vec![];
    for tau in [4e-3, 2e-3, 1e-3] {
        for (i, (name, traj)) in desk_runs(tau)?.into_iter().enumerate() {
            let rep = diagnostics::edi_report(&traj, &opts).map_err(err)?;
            ensure(rep.global_residual >= -rep.tolerance, || format!("{name} tau={tau}: residual {:.3e}", rep.global_residual))?;
            if by_run.len() <= i {
                by_run.push(vec![]);
            }
            by_run[i].push(rep.global_residual);
        }
    }
    for r in &by_run {
        ensure(r.windows(2).all(|w| w[1] < w[0]), || format!("residual not decreasing in tau: {r:?}"))?;
    }
    Ok(format!("heat residuals {:.1e} / {:.1e} / {:.1e}", by_run[0][0], by_run[0][1], by_run[0][2]))
}

fn young(_: &Kernels) -> Check {
    let rho0 = initial::bump(0.0, 1.0, 64, 0.5, 0.3, 1.0, 0.2).map_err(err)?;
    let mut gaps = vec![];
    let mut laws = vec![];
    for tau in [4e-3, 2e-3, 1e-3] {
        let traj = run("entropy", 2.0, &rho0, tau, 0.016, &[])?;
        let y = diagnostics::young_gap(&traj).map_err(err)?;
        ensure(y.steps.iter().all(|s| s.gap >= -1e-12), || format!("tau={tau}: negative step gap"))?;
        gaps.push(y.total);
        laws.push(y.law_residual);
    }
    ensure(gaps.windows(2).all(|w| w[1] < w[0]), || format!("gap not decreasing: {gaps:?}"))?;
    ensure(laws.windows(2).all(|w| w[1] < w[0]), || format!("law residual not decreasing: {laws:?}"))?;
    Ok(format!("gaps {:.1e} / {:.1e} / {:.1e}", gaps[0], gaps[1], gaps[2]))
}

fn flow_interchange(_: &Kernels) -> Check {
    let mut worst: f64 = f64::INFINITY;
    for (name, traj) in desk_runs(2e-3)? {
        for beta in [1.0, 2.0] {
            let fi = diagnostics::flow_interchange_check(&traj, beta).map_err(err)?;
            ensure(fi.monotone, || format!("{name} beta={beta}: increase {:.3e}", fi.max_increase))?;
            if let Some(s) = fi.budget_slack {
                ensure(s >= -fi.tolerance, || format!("{name} beta={beta}: budget slack {s:.3e}"))?;
                worst = worst.min(s);
            }
        }
    }
    Ok(format!("min budget slack {worst:.1e}"))
}

fn bv_monotone(_: &Kernels) -> Check {
    let ind = initial::smoothed_indicator(0.0, 1.0, 64, 0.3, 0.7, 0.02, 0.05).map_err(err)?;
    let mut runs = desk_runs(2e-3)?;
    runs.push(("indicator", run("entropy", 2.0, &ind, 2e-3, 0.02, &[])?));
    for (name, traj) in &runs {
        let bv = diagnostics::bv_checks(traj);
        ensure(bv.max_increase <= tol::MONOTONE_ABS, || format!("{name}: TV increased by {:.3e}", bv.max_increase))?;
    }
    Ok(format!("{} runs", runs.len()))
}

fn bv_decay(_: &Kernels) -> Check {
    let ind = initial::smoothed_indicator(0.0, 1.0, 128, 0.3, 0.7, 0.02, 0.05).map_err(err)?;
    let traj = run("entropy", 2.0, &ind, 1e-3, 0.02, &[])?;
    let bv = diagnostics::bv_checks(&traj);
    let q = energy::conjugate(traj.p());
    let slope = bv.decay_slope.ok_or("no decay slope")?;
    ensure(bv.regularization_constant.is_finite(), || "sup TV t^{1/q} is infinite".into())?;
    ensure(slope >= -1.0 / q - 0.15, || format!("decay slope {slope:.3}"))?;
    Ok(format!("slope {slope:.2}, sup TV t^(1/q) {:.2e}", bv.regularization_constant))
}

fn chain_rule_bound(_: &Kernels) -> Check {
    let bump = initial::bump(0.0, 1.0, 128, 0.5, 0.3, 1.0, 0.2).map_err(err)?;
    for (key, d) in [("power:m=2", 2), ("entropy", 2), ("power:m=3", 3)] {
        let r = diagnostics::step2_bound_check(&bump, &EnergySpec::from_key(key).map_err(err)?, 2.0, d, 0.5, 2.0).map_err(err)?;
        ensure(r.holds(), || format!("{key} d={d}: {} violations, ratio {:.3}", r.violations, r.max_ratio))?;
    }
    Ok("3 energies".into())
}
