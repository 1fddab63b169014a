//! Explicit finite-volume solver for `∂_t ρ = (|H(ρ)_x|^{q-2} H(ρ)_x)_x` with no-flux walls.
//!
//! Shares nothing with the JKO machinery beyond the energy catalog and the
//! density grid type, so agreement between the two is a genuine cross-check.

use thiserror::Error;

use crate::energy::{self, EnergyError, EnergySpec};
use crate::jko::Trajectory;
use crate::measure::{self, GridDensity, MeasureError};
use crate::tolerances as tol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("time step {dt:.3e} underflowed at t = {t}")]
    StiffnessError { dt: f64, t: f64 },
    #[error("mismatch: {0}")]
    MismatchError(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdConfig {
    pub cfl_safety: f64,
    pub horizon: f64,
    pub snapshot_times: Vec<f64>,
    /// Floor on `|D|` in the diffusivity estimate when `q < 2`.
    pub delta: f64,
}

impl FdConfig {
    pub fn new(horizon: f64, snapshot_times: Vec<f64>) -> Self {
        FdConfig { cfl_safety: tol::FD_CFL, horizon, snapshot_times, delta: tol::FD_DELTA }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub density: GridDensity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdRun {
    pub snapshots: Vec<Snapshot>,
    pub steps: usize,
    /// Largest `|mass - 1|` seen over the run.
    pub mass_drift: f64,
    /// Number of steps in which the outflow limiter engaged.
    pub limited_steps: usize,
}

pub fn fd_solve(rho0: &GridDensity, spec: &EnergySpec, p: f64, config: &FdConfig) -> Result<FdRun, ReferenceError> {
    if !(config.cfl_safety > 0.0 && config.cfl_safety < 1.0) {
        return Err(ReferenceError::Config(format!("cfl_safety = {} must lie in (0, 1)", config.cfl_safety)));
    }
    if !(config.horizon > 0.0) || config.snapshot_times.iter().any(|t| !(*t >= 0.0 && *t <= config.horizon)) {
        return Err(ReferenceError::Config("snapshot times must lie in [0, T]".into()));
    }
    rho0.validate()?;
    let flux = energy::flux_h_prime(spec, p)?;
    let q = energy::conjugate(p);
    let n = rho0.n();
    let dx = rho0.dx();
    let mut rho = rho0.values.clone();
    let mut times = config.snapshot_times.clone();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut snaps = vec![];
    let mut next_snap = 0;
    let mut t = 0.0;
    let mut steps = 0;
    let mut mass_drift: f64 = 0.0;
    let mut limited_steps = 0;
    let mut hv = vec![0.0; n];
    let mut jf = vec![0.0; n + 1];
    let mut out = vec![0.0; n];
    loop {
        while next_snap < times.len() && times[next_snap] <= t + 1e-14 {
            snaps.push(Snapshot { t: times[next_snap], density: GridDensity { a: rho0.a, b: rho0.b, values: rho.clone() } });
            next_snap += 1;
        }
        if t >= config.horizon - 1e-14 {
            break;
        }
        for i in 0..n {
            hv[i] = flux.h(rho[i]);
        }
        let mut kappa: f64 = 0.0;
        for i in 0..n - 1 {
            let d = (hv[i + 1] - hv[i]) / dx;
            let hp = flux.h_prime(rho[i].max(rho[i + 1]).max(1e-300)).max(flux.h_prime(rho[i].min(rho[i + 1]).max(1e-300)));
            let hp = if hp.is_finite() { hp } else { 0.0 };
            kappa = kappa.max((q - 1.0) * d.abs().max(config.delta).powf(q - 2.0) * hp);
            // Mass flux to the right.
            jf[i + 1] = -d.abs().powf(q - 1.0) * d.signum();
        }
        jf[0] = 0.0;
        jf[n] = 0.0;
        let mut dt = if kappa > 0.0 { config.cfl_safety * dx * dx / (2.0 * kappa) } else { config.horizon - t };
        let target = times.get(next_snap).copied().unwrap_or(config.horizon).min(config.horizon);
        if t + dt > target {
            dt = target - t;
        }
        if dt < tol::FD_MIN_DT && target - t > tol::FD_MIN_DT {
            return Err(ReferenceError::StiffnessError { dt, t });
        }
        // Cap each cell's outflow at its content.
        let r = dt / dx;
        let mut limited = false;
        for i in 0..n {
            out[i] = r * (jf[i + 1].max(0.0) + (-jf[i]).max(0.0));
        }
        for f in 1..n {
            let donor = if jf[f] > 0.0 { f - 1 } else { f };
            if out[donor] > rho[donor] && out[donor] > 0.0 {
                jf[f] *= rho[donor] / out[donor];
                limited = true;
            }
        }
        if limited {
            limited_steps += 1;
        }
        for i in 0..n {
            rho[i] = (rho[i] + r * (jf[i] - jf[i + 1])).max(0.0);
        }
        t = if (target - (t + dt)).abs() < 1e-15 { target } else { t + dt };
        steps += 1;
        let mass = crate::quad::stable_sum(rho.iter().copied()) * dx;
        mass_drift = mass_drift.max((mass - 1.0).abs());
    }
    Ok(FdRun { snapshots: snaps, steps, mass_drift, limited_steps })
}

/// Coefficient of `cos(π (x - a)/(b - a))` in `ρ`.
pub fn cosine_mode(rho: &GridDensity) -> f64 {
    let len = rho.b - rho.a;
    2.0 / len * rho.values.iter().enumerate().map(|(i, v)| v * (std::f64::consts::PI * (rho.midpoint(i) - rho.a) / len).cos()).sum::<f64>() * rho.dx()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    Wp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub t: f64,
    pub step: usize,
    pub l1: Option<f64>,
    pub wp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
    pub max_l1: f64,
    pub max_wp: f64,
}

/// JKO density at the snapshot's step against the oracle snapshot.
pub fn compare(traj: &Trajectory, snapshots: &[Snapshot], norms: &[Norm]) -> Result<CompareTable, ReferenceError> {
    let tau = traj.tau();
    let mut rows = vec![];
    let (mut max_l1, mut max_wp): (f64, f64) = (0.0, 0.0);
    for s in snapshots {
        let x0 = &traj.steps[0];
        if (s.density.a - x0.a).abs() > 1e-14 || (s.density.b - x0.b).abs() > 1e-14 {
            return Err(ReferenceError::MismatchError("domains differ".into()));
        }
        let k = (s.t / tau).round() as usize;
        if k >= traj.steps.len() || (k as f64 * tau - s.t).abs() > 0.5 * tau + 1e-12 {
            return Err(ReferenceError::MismatchError(format!("no JKO step within tau/2 of t = {}", s.t)));
        }
        let jd = measure::quantile_to_density(&traj.steps[k], s.density.n());
        let l1 = if norms.contains(&Norm::L1) { Some(jd.l1_distance(&s.density)?) } else { None };
        let wp = if norms.contains(&Norm::Wp) {
            let qf = measure::density_to_quantile(&s.density, traj.steps[k].m())?;
            Some(measure::wasserstein_p(&traj.steps[k], &qf, traj.p())?)
        } else {
            None
        };
        max_l1 = max_l1.max(l1.unwrap_or(0.0));
        max_wp = max_wp.max(wp.unwrap_or(0.0));
        rows.push(CompareRow { t: s.t, step: k, l1, wp });
    }
    Ok(CompareTable { rows, max_l1, max_wp })
}
