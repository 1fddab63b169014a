//! The p-JKO step in quantile coordinates.
//!
//! With nodes `X_0 ≤ … ≤ X_m` and `v_i = m(X_{i+1} - X_i)` the step minimizes
//!
//! `J(X) = (1/m) Σ G(v_i) + f(0)·vac(X) + (1/(p h^{p-1})) Σ_j w_j |X_j - P_j|^p`
//!
//! where `G(v) = v f(1/v)`, `vac` is the vacuum length at the ends, `P` the
//! previous nodes and `w` the trapezoid weights. `J` is strictly convex with a
//! tridiagonal Hessian; it is minimized by projected Newton with the endpoint
//! box `a ≤ X_0`, `X_m ≤ b` handled by an active set.

use thiserror::Error;

use crate::energy::DerivedEnergy;
use crate::measure::{self, GridDensity, MeasureError, QuantileRep};
use crate::tolerances as tol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JkoError {
    #[error("inner solver hit {iterations} iterations with KKT residual {kkt:.3e}")]
    MaxIterations { iterations: usize, kkt: f64 },
    #[error("line search stalled with KKT residual {kkt:.3e}")]
    LineSearchStall { kkt: f64 },
    #[error("energy has L < inf; an entropic regularization eps > 0 is required")]
    NotSuperlinear,
    #[error("degenerate state: {0}")]
    Degenerate(String),
    #[error("time {0} outside [0, T]")]
    RangeError(f64),
    #[error("invalid scheme configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub p: f64,
    pub tau: f64,
    pub horizon: f64,
    pub m: usize,
    pub eps_schedule: Vec<f64>,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl SchemeConfig {
    pub fn new(p: f64, tau: f64, horizon: f64, m: usize) -> Self {
        SchemeConfig { p, tau, horizon, m, eps_schedule: vec![], inner_tol: tol::INNER_TOL, inner_max_iter: tol::INNER_MAX_ITER }
    }

    pub fn validate(&self) -> Result<(), JkoError> {
        if !(self.p > 1.0) || !self.p.is_finite() {
            return Err(JkoError::Config(format!("p = {} must exceed 1", self.p)));
        }
        if !(self.tau > 0.0) || !(self.horizon > 0.0) || self.tau > self.horizon * (1.0 + 1e-12) {
            return Err(JkoError::Config(format!("need 0 < tau <= T (tau = {}, T = {})", self.tau, self.horizon)));
        }
        if self.m < 2 {
            return Err(JkoError::Config("m must be at least 2".into()));
        }
        if self.eps_schedule.iter().any(|e| !(*e > 0.0)) || self.eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(JkoError::Config("eps_schedule must be positive and strictly decreasing".into()));
        }
        if !(self.inner_tol > 0.0) || self.inner_max_iter == 0 {
            return Err(JkoError::Config("inner_tol and inner_max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn step_count(&self) -> usize {
        (self.horizon / self.tau - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next: QuantileRep,
    pub objective: f64,
    /// `J` at the previous state (transport cost zero): the descent certificate is `objective <= objective_prev`.
    pub objective_prev: f64,
    /// `W_p^p(next, prev) / (p h^{p-1})`.
    pub transport_term: f64,
    pub kkt_residual: f64,
    /// Roundoff floor of the KKT residual at the solution; convergence means `kkt <= max(inner_tol, floor)`.
    pub kkt_floor: f64,
    /// Mass-weighted mean of `f'(ρ_i) + φ_i/(p h^{p-1})` with `φ` normalized to mean zero.
    pub multiplier: f64,
    /// Max minus min of the same expression over cells.
    pub euler_lagrange_spread: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Endpoint constraints active at the solution.
    pub active: (bool, bool),
    /// `(eps, W_p to the previous eps-solution)` along a continuation; empty for direct solves.
    pub eps_record: Vec<(f64, f64)>,
}

struct Problem<'a> {
    prev: &'a QuantileRep,
    energy: &'a DerivedEnergy,
    p: f64,
    h: f64,
    w: Vec<f64>,
    m: usize,
    f0: f64,
    pinned: bool,
}

struct Solved {
    x: Vec<f64>,
    j: f64,
    iterations: usize,
    converged: bool,
    floor: f64,
}

struct Eval {
    j: f64,
    g: Vec<f64>,
}

impl Problem<'_> {
    fn feasible(&self, x: &[f64]) -> bool {
        let (a, b) = (self.prev.a, self.prev.b);
        x[0] >= a && x[self.m] <= b && x.windows(2).all(|w| w[1] > w[0]) && (!self.pinned || (x[0] == a && x[self.m] == b))
    }

    fn objective(&self, x: &[f64]) -> Option<f64> {
        if !self.feasible(x) {
            return None;
        }
        let mf = self.m as f64;
        let e = crate::quad::stable_sum(x.windows(2).map(|w| self.energy.g(mf * (w[1] - w[0]))));
        let mut j = e / mf;
        if !self.pinned {
            let vac = (x[0] - self.prev.a) + (self.prev.b - x[self.m]);
            if vac > 0.0 {
                j += self.f0 * vac;
            }
        }
        j += crate::quad::stable_sum(x.iter().zip(&self.prev.x).zip(&self.w).map(|((u, v), w)| w * (u - v).abs().powf(self.p))) / (self.p * self.h.powf(self.p - 1.0));
        if j.is_finite() {
            Some(j)
        } else {
            None
        }
    }

    fn energy_gradient(&self, x: &[f64]) -> Vec<f64> {
        gradient_nodes(x, self.energy, self.pinned)
    }

    fn eval(&self, x: &[f64]) -> Option<Eval> {
        let j = self.objective(x)?;
        let mut g = self.energy_gradient(x);
        let c = 1.0 / self.h.powf(self.p - 1.0);
        for k in 0..=self.m {
            let d = x[k] - self.prev.x[k];
            g[k] += self.w[k] * c * d.abs().powf(self.p - 1.0) * d.signum();
        }
        Some(Eval { j, g })
    }

    fn active(&self, x: &[f64], g: &[f64]) -> (bool, bool) {
        let a0 = self.pinned || (x[0] <= self.prev.a && g[0] > 0.0);
        let am = self.pinned || (x[self.m] >= self.prev.b && g[self.m] < 0.0);
        (a0, am)
    }

    fn kkt(&self, x: &[f64], g: &[f64]) -> f64 {
        let (a0, am) = self.active(x, g);
        let mut r: f64 = 0.0;
        for k in 0..=self.m {
            if (k == 0 && a0) || (k == self.m && am) {
                continue;
            }
            r = r.max(g[k].abs() / self.w[k]);
        }
        r
    }

    /// Tridiagonal Hessian `(diag, off)`; `off[k]` couples nodes `k` and `k+1`.
    fn hessian(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mf = self.m as f64;
        let mut diag = vec![0.0; self.m + 1];
        let mut off = vec![0.0; self.m];
        for i in 0..self.m {
            let c = mf * self.energy.g_second(mf * (x[i + 1] - x[i]));
            diag[i] += c;
            diag[i + 1] += c;
            off[i] = -c;
        }
        // For p < 2 the exact curvature (p-1)|d|^{p-2} makes Newton map d to -d
        // near a node that should not move; |d|^{p-2} majorizes |d|^p/p instead.
        let c = (self.p - 1.0).max(1.0) / self.h.powf(self.p - 1.0);
        let floor = 1e-15 * (self.prev.b - self.prev.a);
        for k in 0..=self.m {
            let d = (x[k] - self.prev.x[k]).abs().max(floor);
            diag[k] += self.w[k] * c * d.powf(self.p - 2.0);
        }
        (diag, off)
    }

    fn project(&self, x: &mut [f64]) {
        if self.pinned {
            x[0] = self.prev.a;
            x[self.m] = self.prev.b;
        } else {
            x[0] = x[0].max(self.prev.a);
            x[self.m] = x[self.m].min(self.prev.b);
        }
    }

    /// Stationarity resolvable in floating point: one ulp of `X` moves `g_j/w_j` by about `H_jj ulp / w_j`.
    fn kkt_floor(&self, x: &[f64], diag: &[f64]) -> f64 {
        let xs = x.iter().fold(self.prev.a.abs().max(self.prev.b.abs()), |m, v| m.max(v.abs()));
        4.0 * f64::EPSILON * xs * diag.iter().zip(&self.w).map(|(d, w)| d / w).fold(0.0, f64::max)
    }

    fn solve(&self, start: &[f64], inner_tol: f64, max_iter: usize) -> Result<Solved, JkoError> {
        let mut x = start.to_vec();
        self.project(&mut x);
        let mut cur = self.eval(&x).ok_or_else(|| JkoError::Degenerate("starting point is infeasible".into()))?;
        let mut kkt = self.kkt(&x, &cur.g);
        let mut floor = self.kkt_floor(&x, &self.hessian(&x).0);
        let mut it = 0;
        let mut stalled = 0;
        while kkt > inner_tol.max(floor) && it < max_iter && stalled < 3 {
            it += 1;
            let (a0, am) = self.active(&x, &cur.g);
            let (mut diag, mut off) = self.hessian(&x);
            floor = self.kkt_floor(&x, &diag);
            let mut rhs: Vec<f64> = cur.g.iter().map(|v| -v).collect();
            for (k, act) in [(0, a0), (self.m, am)] {
                if act {
                    diag[k] = 1.0;
                    rhs[k] = 0.0;
                    if k < self.m {
                        off[k] = 0.0;
                    }
                    if k > 0 {
                        off[k - 1] = 0.0;
                    }
                }
            }
            let mut dir = thomas(&diag, &off, &rhs);
            let mut slope: f64 = dir.iter().zip(&cur.g).map(|(d, g)| d * g).sum();
            if !(slope < 0.0) || dir.iter().any(|v| !v.is_finite()) {
                dir = rhs.iter().zip(&diag).map(|(r, d)| r / d).collect();
                slope = dir.iter().zip(&cur.g).map(|(d, g)| d * g).sum();
            }
            let step = match self.line_search(&x, &cur, &dir, slope) {
                Some(s) => Some(s),
                None => {
                    // Diagonally scaled projected gradient as a fallback.
                    let pg: Vec<f64> = rhs.iter().zip(&diag).map(|(r, d)| r / d).collect();
                    let s: f64 = pg.iter().zip(&cur.g).map(|(d, g)| d * g).sum();
                    self.line_search(&x, &cur, &pg, s)
                }
            };
            let Some((nx, ne)) = step else {
                if kkt <= 16.0 * inner_tol.max(floor) {
                    break;
                }
                return Err(JkoError::LineSearchStall { kkt });
            };
            stalled = if nx == x { stalled + 1 } else { 0 };
            x = nx;
            cur = ne;
            kkt = self.kkt(&x, &cur.g);
        }
        let converged = kkt <= inner_tol.max(floor);
        Ok(Solved { x, j: cur.j, iterations: it, converged, floor })
    }

    fn line_search(&self, x: &[f64], cur: &Eval, dir: &[f64], slope: f64) -> Option<(Vec<f64>, Eval)> {
        let roundoff = slope.abs() < 1e-12 * (1.0 + cur.j.abs());
        let mut alpha = 1.0;
        for _ in 0..80 {
            let mut nx: Vec<f64> = x.iter().zip(dir).map(|(u, d)| u + alpha * d).collect();
            self.project(&mut nx);
            if let Some(ne) = self.eval(&nx) {
                let moved: f64 = nx.iter().zip(x).zip(&cur.g).map(|((u, v), g)| (u - v) * g).sum();
                if ne.j <= cur.j + 1e-4 * moved || (roundoff && ne.j <= cur.j + 1e-14 * (1.0 + cur.j.abs())) {
                    return Some((nx, ne));
                }
            }
            alpha *= 0.5;
        }
        None
    }

    fn finish(&self, sol: Solved) -> StepResult {
        let Solved { x, j, iterations, converged, floor } = sol;
        let g = self.eval(&x).map(|e| e.g).unwrap_or_else(|| vec![0.0; self.m + 1]);
        let kkt = self.kkt(&x, &g);
        let active = self.active(&x, &g);
        let next = QuantileRep { a: self.prev.a, b: self.prev.b, x };
        let wpp = measure::wasserstein_pp(&next, self.prev, self.p).unwrap_or(f64::NAN);
        let transport_term = wpp / (self.p * self.h.powf(self.p - 1.0));
        let objective_prev = self.objective(&self.prev.x).unwrap_or(f64::INFINITY);
        let (multiplier, spread) = self.multiplier(&next);
        StepResult {
            next,
            objective: j,
            objective_prev,
            transport_term,
            kkt_residual: kkt,
            kkt_floor: floor,
            multiplier,
            euler_lagrange_spread: spread,
            iterations,
            converged,
            active,
            eps_record: vec![],
        }
    }

    /// Discrete `f'(ρ) + φ/(p h^{p-1})` per cell, with `φ' = p|x - T(x)|^{p-2}(x - T(x))` integrated over cell midpoints.
    fn multiplier(&self, next: &QuantileRep) -> (f64, f64) {
        let m = self.m;
        let mid: Vec<f64> = next.x.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let mut phi = vec![0.0; m];
        for i in 1..m {
            let d = next.x[i] - self.prev.x[i];
            phi[i] = phi[i - 1] + self.p * d.abs().powf(self.p - 1.0) * d.signum() * (mid[i] - mid[i - 1]);
        }
        let mean_phi = phi.iter().sum::<f64>() / m as f64;
        let c = 1.0 / (self.p * self.h.powf(self.p - 1.0));
        let vals: Vec<f64> = next.cell_densities().iter().zip(&phi).map(|(r, ph)| self.energy.fp(*r) + (ph - mean_phi) * c).collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (mean, hi - lo)
    }
}

/// Solves a symmetric tridiagonal system.
fn thomas(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    c[0] = if n > 1 { off[0] / beta } else { 0.0 };
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - off[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = off[i] / beta;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / beta;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

fn problem<'a>(prev: &'a QuantileRep, energy: &'a DerivedEnergy, p: f64, h: f64) -> Result<Problem<'a>, JkoError> {
    if !(p > 1.0) || !(h > 0.0) {
        return Err(JkoError::Config(format!("need p > 1 and a positive step (p = {p}, h = {h})")));
    }
    if !prev.is_strictly_monotone() {
        return Err(JkoError::Degenerate("previous quantiles must be strictly increasing".into()));
    }
    let f0 = energy.f_at_zero();
    let pinned = !f0.is_finite();
    if pinned && (prev.x[0] != prev.a || prev.x[prev.m()] != prev.b) {
        return Err(JkoError::Degenerate("f(0+) is infinite, so the density must fill the interval".into()));
    }
    Ok(Problem { prev, energy, p, h, w: prev.node_weights(), m: prev.m(), f0, pinned })
}

/// Gradient of the energy part: `g_j = L_f(ρ_j) - L_f(ρ_{j-1})`, with `L_f(0) = -f(0)` outside.
fn gradient_nodes(x: &[f64], energy: &DerivedEnergy, pinned: bool) -> Vec<f64> {
    let m = x.len() - 1;
    let mf = m as f64;
    let lf: Vec<f64> = x.windows(2).map(|w| energy.lf(1.0 / (mf * (w[1] - w[0])))).collect();
    let mut g = vec![0.0; m + 1];
    let lf0 = -energy.f_at_zero();
    if !pinned {
        g[0] = lf[0] - lf0;
        g[m] = lf0 - lf[m - 1];
    }
    for j in 1..m {
        g[j] = lf[j] - lf[j - 1];
    }
    g
}

/// Energy gradient in quantile coordinates with the normal cone of `[a, b]` removed:
/// pinned endpoints and endpoints pressed against a wall get 0.
pub fn energy_gradient(xr: &QuantileRep, energy: &DerivedEnergy) -> Vec<f64> {
    let pinned = !energy.f_at_zero().is_finite();
    let mut g = gradient_nodes(&xr.x, energy, pinned);
    let m = xr.m();
    if xr.x[0] <= xr.a && g[0] > 0.0 {
        g[0] = 0.0;
    }
    if xr.x[m] >= xr.b && g[m] < 0.0 {
        g[m] = 0.0;
    }
    g
}

/// One step from `prev` with effective step `tau_eff` for `f + eps z log z`, warm-started at `start`.
pub fn jko_step_from(prev: &QuantileRep, start: &QuantileRep, energy: &DerivedEnergy, p: f64, tau_eff: f64, eps: f64, inner_tol: f64, max_iter: usize) -> Result<StepResult, JkoError> {
    if eps < 0.0 {
        return Err(JkoError::Config(format!("eps = {eps} must be nonnegative")));
    }
    let reg = energy.regularized(eps).map_err(|e| JkoError::Config(e.to_string()))?;
    if !reg.is_superlinear() {
        return Err(JkoError::NotSuperlinear);
    }
    if start.m() != prev.m() || !start.is_strictly_monotone() {
        return Err(JkoError::Degenerate("warm start must match m and be strictly increasing".into()));
    }
    let pr = problem(prev, &reg, p, tau_eff)?;
    let sol = pr.solve(&start.x, inner_tol, max_iter)?;
    Ok(pr.finish(sol))
}

pub fn jko_step(prev: &QuantileRep, energy: &DerivedEnergy, p: f64, tau_eff: f64, eps: f64) -> Result<StepResult, JkoError> {
    jko_step_from(prev, prev, energy, p, tau_eff, eps, tol::INNER_TOL, tol::INNER_MAX_ITER)
}

pub fn degiorgi_step(prev: &QuantileRep, energy: &DerivedEnergy, p: f64, tau: f64, s: f64) -> Result<StepResult, JkoError> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(JkoError::RangeError(s));
    }
    jko_step(prev, energy, p, s * tau, 0.0)
}

/// Solves along a decreasing eps schedule with warm starts, then at eps = 0 when `f` is superlinear.
pub fn epsilon_continuation(prev: &QuantileRep, energy: &DerivedEnergy, p: f64, tau_eff: f64, eps_schedule: &[f64], inner_tol: f64, max_iter: usize) -> Result<StepResult, JkoError> {
    if eps_schedule.is_empty() || eps_schedule.iter().any(|e| !(*e > 0.0)) || eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(JkoError::Config("eps schedule must be nonempty, positive and strictly decreasing".into()));
    }
    let mut legs: Vec<f64> = eps_schedule.to_vec();
    if energy.is_superlinear() {
        legs.push(0.0);
    }
    let mut record = vec![];
    let mut last: Option<StepResult> = None;
    let mut total_it = 0;
    for &eps in &legs {
        let start = last.as_ref().map(|r| r.next.clone()).unwrap_or_else(|| prev.clone());
        let r = jko_step_from(prev, &start, energy, p, tau_eff, eps, inner_tol, max_iter)?;
        total_it += r.iterations;
        let dist = match &last {
            Some(l) => measure::wasserstein_p(&r.next, &l.next, p)?,
            None => f64::NAN,
        };
        record.push((eps, dist));
        last = Some(r);
    }
    let mut out = last.expect("at least one leg");
    out.iterations = total_it;
    out.eps_record = record;
    Ok(out)
}

/// Final eps used for the energy in the ledger: 0 for superlinear energies, the last schedule entry otherwise.
pub fn ledger_eps(energy: &DerivedEnergy, eps_schedule: &[f64]) -> f64 {
    if energy.is_superlinear() {
        0.0
    } else {
        eps_schedule.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<QuantileRep>,
    pub results: Vec<StepResult>,
    pub config: SchemeConfig,
    pub energy: DerivedEnergy,
    /// Set when the run stopped early; `steps` then holds the partial trajectory.
    pub failure: Option<JkoError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolant {
    Constant,
    Geodesic,
    DeGiorgi,
}

impl Trajectory {
    pub fn tau(&self) -> f64 {
        self.config.tau
    }

    pub fn p(&self) -> f64 {
        self.config.p
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none() && self.steps.len() == self.config.step_count() + 1
    }

    /// Energy actually minimized at every step (`f` or `f_ε` with the final schedule entry).
    pub fn ledger_energy(&self) -> DerivedEnergy {
        let eps = ledger_eps(&self.energy, &self.config.eps_schedule);
        self.energy.regularized(eps).expect("eps is nonnegative")
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.config.tau
    }

    pub fn interpolant(&self, t: f64, kind: Interpolant) -> Result<QuantileRep, JkoError> {
        let tau = self.config.tau;
        let last = self.steps.len() - 1;
        let t_end = last as f64 * tau;
        if !(t >= 0.0 && t <= t_end * (1.0 + 1e-12)) {
            return Err(JkoError::RangeError(t));
        }
        if t == 0.0 {
            return Ok(self.steps[0].clone());
        }
        let k = (((t / tau) - 1e-12).ceil() as usize).clamp(1, last) - 1;
        let lambda = ((t - k as f64 * tau) / tau).clamp(0.0, 1.0);
        match kind {
            Interpolant::Constant => Ok(self.steps[k + 1].clone()),
            Interpolant::Geodesic => Ok(self.steps[k].lerp(&self.steps[k + 1], lambda)?),
            Interpolant::DeGiorgi => {
                let e = self.ledger_energy();
                Ok(jko_step_from(&self.steps[k], &self.steps[k + 1], &e, self.config.p, lambda * tau, 0.0, self.config.inner_tol, self.config.inner_max_iter)?.next)
            }
        }
    }

    /// Node velocities `(X^{k+1}_i - X^k_i)/τ`.
    pub fn velocity(&self, k: usize) -> Result<Vec<f64>, JkoError> {
        if k + 1 >= self.steps.len() {
            return Err(JkoError::RangeError(k as f64 * self.config.tau));
        }
        let tau = self.config.tau;
        Ok(self.steps[k + 1].x.iter().zip(&self.steps[k].x).map(|(u, v)| (u - v) / tau).collect())
    }

    /// `(1/p) Σ w_i |v_i|^p`.
    pub fn kinetic_term(&self, k: usize) -> Result<f64, JkoError> {
        let v = self.velocity(k)?;
        let w = self.steps[k].node_weights();
        let p = self.config.p;
        Ok(v.iter().zip(&w).map(|(v, w)| w * v.abs().powf(p)).sum::<f64>() / p)
    }
}

/// Runs `⌈T/τ⌉` steps from `rho0`.
pub fn run_scheme(rho0: &GridDensity, config: &SchemeConfig, energy: &DerivedEnergy) -> Result<Trajectory, JkoError> {
    config.validate()?;
    if !energy.is_superlinear() && config.eps_schedule.is_empty() {
        return Err(JkoError::NotSuperlinear);
    }
    let x0 = measure::density_to_quantile(rho0, config.m)?;
    if !x0.is_strictly_monotone() {
        return Err(JkoError::Degenerate("initial quantiles have zero gaps".into()));
    }
    let f0 = measure::energy_quantile_form(&x0, energy)?;
    if !f0.is_finite() {
        return Err(JkoError::Degenerate("initial energy is infinite".into()));
    }
    run_from_quantiles(x0, config, energy)
}

pub fn run_from_quantiles(x0: QuantileRep, config: &SchemeConfig, energy: &DerivedEnergy) -> Result<Trajectory, JkoError> {
    config.validate()?;
    let mut traj = Trajectory { steps: vec![x0], results: vec![], config: config.clone(), energy: energy.clone(), failure: None };
    let n = config.step_count();
    let mut unconverged_streak = 0;
    for _ in 0..n {
        let prev = traj.steps.last().unwrap().clone();
        let res = if config.eps_schedule.is_empty() {
            jko_step_from(&prev, &prev, energy, config.p, config.tau, 0.0, config.inner_tol, config.inner_max_iter)
        } else {
            epsilon_continuation(&prev, energy, config.p, config.tau, &config.eps_schedule, config.inner_tol, config.inner_max_iter)
        };
        match res {
            Ok(r) => {
                unconverged_streak = if r.converged { 0 } else { unconverged_streak + 1 };
                let (it, kkt) = (r.iterations, r.kkt_residual);
                traj.steps.push(r.next.clone());
                traj.results.push(r);
                if unconverged_streak >= 2 {
                    traj.failure = Some(JkoError::MaxIterations { iterations: it, kkt });
                    break;
                }
            }
            Err(e) => {
                traj.failure = Some(e);
                break;
            }
        }
    }
    Ok(traj)
}
