//! Numeric ledger of the dissipation inequalities along a trajectory.
//!
//! Apart from [`slope_term`] and [`step2_bound_check`], which take density
//! grids, everything here works on quantile representations directly. The
//! density of a quantile rep is piecewise constant with mass `1/m` per cell.
//! Its gradients live on the mass nodes, with the trapezoid weights `w_j`
//! of the transport metric: at node `j`, `∇L_f(ρ)/ρ ≈ g_j/w_j` with
//! `g = jko::energy_gradient`.

use thiserror::Error;

use crate::energy::{self, DerivedEnergy, EnergyError, EnergySpec};
use crate::jko::{self, JkoError, Trajectory};
use crate::measure::{self, GridDensity, MeasureError, QuantileRep};
use crate::quad;
use crate::reference::CompareTable;
use crate::tolerances as tol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("trajectory is incomplete: {steps} of {expected} steps")]
    IncompleteTrajectory { steps: usize, expected: usize },
    #[error("value {0} out of range")]
    RangeError(f64),
    #[error(transparent)]
    Jko(#[from] JkoError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeEvaluation {
    /// `(1/q) ∫ |∇L_f(ρ)/ρ|^q ρ`.
    pub via_lf: f64,
    /// `(1/q) ∫ |∇f'(ρ)|^q ρ`.
    pub via_fp: f64,
}

/// Slope functional on a density grid, evaluated twice.
///
/// Differences sit on cell faces. The face density is `ρ̃ = ∫ z f'' / ∫ f''`
/// over the two neighbouring values, computed by quadrature. `ΔL_f / ρ̃` and
/// `Δf'` then agree exactly when `L_f' = z f''`. Faces touching a cell below
/// `VACUUM_FRACTION · max ρ` are dropped.
pub fn slope_term_dual(rho: &GridDensity, energy: &DerivedEnergy, q: f64) -> Result<SlopeEvaluation, DiagnosticsError> {
    if !(q > 1.0) {
        return Err(DiagnosticsError::RangeError(q));
    }
    rho.validate()?;
    let max = rho.values.iter().cloned().fold(0.0, f64::max);
    let cut = tol::VACUUM_FRACTION * max;
    if !energy.f_at_zero().is_finite() && rho.values.iter().any(|v| *v <= cut) {
        return Err(DiagnosticsError::DomainError("L_f(0+) is infinite and the density vanishes".into()));
    }
    let dx = rho.dx();
    let (mut a, mut b) = (0.0, 0.0);
    for w in rho.values.windows(2) {
        let (r0, r1) = (w[0], w[1]);
        if r0 <= cut || r1 <= cut || r0 == r1 {
            continue;
        }
        let (lo, hi) = (r0.min(r1), r0.max(r1));
        let mass = |f: &dyn Fn(f64) -> f64| {
            let est = quad::gauss8(f, lo, hi);
            if hi / lo < 1.5 {
                est
            } else {
                quad::adaptive(f, lo, hi, 1e-15 * est.abs())
            }
        };
        let face = mass(&|z| z * energy.fpp(z)) / mass(&|z| energy.fpp(z));
        let dl = energy.lf(r1) - energy.lf(r0);
        let dfp = energy.fp(r1) - energy.fp(r0);
        a += face * (dl / (dx * face)).abs().powf(q);
        b += face * (dfp / dx).abs().powf(q);
    }
    Ok(SlopeEvaluation { via_lf: a * dx / q, via_fp: b * dx / q })
}

pub fn slope_term(rho: &GridDensity, energy: &DerivedEnergy, q: f64) -> Result<f64, DiagnosticsError> {
    Ok(slope_term_dual(rho, energy, q)?.via_lf)
}

/// `(1/q) Σ w_j |g_j/w_j|^q`, the slope of the discrete energy in the weighted `ℓ^p` metric.
pub fn quantile_slope(xr: &QuantileRep, energy: &DerivedEnergy, q: f64) -> f64 {
    let g = jko::energy_gradient(xr, energy);
    let w = xr.node_weights();
    g.iter().zip(&w).map(|(g, w)| w * (g / w).abs().powf(q)).sum::<f64>() / q
}

/// `B_p(t, x)`: `|x|^p/(p t^{p-1})` for `t > 0`, 0 at the origin, `+∞` otherwise.
pub fn bp_value(t: f64, x: f64, p: f64) -> f64 {
    if t > 0.0 {
        x.abs().powf(p) / (p * t.powf(p - 1.0))
    } else if t == 0.0 && x == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// `a w + |a|^q/q + |w|^p/p`, nonnegative with equality iff `w = -|a|^{q-2} a`.
pub fn young_integrand(a: f64, w: f64, p: f64) -> f64 {
    let q = energy::conjugate(p);
    a * w + a.abs().powf(q) / q + w.abs().powf(p) / p
}

/// `∫ρ^β dx` for the piecewise-constant density of `xr`, or `∫ρ log ρ dx` at `β = 1`.
pub fn power_integral(xr: &QuantileRep, beta: f64) -> f64 {
    let m = xr.m() as f64;
    let rho = xr.cell_densities();
    if beta == 1.0 {
        rho.iter().map(|r| r.ln()).sum::<f64>() / m
    } else {
        rho.iter().map(|r| r.powf(beta - 1.0)).sum::<f64>() / m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLedger {
    pub k: usize,
    pub t: f64,
    pub energy: f64,
    /// `W_p^p(ρ_k, ρ_{k-1}) / (p τ^{p-1})`.
    pub transport_term: f64,
    /// Slope at `ρ_k`.
    pub slope_term: f64,
    /// `(1/p) ∫|v|^p dρ` for the step into `ρ_k`.
    pub kinetic_term: f64,
    pub edi_precursor_residual: f64,
    pub tv: f64,
    pub renyi: f64,
    pub lalpha: f64,
    pub young_gap_term: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerOptions {
    pub renyi_beta: f64,
    pub lalpha_exponent: f64,
    /// De Giorgi solves for the per-step precursor (8 extra solves per step).
    pub precursor: bool,
    pub young: bool,
}

impl Default for LedgerOptions {
    fn default() -> Self {
        LedgerOptions { renyi_beta: 2.0, lalpha_exponent: 2.0, precursor: true, young: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub ledger: Vec<StepLedger>,
    /// `F(ρ₀) - F(ρ_N) - Σ_{k≥1} τ (slope_k + kinetic_k)`.
    pub global_residual: f64,
    pub tolerance: f64,
    pub energy_drop: f64,
    pub min_precursor_residual: f64,
    pub young_gap: f64,
    /// `Σ_k τ ∫_0^1 ∫ |v + (∇L_f/ρ)^{q-1}|^p dρ_λ dλ` along the geodesic interpolant.
    pub law_residual: f64,
    pub tv_decay_slope: Option<f64>,
    pub comparison: Option<CompareTable>,
}

impl RunReport {
    pub fn passes(&self) -> bool {
        self.global_residual >= -self.tolerance && self.min_precursor_residual >= -self.tolerance && self.young_gap >= -self.tolerance
    }

    /// The global residual re-derived from the ledger rows.
    pub fn recompute_global(&self, tau: f64) -> f64 {
        let (first, last) = (&self.ledger[0], &self.ledger[self.ledger.len() - 1]);
        first.energy - last.energy - self.ledger[1..].iter().map(|r| tau * (r.slope_term + r.kinetic_term)).sum::<f64>()
    }
}

/// `F(ρ_k) - F(ρ_{k+1}) - W_p^p/(p τ^{p-1}) - (1/q) ∫_0^1 W_p^p(ρ̂_s, ρ_k)/(s^p τ^{p-1}) ds`.
///
/// `ρ̂_s` is the De Giorgi minimizer with step `sτ`; the integral uses 8 Gauss points.
pub fn precursor_residual(prev: &QuantileRep, next: &QuantileRep, energy: &DerivedEnergy, p: f64, tau: f64, inner_tol: f64, max_iter: usize) -> Result<f64, DiagnosticsError> {
    let q = energy::conjugate(p);
    let mut start = prev.clone();
    let mut integral = 0.0;
    for (s, w) in quad::gauss_legendre_unit() {
        let r = jko::jko_step_from(prev, &start, energy, p, s * tau, 0.0, inner_tol, max_iter)?;
        let d = measure::wasserstein_pp(&r.next, prev, p)?;
        integral += w * d / (s.powf(p) * tau.powf(p - 1.0));
        start = r.next;
    }
    let f0 = measure::energy_quantile_form(prev, energy)?;
    let f1 = measure::energy_quantile_form(next, energy)?;
    let wpp = measure::wasserstein_pp(next, prev, p)?;
    Ok(f0 - f1 - wpp / (p * tau.powf(p - 1.0)) - integral / q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoungStep {
    pub gap: f64,
    pub law_residual: f64,
    /// `F(ρ_k) - F(ρ_{k+1}) + τ ∫_0^1 Σ g(X_λ)·v dλ`; zero up to quadrature.
    pub chain_rule_defect: f64,
}

/// Young gap of one step along the geodesic `X_λ = (1-λ) X^k + λ X^{k+1}`,
/// with the constant velocity `v = (X^{k+1} - X^k)/τ` and 8 Gauss points in `λ`.
pub fn young_step(prev: &QuantileRep, next: &QuantileRep, energy: &DerivedEnergy, p: f64, tau: f64) -> Result<YoungStep, DiagnosticsError> {
    let q = energy::conjugate(p);
    let w = prev.node_weights();
    let v: Vec<f64> = next.x.iter().zip(&prev.x).map(|(u, x)| (u - x) / tau).collect();
    let (mut gap, mut law, mut pairing) = (0.0, 0.0, 0.0);
    for (lambda, lw) in quad::gauss_legendre_unit() {
        let xl = prev.lerp(next, lambda)?;
        let g = jko::energy_gradient(&xl, energy);
        for j in 0..w.len() {
            let a = g[j] / w[j];
            gap += lw * w[j] * young_integrand(a, v[j], p);
            law += lw * w[j] * (v[j] + a.abs().powf(q - 1.0) * a.signum()).abs().powf(p);
            pairing += lw * g[j] * v[j];
        }
    }
    let f0 = measure::energy_quantile_form(prev, energy)?;
    let f1 = measure::energy_quantile_form(next, energy)?;
    Ok(YoungStep { gap: tau * gap, law_residual: tau * law, chain_rule_defect: f0 - f1 + tau * pairing })
}

/// Ledger rows for whatever steps `traj` holds.
pub fn ledger(traj: &Trajectory, opts: &LedgerOptions) -> Result<Vec<StepLedger>, DiagnosticsError> {
    let e = traj.ledger_energy();
    let (p, tau) = (traj.p(), traj.tau());
    let q = energy::conjugate(p);
    let mut rows = Vec::with_capacity(traj.steps.len());
    for (k, x) in traj.steps.iter().enumerate() {
        let mut row = StepLedger {
            k,
            t: traj.time(k),
            energy: measure::energy_quantile_form(x, &e)?,
            transport_term: 0.0,
            slope_term: quantile_slope(x, &e, q),
            kinetic_term: 0.0,
            edi_precursor_residual: 0.0,
            tv: x.total_variation(),
            renyi: power_integral(x, opts.renyi_beta),
            lalpha: power_integral(x, opts.lalpha_exponent),
            young_gap_term: 0.0,
        };
        if k > 0 {
            let prev = &traj.steps[k - 1];
            row.transport_term = measure::wasserstein_pp(x, prev, p)? / (p * tau.powf(p - 1.0));
            row.kinetic_term = traj.kinetic_term(k - 1)?;
            if opts.precursor {
                row.edi_precursor_residual = precursor_residual(prev, x, &e, p, tau, traj.config.inner_tol, traj.config.inner_max_iter)?;
            }
            if opts.young {
                row.young_gap_term = young_step(prev, x, &e, p, tau)?.gap;
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn require_complete(traj: &Trajectory) -> Result<(), DiagnosticsError> {
    if !traj.is_complete() {
        return Err(DiagnosticsError::IncompleteTrajectory { steps: traj.steps.len() - 1, expected: traj.config.step_count() });
    }
    Ok(())
}

/// Discrete EDI over a complete trajectory.
///
/// The slope in the global residual is taken at the implicit endpoint of
/// each step. Convexity of the discrete energy makes the residual a sum of
/// Bregman gaps, which is nonnegative and vanishes as `τ → 0`.
pub fn edi_report(traj: &Trajectory, opts: &LedgerOptions) -> Result<RunReport, DiagnosticsError> {
    require_complete(traj)?;
    let rows = ledger(traj, opts)?;
    let tau = traj.tau();
    let f0 = rows[0].energy;
    let fn_ = rows[rows.len() - 1].energy;
    let dissipated: f64 = rows[1..].iter().map(|r| tau * (r.slope_term + r.kinetic_term)).sum();
    let mut law = 0.0;
    if opts.young {
        let e = traj.ledger_energy();
        for k in 0..traj.steps.len() - 1 {
            law += young_step(&traj.steps[k], &traj.steps[k + 1], &e, traj.p(), tau)?.law_residual;
        }
    }
    let bv = bv_checks(traj);
    Ok(RunReport {
        global_residual: f0 - fn_ - dissipated,
        tolerance: tol::ledger_tol(traj.config.inner_tol, f0),
        energy_drop: f0 - fn_,
        min_precursor_residual: rows[1..].iter().map(|r| r.edi_precursor_residual).fold(f64::INFINITY, f64::min),
        young_gap: rows.iter().map(|r| r.young_gap_term).sum(),
        law_residual: law,
        tv_decay_slope: bv.decay_slope,
        comparison: None,
        ledger: rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct YoungReport {
    pub total: f64,
    pub law_residual: f64,
    pub steps: Vec<YoungStep>,
}

pub fn young_gap(traj: &Trajectory) -> Result<YoungReport, DiagnosticsError> {
    require_complete(traj)?;
    let e = traj.ledger_energy();
    let steps = traj.steps.windows(2).map(|w| young_step(&w[0], &w[1], &e, traj.p(), traj.tau())).collect::<Result<Vec<_>, _>>()?;
    Ok(YoungReport { total: steps.iter().map(|s| s.gap).sum(), law_residual: steps.iter().map(|s| s.law_residual).sum(), steps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowInterchangeReport {
    pub beta: f64,
    /// `∫ρ_k^β` (or `∫ρ_k log ρ_k`) for every step.
    pub values: Vec<f64>,
    pub max_increase: f64,
    pub monotone: bool,
    /// `τ ∫|∇h(ρ_{k+1})|^q` per step, with `h' = z^{(β-1)/q} f''^{1/p}`.
    pub dissipation: Vec<f64>,
    /// `(∫ρ₀^β - ∫ρ_N^β)/(β-1) - Σ dissipation`, for `β > 1`.
    pub budget_slack: Option<f64>,
    pub tolerance: f64,
}

/// `∫|∇h(ρ)|^q dx` on the mass nodes: `Σ_j |Δh_j|^q (min(ρ_{j-1}, ρ_j)/w_j)^{q-1}`.
///
/// Hölder on `Δh = ∫ z^{(β-1)/q} f''^{1/p}` bounds each term by
/// `ΔL_H (ΔL_f)^{q-1} w^{1-q} / β`, which is what a step dissipates.
/// Jumps to vacuum at the support edges are left out.
fn h_dissipation(xr: &QuantileRep, h: &energy::RegH, q: f64) -> Result<f64, DiagnosticsError> {
    let rho = xr.cell_densities();
    let m = xr.m() as f64;
    let mut acc = 0.0;
    for j in 1..rho.len() {
        let dh = h.increment(rho[j - 1], rho[j])?;
        acc += dh.abs().powf(q) * (rho[j - 1].min(rho[j]) * m).powf(q - 1.0);
    }
    Ok(acc)
}

pub fn flow_interchange_check(traj: &Trajectory, beta: f64) -> Result<FlowInterchangeReport, DiagnosticsError> {
    if !(beta >= 0.0) {
        return Err(DiagnosticsError::RangeError(beta));
    }
    let values: Vec<f64> = traj.steps.iter().map(|x| power_integral(x, beta)).collect();
    let max_increase = values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let e = traj.ledger_energy();
    let (p, tau) = (traj.p(), traj.tau());
    let q = energy::conjugate(p);
    let h = energy::reg_h_with_alpha(e.spec(), p, beta)?;
    let dissipation = traj.steps[1..].iter().map(|x| Ok(tau * h_dissipation(x, &h, q)?)).collect::<Result<Vec<f64>, DiagnosticsError>>()?;
    let budget_slack = (beta > 1.0).then(|| (values[0] - values[values.len() - 1]) / (beta - 1.0) - dissipation.iter().sum::<f64>());
    let scale = if beta > 1.0 { values[0] / (beta - 1.0) } else { values[0] };
    Ok(FlowInterchangeReport {
        beta,
        monotone: max_increase <= tol::MONOTONE_ABS,
        max_increase,
        values,
        dissipation,
        budget_slack,
        tolerance: tol::ledger_tol(traj.config.inner_tol, scale),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvReport {
    pub tv: Vec<f64>,
    pub max_increase: f64,
    pub monotone: bool,
    /// `sup_{k≥1} TV(ρ_k) (kτ)^{1/q}`.
    pub regularization_constant: f64,
    /// Least-squares slope of `log TV` against `log t` for `t ∈ [τ, 10τ]`.
    pub decay_slope: Option<f64>,
}

pub fn bv_checks(traj: &Trajectory) -> BvReport {
    let tv: Vec<f64> = traj.steps.iter().map(|x| x.total_variation()).collect();
    let max_increase = tv.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let q = energy::conjugate(traj.p());
    let regularization_constant = tv.iter().enumerate().skip(1).map(|(k, v)| v * traj.time(k).powf(1.0 / q)).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = (1..tv.len()).filter(|&k| k <= 10 && tv[k] > 0.0).map(|k| (traj.time(k).ln(), tv[k].ln())).collect();
    BvReport { monotone: max_increase <= tol::MONOTONE_ABS, max_increase, regularization_constant, decay_slope: fit_slope(&pts), tv }
}

fn fit_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step2Report {
    /// `K = C₂ / C_θ^{1/p}`, from `f̃₂'' <= C₂ z^{-(1+1/d)}` and `f'' >= C_θ z^{-θ}`.
    pub constant: f64,
    pub cells: usize,
    pub violations: usize,
    /// `max |ΔL_{f̃₂}(ρ)| / (K max(ρ)^{1/p} |Δh(ρ)|)` over the stencils with a nonzero right side.
    pub max_ratio: f64,
    /// `∫ |∇L_{f̃₂}(ρ)|^q / ρ^{q-1}`.
    pub lhs_integral: f64,
    /// `K^q ∫ |∇h(ρ)|^q`.
    pub rhs_integral: f64,
}

impl Step2Report {
    pub fn holds(&self) -> bool {
        self.violations == 0 && self.lhs_integral <= self.rhs_integral * (1.0 + tol::STEP2_REL)
    }
}

/// `|∇L_{f̃₂}(ρ)| <= K ρ^{1/p} |∇h(ρ)|` on interior cells.
///
/// Central differences over `(ρ_{i-1}, ρ_{i+1})`, with `ρ^{1/p}` taken at the
/// larger of the two so that the cellwise inequality follows from the
/// pointwise bound on `(L_{f̃₂})'`.
pub fn step2_bound_check(rho: &GridDensity, spec: &EnergySpec, p: f64, d: u32, z0: f64, z1: f64) -> Result<Step2Report, DiagnosticsError> {
    rho.validate()?;
    let dec = energy::decompose_truncated(spec, z0, z1, d)?;
    let h = energy::reg_h_prime(spec, p, d)?;
    let q = energy::conjugate(p);
    let k = dec.f2_growth_constant / spec.theta_constant.powf(1.0 / p);
    let (r, dx) = (&rho.values, rho.dx());
    let mut rep = Step2Report { constant: k, cells: 0, violations: 0, max_ratio: 0.0, lhs_integral: 0.0, rhs_integral: 0.0 };
    for i in 1..r.len().saturating_sub(1) {
        let (lo, hi) = (r[i - 1], r[i + 1]);
        if lo <= 0.0 || r[i] <= 0.0 || hi <= 0.0 {
            continue;
        }
        rep.cells += 1;
        let gl = (dec.lf2(hi) - dec.lf2(lo)) / (2.0 * dx);
        let gh = h.increment(lo, hi)? / (2.0 * dx);
        let rhs = k * lo.max(hi).powf(1.0 / p) * gh.abs();
        if gl.abs() > rhs * (1.0 + tol::STEP2_REL) {
            rep.violations += 1;
        }
        if rhs > 0.0 {
            rep.max_ratio = rep.max_ratio.max(gl.abs() / rhs);
        }
        rep.lhs_integral += gl.abs().powf(q) / r[i].powf(q - 1.0) * dx;
        rep.rhs_integral += (k * gh.abs()).powf(q) * dx;
    }
    Ok(rep)
}
