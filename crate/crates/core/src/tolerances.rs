//! Tolerances in effect for every assertion. The manifest echoes [`all`].

/// Probe grids for convexity, McCann and growth checks: geometric, `[1e-4, 1e4]`.
pub const PROBE_LO: f64 = 1e-4;
pub const PROBE_HI: f64 = 1e4;
pub const PROBE_POINTS: usize = 256;

/// Absolute slack on sampled second and first differences.
pub const CONVEXITY_ABS: f64 = 1e-10;

/// Default KKT residual bound for the inner Newton solver.
pub const INNER_TOL: f64 = 1e-10;
pub const INNER_MAX_ITER: usize = 200;

/// Densities below this fraction of the maximum are treated as vacuum in gradient integrands.
pub const VACUUM_FRACTION: f64 = 1e-12;

/// Relative slack of the cellwise chain-rule Step 2 bound.
pub const STEP2_REL: f64 = 1e-6;

/// Ledger inequalities use `max(LEDGER_FLOOR, 10 · inner_tol) · (1 + scale)`.
pub const LEDGER_FLOOR: f64 = 1e-7;

/// Per-step slack on TV and Rényi monotonicity.
pub const MONOTONE_ABS: f64 = 1e-7;

/// Energy monotonicity along a trajectory, relative to `1 + |F(ρ₀)|`.
pub const ENERGY_MONOTONE_REL: f64 = 1e-9;

/// Finite-difference oracle: CFL safety factor and the degenerate-gradient guard.
pub const FD_CFL: f64 = 0.45;
pub const FD_DELTA: f64 = 1e-6;
pub const FD_MIN_DT: f64 = 1e-12;

/// Mass renormalization guard for density grids.
pub const MASS_TOL: f64 = 1e-10;

pub fn ledger_tol(inner_tol: f64, scale: f64) -> f64 {
    LEDGER_FLOOR.max(10.0 * inner_tol) * (1.0 + scale.abs())
}

/// Name/value pairs for the run manifest.
pub fn all() -> Vec<(&'static str, f64)> {
    vec![
        ("probe_lo", PROBE_LO),
        ("probe_hi", PROBE_HI),
        ("probe_points", PROBE_POINTS as f64),
        ("convexity_abs", CONVEXITY_ABS),
        ("inner_tol_default", INNER_TOL),
        ("vacuum_fraction", VACUUM_FRACTION),
        ("step2_rel", STEP2_REL),
        ("ledger_floor", LEDGER_FLOOR),
        ("monotone_abs", MONOTONE_ABS),
        ("energy_monotone_rel", ENERGY_MONOTONE_REL),
        ("fd_cfl", FD_CFL),
        ("fd_delta", FD_DELTA),
        ("fd_min_dt", FD_MIN_DT),
        ("mass_tol", MASS_TOL),
    ]
}
