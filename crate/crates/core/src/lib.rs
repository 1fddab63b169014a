//! p-JKO minimizing movements for `∂_t ρ = Δ_q(H(ρ))` on an interval.
//!
//! The solver state is a quantile function on a uniform mass grid, so each
//! step `ρ_{k+1} = argmin F(ρ) + W_p^p(ρ, ρ_k)/(p τ^{p-1})` is a finite,
//! strictly convex problem. [`diagnostics`] turns a trajectory into a ledger
//! of the dissipation inequalities and [`reference`] is an explicit
//! finite-difference solver of the limit PDE used as an oracle.

pub mod diagnostics;
pub mod energy;
pub mod jko;
pub mod measure;
pub mod quad;
pub mod reference;
pub mod suites;
pub mod tolerances;
