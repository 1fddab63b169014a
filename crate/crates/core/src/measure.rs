//! Probability densities on an interval `(a, b)` in two coordinates.
//!
//! [`GridDensity`] samples a density at the midpoints of `n` equal cells.
//! [`QuantileRep`] stores the quantile function at the nodes `s = i/m` of a
//! uniform mass grid; mass cell `i` is `(X_{i-1}, X_i)` and carries `1/m`.
//! In quantile coordinates the Wasserstein distance is an `L^p` norm.

use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::energy::DerivedEnergy;
use crate::tolerances as tol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("degenerate quantiles: {0}")]
    DegenerateError(String),
    #[error("instance too large for exhaustive enumeration: {0}")]
    SizeError(String),
    #[error("energy undefined: {0}")]
    DomainError(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub a: f64,
    pub b: f64,
    pub values: Vec<f64>,
}

impl GridDensity {
    /// Validates nonnegativity and unit midpoint mass (to 1e-10).
    pub fn new(a: f64, b: f64, values: Vec<f64>) -> Result<Self, MeasureError> {
        let g = GridDensity { a, b, values };
        g.validate()?;
        Ok(g)
    }

    /// Rescales nonnegative samples to unit mass.
    pub fn normalized(a: f64, b: f64, values: Vec<f64>) -> Result<Self, MeasureError> {
        if !(b > a) || values.is_empty() {
            return Err(MeasureError::InvalidDensity(format!("need a < b and n >= 1 (a = {a}, b = {b}, n = {})", values.len())));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(MeasureError::InvalidDensity("values must be finite and nonnegative".into()));
        }
        let dx = (b - a) / values.len() as f64;
        let mass: f64 = values.iter().sum::<f64>() * dx;
        if !(mass > 0.0) {
            return Err(MeasureError::InvalidDensity("zero mass".into()));
        }
        Ok(GridDensity { a, b, values: values.into_iter().map(|v| v / mass).collect() })
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        if !(self.b > self.a) || self.values.is_empty() {
            return Err(MeasureError::InvalidDensity("need a < b and n >= 1".into()));
        }
        if self.values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(MeasureError::InvalidDensity("values must be finite and nonnegative".into()));
        }
        let mass = self.mass();
        if (mass - 1.0).abs() > tol::MASS_TOL {
            return Err(MeasureError::InvalidDensity(format!("mass {mass} != 1")));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        (self.b - self.a) / self.values.len() as f64
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.a + (i as f64 + 0.5) * self.dx()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.midpoint(i)).collect()
    }

    pub fn mass(&self) -> f64 {
        crate::quad::stable_sum(self.values.iter().copied()) * self.dx()
    }

    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64, MeasureError> {
        if self.n() != other.n() || self.a != other.a || self.b != other.b {
            return Err(MeasureError::ShapeMismatch("grids differ".into()));
        }
        Ok(self.values.iter().zip(&other.values).map(|(u, v)| (u - v).abs()).sum::<f64>() * self.dx())
    }

    /// Writes the `x,rho` snapshot format.
    pub fn write_csv(&self, path: &Path) -> Result<(), MeasureError> {
        let io = |e: std::io::Error| MeasureError::Io(format!("{}: {e}", path.display()));
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        out.write_all(b"x,rho\n").map_err(io)?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e}", self.midpoint(i), v).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    /// Reads an `x,rho` file with equally spaced midpoints; the domain is inferred from them
    /// unless `domain` is given. The result is renormalized.
    pub fn read_csv(path: &Path, domain: Option<(f64, f64)>) -> Result<Self, MeasureError> {
        let err = |e: String| MeasureError::Io(format!("{}: {e}", path.display()));
        let mut rdr = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
        if headers.len() != 2 || headers[0].trim() != "x" || headers[1].trim() != "rho" {
            return Err(err("expected header x,rho".into()));
        }
        let (mut xs, mut vs) = (vec![], vec![]);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let x: f64 = rec[0].trim().parse().map_err(|_| err(format!("bad x '{}'", &rec[0])))?;
            let v: f64 = rec[1].trim().parse().map_err(|_| err(format!("bad rho '{}'", &rec[1])))?;
            xs.push(x);
            vs.push(v);
        }
        if xs.len() < 2 {
            return Err(err("need at least two rows".into()));
        }
        let (a, b) = match domain {
            Some(d) => d,
            None => {
                let h = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
                (xs[0] - 0.5 * h, xs[xs.len() - 1] + 0.5 * h)
            }
        };
        GridDensity::normalized(a, b, vs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileRep {
    pub a: f64,
    pub b: f64,
    pub x: Vec<f64>,
}

impl QuantileRep {
    pub fn new(a: f64, b: f64, x: Vec<f64>) -> Result<Self, MeasureError> {
        if x.len() < 2 {
            return Err(MeasureError::DegenerateError("need m >= 1".into()));
        }
        if x.windows(2).any(|w| w[1] < w[0]) || x[0] < a || x[x.len() - 1] > b {
            return Err(MeasureError::DegenerateError("quantiles must be nondecreasing inside [a, b]".into()));
        }
        Ok(QuantileRep { a, b, x })
    }

    /// Equally spaced nodes over `[a, b]`: the uniform density.
    pub fn uniform(a: f64, b: f64, m: usize) -> Self {
        let x = (0..=m).map(|i| a + (b - a) * i as f64 / m as f64).collect();
        QuantileRep { a, b, x }
    }

    pub fn m(&self) -> usize {
        self.x.len() - 1
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.x.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn is_strictly_monotone(&self) -> bool {
        self.x.windows(2).all(|w| w[1] > w[0])
    }

    /// Cell densities `ρ_i = 1/(m ΔX_i)`.
    pub fn cell_densities(&self) -> Vec<f64> {
        let m = self.m() as f64;
        self.gaps().into_iter().map(|g| 1.0 / (m * g)).collect()
    }

    /// Trapezoid weights on the mass nodes: `1/(2m)` at the ends, `1/m` inside.
    pub fn node_weights(&self) -> Vec<f64> {
        node_weights(self.m())
    }

    fn same_shape(&self, other: &QuantileRep) -> Result<(), MeasureError> {
        if self.m() != other.m() {
            return Err(MeasureError::ShapeMismatch(format!("m = {} vs {}", self.m(), other.m())));
        }
        if self.a != other.a || self.b != other.b {
            return Err(MeasureError::ShapeMismatch("intervals differ".into()));
        }
        Ok(())
    }

    /// `(1-λ) X + λ Y`, the displacement interpolant.
    pub fn lerp(&self, other: &QuantileRep, lambda: f64) -> Result<QuantileRep, MeasureError> {
        self.same_shape(other)?;
        let x = self.x.iter().zip(&other.x).map(|(u, v)| (1.0 - lambda) * u + lambda * v).collect();
        Ok(QuantileRep { a: self.a, b: self.b, x })
    }

    /// Exact total variation of the piecewise-constant density on `(a, b)`,
    /// counting jumps to vacuum at interior support edges.
    pub fn total_variation(&self) -> f64 {
        let rho = self.cell_densities();
        let mut tv: f64 = rho.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        if self.x[0] > self.a {
            tv += rho[0];
        }
        if self.x[self.m()] < self.b {
            tv += rho[rho.len() - 1];
        }
        tv
    }
}

pub fn node_weights(m: usize) -> Vec<f64> {
    let mut w = vec![1.0 / m as f64; m + 1];
    w[0] = 0.5 / m as f64;
    w[m] = 0.5 / m as f64;
    w
}

/// Inverts the CDF of the histogram defined by `rho` at `s = i/m`.
///
/// The histogram CDF is piecewise linear, so inversion is exact for it; flat
/// stretches (vacuum) resolve to their left end. `X₀` and `X_m` are the
/// support edges.
pub fn density_to_quantile(rho: &GridDensity, m: usize) -> Result<QuantileRep, MeasureError> {
    if m < 2 {
        return Err(MeasureError::DegenerateError("m must be at least 2".into()));
    }
    rho.validate()?;
    let n = rho.n();
    let dx = rho.dx();
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for &v in &rho.values {
        acc += v * dx;
        cdf.push(acc);
    }
    let total = acc;
    let first = rho.values.iter().position(|&v| v > 0.0).unwrap();
    let last = rho.values.iter().rposition(|&v| v > 0.0).unwrap();
    let mut x = Vec::with_capacity(m + 1);
    x.push(rho.a + first as f64 * dx);
    let mut j = first;
    for i in 1..m {
        let t = total * i as f64 / m as f64;
        while j < n - 1 && cdf[j + 1] < t {
            j += 1;
        }
        // Skip vacuum cells so the left-continuous inverse lands in mass.
        while j < last && rho.values[j] == 0.0 {
            j += 1;
        }
        let xi = rho.a + j as f64 * dx + ((t - cdf[j]) / rho.values[j]).clamp(0.0, dx);
        x.push(xi.max(x[i - 1]));
    }
    x.push(rho.a + (last + 1) as f64 * dx);
    let xm = x[m].min(rho.b);
    x[m] = xm;
    for i in (0..m).rev() {
        if x[i] > x[i + 1] {
            x[i] = x[i + 1];
        }
    }
    Ok(QuantileRep { a: rho.a, b: rho.b, x })
}

/// Histogram of the mass cells onto `n` equal spatial cells by overlap length.
pub fn quantile_to_density(xr: &QuantileRep, n: usize) -> GridDensity {
    let (a, b) = (xr.a, xr.b);
    let dx = (b - a) / n as f64;
    let m = xr.m();
    let cell_mass = 1.0 / m as f64;
    let mut mass = vec![0.0; n];
    let cell_of = |x: f64| (((x - a) / dx).floor() as isize).clamp(0, n as isize - 1) as usize;
    for i in 0..m {
        let (lo, hi) = (xr.x[i], xr.x[i + 1]);
        if hi <= lo {
            mass[cell_of(lo)] += cell_mass;
            continue;
        }
        let dens = cell_mass / (hi - lo);
        let (c0, c1) = (cell_of(lo), cell_of(hi));
        if c0 == c1 {
            mass[c0] += cell_mass;
            continue;
        }
        mass[c0] += dens * (a + (c0 + 1) as f64 * dx - lo);
        for c in mass.iter_mut().take(c1).skip(c0 + 1) {
            *c += dens * dx;
        }
        mass[c1] += dens * (hi - (a + c1 as f64 * dx));
    }
    let total: f64 = mass.iter().sum();
    let scale = if (total - 1.0).abs() > tol::MASS_TOL { 1.0 / total } else { 1.0 };
    GridDensity { a, b, values: mass.into_iter().map(|v| v * scale / dx).collect() }
}

/// `W_p^p` between quantile representations: trapezoid rule in `s` on the nodes.
pub fn wasserstein_pp(xr: &QuantileRep, yr: &QuantileRep, p: f64) -> Result<f64, MeasureError> {
    xr.same_shape(yr)?;
    let w = xr.node_weights();
    Ok(xr.x.iter().zip(&yr.x).zip(&w).map(|((u, v), w)| w * (u - v).abs().powf(p)).sum())
}

pub fn wasserstein_p(xr: &QuantileRep, yr: &QuantileRep, p: f64) -> Result<f64, MeasureError> {
    Ok(wasserstein_pp(xr, yr, p)?.powf(1.0 / p))
}

/// Finitely supported probability measure.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub atoms: Vec<(f64, f64)>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self, MeasureError> {
        if atoms.is_empty() || atoms.iter().any(|a| !(a.1 > 0.0) || !a.0.is_finite()) {
            return Err(MeasureError::InvalidDensity("atoms need finite locations and positive masses".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MeasureError::InvalidDensity(format!("masses sum to {total}")));
        }
        Ok(DiscreteMeasure { atoms })
    }
}

/// `W_p` of two discrete measures via their quantile step functions.
pub fn wasserstein_discrete(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> f64 {
    let sorted = |m: &DiscreteMeasure| {
        let mut v = m.atoms.clone();
        v.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        v
    };
    let (u, v) = (sorted(mu), sorted(nu));
    let (mut i, mut j) = (0, 0);
    let (mut ru, mut rv) = (u[0].1, v[0].1);
    let mut cost = 0.0;
    while i < u.len() && j < v.len() {
        let t = ru.min(rv);
        cost += t * (u[i].0 - v[j].0).abs().powf(p);
        ru -= t;
        rv -= t;
        if ru <= 1e-15 {
            i += 1;
            if i < u.len() {
                ru = u[i].1;
            }
        }
        if rv <= 1e-15 {
            j += 1;
            if j < v.len() {
                rv = v[j].1;
            }
        }
    }
    cost.powf(1.0 / p)
}

/// Exact discrete optimal transport by enumerating every basis (spanning tree of the
/// bipartite support graph) of the transportation polytope.
pub fn wasserstein_lp_oracle(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64, MeasureError> {
    let (n, m) = (mu.atoms.len(), nu.atoms.len());
    if n > 8 || m > 8 {
        return Err(MeasureError::SizeError(format!("{n} x {m} atoms (limit 8)")));
    }
    let bases = (n as f64).powi(m as i32 - 1) * (m as f64).powi(n as i32 - 1);
    if bases > 2e7 {
        return Err(MeasureError::SizeError(format!("{bases:.3e} spanning trees")));
    }
    let cost: Vec<f64> = (0..n * m).map(|e| (mu.atoms[e / m].0 - nu.atoms[e % m].0).abs().powf(p)).collect();
    let supply: Vec<f64> = mu.atoms.iter().map(|a| a.1).chain(nu.atoms.iter().map(|a| a.1)).collect();
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(n + m - 1);
    let mut parent: Vec<usize> = (0..n + m).collect();
    enumerate_trees(0, n, m, &mut chosen, &mut parent, &mut |edges| {
        if let Some(c) = tree_flow_cost(edges, n, m, &supply, &cost) {
            best = best.min(c);
        }
    });
    Ok(best.max(0.0).powf(1.0 / p))
}

fn find(parent: &[usize], mut x: usize) -> usize {
    while parent[x] != x {
        x = parent[x];
    }
    x
}

fn enumerate_trees<F: FnMut(&[usize])>(next: usize, n: usize, m: usize, chosen: &mut Vec<usize>, parent: &mut Vec<usize>, visit: &mut F) {
    let need = n + m - 1;
    if chosen.len() == need {
        visit(chosen);
        return;
    }
    if next >= n * m || n * m - next < need - chosen.len() {
        return;
    }
    let (u, v) = (next / m, n + next % m);
    let (ru, rv) = (find(parent, u), find(parent, v));
    if ru != rv {
        // No path compression, so undoing the union is a single reset.
        parent[ru] = rv;
        chosen.push(next);
        enumerate_trees(next + 1, n, m, chosen, parent, visit);
        chosen.pop();
        parent[ru] = ru;
    }
    enumerate_trees(next + 1, n, m, chosen, parent, visit);
}

/// Solves the tree's flows by peeling leaves; `None` if some flow is negative.
fn tree_flow_cost(edges: &[usize], n: usize, m: usize, supply: &[f64], cost: &[f64]) -> Option<f64> {
    let mut rem = supply.to_vec();
    let mut deg = vec![0usize; n + m];
    for &e in edges {
        deg[e / m] += 1;
        deg[n + e % m] += 1;
    }
    let mut alive = vec![true; edges.len()];
    let mut total = 0.0;
    for _ in 0..edges.len() {
        let (k, leaf) = edges.iter().enumerate().filter(|(k, _)| alive[*k]).find_map(|(k, &e)| {
            let (u, v) = (e / m, n + e % m);
            if deg[u] == 1 {
                Some((k, u))
            } else if deg[v] == 1 {
                Some((k, v))
            } else {
                None
            }
        })?;
        let e = edges[k];
        let (u, v) = (e / m, n + e % m);
        let other = if leaf == u { v } else { u };
        let flow = rem[leaf];
        if flow < -1e-14 {
            return None;
        }
        total += flow * cost[e];
        rem[other] -= flow;
        rem[leaf] = 0.0;
        deg[u] -= 1;
        deg[v] -= 1;
        alive[k] = false;
    }
    Some(total)
}

/// Grid total variation `Σ |ρ_{i+1} - ρ_i|`.
pub fn tv_norm(rho: &GridDensity) -> f64 {
    rho.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// `∫ f(ρ)` by the midpoint rule.
pub fn energy_density_form(rho: &GridDensity, energy: &DerivedEnergy) -> Result<f64, MeasureError> {
    let f0 = energy.f_at_zero();
    let mut acc = 0.0;
    for &v in &rho.values {
        if v == 0.0 {
            if !f0.is_finite() {
                return Err(MeasureError::DomainError("f(0+) is infinite and the density vanishes".into()));
            }
            acc += f0;
        } else {
            acc += energy.f(v);
        }
    }
    Ok(acc * rho.dx())
}

/// `(1/m) Σ G(m ΔX_i)` plus `f(0)` times the vacuum length.
pub fn energy_quantile_form(xr: &QuantileRep, energy: &DerivedEnergy) -> Result<f64, MeasureError> {
    let m = xr.m() as f64;
    let vacuum = (xr.x[0] - xr.a) + (xr.b - xr.x[xr.m()]);
    let f0 = energy.f_at_zero();
    let mut acc = 0.0;
    for g in xr.gaps() {
        if g <= 0.0 {
            if energy.is_superlinear() {
                return Err(MeasureError::DomainError("zero quantile gap has infinite energy".into()));
            }
            continue;
        }
        acc += energy.g(m * g);
    }
    let mut out = acc / m;
    if vacuum > 0.0 {
        if !f0.is_finite() {
            return Err(MeasureError::DomainError("f(0+) is infinite and the support is not all of the interval".into()));
        }
        out += f0 * vacuum;
    }
    Ok(out)
}

/// Initial data, all normalized to unit mass on the grid.
pub mod initial {
    use super::{GridDensity, MeasureError};

    pub fn uniform(a: f64, b: f64, n: usize) -> Result<GridDensity, MeasureError> {
        GridDensity::normalized(a, b, vec![1.0; n])
    }

    /// `base + height (1 - r²)²` for `|r| < 1`, `r = (x - center)/width`.
    pub fn bump(a: f64, b: f64, n: usize, center: f64, width: f64, height: f64, base: f64) -> Result<GridDensity, MeasureError> {
        sample(a, b, n, |x| {
            let r = (x - center) / width;
            base + if r.abs() < 1.0 { height * (1.0 - r * r).powi(2) } else { 0.0 }
        })
    }

    /// Indicator of `[l, r]` with cubic ramps of width `smoothing` centered at the edges, plus `floor`.
    pub fn smoothed_indicator(a: f64, b: f64, n: usize, l: f64, r: f64, smoothing: f64, floor: f64) -> Result<GridDensity, MeasureError> {
        let ramp = |t: f64| {
            if smoothing <= 0.0 {
                return if t >= 0.0 { 1.0 } else { 0.0 };
            }
            let u = (t / smoothing + 0.5).clamp(0.0, 1.0);
            u * u * (3.0 - 2.0 * u)
        };
        sample(a, b, n, |x| floor + ramp(x - l).min(ramp(r - x)))
    }

    /// `1 + A cos(π (x - a)/(b - a))`.
    pub fn cosine(a: f64, b: f64, n: usize, amplitude: f64) -> Result<GridDensity, MeasureError> {
        sample(a, b, n, |x| 1.0 + amplitude * (std::f64::consts::PI * (x - a) / (b - a)).cos())
    }

    pub fn sample<F: Fn(f64) -> f64>(a: f64, b: f64, n: usize, f: F) -> Result<GridDensity, MeasureError> {
        let dx = (b - a) / n as f64;
        GridDensity::normalized(a, b, (0..n).map(|i| f(a + (i as f64 + 0.5) * dx)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_quantiles() {
        let rho = initial::uniform(0.0, 1.0, 8).unwrap();
        let q = density_to_quantile(&rho, 4).unwrap();
        for (x, e) in q.x.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
            assert!((x - e).abs() < 1e-15);
        }
    }

    #[test]
    fn tree_enumeration_counts_spanning_trees() {
        let mut count = 0usize;
        let mut parent: Vec<usize> = (0..7).collect();
        enumerate_trees(0, 3, 4, &mut vec![], &mut parent, &mut |_| count += 1);
        // K_{3,4}: 3^3 · 4^2.
        assert_eq!(count, 27 * 16);
    }
}
