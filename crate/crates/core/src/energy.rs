//! Convex internal energies `F(ρ) = ∫ f(ρ)`.
//!
//! The catalog holds power laws, the Boltzmann entropy, the family whose flux
//! nonlinearity is the identity (`f'' = z^{1-p}`), and tabulated energies. On
//! top of it sit the McCann transform `Mf(s) = s^d f(s^{-d})`, the exponent
//! calculus (`α`, `β`), the regularity function `h` with
//! `h'(z) = z^{(α-1)/q} f''(z)^{1/p}`, the flux `H' = s^{p-1} f''`, the
//! superlinear majorant construction and the truncation/decomposition used
//! for the chain rule.

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::quad;
use crate::tolerances as tol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("energy is not convex near z = {z}")]
    NonConvexEnergy { z: f64 },
    #[error("argument {0} is outside the domain (0, inf)")]
    DomainError(f64),
    #[error("f(0) = {0} but the McCann condition requires f(0) = 0")]
    NonzeroAtOrigin(f64),
    #[error("growth bound f''(z) >= C z^-theta fails at z = {z}")]
    ThetaViolation { z: f64 },
    #[error("integral diverges: {0}")]
    DivergenceError(String),
    #[error("precondition failed: {0}")]
    PreconditionError(String),
    #[error("unknown energy key '{key}'; catalog: entropy, power:m=<real>, qlaplace:p=<real>, tabulated:<path>")]
    UnknownKey { key: String },
    #[error("table error: {0}")]
    Table(String),
}

/// Tabulated `f` with log-log linear interpolation of `f''` between nodes.
///
/// On each segment `f''(z) = c z^k`, which keeps `f'' > 0` and reproduces
/// power laws exactly; `f'` and `f` are integrated upward in closed form from
/// the first node.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    z: Vec<f64>,
    c: Vec<f64>,
    k: Vec<f64>,
    fp_node: Vec<f64>,
    f_node: Vec<f64>,
    /// Largest relative disagreement between the tabulated f, f' columns and the integrated values.
    pub column_mismatch: f64,
    pub source: String,
}

fn p1(z: f64, c: f64, k: f64) -> f64 {
    if (k + 1.0).abs() < 1e-12 {
        c * z.ln()
    } else {
        c * z.powf(k + 1.0) / (k + 1.0)
    }
}

fn p2(z: f64, c: f64, k: f64) -> f64 {
    if (k + 1.0).abs() < 1e-12 {
        c * (z * z.ln() - z)
    } else if (k + 2.0).abs() < 1e-12 {
        -c * z.ln()
    } else {
        c * z.powf(k + 2.0) / ((k + 1.0) * (k + 2.0))
    }
}

impl Table {
    pub fn new(z: Vec<f64>, f: Vec<f64>, fp: Vec<f64>, fpp: Vec<f64>, source: &str) -> Result<Self, EnergyError> {
        let n = z.len();
        if n < 2 || f.len() != n || fp.len() != n || fpp.len() != n {
            return Err(EnergyError::Table("need at least two rows with z,f,fp,fpp".into()));
        }
        for i in 0..n {
            if !(z[i] > 0.0) || !z[i].is_finite() {
                return Err(EnergyError::Table(format!("node z = {} must be positive", z[i])));
            }
            if i > 0 && z[i] <= z[i - 1] {
                return Err(EnergyError::Table("nodes must be strictly increasing".into()));
            }
            if !(fpp[i] > 0.0) || !fpp[i].is_finite() {
                return Err(EnergyError::NonConvexEnergy { z: z[i] });
            }
        }
        let mut c = Vec::with_capacity(n - 1);
        let mut k = Vec::with_capacity(n - 1);
        for j in 0..n - 1 {
            let kj = (fpp[j + 1] / fpp[j]).ln() / (z[j + 1] / z[j]).ln();
            k.push(kj);
            c.push(fpp[j] / z[j].powf(kj));
        }
        let mut fp_node = vec![fp[0]];
        let mut f_node = vec![f[0]];
        for j in 0..n - 1 {
            let (zj, zn) = (z[j], z[j + 1]);
            let dp1 = p1(zn, c[j], k[j]) - p1(zj, c[j], k[j]);
            let dp2 = p2(zn, c[j], k[j]) - p2(zj, c[j], k[j]) - p1(zj, c[j], k[j]) * (zn - zj);
            fp_node.push(fp_node[j] + dp1);
            f_node.push(f_node[j] + fp_node[j] * (zn - zj) + dp2);
        }
        let mut mismatch: f64 = 0.0;
        for i in 0..n {
            let ef = (f_node[i] - f[i]).abs() / (1.0 + f[i].abs());
            let ep = (fp_node[i] - fp[i]).abs() / (1.0 + fp[i].abs());
            mismatch = mismatch.max(ef).max(ep);
        }
        Ok(Table { z, c, k, fp_node, f_node, column_mismatch: mismatch, source: source.to_string() })
    }

    /// Reads a CSV with header `z,f,fp,fpp`.
    pub fn from_csv(path: &Path) -> Result<Self, EnergyError> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| EnergyError::Table(format!("{}: {e}", path.display())))?;
        let headers = rdr.headers().map_err(|e| EnergyError::Table(e.to_string()))?.clone();
        let want = ["z", "f", "fp", "fpp"];
        if headers.len() != 4 || headers.iter().zip(want).any(|(h, w)| h.trim() != w) {
            return Err(EnergyError::Table(format!("expected header z,f,fp,fpp in {}", path.display())));
        }
        let (mut z, mut f, mut fp, mut fpp) = (vec![], vec![], vec![], vec![]);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| EnergyError::Table(e.to_string()))?;
            let parse = |i: usize| -> Result<f64, EnergyError> {
                rec[i].trim().parse::<f64>().map_err(|e| EnergyError::Table(format!("bad number '{}': {e}", &rec[i])))
            };
            z.push(parse(0)?);
            f.push(parse(1)?);
            fp.push(parse(2)?);
            fpp.push(parse(3)?);
        }
        Table::new(z, f, fp, fpp, &path.display().to_string())
    }

    fn seg(&self, z: f64) -> usize {
        let n = self.z.len();
        if z <= self.z[0] {
            0
        } else if z >= self.z[n - 1] {
            n - 2
        } else {
            self.z.partition_point(|&x| x <= z) - 1
        }
    }

    fn fpp(&self, z: f64) -> f64 {
        let j = self.seg(z);
        self.c[j] * z.powf(self.k[j])
    }

    fn fp(&self, z: f64) -> f64 {
        let j = self.seg(z);
        let (c, k) = (self.c[j], self.k[j]);
        self.fp_node[j] + p1(z, c, k) - p1(self.z[j], c, k)
    }

    fn f(&self, z: f64) -> f64 {
        let j = self.seg(z);
        let (c, k, zj) = (self.c[j], self.k[j], self.z[j]);
        self.f_node[j] + self.fp_node[j] * (z - zj) + p2(z, c, k) - p2(zj, c, k) - p1(zj, c, k) * (z - zj)
    }

    fn f_at_zero(&self) -> f64 {
        let (c, k, z0) = (self.c[0], self.k[0], self.z[0]);
        if k <= -2.0 + 1e-12 {
            return f64::INFINITY;
        }
        let p2_zero = 0.0; // every surviving branch of p2 vanishes at 0+
        self.f_node[0] - self.fp_node[0] * z0 + p2_zero - p2(z0, c, k) + p1(z0, c, k) * z0
    }

    fn tail(&self) -> (f64, f64, f64) {
        let j = self.z.len() - 2;
        (self.c[j], self.k[j], self.z[j + 1])
    }

    fn growth_slope(&self) -> f64 {
        let (c, k, _) = self.tail();
        if k >= -1.0 - 1e-12 {
            f64::INFINITY
        } else {
            let j = self.z.len() - 2;
            self.fp_node[j] - p1(self.z[j], c, k)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnergyKind {
    /// `f(z) = z^m / (m - 1)`, `m > 0`, `m ≠ 1`.
    Power { m: f64 },
    /// `f(z) = z log z`.
    Entropy,
    /// `f''(z) = z^{1-p}`, so that `H' = s^{p-1} f'' ≡ 1` and the flow is the q-Laplacian heat flow.
    FluxIdentity { p: f64 },
    Tabulated(Arc<Table>),
}

/// An energy density `f`, optionally plus `eps · z log z`, with its growth metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySpec {
    pub kind: EnergyKind,
    pub eps: f64,
    /// Exponent in `f''(z) >= C z^{-θ}` for `z >= z_*`.
    pub theta: f64,
    pub theta_constant: f64,
    pub z_star: f64,
    /// `L = lim f(t)/t`.
    pub growth_slope_l: f64,
    pub f_at_zero: f64,
}

impl EnergySpec {
    pub fn power(m: f64) -> Result<Self, EnergyError> {
        if !(m > 0.0) || (m - 1.0).abs() < 1e-12 || !m.is_finite() {
            return Err(EnergyError::PreconditionError(format!("power exponent m = {m} must be positive and != 1")));
        }
        Ok(EnergySpec {
            kind: EnergyKind::Power { m },
            eps: 0.0,
            theta: 2.0 - m,
            theta_constant: m,
            z_star: 1.0,
            growth_slope_l: if m > 1.0 { f64::INFINITY } else { 0.0 },
            f_at_zero: 0.0,
        })
    }

    pub fn entropy() -> Self {
        EnergySpec {
            kind: EnergyKind::Entropy,
            eps: 0.0,
            theta: 1.0,
            theta_constant: 1.0,
            z_star: 1.0,
            growth_slope_l: f64::INFINITY,
            f_at_zero: 0.0,
        }
    }

    pub fn flux_identity(p: f64) -> Result<Self, EnergyError> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(EnergyError::PreconditionError(format!("p = {p} must exceed 1")));
        }
        let mm = 3.0 - p;
        Ok(EnergySpec {
            kind: EnergyKind::FluxIdentity { p },
            eps: 0.0,
            theta: p - 1.0,
            theta_constant: 1.0,
            z_star: 1.0,
            growth_slope_l: if mm >= 1.0 - 1e-12 { f64::INFINITY } else { 0.0 },
            f_at_zero: if mm > 1e-12 { 0.0 } else { f64::INFINITY },
        })
    }

    pub fn tabulated(table: Table) -> Self {
        let (c, k, zl) = table.tail();
        EnergySpec {
            eps: 0.0,
            theta: -k,
            theta_constant: c,
            z_star: zl,
            growth_slope_l: table.growth_slope(),
            f_at_zero: table.f_at_zero(),
            kind: EnergyKind::Tabulated(Arc::new(table)),
        }
    }

    /// Resolves a catalog key: `entropy`, `power:m=<real>`, `qlaplace:p=<real>`, `tabulated:<path>`.
    pub fn from_key(key: &str) -> Result<Self, EnergyError> {
        let key = key.trim();
        let unknown = || EnergyError::UnknownKey { key: key.to_string() };
        if key == "entropy" {
            return Ok(Self::entropy());
        }
        if let Some(rest) = key.strip_prefix("power:m=") {
            let m: f64 = rest.trim().parse().map_err(|_| unknown())?;
            return Self::power(m);
        }
        if let Some(rest) = key.strip_prefix("qlaplace:p=") {
            let p: f64 = rest.trim().parse().map_err(|_| unknown())?;
            return Self::flux_identity(p);
        }
        if let Some(rest) = key.strip_prefix("tabulated:") {
            return Ok(Self::tabulated(Table::from_csv(Path::new(rest.trim()))?));
        }
        Err(unknown())
    }

    /// Catalog key of the unregularized energy.
    pub fn key(&self) -> String {
        match &self.kind {
            EnergyKind::Power { m } => format!("power:m={m}"),
            EnergyKind::Entropy => "entropy".into(),
            EnergyKind::FluxIdentity { p } => format!("qlaplace:p={p}"),
            EnergyKind::Tabulated(t) => format!("tabulated:{}", t.source),
        }
    }

    fn base_f(&self, z: f64) -> f64 {
        match &self.kind {
            EnergyKind::Power { m } => z.powf(*m) / (m - 1.0),
            EnergyKind::Entropy => xlogx(z),
            EnergyKind::FluxIdentity { p } => {
                let mm = 3.0 - p;
                if (mm - 1.0).abs() < 1e-12 {
                    xlogx(z)
                } else if mm.abs() < 1e-12 {
                    -z.ln()
                } else {
                    z.powf(mm) / (mm * (mm - 1.0))
                }
            }
            EnergyKind::Tabulated(t) => t.f(z),
        }
    }

    fn base_fp(&self, z: f64) -> f64 {
        match &self.kind {
            EnergyKind::Power { m } => m * z.powf(m - 1.0) / (m - 1.0),
            EnergyKind::Entropy => z.ln() + 1.0,
            EnergyKind::FluxIdentity { p } => {
                let mm = 3.0 - p;
                if (mm - 1.0).abs() < 1e-12 {
                    z.ln() + 1.0
                } else if mm.abs() < 1e-12 {
                    -1.0 / z
                } else {
                    z.powf(mm - 1.0) / (mm - 1.0)
                }
            }
            EnergyKind::Tabulated(t) => t.fp(z),
        }
    }

    fn base_fpp(&self, z: f64) -> f64 {
        match &self.kind {
            EnergyKind::Power { m } => m * z.powf(m - 2.0),
            EnergyKind::Entropy => 1.0 / z,
            EnergyKind::FluxIdentity { p } => z.powf(1.0 - p),
            EnergyKind::Tabulated(t) => t.fpp(z),
        }
    }

    fn base_lf(&self, z: f64) -> f64 {
        match &self.kind {
            EnergyKind::Power { m } => z.powf(*m),
            EnergyKind::Entropy => z,
            EnergyKind::FluxIdentity { p } => {
                let mm = 3.0 - p;
                if (mm - 1.0).abs() < 1e-12 {
                    z
                } else if mm.abs() < 1e-12 {
                    z.ln() - 1.0
                } else {
                    z.powf(mm) / mm
                }
            }
            EnergyKind::Tabulated(t) => z * t.fp(z) - t.f(z),
        }
    }

    pub fn f(&self, z: f64) -> f64 {
        if z == 0.0 {
            return self.f_at_zero;
        }
        self.base_f(z) + self.eps * xlogx(z)
    }
    pub fn fp(&self, z: f64) -> f64 {
        self.base_fp(z) + self.eps * (z.ln() + 1.0)
    }
    pub fn fpp(&self, z: f64) -> f64 {
        self.base_fpp(z) + self.eps / z
    }
    pub fn lf(&self, z: f64) -> f64 {
        if z == 0.0 {
            return -self.f_at_zero;
        }
        self.base_lf(z) + self.eps * z
    }

    /// `F = ∫ f(ρ)` is superlinear (`L = +∞`).
    pub fn is_superlinear(&self) -> bool {
        self.growth_slope_l == f64::INFINITY
    }
}

fn xlogx(z: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else {
        z * z.ln()
    }
}

/// `f_ε = f + ε z log z`.
pub fn regularize_entropy(spec: &EnergySpec, eps: f64) -> Result<EnergySpec, EnergyError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(EnergyError::PreconditionError(format!("eps = {eps} must be positive")));
    }
    let mut out = spec.clone();
    out.eps += eps;
    out.growth_slope_l = f64::INFINITY;
    Ok(out)
}

/// Which scalar map of a [`DerivedEnergy`] to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Map {
    F,
    Fp,
    Fpp,
    Lf,
    G,
}

/// A validated energy with its derived maps `f, f', f'', L_f, G`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedEnergy {
    spec: EnergySpec,
}

impl DerivedEnergy {
    pub fn spec(&self) -> &EnergySpec {
        &self.spec
    }

    pub fn eval(&self, map: Map, z: f64) -> Result<f64, EnergyError> {
        if !(z > 0.0) {
            return Err(EnergyError::DomainError(z));
        }
        Ok(match map {
            Map::F => self.f(z),
            Map::Fp => self.fp(z),
            Map::Fpp => self.fpp(z),
            Map::Lf => self.lf(z),
            Map::G => self.g(z),
        })
    }

    #[inline]
    pub fn f(&self, z: f64) -> f64 {
        self.spec.f(z)
    }
    #[inline]
    pub fn fp(&self, z: f64) -> f64 {
        self.spec.fp(z)
    }
    #[inline]
    pub fn fpp(&self, z: f64) -> f64 {
        self.spec.fpp(z)
    }
    #[inline]
    pub fn lf(&self, z: f64) -> f64 {
        self.spec.lf(z)
    }
    /// `G(v) = v f(1/v)`: energy of a mass cell of inverse density `v`, per unit mass.
    #[inline]
    pub fn g(&self, v: f64) -> f64 {
        v * self.spec.f(1.0 / v)
    }
    /// `G'(v) = -L_f(1/v)`.
    #[inline]
    pub fn g_prime(&self, v: f64) -> f64 {
        -self.spec.lf(1.0 / v)
    }
    /// `G''(v) = f''(1/v) / v^3`.
    #[inline]
    pub fn g_second(&self, v: f64) -> f64 {
        self.spec.fpp(1.0 / v) / (v * v * v)
    }
    pub fn f_at_zero(&self) -> f64 {
        self.spec.f_at_zero
    }
    pub fn is_superlinear(&self) -> bool {
        self.spec.is_superlinear()
    }
    /// The same energy with `eps · z log z` added.
    pub fn regularized(&self, eps: f64) -> Result<DerivedEnergy, EnergyError> {
        if eps == 0.0 {
            return Ok(self.clone());
        }
        Ok(DerivedEnergy { spec: regularize_entropy(&self.spec, eps)? })
    }
}

/// Validates `spec` on the default probe grid and packages its derived maps.
pub fn derive(spec: &EnergySpec) -> Result<DerivedEnergy, EnergyError> {
    let grid = quad::geometric_grid(tol::PROBE_LO, tol::PROBE_HI, tol::PROBE_POINTS);
    for &z in &grid {
        let v = spec.fpp(z);
        if !(v > 0.0) || !v.is_finite() {
            return Err(EnergyError::NonConvexEnergy { z });
        }
    }
    for w in grid.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        let (fa, fb, fc) = (spec.f(a), spec.f(b), spec.f(c));
        let dd = ((fc - fb) / (c - b) - (fb - fa) / (b - a)) * 2.0 / (c - a);
        let scale = (fa.abs() + fb.abs() + fc.abs()) / ((b - a) * (c - b));
        if dd < -(tol::CONVEXITY_ABS + 1e-9 * scale) {
            return Err(EnergyError::NonConvexEnergy { z: b });
        }
    }
    if spec.theta.is_finite() {
        for &z in grid.iter().filter(|&&z| z >= spec.z_star) {
            if spec.fpp(z) < spec.theta_constant * z.powf(-spec.theta) * (1.0 - 1e-9) {
                return Err(EnergyError::ThetaViolation { z });
            }
        }
    }
    Ok(DerivedEnergy { spec: spec.clone() })
}

/// `Mf(s) = s^d f(s^{-d})`.
#[derive(Debug, Clone)]
pub struct McCannTransform<'a> {
    spec: &'a EnergySpec,
    d: u32,
}

impl McCannTransform<'_> {
    pub fn eval(&self, s: f64) -> Result<f64, EnergyError> {
        if !(s > 0.0) {
            return Err(EnergyError::DomainError(s));
        }
        Ok(mccann_apply(|z| self.spec.f(z), self.d, s))
    }
}

pub fn mccann_transform(spec: &EnergySpec, d: u32) -> McCannTransform<'_> {
    McCannTransform { spec, d: d.max(1) }
}

/// `Mφ(s)` for an arbitrary scalar map.
pub fn mccann_apply<F: Fn(f64) -> f64>(phi: F, d: u32, s: f64) -> f64 {
    let sd = s.powi(d as i32);
    sd * phi(1.0 / sd)
}

/// `M⁻¹g(z) = g(z^{-1/d}) z`.
pub fn mccann_inverse<G: Fn(f64) -> f64>(g: G, d: u32, z: f64) -> f64 {
    g(z.powf(-1.0 / d as f64)) * z
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum McCannOutcome {
    Pass,
    /// Sampled second difference of `Mf` is negative at `s`.
    NotConvex { s: f64 },
    /// Sampled first difference of `Mf` is positive at `s`.
    Increasing { s: f64 },
}

impl McCannOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, McCannOutcome::Pass)
    }
}

/// Default probe grid for McCann checks: geometric in `s`.
pub fn default_probe() -> Vec<f64> {
    quad::geometric_grid(tol::PROBE_LO, tol::PROBE_HI, tol::PROBE_POINTS)
}

fn check_probe(probe: &[f64]) -> Result<(), EnergyError> {
    if probe.len() < 64 {
        return Err(EnergyError::PreconditionError("probe grid needs at least 64 points".into()));
    }
    let (lo, hi) = (probe[0], probe[probe.len() - 1]);
    if !(lo > 0.0) || hi / lo < 1e4 * (1.0 - 1e-12) || probe.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EnergyError::PreconditionError("probe grid must be increasing, positive and span 4 decades".into()));
    }
    Ok(())
}

/// Checks that `s ↦ Mφ(s)` is convex and non-increasing on the probe grid (`s` values).
pub fn check_mccann_map<F: Fn(f64) -> f64>(phi: F, d: u32, probe: &[f64]) -> Result<McCannOutcome, EnergyError> {
    check_probe(probe)?;
    let y: Vec<f64> = probe.iter().map(|&s| mccann_apply(&phi, d, s)).collect();
    for i in 0..probe.len() - 1 {
        let rise = y[i + 1] - y[i];
        if rise > tol::CONVEXITY_ABS + 1e-12 * (y[i].abs() + y[i + 1].abs()) {
            return Ok(McCannOutcome::Increasing { s: probe[i] });
        }
    }
    for i in 1..probe.len() - 1 {
        let (hl, hr) = (probe[i] - probe[i - 1], probe[i + 1] - probe[i]);
        let dd = ((y[i + 1] - y[i]) / hr - (y[i] - y[i - 1]) / hl) * 2.0 / (hl + hr);
        let scale = (y[i - 1].abs() + y[i].abs() + y[i + 1].abs()) / (hl * hr);
        if dd < -(tol::CONVEXITY_ABS + 1e-10 * scale) {
            return Ok(McCannOutcome::NotConvex { s: probe[i] });
        }
    }
    Ok(McCannOutcome::Pass)
}

/// McCann's condition for a catalog energy: `f(0) = 0` and `Mf` convex non-increasing.
pub fn check_mccann(spec: &EnergySpec, d: u32, probe: &[f64]) -> Result<McCannOutcome, EnergyError> {
    if spec.f_at_zero != 0.0 {
        return Err(EnergyError::NonzeroAtOrigin(spec.f_at_zero));
    }
    check_mccann_map(|z| spec.f(z), d, probe)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaBranch {
    /// `α = +∞`: bounded initial data.
    Bounded,
    /// `α > 1`.
    Power,
    /// `α = 1`: the `ρ log ρ` condition.
    Entropy,
    /// `α < 1`: the integrability condition is void.
    Void,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentSet {
    pub p: f64,
    pub q: f64,
    pub d: u32,
    pub theta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub branch: AlphaBranch,
}

pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

pub fn exponents_for_theta(theta: f64, p: f64, d: u32) -> ExponentSet {
    let q = conjugate(p);
    let dd = d.max(1) as f64;
    let alpha = if theta.is_infinite() { f64::INFINITY } else { 2.0 - q * (1.0 + 1.0 / dd) + theta * (q - 1.0) };
    let beta = (1.0 - 1.0 / dd).max(theta / p + 1.0 / q);
    let branch = if alpha.is_infinite() {
        AlphaBranch::Bounded
    } else if (alpha - 1.0).abs() < 1e-12 {
        AlphaBranch::Entropy
    } else if alpha < 1.0 {
        AlphaBranch::Void
    } else {
        AlphaBranch::Power
    };
    ExponentSet { p, q, d: d.max(1), theta, alpha, beta, branch }
}

pub fn exponents(spec: &EnergySpec, p: f64, d: u32) -> ExponentSet {
    exponents_for_theta(spec.theta, p, d)
}

/// The regularity function `h` with `h'(z) = z^{(α-1)/q} f''(z)^{1/p}` and `h(1) = 0`.
#[derive(Debug, Clone)]
pub struct RegH {
    spec: EnergySpec,
    p: f64,
    q: f64,
    alpha: f64,
}

impl RegH {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn h_prime(&self, z: f64) -> f64 {
        z.powf((self.alpha - 1.0) / self.q) * self.spec.fpp(z).powf(1.0 / self.p)
    }
    /// `h(b) - h(a)`.
    pub fn increment(&self, a: f64, b: f64) -> Result<f64, EnergyError> {
        if !(a > 0.0) {
            return Err(EnergyError::DomainError(a));
        }
        if !(b > 0.0) {
            return Err(EnergyError::DomainError(b));
        }
        if a == b {
            return Ok(0.0);
        }
        let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
        // Integrate in log z to keep wide ranges well conditioned.
        let g = |u: f64| {
            let z = u.exp();
            self.h_prime(z) * z
        };
        let scale = g(lo.ln()).abs().max(g(hi.ln()).abs()) * (hi.ln() - lo.ln());
        let v = if hi / lo < 1.5 {
            quad::gauss8(g, lo.ln(), hi.ln())
        } else {
            quad::adaptive(g, lo.ln(), hi.ln(), 1e-13 * scale.max(1e-300))
        };
        if !v.is_finite() {
            return Err(EnergyError::DivergenceError(format!("h on [{lo}, {hi}]")));
        }
        Ok(sign * v)
    }
    pub fn h(&self, z: f64) -> Result<f64, EnergyError> {
        self.increment(1.0, z)
    }
    /// `h(0+)`, when finite.
    pub fn h_at_zero(&self) -> Result<f64, EnergyError> {
        let e = local_exponent(|z| self.h_prime(z));
        if e <= -1.0 + 1e-9 {
            return Err(EnergyError::DivergenceError(format!("h' ~ z^{e:.3} is not integrable at 0")));
        }
        let tiny = 1e-12;
        Ok(self.h(tiny)? - self.h_prime(tiny) * tiny / (e + 1.0))
    }
}

/// Power-law exponent of `g` near 0.
fn local_exponent<F: Fn(f64) -> f64>(g: F) -> f64 {
    let (z1, z2) = (1e-150, 1e-140);
    (g(z2) / g(z1)).ln() / (z2 / z1).ln()
}

pub fn reg_h_prime(spec: &EnergySpec, p: f64, d: u32) -> Result<RegH, EnergyError> {
    let ex = exponents(spec, p, d);
    reg_h_with_alpha(spec, p, ex.alpha)
}

/// `h` for an explicit exponent (used with `α := β` by the flow-interchange check).
pub fn reg_h_with_alpha(spec: &EnergySpec, p: f64, alpha: f64) -> Result<RegH, EnergyError> {
    if !alpha.is_finite() {
        return Err(EnergyError::PreconditionError("reg-h needs a finite alpha".into()));
    }
    if !(p > 1.0) {
        return Err(EnergyError::PreconditionError(format!("p = {p} must exceed 1")));
    }
    Ok(RegH { spec: spec.clone(), p, q: conjugate(p), alpha })
}

/// The PDE flux nonlinearity `H` with `H'(s) = s^{p-1} f''(s)` and `H(0+) = 0`.
#[derive(Debug, Clone)]
pub struct Flux {
    spec: EnergySpec,
    p: f64,
    /// For tabulated energies: `(ln s, H(s))` on a geometric grid.
    table: Option<Arc<(Vec<f64>, Vec<f64>)>>,
}

impl Flux {
    pub fn h_prime(&self, s: f64) -> f64 {
        s.powf(self.p - 1.0) * self.spec.fpp(s)
    }

    /// `H(s)`; `s = 0` maps to 0.
    pub fn h(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let p = self.p;
        let reg = self.spec.eps * s.powf(p - 1.0) / (p - 1.0);
        let base = match &self.spec.kind {
            EnergyKind::Power { m } => {
                let e = p + m - 3.0;
                m * s.powf(e + 1.0) / (e + 1.0)
            }
            EnergyKind::Entropy => s.powf(p - 1.0) / (p - 1.0),
            EnergyKind::FluxIdentity { .. } => s,
            EnergyKind::Tabulated(_) => self.tabulated_h(s),
        };
        base + reg
    }

    fn tabulated_h(&self, s: f64) -> f64 {
        let t = self.table.as_ref().expect("tabulated flux table");
        let (lns, hv) = (&t.0, &t.1);
        let u = s.ln();
        let n = lns.len();
        if u <= lns[0] {
            // H' ~ c s^k near 0: H(s) ≈ H(s0) (s/s0)^{k+1}.
            let e = local_exponent(|x| self.h_prime(x)) + 1.0;
            return hv[0] * (u - lns[0]).exp().powf(e);
        }
        if u > lns[n - 1] {
            return hv[n - 1] + quad::adaptive(|x| self.h_prime(x), lns[n - 1].exp(), s, 1e-12 * hv[n - 1].abs().max(1.0));
        }
        // Nearest node below, then one short Gauss rule in ln s.
        let j = lns.partition_point(|&x| x <= u) - 1;
        hv[j] + quad::gauss8(|x| self.h_prime(x.exp()) * x.exp(), lns[j], u)
    }
}

pub fn flux_h_prime(spec: &EnergySpec, p: f64) -> Result<Flux, EnergyError> {
    if !(p > 1.0) {
        return Err(EnergyError::PreconditionError(format!("p = {p} must exceed 1")));
    }
    let mut flux = Flux { spec: spec.clone(), p, table: None };
    let e = local_exponent(|s| flux.h_prime(s));
    if e <= -1.0 + 1e-9 {
        return Err(EnergyError::DivergenceError(format!("H'(s) ~ s^{e:.3} is not integrable at 0")));
    }
    if let EnergyKind::Tabulated(_) = spec.kind {
        let grid = quad::geometric_grid(1e-12, 1e6, 2049);
        let mut hv = Vec::with_capacity(grid.len());
        let s0 = grid[0];
        let mut acc = flux.h_prime(s0) * s0 / (e + 1.0);
        hv.push(acc);
        for w in grid.windows(2) {
            let (a, b) = (w[0].ln(), w[1].ln());
            acc += quad::gauss8(|u| flux.h_prime(u.exp()) * u.exp(), a, b);
            hv.push(acc);
        }
        let lns = grid.iter().map(|s| s.ln()).collect();
        flux.table = Some(Arc::new((lns, hv)));
    }
    Ok(flux)
}

/// Strictly convex superlinear majorant built from the lower convex hull of `Mφ`.
///
/// `MΦ(s) = Φ̃(s) + a e^{-s/s_c}` where `Φ̃` is the hull smoothed by local
/// quadratic averaging over the window `[s(1-w), s(1+w)]`; `Φ = M⁻¹(MΦ)`.
#[derive(Debug, Clone)]
pub struct SuperlinearMajorant {
    d: u32,
    hull_s: Vec<f64>,
    hull_y: Vec<f64>,
    window: f64,
    corr_amp: f64,
    corr_scale: f64,
    /// Reported constant `C` in `Φ <= C (φ + 1)` on the probe range.
    pub growth_constant: f64,
    /// `Φ(z)/z` is increasing on the probe range and grows by the reported factor.
    pub superlinear_ratio: f64,
    pub mccann: McCannOutcome,
}

/// Normalized quadratic B-spline on [-1, 1] (knots -1, -1/3, 1/3, 1).
fn bspline2(t: f64) -> f64 {
    let h = 2.0 / 3.0;
    let u = (t + 1.0) / h;
    let v = if !(0.0..=3.0).contains(&u) {
        0.0
    } else if u < 1.0 {
        0.5 * u * u
    } else if u < 2.0 {
        0.5 * (-2.0 * u * u + 6.0 * u - 3.0)
    } else {
        0.5 * (3.0 - u) * (3.0 - u)
    };
    v / h
}

impl SuperlinearMajorant {
    fn hull_eval(&self, s: f64) -> f64 {
        let (xs, ys) = (&self.hull_s, &self.hull_y);
        let n = xs.len();
        let j = if s <= xs[0] {
            0
        } else if s >= xs[n - 1] {
            n - 2
        } else {
            xs.partition_point(|&x| x <= s) - 1
        };
        let t = (s - xs[j]) / (xs[j + 1] - xs[j]);
        ys[j] + t * (ys[j + 1] - ys[j])
    }

    /// Smoothed hull `Φ̃(s) = ∫ hull(s(1 + w t)) B(t) dt`, integrated exactly piecewise.
    fn smoothed(&self, s: f64) -> f64 {
        let w = self.window;
        let mut cuts = vec![-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];
        let (lo, hi) = (s * (1.0 - w), s * (1.0 + w));
        let a = self.hull_s.partition_point(|&x| x <= lo);
        let b = self.hull_s.partition_point(|&x| x < hi);
        for &x in &self.hull_s[a..b] {
            cuts.push((x / s - 1.0) / w);
        }
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let g2 = 1.0 / 3f64.sqrt();
        let mut acc = 0.0;
        for c in cuts.windows(2) {
            let (t0, t1) = (c[0], c[1]);
            if t1 <= t0 {
                continue;
            }
            let (mid, half) = (0.5 * (t0 + t1), 0.5 * (t1 - t0));
            for &x in &[-g2, g2] {
                let t = mid + half * x;
                acc += half * self.hull_eval(s * (1.0 + w * t)) * bspline2(t);
            }
        }
        acc
    }

    /// `MΦ(s)`.
    pub fn transformed(&self, s: f64) -> f64 {
        self.smoothed(s) + self.corr_amp * (-s / self.corr_scale).exp()
    }

    pub fn eval(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        mccann_inverse(|s| self.transformed(s), self.d, z)
    }
}

/// Builds `Φ` with `Φ <= C(φ + 1)`, `Φ` superlinear and McCann-admissible in dimension `d`,
/// valid on the probe range `[z_lo, z_hi]`.
pub fn construct_superlinear<F: Fn(f64) -> f64>(phi: F, d: u32, z_lo: f64, z_hi: f64) -> Result<SuperlinearMajorant, EnergyError> {
    let d = d.max(1);
    if !(z_lo > 0.0 && z_hi > z_lo * 1e3) {
        return Err(EnergyError::PreconditionError("probe range must span at least three decades".into()));
    }
    let probe = quad::geometric_grid(z_lo, z_hi, 256);
    let vals: Vec<f64> = probe.iter().map(|&z| phi(z)).collect();
    if vals[0].abs() > 1e-14 {
        return Err(EnergyError::PreconditionError("phi must vanish near 0".into()));
    }
    for i in 1..probe.len() - 1 {
        let (hl, hr) = (probe[i] - probe[i - 1], probe[i + 1] - probe[i]);
        let dd = (vals[i + 1] - vals[i]) / hr - (vals[i] - vals[i - 1]) / hl;
        if dd < -1e-9 * (1.0 + vals[i].abs()) {
            return Err(EnergyError::PreconditionError(format!("phi is not convex near z = {}", probe[i])));
        }
    }
    let ratio = |k: usize| vals[k] / probe[k];
    let top = probe.len() - 1;
    let decade = probe.iter().position(|&z| z >= z_hi / 10.0).unwrap_or(0);
    let eventually_increasing = (decade..top).all(|k| ratio(k + 1) > ratio(k));
    if !eventually_increasing || !(ratio(top) > 2.0 * ratio(decade).max(1e-300)) {
        return Err(EnergyError::PreconditionError("phi is not eventually superlinear on the probe range".into()));
    }

    // Sample Mφ well beyond the probe range so the smoothing window never leaves the grid.
    let dd = d as f64;
    let s_lo = (z_hi * 1e3).powf(-1.0 / dd);
    let s_hi = (z_lo * 1e-3).powf(-1.0 / dd);
    let s_grid = quad::geometric_grid(s_lo, s_hi, 6000);
    let pts: Vec<(f64, f64)> = s_grid.iter().map(|&s| (s, mccann_apply(&phi, d, s))).collect();
    // Andrew's monotone chain, lower hull.
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let min_y = hull.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let s_flat = hull.iter().find(|p| p.1 <= min_y + 1e-15 * (1.0 + min_y.abs())).map(|p| p.0).unwrap_or(1.0);
    let mut out = SuperlinearMajorant {
        d,
        hull_s: hull.iter().map(|p| p.0).collect(),
        hull_y: hull.iter().map(|p| p.1).collect(),
        window: 0.05,
        corr_amp: 1e-3,
        corr_scale: s_flat,
        growth_constant: 0.0,
        superlinear_ratio: 0.0,
        mccann: McCannOutcome::Pass,
    };

    let mut c: f64 = 0.0;
    let mut increasing = true;
    let mut prev_ratio = f64::NEG_INFINITY;
    // Sup of Φ/(φ + 1) on a grid 16x finer than the probe; it holds between nodes to ~1e-10 relative.
    for z in quad::geometric_grid(z_lo, z_hi, 4096) {
        let v = out.eval(z);
        c = c.max(v / (phi(z) + 1.0));
        let r = v / z;
        if r < prev_ratio {
            increasing = false;
        }
        prev_ratio = r;
    }
    out.growth_constant = c;
    out.superlinear_ratio = if increasing { out.eval(z_hi) / z_hi / (out.eval(z_hi / 1e3) / (z_hi / 1e3)) } else { 0.0 };
    let s_probe = quad::geometric_grid(z_hi.powf(-1.0 / dd), z_lo.powf(-1.0 / dd), 256);
    let s_probe = if s_probe[255] / s_probe[0] < 1e4 {
        quad::geometric_grid(s_probe[0], s_probe[0] * 1e4, 256)
    } else {
        s_probe
    };
    out.mccann = check_mccann_map(|z| out.eval(z), d, &s_probe)?;
    Ok(out)
}

/// Linear truncation of `f` outside `[z0, z1]` and its McCann decomposition `f̃ = f̃₁ - f̃₂`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    spec: EnergySpec,
    pub d: u32,
    pub z0: f64,
    pub z1: f64,
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
    pub c0: f64,
    pub c1: f64,
    s0: f64,
    s1: f64,
    /// Nodes of the middle band `[s1, s0]` with `Θ` and `Θ'` there.
    nodes: Vec<f64>,
    theta: Vec<f64>,
    theta_p: Vec<f64>,
    /// Reported constant in `f̃₂''(z) <= C z^{-(1+1/d)}` for `z >= z0`.
    pub f2_growth_constant: f64,
}

impl Decomposition {
    pub fn f_tilde(&self, z: f64) -> f64 {
        if z <= self.z0 {
            self.a0 * z
        } else if z <= self.z1 {
            self.spec.f(z) + self.b0
        } else {
            self.a1 * z + self.b1
        }
    }

    /// `(Mf̃)''` on the middle band.
    fn mft_second(&self, s: f64) -> f64 {
        let dd = self.d as f64;
        let u = s.powf(-dd);
        -dd * (dd - 1.0) * s.powf(dd - 2.0) * (self.spec.lf(u) - self.spec.lf(self.z0)) + dd * dd * s.powf(-dd - 2.0) * self.spec.fpp(u)
    }

    fn kernel(&self, s: f64) -> f64 {
        (-self.mft_second(s)).max(0.0)
    }

    /// `(g̃₂, g̃₂', g̃₂'')` at `s`.
    fn g2(&self, s: f64) -> (f64, f64, f64) {
        let dd = self.d as f64;
        if s <= self.s1 {
            let g = -self.b1 * s.powf(dd) + self.c1 * s;
            let gp = -self.b1 * dd * s.powf(dd - 1.0) + self.c1;
            let gpp = -self.b1 * dd * (dd - 1.0) * s.powf(dd - 2.0);
            (g, gp, gpp)
        } else if s >= self.s0 {
            (self.c0, 0.0, 0.0)
        } else {
            let j = (self.nodes.partition_point(|&x| x <= s)).clamp(1, self.nodes.len() - 1) - 1;
            let sj = self.nodes[j];
            let k = |t: f64| self.kernel(t);
            let gp = self.theta_p[j] + quad::gauss8(k, sj, s);
            let g = self.theta[j] + (s - sj) * self.theta_p[j] + quad::gauss8(|t| (s - t) * k(t), sj, s);
            (g, gp, self.kernel(s))
        }
    }

    pub fn f2(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        z * self.g2(z.powf(-1.0 / self.d as f64)).0
    }

    pub fn f1(&self, z: f64) -> f64 {
        self.f_tilde(z) + self.f2(z)
    }

    pub fn f2_second(&self, z: f64) -> f64 {
        let dd = self.d as f64;
        let s = z.powf(-1.0 / dd);
        let (_, gp, gpp) = self.g2(s);
        s / (dd * z) * (s / dd * gpp - (1.0 - 1.0 / dd) * gp)
    }

    /// `L_{f̃₂}(z) = -(z s / d) g̃₂'(s)`.
    pub fn lf2(&self, z: f64) -> f64 {
        let dd = self.d as f64;
        let s = z.powf(-1.0 / dd);
        -(z * s / dd) * self.g2(s).1
    }
}

pub fn decompose_truncated(spec: &EnergySpec, z0: f64, z1: f64, d: u32) -> Result<Decomposition, EnergyError> {
    if !(z0 > 0.0 && z1 > z0) || d == 0 {
        return Err(EnergyError::PreconditionError(format!("need 0 < z0 < z1 and d >= 1 (got {z0}, {z1}, {d})")));
    }
    for z in quad::geometric_grid(z0, z1, 64) {
        let v = spec.fpp(z);
        if !(v > 0.0) || !v.is_finite() {
            return Err(EnergyError::PreconditionError(format!("f'' not evaluable at z = {z}")));
        }
    }
    let dd = d as f64;
    let (s0, s1) = (z0.powf(-1.0 / dd), z1.powf(-1.0 / dd));
    let mut dec = Decomposition {
        spec: spec.clone(),
        d,
        z0,
        z1,
        a0: spec.fp(z0),
        a1: spec.fp(z1),
        b0: spec.lf(z0),
        b1: spec.lf(z0) - spec.lf(z1),
        c0: 0.0,
        c1: 0.0,
        s0,
        s1,
        nodes: vec![],
        theta: vec![],
        theta_p: vec![],
        f2_growth_constant: 0.0,
    };
    let n = 2048;
    let nodes: Vec<f64> = (0..=n).map(|i| s1 + (s0 - s1) * i as f64 / n as f64).collect();
    let mut cum_k = vec![0.0];
    let mut cum_moment = vec![0.0]; // ∫_{s_j}^{s_{j+1}} (s_{j+1} - t) k(t) dt per interval
    for w in nodes.windows(2) {
        let (a, b) = (w[0], w[1]);
        cum_k.push(quad::gauss8(|t| dec.kernel(t), a, b));
        cum_moment.push(quad::gauss8(|t| (b - t) * dec.kernel(t), a, b));
    }
    let total_k: f64 = cum_k.iter().sum();
    dec.c1 = dec.b1 * dd * s1.powf(dd - 1.0) - total_k;
    let mut theta = vec![-dec.b1 * s1.powf(dd) + dec.c1 * s1];
    let mut theta_p = vec![-dec.b1 * dd * s1.powf(dd - 1.0) + dec.c1];
    for j in 0..n {
        let h = nodes[j + 1] - nodes[j];
        theta.push(theta[j] + h * theta_p[j] + cum_moment[j + 1]);
        theta_p.push(theta_p[j] + cum_k[j + 1]);
    }
    dec.c0 = theta[n];
    dec.nodes = nodes;
    dec.theta = theta;
    dec.theta_p = theta_p;
    let mut c: f64 = 0.0;
    for z in quad::geometric_grid(z0, z1 * 1e4, 512) {
        c = c.max(dec.f2_second(z) * z.powf(1.0 + 1.0 / dd));
    }
    dec.f2_growth_constant = c;
    Ok(dec)
}
