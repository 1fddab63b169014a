//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pjko::energy::EnergySpec;
use pjko::measure::{initial, GridDensity};
use pjko::tolerances as tol;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Initial {
    Uniform,
    /// `base + height (1 - r²)²` on `|r| < 1`, `r = (x - center)/width`.
    Bump { center: f64, width: f64, height: f64, base: f64 },
    SmoothedIndicator { l: f64, r: f64, smoothing: f64, floor: f64 },
    /// `1 + amplitude cos(π (x - a)/(b - a))`.
    Cosine { amplitude: f64 },
    /// `base + height exp(-((x - center)/width)²)`.
    Gaussian { center: f64, width: f64, height: f64, base: f64 },
    Csv(PathBuf),
}

impl Initial {
    fn parse(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        let bad = |msg: &str| CliError::Config(format!("initial '{s}': {msg}"));
        let Some(open) = s.find('(') else {
            return match s {
                "uniform" => Ok(Initial::Uniform),
                "" => Err(bad("empty")),
                path => Ok(Initial::Csv(PathBuf::from(path))),
            };
        };
        if !s.ends_with(')') {
            return Err(bad("missing ')'"));
        }
        let name = s[..open].trim();
        let args: Vec<f64> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad(&format!("bad number '{}'", a.trim()))))
            .collect::<Result<_, _>>()?;
        let arity = |lo: usize, hi: usize| if args.len() < lo || args.len() > hi { Err(bad(&format!("{name} takes {lo} to {hi} arguments"))) } else { Ok(()) };
        let opt = |i: usize| args.get(i).copied().unwrap_or(0.0);
        match name {
            "bump" => {
                arity(3, 4)?;
                Ok(Initial::Bump { center: args[0], width: args[1], height: args[2], base: opt(3) })
            }
            "smoothed_indicator" => {
                arity(3, 4)?;
                Ok(Initial::SmoothedIndicator { l: args[0], r: args[1], smoothing: args[2], floor: opt(3) })
            }
            "cosine" => {
                arity(1, 1)?;
                Ok(Initial::Cosine { amplitude: args[0] })
            }
            "gaussian" => {
                arity(3, 4)?;
                Ok(Initial::Gaussian { center: args[0], width: args[1], height: args[2], base: opt(3) })
            }
            _ => Err(bad("known forms: uniform, bump(c,w,h[,base]), smoothed_indicator(l,r,s[,floor]), cosine(A), gaussian(c,w,h[,base]), or a CSV path")),
        }
    }

    fn render(&self) -> String {
        match self {
            Initial::Uniform => "uniform".into(),
            Initial::Bump { center, width, height, base } => format!("bump({center}, {width}, {height}, {base})"),
            Initial::SmoothedIndicator { l, r, smoothing, floor } => format!("smoothed_indicator({l}, {r}, {smoothing}, {floor})"),
            Initial::Cosine { amplitude } => format!("cosine({amplitude})"),
            Initial::Gaussian { center, width, height, base } => format!("gaussian({center}, {width}, {height}, {base})"),
            Initial::Csv(p) => p.display().to_string(),
        }
    }

    pub fn density(&self, a: f64, b: f64, n: usize) -> Result<GridDensity, CliError> {
        let g = match self {
            Initial::Uniform => initial::uniform(a, b, n),
            Initial::Bump { center, width, height, base } => initial::bump(a, b, n, *center, *width, *height, *base),
            Initial::SmoothedIndicator { l, r, smoothing, floor } => initial::smoothed_indicator(a, b, n, *l, *r, *smoothing, *floor),
            Initial::Cosine { amplitude } => initial::cosine(a, b, n, *amplitude),
            Initial::Gaussian { center, width, height, base } => initial::sample(a, b, n, |x| base + height * (-((x - center) / width).powi(2)).exp()),
            Initial::Csv(path) => {
                let g = GridDensity::read_csv(path, Some((a, b))).map_err(|e| CliError::Io(e.to_string()))?;
                if g.n() != n {
                    return Err(CliError::Config(format!("{} has {} cells but n = {n}", path.display(), g.n())));
                }
                Ok(g)
            }
        };
        g.map_err(|e| CliError::Config(format!("initial {}: {e}", self.render())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub a: f64,
    pub b: f64,
    pub energy: String,
    /// Fixed entropic regularization: the run minimizes `f + eps z log z`.
    pub entropic_eps: f64,
    pub p: f64,
    pub d: u32,
    pub tau: f64,
    pub horizon: f64,
    pub m: usize,
    pub n: usize,
    pub eps_schedule: Vec<f64>,
    pub initial: Initial,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub output: PathBuf,
    pub snapshot_times: Vec<f64>,
    pub edi: bool,
    pub young: bool,
    pub flow_interchange: Vec<f64>,
    pub bv: bool,
    pub renyi_beta: f64,
    pub lalpha: bool,
    pub lalpha_exponent: f64,
    pub oracle: bool,
    /// Assertion bound on the max L¹ distance to the oracle; none means report only.
    pub oracle_tolerance: Option<f64>,
    pub fd_delta: f64,
}

const KEYS: [&str; 27] = [
    "domain",
    "energy",
    "entropic_eps",
    "p",
    "d",
    "tau",
    "T",
    "m",
    "n",
    "eps_schedule",
    "initial",
    "inner_tol",
    "inner_max_iter",
    "output",
    "snapshot_times",
    "edi",
    "young",
    "flow_interchange",
    "bv",
    "renyi_beta",
    "lalpha",
    "lalpha_exponent",
    "oracle",
    "oracle_tolerance",
    "fd_delta",
    // Accepted aliases.
    "horizon",
    "inner_max_iterations",
];

fn list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {}: expected 'key = value'", i + 1)));
            };
            let k = match k.trim() {
                "horizon" => "T",
                "inner_max_iterations" => "inner_max_iter",
                k => k,
            };
            if !KEYS.contains(&k) {
                return Err(CliError::Config(format!("line {}: unknown key '{k}'", i + 1)));
            }
            if kv.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key '{k}'", i + 1)));
            }
        }
        let req = |k: &str| kv.get(k).cloned().ok_or_else(|| CliError::Config(format!("missing key '{k}'")));
        let num = |k: &str, v: &str| v.parse::<f64>().map_err(|_| CliError::Config(format!("{k}: '{v}' is not a number")));
        let get_num = |k: &str, default: Option<f64>| match kv.get(k) {
            Some(v) => num(k, v),
            None => default.ok_or_else(|| CliError::Config(format!("missing key '{k}'"))),
        };
        let get_usize = |k: &str, default: Option<usize>| match kv.get(k) {
            Some(v) => v.parse::<usize>().map_err(|_| CliError::Config(format!("{k}: '{v}' is not a nonnegative integer"))),
            None => default.ok_or_else(|| CliError::Config(format!("missing key '{k}'"))),
        };
        let get_bool = |k: &str, default: bool| match kv.get(k).map(|s| s.as_str()) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(CliError::Config(format!("{k}: '{v}' is not true/false"))),
        };
        let get_list = |k: &str, default: Vec<f64>| match kv.get(k) {
            None => Ok(default),
            Some(v) if v.is_empty() => Ok(vec![]),
            Some(v) => v.split(',').map(|x| num(k, x.trim())).collect::<Result<Vec<_>, _>>(),
        };

        let domain = get_list("domain", vec![0.0, 1.0])?;
        if domain.len() != 2 {
            return Err(CliError::Config("domain takes two values 'a, b'".into()));
        }
        let horizon = get_num("T", None)?;
        let m = get_usize("m", None)?;
        let d = get_usize("d", Some(1))?;
        let cfg = RunConfig {
            a: domain[0],
            b: domain[1],
            energy: req("energy")?,
            entropic_eps: get_num("entropic_eps", Some(0.0))?,
            p: get_num("p", None)?,
            d: u32::try_from(d).map_err(|_| CliError::Config("d is too large".into()))?,
            tau: get_num("tau", None)?,
            horizon,
            m,
            n: get_usize("n", Some(m))?,
            eps_schedule: get_list("eps_schedule", vec![])?,
            initial: Initial::parse(&req("initial")?)?,
            inner_tol: get_num("inner_tol", Some(tol::INNER_TOL))?,
            inner_max_iter: get_usize("inner_max_iter", Some(tol::INNER_MAX_ITER))?,
            output: PathBuf::from(kv.get("output").cloned().unwrap_or_else(|| "out".into())),
            snapshot_times: get_list("snapshot_times", vec![0.0, horizon])?,
            edi: get_bool("edi", true)?,
            young: get_bool("young", true)?,
            flow_interchange: get_list("flow_interchange", vec![1.0, 2.0])?,
            bv: get_bool("bv", true)?,
            renyi_beta: get_num("renyi_beta", Some(2.0))?,
            lalpha: get_bool("lalpha", true)?,
            lalpha_exponent: get_num("lalpha_exponent", Some(2.0))?,
            oracle: get_bool("oracle", false)?,
            oracle_tolerance: match kv.get("oracle_tolerance").map(|s| s.as_str()) {
                None | Some("none") => None,
                Some(v) => Some(num("oracle_tolerance", v)?),
            },
            fd_delta: get_num("fd_delta", Some(tol::FD_DELTA))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.b > self.a) || !self.a.is_finite() || !self.b.is_finite() {
            return bad(format!("domain needs a < b, got {}, {}", self.a, self.b));
        }
        if !(self.p > 1.0) || !self.p.is_finite() {
            return bad(format!("p = {} must exceed 1", self.p));
        }
        if self.d < 1 {
            return bad("d must be at least 1".into());
        }
        if !(self.tau > 0.0) || !(self.horizon > 0.0) || self.tau > self.horizon {
            return bad(format!("need 0 < tau <= T (tau = {}, T = {})", self.tau, self.horizon));
        }
        if self.m < 2 || self.n < 2 {
            return bad("m and n must be at least 2".into());
        }
        if self.eps_schedule.iter().any(|e| !(*e > 0.0)) || self.eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eps_schedule must be positive and strictly decreasing".into());
        }
        if !(self.entropic_eps >= 0.0) {
            return bad("entropic_eps must be nonnegative".into());
        }
        if !(self.inner_tol > 0.0) || self.inner_max_iter == 0 {
            return bad("inner_tol and inner_max_iter must be positive".into());
        }
        for &t in &self.snapshot_times {
            let k = (t / self.tau).round();
            if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) || (k * self.tau - t).abs() > 1e-9 * self.tau.max(t) {
                return bad(format!("snapshot time {t} must be a multiple of tau in [0, T]"));
            }
        }
        if self.flow_interchange.iter().any(|b| !(*b >= 0.0)) {
            return bad("flow_interchange exponents must be nonnegative".into());
        }
        if !(self.fd_delta > 0.0) {
            return bad("fd_delta must be positive".into());
        }
        if let Some(t) = self.oracle_tolerance {
            if !(t > 0.0) {
                return bad("oracle_tolerance must be positive".into());
            }
        }
        self.energy_spec()?;
        Ok(())
    }

    /// Catalog energy, with the fixed entropic term added when `entropic_eps > 0`.
    pub fn energy_spec(&self) -> Result<EnergySpec, CliError> {
        let spec = EnergySpec::from_key(&self.energy).map_err(|e| CliError::Config(e.to_string()))?;
        if self.entropic_eps > 0.0 {
            return pjko::energy::regularize_entropy(&spec, self.entropic_eps).map_err(|e| CliError::Config(e.to_string()));
        }
        Ok(spec)
    }

    /// Canonical text form; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("domain", format!("{}, {}", self.a, self.b));
        put("energy", self.energy.clone());
        put("entropic_eps", self.entropic_eps.to_string());
        put("p", self.p.to_string());
        put("d", self.d.to_string());
        put("tau", self.tau.to_string());
        put("T", self.horizon.to_string());
        put("m", self.m.to_string());
        put("n", self.n.to_string());
        put("eps_schedule", list(&self.eps_schedule));
        put("initial", self.initial.render());
        put("inner_tol", self.inner_tol.to_string());
        put("inner_max_iter", self.inner_max_iter.to_string());
        put("output", self.output.display().to_string());
        put("snapshot_times", list(&self.snapshot_times));
        put("edi", self.edi.to_string());
        put("young", self.young.to_string());
        put("flow_interchange", list(&self.flow_interchange));
        put("bv", self.bv.to_string());
        put("renyi_beta", self.renyi_beta.to_string());
        put("lalpha", self.lalpha.to_string());
        put("lalpha_exponent", self.lalpha_exponent.to_string());
        put("oracle", self.oracle.to_string());
        put("oracle_tolerance", self.oracle_tolerance.map(|t| t.to_string()).unwrap_or_else(|| "none".into()));
        put("fd_delta", self.fd_delta.to_string());
        s
    }

    /// Output directory, under `$PJKO_OUTPUT_ROOT` when that is set and the path is relative.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(crate::OUTPUT_ROOT_VAR) {
            Some(root) if self.output.is_relative() => PathBuf::from(root).join(&self.output),
            _ => self.output.clone(),
        }
    }
}
