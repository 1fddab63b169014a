use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pjko_cli::RunConfig;
use serde_json::Value;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn pjko(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pjko")).args(args).env("PJKO_OUTPUT_ROOT", root).output().expect("spawn pjko")
}

fn shipped(name: &str) -> String {
    configs_dir().join(name).display().to_string()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.conf");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn diagnostics_rows(dir: &Path) -> Vec<Vec<f64>> {
    let text = fs::read_to_string(dir.join("diagnostics.csv")).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn shipped_configs_round_trip() {
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("conf") {
            continue;
        }
        let c = RunConfig::load(&path).unwrap();
        let again = RunConfig::parse(&c.serialize()).unwrap();
        assert_eq!(c, again, "{}", path.display());
        assert_eq!(c.serialize(), again.serialize());
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn config_errors_name_the_problem() {
    let base = "energy = entropy\np = 2\ntau = 1e-2\nT = 0.05\nm = 16\ninitial = uniform\n";
    let err = |extra: &str| RunConfig::parse(&format!("{base}{extra}")).unwrap_err().to_string();
    assert!(err("colour = red\n").contains("unknown key 'colour'"));
    assert!(err("m = 32\n").contains("duplicate key 'm'"));
    assert!(err("snapshot_times = 0.015\n").contains("multiple of tau"));
    assert!(err("eps_schedule = 1e-5, 1e-3\n").contains("decreasing"));
    assert!(RunConfig::parse("energy = entropy\np = 2\n").unwrap_err().to_string().contains("missing key"));
    let bad = RunConfig::parse(&base.replace("entropy", "power:m=abc")).unwrap_err().to_string();
    assert!(bad.contains("power:m=abc"), "{bad}");
}

#[test]
fn invalid_energy_key_exits_2_naming_the_catalog() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "energy = vortex\np = 2\ntau = 1e-2\nT = 0.05\nm = 16\ninitial = uniform\n");
    let out = pjko(tmp.path(), &["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("'vortex'") && msg.contains("catalog: entropy, power:m=<real>, qlaplace:p=<real>, tabulated:<path>"), "{msg}");
}

#[test]
fn uniform_run_has_zero_dissipation() {
    let tmp = tempfile::tempdir().unwrap();
    for key in ["entropy", "power:m=2", "power:m=3"] {
        let cfg = write_config(tmp.path(), &format!("energy = {key}\np = 2\ntau = 1e-2\nT = 0.05\nm = 64\ninitial = uniform\noutput = u\n"));
        let out = pjko(tmp.path(), &["run", &cfg]);
        assert_eq!(out.status.code(), Some(0), "{key}");
        let rows = diagnostics_rows(&tmp.path().join("u"));
        assert_eq!(rows.len(), 6);
        for r in &rows {
            // transport, slope, kinetic, precursor are exact zeros; the Young
            // term squares a roundoff-level gradient.
            assert_eq!(&r[3..7], &[0.0; 4], "{key}");
            assert!(r[10].abs() <= 1e-20, "{key}: {}", r[10]);
        }
    }
}

#[test]
fn heat_example_passes_against_the_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pjko(tmp.path(), &["run", &shipped("heat.conf")]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("heat");
    let m = manifest(&dir);
    let l1 = m["summary"]["oracle_max_l1"].as_f64().unwrap();
    assert!(l1 <= 0.05, "{l1}");
    assert_eq!(m["steps_completed"], 50);
    assert_eq!(m["failures"].as_array().unwrap().len(), 0);
    for t in ["0", "0.01", "0.05"] {
        let text = fs::read_to_string(dir.join(format!("density_{t}.csv"))).unwrap();
        assert!(text.starts_with("x,rho\n") && !text.contains('\r'));
        assert_eq!(text.lines().count(), 257);
    }
    assert_eq!(diagnostics_rows(&dir).len(), 51);
}

#[test]
fn runs_are_bit_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for root in [a.path(), b.path()] {
        assert_eq!(pjko(root, &["run", &shipped("pme.conf")]).status.code(), Some(0));
    }
    let mut files: Vec<_> = fs::read_dir(a.path().join("pme")).unwrap().map(|e| e.unwrap().file_name()).filter(|n| n.to_string_lossy().ends_with(".csv")).collect();
    files.sort();
    assert_eq!(files.len(), 6);
    for f in files {
        assert_eq!(fs::read(a.path().join("pme").join(&f)).unwrap(), fs::read(b.path().join("pme").join(&f)).unwrap(), "{f:?}");
    }
}

#[test]
fn manifest_records_every_tolerance_and_exponent() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(pjko(tmp.path(), &["run", &shipped("pme.conf")]).status.code(), Some(0));
    let m = manifest(&tmp.path().join("pme"));
    let tols = m["tolerances"].as_object().unwrap();
    for (k, _) in pjko::tolerances::all() {
        assert!(tols.contains_key(k), "{k}");
    }
    for k in ["inner_tol", "fd_delta", "energy_monotone", "ledger", "bv_monotone", "oracle_l1", "flow_interchange_monotone_beta_1", "flow_interchange_budget_beta_2"] {
        assert!(tols.contains_key(k), "{k}");
    }
    let q = m["exponents"]["q"].as_f64().unwrap();
    assert!((q - 2.0).abs() < 1e-15);
    assert_eq!(m["mccann"], "Pass");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(RunConfig::parse(m["config"].as_str().unwrap()).unwrap(), RunConfig::load(Path::new(&shipped("pme.conf"))).unwrap());
}

#[test]
fn aborted_run_still_writes_manifest_and_partial_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "energy = power:m=2\np = 2\ntau = 1e-3\nT = 0.01\nm = 64\ninitial = bump(0.5, 0.3, 1)\ninner_max_iter = 1\noutput = abort\n");
    let out = pjko(tmp.path(), &["run", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let dir = tmp.path().join("abort");
    let m = manifest(&dir);
    assert!(m["solver_error"].is_string());
    assert!(m["failures"].as_array().unwrap().iter().any(|f| f["assertion"] == "solver"));
    let done = m["steps_completed"].as_u64().unwrap() as usize;
    assert!(done < 10);
    assert_eq!(diagnostics_rows(&dir).len(), done + 1);
}

#[test]
fn non_superlinear_energy_without_schedule_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "energy = qlaplace:p=3\np = 3\ntau = 1e-3\nT = 0.002\nm = 32\ninitial = uniform\noutput = ns\n");
    let out = pjko(tmp.path(), &["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let m = manifest(&tmp.path().join("ns"));
    assert!(m["error"].as_str().unwrap().contains("eps_schedule"));
}

fn sweep_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn tau_sweep_refines_young_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pjko(tmp.path(), &["sweep", &shipped("heat_bump.conf"), "--axis", "tau", "--values", "1e-3,2e-3,4e-3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = sweep_rows(&tmp.path().join("heat_bump/sweep.csv"));
    let gaps: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert_eq!(rows.iter().map(|r| r[1].as_str()).collect::<Vec<_>>(), ["0.004", "0.002", "0.001"]);
    assert!(gaps[2] < gaps[1] && gaps[1] < gaps[0], "{gaps:?}");
    assert!(tmp.path().join("heat_bump/tau_0.001/diagnostics.csv").exists());
}

#[test]
fn eps_and_grid_sweeps_hold_their_trends() {
    let tmp = tempfile::tempdir().unwrap();
    let eps = pjko(tmp.path(), &["sweep", &shipped("pme.conf"), "--axis", "eps", "--values", "1e-1,1e-2,1e-3,1e-4"]);
    assert_eq!(eps.status.code(), Some(0), "{}", String::from_utf8_lossy(&eps.stderr));
    let grid = pjko(tmp.path(), &["sweep", &shipped("indicator_oracle.conf"), "--axis", "grid", "--values", "128,256,512"]);
    assert_eq!(grid.status.code(), Some(0), "{}", String::from_utf8_lossy(&grid.stderr));
    let rows = sweep_rows(&tmp.path().join("indicator_oracle/sweep.csv"));
    let l1: Vec<f64> = rows.iter().map(|r| r[10].parse().unwrap()).collect();
    assert!(l1[2] < l1[1] && l1[1] < l1[0], "{l1:?}");
}

#[test]
fn grid_sweep_on_a_tau_limited_case_reports_the_failed_trend() {
    // The cosine heat case at tau = 1e-3 is dominated by the time error, so
    // refining the grid does not reduce the oracle distance.
    let tmp = tempfile::tempdir().unwrap();
    let out = pjko(tmp.path(), &["sweep", &shipped("heat.conf"), "--axis", "grid", "--values", "64,128"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL trend"));
    assert_eq!(sweep_rows(&tmp.path().join("heat/sweep.csv")).len(), 2);
}

#[test]
fn sweep_rejects_bad_values() {
    let tmp = tempfile::tempdir().unwrap();
    let heat = shipped("heat_bump.conf");
    for values in ["1e-3", "1e-3,4e-3,2e-3", "5e-3,1e-3"] {
        assert_eq!(pjko(tmp.path(), &["sweep", &heat, "--axis", "tau", "--values", values]).status.code(), Some(2), "{values}");
    }
    assert_eq!(pjko(tmp.path(), &["sweep", &shipped("indicator.conf"), "--axis", "grid", "--values", "64,128"]).status.code(), Some(2));
    assert_ne!(pjko(tmp.path(), &["sweep", &heat, "--axis", "space", "--values", "1,2"]).status.code(), Some(0));
}

#[test]
fn report_prints_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(pjko(tmp.path(), &["run", &shipped("uniform.conf")]).status.code(), Some(0));
    let out = pjko(tmp.path(), &["report", &tmp.path().join("uniform").display().to_string()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].contains("young_gap_term"));
    assert!(lines.iter().all(|l| l.len() == lines[0].len()));
    assert_eq!(pjko(tmp.path(), &["report", &tmp.path().join("missing").display().to_string()]).status.code(), Some(2));
}

#[test]
fn validate_lists_every_suite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pjko(tmp.path(), &["validate"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for s in pjko::suites::registry() {
        assert!(text.lines().any(|l| l.starts_with(s.label) && l.contains(" pass ")), "{}", s.label);
    }
    assert!(!text.contains("FAIL"));
}
