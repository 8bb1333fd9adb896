use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spinbath::Execution;
use spinbath_cli::config::{self, ScenarioConfig};
use spinbath_cli::runner::scan_command;
use tempfile::TempDir;

fn spinbath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinbath")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_in(dir: &TempDir, cmd: &str, config: &Path, out: &str) -> (Output, PathBuf) {
    let out = dir.path().join(out);
    let o = spinbath(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    (o, out)
}

const SMALL_RUN: &str = "seed = 7\n[geometry]\nkind = \"chain\"\nspins = 4\n[protocol]\nmeasurements = 20\n";

#[test]
fn dense_limit_violation_exits_with_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "big.toml", "engine = \"dense\"\n[geometry]\nkind = \"chain\"\nspins = 20\n[protocol]\nmeasurements = 0\n");
    let (o, _) = run_in(&dir, "run", &cfg, "out");
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 1: engine dense supports at most 12 spins (dense limit)"), "{err}");
    // Every violation is reported, not just the first.
    assert!(err.contains("line 6: at least one measurement"), "{err}");
}

#[test]
fn malformed_config_reports_line() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[geometry]\nkind = \"chain\"\nspins = 4\n[protocol]\nmeasurments = 3\n");
    let (o, _) = run_in(&dir, "run", &cfg, "out");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_a_config_error() {
    assert_eq!(spinbath(&["run"]).status.code(), Some(2));
}

#[test]
fn run_writes_tables_and_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let (o, out) = run_in(&dir, "run", &cfg, "out");
    assert!(o.status.success(), "{}", stderr(&o));
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = traj.lines();
    assert_eq!(lines.next(), Some("step,conditional_p,cumulative_p,purity"));
    assert_eq!(lines.count(), 20);
    let pairs = fs::read_to_string(out.join("pairs.csv")).unwrap();
    assert!(pairs.starts_with("spin_i,spin_j,fidelity,phase,concurrence\n"));
    assert_eq!(pairs.lines().count(), 1 + 6);
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["seed"].as_integer(), Some(7));
    assert_eq!(manifest["derived"]["status"].as_str(), Some("completed"));
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "mc.toml", "seed = 3\nengine = \"montecarlo\"\n[geometry]\nkind = \"chain\"\nspins = 4\n[protocol]\nmeasurements = 6\n[montecarlo]\nsamples = 64\n");
    let (a, out_a) = run_in(&dir, "run", &cfg, "a");
    let (b, out_b) = run_in(&dir, "run", &cfg, "b");
    assert!(a.status.success() && b.status.success(), "{}", stderr(&a));
    for table in ["trajectory.csv", "pairs.csv", "pairing.csv"] {
        assert_eq!(fs::read(out_a.join(table)).unwrap(), fs::read(out_b.join(table)).unwrap(), "{table}");
    }
}

#[test]
fn manifest_refed_as_config_reproduces_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let (o, first) = run_in(&dir, "run", &cfg, "first");
    assert!(o.status.success());
    let (o, second) = run_in(&dir, "run", &first.join("manifest.toml"), "second");
    assert!(o.status.success(), "{}", stderr(&o));
    for table in ["trajectory.csv", "pairs.csv", "pairing.csv"] {
        assert_eq!(fs::read(first.join(table)).unwrap(), fs::read(second.join(table)).unwrap(), "{table}");
    }
    let strip = |p: &Path| {
        let mut t: toml::Table = fs::read_to_string(p).unwrap().parse().unwrap();
        t.remove("out");
        t
    };
    assert_eq!(strip(&first.join("manifest.toml")), strip(&second.join("manifest.toml")));
}

#[test]
fn geff_units_are_recorded_in_absolute_form() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "geff.toml", "[geometry]\nkind = \"explicit\"\ncouplings = [[0.0, 0.0, 2.5]]\n[protocol]\nomega = 1.0\ntau = 0.5\nmeasurements = 2\n");
    let (o, out) = run_in(&dir, "run", &cfg, "out");
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["protocol"]["units"].as_str(), Some("absolute"));
    assert_eq!(manifest["protocol"]["omega"].as_float(), Some(2.5));
    assert_eq!(manifest["protocol"]["tau"].as_float(), Some(0.2));
    assert_eq!(manifest["derived"]["g_eff"].as_float(), Some(2.5));
    assert_eq!(manifest["derived"]["omega_geff"].as_float(), Some(1.0));
}

#[test]
fn minimal_config_echoes_documented_defaults() {
    let src = "[geometry]\nkind = \"chain\"\nspins = 4\n";
    let res = config::validate(&config::parse(src).unwrap(), src).unwrap();
    let echoed = toml::to_string(&res.config).unwrap();
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/minimal.toml")).unwrap();
    let parse = |s: &str| s.parse::<toml::Table>().unwrap();
    assert_eq!(parse(&echoed), parse(&golden), "echoed:\n{echoed}");
    // The golden file is itself a valid config that resolves to the same run.
    let again: ScenarioConfig = config::parse(&golden).unwrap();
    assert_eq!(config::validate(&again, &golden).unwrap().protocol, res.protocol);
}

#[test]
fn extinction_exits_with_partial_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "ext.toml", "[geometry]\nkind = \"chain\"\nspins = 3\n[protocol]\nmeasurements = 10\nextinction_floor = 0.9999\n");
    let (o, out) = run_in(&dir, "run", &cfg, "out");
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1);
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["derived"]["status"].as_str(), Some("extinct@1"));
}

#[test]
fn branch_capacity_exits_with_capacity_code() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "cap.toml", "engine = \"factored\"\n[geometry]\nkind = \"chain\"\nspins = 3\n[protocol]\nmeasurements = 40\ninitial = \"up\"\n");
    let (o, _) = run_in(&dir, "run", &cfg, "out");
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn engine_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let out = dir.path().join("out");
    let o = spinbath(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--engine", "factored"]);
    // The factored engine needs a product input, so the mixed default is rejected.
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("product initial state"));
}

#[test]
fn scan_rows_do_not_depend_on_evaluation_order() {
    let src = "[geometry]\nkind = \"chain\"\nspins = 4\n[scan]\nmeasurements = 10\nomega = { min = 0.5, max = 2.0, points = 3 }\ntau = { min = 0.5, max = 2.0, points = 4 }\n";
    let res = config::validate(&config::parse(src).unwrap(), src).unwrap();
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("seq"), dir.path().join("par"));
    scan_command(&res, &a, Execution::Sequential).unwrap();
    spinbath::par::with_threads(3, || scan_command(&res, &b, Execution::Parallel)).unwrap();
    let table = fs::read_to_string(a.join("scan.csv")).unwrap();
    assert_eq!(table, fs::read_to_string(b.join("scan.csv")).unwrap());
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("omega,tau,omega_geff,tau_geff,purity,cumulative_p,n_pairs,status"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').take(4).map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 12);
    // ω outer, τ inner; absolute and g_eff-relative columns agree.
    assert_eq!((rows[0][2], rows[0][3]), (0.5, 0.5));
    assert_eq!((rows[1][2], rows[1][3]), (0.5, 1.0));
    assert_eq!((rows[4][2], rows[4][3]), (1.25, 0.5));
    for r in &rows {
        assert!((r[0] / r[2] - res.g_eff).abs() < 1e-12 * res.g_eff);
        assert!((r[1] * res.g_eff - r[3]).abs() < 1e-12);
    }
}

#[test]
fn verify_reports_crossings() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("v");
    let o = spinbath(&["verify", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("verification.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("m,unpolarized,singlet"));
    assert_eq!(table.lines().count(), 61);
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["derived"]["m_star_unpolarized"].as_integer(), Some(2));
    assert_eq!(manifest["derived"]["m_star_singlet"].as_integer(), Some(8));
}

#[test]
fn sense_writes_coherence_and_spectroscopy() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "sense.toml",
        "[geometry]\nkind = \"chain\"\nspins = 4\n[sense]\ncoherence_points = 10\n[sense.spectroscopy]\ntau = { min = 0.6, max = 1.0, points = 41 }\n",
    );
    let (o, out) = run_in(&dir, "sense", &cfg, "out");
    assert!(o.status.success(), "{}", stderr(&o));
    let coh = fs::read_to_string(out.join("coherence.csv")).unwrap();
    assert_eq!(coh.lines().next(), Some("t,t_geff,mixed,polarized,paired"));
    assert_eq!(coh.lines().count(), 11);
    let spec = fs::read_to_string(out.join("spectroscopy.csv")).unwrap();
    assert_eq!(spec.lines().next(), Some("tau,tau_omega,paired,unpolarized,strong_removed"));
    assert_eq!(spec.lines().count(), 42);
}

#[test]
fn pairing_region_straddles_inverse_tau_line() {
    let src = "[geometry]\nkind = \"chain\"\nspins = 8\n[scan]\nmeasurements = 50\nomega = { min = 0.5, max = 2.0, points = 7 }\ntau = { min = 0.5, max = 1.5, points = 5 }\n";
    let res = config::validate(&config::parse(src).unwrap(), src).unwrap();
    let dir = TempDir::new().unwrap();
    scan_command(&res, dir.path(), Execution::default()).unwrap();
    let table = fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    let rows: Vec<(f64, usize)> = table
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse::<f64>().unwrap() * f[1].parse::<f64>().unwrap(), f[6].parse().unwrap())
        })
        .collect();
    let best = rows.iter().map(|r| r.1).max().unwrap();
    assert_eq!(best, 4, "full pairing of the 8-spin chain somewhere on the grid");
    let products: Vec<f64> = rows.iter().filter(|r| r.1 == best).map(|r| r.0).collect();
    assert!(products.iter().any(|&p| p < 1.0) && products.iter().any(|&p| p > 1.0), "{products:?}");
}
