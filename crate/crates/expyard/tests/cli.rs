use std::fs;
use std::path::Path;

use decaylab_expyard::config::SCHEMA_VERSION;
use decaylab_expyard::run::{summarize, MANIFEST};
use decaylab_expyard::{cli, run_experiment, ExperimentConfig, RunManifest, Scenario, YardError};
use proptest::prelude::*;

const WAVE_ZERO: &str = r#"
schema = 1
scenario = "wave-decay"
seed = 3

[profile]
s = 0.5

[grid]
geometry = "radial"
r = 30.0
n = 299

[wave]
t_end = 20.0
n_t = 41
zero_data = true
"#;

const WAVE_ZERO_REORDERED: &str = r#"
scenario = "wave-decay"

[wave]
zero_data = true
n_t = 41
t_end = 20.0

[grid]
n = 299
r = 30.0
geometry = "radial"

[profile]
s = 0.5
"#;

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["decaylab"];
    v.extend_from_slice(args);
    cli(v)
}

fn strip_time(mut m: RunManifest) -> RunManifest {
    m.wall_time_s = 0.0;
    m
}

#[test]
fn config_round_trips_and_hashes_canonically() {
    let a = ExperimentConfig::parse(WAVE_ZERO).unwrap();
    let text = a.to_text().unwrap();
    let b = ExperimentConfig::parse(&text).unwrap();
    assert_eq!(a, b);
    assert_eq!(text, b.to_text().unwrap());
    let c = ExperimentConfig::parse(&format!("schema = 1\nseed = 3\n{WAVE_ZERO_REORDERED}")).unwrap();
    assert_eq!(a.content_hash().unwrap(), c.content_hash().unwrap());
    let mut d = a.clone();
    d.seed = 4;
    assert_ne!(a.content_hash().unwrap(), d.content_hash().unwrap());
}

#[test]
fn schema_violations_are_config_errors() {
    let bad_version = WAVE_ZERO.replace("schema = 1", "schema = 9");
    assert!(matches!(ExperimentConfig::parse(&bad_version), Err(YardError::Config(_))));
    let unknown = WAVE_ZERO.replace("seed = 3", "seed = 3\ncolour = \"red\"");
    assert!(matches!(ExperimentConfig::parse(&unknown), Err(YardError::Config(_))));
    let missing = WAVE_ZERO.replace("[wave]\nt_end = 20.0\nn_t = 41\nzero_data = true\n", "");
    let e = ExperimentConfig::parse(&missing).unwrap_err();
    assert!(matches!(e, YardError::Config(_)));
    assert_eq!(e.exit_code(), 2);
    let mut big = ExperimentConfig::default_for(Scenario::ThetaCheck);
    big.seed = u64::MAX;
    assert!(matches!(big.validate(), Err(YardError::Config(_))));
}

#[test]
fn every_scenario_has_a_valid_default() {
    for s in Scenario::ALL {
        let cfg = ExperimentConfig::default_for(s);
        assert_eq!(cfg.schema, SCHEMA_VERSION);
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_text().unwrap()).unwrap(), cfg);
    }
}

#[test]
fn theta_check_records_unit_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("theta");
    assert_eq!(run(&["check-theta", "--s", "1.0", "--out", out.to_str().unwrap()]), 0);
    let m = RunManifest::load(&out).unwrap();
    assert!((m.metrics["c_tilde"] - 1.0).abs() < 1e-12);
    assert!(m.passed);
}

#[test]
fn zero_data_wave_run_skips_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(WAVE_ZERO).unwrap();
    let m = run_experiment(&cfg, dir.path()).unwrap();
    assert!(m.notes.iter().any(|n| n.contains("fit skipped")));
    assert!(!m.artifacts.iter().any(|a| a.file == "fit.json"));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "t,e,e_dt_term,e_grad_term,e_mass_term");
    assert_eq!(lines.clone().count(), 41);
    assert!(lines.all(|l| l.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0)));
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default_for(Scenario::ResolventSweep);
    let a = run_experiment(&cfg, &dir.path().join("a")).unwrap();
    let b = run_experiment(&cfg, &dir.path().join("b")).unwrap();
    assert_eq!(strip_time(a), strip_time(b));
}

#[test]
fn artifacts_match_their_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default_for(Scenario::ThetaCheck);
    let m = run_experiment(&cfg, dir.path()).unwrap();
    assert!(m.verify(dir.path()).is_empty());
    for a in &m.artifacts {
        assert!(dir.path().join(&a.file).is_file());
    }
    fs::write(dir.path().join("theta.json"), "{}").unwrap();
    assert_eq!(m.verify(dir.path()), vec!["theta.json".to_string()]);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["wave-decay", "--config", "missing.cfg"]), 2);
    assert_eq!(run(&["no-such-command"]), 2);
    assert_eq!(run(&["report", "--dir", "/definitely/not/here"]), 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wave.toml");
    fs::write(&path, WAVE_ZERO).unwrap();
    assert_eq!(run(&["born-series", "--config", path.to_str().unwrap()]), 2);
}

#[test]
fn failing_checks_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s1");
    assert_eq!(run(&["build-cutoff", "--s", "1.0", "--out", out.to_str().unwrap()]), 1);
}

fn report_fixture(root: &Path) {
    assert_eq!(run(&["check-theta", "--s", "1.0", "--out", root.join("good").to_str().unwrap()]), 0);
    assert_eq!(run(&["build-cutoff", "--s", "0.5", "--k-max", "20", "--out", root.join("bad").to_str().unwrap()]), 1);
}

#[test]
fn report_aggregates_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    report_fixture(dir.path());
    let before: Vec<_> = walk(dir.path());
    let csv = dir.path().join("summary.csv");
    assert_eq!(run(&["report", "--dir", dir.path().to_str().unwrap(), "--csv", csv.to_str().unwrap()]), 1);
    let rows = summarize(dir.path()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().any(|r| r.passed) && rows.iter().any(|r| !r.passed));
    let first = fs::read_to_string(&csv).unwrap();
    fs::remove_file(&csv).unwrap();
    assert_eq!(walk(dir.path()), before);
    assert_eq!(run(&["report", "--dir", dir.path().to_str().unwrap(), "--csv", csv.to_str().unwrap()]), 1);
    assert_eq!(fs::read_to_string(&csv).unwrap(), first);
    assert!(first.contains("theta-check") && first.contains("cutoff"));
}

#[test]
fn report_over_passing_runs_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["check-theta", "--out", dir.path().join("a").to_str().unwrap()]), 0);
    assert_eq!(run(&["report", "--dir", dir.path().to_str().unwrap()]), 0);
    // tampering is reported as a failure
    fs::write(dir.path().join("a").join("config.toml"), "x").unwrap();
    assert_eq!(run(&["report", "--dir", dir.path().to_str().unwrap()]), 1);
}

#[test]
fn output_directory_override() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let cfg = ExperimentConfig::default_for(Scenario::ThetaCheck);
    std::env::set_var("DECAYLAB_OUT", &target);
    let resolved = decaylab_expyard::run::resolve_out(None, &cfg).unwrap();
    let flagged = decaylab_expyard::run::resolve_out(Some(dir.path()), &cfg).unwrap();
    std::env::remove_var("DECAYLAB_OUT");
    assert_eq!(resolved, target);
    assert_eq!(flagged, dir.path());
    let fallback = decaylab_expyard::run::resolve_out(None, &cfg).unwrap();
    assert!(fallback.starts_with("runs"));
}

fn walk(p: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in fs::read_dir(p).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else if path.file_name().unwrap() != "summary.csv" {
            let bytes = fs::read(&path).unwrap();
            out.push((path.display().to_string(), if path.ends_with(MANIFEST) { Vec::new() } else { bytes }));
        }
    }
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn floats_round_trip_bit_identically(s in 0.01f64..0.99, c in 0.1f64..10.0, seed in 0..=i64::MAX as u64) {
        let mut cfg = ExperimentConfig::default_for(Scenario::ThetaCheck);
        cfg.profile.s = s;
        cfg.profile.c = c;
        cfg.seed = seed;
        let back = ExperimentConfig::parse(&cfg.to_text().unwrap()).unwrap();
        prop_assert_eq!(back.profile.s.to_bits(), s.to_bits());
        prop_assert_eq!(back.profile.c.to_bits(), c.to_bits());
        prop_assert_eq!(back.content_hash().unwrap(), cfg.content_hash().unwrap());
    }
}
