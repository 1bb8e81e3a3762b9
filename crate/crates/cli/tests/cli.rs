use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use execrisk::{LiquidityCase, MarketParams};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_execrisk"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, value: serde_json::Value) -> String {
    let path = dir.join("config.json");
    fs::write(&path, value.to_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn reference_market_is_viable() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["viability"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("viable, strictly convex"));
    assert!(dir.path().join("viability.json").exists());
}

#[test]
fn inflated_permanent_impact_fails_viability() {
    let dir = tempfile::tempdir().unwrap();
    let mut market = MarketParams::reference(LiquidityCase::Stable);
    market.gamma *= 10.0;
    let cfg = write_config(dir.path(), serde_json::json!({ "market": market }));
    let out = run(dir.path(), &["--config", &cfg, "viability"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("violation"));
}

#[test]
fn missing_market_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut market = serde_json::to_value(MarketParams::reference(LiquidityCase::Stable)).unwrap();
    market.as_object_mut().unwrap().remove("eta");
    let cfg = write_config(dir.path(), serde_json::json!({ "market": market }));
    let out = run(dir.path(), &["--config", &cfg, "viability"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("eta"));
}

#[test]
fn mean_variance_grid_writes_every_solution() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["solve", "--model", "mv"]);
    assert!(out.status.success());
    for lv in ["0", "0.0000001", "0.000001", "0.00001", "0.0001"] {
        let json = fs::read_to_string(dir.path().join(format!("solve_mv_{lv}.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["n_star"].as_array().unwrap().len(), 5);
        let csv = fs::read_to_string(dir.path().join(format!("strategy_mv_{lv}.csv"))).unwrap();
        assert!(csv.starts_with("period,y\n1,"));
        assert_eq!(csv.lines().count(), 6);
    }
}

#[test]
fn cvar_lambda_outside_unit_interval_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["--solve-paths", "1000", "solve", "--model", "cvar", "--lambda", "1.5"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}

#[test]
fn cvar_grid_has_five_solutions() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--solve-paths", "2000", "solve", "--model", "cvar"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for l in ["0", "0.25", "0.5", "0.75", "1"] {
        assert!(dir.path().join(format!("solve_cvar_{l}.json")).exists());
    }
}

#[test]
fn table_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--solve-paths", "2000", "--paths", "20000", "table", "2b"];
    assert!(run(a.path(), &args).status.success());
    assert!(run(b.path(), &args).status.success());
    let ta = fs::read(a.path().join("table_2b.csv")).unwrap();
    let tb = fs::read(b.path().join("table_2b.csv")).unwrap();
    assert_eq!(ta, tb);
    let text = String::from_utf8(ta).unwrap();
    assert!(text.starts_with("lambda,expectation,cvar,variance,phi\n"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn compare_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--solve-paths", "5000", "--paths", "20000", "compare"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let density = fs::read_to_string(dir.path().join("density.csv")).unwrap();
    assert_eq!(density.lines().count(), 201);
    let cdf = fs::read_to_string(dir.path().join("cdf.csv")).unwrap();
    assert!(cdf.starts_with("cost,cdf_cvar,cdf_recourse\n"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("dominance"));
}

#[test]
fn no_volume_risk_means_no_strategy_delta() {
    let dir = tempfile::tempdir().unwrap();
    let market = MarketParams::reference(LiquidityCase::Stable).without_volume_uncertainty();
    let cfg = write_config(
        dir.path(),
        serde_json::json!({
            "market": market,
            "scenarios": { "paths": 2000 },
            "run": { "lambdas": [0.0, 1.0] }
        }),
    );
    let out = run(dir.path(), &["--config", &cfg, "strategy-delta"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("strategy_delta.csv")).unwrap();
    for line in csv.lines().skip(1) {
        assert!(line.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0), "{line}");
    }
}

#[test]
fn scenario_file_has_the_requested_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--paths", "1000", "--seed", "9", "gen-scenarios"]);
    assert!(out.status.success());
    let bytes = fs::read(dir.path().join("scenarios.bin")).unwrap();
    assert_eq!(&bytes[..4], b"EXSC");
    assert_eq!(bytes.len(), 4 + 4 + 4 + 8 + 8 + 8 + 1000 * 10 * 8);
    let (set, _) = execrisk::ScenarioSet::load(dir.path().join("scenarios.bin"), None).unwrap();
    assert_eq!(set.seed(), 9);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["case_a.json", "case_b.json"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = root.join(name);
        let out = run(dir.path(), &["--config", cfg.to_str().unwrap(), "viability"]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
