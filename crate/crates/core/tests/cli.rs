use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_shadow-price"));
    for (k, _) in std::env::vars() {
        if k.starts_with("SHADOW_PRICE_") {
            c.env_remove(k);
        }
    }
    c
}

fn reference_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn manifest_hash(dir: &Path) -> String {
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    m["manifest_sha256"].as_str().unwrap().to_string()
}

fn read_csv(path: &Path) -> (String, Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let tag = lines.next().unwrap().to_string();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (tag, header, rows)
}

#[test]
fn solve_writes_consistent_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = reference_config();
    let o = run(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hash = manifest_hash(dir.path());
    assert_eq!(hash.len(), 64);

    let (tag, header, rows) = read_csv(&dir.path().join("value_table.csv"));
    assert_eq!(tag, format!("# manifest_sha256={hash}"));
    assert_eq!(header, ["u", "f", "h", "hp", "hpp", "big_h", "residual"]);
    assert_eq!(rows.len(), 1001);
    assert!(rows.iter().all(|r| r.len() == 7 && r[2] > 0.0 && r[5] > 0.0));

    let (_, header, rows) = read_csv(&dir.path().join("g_grid.csv"));
    assert_eq!(header, ["z", "g", "gp", "gpp"]);
    assert_eq!(rows.len(), 4001);

    let sol: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["manifest_sha256"], hash.as_str());
    let s = &sol["summary"];
    let (t1, t2) = (s["theta1"].as_f64().unwrap(), s["theta2"].as_f64().unwrap());
    assert!(0.0 < t1 && t1 < 0.625 && 0.625 < t2 && t2 < 1.0);
    let u1 = s["u1"].as_f64().unwrap();
    assert_eq!(rows.last().unwrap()[0], s["beta_hi"].as_f64().unwrap());
    assert!((1.0 / (1.0 + u1) - t2).abs() < 1e-15);
}

#[test]
fn zero_paths_is_a_config_error_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = run(&["simulate", "--paths", "0"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_paths"));
    assert!(!out.exists());
}

#[test]
fn environment_overrides_mirror_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env");
    let o = bin()
        .args(["simulate"])
        .env("SHADOW_PRICE_PATHS", "0")
        .env("SHADOW_PRICE_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_paths"));
}

#[test]
fn unknown_config_key_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[simulation]\nn_paths = 4\nstep = 0.1\n").unwrap();
    let o = run(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("step") && err.contains("line 3"), "{err}");
}

#[test]
fn invalid_market_is_reported_with_every_condition() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"params": {"mu": 0.2, "sigma": 0.4, "delta": 0.1, "gamma": 0.5, "lambda_ask": 0.01, "lambda_bid": 0.01}}"#,
    )
    .unwrap();
    let o = run(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: market-params"));
}

#[test]
fn eval_prints_shadow_state() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["eval", "--x", "0.6", "--y", "1.0", "--price", "2.0", "--t", "0.5"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let st = v["state"]["shadow_price"].as_f64().unwrap();
    assert!(st > 2.0 * 0.99 && st < 2.0 * 1.01);
    assert_eq!(v["state"]["phi1"].as_f64().unwrap(), 0.5);
    assert!(v["derivatives"]["vx"].as_f64().unwrap() > 0.0);

    let o = run(&["eval", "--x", "5.0", "--y", "1.0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("outside the no-trade"));
}

#[test]
fn simulate_emits_paths_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let o =
        run(&["simulate", "--paths", "4", "--horizon", "0.1", "--dt", "0.01", "--emit-paths"], dir.path());
    let (tag, header, rows) = read_csv(&dir.path().join("paths.csv"));
    assert!(tag.starts_with("# manifest_sha256="));
    assert_eq!(header[0], "path");
    assert_eq!(header[1], "t");
    assert_eq!(header.len(), 18);
    assert_eq!(rows.len(), 4 * 11);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("simulation.json")).unwrap()).unwrap();
    assert_eq!(report["n_paths"], 4);
    let passed = report["passed"].as_bool().unwrap();
    assert_eq!(o.status.code(), Some(if passed { 0 } else { 1 }));
    assert!(report["entries"].as_array().unwrap().len() > 10);

    let none = dir.path().join("quiet");
    run(&["simulate", "--paths", "2", "--horizon", "0.1", "--dt", "0.01"], &none);
    assert!(!none.join("paths.csv").exists());
}

#[test]
fn verify_report_matches_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(
        &cfg,
        "[simulation]\nn_paths = 200\nhorizon = 0.5\n[verify]\npathwise_paths = 4\ngap_paths = 20\ndensity_paths = 4\n",
    )
    .unwrap();
    let o = run(&["verify", "--config", cfg.to_str().unwrap()], dir.path());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("verification.json")).unwrap()).unwrap();
    let passed = report["passed"].as_bool().unwrap();
    assert_eq!(o.status.code(), Some(if passed { 0 } else { 1 }));
    let text = std::fs::read_to_string(dir.path().join("verification.json")).unwrap();
    assert!(!text.contains("elapsed") && !text.contains("created"));
    let names: Vec<&str> =
        report["entries"].as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap()).collect();
    for n in ["hjb_residual", "merton_limit", "martingale_density", "spread_containment", "scheme_agreement"]
    {
        assert!(names.contains(&n), "{n}");
    }
}
