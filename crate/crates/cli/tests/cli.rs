use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ckelly(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ckelly"));
    cmd.args(args).env_remove("CKELLY_OUT_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(body).unwrap()).unwrap();
    path
}

fn small_config() -> Value {
    serde_json::json!({
        "market": {
            "type": "iid",
            "atoms": [
                {"returns": [2.0, 1.0], "probability": 0.5},
                {"returns": [0.5, 1.0], "probability": 0.5}
            ]
        },
        "rounds": 300,
        "seeds": [3, 1],
        "grid": {"signal_points": 1, "mu": 1.1, "epsilon": 0.5, "max_forecast_points": 1000},
        "sample_every": 50,
        "comparators": {"cover_nodes": 256}
    })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| {
        panic!(
            "stderr is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn run_ok(args: &[&str]) -> Output {
    let out = ckelly(args, &[]);
    assert!(
        out.status.success(),
        "ckelly {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.json", &small_config());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        run_ok(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    for f in ["report.json", "trajectory.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let report = read_json(&a.join("report.json"));
    assert_eq!(report["seeds"].as_array().unwrap().len(), 1);
    assert_eq!(report["seeds"][0]["seed"], 7);
}

#[test]
fn missing_config_exits_2_naming_path() {
    let out = ckelly(&["run", "--config", "/nonexistent/cfg.json"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "config");
    assert_eq!(err["error"]["path"], "/nonexistent/cfg.json");
}

#[test]
fn unknown_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["roundz"] = 5.into();
    let path = write_config(tmp.path(), "bad.json", &cfg);
    let out = ckelly(&["run", "--config", path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("roundz"));

    let mut cfg = small_config();
    cfg["market"]["atoms"][0]["returns"] = serde_json::json!([3.0, 1.0]);
    let path = write_config(tmp.path(), "range.json", &cfg);
    assert_eq!(
        ckelly(&["run", "--config", path.to_str().unwrap()], &[])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn bad_arguments_exit_2() {
    let out = ckelly(&["run", "--config", "x.json", "--market", "bogus"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "config");
}

#[test]
fn adversary_gap_is_at_least_one_eighth() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.json", &small_config());
    let out = tmp.path().join("adv");
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--market",
        "adversary",
        "--rounds",
        "10000",
        "--seed",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    let report = read_json(&out.join("report.json"));
    let gap = report["seeds"][0]["gap_per_round"].as_f64().unwrap();
    assert!(gap >= 0.125, "gap_per_round {gap}");
    assert_eq!(report["config"]["market"]["type"], "adversary");
}

#[test]
fn zero_rounds_report_unit_wealth() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["rounds"] = 0.into();
    let path = write_config(tmp.path(), "zero.json", &cfg);
    let out = tmp.path().join("zero");
    run_ok(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["seeds"][0]["final_log2_wealth"]["investor"], 0.0);
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    run_ok(&["verify", "--dir", out.to_str().unwrap()]);
}

#[test]
fn report_matches_schema_and_aggregates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.json", &small_config());
    let out = tmp.path().join("o");
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let report = read_json(&out.join("report.json"));

    let schema =
        read_json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json"));
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(&report)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{errors:?}");

    let seeds = report["seeds"].as_array().unwrap();
    assert_eq!(
        seeds
            .iter()
            .map(|s| s["seed"].as_u64().unwrap())
            .collect::<Vec<_>>(),
        vec![3, 1]
    );
    let min = seeds
        .iter()
        .map(|s| s["gap_vs_piecewise"].as_f64().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(
        report["aggregates"]["min_gap_vs_piecewise"]
            .as_f64()
            .unwrap(),
        min
    );
    let stage = &report["stages"][0];
    assert_eq!(
        (stage["K"].as_u64(), stage["t_start"].as_u64()),
        (Some(1), Some(1))
    );
}

/// Calibration score from trajectory.csv with independently written counting:
/// `(1/T) sum |N(s,i) - M(s) s(i)|` over forecasts `s` and bins `i`.
#[test]
fn last_calibration_sample_matches_trajectory() {
    use calibrated_kelly::discretization::{build_grids, GridStageParams, MarketSpec};
    use std::collections::BTreeMap;

    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.json", &small_config());
    let out = tmp.path().join("o");
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    let report = read_json(&out.join("report.json"));
    let last = report["seeds"][0]["calibration_samples"]
        .as_array()
        .unwrap()
        .last()
        .unwrap()
        .clone();
    assert_eq!(last["t"], 300);

    let mut rdr = csv::Reader::from_path(out.join("trajectory.csv")).unwrap();
    let h = rdr.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (fi, bi) = (col("forecast_index"), col("return_bin"));
    let mut n: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut m: BTreeMap<usize, f64> = BTreeMap::new();
    let mut t = 0.0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let s: usize = rec[fi].parse().unwrap();
        let b: usize = rec[bi].parse().unwrap();
        *n.entry((s, b)).or_default() += 1.0;
        *m.entry(s).or_default() += 1.0;
        t += 1.0;
    }
    let spec = MarketSpec::new(2, 0.5, 2.0, 0.0, 1.0).unwrap();
    let grids = build_grids(
        &spec,
        &GridStageParams {
            signal_points: 1,
            mu: 1.1,
            epsilon: 0.5,
            max_forecast_points: 1000,
        },
    )
    .unwrap();
    let mut total = 0.0;
    for (&s, &ms) in &m {
        let row = grids.forecasts.row(s, 0).unwrap();
        for (i, p) in row.iter().enumerate() {
            total += (n.get(&(s, i)).copied().unwrap_or(0.0) - ms * p).abs();
        }
    }
    let score = last["score"].as_f64().unwrap();
    assert!(
        (score - total / t).abs() <= 1e-9,
        "{score} vs {}",
        total / t
    );
}

#[test]
fn verify_accepts_runs_and_rejects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.json", &small_config());
    let out = tmp.path().join("o");
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let ok = run_ok(&["verify", "--dir", out.to_str().unwrap()]);
    let summary: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(summary["ok"], true);
    assert_eq!(summary["rows"], 600);

    let path = out.join("report.json");
    let mut report = read_json(&path);
    let w = report["seeds"][1]["final_log2_wealth"]["investor"]
        .as_f64()
        .unwrap();
    report["seeds"][1]["final_log2_wealth"]["investor"] = (w + 1e-6).into();
    std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap()).unwrap();
    let bad = ckelly(&["verify", "--dir", out.to_str().unwrap()], &[]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(stderr_json(&bad)["error"]["kind"], "mismatch");
}

#[test]
fn env_sets_output_dir_and_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["output"] = serde_json::json!({"dir": tmp.path().join("from_config")});
    let path = write_config(tmp.path(), "min.json", &cfg);
    let env_dir = tmp.path().join("from_env");
    let out = ckelly(
        &[
            "run",
            "--config",
            path.to_str().unwrap(),
            "--emit-plot-data",
        ],
        &[("CKELLY_OUT_DIR", &env_dir)],
    );
    assert!(out.status.success());
    for f in [
        "report.json",
        "trajectory.csv",
        "plot_wealth.csv",
        "plot_samples.csv",
    ] {
        assert!(env_dir.join(f).exists(), "{f}");
    }
    assert!(!tmp.path().join("from_config").exists());
}

#[test]
fn csv_market_replays_file() {
    let tmp = tempfile::tempdir().unwrap();
    let rows: String = (0..40)
        .map(|i| {
            format!(
                "{},{},1\n",
                if i % 2 == 0 { 0.2 } else { 0.8 },
                if i % 3 == 0 { 2.0 } else { 0.5 }
            )
        })
        .collect();
    std::fs::write(tmp.path().join("m.csv"), format!("signal,a,b\n{rows}")).unwrap();
    let mut cfg = small_config();
    cfg["market"] = serde_json::json!({"type": "csv", "path": "m.csv"});
    cfg["rounds"] = 40.into();
    cfg["grid"]["signal_points"] = 2.into();
    cfg["grid"]["max_forecast_points"] = 10000.into();
    let path = write_config(tmp.path(), "csv.json", &cfg);
    let out = tmp.path().join("o");
    run_ok(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let mut rdr = csv::Reader::from_path(out.join("trajectory.csv")).unwrap();
    let first = rdr.records().next().unwrap().unwrap();
    assert_eq!(
        (&first[3], &first[4], &first[5], &first[6]),
        ("0.2", "0", "2", "1")
    );
    run_ok(&["verify", "--dir", out.to_str().unwrap()]);

    cfg["rounds"] = 41.into();
    let path = write_config(tmp.path(), "long.json", &cfg);
    assert_eq!(
        ckelly(&["run", "--config", path.to_str().unwrap()], &[])
            .status
            .code(),
        Some(2)
    );

    std::fs::write(tmp.path().join("m.csv"), "a,b\n2.5,1\n").unwrap();
    let out = ckelly(&["run", "--config", path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["rows"], serde_json::json!([1]));
}
