use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_ehm-fdi");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("EHM_FDI_REPORT_DIR", dir.join("out"))
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn short_config(dir: &Path) -> String {
    let path = dir.join("short.toml");
    fs::write(&path, "[experiment]\nn = 1500\ndiscard = 100\n").unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn montecarlo_writes_summary_and_table() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["montecarlo", "--fault", "none", "--runs", "3", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = read_json(&tmp.path().join("out/montecarlo-none.json"));
    assert_eq!(summary["n_runs"], 3);
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["reports"].as_array().unwrap().len(), 3);
    let table = fs::read_to_string(tmp.path().join("out/montecarlo-none-table.txt")).unwrap();
    assert!(table.contains("chi2 global"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("minmax R_f"));
}

#[test]
fn missing_config_is_a_config_error_naming_the_path() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["detect", "--config", "absent.toml"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("absent.toml"), "{}", stderr(&o));
}

#[test]
fn invalid_config_values_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["detect", "--alpha-fa", "1.5"]);
    assert_eq!(o.status.code(), Some(3));
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[experiment]\nunknown_key = 1\n").unwrap();
    let o = run(tmp.path(), &["detect", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("unknown_key"), "{}", stderr(&o));
}

#[test]
fn bad_flags_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    for args in [
        &["detect", "--bogus"][..],
        &["frobnicate"][..],
        &["detect", "--fault", "x"][..],
        &["detect", "--fault", "none", "--delta-rel", "0.01"][..],
        &["detect", "--fault", "R_f", "--jsr0", "1e-5"][..],
        &["detect", "--fault", "table"][..],
    ] {
        let o = run(tmp.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn simulation_failures_are_runtime_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("hot.toml");
    // a net discharge of 6C on average runs the cell empty within the record
    fs::write(&cfg, "[cycle]\nmean_c_rate = 6.0\n").unwrap();
    let o = run(tmp.path(), &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("runtime error"));
}

#[test]
fn sensitivity_on_a_csv_cycle_emits_d_c_and_traces() {
    let tmp = TempDir::new().unwrap();
    let mut csv = String::from("time_s,current_a\n");
    for k in 0..=600 {
        let t = k as f64;
        csv.push_str(&format!("{t},{}\n", (t / 40.0).sin() + 0.3 * (t / 7.0).sin()));
    }
    fs::write(tmp.path().join("u.csv"), csv).unwrap();
    // the mirrored profile charges first in its second half: start mid-window
    let cfg = tmp.path().join("mid.toml");
    fs::write(
        &cfg,
        "[experiment]\nn = 1500\ndiscard = 100\ninitial_soc = 0.6\n\n[cycle]\nmax_c_rate = 2.0\nmean_c_rate = 0.0\n",
    )
    .unwrap();
    let o = run(tmp.path(), &["sensitivity", "--config", cfg.to_str().unwrap(), "--cycle", "u.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = read_json(&tmp.path().join("out/sensitivity.json"));
    assert_eq!(s["d"].as_array().unwrap().len(), 4);
    assert_eq!(s["c"][0][0].as_f64().unwrap(), 1.0);
    let trace = fs::read_to_string(tmp.path().join("out/sensitivity-trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 1500);
}

#[test]
fn flags_override_the_config_and_runs_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path());
    let args = [
        "isolate", "--config", &cfg, "--fault", "R_f", "--delta-rel", "0.004", "--ni", "5", "--seed", "11", "--run", "2",
    ];
    let o = run(tmp.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let path = tmp.path().join("out/isolate-R_f+0.4pct-run2.json");
    let first = fs::read_to_string(&path).unwrap();
    let report: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["metadata"]["n_i"], 5);
    assert_eq!(report["metadata"]["seed"], 11);
    assert_eq!(report["metadata"]["run_index"], 2);
    assert_eq!(report["metadata"]["n"], 1500);
    let trace = fs::read_to_string(tmp.path().join("out/isolate-R_f+0.4pct-run2-trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 1500);

    let o = run(tmp.path(), &args);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&path).unwrap(), first);
}

#[test]
fn simulate_dumps_one_row_per_sample() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path());
    let o = run(tmp.path(), &["simulate", "--config", &cfg, "--fault", "side_reaction", "--jsr0", "3e-5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = read_json(&tmp.path().join("out/simulate-side_reaction_j_sr0_3e-5_.json"));
    assert!(summary["q_loss_ah"].as_f64().unwrap() > 0.0);
    let csv = fs::read_to_string(tmp.path().join("out/simulate-side_reaction_j_sr0_3e-5_.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1500);
}
