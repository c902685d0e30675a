use std::fs;
use std::path::Path;

use safeprice::cli_run;
use serde_json::Value;

fn run(out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["safeprice", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    cli_run(args)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_algorithm_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert_ne!(run(dir.path(), &["--algo", "bogus"]), 0);
    assert!(!dir.path().join("summary.json").exists());
}

#[test]
fn missing_scenario_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(dir.path(), &["--scenario", "/nonexistent/feeder.json"]);
    assert_eq!(code, 1);
}

#[test]
fn zero_trials_write_only_the_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--trials", "0"]), 0);
    let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec!["summary.json"]);
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["trials"].as_array().unwrap().len(), 0);
    assert_eq!(summary["violations"], 0);
}

#[test]
fn single_step_horizon_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--horizon", "1"]), 0);
    let (header, rows) = read_csv(&dir.path().join("trial_001/trace.csv"));
    // t, 3 groups × 3 periods of prices, 37 users × 3 periods, 4 tail columns
    assert_eq!(header.len(), 1 + 9 + 111 + 4);
    assert_eq!(header[1], "price_g1_p1");
    assert_eq!(header[10], "obs_u1_p1");
    assert_eq!(&header[header.len() - 4..], ["safe", "explore", "regret", "rolling_regret"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], 1.0);
    // a one-step horizon is all exploration
    assert_eq!(rows[0][header.len() - 3], 1.0);
}

#[test]
fn csv_reproduces_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--horizon", "90", "--trials", "2", "--window", "7"]), 0);
    for trial in ["trial_001", "trial_002"] {
        let (header, rows) = read_csv(&dir.path().join(trial).join("trace.csv"));
        let summary = json(&dir.path().join(trial).join("summary.json"));
        let col = |name: &str| header.iter().position(|h| h == name).unwrap();
        let regret: Vec<f64> = rows.iter().map(|r| r[col("regret")]).collect();
        assert_eq!(rows.len(), 90);
        assert!(rows.iter().enumerate().all(|(k, r)| r[0] == (k + 1) as f64));

        let total: f64 = regret.iter().sum();
        let reported = summary["cumulative_regret"].as_f64().unwrap();
        assert!((total - reported).abs() <= 1e-9 * reported.abs().max(1.0), "{total} vs {reported}");

        let explored = rows.iter().filter(|r| r[col("explore")] == 1.0).count();
        assert_eq!(explored as u64, summary["exploration"].as_u64().unwrap());
        assert!(rows[..explored].iter().all(|r| r[col("explore")] == 1.0));
        assert!(rows.iter().all(|r| r[col("safe")] == 1.0));
        assert_eq!(summary["violations"], 0);
        assert_eq!(summary["config"]["window"], 7);

        for (k, r) in rows.iter().enumerate() {
            let expected: f64 = regret[k.saturating_sub(6)..=k].iter().sum();
            let got = r[col("rolling_regret")];
            assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0), "row {k}: {got} vs {expected}");
        }
    }
    let aggregate = json(&dir.path().join("summary.json"));
    assert_eq!(aggregate["trials"].as_array().unwrap().len(), 2);
    assert_eq!(aggregate["algorithm"], "spr");
}

#[test]
fn scenario_file_matches_bundled_default() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("feeder.json");
    fs::write(&file, safeprice::dr::DEFAULT_SCENARIO).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&a, &["--horizon", "70", "--seed", "3"]), 0);
    assert_eq!(run(&b, &["--horizon", "70", "--seed", "3", "--scenario", file.to_str().unwrap()]), 0);
    let read = |p: &Path| fs::read(p.join("trial_001/trace.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn seeds_change_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&a, &["--horizon", "30", "--seed", "1"]), 0);
    assert_eq!(run(&b, &["--horizon", "30", "--seed", "2"]), 0);
    let read = |p: &Path| fs::read(p.join("trial_001/trace.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn overrides_reach_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--horizon", "12", "--explore", "5", "--delta", "0.05", "--nu", "4", "--sigma", "0.5"];
    assert_eq!(run(dir.path(), &args), 0);
    let summary = json(&dir.path().join("trial_001/summary.json"));
    assert_eq!(summary["horizon"], 12);
    assert_eq!(summary["exploration"], 5);
    assert_eq!(summary["config"]["delta"], 0.05);
    assert_eq!(summary["config"]["nu"], 4.0);
    assert_eq!(summary["config"]["sigma"], 0.5);
}

#[test]
fn invalid_override_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--horizon", "10", "--explore", "11"]), 1);
    assert_eq!(run(dir.path(), &["--delta", "1.5"]), 1);
}
