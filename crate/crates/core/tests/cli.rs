use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use augsearch::experiment::{RunRecord, SweepTable};
use augsearch::policy::AugPolicy;

const DATASET: &str = "synthetic:color,k=2,size=8,per_class=20,noise=0.1";

const CONFIG: &str = r#"{
  "seeds": 2,
  "search": {
    "epochs": 1,
    "fixmatch": {"batch_size": 4, "mu": 2, "tau": 0.6},
    "model": {"conv_widths": [4], "hidden": 8}
  },
  "train": {
    "epochs": 1,
    "fixmatch": {"batch_size": 4, "mu": 2, "tau": 0.6},
    "model": {"conv_widths": [4], "hidden": 8}
  }
}"#;

fn augsearch(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_augsearch"))
        .args(args)
        .args(["--dataset", DATASET, "--config"])
        .arg(dir.join("cfg.json"))
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "augsearch {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    dir
}

fn records(out: &Path) -> Vec<RunRecord> {
    let mut paths: Vec<_> = fs::read_dir(out.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths
        .iter()
        .map(|p| RunRecord::from_json(&fs::read_to_string(p).unwrap()).unwrap())
        .collect()
}

#[test]
fn search_train_report_pipeline() {
    let dir = setup();
    let out = dir.path().join("out");
    augsearch(dir.path(), &["search"]);
    for seed in [0, 1] {
        let text = fs::read_to_string(out.join(format!("search/policy-s{seed}.json"))).unwrap();
        assert_eq!(AugPolicy::from_json(&text).unwrap().sub_policies.len(), 105);
        let log = fs::read_to_string(out.join(format!("search/log-s{seed}.jsonl"))).unwrap();
        assert!(log.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    }
    assert!(out.join("split.json").is_file());

    let train = stdout(&augsearch(dir.path(), &["train", "--T", "9e-4", "--n", "2"]));
    assert_eq!(train.lines().count(), 2);
    augsearch(dir.path(), &["baseline", "--mode", "weak-supervised"]);

    let recs = records(&out);
    assert_eq!(recs.len(), 4);
    for r in &recs {
        assert!(out.join("logs").join(format!("{}.jsonl", r.run_id)).is_file());
        assert!(out.join("checkpoints").join(format!("{}.bin", r.run_id)).is_file());
        assert!(out.join("checkpoints").join(format!("{}.json", r.run_id)).is_file());
    }

    let report = stdout(&augsearch(dir.path(), &["report"]));
    assert!(report.contains("weak-supervised"));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("command,label,n_seeds,mean_accuracy,std_accuracy,seeds"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let matching: Vec<f64> = recs
            .iter()
            .filter(|r| r.spec.command == row[0] && r.spec.label == row[1])
            .map(|r| r.accuracy)
            .collect();
        assert_eq!(row[2], matching.len().to_string());
        let mean = matching.iter().sum::<f64>() / matching.len() as f64;
        assert!((row[3].parse::<f64>().unwrap() - mean).abs() < 1e-9);
    }
    assert!(out.join("weights-policy.csv").is_file());
}

#[test]
fn sweep_writes_long_and_summary_csv() {
    let dir = setup();
    let out = dir.path().join("out");
    let policy = dir.path().join("uniform.json");
    fs::write(&policy, augsearch::policy::init_policy().to_json().unwrap()).unwrap();
    let policy = policy.to_str().unwrap();
    let printed = stdout(&augsearch(
        dir.path(),
        &["sweep", "--axis", "T", "--values", "1e-4,inf,orig", "--policy", policy],
    ));
    let long = fs::read_to_string(out.join("sweep-T.csv")).unwrap();
    let mut lines = long.lines();
    assert_eq!(lines.next(), Some(SweepTable::LONG_HEADER));
    let values: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values, ["1e-4", "1e-4", "inf", "inf", "orig", "orig"]);
    let summary = fs::read_to_string(out.join("sweep-T-summary.csv")).unwrap();
    assert_eq!(printed, summary);
    assert_eq!(summary.lines().next(), Some(SweepTable::SUMMARY_HEADER));
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn bad_arguments_fail() {
    let dir = setup();
    for args in [&["train", "--T", "0"][..], &["sweep", "--axis", "lr"], &["baseline", "--mode", "supervised"]] {
        let out = Command::new(env!("CARGO_BIN_EXE_augsearch"))
            .args(args)
            .args(["--dataset", DATASET, "--out"])
            .arg(dir.path().join("out"))
            .output()
            .unwrap();
        assert!(!out.status.success(), "{args:?} succeeded");
    }
    let out = Command::new(env!("CARGO_BIN_EXE_augsearch")).arg("search").output().unwrap();
    assert!(!out.status.success());
}
