use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pointattack_harness::{ExperimentReport, SweepReport};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pointattack"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_contents(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().into(), fs::read(&path).unwrap())
        })
        .collect();
    v.sort();
    v
}

/// Small dataset plus a briefly trained model.
fn fixture(root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    let model = root.join("model.bin");
    ok(&["gen-data", "--out", p(&data), "--per-class", "12", "--n-points", "64", "--test-fraction", "0.25", "--seed", "2"]);
    ok(&["train", "--data", p(&data), "--model-out", p(&model), "--epochs", "4", "--seed", "1"]);
    (data, model)
}

fn read_report(path: &Path) -> ExperimentReport {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_data_counts_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = ok(&["gen-data", "--out", p(d), "--per-class", "10", "--n-points", "32", "--test-fraction", "0.2", "--seed", "5"]);
        assert!(out.contains("48 train, 12 test"), "{out}");
    }
    let contents = dir_contents(&a);
    assert_eq!(contents.len(), 61);
    assert_eq!(contents, dir_contents(&b));
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("# schema_version 1\n"));
    assert_eq!(manifest.lines().filter(|l| l.ends_with(" test")).count(), 12);
    assert!(manifest.contains("sphere_0000.xyz 0 train"));
}

#[test]
fn train_errors_name_the_path_and_seed_repeats() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no-such-dir");
    let out = run(&["train", "--data", p(&missing), "--model-out", p(&tmp.path().join("m.bin"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-dir"));

    let (data, _) = fixture(tmp.path());
    let (m1, m2) = (tmp.path().join("m1.bin"), tmp.path().join("m2.bin"));
    for m in [&m1, &m2] {
        let out = ok(&["train", "--data", p(&data), "--model-out", p(m), "--epochs", "2", "--seed", "7"]);
        assert!(out.contains("held-out accuracy"));
    }
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
}

#[test]
fn attack_reports_and_flag_rules() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, model) = fixture(tmp.path());
    let common = ["--model", p(&model), "--data", p(&data)];

    let json = tmp.path().join("bad.json");
    let mut args = vec!["attack"];
    args.extend(common);
    args.extend(["--method", "waattack", "--k", "4", "--out", p(&json)]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(!json.exists());

    let sub = tmp.path().join("sub.json");
    let csv_path = tmp.path().join("sub.csv");
    let adv = tmp.path().join("adv");
    let mut args = vec!["attack"];
    args.extend(common);
    args.extend(["--method", "subattack", "--k", "4", "--t-max", "10", "--out", p(&sub), "--csv", p(&csv_path), "--save-adv", p(&adv)]);
    ok(&args);
    let report = read_report(&sub);
    assert_eq!(report.schema_version, 1);
    let attacked: Vec<_> = report.records.iter().filter(|r| r.attacked).collect();
    for r in &attacked {
        assert!(r.trace.iter().all(|t| t.candidates_scored == 15));
        assert!(adv.join(format!("{}.xyz", r.sample_id)).exists());
    }
    let mut ids: Vec<_> = report.records.iter().map(|r| r.sample_id.clone()).collect();
    ids.sort();
    assert_eq!(ids, report.records.iter().map(|r| r.sample_id.clone()).collect::<Vec<_>>());
    let csv_text = fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv_text.lines().count(), report.records.len() + 1);

    let run_to = |name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec!["attack"];
        args.extend(common);
        args.extend(["--t-max", "10", "--out", p(&out)]);
        args.extend(extra);
        ok(&args);
        read_report(&out).without_timing()
    };
    let baseline = run_to("base.json", &["--method", "baseline"]);
    let plain = run_to("plain.json", &["--method", "waattack", "--no-weighting", "--no-adaptive-step"]);
    assert_eq!(baseline.records, plain.records);
}

#[test]
fn sweep_usage_and_table() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, model) = fixture(tmp.path());
    let common = ["sweep", "--model", p(&model), "--data", p(&data)];
    let with = |extra: &[&str]| {
        let mut a = common.to_vec();
        a.extend(extra);
        run(&a)
    };
    assert_eq!(with(&["--param", "alpha", "--values"]).status.code(), Some(2));
    assert_eq!(with(&["--param", "gamma", "--values", "1"]).status.code(), Some(2));
    assert_eq!(with(&["--param", "k", "--values", "1,2"]).status.code(), Some(2));

    let out = tmp.path().join("sweep.json");
    let csv_path = tmp.path().join("sweep.csv");
    let res = with(&["--method", "subattack", "--param", "k", "--values", "1,2", "--t-max", "5", "--limit", "4", "--out", p(&out), "--csv", p(&csv_path)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("k=1") && stdout.contains("k=2"));
    let report: SweepReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.entries.len(), 2);
    assert_eq!(report.entries[1].report.config.k, 2);
    assert!(report.entries.iter().all(|e| e.report.aggregates.attacked <= 4));
    assert_eq!(fs::read_to_string(&csv_path).unwrap().lines().count(), 3);
}
