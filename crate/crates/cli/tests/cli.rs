use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toothsparse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("an error line")).expect("JSON error record")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Cohort, corresponded cohort and a dictionary over the first `train` subjects.
fn pipeline(root: &Path, subjects: usize, train: usize) -> (PathBuf, PathBuf) {
    let cohort = root.join("cohort");
    let corr = root.join("corr");
    let dict = root.join("dict.tds");
    ok(&[
        "synth", "--out", s(&cohort), "--subjects", &subjects.to_string(), "--rank", "4",
        "--seed", "9", "--point-scale", "0.12",
    ]);
    ok(&["correspond", "--cohort", s(&cohort), "--template", s(&cohort.join("template")), "--out", s(&corr)]);
    ok(&[
        "build-dict", "--corresponded", s(&corr), "--out", s(&dict), "--train", &train.to_string(),
    ]);
    (cohort, dict)
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn without_timestamps(bytes: &[u8]) -> Value {
    let mut v: Value = serde_json::from_slice(bytes).unwrap();
    let m = v.as_object_mut().unwrap();
    m.remove("started_unix_ms");
    m.remove("finished_unix_ms");
    v
}

fn assert_same_outputs(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>) {
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, va) in a {
        let vb = &b[k];
        if k.file_name().is_some_and(|n| n == "run_manifest.json") {
            assert_eq!(without_timestamps(va), without_timestamps(vb), "{k:?}");
        } else {
            assert!(va == vb, "{k:?} differs");
        }
    }
}

#[test]
fn full_pipeline_and_predict_outputs() {
    let root = tempfile::tempdir().unwrap();
    let (cohort, dict) = pipeline(root.path(), 12, 10);
    assert!(root.path().join("corr/run_manifest.json").is_file());
    assert!(root.path().join("dict.run.json").is_file());
    assert!(cohort.join("truth/s0001/manifest.json").is_file());

    let out = root.path().join("pred");
    ok(&[
        "predict", "--model", s(&cohort.join("s0012")), "--missing", "17", "--dict", s(&dict),
        "--template", s(&cohort.join("template")), "--out", s(&out),
    ]);
    let diag: Value = serde_json::from_slice(&fs::read(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["adjacent"], serde_json::json!([47, 16, 46, 27, 37]));
    assert_eq!(diag["dropped_from_model"], serde_json::json!([17]));
    assert!(out.join("17.xyz").is_file());
    assert!(out.join("template_frame/17.xyz").is_file());
    let code: Value = serde_json::from_slice(&fs::read(out.join("sparse_code.json")).unwrap()).unwrap();
    assert_eq!(code["coefficients"].as_array().unwrap().len(), 10);
    let manifest: Value =
        serde_json::from_slice(&fs::read(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "predict");
    assert_eq!(manifest["config"]["iterations"], 3);
}

#[test]
fn exit_codes() {
    let root = tempfile::tempdir().unwrap();
    let (cohort, dict) = pipeline(root.path(), 6, 5);
    let model = cohort.join("s0006");
    let template = cohort.join("template");
    let out = root.path().join("p");
    let predict = |missing: &str, extra: &[&str], model: &Path| {
        let mut args = vec![
            "predict", "--model", s(model), "--missing", missing, "--dict", s(&dict),
            "--template", s(&template), "--out", s(&out),
        ];
        args.extend_from_slice(extra);
        run(&args)
    };

    let o = predict("", &[], &model);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_record(&o)["error"], "usage");
    assert_eq!(predict("18", &[], &model).status.code(), Some(1));
    assert_eq!(run(&["predict", "--missing"]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));

    let o = predict("11", &[], &root.path().join("absent"));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["error"], "data");

    let o = predict("11", &["--eps-abs", "0", "--strict-eps"], &model);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_record(&o)["error"], "numerical");

    let bad = Command::new(env!("CARGO_BIN_EXE_toothsparse"))
        .env("TOOTHSPARSE_THREADS", "lots")
        .args(["synth", "--out", s(&root.path().join("x"))])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn evaluate_writes_one_row_per_test_tooth() {
    let root = tempfile::tempdir().unwrap();
    let (cohort, dict) = pipeline(root.path(), 20, 16);
    let out = root.path().join("eval");
    ok(&["evaluate", "--mode", "single-sweep", "--cohort", s(&cohort), "--dict", s(&dict), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 28 * 4);
    assert!(out.join("summary.txt").is_file());
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["test_subjects"].as_array().unwrap().len(), 4);
    assert_eq!(report["training_subjects"].as_array().unwrap().len(), 16);

    let patterns = root.path().join("patterns.txt");
    fs::write(&patterns, "# two\n14,15\n31,41\n").unwrap();
    let out2 = root.path().join("eval2");
    ok(&[
        "evaluate", "--mode", "patterns", "--patterns", s(&patterns), "--cohort", s(&cohort),
        "--dict", s(&dict), "--out", s(&out2), "--baseline",
    ]);
    let csv = fs::read_to_string(out2.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 4);
}

#[test]
fn identical_invocations_give_identical_outputs() {
    let root = tempfile::tempdir().unwrap();
    let (cohort, dict) = pipeline(root.path(), 8, 6);
    let before_dict = fs::read(&dict).unwrap();
    let before_cohort = snapshot(&cohort);
    let (cohort2, dict2) = pipeline(root.path(), 8, 6);
    assert_eq!(cohort, cohort2);
    assert_eq!(before_dict, fs::read(&dict2).unwrap());
    assert_same_outputs(&before_cohort, &snapshot(&cohort));

    let out = root.path().join("eval");
    let args = [
        "evaluate", "--mode", "patterns", "--patterns", "table2", "--cohort", s(&cohort),
        "--dict", s(&dict), "--out", s(&out),
    ];
    ok(&args);
    let first = snapshot(&out);
    ok(&args);
    assert_same_outputs(&first, &snapshot(&out));
}
