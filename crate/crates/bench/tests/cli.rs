use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odernn-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: &[&str] = &[
    "--num-sequences",
    "40",
    "--points",
    "8",
    "--rounding",
    "0.1",
    "--min-epochs",
    "3",
    "--max-epochs",
    "3",
    "--batch",
    "10",
    "--hidden",
    "4",
    "--quiet",
];

fn run_small(extra: &[&str], out: &Path) -> Output {
    let mut args = vec!["run", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    bench(&args)
}

#[test]
fn run_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rnn.jsonl");
    let o = run_small(&["--model", "simple-rnn"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = odernn::experiment::read_report(&out).unwrap();
    assert!(report.completed());
    assert_eq!(report.epochs.len(), 3);
    assert!(report.summary.test_mse.unwrap().is_finite());
}

#[test]
fn illegal_flag_combinations_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.jsonl");
    for extra in [
        &["--model", "simple-rnn", "--step-size", "0.1"][..],
        &["--model", "simple-rnn", "--mode", "fixed-dt"],
        &["--model", "combined-time", "--mode", "adaptive-fixed"],
        &["--model", "odernn", "--mode", "fixed-dt", "--num-steps", "3"],
        &["--model", "odernn", "--mode", "adaptive-geometric", "--growth", "0.5"],
        &["--model", "odernn", "--hidden", "0"],
        &["--model", "odernn", "--dataset", "csv:foo"],
    ] {
        let o = run_small(extra, &out);
        assert_eq!(o.status.code(), Some(2), "{extra:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!out.exists());
}

#[test]
fn divergence_exits_with_flagged_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("div.jsonl");
    let o = run_small(&["--model", "simple-rnn", "--lr", "1e300"], &out);
    assert_eq!(o.status.code(), Some(3));
    let report = odernn::experiment::read_report(&out).unwrap();
    assert_eq!(report.summary.status, odernn::RunStatus::Diverged);
}

#[test]
fn generate_then_train_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    let o = bench(&[
        "generate",
        "--num-sequences",
        "30",
        "--points",
        "6",
        "--rounding",
        "0.001",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(odernn::read_dataset(&data).unwrap().len(), 30);

    let out = dir.path().join("r.jsonl");
    let dataset = format!("file:{}", data.display());
    let o = run_small(&["--dataset", &dataset, "--model", "odernn", "--mode", "adaptive-geometric"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn compare_prints_table_and_matching_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    assert!(run_small(&["--model", "combined-time"], &a).status.success());
    assert!(run_small(&["--model", "odernn", "--mode", "adaptive-fixed"], &b).status.success());
    let csv_path = dir.path().join("summary.csv");
    let o = bench(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--csv",
        csv_path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();

    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][6], "1.00");
    for row in &rows {
        for cell in row.iter() {
            assert!(table.contains(cell), "{cell} missing from\n{table}");
        }
    }

    // Archived reports reproduce the same summary.
    let again = bench(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), table);
}

#[test]
fn compare_names_unreadable_reports() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    assert!(run_small(&["--model", "simple-rnn"], &a).status.success());
    let missing = dir.path().join("nope.jsonl");
    let o = bench(&["compare", a.to_str().unwrap(), missing.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.jsonl"));
}
