use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use quickfit::mcs::ModelKind;
use quickfit::synth::Generator;

fn quickfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quickfit"))
        .args(args)
        .env_remove("QUICKFIT_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Generated rows as CSV with feature columns `x0..` and, when supervised, a `y` column.
fn write_csv(path: &Path, kind: ModelKind, dim: usize, n: usize, label_offset: f64) {
    let (d, _) = Generator::new(kind, dim).sample(n, 1).unwrap();
    let mut s = (0..dim).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    if d.labels().is_some() {
        s.push_str(",y");
    }
    s.push('\n');
    for i in 0..n {
        let row = d.row(i).to_dense(dim);
        s.push_str(&row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        if let Some(y) = d.label(i) {
            write!(s, ",{}", y + label_offset).unwrap();
        }
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn train_writes_report_with_mapped_contract() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let out = dir.path().join("report.json");
    // Labels 5 and 6 are encoded as classes 0 and 1.
    write_csv(&data, ModelKind::Lr, 4, 5000, 5.0);
    let o = quickfit(&[
        "train", "--data", data.to_str().unwrap(), "--label", "y", "--model", "lr",
        "--accuracy", "0.95", "--confidence", "0.95", "--n0", "500",
        "--output", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!((report["contract"]["eps"].as_f64().unwrap() - 0.05).abs() < 1e-12);
    assert!((report["contract"]["delta"].as_f64().unwrap() - 0.05).abs() < 1e-12);
    assert_eq!(report["label_map"]["values"], serde_json::json!([5.0, 6.0]));
    assert!(report["final"]["model"]["n"].as_u64().unwrap() > 500);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("trained: n="), "{stdout}");
}

#[test]
fn percent_and_fraction_flags_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_csv(&data, ModelKind::Lr, 3, 2000, 0.0);
    let run = |acc: &str, conf: &str| {
        let o = quickfit(&[
            "train", "--data", data.to_str().unwrap(), "--label", "y", "--accuracy", acc,
            "--confidence", conf, "--n0", "300", "--seed", "4",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let mut v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["timings"] = serde_json::Value::Null;
        v
    };
    assert_eq!(run("0.9", "0.95"), run("90", "95"));
}

#[test]
fn supervised_model_without_label_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_csv(&data, ModelKind::Lr, 3, 100, 0.0);
    let o = quickfit(&["train", "--data", data.to_str().unwrap(), "--model", "lr", "--accuracy", "0.9"]);
    assert_eq!(code(&o), 64);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--label"));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(code(&quickfit(&["train", "--bogus"])), 64);
    assert_eq!(code(&quickfit(&["coverage", "--runs", "5", "--accuracy", "0.9"])), 64);
    assert_eq!(code(&quickfit(&["coverage", "--accuracy", "100"])), 64);
    assert_eq!(code(&quickfit(&["coverage", "--accuracy", "0.9", "--confidence", "0"])), 64);
    assert_eq!(code(&quickfit(&["--help"])), 0);
}

#[test]
fn missing_file_is_a_runtime_error() {
    let o = quickfit(&["train", "--data", "/nonexistent.csv", "--label", "y", "--accuracy", "0.9"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn ppca_runs_on_unlabeled_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_csv(&data, ModelKind::Ppca { factors: 2 }, 12, 3000, 0.0);
    let o = quickfit(&[
        "train", "--data", data.to_str().unwrap(), "--model", "ppca", "--q", "10", "--eps", "0.05", "--n0", "500",
    ]);
    assert!(code(&o) == 0 || code(&o) == 2, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["initial"]["model"]["class"], "ppca");
    assert!(v["label_map"].is_null());
}

#[test]
fn whole_dataset_as_initial_sample_saturates() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_csv(&data, ModelKind::Lin, 3, 500, 0.0);
    let o = quickfit(&["train", "--data", data.to_str().unwrap(), "--label", "y", "--model", "lin", "--eps", "0.1"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn accuracy_and_size_commands() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_csv(&data, ModelKind::Me { classes: 3 }, 4, 20_000, 0.0);
    let d = data.to_str().unwrap();
    let o = quickfit(&["accuracy", "--data", d, "--label", "y", "--model", "me", "--n", "1000"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["initial"]["model"]["K"], 3);
    assert_eq!(v["trainings_performed"], 1);
    assert_eq!(code(&quickfit(&["accuracy", "--data", d, "--label", "y", "--model", "me", "--n", "0"])), 64);
    let o = quickfit(&["size", "--data", d, "--label", "y", "--model", "me", "--accuracy", "99", "--n0", "1000"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["size_estimate"]["n_star"].as_u64().unwrap() >= 1000);
}

#[test]
fn sparse_input() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.svm");
    let (d, _) = Generator::new(ModelKind::Lr, 5).sample(3000, 2).unwrap();
    let mut s = String::new();
    for i in 0..d.n_rows() {
        write!(s, "{}", if d.label(i).unwrap() > 0.5 { 1 } else { -1 }).unwrap();
        for (j, v) in d.row(i).to_dense(5).iter().enumerate() {
            if *v != 0.0 {
                write!(s, " {}:{}", j + 1, v).unwrap();
            }
        }
        s.push('\n');
    }
    std::fs::write(&data, s).unwrap();
    let o = quickfit(&["train", "--data", data.to_str().unwrap(), "--format", "svm", "--accuracy", "90", "--n0", "500"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["label_map"]["values"], serde_json::json!([-1.0, 1.0]));
}

#[test]
fn bench_outputs_csv() {
    let o = quickfit(&[
        "bench", "--synthetic", "20000", "--dim", "5", "--accuracies", "90,99", "--n0", "1000",
        "--repetitions", "2", "--threads", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], quickfit::experiments::BENCH_CSV_HEADER);
    // full + 2 repetitions × 2 accuracies × 4 strategies.
    assert_eq!(lines.len(), 1 + 1 + 16);
    for l in lines.iter().filter(|l| l.starts_with("fixed_ratio")) {
        assert_eq!(l.split(',').nth(5).unwrap(), "200");
    }
    assert_eq!(code(&quickfit(&["bench", "--accuracies", "90"])), 64);
}

#[test]
fn coverage_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("s.json");
    let args = [
        "coverage", "--n", "3000", "--dim", "3", "--runs", "20", "--accuracy", "0.9", "--n0", "500", "--seed", "3",
    ];
    let mut with_summary = args.to_vec();
    with_summary.extend(["--summary", summary.to_str().unwrap()]);
    let a = quickfit(&with_summary);
    let b = quickfit(&args);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let strip = |o: &Output| -> Vec<String> {
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(strip(&a).len(), 21);
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert!(s["pass_rate"].as_f64().unwrap() >= 0.95);
}
