//! CLI-level checks: byte-identical comparison output across reruns and
//! thread counts (criterion 9), plus the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn sloma() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sloma"))
}

fn write_spec(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("synthetic.toml");
    std::fs::write(
        &spec,
        "num_groups = 3\n\
         users_per_group = 12\n\
         items_per_group = 15\n\
         true_rank = 2\n\
         noise_sigma = 0.2\n\
         density = 0.4\n\
         intra_edge_prob = 0.4\n\
         inter_edge_prob = 0.01\n\
         seed = 5\n",
    )
    .unwrap();
    spec
}

fn run_compare(spec: &Path, threads: &str) -> Output {
    sloma()
        .args([
            "compare",
            "--models",
            "regsvd,sloma",
            "--data",
            spec.to_str().unwrap(),
            "--k",
            "2",
            "--epochs",
            "25",
            "--q",
            "3",
            "--hops",
            "2",
            "--repeats",
            "3",
            "--threads",
            threads,
        ])
        .output()
        .unwrap()
}

#[test]
fn criterion_9_compare_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());

    let first = run_compare(&spec, "2");
    assert!(first.status.success(), "stderr: {}", String::from_utf8_lossy(&first.stderr));
    let second = run_compare(&spec, "2");
    let other_threads = run_compare(&spec, "4");

    assert_eq!(first.stdout, second.stdout, "rerun changed the TSV");
    assert_eq!(
        first.stdout, other_threads.stdout,
        "thread count changed the TSV"
    );

    let text = String::from_utf8(first.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model\tK\tMAE\tRMSE\tRMSE_sd\tfallback\timprovement"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("regsvd\t2\t"));
    assert!(rows[1].starts_with("sloma\t2\t"));
    println!("criterion 9 (byte-identical compare across reruns and thread counts): PASS");
}

#[test]
fn unknown_model_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let out = sloma()
        .args([
            "compare",
            "--models",
            "regsvd,nonsense",
            "--data",
            spec.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown model"));
}

#[test]
fn bad_flag_exits_1() {
    let out = sloma().args(["train", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn hop_bound_enforced_and_overridable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let out = sloma()
        .args([
            "train", "--model", "sloma", "--data", spec.to_str().unwrap(),
            "--k", "2", "--epochs", "5", "--hops", "7",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "hops=7 must be a usage error");
    assert!(String::from_utf8_lossy(&out.stderr).contains("--unsafe-hops"));

    let out = sloma()
        .args([
            "train", "--model", "sloma", "--data", spec.to_str().unwrap(),
            "--k", "2", "--epochs", "5", "--q", "3", "--hops", "7", "--unsafe-hops",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_data_file_exits_2() {
    let out = sloma()
        .args(["evaluate", "--model", "regsvd", "--data", "/no/such/file.tsv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergent_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let out = sloma()
        .args([
            "train", "--model", "regsvd", "--data", spec.to_str().unwrap(),
            "--k", "2", "--lr", "50", "--epochs", "50",
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn generate_then_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let ratings = dir.path().join("r.tsv");
    let edges = dir.path().join("e.tsv");
    let out = sloma()
        .args([
            "generate",
            "--spec", spec.to_str().unwrap(),
            "--out-ratings", ratings.to_str().unwrap(),
            "--out-edges", edges.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let out = sloma()
        .args([
            "evaluate",
            "--model", "sloma++",
            "--data", ratings.to_str().unwrap(),
            "--edges", edges.to_str().unwrap(),
            "--k", "2", "--epochs", "20", "--q", "3", "--hops", "2",
            "--repeats", "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("repeat\tMAE\tRMSE"));
    assert!(text.lines().count() >= 4); // header + 2 repeats + summary
}

#[test]
fn coverage_reports_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let out = sloma()
        .args([
            "coverage",
            "--data", spec.to_str().unwrap(),
            "--q", "3", "--hops", "2", "--connector", "greedy",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("user_coverage"), "got: {text}");
}
