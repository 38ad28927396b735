//! End-to-end tests of the `nysqp` binary: exit codes, CSV shapes, the
//! manifest block, and the snapshot-driven condition study.  Outputs are
//! parsed back with the same reader the binary's golden tests pin.

use std::path::Path;
use std::process::{Command, Output};

#[path = "../src/csvio.rs"]
mod csvio;

fn nysqp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nysqp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_manifest(file: &csvio::CsvFile, command_word: &str) {
    for key in ["command", "config", "seed", "timestamp", "git"] {
        assert!(
            file.manifest_value(key).is_some(),
            "manifest is missing `# {key}:` ({:?})",
            file.comments
        );
    }
    let command = file.manifest_value("command").unwrap();
    assert!(
        command.starts_with("nysqp ") && command.contains(command_word),
        "command echo {command:?} does not mention {command_word:?}"
    );
    assert!(file.manifest_value("output").is_some(), "manifest lists no outputs");
}

#[test]
fn solve_writes_one_row_per_outer_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out = nysqp(
        &[
            "solve",
            "--portfolio-synth",
            "40,20,5",
            "--precond",
            "nystrom",
            "--rank",
            "10",
            "--tol",
            "1e-6",
            "--out",
            "report.csv",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let report = csvio::read_csv(&dir.path().join("report.csv")).unwrap();
    assert_manifest(&report, "solve");
    assert_eq!(report.header, csvio::REPORT_HEADER);
    let outer: usize = report.manifest_value("outer_iters").unwrap().parse().unwrap();
    assert_eq!(report.rows.len(), outer, "one CSV row per outer iteration");
    assert_eq!(report.manifest_value("status"), Some("optimal"));

    // The stdout table carries one line per iteration plus the column header.
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.trim_start().starts_with("iter")));
}

#[test]
fn missing_source_is_exit_2_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = nysqp(&["solve", "--tol", "1e-6"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--svm") && stderr.contains("--qp-csv"), "stderr: {stderr}");
}

#[test]
fn rank_zero_is_exit_2_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = nysqp(
        &["solve", "--portfolio-synth", "10,4,2", "--precond", "nystrom", "--rank", "0"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--rank"));
}

#[test]
fn bad_thread_cap_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nysqp"))
        .args(["solve", "--portfolio-synth", "10,4,2"])
        .env("NYSQP_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NYSQP_THREADS"));
}

#[test]
fn solve_reads_libsvm_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = "+1 1:0.9 3:0.4\n-1 2:-0.7\n+1 1:0.1 2:0.3 3:-0.2\n-1 1:-0.6 3:0.8\n";
    std::fs::write(dir.path().join("tiny.svm"), data).unwrap();
    let out = nysqp(
        &["solve", "--svm", "tiny.svm", "--tau", "0.5", "--precond", "none", "--tol", "1e-8"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let report = csvio::read_csv(&dir.path().join("report.csv")).unwrap();
    assert!(report.manifest_value("problem").unwrap().starts_with("svm:tiny.svm"));
}

#[test]
fn condition_study_replays_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let solve_out = nysqp(
        &[
            "solve",
            "--portfolio-synth",
            "40,20,5",
            "--rank",
            "10",
            "--tol",
            "1e-8",
            "--snapshot-out",
            "snap.json",
        ],
        dir.path(),
    );
    assert!(solve_out.status.success(), "{}", String::from_utf8_lossy(&solve_out.stderr));
    assert!(dir.path().join("snap.json").exists());

    let study_out = nysqp(
        &[
            "condition-study",
            "--portfolio-synth",
            "40,20,5",
            "--snapshots",
            "snap.json",
            "--out",
            "cond.csv",
        ],
        dir.path(),
    );
    assert!(study_out.status.success(), "{}", String::from_utf8_lossy(&study_out.stderr));

    let cond = csvio::read_csv(&dir.path().join("cond.csv")).unwrap();
    assert_manifest(&cond, "condition-study");
    assert_eq!(cond.header, csvio::COND_HEADER);
    // m = 26 here, so the rank grid collapses to {10, 20}: 2 rows per stage.
    assert!(!cond.rows.is_empty());
    assert_eq!(cond.rows.len() % 2, 0);
    let (kp, kn) = (cond.column("kappa_plain").unwrap(), cond.column("kappa_nys").unwrap());
    for row in &cond.rows {
        let plain: f64 = row[kp].parse().unwrap();
        let nys: f64 = row[kn].parse().unwrap();
        assert!(plain.is_finite() && nys.is_finite());
        assert!(nys <= plain * 1.01, "Nystrom did not help: {nys} vs {plain}");
    }
}

#[test]
fn condition_study_without_snapshot_file_is_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = nysqp(
        &["condition-study", "--portfolio-synth", "40,20,5", "--snapshots", "absent.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
}

#[test]
fn rank_study_emits_repeat_and_mean_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = nysqp(
        &[
            "rank-study",
            "--portfolio-synth",
            "30,10,4",
            "--ranks",
            "2,8",
            "--repeats",
            "2",
            "--tol",
            "1e-6",
            "--out",
            "rank_time.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = csvio::read_csv(&dir.path().join("rank_time.csv")).unwrap();
    assert_manifest(&table, "rank-study");
    assert_eq!(table.header, csvio::RANK_TIME_HEADER);
    // 2 ranks x (2 repeats + 1 mean row).
    assert_eq!(table.rows.len(), 6);
    let repeat_col = table.column("repeat").unwrap();
    assert_eq!(table.rows.iter().filter(|r| r[repeat_col] == "mean").count(), 2);
    for row in &table.rows {
        let total: f64 = row[table.column("total_s").unwrap()].parse().unwrap();
        let pcg: f64 = row[table.column("pcg_s").unwrap()].parse().unwrap();
        let build: f64 = row[table.column("build_s").unwrap()].parse().unwrap();
        let other: f64 = row[table.column("other_s").unwrap()].parse().unwrap();
        assert!(total >= 0.0 && pcg >= 0.0 && build >= 0.0 && other >= 0.0);
        assert!(pcg + build <= total + 1e-6, "components exceed the total");
    }
}

#[test]
fn compare_writes_three_method_rows_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "compare",
        "--portfolio-synth",
        "40,20,5",
        "--rank",
        "8",
        "--tol",
        "1e-6",
        "--seed",
        "3",
        "--out",
        "compare.csv",
    ];
    let out = nysqp(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = csvio::read_csv(&dir.path().join("compare.csv")).unwrap();
    assert_manifest(&first, "compare");
    assert_eq!(first.header, csvio::COMPARE_HEADER);
    assert_eq!(first.rows.len(), 3);
    let methods: Vec<&str> = first.rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(methods, vec!["none", "nystrom", "chol"]);

    // Same seed, fresh run: everything except wallclock must be identical.
    let out2 = nysqp(&args, dir.path());
    assert!(out2.status.success());
    let second = csvio::read_csv(&dir.path().join("compare.csv")).unwrap();
    let time_col = first.column("time_s").unwrap();
    for (a, b) in first.rows.iter().zip(&second.rows) {
        for (idx, (cell_a, cell_b)) in a.iter().zip(b).enumerate() {
            if idx != time_col {
                assert_eq!(cell_a, cell_b, "non-timing column drifted across reruns");
            }
        }
    }
}

#[test]
fn qp_csv_source_round_trips_through_the_repo_format() {
    let dir = tempfile::tempdir().unwrap();
    // A tiny well-conditioned QP written in the interchange format by the
    // library itself.
    let problem = nysqp_oracle::random_separable_qp(12);
    nysqp::problems::write_qp_csv(dir.path().join("problem.csv"), &problem).unwrap();
    let out = nysqp(
        &["solve", "--qp-csv", "problem.csv", "--precond", "none", "--tol", "1e-8"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let report = csvio::read_csv(&dir.path().join("report.csv")).unwrap();
    assert_eq!(report.manifest_value("problem"), Some("qp-csv:problem.csv"));
}
