use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn macfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_macfl"))
        .args(args)
        .env_remove("MACFL_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn table1() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/table1.toml")
        .to_str()
        .unwrap()
        .to_owned()
}

const SMALL: &str = "total_power = 100.0\npower_split = [0.95, 0.05]\nchannel_uses_per_dim = 2.0\n\
                     features = 6\nclasses = 3\nlearning_rate = 0.5\niterations = 20\neval_every = 5\n\
                     samples_per_user = [40, 40]\ntopq_scalar_bits = 8\n";

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(
        r.records()
            .map(|rec| rec.unwrap().iter().map(String::from).collect()),
    );
    rows
}

#[test]
fn capacity_table() {
    let text = stdout(&macfl(&["capacity", "-c", &table1()]));
    for c in [
        "3.1699", "2.1962", "3.3291", "81.0000", "21.0000", "101.0000",
    ] {
        assert!(text.contains(c), "{c} missing from\n{text}");
    }
}

#[test]
fn allocate_reproduces_the_table() {
    for (deltas, expected) in [
        ("5,50", "(4, 21)"),
        ("50,50", "(10, 10)"),
        ("5000,50", "(50, 2)"),
    ] {
        let text = stdout(&macfl(&["allocate", "-c", &table1(), "--deltas", deltas]));
        let line = text.lines().find(|l| l.starts_with("integer k")).unwrap();
        assert!(line.contains(expected), "{deltas}: {line}");
    }
}

#[test]
fn train_writes_metrics_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("run");
    stdout(&macfl(&[
        "train",
        "-c",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--iterations",
        "12",
    ]));
    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(
        rows[0],
        [
            "t",
            "loss",
            "accuracy",
            "grad_norm_sq",
            "deltas",
            "budgets",
            "analytic_bits",
            "wire_bits",
            "variance_bound",
            "g_sq"
        ]
    );
    assert_eq!(rows.len(), 13);
    assert_eq!(rows[12][0], "12");
    // two users, semicolon separated; accuracy only on evaluation rounds
    assert_eq!(rows[1][4].split(';').count(), 2);
    assert!(rows[1][2].is_empty() && !rows[5][2].is_empty() && !rows[12][2].is_empty());
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["policy"], "mac-aware");
    assert_eq!(summary["iterations"], 12);
    assert_eq!(summary["dim"], 21);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("from-env");
    let status = Command::new(env!("CARGO_BIN_EXE_macfl"))
        .args(["train", "-c", cfg.to_str().unwrap(), "--policy", "uniform"])
        .env("MACFL_OUT_DIR", &out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("metrics.csv").exists());
    // no flag, no variable, no config entry
    let missing = macfl(&["train", "-c", cfg.to_str().unwrap()]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("output directory"));
}

#[test]
fn compare_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("cmp");
    let text = stdout(&macfl(&[
        "compare",
        "-c",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    let policies = [
        "full-resolution",
        "mac-aware",
        "uniform",
        "top-q",
        "signsgd",
        "terngrad",
    ];
    for p in policies {
        assert!(out.join(p).join("metrics.csv").exists(), "{p}");
        assert!(out.join(p).join("summary.json").exists(), "{p}");
        assert!(text.contains(p));
    }
    let curves = csv_rows(&out.join("curves.csv"));
    assert_eq!(
        curves[0],
        [
            "policy",
            "t",
            "loss",
            "accuracy",
            "analytic_bits",
            "wire_bits"
        ]
    );
    assert_eq!(curves.len(), 1 + 6 * 20);
    let last = csv_rows(&out.join("final.csv"));
    assert_eq!(
        last[0],
        [
            "policy",
            "final_loss",
            "final_accuracy",
            "test_accuracy",
            "total_analytic_bits",
            "total_wire_bits"
        ]
    );
    assert_eq!(
        last.iter()
            .skip(1)
            .map(|r| r[0].as_str())
            .collect::<Vec<_>>(),
        policies
    );
    // full resolution bypasses the channel with 64-bit floats
    let full = last.iter().find(|r| r[0] == "full-resolution").unwrap();
    assert_eq!(full[5], (64 * 21 * 2 * 20).to_string());
    assert!(fs::read_dir(&out).unwrap().all(|e| !e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .ends_with(".tmp")));
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "init = \"gaussian\"\n");
    let c = cfg.to_str().unwrap();
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        stdout(&macfl(&[
            "train",
            "-c",
            c,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
        ]));
        fs::read(out.join("metrics.csv")).unwrap()
    };
    assert_eq!(run("4", "a"), run("4", "b"));
    assert_ne!(run("4", "c"), run("5", "d"));
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let good = small_config(dir.path(), "");
    let bad_key = dir.path().join("bad.toml");
    fs::write(&bad_key, format!("{SMALL}learning_rat = 0.1\n")).unwrap();
    let tiny = dir.path().join("tiny.toml");
    fs::write(
        &tiny,
        SMALL.replace("channel_uses_per_dim = 2.0", "channel_uses_per_dim = 0.2"),
    )
    .unwrap();
    let cases: Vec<(Vec<&str>, &str)> = vec![
        (
            vec!["capacity", "-c", "/nonexistent/config.toml"],
            "config.toml",
        ),
        (
            vec!["capacity", "-c", bad_key.to_str().unwrap()],
            "learning_rat",
        ),
        (
            vec!["allocate", "-c", good.to_str().unwrap(), "--deltas", "1,x"],
            "x",
        ),
        (
            vec![
                "allocate",
                "-c",
                good.to_str().unwrap(),
                "--deltas",
                "1,2,3",
            ],
            "3",
        ),
        (
            vec![
                "train",
                "-c",
                tiny.to_str().unwrap(),
                "--out",
                dir.path().to_str().unwrap(),
            ],
            "mac-aware",
        ),
        (
            vec![
                "compare",
                "-c",
                good.to_str().unwrap(),
                "--policies",
                "qsgd",
            ],
            "qsgd",
        ),
    ];
    for (args, needle) in cases {
        let out = macfl(&args);
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(err.contains(needle), "{args:?}: {err}");
    }
}
