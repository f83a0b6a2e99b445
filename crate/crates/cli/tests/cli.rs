use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rulebench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rulebench"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("RUST_BACKTRACE", "0")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rulebench(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn corpus(dir: &Path) {
    ok(&["corpus", "generate", "--out", dir.to_str().unwrap(), "--seed", "1"]);
}

#[test]
fn corpus_generate_writes_ten_versions_and_the_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["corpus", "generate", "--out", dir.path().to_str().unwrap(), "--seed", "2", "--guard-p", "0.1"]);
    assert!(out.contains("v10 (2022-01-21): 70 validation, 43 aggregation"), "{out}");
    for i in 1..=10 {
        assert!(dir.path().join(format!("v{i}.rules")).exists());
    }
    assert!(dir.path().join("production_profile.toml").exists());
}

#[test]
fn fuzz_writes_a_reproducible_log() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let rules = dir.path().join("v2.rules");
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec![
            "fuzz",
            "--tool",
            "wts",
            "--rules",
            rules.to_str().unwrap(),
            "--budget",
            "40req",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let stdout = ok(&args);
        assert!(stdout.contains("WTS seed 11 budget 40req: 40 requests"), "{stdout}");
        fs::read_to_string(out.join("log.jsonl")).unwrap()
    };
    let a = run("a", &[]);
    assert_eq!(a.lines().count(), 40);
    assert_eq!(a, run("b", &[]));
    assert_eq!(a, run("c", &["--http"]));
}

#[test]
fn fuzz_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let rules = dir.path().join("v1.rules");
    let out = dir.path().join("o");
    let base = |tool: &'static str, budget: &'static str| {
        rulebench(&[
            "fuzz",
            "--tool",
            tool,
            "--rules",
            rules.to_str().unwrap(),
            "--budget",
            budget,
            "--seed",
            "1",
            "--out",
            out.to_str().unwrap(),
        ])
    };
    assert!(!base("bb", "0s").status.success());
    assert!(!base("evo", "10req").status.success());
    let missing = rulebench(&["fuzz", "--tool", "bb", "--rules", "/nonexistent.rules", "--budget", "5req", "--seed", "1", "--out", "/tmp/x"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("cannot read"));
}

#[test]
fn experiment_run_emits_the_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("smoke.toml");
    fs::write(
        &config,
        "tools = [\"BB\", \"MIO\"]\nversions = [\"v1\", \"v2\"]\nrepetitions = 1\nbudget = \"50req\"\nout_dir = \"results\"\n",
    )
    .unwrap();
    let stdout = ok(&["experiment", "run", "--config", config.to_str().unwrap()]);
    assert!(stdout.contains("4 trials, 0 failed"), "{stdout}");
    for f in ["coverage.csv", "errors.csv", "rule_status.csv", "rule_results.csv", "production_compare.csv", "summary.json"] {
        assert!(dir.path().join("results").join(f).exists(), "{f}");
    }
}
