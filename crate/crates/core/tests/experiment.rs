use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rulebench::corpus::{generate_corpus, write_corpus, CorpusSpec};
use rulebench::experiment::*;
use rulebench::testgen::ToolId;

fn versions(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("v{i}")).collect()
}

fn smoke(out: &Path, tools: &[ToolId], vs: &[&str], reps: u32, budget: &str) -> ExperimentConfig {
    ExperimentConfig {
        tools: tools.to_vec(),
        versions: vs.iter().map(|v| v.to_string()).collect(),
        repetitions: reps,
        budget: budget.into(),
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn rows(path: &Path) -> usize {
    csv::Reader::from_path(path).unwrap().records().count()
}

#[test]
fn schedule_counts_for_a_small_grid() {
    let tools = [ToolId::Bb, ToolId::Mio];
    let s = schedule_rmit(&tools, &versions(2), 3, 7, &mut ChaCha8Rng::seed_from_u64(7));
    assert_eq!(s.len(), 12);
    let mut per_pair: BTreeMap<(ToolId, String), Vec<u32>> = BTreeMap::new();
    for t in &s {
        per_pair.entry((t.tool, t.version.clone())).or_default().push(t.repetition);
    }
    assert_eq!(per_pair.len(), 4);
    assert!(per_pair.values().all(|reps| reps == &vec![0, 1, 2]));
    assert!(s.iter().enumerate().all(|(i, t)| t.index == i && t.repetition as usize == i / 4));
}

#[test]
fn schedule_is_reproducible_and_blocks_are_reshuffled() {
    let cfg = ExperimentConfig {
        repetitions: 5,
        master_seed: 1,
        ..ExperimentConfig::default()
    };
    let a = cfg.schedule();
    assert_eq!(a, cfg.schedule());
    assert_eq!(a.len(), 200);
    let blocks: Vec<Vec<(ToolId, &str)>> =
        a.chunks(40).map(|b| b.iter().map(|t| (t.tool, t.version.as_str())).collect()).collect();
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            assert_ne!(blocks[i], blocks[j], "blocks {i} and {j}");
        }
        assert_eq!(blocks[i].iter().collect::<BTreeSet<_>>().len(), 40);
    }
    let other = ExperimentConfig { master_seed: 2, ..cfg };
    assert_ne!(a, other.schedule());
}

#[test]
fn trial_seeds_do_not_depend_on_schedule_position() {
    let big = ExperimentConfig::default().schedule();
    let small = ExperimentConfig {
        tools: vec![ToolId::Wts],
        versions: vec!["v4".into()],
        ..ExperimentConfig::default()
    }
    .schedule();
    for t in &small {
        let twin = big
            .iter()
            .find(|b| b.tool == t.tool && b.version == t.version && b.repetition == t.repetition)
            .unwrap();
        assert_eq!(twin.seed, t.seed);
    }
    assert_ne!(derive_seed(1, ToolId::Bb, "v1", 0), derive_seed(1, ToolId::Bb, "v1", 1));
}

#[test]
fn smoke_experiment_has_one_trial_row() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&smoke(dir.path(), &[ToolId::Bb], &["v1"], 1, "50req")).unwrap();
    assert_eq!(report.trials.len(), 1);
    assert_eq!(report.trials[0].metrics().unwrap().requests, 50);
    assert_eq!(rows(&dir.path().join(COVERAGE_CSV)), 1);
    assert_eq!(load_trials(dir.path()).unwrap().len(), 1);
    assert!(dir.path().join(SUMMARY_JSON).exists());
}

#[test]
fn tables_have_declared_headers_and_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path(), &[ToolId::Bb, ToolId::Mosa], &["v1", "v2"], 1, "50req");
    run_experiment(&cfg).unwrap();
    let d = dir.path();
    assert_eq!(header(&d.join(COVERAGE_CSV)), "tool,line_mean,line_sd,branch_mean,branch_sd,method_mean,method_sd");
    assert!(header(&d.join(ERRORS_CSV)).starts_with("tool,errors_all_mean,errors_all_sd,errors_tool_mean"));
    assert_eq!(
        header(&d.join(RULE_STATUS_CSV)),
        "tool,version,rule_type,status,trials,mean,sd,median,pct_mean,pct_sd"
    );
    assert_eq!(
        header(&d.join(RULE_RESULTS_CSV)),
        "tool,version,rule_type,result,trials,mean,sd,median,rule_sd"
    );
    assert_eq!(
        header(&d.join(PRODUCTION_CSV)),
        "source,version,rule_type,trials,pass,fail,warning,not_applied,not_executed,distance"
    );
    assert_eq!(rows(&d.join(COVERAGE_CSV)), 2);
    assert_eq!(rows(&d.join(ERRORS_CSV)), 2);
    assert_eq!(rows(&d.join(RULE_STATUS_CSV)), 2 * 2 * 2 * 3);
    assert_eq!(rows(&d.join(RULE_RESULTS_CSV)), 2 * 2 * 2 * 5);
    assert_eq!(rows(&d.join(PRODUCTION_CSV)), 2 * 3);
    let production = fs::read_to_string(d.join(PRODUCTION_CSV)).unwrap();
    assert!(production.contains("Production,,validation,0,26.19"), "{production}");
    assert!(production.contains("Production,,aggregation,0,99.88"), "{production}");
}

#[test]
fn full_grid_status_table_has_240_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        repetitions: 1,
        budget: "20req".into(),
        out_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.trials.len(), 40);
    assert_eq!(report.tables.rule_status.len(), 240);
    assert_eq!(rows(&dir.path().join(RULE_STATUS_CSV)), 240);
    // the status partition holds in every trial
    for t in &report.trials {
        let m = t.metrics().unwrap();
        let rs = &generate_corpus(&CorpusSpec::default(), 1).unwrap()[t.trial.version[1..].parse::<usize>().unwrap() - 1];
        assert_eq!(m.status.validation.total(), rs.validation_rules.len());
        assert_eq!(m.status.aggregation.total(), rs.aggregation_rules.len());
    }
}

#[test]
fn identical_configs_give_identical_reports() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let tools = [ToolId::Mio, ToolId::Wts];
    let ra = run_experiment(&smoke(a.path(), &tools, &["v3"], 2, "2s")).unwrap();
    let rb = run_experiment(&smoke(b.path(), &tools, &["v3"], 2, "2s")).unwrap();
    assert_eq!(ra.tables, rb.tables);
    let outcomes = |r: &ExperimentReport| r.trials.iter().map(|t| t.outcome.clone()).collect::<Vec<_>>();
    assert_eq!(outcomes(&ra), outcomes(&rb));
    for f in [COVERAGE_CSV, ERRORS_CSV, RULE_STATUS_CSV, RULE_RESULTS_CSV, PRODUCTION_CSV] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn persisted_records_reproduce_the_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path(), &[ToolId::Bb, ToolId::Mio], &["v1", "v9"], 2, "60req");
    let report = run_experiment(&cfg).unwrap();
    let loaded = load_trials(dir.path()).unwrap();
    assert_eq!(loaded, report.trials);
    let recomputed = Tables::compute(&cfg.tools, &cfg.version_ids(), &loaded, &rulebench::corpus::production_profile());
    assert_eq!(recomputed, report.tables);
}

#[test]
fn a_trial_does_not_depend_on_its_neighbours() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let grid = run_experiment(&smoke(a.path(), &[ToolId::Bb, ToolId::Mosa], &["v5", "v6"], 1, "80req")).unwrap();
    let alone = run_experiment(&smoke(b.path(), &[ToolId::Mosa], &["v6"], 1, "80req")).unwrap();
    let twin = grid.trials.iter().find(|t| t.trial.tool == ToolId::Mosa && t.trial.version == "v6").unwrap();
    assert_eq!(twin.outcome, alone.trials[0].outcome);
    assert_eq!(twin.trial.seed, alone.trials[0].trial.seed);
}

#[test]
fn a_version_that_fails_to_boot_fails_only_its_trials() {
    let corpus = tempfile::tempdir().unwrap();
    write_corpus(corpus.path(), &generate_corpus(&CorpusSpec::default(), 3).unwrap()).unwrap();
    fs::write(corpus.path().join("v2.rules"), "RULE broken FOR").unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut cfg = smoke(out.path(), &[ToolId::Bb], &["v1", "v2", "v3"], 1, "30req");
    cfg.corpus.dir = Some(corpus.path().to_path_buf());
    let report = run_experiment(&cfg).unwrap();
    let failed: Vec<_> = report.failed().collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].trial.version, "v2");
    assert!(matches!(&failed[0].outcome, TrialOutcome::Failed { stage, .. } if stage == "boot"));
    assert_eq!(report.trials.iter().filter(|t| t.metrics().is_some()).count(), 2);
    let v2_rows: Vec<_> = report.tables.rule_status.iter().filter(|r| r.version == "v2").collect();
    assert!(v2_rows.iter().all(|r| r.trials == 0 && r.mean.is_nan()));
    let summary = fs::read_to_string(out.path().join(SUMMARY_JSON)).unwrap();
    assert!(summary.contains("\"stage\": \"boot\""));
}

#[test]
fn http_trials_match_in_process_trials() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let local = run_experiment(&smoke(a.path(), &[ToolId::Mio], &["v2"], 1, "40req")).unwrap();
    let mut cfg = smoke(b.path(), &[ToolId::Mio], &["v2"], 1, "40req");
    cfg.transport = TransportKind::Http;
    cfg.keep_runs = true;
    let remote = run_experiment(&cfg).unwrap();
    assert_eq!(local.trials[0].outcome, remote.trials[0].outcome);
    assert!(b.path().join("runs/MIO_v2_r0/log.jsonl").exists());
}

#[test]
fn parallel_trials_match_sequential_ones() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let seq = run_experiment(&smoke(a.path(), &ToolId::ALL, &["v1"], 1, "40req")).unwrap();
    let mut cfg = smoke(b.path(), &ToolId::ALL, &["v1"], 1, "40req");
    cfg.parallelism = 3;
    let par = run_experiment(&cfg).unwrap();
    assert_eq!(seq.tables, par.tables);
}

#[test]
fn config_files_resolve_relative_paths_and_reject_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(
        &path,
        r#"
tools = ["bb", "MIO"]
versions = ["v1", "v10"]
repetitions = 2
budget = "10m"
master_seed = 9
out_dir = "out"

[corpus]
seed = 4
guard_p = 0.1
"#,
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.tools, vec![ToolId::Bb, ToolId::Mio]);
    assert_eq!(cfg.out_dir, dir.path().join("out"));
    assert_eq!(cfg.parsed_budget().unwrap().request_limit(), Some(30000));
    assert_eq!(cfg.schedule().len(), 8);

    for bad in [
        "repetitions = 0",
        "versions = [\"v11\"]",
        "budget = \"0s\"",
        "tools = []",
        "valid_bias = 1.5",
        "colour = \"blue\"",
        "tools = [\"bb\", \"BB\"]",
    ] {
        fs::write(&path, bad).unwrap();
        assert!(ExperimentConfig::load(&path).is_err(), "{bad}");
    }
}
