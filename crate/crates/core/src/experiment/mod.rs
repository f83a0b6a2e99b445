//! The tool × version × repetition grid: configuration, randomized
//! interleaved scheduling, isolated trials and table emission.
//!
//! Every trial boots its own service on its own rule-set version, so trials
//! never share probe counts or execution tallies. Per-trial records are
//! persisted as they complete and the tables are computed from those records
//! alone, which keeps the emitted CSVs reproducible from disk.

mod tables;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, generate_corpus, production_profile, CorpusSpec};
use crate::dsl::{RuleSetVersion, RuleType};
use crate::metrics::{CoverageMetrics, ErrorMetrics, StatusCounts, TypeResultSummary};
use crate::service::{http, RulesService};
use crate::testgen::{
    fnv1a, run_tool, write_run, Budget, Clock, EndpointFocus, HttpTransport, InProcess, RunConfig, ToolId, Transport, FNV_OFFSET,
    LOGICAL_REQUESTS_PER_SECOND,
};

pub use tables::{
    CoverageRow, ErrorRow, ProductionRow, ResultRow, StatusRow, Tables, COVERAGE_CSV, ERRORS_CSV, PRODUCTION_CSV,
    RULE_RESULTS_CSV, RULE_STATUS_CSV,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    #[default]
    Logical,
    Wall,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    /// Call the service directly; no sockets involved.
    #[default]
    InProcess,
    /// Boot an HTTP server on a free local port per trial.
    Http,
}

/// Where the rule-set versions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSource {
    /// Directory of `.rules` files; generated from `seed` when absent.
    pub dir: Option<PathBuf>,
    pub seed: u64,
    pub guard_p: f64,
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource {
            dir: None,
            seed: 1,
            guard_p: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub tools: Vec<ToolId>,
    /// Empty means every corpus version.
    pub versions: Vec<String>,
    pub repetitions: u32,
    /// e.g. `"60s"`, `"10m"` or `"3000req"`.
    pub budget: String,
    pub clock: ClockKind,
    pub requests_per_second: f64,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub parallelism: usize,
    pub valid_bias: f64,
    pub domain_objectives: bool,
    pub endpoints: EndpointFocus,
    pub transport: TransportKind,
    /// Also write each trial's request log and archive.
    pub keep_runs: bool,
    pub corpus: CorpusSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            tools: ToolId::ALL.to_vec(),
            versions: Vec::new(),
            repetitions: 3,
            budget: "60s".into(),
            clock: ClockKind::Logical,
            requests_per_second: LOGICAL_REQUESTS_PER_SECOND,
            master_seed: 1,
            out_dir: PathBuf::from("results"),
            parallelism: 1,
            valid_bias: 0.9,
            domain_objectives: false,
            endpoints: EndpointFocus::RuleHandling,
            transport: TransportKind::InProcess,
            keep_runs: false,
            corpus: CorpusSource::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("invalid config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("corpus: {0}")]
    Corpus(#[from] corpus::CorpusError),
    #[error("cannot write results: {0}")]
    Write(#[from] io::Error),
    #[error("cannot encode results: {0}")]
    Encode(#[from] serde_json::Error),
    #[error("cannot write table: {0}")]
    Csv(#[from] csv::Error),
}

impl ExperimentConfig {
    /// Parse a TOML config; relative paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: ExperimentConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if config.out_dir.is_relative() {
            config.out_dir = base.join(&config.out_dir);
        }
        if let Some(dir) = config.corpus.dir.as_mut().filter(|d| d.is_relative()) {
            *dir = base.join(&*dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn clock(&self) -> Clock {
        match self.clock {
            ClockKind::Logical => Clock::Logical {
                rate: self.requests_per_second,
            },
            ClockKind::Wall => Clock::Wall,
        }
    }

    pub fn parsed_budget(&self) -> Result<Budget, ExperimentError> {
        Budget::parse(&self.budget, self.clock()).map_err(|e| ExperimentError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |m: String| Err(ExperimentError::Invalid(m));
        if self.tools.is_empty() {
            return invalid("no tools".into());
        }
        if let Some(t) = self.tools.iter().enumerate().find(|(i, t)| self.tools[..*i].contains(t)) {
            return invalid(format!("tool {} listed twice", t.1));
        }
        if self.repetitions == 0 {
            return invalid("repetitions must be at least 1".into());
        }
        if self.parallelism == 0 {
            return invalid("parallelism must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.valid_bias) {
            return invalid(format!("valid_bias {} outside [0, 1]", self.valid_bias));
        }
        if !(self.requests_per_second > 0.0 && self.requests_per_second.is_finite()) {
            return invalid("requests_per_second must be positive".into());
        }
        self.parsed_budget()?;
        let known = CorpusSpec::default().version_ids();
        for (i, v) in self.versions.iter().enumerate() {
            if !known.contains(v) {
                return invalid(format!("unknown version {v:?}"));
            }
            if self.versions[..i].contains(v) {
                return invalid(format!("version {v} listed twice"));
            }
        }
        Ok(())
    }

    /// The configured versions, or every corpus version.
    pub fn version_ids(&self) -> Vec<String> {
        if self.versions.is_empty() {
            CorpusSpec::with_guard_p(self.corpus.guard_p).version_ids()
        } else {
            self.versions.clone()
        }
    }
}

/// One (tool, version, repetition) cell in schedule order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Trial {
    pub index: usize,
    pub tool: ToolId,
    pub version: String,
    pub repetition: u32,
    pub seed: u64,
}

/// Seed of a trial, stable across re-runs and independent of its position
/// in the schedule.
pub fn derive_seed(master_seed: u64, tool: ToolId, version: &str, repetition: u32) -> u64 {
    fnv1a(format!("{master_seed}/{tool}/{version}/{repetition}").as_bytes(), FNV_OFFSET)
}

/// `repetitions` blocks, each an independent random permutation of all
/// (tool, version) pairs.
pub fn schedule_rmit(
    tools: &[ToolId],
    versions: &[String],
    repetitions: u32,
    master_seed: u64,
    rng: &mut impl Rng,
) -> Vec<Trial> {
    let pairs: Vec<(ToolId, &String)> = tools.iter().flat_map(|&t| versions.iter().map(move |v| (t, v))).collect();
    let mut trials = Vec::with_capacity(pairs.len() * repetitions as usize);
    for repetition in 0..repetitions {
        let mut block = pairs.clone();
        block.shuffle(rng);
        for (tool, version) in block {
            trials.push(Trial {
                index: trials.len(),
                tool,
                version: version.clone(),
                repetition,
                seed: derive_seed(master_seed, tool, version, repetition),
            });
        }
    }
    trials
}

impl ExperimentConfig {
    pub fn schedule(&self) -> Vec<Trial> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        schedule_rmit(&self.tools, &self.version_ids(), self.repetitions, self.master_seed, &mut rng)
    }
}

/// Two values keyed by rule type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ByType<T> {
    pub validation: T,
    pub aggregation: T,
}

impl<T> ByType<T> {
    pub fn get(&self, ty: RuleType) -> &T {
        match ty {
            RuleType::Validation => &self.validation,
            RuleType::Aggregation => &self.aggregation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialMetrics {
    pub requests: u64,
    pub log_digest: u64,
    pub coverage: CoverageMetrics,
    pub errors: ErrorMetrics,
    pub status: ByType<StatusCounts>,
    pub results: ByType<TypeResultSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "camelCase")]
pub enum TrialOutcome {
    Completed(TrialMetrics),
    Failed { stage: String, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialRecord {
    #[serde(flatten)]
    pub trial: Trial,
    pub elapsed_ms: u64,
    #[serde(flatten)]
    pub outcome: TrialOutcome,
}

impl TrialRecord {
    pub fn metrics(&self) -> Option<&TrialMetrics> {
        match &self.outcome {
            TrialOutcome::Completed(m) => Some(m),
            TrialOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRecord>,
    pub tables: Tables,
}

impl ExperimentReport {
    pub fn failed(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(|t| t.metrics().is_none())
    }
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    trials: usize,
    completed: usize,
    failed: Vec<&'a TrialRecord>,
    tables: &'a Tables,
}

pub const TRIALS_DIR: &str = "trials";
pub const SUMMARY_JSON: &str = "summary.json";

/// A version that failed to load still gets its trials scheduled; they
/// fail at boot and the rest of the grid runs.
fn load_versions(config: &ExperimentConfig) -> Result<BTreeMap<String, Result<RuleSetVersion, String>>, ExperimentError> {
    let ids = config.version_ids();
    match &config.corpus.dir {
        Some(dir) => Ok(ids
            .into_iter()
            .map(|id| {
                let v = corpus::load_version(dir, &id).map_err(|e| e.to_string());
                (id, v)
            })
            .collect()),
        None => {
            let spec = CorpusSpec::with_guard_p(config.corpus.guard_p);
            let mut all: BTreeMap<String, RuleSetVersion> = generate_corpus(&spec, config.corpus.seed)?
                .into_iter()
                .map(|v| (v.version_id.clone(), v))
                .collect();
            Ok(ids
                .into_iter()
                .map(|id| {
                    let v = all.remove(&id).ok_or_else(|| format!("corpus has no version {id}"));
                    (id, v)
                })
                .collect())
        }
    }
}

fn failed(stage: &str, error: impl ToString) -> TrialOutcome {
    TrialOutcome::Failed {
        stage: stage.into(),
        error: error.to_string(),
    }
}

fn run_trial(config: &ExperimentConfig, budget: Budget, trial: &Trial, rs: &Result<RuleSetVersion, String>) -> TrialOutcome {
    let rs = match rs {
        Ok(rs) => rs,
        Err(e) => return failed("boot", e),
    };
    let service = Arc::new(RulesService::new(rs.clone()));
    let mut server = None;
    let transport: Box<dyn Transport> = match config.transport {
        TransportKind::InProcess => Box::new(InProcess(service)),
        TransportKind::Http => match http::serve(service, ([127, 0, 0, 1], 0).into()) {
            Ok(handle) => {
                let t = HttpTransport::new(handle.base_url());
                server = Some(handle);
                Box::new(t)
            }
            Err(e) => return failed("boot", e),
        },
    };
    let mut run_config = RunConfig::new(trial.tool, trial.seed, budget);
    run_config.valid_bias = config.valid_bias;
    run_config.domain_objectives = config.domain_objectives;
    run_config.endpoints = config.endpoints;
    run_config.keep_log = config.keep_runs;
    let run = match run_tool(transport.as_ref(), &run_config) {
        Ok(run) => run,
        Err(e) => return failed("run", e),
    };
    drop(server);
    if config.keep_runs {
        let dir = config
            .out_dir
            .join("runs")
            .join(format!("{}_{}_r{}", trial.tool, trial.version, trial.repetition));
        if let Err(e) = write_run(&run, &dir) {
            return failed("persist", e);
        }
    }
    let metrics = (|| -> Result<TrialMetrics, crate::metrics::MetricsError> {
        let status = run.status_metrics(rs)?;
        let results = run.result_metrics(rs)?;
        Ok(TrialMetrics {
            requests: run.requests,
            log_digest: run.log_digest,
            coverage: run.coverage_metrics()?,
            errors: run.error_metrics(),
            status: ByType {
                validation: status.validation,
                aggregation: status.aggregation,
            },
            results: ByType {
                validation: results.validation,
                aggregation: results.aggregation,
            },
        })
    })();
    match metrics {
        Ok(m) => TrialOutcome::Completed(m),
        Err(e) => failed("metrics", e),
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

fn trial_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(TRIALS_DIR).join(format!("{index:05}.json"))
}

/// Run the whole schedule, persisting each trial record as it completes,
/// then emit the tables and a JSON summary into `config.out_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    let budget = config.parsed_budget()?;
    let versions = load_versions(config)?;
    let schedule = config.schedule();
    fs::create_dir_all(config.out_dir.join(TRIALS_DIR))?;

    let next = AtomicUsize::new(0);
    let records: Mutex<Vec<Option<TrialRecord>>> = Mutex::new(vec![None; schedule.len()]);
    let write_error: Mutex<Option<ExperimentError>> = Mutex::new(None);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(trial) = schedule.get(i) else { break };
        log::info!(
            "trial {}/{}: {} on {} (repetition {})",
            i + 1,
            schedule.len(),
            trial.tool,
            trial.version,
            trial.repetition + 1
        );
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| run_trial(config, budget, trial, &versions[&trial.version])))
            .unwrap_or_else(|p| failed("panic", panic_message(p)));
        if let TrialOutcome::Failed { stage, error } = &outcome {
            log::warn!("trial {} failed during {stage}: {error}", i + 1);
        }
        let record = TrialRecord {
            trial: trial.clone(),
            elapsed_ms: start.elapsed().as_millis() as u64,
            outcome,
        };
        let persisted = serde_json::to_vec_pretty(&record)
            .map_err(ExperimentError::from)
            .and_then(|bytes| fs::write(trial_file(&config.out_dir, i), bytes).map_err(ExperimentError::from));
        if let Err(e) = persisted {
            write_error.lock().unwrap().get_or_insert(e);
        }
        records.lock().unwrap()[i] = Some(record);
    };
    std::thread::scope(|s| {
        for _ in 0..config.parallelism.min(schedule.len().max(1)) {
            s.spawn(worker);
        }
    });
    if let Some(e) = write_error.into_inner().unwrap() {
        return Err(e);
    }
    let trials: Vec<TrialRecord> = records.into_inner().unwrap().into_iter().map(|r| r.expect("every trial ran")).collect();
    let tables = Tables::compute(&config.tools, &config.version_ids(), &trials, &production_profile());
    tables.write(&config.out_dir)?;
    let summary = Summary {
        config,
        trials: trials.len(),
        completed: trials.iter().filter(|t| t.metrics().is_some()).count(),
        failed: trials.iter().filter(|t| t.metrics().is_none()).collect(),
        tables: &tables,
    };
    fs::write(config.out_dir.join(SUMMARY_JSON), serde_json::to_vec_pretty(&summary)?)?;
    Ok(ExperimentReport {
        config: config.clone(),
        trials,
        tables,
    })
}

/// Read back the per-trial records an experiment persisted, in schedule order.
pub fn load_trials(out_dir: &Path) -> Result<Vec<TrialRecord>, ExperimentError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(out_dir.join(TRIALS_DIR))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_slice(&fs::read(p)?)?))
        .collect()
}
