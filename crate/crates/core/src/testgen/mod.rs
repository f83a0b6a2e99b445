//! Test generation against a rules service: a black-box random tool (BB) and
//! three white-box evolutionary tools (MIO, MOSA, WTS) sharing one harness.
//!
//! All tools see the service only through a [`Transport`]: the API schema at
//! `/api/schema`, the responses, and for the white-box tools the per-request
//! feedback at `/internal/heuristics`. Under a request-count budget (or the
//! logical clock) a run is a pure function of (tool, seed, config, rule set).

mod bb;
mod harness;
mod mio;
mod mosa;
mod mutate;
mod sampler;
mod targets;
mod transport;
mod wts;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dsl::RuleSetVersion;
use crate::engine::{CoverageSnapshot, ProbeCatalog};
use crate::metrics::{
    classify_errors, compute_code_coverage, rule_result_metrics, rule_status_metrics, CoverageMetrics, ErrorMetrics,
    MetricsError, ObservedError, ResultMetrics, StatusMetrics,
};
use crate::service::{ErrorSignature, ExecutionTally};

pub use mio::{MioParams, Population};
pub use mosa::{crowding_distances, dominates, preference_front, MosaParams};
pub use mutate::{choose_mutation, mutate, DateUnit, Mutation};
pub use sampler::{conforms, request_conforms, sample_random_request, Sampler, MALFORMED_DATES};
pub use targets::{
    endpoint_target, fault_target, status_class, status_target, DomainOutcome, DomainTarget, ObjectiveError,
    ObjectiveFactory, ObjectiveRegistry, Observation, RuleInfo, RuleOutcomeObjectives,
};
pub use transport::{HttpResponse, HttpTransport, InProcess, Transport, TransportError};
pub use wts::{suite_fitness, WtsParams};

/// Requests per second of simulated time under the logical clock.
pub const LOGICAL_REQUESTS_PER_SECOND: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ToolId {
    #[serde(rename = "BB", alias = "bb")]
    Bb,
    #[serde(rename = "MIO", alias = "mio")]
    Mio,
    #[serde(rename = "MOSA", alias = "mosa")]
    Mosa,
    #[serde(rename = "WTS", alias = "wts")]
    Wts,
}

impl ToolId {
    pub const ALL: [ToolId; 4] = [ToolId::Bb, ToolId::Mio, ToolId::Mosa, ToolId::Wts];

    pub fn name(self) -> &'static str {
        match self {
            ToolId::Bb => "BB",
            ToolId::Mio => "MIO",
            ToolId::Mosa => "MOSA",
            ToolId::Wts => "WTS",
        }
    }

    pub fn is_white_box(self) -> bool {
        self != ToolId::Bb
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToolId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ToolId::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown tool {s:?} (expected bb, mio, mosa or wts)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Clock {
    /// Each request advances time by `1/rate` seconds; deterministic.
    Logical { rate: f64 },
    Wall,
}

impl Default for Clock {
    fn default() -> Self {
        Clock::Logical {
            rate: LOGICAL_REQUESTS_PER_SECOND,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Requests(u64),
    Seconds { secs: f64, clock: Clock },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid budget {0:?}: expected e.g. 500req, 60s, 10m or 1h")]
pub struct BudgetParseError(pub String);

impl Budget {
    /// `Nreq` (also `N` or `Nr`) for a request count; `Ns`, `Nm`, `Nh` for
    /// time measured by `clock`.
    pub fn parse(s: &str, clock: Clock) -> Result<Budget, BudgetParseError> {
        let err = || BudgetParseError(s.to_string());
        let t = s.trim().to_ascii_lowercase();
        let split = t.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(t.len());
        let (num, unit) = t.split_at(split);
        let unit = unit.trim();
        let budget = match unit {
            "" | "r" | "req" | "reqs" | "requests" => Budget::Requests(num.parse().map_err(|_| err())?),
            "s" | "sec" | "m" | "min" | "h" => {
                let n: f64 = num.parse().map_err(|_| err())?;
                let scale = match unit {
                    "m" | "min" => 60.0,
                    "h" => 3600.0,
                    _ => 1.0,
                };
                Budget::Seconds { secs: n * scale, clock }
            }
            _ => return Err(err()),
        };
        match budget {
            Budget::Requests(0) => Err(err()),
            Budget::Seconds { secs, .. } if !(secs > 0.0 && secs.is_finite()) => Err(err()),
            b => Ok(b),
        }
    }

    /// Request count equivalent, when the budget does not depend on wall time.
    pub fn request_limit(&self) -> Option<u64> {
        match *self {
            Budget::Requests(n) => Some(n),
            Budget::Seconds {
                secs,
                clock: Clock::Logical { rate },
            } => Some((secs * rate).ceil().max(1.0) as u64),
            Budget::Seconds { clock: Clock::Wall, .. } => None,
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Requests(n) => write!(f, "{n}req"),
            Budget::Seconds { secs, .. } => write!(f, "{secs}s"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunConfig {
    pub tool: ToolId,
    pub seed: u64,
    pub budget: Budget,
    /// Probability that a sampled leaf value is drawn from its declared kind.
    pub valid_bias: f64,
    /// Keep every request record in memory (the digest is always kept).
    pub keep_log: bool,
    /// Register the shipped per-rule outcome objectives for white-box tools
    /// (off by default: the baseline tools search on code coverage only).
    pub domain_objectives: bool,
    /// Which endpoints the tool generates requests for.
    pub endpoints: EndpointFocus,
    pub mio: MioParams,
    pub mosa: MosaParams,
    pub wts: WtsParams,
}

impl RunConfig {
    pub fn new(tool: ToolId, seed: u64, budget: Budget) -> Self {
        RunConfig {
            tool,
            seed,
            budget,
            valid_bias: 0.9,
            keep_log: true,
            domain_objectives: false,
            endpoints: EndpointFocus::RuleHandling,
            mio: MioParams::default(),
            mosa: MosaParams::default(),
            wts: WtsParams::default(),
        }
    }
}

/// Endpoints a tool targets. The stubs only matter for endpoint-count
/// fidelity, so runs focus on the two rule-handling endpoints by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndpointFocus {
    #[default]
    RuleHandling,
    All,
}

impl FromStr for EndpointFocus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rule-handling" => Ok(EndpointFocus::RuleHandling),
            "all" => Ok(EndpointFocus::All),
            _ => Err(format!("unknown endpoint focus {s:?} (expected rule-handling or all)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub method: String,
    /// Endpoint template path, e.g. `/api/patients/{id}`.
    pub template: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
}

impl Request {
    pub fn endpoint_key(&self) -> String {
        format!("{} {}", self.method, self.template)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Observed {
    /// Absent when the exchange failed at the transport level.
    pub status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorSignature>,
    /// One character per reported rule execution: `n` not applied, `P`
    /// pass, `F` fail, `W` warning.
    pub outcomes: String,
    /// Targets first covered by this test.
    pub covered: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub request: Request,
    pub lineage: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<Observed>,
}

impl TestCase {
    pub fn new(request: Request, origin: &str) -> Self {
        TestCase {
            request,
            lineage: vec![origin.to_string()],
            observed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub index: u64,
    #[serde(flatten)]
    pub test: TestCase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ObservedError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MioStep {
    pub step: u64,
    pub p_random: f64,
    pub cap: usize,
    /// Largest population size after the step.
    pub max_population: usize,
    pub focused: bool,
    pub sampled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MosaGeneration {
    pub generation: u64,
    pub uncovered: usize,
    pub front0: usize,
    /// Rank-0 members dominated by some other member of the ranked pool.
    pub front0_dominated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WtsGeneration {
    pub generation: u64,
    pub best_fitness: f64,
}

/// Algorithm-internal progress, recorded for invariant checking.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub mio: Vec<MioStep>,
    pub mosa: Vec<MosaGeneration>,
    pub wts: Vec<WtsGeneration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ToolRun {
    pub tool: ToolId,
    pub seed: u64,
    pub budget: Budget,
    pub requests: u64,
    /// Hash over the serialized request log.
    pub log_digest: u64,
    pub log: Vec<LogRecord>,
    /// Covered target → first test covering it.
    pub archive: BTreeMap<String, TestCase>,
    pub targets_total: usize,
    /// Distinct observed errors.
    pub errors: Vec<ObservedError>,
    pub executions: BTreeMap<String, ExecutionTally>,
    pub coverage: CoverageSnapshot,
    pub catalog: ProbeCatalog,
    pub trace: SearchTrace,
}

impl ToolRun {
    pub fn coverage_metrics(&self) -> Result<CoverageMetrics, MetricsError> {
        compute_code_coverage(&self.coverage, &self.catalog)
    }

    pub fn error_metrics(&self) -> ErrorMetrics {
        classify_errors(&self.errors)
    }

    pub fn status_metrics(&self, rs: &RuleSetVersion) -> Result<StatusMetrics, MetricsError> {
        rule_status_metrics(&self.executions, rs)
    }

    pub fn result_metrics(&self, rs: &RuleSetVersion) -> Result<ResultMetrics, MetricsError> {
        rule_result_metrics(&self.executions, rs)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("service unreachable during {step}: {source}")]
    Transport { step: &'static str, source: TransportError },
    #[error("unexpected response to {step}: {detail}")]
    Protocol { step: &'static str, detail: String },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Run one tool against a service.
pub fn run_tool(transport: &dyn Transport, config: &RunConfig) -> Result<ToolRun, RunError> {
    run_tool_with_objectives(transport, config, Vec::new())
}

/// Run one tool with additional domain objective factories (used by the
/// white-box tools only).
pub fn run_tool_with_objectives(
    transport: &dyn Transport,
    config: &RunConfig,
    extra: Vec<Box<dyn ObjectiveFactory>>,
) -> Result<ToolRun, RunError> {
    let mut h = harness::Harness::start(transport, config, extra)?;
    match config.tool {
        ToolId::Bb => bb::run(&mut h),
        ToolId::Mio => mio::run(&mut h, &config.mio),
        ToolId::Mosa => mosa::run(&mut h, &config.mosa),
        ToolId::Wts => wts::run(&mut h, &config.wts),
    }
    h.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMismatch {
    pub index: u64,
    pub expected: Observed,
    pub actual: Observed,
}

/// Resend logged requests against a freshly reset service and compare the
/// observations (status, error signature, rule outcomes).
pub fn replay(transport: &dyn Transport, log: &[LogRecord]) -> Result<Vec<ReplayMismatch>, RunError> {
    harness::reset(transport)?;
    let mut mismatches = Vec::new();
    for rec in log {
        let Some(expected) = &rec.test.observed else { continue };
        let req = &rec.test.request;
        let (status, error, outcomes) = match transport.send(&req.method, &req.path, req.body.as_ref()) {
            Ok(r) => {
                let (sig, outcomes) = harness::read_response(&req.endpoint_key(), &r);
                (Some(r.status), sig, outcomes)
            }
            Err(_) => (None, None, String::new()),
        };
        if status != expected.status || error != expected.error || outcomes != expected.outcomes {
            mismatches.push(ReplayMismatch {
                index: rec.index,
                expected: expected.clone(),
                actual: Observed {
                    status,
                    error,
                    outcomes,
                    covered: expected.covered.clone(),
                },
            });
        }
    }
    Ok(mismatches)
}

fn file_stem(target: &str) -> String {
    target
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Write `run.json` (summary), `log.jsonl` and one replayable file per
/// archived test under `archive/`.
pub fn write_run(run: &ToolRun, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir.join("archive"))?;
    let mut log = io::BufWriter::new(fs::File::create(dir.join("log.jsonl"))?);
    for rec in &run.log {
        serde_json::to_writer(&mut log, rec)?;
        log.write_all(b"\n")?;
    }
    log.flush()?;
    for (i, (target, test)) in run.archive.iter().enumerate() {
        let name = format!("{i:05}_{}.json", file_stem(target));
        let doc = serde_json::json!({ "target": target, "test": test });
        fs::write(dir.join("archive").join(name), serde_json::to_vec_pretty(&doc)?)?;
    }
    let summary = serde_json::json!({
        "tool": run.tool,
        "seed": run.seed,
        "budget": run.budget,
        "requests": run.requests,
        "logDigest": format!("{:016x}", run.log_digest),
        "targetsCovered": run.archive.len(),
        "targetsTotal": run.targets_total,
        "errors": run.errors,
        "executions": run.executions,
        "coverage": run.coverage_metrics().ok(),
        "errorMetrics": run.error_metrics(),
        "trace": run.trace,
    });
    fs::write(dir.join("run.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(())
}

/// Read a `log.jsonl` written by [`write_run`].
pub fn read_log(path: &Path) -> io::Result<Vec<LogRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(io::Error::other))
        .collect()
}

/// 64-bit FNV-1a, used for log digests and seed derivation because its
/// output is fixed across platforms and compiler versions.
pub fn fnv1a(bytes: &[u8], state: u64) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
