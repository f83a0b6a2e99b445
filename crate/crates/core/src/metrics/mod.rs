//! Metric families computed from run artifacts: probe coverage, error
//! classes, rule execution status and result distributions, and the distance
//! of a result distribution from a production profile.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{RuleSetVersion, RuleType};
use crate::engine::{CoverageSnapshot, ExecutionStatus, ProbeCatalog, ProbeKind};
use crate::service::{ErrorSignature, ExecutionTally, Origin};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("probe registry has no {0} probes")]
    EmptyRegistry(&'static str),
    #[error("execution references unknown rule {0}")]
    UnknownRule(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoverageMetrics {
    pub line_pct: f64,
    pub branch_pct: f64,
    pub method_pct: f64,
}

/// Percentage of registered probes with a non-zero count, per kind.
pub fn compute_code_coverage(snapshot: &CoverageSnapshot, catalog: &ProbeCatalog) -> Result<CoverageMetrics, MetricsError> {
    let pct = |kind: ProbeKind, name: &'static str| {
        let ids = catalog.ids(kind);
        if ids.is_empty() {
            return Err(MetricsError::EmptyRegistry(name));
        }
        let hits = snapshot.probes(kind);
        let covered = ids.iter().filter(|id| hits.get(*id).is_some_and(|&n| n > 0)).count();
        Ok(100.0 * covered as f64 / ids.len() as f64)
    };
    Ok(CoverageMetrics {
        line_pct: pct(ProbeKind::Statement, "statement")?,
        branch_pct: pct(ProbeKind::Decision, "decision")?,
        method_pct: pct(ProbeKind::Entry, "entry")?,
    })
}

/// An error observed during a run, from the harness's point of view.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "category", rename_all = "lowercase")]
pub enum ObservedError {
    /// A 500 response from the service.
    Service { signature: ErrorSignature },
    /// A fault raised by the test-generation tool itself.
    Tool { trace: Vec<String> },
    /// A transport failure.
    Io { trace: Vec<String> },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub all: usize,
    pub tool: usize,
    pub io: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ErrorMetrics {
    pub unique_errors: CategoryCounts,
    pub unique_failure_points: CategoryCounts,
    pub unique_library_failure_points: CategoryCounts,
}

impl ErrorMetrics {
    /// Remaining failure points outside the rule engine.
    pub fn non_library_failure_points(&self) -> usize {
        self.unique_failure_points.remaining - self.unique_library_failure_points.remaining
    }
}

/// Group errors by full trace (unique errors), by top frame (failure points)
/// and by top frame inside the engine (library failure points).
pub fn classify_errors<'a>(errors: impl IntoIterator<Item = &'a ObservedError>) -> ErrorMetrics {
    #[derive(Default)]
    struct Sets<'a> {
        traces: BTreeSet<&'a [String]>,
        tops: BTreeSet<&'a str>,
        library: BTreeSet<&'a str>,
    }
    let (mut tool, mut io, mut remaining) = (Sets::default(), Sets::default(), Sets::default());
    for e in errors {
        let (sets, trace, library) = match e {
            ObservedError::Service { signature } => {
                (&mut remaining, signature.trace_path.as_slice(), signature.origin == Origin::Engine)
            }
            ObservedError::Tool { trace } => (&mut tool, trace.as_slice(), false),
            ObservedError::Io { trace } => (&mut io, trace.as_slice(), false),
        };
        let top = trace.first().map(String::as_str).unwrap_or("");
        sets.traces.insert(trace);
        sets.tops.insert(top);
        if library {
            sets.library.insert(top);
        }
    }
    let counts = |f: &dyn Fn(&Sets) -> usize| {
        let (t, i, r) = (f(&tool), f(&io), f(&remaining));
        CategoryCounts { all: t + i + r, tool: t, io: i, remaining: r }
    };
    ErrorMetrics {
        unique_errors: counts(&|s| s.traces.len()),
        unique_failure_points: counts(&|s| s.tops.len()),
        unique_library_failure_points: counts(&|s| s.library.len()),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatusCounts {
    pub applied: usize,
    pub not_applied: usize,
    pub not_executed: usize,
}

impl StatusCounts {
    pub fn total(&self) -> usize {
        self.applied + self.not_applied + self.not_executed
    }

    pub fn get(&self, s: ExecutionStatus) -> usize {
        match s {
            ExecutionStatus::Applied => self.applied,
            ExecutionStatus::NotApplied => self.not_applied,
            ExecutionStatus::NotExecuted => self.not_executed,
        }
    }

    /// Percentage of rules with status `s`; 0 for an empty rule set.
    pub fn pct(&self, s: ExecutionStatus) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            100.0 * self.get(s) as f64 / self.total() as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatusMetrics {
    pub validation: StatusCounts,
    pub aggregation: StatusCounts,
    /// Per-rule status, in rule-set order per type.
    pub rules: Vec<(String, RuleType, ExecutionStatus)>,
}

impl StatusMetrics {
    pub fn for_type(&self, ty: RuleType) -> &StatusCounts {
        match ty {
            RuleType::Validation => &self.validation,
            RuleType::Aggregation => &self.aggregation,
        }
    }
}

fn check_known(tally: &BTreeMap<String, ExecutionTally>, rs: &RuleSetVersion) -> Result<(), MetricsError> {
    match tally.keys().find(|id| rs.rule_type_of(id).is_none()) {
        Some(id) => Err(MetricsError::UnknownRule(id.clone())),
        None => Ok(()),
    }
}

/// Run-level status: applied if any record applied the rule, not applied if
/// it has records but none applied, not executed without records.
pub fn rule_status_metrics(tally: &BTreeMap<String, ExecutionTally>, rs: &RuleSetVersion) -> Result<StatusMetrics, MetricsError> {
    check_known(tally, rs)?;
    let mut m = StatusMetrics::default();
    for ty in RuleType::ALL {
        for id in rs.rule_ids(ty) {
            let t = tally.get(id).copied().unwrap_or_default();
            let status = if t.applied() > 0 {
                ExecutionStatus::Applied
            } else if t.not_applied > 0 {
                ExecutionStatus::NotApplied
            } else {
                ExecutionStatus::NotExecuted
            };
            let c = match ty {
                RuleType::Validation => &mut m.validation,
                RuleType::Aggregation => &mut m.aggregation,
            };
            match status {
                ExecutionStatus::Applied => c.applied += 1,
                ExecutionStatus::NotApplied => c.not_applied += 1,
                ExecutionStatus::NotExecuted => c.not_executed += 1,
            }
            m.rules.push((id.to_string(), ty, status));
        }
    }
    Ok(m)
}

/// Percentages over the five result categories.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultVector {
    pub pass: f64,
    pub fail: f64,
    pub warning: f64,
    pub not_applied: f64,
    pub not_executed: f64,
}

impl ResultVector {
    pub const CATEGORIES: [&'static str; 5] = ["pass", "fail", "warning", "not_applied", "not_executed"];

    pub fn to_array(self) -> [f64; 5] {
        [self.pass, self.fail, self.warning, self.not_applied, self.not_executed]
    }

    pub fn from_array(a: [f64; 5]) -> ResultVector {
        ResultVector {
            pass: a[0],
            fail: a[1],
            warning: a[2],
            not_applied: a[3],
            not_executed: a[4],
        }
    }

    pub fn sum(self) -> f64 {
        self.to_array().iter().sum()
    }

    /// Half the L1 distance, in `[0, 100]` for percentage vectors.
    pub fn distance(self, other: ResultVector) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0
    }

    /// Percentages of one rule's records; a rule without records is entirely
    /// not executed.
    pub fn from_tally(t: &ExecutionTally) -> ResultVector {
        let n = (t.applied() + t.not_applied) as f64;
        if n == 0.0 {
            return ResultVector { not_executed: 100.0, ..ResultVector::default() };
        }
        ResultVector {
            pass: 100.0 * t.pass as f64 / n,
            fail: 100.0 * t.fail as f64 / n,
            warning: 100.0 * t.warning as f64 / n,
            not_applied: 100.0 * t.not_applied as f64 / n,
            not_executed: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// Arithmetic mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(xs: &[f64]) -> MeanSd {
    if xs.is_empty() {
        return MeanSd::default();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanSd { mean, sd }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeResultSummary {
    pub mean: ResultVector,
    pub sd: ResultVector,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultMetrics {
    pub rules: Vec<(String, RuleType, ResultVector)>,
    pub validation: TypeResultSummary,
    pub aggregation: TypeResultSummary,
}

impl ResultMetrics {
    pub fn for_type(&self, ty: RuleType) -> &TypeResultSummary {
        match ty {
            RuleType::Validation => &self.validation,
            RuleType::Aggregation => &self.aggregation,
        }
    }
}

/// Per-rule result percentages and their mean ± sd per rule type.
pub fn rule_result_metrics(tally: &BTreeMap<String, ExecutionTally>, rs: &RuleSetVersion) -> Result<ResultMetrics, MetricsError> {
    check_known(tally, rs)?;
    let mut m = ResultMetrics::default();
    for ty in RuleType::ALL {
        let vectors: Vec<ResultVector> = rs
            .rule_ids(ty)
            .into_iter()
            .map(|id| {
                let v = ResultVector::from_tally(&tally.get(id).copied().unwrap_or_default());
                m.rules.push((id.to_string(), ty, v));
                v
            })
            .collect();
        let mut mean = [0.0; 5];
        let mut sd = [0.0; 5];
        for k in 0..5 {
            let col: Vec<f64> = vectors.iter().map(|v| v.to_array()[k]).collect();
            let s = mean_sd(&col);
            mean[k] = s.mean;
            sd[k] = s.sd;
        }
        let summary = TypeResultSummary {
            mean: ResultVector::from_array(mean),
            sd: ResultVector::from_array(sd),
        };
        match ty {
            RuleType::Validation => m.validation = summary,
            RuleType::Aggregation => m.aggregation = summary,
        }
    }
    Ok(m)
}

/// Mean result percentages per rule type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProductionProfile {
    pub validation: ResultVector,
    pub aggregation: ResultVector,
}

impl ProductionProfile {
    pub fn for_type(&self, ty: RuleType) -> ResultVector {
        match ty {
            RuleType::Validation => self.validation,
            RuleType::Aggregation => self.aggregation,
        }
    }
}

impl From<&ResultMetrics> for ProductionProfile {
    fn from(m: &ResultMetrics) -> Self {
        ProductionProfile {
            validation: m.validation.mean,
            aggregation: m.aggregation.mean,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileDistance {
    pub validation: f64,
    pub aggregation: f64,
}

pub fn compare_to_production(rm: &ProductionProfile, profile: &ProductionProfile) -> ProfileDistance {
    ProfileDistance {
        validation: rm.validation.distance(profile.validation),
        aggregation: rm.aggregation.distance(profile.aggregation),
    }
}
