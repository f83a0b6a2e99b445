//! Rule evaluation with instrumentation.
//!
//! Every rule-AST node carries a statement probe, every comparison and
//! set-membership predicate a pair of decision probes (one per outcome), and
//! every engine operation an entry probe. Counters live in a shared
//! [`ProbeRegistry`]; per-request hits and branch distances are collected in
//! a [`Feedback`] value owned by the caller.

mod distance;
mod eval;
mod probes;
mod value;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use distance::{
    branch_distance, cmp_distance, normalize, outcome_distance, raw_distance, Bindings, UNBOUND,
};
pub use eval::Engine;
pub use probes::{decision_key, CoverageSnapshot, ProbeCatalog, ProbeKind, ProbeRegistry};
pub use value::{cmp_holds, compare, in_set};

use crate::dsl::{RuleType, VariableValue};

pub const ENTRY_EVALUATE_VALIDATION: &str = "engine::evaluate_validation";
pub const ENTRY_EVALUATE_AGGREGATION: &str = "engine::evaluate_aggregation";
pub const ENTRY_VALIDATE_MESSAGE: &str = "engine::validate_message";
pub const ENTRY_AGGREGATE_CASE: &str = "engine::aggregate_case";

/// Prefix shared by every frame that lies inside rule-engine code.
pub const ENGINE_FRAME_PREFIX: &str = "engine::";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CancerMessage {
    pub variables: BTreeMap<String, VariableValue>,
}

impl CancerMessage {
    pub fn new(variables: impl IntoIterator<Item = (String, VariableValue)>) -> Self {
        CancerMessage {
            variables: variables.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> &VariableValue {
        self.variables.get(name).unwrap_or(&VariableValue::Null)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CancerCase {
    pub case_id: String,
    pub aggregated_fields: BTreeMap<String, VariableValue>,
    pub source_message_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ExecutionStatus {
    Applied,
    NotApplied,
    NotExecuted,
}

impl ExecutionStatus {
    pub const ALL: [ExecutionStatus; 3] = [
        ExecutionStatus::Applied,
        ExecutionStatus::NotApplied,
        ExecutionStatus::NotExecuted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExecutionStatus::Applied => "applied",
            ExecutionStatus::NotApplied => "not_applied",
            ExecutionStatus::NotExecuted => "not_executed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ExecutionResult {
    Pass,
    Fail,
    Warning,
    None,
}

impl ExecutionResult {
    pub fn name(self) -> &'static str {
        match self {
            ExecutionResult::Pass => "pass",
            ExecutionResult::Fail => "fail",
            ExecutionResult::Warning => "warning",
            ExecutionResult::None => "none",
        }
    }
}

/// Outcome of evaluating one rule against one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RuleExecution {
    pub rule_id: String,
    pub rule_type: RuleType,
    pub status: ExecutionStatus,
    pub result: ExecutionResult,
    #[serde(skip)]
    pub trace: Vec<Arc<str>>,
}

impl RuleExecution {
    pub fn not_applied(rule_id: &str, rule_type: RuleType, trace: Vec<Arc<str>>) -> Self {
        RuleExecution {
            rule_id: rule_id.to_string(),
            rule_type,
            status: ExecutionStatus::NotApplied,
            result: ExecutionResult::None,
            trace,
        }
    }

    pub fn applied(rule_id: &str, rule_type: RuleType, result: ExecutionResult, trace: Vec<Arc<str>>) -> Self {
        RuleExecution {
            rule_id: rule_id.to_string(),
            rule_type,
            status: ExecutionStatus::Applied,
            result,
            trace,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalErrorKind {
    /// A rule expression could not be evaluated on the given input (division
    /// by zero or arithmetic overflow).
    RuleParse,
}

/// Failure inside rule evaluation. `frames` is innermost-first: the failing
/// node, its enclosing nodes, the rule, then the engine operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} in rule {rule_id}: {detail}")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub rule_id: String,
    pub detail: String,
    pub frames: Vec<String>,
}

/// Engine failure during a multi-rule operation, with the executions
/// completed before the failing rule.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{error}")]
pub struct EngineFailure {
    pub error: EvalError,
    pub partial: Vec<RuleExecution>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregateError {
    #[error("at least one cancer message is required")]
    NoMessages,
    #[error(transparent)]
    Engine(#[from] EngineFailure),
}

/// Per-rule heuristics: normalized distance of the guard from holding and of
/// the check from passing or failing. Minimum over all evaluations in the request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RuleHeuristic {
    pub guard: f64,
    pub check_pass: f64,
    pub check_fail: f64,
}

impl RuleHeuristic {
    fn merge(&mut self, other: RuleHeuristic) {
        self.guard = self.guard.min(other.guard);
        self.check_pass = self.check_pass.min(other.check_pass);
        self.check_fail = self.check_fail.min(other.check_fail);
    }
}

/// Per-request probe hits and distances.
#[derive(Debug, Clone, Default)]
pub struct Feedback {
    pub statements: BTreeSet<usize>,
    pub entries: BTreeSet<usize>,
    /// Decision outcome counter index → distance of that outcome (0 when taken).
    pub decisions: BTreeMap<usize, f64>,
    pub rules: BTreeMap<String, RuleHeuristic>,
}

impl Feedback {
    pub fn decision(&mut self, index: usize, distance: f64) {
        let slot = self.decisions.entry(index).or_insert(distance);
        if distance < *slot {
            *slot = distance;
        }
    }

    pub fn rule(&mut self, id: &str, h: RuleHeuristic) {
        match self.rules.get_mut(id) {
            Some(prev) => prev.merge(h),
            None => {
                self.rules.insert(id.to_string(), h);
            }
        }
    }
}
