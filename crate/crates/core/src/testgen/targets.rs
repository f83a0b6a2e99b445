//! Fitness target naming and the domain-objective extension point.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::RuleType;
use crate::engine::{ExecutionResult, ExecutionStatus, RuleExecution};
use crate::service::{ErrorSignature, HeuristicsReport};

pub fn endpoint_target(endpoint_key: &str) -> String {
    format!("endpoint:{endpoint_key}")
}

pub fn status_class(status: u16) -> &'static str {
    match status {
        200..=299 => "2xx",
        400..=499 => "4xx",
        500..=599 => "5xx",
        _ => "other",
    }
}

pub fn status_target(endpoint_key: &str, class: &str) -> String {
    format!("status:{endpoint_key}:{class}")
}

pub fn fault_target(sig: &ErrorSignature) -> String {
    format!("fault:{}:{}", sig.error_kind, sig.trace_path.join("<"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleInfo {
    pub id: String,
    pub rule_type: RuleType,
}

/// What a white-box tool learns from one request.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub status: u16,
    pub heuristics: &'a HeuristicsReport,
    executions: &'a BTreeMap<&'a str, &'a RuleExecution>,
}

impl<'a> Observation<'a> {
    pub fn new(
        status: u16,
        heuristics: &'a HeuristicsReport,
        executions: &'a BTreeMap<&'a str, &'a RuleExecution>,
    ) -> Self {
        Observation {
            status,
            heuristics,
            executions,
        }
    }

    pub fn execution(&self, rule_id: &str) -> Option<&'a RuleExecution> {
        self.executions.get(rule_id).copied()
    }
}

pub type DistanceFn = Box<dyn Fn(&Observation<'_>) -> f64 + Send + Sync>;

/// A domain objective: an id plus a distance in [0, 1] (0 = covered).
pub struct DomainTarget {
    pub id: String,
    pub distance: DistanceFn,
}

/// Produces domain targets for the rules of the service under test.
pub trait ObjectiveFactory: Send + Sync {
    fn targets(&self, rules: &[RuleInfo]) -> Vec<DomainTarget>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObjectiveError {
    #[error("duplicate target id {0}")]
    Duplicate(String),
}

/// Registered domain targets, in registration order.
pub struct ObjectiveRegistry {
    rules: Vec<RuleInfo>,
    seen: HashSet<String>,
    targets: Vec<DomainTarget>,
}

impl ObjectiveRegistry {
    pub fn new(rules: Vec<RuleInfo>) -> Self {
        ObjectiveRegistry {
            rules,
            seen: HashSet::new(),
            targets: Vec::new(),
        }
    }

    /// Add every target of `factory`; fails without registering anything if
    /// one of its ids is already taken (or repeated within the factory).
    pub fn register(&mut self, factory: &dyn ObjectiveFactory) -> Result<usize, ObjectiveError> {
        let new = factory.targets(&self.rules);
        let mut ids = HashSet::new();
        for t in &new {
            if self.seen.contains(&t.id) || !ids.insert(t.id.clone()) {
                return Err(ObjectiveError::Duplicate(t.id.clone()));
            }
        }
        self.seen.extend(ids);
        let n = new.len();
        self.targets.extend(new);
        Ok(n)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.targets.iter().map(|t| t.id.as_str())
    }

    pub fn targets(&self) -> &[DomainTarget] {
        &self.targets
    }

    /// Distance of each registered target, clamped into [0, 1].
    pub fn evaluate<'o>(&'o self, obs: &'o Observation<'o>) -> impl Iterator<Item = (usize, f64)> + 'o {
        self.targets
            .iter()
            .enumerate()
            .map(move |(i, t)| (i, (t.distance)(obs).clamp(0.0, 1.0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainOutcome {
    /// The rule was fully evaluated.
    Applied,
    Pass,
    /// The check failed (result fail, or warning for warning-severity rules).
    Fail,
    /// Aggregation only: a dubious combination matched.
    Warning,
}

impl DomainOutcome {
    pub fn name(self) -> &'static str {
        match self {
            DomainOutcome::Applied => "applied",
            DomainOutcome::Pass => "pass",
            DomainOutcome::Fail => "fail",
            DomainOutcome::Warning => "warning",
        }
    }

    fn for_type(ty: RuleType) -> &'static [DomainOutcome] {
        match ty {
            RuleType::Validation => &[DomainOutcome::Applied, DomainOutcome::Pass, DomainOutcome::Fail],
            RuleType::Aggregation => &[
                DomainOutcome::Applied,
                DomainOutcome::Pass,
                DomainOutcome::Fail,
                DomainOutcome::Warning,
            ],
        }
    }
}

/// One target per (rule, outcome) pair. Validation distances come from the
/// per-rule guard and check heuristics; aggregation targets are 0 when the
/// outcome was observed and 1 otherwise.
#[derive(Debug, Clone, Default)]
pub struct RuleOutcomeObjectives {
    only: Option<Vec<(String, DomainOutcome)>>,
}

impl RuleOutcomeObjectives {
    pub fn all() -> Self {
        Self::default()
    }

    /// Restrict to the given pairs (unknown rules are skipped).
    pub fn pairs(pairs: Vec<(String, DomainOutcome)>) -> Self {
        RuleOutcomeObjectives { only: Some(pairs) }
    }

    pub fn target_id(rule: &str, outcome: DomainOutcome) -> String {
        format!("domain:{rule}:{}", outcome.name())
    }
}

fn validation_distance(rule: String, outcome: DomainOutcome) -> DistanceFn {
    Box::new(move |obs| {
        let Some(h) = obs.heuristics.rules.get(&rule) else { return 1.0 };
        match outcome {
            DomainOutcome::Applied => h.guard,
            DomainOutcome::Pass => (h.guard + h.check_pass) / 2.0,
            DomainOutcome::Fail => (h.guard + h.check_fail) / 2.0,
            DomainOutcome::Warning => 1.0,
        }
    })
}

fn aggregation_distance(rule: String, outcome: DomainOutcome) -> DistanceFn {
    Box::new(move |obs| {
        let Some(e) = obs.execution(&rule) else { return 1.0 };
        let hit = e.status == ExecutionStatus::Applied
            && match outcome {
                DomainOutcome::Applied => true,
                DomainOutcome::Pass => e.result == ExecutionResult::Pass,
                DomainOutcome::Fail => e.result == ExecutionResult::Fail,
                DomainOutcome::Warning => e.result == ExecutionResult::Warning,
            };
        if hit {
            0.0
        } else {
            1.0
        }
    })
}

impl ObjectiveFactory for RuleOutcomeObjectives {
    fn targets(&self, rules: &[RuleInfo]) -> Vec<DomainTarget> {
        let pairs: Vec<(RuleType, String, DomainOutcome)> = match &self.only {
            None => rules
                .iter()
                .flat_map(|r| DomainOutcome::for_type(r.rule_type).iter().map(|&o| (r.rule_type, r.id.clone(), o)))
                .collect(),
            Some(only) => only
                .iter()
                .filter_map(|(id, o)| rules.iter().find(|r| &r.id == id).map(|r| (r.rule_type, id.clone(), *o)))
                .collect(),
        };
        pairs
            .into_iter()
            .map(|(ty, rule, outcome)| DomainTarget {
                id: Self::target_id(&rule, outcome),
                distance: match ty {
                    RuleType::Validation => validation_distance(rule, outcome),
                    RuleType::Aggregation => aggregation_distance(rule, outcome),
                },
            })
            .collect()
    }
}
