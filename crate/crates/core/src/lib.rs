//! Desk-scale apparatus for evaluating REST API test generators against a
//! versioned medical-rules service.
//!
//! * [`dsl`] parses and serializes the rule language.
//! * [`engine`] evaluates messages and cases, records rule executions and
//!   exposes instrumentation probes and branch distances.
//! * [`service`] is the HTTP facade with the two rule-handling endpoints.
//! * [`testgen`] holds the four generators (black-box random, MIO, MOSA, WTS).
//! * [`metrics`] computes coverage, error and rule-execution metrics.
//! * [`corpus`] generates the ten synthetic rule-set versions and the
//!   production profile fixture.
//! * [`experiment`] schedules and runs the tool × version × repetition grid.

pub mod dsl;
pub mod engine;
pub mod service;
pub mod metrics;
pub mod corpus;
pub mod testgen;
pub mod experiment;

pub use dsl::{parse_rule_set, serialize_rule_set, RuleSetVersion};
