//! Synthetic rule corpus: ten versions whose rule counts follow the
//! registry's published evolution, plus the production result profile.
//!
//! Every version carries two anchor rules verbatim (the surgery/basis
//! implication `r1` and the morphological-verification table `a1`) and the
//! zero-divide fault fixture `z1`. Generated validation guards are
//! conjunctions of 2–4 single-variable conditions whose satisfaction
//! probability under uniform sampling of the declared domains lies within
//! `[p/2, 2p]`.

mod generate;
mod profile;

use std::fs;
use std::io;
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

use crate::dsl::{parse_rule_set, serialize_rule_set, ParseError, RuleSetVersion};

pub use generate::{anchor_aggregation, anchor_validation, fault_fixture, generate_corpus, guard_probability, schema};
pub use profile::{generate_production_trace, production_profile, tally_trace, PRODUCTION_PROFILE_TOML};

pub const ANCHOR_VALIDATION_ID: &str = "r1";
pub const ANCHOR_AGGREGATION_ID: &str = "a1";
pub const FAULT_FIXTURE_ID: &str = "z1";

#[derive(Debug, Clone, PartialEq)]
pub struct VersionSpec {
    pub id: String,
    pub date: NaiveDate,
    pub validation: usize,
    pub aggregation: usize,
    /// Whether existing rules are removed and modified on the way to this
    /// version, beyond the additions needed to reach the counts.
    pub churn: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub versions: Vec<VersionSpec>,
    /// Target guard satisfaction probability under uniform valid sampling.
    pub guard_p: f64,
}

const TABLE: [(&str, &str, usize, usize); 10] = [
    ("v1", "2017-12-12", 30, 32),
    ("v2", "2018-05-30", 31, 33),
    ("v3", "2019-02-06", 48, 35),
    ("v4", "2019-08-27", 49, 35),
    ("v5", "2019-11-11", 53, 37),
    ("v6", "2020-09-25", 56, 37),
    ("v7", "2020-11-24", 66, 38),
    ("v8", "2021-04-20", 69, 43),
    ("v9", "2022-01-13", 69, 43),
    ("v10", "2022-01-21", 70, 43),
];

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec::with_guard_p(0.1)
    }
}

impl CorpusSpec {
    pub fn with_guard_p(guard_p: f64) -> Self {
        CorpusSpec {
            versions: TABLE
                .iter()
                .map(|(id, date, v, a)| VersionSpec {
                    id: id.to_string(),
                    date: date.parse().expect("valid table date"),
                    validation: *v,
                    aggregation: *a,
                    churn: *id != "v10",
                })
                .collect(),
            guard_p,
        }
    }

    pub fn version_ids(&self) -> Vec<String> {
        self.versions.iter().map(|v| v.id.clone()).collect()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("guard probability {p} is infeasible for the variable domains")]
    InfeasibleGuardP { p: f64 },
    #[error("version {id} needs at least {min} rules of a type")]
    TooFewRules { id: String, min: usize },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("{file}: {source}")]
    Parse { file: String, source: ParseError },
}

pub fn rules_file_name(version_id: &str) -> String {
    format!("{version_id}.rules")
}

/// Write one `.rules` file per version plus the production profile fixture.
pub fn write_corpus(dir: &Path, versions: &[RuleSetVersion]) -> Result<(), CorpusError> {
    fs::create_dir_all(dir)?;
    for v in versions {
        fs::write(dir.join(rules_file_name(&v.version_id)), serialize_rule_set(v))?;
    }
    fs::write(dir.join("production_profile.toml"), PRODUCTION_PROFILE_TOML)?;
    Ok(())
}

pub fn load_version(dir: &Path, version_id: &str) -> Result<RuleSetVersion, CorpusError> {
    let file = dir.join(rules_file_name(version_id));
    let text = fs::read_to_string(&file)?;
    parse_rule_set(&text).map_err(|source| CorpusError::Parse {
        file: file.display().to_string(),
        source,
    })
}
