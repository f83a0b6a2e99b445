use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::dsl::{RuleSetVersion, RuleType};
use crate::engine::{ExecutionResult, RuleExecution};
use crate::metrics::ProductionProfile;
use crate::service::ExecutionTally;

pub const PRODUCTION_PROFILE_TOML: &str = include_str!("../../fixtures/production_profile.toml");

/// The production result profile, parsed from the bundled fixture.
pub fn production_profile() -> ProductionProfile {
    toml::from_str(PRODUCTION_PROFILE_TOML).expect("bundled profile fixture parses")
}

/// `n` synthetic execution records: rules are visited round-robin (so every
/// rule is executed once `n` ≥ the rule count) and each outcome is drawn
/// from the profile's distribution for the rule's type. Not-executed mass
/// is impossible for a record and is ignored.
pub fn generate_production_trace(
    rs: &RuleSetVersion,
    profile: &ProductionProfile,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<RuleExecution> {
    let rules: Vec<(&str, RuleType)> = RuleType::ALL
        .iter()
        .flat_map(|&ty| rs.rule_ids(ty).into_iter().map(move |id| (id, ty)))
        .collect();
    if rules.is_empty() {
        return Vec::new();
    }
    let dist = |ty: RuleType| {
        let v = profile.for_type(ty);
        WeightedIndex::new([v.pass, v.fail, v.warning, v.not_applied]).ok()
    };
    let dists = [dist(RuleType::Validation), dist(RuleType::Aggregation)];
    (0..n)
        .map(|i| {
            let (id, ty) = rules[i % rules.len()];
            let d = &dists[ty as usize];
            let k = d.as_ref().map_or(3, |d| d.sample(rng));
            let result = [ExecutionResult::Pass, ExecutionResult::Fail, ExecutionResult::Warning][..]
                .get(k)
                .copied();
            match result {
                Some(r) => RuleExecution::applied(id, ty, r, Vec::new()),
                None => RuleExecution::not_applied(id, ty, Vec::new()),
            }
        })
        .collect()
}

pub fn tally_trace(trace: &[RuleExecution]) -> BTreeMap<String, ExecutionTally> {
    let mut t: BTreeMap<String, ExecutionTally> = BTreeMap::new();
    for e in trace {
        t.entry(e.rule_id.clone()).or_default().record(e);
    }
    t
}
