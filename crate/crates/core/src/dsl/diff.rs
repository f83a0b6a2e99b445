use std::collections::BTreeMap;

use super::types::*;

fn changes<'a, T: PartialEq + 'a>(
    a: impl Iterator<Item = (&'a str, &'a T)>,
    b: impl Iterator<Item = (&'a str, &'a T)>,
) -> RuleIdChanges {
    let old: BTreeMap<&str, &T> = a.collect();
    let new: BTreeMap<&str, &T> = b.collect();
    let mut out = RuleIdChanges::default();
    for (id, body) in &new {
        match old.get(id) {
            None => out.added.push(id.to_string()),
            Some(prev) if prev != body => out.modified.push(id.to_string()),
            Some(_) => {}
        }
    }
    out.removed = old
        .keys()
        .filter(|id| !new.contains_key(*id))
        .map(|id| id.to_string())
        .collect();
    out
}

/// Rule-level differences from `a` to `b`. A rule is modified when its id is
/// present in both versions and its body differs.
pub fn diff_rule_sets(a: &RuleSetVersion, b: &RuleSetVersion) -> RuleSetDiff {
    RuleSetDiff {
        validation: changes(
            a.validation_rules.iter().map(|r| (r.id.as_str(), r)),
            b.validation_rules.iter().map(|r| (r.id.as_str(), r)),
        ),
        aggregation: changes(
            a.aggregation_rules.iter().map(|r| (r.id.as_str(), r)),
            b.aggregation_rules.iter().map(|r| (r.id.as_str(), r)),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_rule_set;

    const DOC: &str = "VAR messageType : text {H}\nVAR surgery : code\nVAR basis : code\n\
        RULE r1 FOR H WHEN surgery = 96 CHECK basis > 32\n\
        RULE r2 FOR H WHEN surgery = 10 CHECK basis > 10\n\
        AGG a1 SET morphVerified BY basis CASE {22, 32} => \"Yes\" DEFAULT null\n";

    #[test]
    fn reflexive_diff_is_empty() {
        let rs = parse_rule_set(DOC).unwrap();
        assert!(diff_rule_sets(&rs, &rs).is_empty());
    }

    #[test]
    fn negated_check_is_a_modification() {
        let a = parse_rule_set(DOC).unwrap();
        let mut b = a.clone();
        b.validation_rules[0].check = Expr::Not(Box::new(b.validation_rules[0].check.clone()));
        let d = diff_rule_sets(&a, &b);
        assert_eq!(d.validation.modified, vec!["r1"]);
        assert!(d.validation.added.is_empty() && d.validation.removed.is_empty());
        assert!(d.aggregation.is_empty());
    }

    #[test]
    fn additions_and_removals() {
        let a = parse_rule_set(DOC).unwrap();
        let mut b = a.clone();
        b.validation_rules.remove(1);
        let mut extra = b.validation_rules[0].clone();
        extra.id = "r9".into();
        b.validation_rules.push(extra.clone());
        extra.id = "r10".into();
        b.validation_rules.push(extra);
        let d = diff_rule_sets(&a, &b);
        assert_eq!(d.validation.added, vec!["r10", "r9"]);
        assert_eq!(d.validation.removed, vec!["r2"]);
        assert_eq!(d.validation.added.len() as i64 - d.validation.removed.len() as i64, 1);
    }
}
