use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsl::{
    parse_rule_set, AggregationCase, AggregationRule, CmpOp, Domain, Expr, RuleSetVersion, Severity, ValidationRule,
    ValueKind, VarDecl, VariableValue,
};
use crate::engine::{raw_distance, Bindings};

use super::{CorpusError, CorpusSpec, ANCHOR_AGGREGATION_ID, ANCHOR_VALIDATION_ID, FAULT_FIXTURE_ID};

const MESSAGE_TYPES: [&str; 4] = ["D", "H", "T", "F"];
const BASIS_YES: [&str; 17] = [
    "22", "32", "33", "34", "35", "36", "37", "38", "39", "57", "60", "70", "72", "74", "75", "76", "79",
];
const BASIS_NO: [&str; 13] = ["00", "10", "20", "23", "29", "30", "31", "40", "45", "46", "47", "90", "98"];

const GUARD_VARS: [&str; 11] = [
    "surgery",
    "basis",
    "diagnosisDate",
    "patientAge",
    "topography",
    "morphology",
    "laterality",
    "grade",
    "sex",
    "behavior",
    "tumorCount",
];
const AGG_VARS: [&str; 8] = ["surgery", "basis", "laterality", "grade", "sex", "behavior", "topography", "morphology"];
const OUTPUTS: [&str; 6] = ["Yes", "No", "Partial", "Unknown", "Primary", "Secondary"];

fn codes(xs: &[&str]) -> Domain {
    Domain::Set(xs.iter().map(|c| VariableValue::code(*c)).collect())
}

fn decl(name: &str, kind: ValueKind, domain: Domain) -> VarDecl {
    VarDecl {
        name: name.into(),
        kind,
        domain,
    }
}

/// Variable schema shared by all corpus versions.
pub fn schema() -> Vec<VarDecl> {
    let mut basis: Vec<&str> = BASIS_YES.iter().chain(&BASIS_NO).copied().collect();
    basis.push("99");
    basis.sort_unstable();
    let date = |s: &str| s.parse().expect("valid date");
    vec![
        decl(
            "messageType",
            ValueKind::Text,
            Domain::Set(MESSAGE_TYPES.iter().map(|t| VariableValue::text(*t)).collect()),
        ),
        decl("surgery", ValueKind::Code, codes(&["00", "10", "20", "30", "40", "50", "60", "70", "96", "99"])),
        decl("basis", ValueKind::Code, codes(&basis)),
        decl(
            "diagnosisDate",
            ValueKind::Date,
            Domain::DateRange { min: date("2000-01-01"), max: date("2022-12-31") },
        ),
        decl("patientAge", ValueKind::Integer, Domain::IntRange { min: 0, max: 120 }),
        decl("topography", ValueKind::Code, Domain::CodeRange { min: 0, max: 809, width: 3 }),
        decl("morphology", ValueKind::Code, Domain::CodeRange { min: 8000, max: 9989, width: 4 }),
        decl("laterality", ValueKind::Code, codes(&["0", "1", "2", "3", "4", "9"])),
        decl("grade", ValueKind::Code, codes(&["1", "2", "3", "4", "9"])),
        decl("sex", ValueKind::Code, codes(&["1", "2", "9"])),
        decl("behavior", ValueKind::Code, codes(&["0", "1", "2", "3"])),
        decl("tumorCount", ValueKind::Integer, Domain::IntRange { min: 0, max: 9 }),
    ]
}

fn schema_text() -> String {
    let mut rs = RuleSetVersion::empty("");
    rs.schema = schema();
    crate::dsl::serialize_rule_set(&rs)
}

fn parse_single(rule: &str) -> RuleSetVersion {
    parse_rule_set(&format!("{}{rule}\n", schema_text())).expect("built-in rule parses")
}

/// `RULE r1 FOR H WHEN surgery = 96 CHECK basis > 32`
pub fn anchor_validation() -> ValidationRule {
    parse_single(&format!("RULE {ANCHOR_VALIDATION_ID} FOR H WHEN surgery = 96 CHECK basis > 32"))
        .validation_rules
        .remove(0)
}

/// Morphological verification by basis of diagnosis.
pub fn anchor_aggregation() -> AggregationRule {
    let set = |xs: &[&str]| xs.join(", ");
    parse_single(&format!(
        "AGG {ANCHOR_AGGREGATION_ID} SET morphVerified BY basis CASE {{{}}} => \"Yes\" CASE {{{}}} => \"No\" DEFAULT null",
        set(&BASIS_YES),
        set(&BASIS_NO)
    ))
    .aggregation_rules
    .remove(0)
}

/// A rule whose check divides by a variable that can be zero.
pub fn fault_fixture() -> ValidationRule {
    parse_single(&format!("RULE {FAULT_FIXTURE_ID} FOR T WHEN tumorCount <= 1 CHECK patientAge / tumorCount < 60"))
        .validation_rules
        .remove(0)
}

/// Exact probability that `e` holds when every variable is drawn uniformly
/// from its declared domain. Sub-expressions over one variable are
/// enumerated; conjunctions, disjunctions and implications must combine
/// children over disjoint variables. `None` when the expression is outside
/// that fragment or a domain is not enumerable.
pub fn guard_probability(e: &Expr, schema: &[VarDecl]) -> Option<f64> {
    let vars = e.variables();
    match vars.len() {
        0 => {
            let b = Bindings::new();
            return Some(if raw_distance(e, &b, true) == 0.0 { 1.0 } else { 0.0 });
        }
        1 => {
            let name = vars.iter().next()?;
            let values = schema.iter().find(|d| &d.name == name)?.enumerate()?;
            if values.is_empty() {
                return None;
            }
            let mut b = Bindings::new();
            let hits = values
                .into_iter()
                .map(|v| {
                    b.insert(name.clone(), v);
                    raw_distance(e, &b, true) == 0.0
                })
                .filter(|&t| t)
                .count();
            let n = schema.iter().find(|d| &d.name == name)?.domain_size()? as f64;
            return Some(hits as f64 / n);
        }
        _ => {}
    }
    let disjoint = |xs: &[&Expr]| {
        let mut seen = std::collections::BTreeSet::new();
        xs.iter().all(|x| x.variables().into_iter().all(|v| seen.insert(v)))
    };
    match e {
        Expr::And(xs) if disjoint(&xs.iter().collect::<Vec<_>>()) => {
            xs.iter().map(|x| guard_probability(x, schema)).product()
        }
        Expr::Or(xs) if disjoint(&xs.iter().collect::<Vec<_>>()) => {
            let none: Option<f64> = xs.iter().map(|x| guard_probability(x, schema).map(|p| 1.0 - p)).product();
            none.map(|q| 1.0 - q)
        }
        Expr::Not(x) => guard_probability(x, schema).map(|p| 1.0 - p),
        Expr::Implies(a, b) if disjoint(&[a, b]) => {
            Some(1.0 - guard_probability(a, schema)? * (1.0 - guard_probability(b, schema)?))
        }
        _ => None,
    }
}

struct Gen {
    rng: ChaCha8Rng,
    schema: Vec<VarDecl>,
    p: f64,
    next_validation: usize,
    next_aggregation: usize,
}

impl Gen {
    fn decl(&self, name: &str) -> &VarDecl {
        self.schema.iter().find(|d| d.name == name).expect("declared variable")
    }

    /// A single-variable condition holding for roughly a fraction `q` of the domain.
    fn condition(&mut self, name: &str, q: f64) -> Expr {
        let d = self.decl(name).clone();
        let values = d.enumerate().expect("corpus domains are finite");
        let n = values.len();
        let count = ((q * n as f64).round() as usize).clamp(1, n - 1);
        let var = Expr::var(name);
        match d.domain {
            Domain::Set(_) => {
                let mut shuffled = values.clone();
                shuffled.shuffle(&mut self.rng);
                let (inside, outside) = shuffled.split_at(count);
                let sorted = |xs: &[VariableValue]| {
                    let mut v = xs.to_vec();
                    v.sort_by_key(|x| values.iter().position(|y| y == x));
                    v
                };
                if count == 1 && self.rng.gen_bool(0.5) {
                    Expr::cmp(CmpOp::Eq, var, Expr::Const(inside[0].clone()))
                } else if outside.len() == 1 && self.rng.gen_bool(0.5) {
                    Expr::cmp(CmpOp::Ne, var, Expr::Const(outside[0].clone()))
                } else if count * 2 > n && self.rng.gen_bool(0.4) {
                    Expr::Not(Box::new(Expr::in_set(var, sorted(outside))))
                } else {
                    Expr::in_set(var, sorted(inside))
                }
            }
            _ => {
                // ordered domain: threshold comparison selecting `count` values
                let c = |i: usize| Expr::Const(values[i].clone());
                match self.rng.gen_range(0..5) {
                    0 => Expr::cmp(CmpOp::Le, var, c(count - 1)),
                    1 => Expr::cmp(CmpOp::Lt, var, c(count)),
                    2 => Expr::cmp(CmpOp::Ge, var, c(n - count)),
                    3 => Expr::cmp(CmpOp::Gt, var, c(n - count - 1)),
                    _ => {
                        let lo = self.rng.gen_range(0..=n - count);
                        Expr::And(vec![
                            Expr::cmp(CmpOp::Ge, var.clone(), c(lo)),
                            Expr::cmp(CmpOp::Le, var, c(lo + count - 1)),
                        ])
                    }
                }
            }
        }
    }

    fn guard(&mut self) -> Result<Expr, CorpusError> {
        let (lo, hi) = (self.p / 2.0, self.p * 2.0);
        for _ in 0..1000 {
            let k = self.rng.gen_range(2..=4);
            let vars: Vec<&str> = GUARD_VARS.choose_multiple(&mut self.rng, k).copied().collect();
            let base = self.p.powf(1.0 / k as f64);
            let conjuncts: Vec<Expr> = vars
                .iter()
                .map(|v| {
                    let q = (base * self.rng.gen_range(0.8..1.25)).min(0.99);
                    self.condition(v, q)
                })
                .collect();
            let g = Expr::And(conjuncts);
            let prob = guard_probability(&g, &self.schema).expect("generated guards are analysable");
            if (lo..=hi).contains(&prob) {
                return Ok(g);
            }
        }
        Err(CorpusError::InfeasibleGuardP { p: self.p })
    }

    fn check(&mut self, guard: &Expr) -> Expr {
        let used = guard.variables();
        let free: Vec<&str> = GUARD_VARS.iter().copied().filter(|v| !used.contains(*v)).collect();
        let pick: Vec<&str> = free.choose_multiple(&mut self.rng, 2).copied().collect();
        if pick.len() == 2 && self.rng.gen_bool(0.25) {
            let q1 = self.rng.gen_range(0.2..0.5);
            let q2 = self.rng.gen_range(0.6..0.95);
            Expr::Implies(Box::new(self.condition(pick[0], q1)), Box::new(self.condition(pick[1], q2)))
        } else {
            let q = self.rng.gen_range(0.6..0.95);
            self.condition(pick[0], q)
        }
    }

    fn message_types(&mut self) -> Vec<String> {
        let k = self.rng.gen_range(1..=2);
        let mut t: Vec<&str> = MESSAGE_TYPES.choose_multiple(&mut self.rng, k).copied().collect();
        t.sort_by_key(|x| MESSAGE_TYPES.iter().position(|y| y == x));
        t.into_iter().map(String::from).collect()
    }

    fn validation(&mut self) -> Result<ValidationRule, CorpusError> {
        self.next_validation += 1;
        let guard = self.guard()?;
        let check = self.check(&guard);
        Ok(ValidationRule {
            id: format!("val{:03}", self.next_validation),
            message_types: self.message_types(),
            guard,
            check,
            severity: if self.rng.gen_bool(0.1) { Severity::Warning } else { Severity::Fail },
        })
    }

    fn table(&mut self, id: String, target_field: String) -> AggregationRule {
        let input = *AGG_VARS.choose(&mut self.rng).expect("non-empty");
        let values = self.decl(input).enumerate().expect("finite");
        let mut pool: Vec<VariableValue> = values.choose_multiple(&mut self.rng, values.len().min(12)).cloned().collect();
        let ncases = self.rng.gen_range(1..=3.min(pool.len() - 1));
        let mut outputs: Vec<&str> = OUTPUTS.choose_multiple(&mut self.rng, ncases).copied().collect();
        let mut cases = Vec::with_capacity(ncases);
        for i in 0..ncases {
            let room = (pool.len() - 1) / (ncases - i);
            let size = self.rng.gen_range(1..=room.clamp(1, 5));
            let mut set: Vec<VariableValue> = pool.drain(..size).collect();
            set.sort_by_key(|x| values.iter().position(|y| y == x));
            cases.push(AggregationCase {
                values: set,
                output: VariableValue::text(outputs.remove(0)),
            });
        }
        let default = if self.rng.gen_bool(0.5) { VariableValue::Null } else { VariableValue::text("Other") };
        let dubious_sets = if !pool.is_empty() && self.rng.gen_bool(0.3) {
            vec![vec![pool[0].clone()]]
        } else {
            Vec::new()
        };
        AggregationRule {
            id,
            target_field,
            input_var: input.to_string(),
            cases,
            default,
            dubious_sets,
        }
    }

    fn aggregation(&mut self) -> AggregationRule {
        self.next_aggregation += 1;
        let n = self.next_aggregation;
        self.table(format!("agg{n:03}"), format!("field{n:03}"))
    }

    fn modify_validation(&mut self, r: &mut ValidationRule) -> Result<(), CorpusError> {
        let before = r.clone();
        while *r == before {
            if self.rng.gen_bool(0.5) {
                r.check = self.check(&r.guard);
            } else {
                r.guard = self.guard()?;
                r.check = self.check(&r.guard);
            }
        }
        Ok(())
    }

    fn modify_aggregation(&mut self, r: &mut AggregationRule) {
        let before = r.clone();
        while *r == before {
            if self.rng.gen_bool(0.5) {
                r.default = if r.default.is_null() { VariableValue::text("Other") } else { VariableValue::Null };
            } else {
                *r = self.table(r.id.clone(), r.target_field.clone());
            }
        }
    }
}

/// Generate every version of `spec`, deterministically per seed.
pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<Vec<RuleSetVersion>, CorpusError> {
    if !(spec.guard_p > 0.0 && spec.guard_p < 1.0) {
        return Err(CorpusError::InfeasibleGuardP { p: spec.guard_p });
    }
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        schema: schema(),
        p: spec.guard_p,
        next_validation: 0,
        next_aggregation: 0,
    };
    let fixed_validation = [anchor_validation(), fault_fixture()];
    let fixed_aggregation = [anchor_aggregation()];
    let mut validation: Vec<ValidationRule> = Vec::new();
    let mut aggregation: Vec<AggregationRule> = Vec::new();
    let mut out = Vec::with_capacity(spec.versions.len());

    for (i, vs) in spec.versions.iter().enumerate() {
        let want_v = vs.validation.checked_sub(fixed_validation.len()).ok_or_else(|| CorpusError::TooFewRules {
            id: vs.id.clone(),
            min: fixed_validation.len(),
        })?;
        let want_a = vs.aggregation.checked_sub(fixed_aggregation.len()).ok_or_else(|| CorpusError::TooFewRules {
            id: vs.id.clone(),
            min: fixed_aggregation.len(),
        })?;
        if i > 0 && vs.churn {
            let removals = g.rng.gen_range(0..=2).min(validation.len());
            for _ in 0..removals {
                let k = g.rng.gen_range(0..validation.len());
                validation.remove(k);
            }
            let mods = g.rng.gen_range(1..=3).min(validation.len());
            for k in rand::seq::index::sample(&mut g.rng, validation.len(), mods).into_vec() {
                let mut r = validation[k].clone();
                g.modify_validation(&mut r)?;
                validation[k] = r;
            }
            let removals = g.rng.gen_range(0..=1).min(aggregation.len());
            for _ in 0..removals {
                let k = g.rng.gen_range(0..aggregation.len());
                aggregation.remove(k);
            }
            let mods = g.rng.gen_range(0..=2).min(aggregation.len());
            for k in rand::seq::index::sample(&mut g.rng, aggregation.len(), mods).into_vec() {
                let mut r = aggregation[k].clone();
                g.modify_aggregation(&mut r);
                aggregation[k] = r;
            }
        }
        // shrink without churn would need removals; take them from the end
        validation.truncate(want_v);
        aggregation.truncate(want_a);
        while validation.len() < want_v {
            validation.push(g.validation()?);
        }
        while aggregation.len() < want_a {
            aggregation.push(g.aggregation());
        }
        out.push(RuleSetVersion {
            version_id: vs.id.clone(),
            date: Some(vs.date),
            schema: g.schema.clone(),
            validation_rules: fixed_validation.iter().cloned().chain(validation.iter().cloned()).collect(),
            aggregation_rules: fixed_aggregation.iter().cloned().chain(aggregation.iter().cloned()).collect(),
        });
    }
    Ok(out)
}
