use std::sync::Arc;
use std::thread;

use proptest::prelude::*;
use rulebench::dsl::{
    parse_rule_set, CmpOp, Domain, Expr, RuleSetVersion, Severity, ValidationRule, ValueKind, VarDecl,
    VariableValue,
};
use rulebench::engine::{
    CancerMessage, Engine, ExecutionResult, ExecutionStatus, Feedback, ProbeKind, ENGINE_FRAME_PREFIX,
};

const SCHEMA: &str = "\
VAR messageType : text {H, D}
VAR surgery : code {10, 95, 96}
VAR basis : code {10, 22, 30, 32, 40, 99}
VAR tumorCount : integer [0, 9]
VAR patientAge : integer [0, 120]
";

fn msg(pairs: &[(&str, VariableValue)]) -> CancerMessage {
    CancerMessage::new(pairs.iter().map(|(k, v)| (k.to_string(), v.clone())))
}

fn code(s: &str) -> VariableValue {
    VariableValue::code(s)
}

fn engine(rules: &str) -> Engine {
    Engine::new(parse_rule_set(&format!("{SCHEMA}{rules}")).unwrap())
}

#[test]
fn surgery_rule_fails_for_unverified_basis() {
    let e = engine("RULE r1 FOR H WHEN surgery = 96 CHECK basis > 32\n");
    let mut fb = Feedback::default();
    let m = msg(&[("messageType", VariableValue::text("H")), ("surgery", code("96")), ("basis", code("30"))]);
    let out = e.validate_message(&m, &mut fb).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].status, ExecutionStatus::Applied);
    assert_eq!(out[0].result, ExecutionResult::Fail);
    // basis > 32 at basis = 30: raw distance 3, normalized 0.75
    assert_eq!(fb.rules["r1"].check_pass, 0.75);
    assert_eq!(fb.rules["r1"].guard, 0.0);

    let mut fb = Feedback::default();
    let m = msg(&[("messageType", VariableValue::text("H")), ("surgery", code("95")), ("basis", code("30"))]);
    let out = e.validate_message(&m, &mut fb).unwrap();
    assert_eq!(out[0].status, ExecutionStatus::NotApplied);
    assert_eq!(out[0].result, ExecutionResult::None);
    assert_eq!(fb.rules["r1"].guard, 0.5);
}

#[test]
fn message_type_outside_scope_is_not_applied() {
    let e = engine("RULE r1 FOR H WHEN true CHECK basis > 32\n");
    let m = msg(&[("messageType", VariableValue::text("D")), ("basis", code("40"))]);
    let out = e.validate_message(&m, &mut Feedback::default()).unwrap();
    assert_eq!(out[0].status, ExecutionStatus::NotApplied);
}

#[test]
fn warning_severity() {
    let e = engine("RULE w FOR H WHEN true CHECK patientAge < 100 SEVERITY warning\n");
    let m = msg(&[("messageType", VariableValue::text("H")), ("patientAge", VariableValue::Integer(110))]);
    let out = e.validate_message(&m, &mut Feedback::default()).unwrap();
    assert_eq!(out[0].result, ExecutionResult::Warning);
}

#[test]
fn decision_table_and_dubious_values() {
    let e = engine(
        "AGG a1 SET morphVerified BY basis CASE {22, 32} => \"Yes\" CASE {10} => \"No\" DEFAULT null DUBIOUS {99}\n",
    );
    let run = |b: Option<&str>| {
        let mut pairs = vec![("messageType", VariableValue::text("H"))];
        if let Some(b) = b {
            pairs.push(("basis", code(b)));
        }
        let (case, out) = e.aggregate_case(None, &[msg(&pairs)], &mut Feedback::default()).unwrap();
        (case.aggregated_fields["morphVerified"].clone(), out[0].result)
    };
    assert_eq!(run(Some("32")), (VariableValue::text("Yes"), ExecutionResult::Pass));
    assert_eq!(run(Some("10")), (VariableValue::text("No"), ExecutionResult::Pass));
    assert_eq!(run(Some("40")), (VariableValue::Null, ExecutionResult::Pass));
    assert_eq!(run(Some("99")), (VariableValue::Null, ExecutionResult::Warning));
    assert_eq!(run(None), (VariableValue::Null, ExecutionResult::Pass));
    // value outside the declared domain
    assert_eq!(run(Some("77")), (VariableValue::Null, ExecutionResult::Fail));
}

#[test]
fn aggregation_prefers_latest_message_then_previous_case() {
    let e = engine("AGG a1 SET morphVerified BY basis CASE {22, 32} => \"Yes\" CASE {10} => \"No\" DEFAULT null\n");
    let m1 = msg(&[("basis", code("10"))]);
    let m2 = msg(&[("basis", code("22"))]);
    let (case, _) = e.aggregate_case(None, &[m1.clone(), m2.clone()], &mut Feedback::default()).unwrap();
    assert_eq!(case.aggregated_fields["morphVerified"], VariableValue::text("Yes"));
    assert_eq!(case.source_message_count, 2);

    let mut prev = case.clone();
    prev.aggregated_fields.insert("basis".into(), code("10"));
    let (next, _) = e.aggregate_case(Some(&prev), &[msg(&[])], &mut Feedback::default()).unwrap();
    assert_eq!(next.aggregated_fields["morphVerified"], VariableValue::text("No"));
    assert_eq!(next.source_message_count, 3);

    assert!(e.aggregate_case(None, &[], &mut Feedback::default()).is_err());
}

#[test]
fn stale_previous_fields_do_not_change_assignments() {
    let e = engine("AGG a1 SET morphVerified BY basis CASE {22, 32} => \"Yes\" DEFAULT \"No\"\n");
    let msgs = [msg(&[("basis", code("32"))])];
    let (fresh, _) = e.aggregate_case(None, &msgs, &mut Feedback::default()).unwrap();
    let mut stale = fresh.clone();
    stale.aggregated_fields.insert("morphVerified".into(), VariableValue::text("No"));
    let (again, _) = e.aggregate_case(Some(&stale), &msgs, &mut Feedback::default()).unwrap();
    assert_eq!(fresh.aggregated_fields, again.aggregated_fields);
}

#[test]
fn division_by_zero_reports_innermost_first_trace() {
    let e = engine("RULE z FOR H WHEN patientAge / tumorCount > 10 CHECK true\n");
    let m = msg(&[
        ("messageType", VariableValue::text("H")),
        ("patientAge", VariableValue::Integer(50)),
        ("tumorCount", VariableValue::Integer(0)),
    ]);
    let err = e.validate_message(&m, &mut Feedback::default()).unwrap_err();
    let frames = &err.error.frames;
    assert!(frames[0].ends_with("z/n1"), "{frames:?}");
    assert!(frames[1].ends_with("z/n0"), "{frames:?}");
    assert!(frames.iter().all(|f| f.starts_with(ENGINE_FRAME_PREFIX)));
    assert_eq!(frames.last().unwrap(), "engine::validate_message");

    let ok = msg(&[
        ("messageType", VariableValue::text("H")),
        ("patientAge", VariableValue::Integer(50)),
        ("tumorCount", VariableValue::Integer(2)),
    ]);
    assert!(e.validate_message(&ok, &mut Feedback::default()).is_ok());
}

#[test]
fn replaying_requests_doubles_counters() {
    let e = engine("RULE r1 FOR H WHEN surgery = 96 CHECK basis > 32\nRULE r2 FOR H, D WHEN basis IN {22, 32} CHECK surgery != 10\n");
    let msgs = [
        msg(&[("messageType", VariableValue::text("H")), ("surgery", code("96")), ("basis", code("40"))]),
        msg(&[("messageType", VariableValue::text("D")), ("surgery", code("10")), ("basis", code("22"))]),
    ];
    let send = || {
        for m in &msgs {
            e.validate_message(m, &mut Feedback::default()).unwrap();
        }
    };
    send();
    let once = e.probes().snapshot();
    send();
    let twice = e.probes().snapshot();
    for kind in [ProbeKind::Statement, ProbeKind::Decision, ProbeKind::Entry] {
        for (id, n) in once.probes(kind) {
            assert_eq!(twice.probes(kind)[id], 2 * n, "{id}");
        }
    }
    e.probes().reset();
    assert!(e.probes().snapshot().statement_probes.values().all(|&n| n == 0));
}

#[test]
fn concurrent_requests_lose_no_hits() {
    let e = Arc::new(engine("RULE r1 FOR H WHEN surgery = 96 CHECK basis > 32\n"));
    let m = msg(&[("messageType", VariableValue::text("H")), ("surgery", code("96")), ("basis", code("40"))]);
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let (e, m) = (e.clone(), m.clone());
            thread::spawn(move || {
                for _ in 0..500 {
                    e.validate_message(&m, &mut Feedback::default()).unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let snap = e.probes().snapshot();
    assert_eq!(snap.entry_probes["engine::validate_message"], 4000);
    assert_eq!(snap.statement_probes["r1/scope"], 4000);
    assert_eq!(snap.decision_probes["r1/n0:true"], 4000);
}

// ---------------------------------------------------------------------------
// Independent oracle: a direct recursive evaluator over small integer codes,
// checked against the engine on every assignment of four variables.

const VARS: [&str; 4] = ["a", "b", "c", "d"];
const VALUES: [u32; 4] = [1, 3, 7, 12];

#[derive(Debug, Clone)]
enum Pred {
    Cmp(usize, u8, u32),
    In(usize, Vec<u32>),
    And(Vec<Pred>),
    Or(Vec<Pred>),
    Not(Box<Pred>),
    Implies(Box<Pred>, Box<Pred>),
}

fn oracle(p: &Pred, env: &[u32; 4]) -> bool {
    match p {
        Pred::Cmp(v, op, k) => {
            let x = env[*v];
            match op {
                0 => x == *k,
                1 => x != *k,
                2 => x < *k,
                3 => x <= *k,
                4 => x > *k,
                _ => x >= *k,
            }
        }
        Pred::In(v, set) => set.contains(&env[*v]),
        Pred::And(xs) => xs.iter().all(|x| oracle(x, env)),
        Pred::Or(xs) => xs.iter().any(|x| oracle(x, env)),
        Pred::Not(x) => !oracle(x, env),
        Pred::Implies(a, b) => !oracle(a, env) || oracle(b, env),
    }
}

fn to_expr(p: &Pred) -> Expr {
    let c = |k: u32| VariableValue::Code(k.to_string());
    match p {
        Pred::Cmp(v, op, k) => {
            let op = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge][*op as usize];
            Expr::cmp(op, Expr::var(VARS[*v]), Expr::Const(c(*k)))
        }
        Pred::In(v, set) => Expr::in_set(Expr::var(VARS[*v]), set.iter().map(|&k| c(k)).collect()),
        Pred::And(xs) => Expr::And(xs.iter().map(to_expr).collect()),
        Pred::Or(xs) => Expr::Or(xs.iter().map(to_expr).collect()),
        Pred::Not(x) => Expr::Not(Box::new(to_expr(x))),
        Pred::Implies(a, b) => Expr::Implies(Box::new(to_expr(a)), Box::new(to_expr(b))),
    }
}

fn pred() -> impl Strategy<Value = Pred> {
    let leaf = prop_oneof![
        (0usize..4, 0u8..6, 0u32..14).prop_map(|(v, op, k)| Pred::Cmp(v, op, k)),
        (0usize..4, prop::collection::vec(0u32..14, 1..4)).prop_map(|(v, s)| Pred::In(v, s)),
    ];
    leaf.prop_recursive(3, 16, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..4).prop_map(Pred::And),
            prop::collection::vec(inner.clone(), 2..4).prop_map(Pred::Or),
            inner.clone().prop_map(|x| Pred::Not(Box::new(x))),
            (inner.clone(), inner).prop_map(|(a, b)| Pred::Implies(Box::new(a), Box::new(b))),
        ]
    })
}

fn rule_set(guard: &Pred, check: &Pred) -> RuleSetVersion {
    let mut rs = RuleSetVersion::empty("oracle");
    rs.schema.push(VarDecl {
        name: "messageType".into(),
        kind: ValueKind::Text,
        domain: Domain::Unbounded,
    });
    for v in VARS {
        rs.schema.push(VarDecl {
            name: v.into(),
            kind: ValueKind::Code,
            domain: Domain::Unbounded,
        });
    }
    rs.validation_rules.push(ValidationRule {
        id: "p".into(),
        message_types: vec!["H".into()],
        guard: to_expr(guard),
        check: to_expr(check),
        severity: Severity::Fail,
    });
    rs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn engine_agrees_with_truth_table(guard in pred(), check in pred()) {
        let e = Engine::new(rule_set(&guard, &check));
        for i in 0..VALUES.len().pow(4) {
            let env = [VALUES[i % 4], VALUES[i / 4 % 4], VALUES[i / 16 % 4], VALUES[i / 64 % 4]];
            let mut pairs = vec![("messageType".to_string(), VariableValue::text("H"))];
            pairs.extend(VARS.iter().zip(env).map(|(n, k)| (n.to_string(), VariableValue::Code(k.to_string()))));
            let mut fb = Feedback::default();
            let out = e.validate_message(&CancerMessage::new(pairs), &mut fb).unwrap();
            let (g, c) = (oracle(&guard, &env), oracle(&check, &env));
            let expected = match (g, c) {
                (false, _) => (ExecutionStatus::NotApplied, ExecutionResult::None),
                (true, true) => (ExecutionStatus::Applied, ExecutionResult::Pass),
                (true, false) => (ExecutionStatus::Applied, ExecutionResult::Fail),
            };
            prop_assert_eq!((out[0].status, out[0].result), expected);
            // heuristics agree with outcomes
            let h = fb.rules["p"];
            prop_assert_eq!(h.guard == 0.0, g);
            if g {
                prop_assert_eq!(h.check_pass == 0.0, c);
                prop_assert_eq!(h.check_fail == 0.0, !c);
            }
        }
    }
}
