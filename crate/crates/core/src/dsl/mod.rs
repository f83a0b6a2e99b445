//! Textual rule language: one statement per line, `#` comments, a leading
//! `VAR` schema block followed by `RULE` (validation) and `AGG` (aggregation)
//! statements.
//!
//! ```text
//! VERSION v1 2017-12-12
//! VAR messageType : text {D, H, T, F}
//! VAR surgery : code {00, 10, 96}
//! VAR basis : code {10, 22, 32, 99}
//! RULE r1 FOR H WHEN surgery = 96 CHECK basis > 32
//! AGG a1 SET morphVerified BY basis CASE {22, 32} => "Yes" CASE {10} => "No" DEFAULT null
//! ```

mod diff;
mod parser;
mod serialize;
mod types;

pub use diff::diff_rule_sets;
pub use parser::{parse_rule_set, ParseError, ParseErrorKind};
pub use serialize::{render_aggregation_rule, render_expr, render_literal, render_validation_rule, serialize_rule_set};
pub use types::*;

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    const VARS: [&str; 4] = ["alpha", "beta", "gamma", "delta"];

    fn schema() -> Vec<VarDecl> {
        VARS.iter()
            .map(|n| VarDecl {
                name: n.to_string(),
                kind: ValueKind::Code,
                domain: Domain::Unbounded,
            })
            .collect()
    }

    fn literal() -> impl Strategy<Value = VariableValue> {
        prop_oneof![
            "[0-9]{1,4}".prop_map(VariableValue::Code),
            any::<i64>().prop_map(VariableValue::Integer),
            (2000i32..2030, 1u32..13, 1u32..29)
                .prop_map(|(y, m, d)| VariableValue::Date(NaiveDate::from_ymd_opt(y, m, d).unwrap())),
            "[a-zA-Z \"\\\\]{0,6}".prop_map(VariableValue::Text),
            Just(VariableValue::Null),
        ]
    }

    fn operand() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            literal().prop_map(Expr::Const),
            prop::sample::select(VARS.to_vec()).prop_map(Expr::var),
        ];
        leaf.prop_recursive(2, 6, 2, |inner| {
            (
                prop::sample::select(vec![ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div]),
                inner.clone(),
                inner,
            )
                .prop_map(|(op, l, r)| Expr::Arith {
                    op,
                    lhs: Box::new(l),
                    rhs: Box::new(r),
                })
        })
    }

    fn cmp_op() -> impl Strategy<Value = CmpOp> {
        prop::sample::select(vec![CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge])
    }

    fn boolean() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            any::<bool>().prop_map(Expr::Bool),
            (cmp_op(), operand(), operand()).prop_map(|(op, l, r)| Expr::cmp(op, l, r)),
            (operand(), prop::collection::vec(literal(), 0..4)).prop_map(|(o, s)| Expr::in_set(o, s)),
        ];
        leaf.prop_recursive(3, 16, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::And),
                prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::Or),
                inner.clone().prop_map(|e| Expr::Not(Box::new(e))),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::Implies(Box::new(a), Box::new(b))),
            ]
        })
    }

    fn rule_set() -> impl Strategy<Value = RuleSetVersion> {
        let validation = prop::collection::vec(
            (
                prop::collection::vec("[A-Z]", 1..3),
                boolean(),
                boolean(),
                any::<bool>(),
            ),
            0..4,
        );
        let aggregation = prop::collection::vec(
            (
                prop::sample::subsequence((0..30u32).collect::<Vec<_>>(), 0..10),
                literal(),
                literal(),
                any::<bool>(),
            ),
            0..3,
        );
        (validation, aggregation).prop_map(|(vals, aggs)| {
            let mut rs = RuleSetVersion::empty("v7");
            rs.date = NaiveDate::from_ymd_opt(2020, 11, 24);
            rs.schema = schema();
            for (i, (types, guard, check, warn)) in vals.into_iter().enumerate() {
                rs.validation_rules.push(ValidationRule {
                    id: format!("r{i}"),
                    message_types: types,
                    guard,
                    check,
                    severity: if warn { Severity::Warning } else { Severity::Fail },
                });
            }
            for (i, (codes, out, default, dubious)) in aggs.into_iter().enumerate() {
                let split = codes.len() / 2;
                let to_codes = |xs: &[u32]| xs.iter().map(|c| VariableValue::Code(format!("{c:02}"))).collect::<Vec<_>>();
                let mut cases = vec![AggregationCase { values: to_codes(&codes[..split]), output: out }];
                cases.push(AggregationCase { values: to_codes(&codes[split..]), output: VariableValue::text("No") });
                rs.aggregation_rules.push(AggregationRule {
                    id: format!("a{i}"),
                    target_field: format!("field{i}"),
                    input_var: "beta".into(),
                    cases,
                    default,
                    dubious_sets: if dubious { vec![to_codes(&codes[..split.min(1)])] } else { vec![] },
                });
            }
            rs
        })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(rs in rule_set()) {
            let text = serialize_rule_set(&rs);
            let back = parse_rule_set(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
            prop_assert_eq!(&back, &rs);
            prop_assert_eq!(serialize_rule_set(&back), text);
        }

        #[test]
        fn overlapping_case_sets_are_rejected(a in prop::collection::vec(0..20u32, 1..6), b in prop::collection::vec(0..20u32, 1..6)) {
            let render = |xs: &[u32]| xs.iter().map(|c| format!("{c:02}")).collect::<Vec<_>>().join(", ");
            let mut all: Vec<u32> = a.iter().chain(b.iter()).copied().collect();
            all.sort_unstable();
            let before = all.len();
            all.dedup();
            let overlapping = all.len() != before;
            let doc = format!("VAR beta : code\nAGG a SET f BY beta CASE {{{}}} => \"Yes\" CASE {{{}}} => \"No\" DEFAULT null\n", render(&a), render(&b));
            match parse_rule_set(&doc) {
                Ok(_) => prop_assert!(!overlapping),
                Err(e) => {
                    prop_assert!(overlapping);
                    let is_overlap = matches!(e.kind, ParseErrorKind::OverlappingCases { .. });
                    prop_assert!(is_overlap);
                }
            }
        }

        #[test]
        fn parse_never_panics_and_errors_have_positions(doc in "[A-Za-z0-9 =<>{}(),:\"#\n.-]{0,80}") {
            if let Err(e) = parse_rule_set(&doc) {
                prop_assert!(e.line >= 1 && e.column >= 1);
            }
        }
    }

    #[test]
    fn round_trips_the_aggregation_example() {
        let doc = "VAR basis : code\nAGG a1 SET morphVerified BY basis CASE {22,32} => \"Yes\" DEFAULT null\n";
        let rs = parse_rule_set(doc).unwrap();
        let text = serialize_rule_set(&rs);
        assert_eq!(parse_rule_set(&text).unwrap(), rs);
        assert_eq!(rs.aggregation_rules[0].default, VariableValue::Null);
        assert_eq!(text.matches("AGG ").count(), 1);
    }

    #[test]
    fn single_rule_serializes_to_one_rule_block() {
        let rs = parse_rule_set("VAR s : code\nRULE r1 FOR H WHEN s = 96 CHECK s > 32\n").unwrap();
        let text = serialize_rule_set(&rs);
        assert_eq!(text.lines().filter(|l| l.starts_with("RULE ")).count(), 1);
    }
}
