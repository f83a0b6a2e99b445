use std::cmp::Ordering;

use crate::dsl::{CmpOp, VariableValue};

/// Ordering of two non-null operands. Dates compare as dates, numerically
/// coercible values (codes, integers, digit text) as integers, anything else
/// by its textual rendering. `None` when either side is null.
pub fn compare(a: &VariableValue, b: &VariableValue) -> Option<Ordering> {
    if a.is_null() || b.is_null() {
        return None;
    }
    if let (VariableValue::Date(x), VariableValue::Date(y)) = (a, b) {
        return Some(x.cmp(y));
    }
    if let (Some(x), Some(y)) = (a.as_integer(), b.as_integer()) {
        return Some(x.cmp(&y));
    }
    Some(a.to_string().cmp(&b.to_string()))
}

/// Outcome of `a op b`; comparisons against a missing value never hold.
pub fn cmp_holds(op: CmpOp, a: &VariableValue, b: &VariableValue) -> bool {
    compare(a, b).is_some_and(|o| op.holds(o))
}

pub fn in_set(value: &VariableValue, set: &[VariableValue]) -> bool {
    if value.is_null() {
        return set.iter().any(VariableValue::is_null);
    }
    let key = value.match_key();
    set.iter().any(|m| m.match_key() == key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    #[test]
    fn codes_compare_numerically() {
        assert!(cmp_holds(CmpOp::Gt, &VariableValue::code("40"), &VariableValue::code("32")));
        assert!(cmp_holds(CmpOp::Eq, &VariableValue::code("096"), &VariableValue::Integer(96)));
        assert!(!cmp_holds(CmpOp::Gt, &VariableValue::code("30"), &VariableValue::code("32")));
    }

    #[test]
    fn mixed_operands_fall_back_to_strings() {
        assert!(cmp_holds(CmpOp::Lt, &VariableValue::text("abc"), &VariableValue::code("x")));
        assert!(cmp_holds(CmpOp::Ne, &VariableValue::text(""), &VariableValue::code("32")));
    }

    #[test]
    fn null_never_satisfies_a_comparison() {
        for op in [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge] {
            assert!(!cmp_holds(op, &VariableValue::Null, &VariableValue::code("1")));
        }
        assert!(!in_set(&VariableValue::Null, &[VariableValue::code("1")]));
        assert!(in_set(&VariableValue::Null, &[VariableValue::Null]));
    }

    #[test]
    fn dates_compare_chronologically() {
        let d = |y, m, dd| VariableValue::Date(NaiveDate::from_ymd_opt(y, m, dd).unwrap());
        assert!(cmp_holds(CmpOp::Lt, &d(2019, 12, 31), &d(2020, 1, 1)));
    }
}
