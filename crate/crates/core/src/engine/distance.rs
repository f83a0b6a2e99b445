//! Branch distances: how far a predicate is from evaluating to a wanted
//! outcome. Raw distances are non-negative and zero exactly when the outcome
//! holds; [`normalize`] maps them into `[0, 1)` as `d / (d + 1)`.

use std::collections::BTreeMap;

use chrono::Datelike;

use crate::dsl::{ArithOp, CmpOp, Expr, VariableValue};

use super::value::{cmp_holds, in_set};

pub type Bindings = BTreeMap<String, VariableValue>;

/// Raw distance assigned when an operand is missing or cannot be computed.
pub const UNBOUND: f64 = f64::INFINITY;

pub fn normalize(raw: f64) -> f64 {
    if raw.is_infinite() {
        1.0
    } else {
        raw / (raw + 1.0)
    }
}

/// Normalized distance of a comparison or set-membership predicate from
/// being true under `bindings`. Unbound variables give 1.
pub fn branch_distance(predicate: &Expr, bindings: &Bindings) -> f64 {
    normalize(raw_distance(predicate, bindings, true))
}

/// Normalized distance of `expr` from evaluating to `want`.
pub fn outcome_distance(expr: &Expr, bindings: &Bindings, want: bool) -> f64 {
    normalize(raw_distance(expr, bindings, want))
}

/// Side-effect free operand evaluation; arithmetic faults yield `None`.
pub fn operand_value(e: &Expr, bindings: &Bindings) -> Option<VariableValue> {
    match e {
        Expr::Const(v) => Some(v.clone()),
        Expr::Var(name) => Some(bindings.get(name).cloned().unwrap_or(VariableValue::Null)),
        Expr::Arith { op, lhs, rhs } => {
            let a = operand_value(lhs, bindings)?;
            let b = operand_value(rhs, bindings)?;
            match (a.as_integer(), b.as_integer()) {
                (Some(x), Some(y)) => arith(*op, x, y).ok().map(VariableValue::Integer),
                _ => Some(VariableValue::Null),
            }
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithFault {
    DivisionByZero,
    Overflow,
}

pub fn arith(op: ArithOp, x: i64, y: i64) -> Result<i64, ArithFault> {
    match op {
        ArithOp::Add => x.checked_add(y).ok_or(ArithFault::Overflow),
        ArithOp::Sub => x.checked_sub(y).ok_or(ArithFault::Overflow),
        ArithOp::Mul => x.checked_mul(y).ok_or(ArithFault::Overflow),
        ArithOp::Div if y == 0 => Err(ArithFault::DivisionByZero),
        ArithOp::Div => x.checked_div(y).ok_or(ArithFault::Overflow),
    }
}

/// Raw distance of `expr` from evaluating to `want`. Conjunctions sum their
/// children, disjunctions take the minimum.
pub fn raw_distance(expr: &Expr, bindings: &Bindings, want: bool) -> f64 {
    match expr {
        Expr::Bool(b) => {
            if *b == want {
                0.0
            } else {
                UNBOUND
            }
        }
        Expr::Cmp { op, lhs, rhs } => {
            let op = if want { *op } else { op.negate() };
            match (operand_value(lhs, bindings), operand_value(rhs, bindings)) {
                (Some(a), Some(b)) => cmp_distance(op, &a, &b),
                _ => UNBOUND,
            }
        }
        Expr::InSet { operand, set } => match operand_value(operand, bindings) {
            Some(v) if v.is_null() => {
                if in_set(&v, set) == want {
                    0.0
                } else {
                    UNBOUND
                }
            }
            Some(v) => {
                if want {
                    set.iter()
                        .map(|m| cmp_distance(CmpOp::Eq, &v, m))
                        .fold(UNBOUND, f64::min)
                } else if in_set(&v, set) {
                    1.0
                } else {
                    0.0
                }
            }
            None => UNBOUND,
        },
        Expr::And(xs) if want => xs.iter().map(|x| raw_distance(x, bindings, true)).sum(),
        Expr::And(xs) => xs.iter().map(|x| raw_distance(x, bindings, false)).fold(UNBOUND, f64::min),
        Expr::Or(xs) if want => xs.iter().map(|x| raw_distance(x, bindings, true)).fold(UNBOUND, f64::min),
        Expr::Or(xs) => xs.iter().map(|x| raw_distance(x, bindings, false)).sum(),
        Expr::Not(x) => raw_distance(x, bindings, !want),
        Expr::Implies(a, b) => {
            if want {
                raw_distance(a, bindings, false).min(raw_distance(b, bindings, true))
            } else {
                raw_distance(a, bindings, true) + raw_distance(b, bindings, false)
            }
        }
        Expr::Const(_) | Expr::Var(_) | Expr::Arith { .. } => UNBOUND,
    }
}

/// Raw distance of `a op b` from holding.
pub fn cmp_distance(op: CmpOp, a: &VariableValue, b: &VariableValue) -> f64 {
    if a.is_null() || b.is_null() {
        return UNBOUND;
    }
    if cmp_holds(op, a, b) {
        return 0.0;
    }
    let numeric = match (a, b) {
        (VariableValue::Date(x), VariableValue::Date(y)) => {
            Some((x.num_days_from_ce() as f64, y.num_days_from_ce() as f64))
        }
        _ => match (a.as_integer(), b.as_integer()) {
            (Some(x), Some(y)) => Some((x as f64, y as f64)),
            _ => None,
        },
    };
    match numeric {
        Some((x, y)) => match op {
            CmpOp::Eq => (x - y).abs(),
            CmpOp::Ne => 1.0,
            CmpOp::Gt => y - x + 1.0,
            CmpOp::Ge => y - x,
            CmpOp::Lt => x - y + 1.0,
            CmpOp::Le => x - y,
        },
        None => {
            let (sa, sb) = (a.to_string(), b.to_string());
            match op {
                CmpOp::Eq => strsim::levenshtein(&sa, &sb) as f64,
                CmpOp::Ne => 1.0,
                _ => {
                    let gap = sa
                        .chars()
                        .zip(sb.chars())
                        .find(|(p, q)| p != q)
                        .map(|(p, q)| (p as i64 - q as i64).unsigned_abs() as f64)
                        .unwrap_or(0.0);
                    gap + 1.0
                }
            }
        }
    }
}
