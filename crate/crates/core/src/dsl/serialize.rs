use std::fmt::Write;

use super::parser::KEYWORDS;
use super::types::*;

/// Render a rule set as a `.rules` document. The output re-parses to a
/// structurally equal rule set.
pub fn serialize_rule_set(rs: &RuleSetVersion) -> String {
    let mut out = String::new();
    if !rs.version_id.is_empty() {
        out.push_str("VERSION ");
        out.push_str(&rs.version_id);
        if let Some(d) = rs.date {
            write!(out, " {}", d.format("%Y-%m-%d")).unwrap();
        }
        out.push('\n');
    }
    for v in &rs.schema {
        write!(out, "VAR {} : {}", v.name, v.kind.name()).unwrap();
        match &v.domain {
            Domain::Unbounded => {}
            Domain::Set(values) => write!(out, " {}", render_set(values)).unwrap(),
            Domain::IntRange { min, max } => write!(out, " [{}, {}]", render_int(*min), render_int(*max)).unwrap(),
            Domain::CodeRange { min, max, width } => {
                write!(out, " [{min:0w$}, {max:0w$}]", w = *width).unwrap()
            }
            Domain::DateRange { min, max } => {
                write!(out, " [{}, {}]", min.format("%Y-%m-%d"), max.format("%Y-%m-%d")).unwrap()
            }
        }
        out.push('\n');
    }
    for r in &rs.validation_rules {
        out.push_str(&render_validation_rule(r));
        out.push('\n');
    }
    for r in &rs.aggregation_rules {
        out.push_str(&render_aggregation_rule(r));
        out.push('\n');
    }
    out
}

pub fn render_validation_rule(r: &ValidationRule) -> String {
    let types: Vec<String> = r.message_types.iter().map(|t| render_word(t)).collect();
    let mut s = format!(
        "RULE {} FOR {} WHEN {} CHECK {}",
        r.id,
        types.join(", "),
        render_expr(&r.guard),
        render_expr(&r.check)
    );
    if r.severity == Severity::Warning {
        s.push_str(" SEVERITY warning");
    }
    s
}

pub fn render_aggregation_rule(r: &AggregationRule) -> String {
    let mut s = format!("AGG {} SET {} BY {}", r.id, r.target_field, r.input_var);
    for c in &r.cases {
        write!(s, " CASE {} => {}", render_set(&c.values), render_literal(&c.output)).unwrap();
    }
    write!(s, " DEFAULT {}", render_literal(&r.default)).unwrap();
    for d in &r.dubious_sets {
        write!(s, " DUBIOUS {}", render_set(d)).unwrap();
    }
    s
}

fn render_int(i: i64) -> String {
    if i >= 0 && i <= 9999 {
        format!("+{i}")
    } else {
        i.to_string()
    }
}

fn render_word(s: &str) -> String {
    let ident = s.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.');
    if ident && !KEYWORDS.contains(&s) && !matches!(s, "null" | "true" | "false") {
        s.to_string()
    } else {
        render_string(s)
    }
}

fn render_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

pub fn render_literal(v: &VariableValue) -> String {
    match v {
        VariableValue::Code(c) => c.clone(),
        VariableValue::Integer(i) => render_int(*i),
        VariableValue::Date(d) => d.format("%Y-%m-%d").to_string(),
        VariableValue::Text(t) => render_string(t),
        VariableValue::Null => "null".into(),
    }
}

fn render_set(values: &[VariableValue]) -> String {
    let items: Vec<String> = values.iter().map(render_literal).collect();
    format!("{{{}}}", items.join(", "))
}

pub fn render_expr(e: &Expr) -> String {
    match e {
        Expr::Const(v) => render_literal(v),
        Expr::Bool(b) => b.to_string(),
        Expr::Var(name) => name.clone(),
        Expr::Cmp { op, lhs, rhs } => format!("{} {} {}", render_expr(lhs), op.symbol(), render_expr(rhs)),
        Expr::InSet { operand, set } => format!("{} IN {}", render_expr(operand), render_set(set)),
        Expr::Arith { op, lhs, rhs } => {
            // left-associative: only the right operand needs grouping at equal precedence
            let prec = arith_prec(*op);
            let l = match &**lhs {
                Expr::Arith { op: lop, .. } if arith_prec(*lop) < prec => format!("({})", render_expr(lhs)),
                _ => render_expr(lhs),
            };
            let r = match &**rhs {
                Expr::Arith { op: rop, .. } if arith_prec(*rop) <= prec => format!("({})", render_expr(rhs)),
                _ => render_expr(rhs),
            };
            format!("{l} {} {r}", op.symbol())
        }
        Expr::And(xs) => join_bool(xs, " AND "),
        Expr::Or(xs) => join_bool(xs, " OR "),
        Expr::Not(x) => format!("NOT {}", group(x)),
        Expr::Implies(a, b) => format!("{} IMPLIES {}", group(a), group(b)),
    }
}

fn arith_prec(op: ArithOp) -> u8 {
    match op {
        ArithOp::Add | ArithOp::Sub => 1,
        ArithOp::Mul | ArithOp::Div => 2,
    }
}

fn group(e: &Expr) -> String {
    match e {
        Expr::And(_) | Expr::Or(_) | Expr::Implies(..) | Expr::Not(_) => format!("({})", render_expr(e)),
        _ => render_expr(e),
    }
}

fn join_bool(xs: &[Expr], sep: &str) -> String {
    xs.iter().map(group).collect::<Vec<_>>().join(sep)
}
