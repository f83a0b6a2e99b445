use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// A value carried by a message variable, a case field or a rule literal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum VariableValue {
    /// Classification code, a string of one to four digits. Leading zeros matter.
    Code(String),
    Integer(i64),
    Date(NaiveDate),
    Text(String),
    Null,
}

impl VariableValue {
    pub fn code(s: impl Into<String>) -> Self {
        VariableValue::Code(s.into())
    }

    pub fn text(s: impl Into<String>) -> Self {
        VariableValue::Text(s.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, VariableValue::Null)
    }

    /// Integer view used by the numeric comparison coercion. Codes and text are
    /// coercible when they consist of an optional sign and digits only.
    pub fn as_integer(&self) -> Option<i64> {
        match self {
            VariableValue::Integer(i) => Some(*i),
            VariableValue::Code(s) | VariableValue::Text(s) => parse_strict_integer(s),
            _ => None,
        }
    }

    /// Key used for set membership and decision-table disjointness: numerically
    /// coercible values compare as integers, everything else by its rendering.
    pub fn match_key(&self) -> MatchKey {
        match self {
            VariableValue::Null => MatchKey::Null,
            VariableValue::Date(d) => MatchKey::Date(*d),
            other => match other.as_integer() {
                Some(i) => MatchKey::Int(i),
                None => MatchKey::Str(other.to_string()),
            },
        }
    }
}

pub(crate) fn parse_strict_integer(s: &str) -> Option<i64> {
    let digits = s.strip_prefix(['-', '+']).unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse::<i64>().ok()
}

pub(crate) fn is_code_literal(s: &str) -> bool {
    (1..=4).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_digit())
}

impl fmt::Display for VariableValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariableValue::Code(s) | VariableValue::Text(s) => f.write_str(s),
            VariableValue::Integer(i) => write!(f, "{i}"),
            VariableValue::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            VariableValue::Null => f.write_str("null"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MatchKey {
    Null,
    Int(i64),
    Date(NaiveDate),
    Str(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
        }
    }

    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

/// Rule expression tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Const(VariableValue),
    Bool(bool),
    Var(String),
    Cmp {
        op: CmpOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    InSet {
        operand: Box<Expr>,
        set: Vec<VariableValue>,
    },
    Arith {
        op: ArithOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Not(Box<Expr>),
    Implies(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn cmp(op: CmpOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Cmp {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn in_set(operand: Expr, set: Vec<VariableValue>) -> Expr {
        Expr::InSet {
            operand: Box::new(operand),
            set,
        }
    }

    /// True for nodes that yield a boolean.
    pub fn is_boolean(&self) -> bool {
        matches!(
            self,
            Expr::Bool(_)
                | Expr::Cmp { .. }
                | Expr::InSet { .. }
                | Expr::And(_)
                | Expr::Or(_)
                | Expr::Not(_)
                | Expr::Implies(..)
        )
    }

    /// True for leaf-typed operands: constants, variable references and arithmetic over them.
    pub fn is_operand(&self) -> bool {
        matches!(self, Expr::Const(_) | Expr::Var(_) | Expr::Arith { .. })
    }

    /// Children in evaluation order.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Bool(_) | Expr::Var(_) => Vec::new(),
            Expr::Cmp { lhs, rhs, .. } | Expr::Arith { lhs, rhs, .. } => vec![lhs, rhs],
            Expr::InSet { operand, .. } => vec![operand],
            Expr::And(xs) | Expr::Or(xs) => xs.iter().collect(),
            Expr::Not(x) => vec![x],
            Expr::Implies(a, b) => vec![a, b],
        }
    }

    /// Number of nodes in the tree, used for preorder node numbering.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self
            .children()
            .iter()
            .map(|c| c.depth())
            .max()
            .unwrap_or(0)
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables(&self, out: &mut BTreeSet<String>) {
        if let Expr::Var(name) = self {
            out.insert(name.clone());
        }
        for c in self.children() {
            c.collect_variables(out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    #[default]
    Fail,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationRule {
    pub id: String,
    /// Message types the rule is scoped to.
    pub message_types: Vec<String>,
    pub guard: Expr,
    pub check: Expr,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationCase {
    pub values: Vec<VariableValue>,
    pub output: VariableValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationRule {
    pub id: String,
    pub target_field: String,
    pub input_var: String,
    pub cases: Vec<AggregationCase>,
    pub default: VariableValue,
    pub dubious_sets: Vec<Vec<VariableValue>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Code,
    Integer,
    Date,
    Text,
}

impl ValueKind {
    pub fn name(self) -> &'static str {
        match self {
            ValueKind::Code => "code",
            ValueKind::Integer => "integer",
            ValueKind::Date => "date",
            ValueKind::Text => "text",
        }
    }
}

/// Allowed values of a declared variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Unbounded,
    Set(Vec<VariableValue>),
    IntRange { min: i64, max: i64 },
    /// Fixed-width digit strings between `min` and `max` inclusive.
    CodeRange { min: u32, max: u32, width: usize },
    DateRange { min: NaiveDate, max: NaiveDate },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarDecl {
    pub name: String,
    pub kind: ValueKind,
    pub domain: Domain,
}

impl VarDecl {
    /// Finite list of allowed values, when the domain is enumerable.
    pub fn enumerate(&self) -> Option<Vec<VariableValue>> {
        match &self.domain {
            Domain::Unbounded => None,
            Domain::Set(values) => Some(values.clone()),
            Domain::IntRange { min, max } => {
                Some((*min..=*max).map(VariableValue::Integer).collect())
            }
            Domain::CodeRange { min, max, width } => Some(
                (*min..=*max)
                    .map(|c| VariableValue::Code(format!("{c:0width$}", width = *width)))
                    .collect(),
            ),
            Domain::DateRange { min, max } => {
                Some(min.iter_days().take_while(|d| d <= max).map(VariableValue::Date).collect())
            }
        }
    }

    pub fn domain_size(&self) -> Option<u64> {
        match &self.domain {
            Domain::Unbounded => None,
            Domain::Set(values) => Some(values.len() as u64),
            Domain::IntRange { min, max } => Some((max - min + 1).max(0) as u64),
            Domain::CodeRange { min, max, .. } => Some(u64::from(max.saturating_sub(*min)) + 1),
            Domain::DateRange { min, max } => Some(((*max - *min).num_days() + 1).max(0) as u64),
        }
    }

    /// Whether `value` conforms to this declaration.
    pub fn admits(&self, value: &VariableValue) -> bool {
        let kind_ok = match (self.kind, value) {
            (ValueKind::Code, VariableValue::Code(s)) => is_code_literal(s),
            (ValueKind::Integer, VariableValue::Integer(_)) => true,
            (ValueKind::Date, VariableValue::Date(_)) => true,
            (ValueKind::Text, VariableValue::Text(_)) => true,
            _ => false,
        };
        if !kind_ok {
            return false;
        }
        match (&self.domain, value) {
            (Domain::Unbounded, _) => true,
            (Domain::Set(values), v) => values.contains(v),
            (Domain::IntRange { min, max }, VariableValue::Integer(i)) => (min..=max).contains(&i),
            (Domain::CodeRange { min, max, width }, VariableValue::Code(s)) => {
                s.len() == *width
                    && s.parse::<u32>().is_ok_and(|c| (*min..=*max).contains(&c))
            }
            (Domain::DateRange { min, max }, VariableValue::Date(d)) => (min..=max).contains(&d),
            _ => false,
        }
    }
}

/// One version of the rule base: schema plus validation and aggregation rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSetVersion {
    pub version_id: String,
    pub date: Option<NaiveDate>,
    pub schema: Vec<VarDecl>,
    pub validation_rules: Vec<ValidationRule>,
    pub aggregation_rules: Vec<AggregationRule>,
}

impl RuleSetVersion {
    pub fn empty(version_id: impl Into<String>) -> Self {
        RuleSetVersion {
            version_id: version_id.into(),
            date: None,
            schema: Vec::new(),
            validation_rules: Vec::new(),
            aggregation_rules: Vec::new(),
        }
    }

    pub fn variable(&self, name: &str) -> Option<&VarDecl> {
        self.schema.iter().find(|v| v.name == name)
    }

    pub fn rule_counts(&self) -> (usize, usize) {
        (self.validation_rules.len(), self.aggregation_rules.len())
    }

    pub fn rule_ids(&self, ty: RuleType) -> Vec<&str> {
        match ty {
            RuleType::Validation => self.validation_rules.iter().map(|r| r.id.as_str()).collect(),
            RuleType::Aggregation => self.aggregation_rules.iter().map(|r| r.id.as_str()).collect(),
        }
    }

    pub fn rule_type_of(&self, id: &str) -> Option<RuleType> {
        if self.validation_rules.iter().any(|r| r.id == id) {
            Some(RuleType::Validation)
        } else if self.aggregation_rules.iter().any(|r| r.id == id) {
            Some(RuleType::Aggregation)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleType {
    Validation,
    Aggregation,
}

impl RuleType {
    pub const ALL: [RuleType; 2] = [RuleType::Validation, RuleType::Aggregation];

    pub fn name(self) -> &'static str {
        match self {
            RuleType::Validation => "validation",
            RuleType::Aggregation => "aggregation",
        }
    }
}

/// Rule ids added, removed and modified between two versions, per rule type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleIdChanges {
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub modified: Vec<String>,
}

impl RuleIdChanges {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSetDiff {
    pub validation: RuleIdChanges,
    pub aggregation: RuleIdChanges,
}

impl RuleSetDiff {
    pub fn is_empty(&self) -> bool {
        self.validation.is_empty() && self.aggregation.is_empty()
    }

    pub fn for_type(&self, ty: RuleType) -> &RuleIdChanges {
        match ty {
            RuleType::Validation => &self.validation,
            RuleType::Aggregation => &self.aggregation,
        }
    }
}
