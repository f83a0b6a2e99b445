use std::collections::{BTreeMap, HashSet};

use chrono::NaiveDate;
use thiserror::Error;

use super::types::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("undeclared variable `{0}`")]
    UndeclaredVariable(String),
    #[error("duplicate rule id `{0}`")]
    DuplicateRuleId(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("overlapping decision-table cases in `{rule}` on value {value}")]
    OverlappingCases { rule: String, value: String },
    #[error("type error: {0}")]
    Type(String),
    #[error("invalid date `{0}`")]
    InvalidDate(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Digits(String),
    Date(String),
    Str(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Arrow,
    Cmp(CmpOp),
    Plus,
    Minus,
    Star,
    Slash,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    col: usize,
}

fn err(line: usize, column: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, column, kind }
}

fn syntax(line: usize, column: usize, msg: impl Into<String>) -> ParseError {
    err(line, column, ParseErrorKind::Syntax(msg.into()))
}

fn lex(line_no: usize, text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        let single = match c {
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            ',' => Some(Tok::Comma),
            ':' => Some(Tok::Colon),
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '≠' => Some(Tok::Cmp(CmpOp::Ne)),
            '≤' => Some(Tok::Cmp(CmpOp::Le)),
            '≥' => Some(Tok::Cmp(CmpOp::Ge)),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Spanned { tok, col });
            i += 1;
            continue;
        }
        let next = chars.get(i + 1).copied();
        match c {
            '=' if next == Some('>') => {
                out.push(Spanned { tok: Tok::Arrow, col });
                i += 2;
            }
            '=' => {
                out.push(Spanned { tok: Tok::Cmp(CmpOp::Eq), col });
                i += 1;
            }
            '!' if next == Some('=') => {
                out.push(Spanned { tok: Tok::Cmp(CmpOp::Ne), col });
                i += 2;
            }
            '<' | '>' => {
                let (op, len) = match (c, next) {
                    ('<', Some('=')) => (CmpOp::Le, 2),
                    ('<', Some('>')) => (CmpOp::Ne, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', Some('=')) => (CmpOp::Ge, 2),
                    _ => (CmpOp::Gt, 1),
                };
                out.push(Spanned { tok: Tok::Cmp(op), col });
                i += len;
            }
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None => return Err(syntax(line_no, col, "unterminated string")),
                        Some('"') => break,
                        Some('\\') => {
                            match chars.get(j + 1) {
                                Some(&e @ ('"' | '\\')) => s.push(e),
                                _ => return Err(syntax(line_no, j + 1, "bad escape")),
                            }
                            j += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            j += 1;
                        }
                    }
                }
                out.push(Spanned { tok: Tok::Str(s), col });
                i = j + 1;
            }
            d if d.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                // YYYY-MM-DD
                let is_date = j - i == 4
                    && chars.len() >= j + 6
                    && chars[j] == '-'
                    && chars[j + 1..j + 3].iter().all(|c| c.is_ascii_digit())
                    && chars[j + 3] == '-'
                    && chars[j + 4..j + 6].iter().all(|c| c.is_ascii_digit())
                    && chars.get(j + 6).is_none_or(|c| !c.is_ascii_digit());
                if is_date {
                    out.push(Spanned {
                        tok: Tok::Date(chars[i..j + 6].iter().collect()),
                        col,
                    });
                    i = j + 6;
                } else {
                    out.push(Spanned {
                        tok: Tok::Digits(chars[i..j].iter().collect()),
                        col,
                    });
                    i = j;
                }
            }
            a if a.is_alphabetic() || a == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_' || chars[j] == '.') {
                    j += 1;
                }
                out.push(Spanned {
                    tok: Tok::Ident(chars[i..j].iter().collect()),
                    col,
                });
                i = j;
            }
            other => return Err(syntax(line_no, col, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

pub(crate) const KEYWORDS: &[&str] = &[
    "RULE", "FOR", "WHEN", "CHECK", "SEVERITY", "AGG", "SET", "BY", "CASE", "DEFAULT", "DUBIOUS",
    "VAR", "VERSION", "AND", "OR", "NOT", "IMPLIES", "IN",
];

struct LineParser<'a> {
    line: usize,
    toks: Vec<Spanned>,
    pos: usize,
    end_col: usize,
    schema: &'a BTreeMap<String, usize>,
}

impl<'a> LineParser<'a> {
    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        syntax(self.line, self.col(), msg)
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.at_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected `{kw}`")))
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error(format!("expected {what}"))),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos < self.toks.len() {
            Err(self.error("unexpected trailing input"))
        } else {
            Ok(())
        }
    }

    fn date(&self, s: &str, col: usize) -> Result<NaiveDate, ParseError> {
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map_err(|_| err(self.line, col, ParseErrorKind::InvalidDate(s.to_string())))
    }

    fn literal(&mut self) -> Result<VariableValue, ParseError> {
        let col = self.col();
        match self.bump() {
            Some(Tok::Digits(d)) => Ok(digits_value(&d, self.line, col)?),
            Some(Tok::Plus) => match self.bump() {
                Some(Tok::Digits(d)) => d
                    .parse()
                    .map(VariableValue::Integer)
                    .map_err(|_| syntax(self.line, col, "integer out of range")),
                _ => Err(syntax(self.line, col, "expected digits after `+`")),
            },
            Some(Tok::Minus) => match self.bump() {
                Some(Tok::Digits(d)) => format!("-{d}")
                    .parse()
                    .map(VariableValue::Integer)
                    .map_err(|_| syntax(self.line, col, "integer out of range")),
                _ => Err(syntax(self.line, col, "expected digits after `-`")),
            },
            Some(Tok::Date(s)) => Ok(VariableValue::Date(self.date(&s, col)?)),
            Some(Tok::Str(s)) => Ok(VariableValue::Text(s)),
            Some(Tok::Ident(s)) if s == "null" => Ok(VariableValue::Null),
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) && s != "true" && s != "false" => {
                Ok(VariableValue::Text(s))
            }
            _ => Err(syntax(self.line, col, "expected literal")),
        }
    }

    fn value_set(&mut self) -> Result<Vec<VariableValue>, ParseError> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut out = Vec::new();
        if self.peek() == Some(&Tok::RBrace) {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(self.literal()?);
            match self.bump() {
                Some(Tok::Comma) => continue,
                Some(Tok::RBrace) => break,
                _ => return Err(self.error("expected `,` or `}`")),
            }
        }
        Ok(out)
    }

    // expr := implies
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let col = self.col();
        let lhs = self.or_expr()?;
        if self.at_keyword("IMPLIES") {
            self.pos += 1;
            let rhs = self.expr()?;
            self.require_bool(&lhs, col)?;
            return Ok(Expr::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        self.nary("OR", Self::and_expr, Expr::Or)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        self.nary("AND", Self::not_expr, Expr::And)
    }

    fn nary(
        &mut self,
        kw: &str,
        sub: fn(&mut Self) -> Result<Expr, ParseError>,
        build: fn(Vec<Expr>) -> Expr,
    ) -> Result<Expr, ParseError> {
        let col = self.col();
        let first = sub(self)?;
        if !self.at_keyword(kw) {
            return Ok(first);
        }
        self.require_bool(&first, col)?;
        let mut items = vec![first];
        while self.at_keyword(kw) {
            self.pos += 1;
            let col = self.col();
            let next = sub(self)?;
            self.require_bool(&next, col)?;
            items.push(next);
        }
        Ok(build(items))
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.at_keyword("NOT") {
            self.pos += 1;
            let col = self.col();
            let inner = self.not_expr()?;
            self.require_bool(&inner, col)?;
            return Ok(Expr::Not(Box::new(inner)));
        }
        self.predicate()
    }

    fn predicate(&mut self) -> Result<Expr, ParseError> {
        // parenthesised boolean, or boolean constant
        if self.peek() == Some(&Tok::LParen) && self.paren_is_boolean() {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(e);
        }
        match self.peek() {
            Some(Tok::Ident(s)) if s == "true" || s == "false" => {
                let b = s == "true";
                self.pos += 1;
                return Ok(Expr::Bool(b));
            }
            _ => {}
        }
        let col = self.col();
        let lhs = self.additive()?;
        match self.peek().cloned() {
            Some(Tok::Cmp(op)) => {
                self.pos += 1;
                let rhs = self.additive()?;
                Ok(Expr::cmp(op, lhs, rhs))
            }
            Some(Tok::Ident(s)) if s == "IN" => {
                self.pos += 1;
                let set = self.value_set()?;
                Ok(Expr::in_set(lhs, set))
            }
            _ => Err(err(
                self.line,
                col,
                ParseErrorKind::Type("expected a comparison or IN predicate".into()),
            )),
        }
    }

    /// Decide whether the parenthesis at the cursor opens a boolean group or an
    /// arithmetic one by scanning to its matching close for boolean tokens.
    fn paren_is_boolean(&self) -> bool {
        let mut depth = 0usize;
        for t in &self.toks[self.pos..] {
            match &t.tok {
                Tok::LParen => depth += 1,
                Tok::RParen => {
                    depth -= 1;
                    if depth == 0 {
                        return false;
                    }
                }
                Tok::Cmp(_) => return true,
                Tok::Ident(s) if matches!(s.as_str(), "AND" | "OR" | "NOT" | "IMPLIES" | "IN" | "true" | "false") => {
                    return true
                }
                _ => {}
            }
        }
        false
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => ArithOp::Add,
                Some(Tok::Minus) => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.multiplicative()?;
            lhs = Expr::Arith {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.atom()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => ArithOp::Mul,
                Some(Tok::Slash) => ArithOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.atom()?;
            lhs = Expr::Arith {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.additive()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(s)) if s != "null" && !KEYWORDS.contains(&s.as_str()) => {
                if s == "true" || s == "false" {
                    return Err(err(self.line, col, ParseErrorKind::Type("boolean used as operand".into())));
                }
                self.pos += 1;
                if !self.schema.contains_key(&s) {
                    return Err(err(self.line, col, ParseErrorKind::UndeclaredVariable(s)));
                }
                Ok(Expr::Var(s))
            }
            _ => Ok(Expr::Const(self.literal()?)),
        }
    }

    fn require_bool(&self, e: &Expr, col: usize) -> Result<(), ParseError> {
        if e.is_boolean() {
            Ok(())
        } else {
            Err(err(self.line, col, ParseErrorKind::Type("boolean operand expected".into())))
        }
    }

    fn bool_expr(&mut self) -> Result<Expr, ParseError> {
        let col = self.col();
        let e = self.expr()?;
        self.require_bool(&e, col)?;
        Ok(e)
    }
}

fn digits_value(d: &str, line: usize, col: usize) -> Result<VariableValue, ParseError> {
    if d.len() <= 4 {
        Ok(VariableValue::Code(d.to_string()))
    } else {
        d.parse()
            .map(VariableValue::Integer)
            .map_err(|_| syntax(line, col, "integer out of range"))
    }
}

/// Parse a `.rules` document into a rule-set version.
pub fn parse_rule_set(document: &str) -> Result<RuleSetVersion, ParseError> {
    let mut rs = RuleSetVersion::empty("");
    let mut declared: BTreeMap<String, usize> = BTreeMap::new();
    let mut ids: HashSet<String> = HashSet::new();
    let mut seen_rule = false;
    let mut seen_version = false;

    for (idx, raw) in document.lines().enumerate() {
        let line = idx + 1;
        let toks = lex(line, raw)?;
        if toks.is_empty() {
            continue;
        }
        let first_col = toks[0].col;
        let head = match &toks[0].tok {
            Tok::Ident(s) => s.clone(),
            _ => return Err(syntax(line, first_col, "expected a statement keyword")),
        };
        let mut p = LineParser {
            line,
            toks,
            pos: 1,
            end_col: raw.chars().count() + 1,
            schema: &declared,
        };
        match head.as_str() {
            "VERSION" => {
                if seen_version || seen_rule || !declared.is_empty() {
                    return Err(syntax(line, first_col, "VERSION must be the first statement"));
                }
                seen_version = true;
                let id = match p.bump() {
                    Some(Tok::Ident(s)) => s,
                    Some(Tok::Digits(s)) => s,
                    _ => return Err(p.error("expected version id")),
                };
                rs.version_id = id;
                if let Some(Tok::Date(_)) = p.peek() {
                    let col = p.col();
                    if let Some(Tok::Date(s)) = p.bump() {
                        rs.date = Some(p.date(&s, col)?);
                    }
                }
                p.finish()?;
            }
            "VAR" => {
                if seen_rule {
                    return Err(syntax(line, first_col, "VAR declarations must precede rules"));
                }
                let name_col = p.col();
                let name = p.ident("variable name")?;
                p.expect(Tok::Colon, "`:`")?;
                let kind_col = p.col();
                let kind = match p.ident("value kind")?.as_str() {
                    "code" => ValueKind::Code,
                    "integer" => ValueKind::Integer,
                    "date" => ValueKind::Date,
                    "text" => ValueKind::Text,
                    other => return Err(syntax(line, kind_col, format!("unknown kind `{other}`"))),
                };
                let domain = parse_domain(&mut p, kind)?;
                p.finish()?;
                if declared.contains_key(&name) {
                    return Err(err(line, name_col, ParseErrorKind::DuplicateVariable(name)));
                }
                declared.insert(name.clone(), rs.schema.len());
                rs.schema.push(VarDecl { name, kind, domain });
            }
            "RULE" => {
                seen_rule = true;
                let id_col = p.col();
                let id = p.ident("rule id")?;
                p.expect_keyword("FOR")?;
                let mut types = Vec::new();
                loop {
                    match p.bump() {
                        Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => types.push(s),
                        Some(Tok::Str(s)) => types.push(s),
                        _ => return Err(syntax(line, p.col(), "expected message type")),
                    }
                    if p.peek() == Some(&Tok::Comma) {
                        p.pos += 1;
                    } else {
                        break;
                    }
                }
                p.expect_keyword("WHEN")?;
                let guard = p.bool_expr()?;
                p.expect_keyword("CHECK")?;
                let check = p.bool_expr()?;
                let mut severity = Severity::Fail;
                if p.at_keyword("SEVERITY") {
                    p.pos += 1;
                    let col = p.col();
                    severity = match p.ident("severity")?.as_str() {
                        "fail" => Severity::Fail,
                        "warning" => Severity::Warning,
                        other => return Err(syntax(line, col, format!("unknown severity `{other}`"))),
                    };
                }
                p.finish()?;
                if !ids.insert(id.clone()) {
                    return Err(err(line, id_col, ParseErrorKind::DuplicateRuleId(id)));
                }
                rs.validation_rules.push(ValidationRule {
                    id,
                    message_types: types,
                    guard,
                    check,
                    severity,
                });
            }
            "AGG" => {
                seen_rule = true;
                let id_col = p.col();
                let id = p.ident("rule id")?;
                p.expect_keyword("SET")?;
                let target_field = p.ident("target field")?;
                p.expect_keyword("BY")?;
                let input_col = p.col();
                let input_var = p.ident("input variable")?;
                if !declared.contains_key(&input_var) {
                    return Err(err(line, input_col, ParseErrorKind::UndeclaredVariable(input_var)));
                }
                let mut cases = Vec::new();
                let mut seen_keys = BTreeMap::new();
                while p.at_keyword("CASE") {
                    p.pos += 1;
                    let set_col = p.col();
                    let values = p.value_set()?;
                    for v in &values {
                        if seen_keys.insert(v.match_key(), ()).is_some() {
                            return Err(err(
                                line,
                                set_col,
                                ParseErrorKind::OverlappingCases {
                                    rule: id.clone(),
                                    value: v.to_string(),
                                },
                            ));
                        }
                    }
                    p.expect(Tok::Arrow, "`=>`")?;
                    let output = p.literal()?;
                    cases.push(AggregationCase { values, output });
                }
                p.expect_keyword("DEFAULT")?;
                let default = p.literal()?;
                let mut dubious_sets = Vec::new();
                while p.at_keyword("DUBIOUS") {
                    p.pos += 1;
                    dubious_sets.push(p.value_set()?);
                }
                p.finish()?;
                if !ids.insert(id.clone()) {
                    return Err(err(line, id_col, ParseErrorKind::DuplicateRuleId(id)));
                }
                rs.aggregation_rules.push(AggregationRule {
                    id,
                    target_field,
                    input_var,
                    cases,
                    default,
                    dubious_sets,
                });
            }
            other => {
                return Err(syntax(line, first_col, format!("unknown statement `{other}`")));
            }
        }
    }
    Ok(rs)
}

fn parse_domain(p: &mut LineParser<'_>, kind: ValueKind) -> Result<Domain, ParseError> {
    match p.peek() {
        None => Ok(Domain::Unbounded),
        Some(Tok::LBrace) => {
            let col = p.col();
            let values = p.value_set()?;
            let values = values
                .into_iter()
                .map(|v| coerce_to_kind(v, kind).ok_or_else(|| err(p.line, col, ParseErrorKind::Type(format!("set element does not match kind {}", kind.name())))))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Domain::Set(values))
        }
        Some(Tok::LBracket) => {
            p.pos += 1;
            let col = p.col();
            let lo = p.literal()?;
            p.expect(Tok::Comma, "`,`")?;
            let hi = p.literal()?;
            p.expect(Tok::RBracket, "`]`")?;
            let bad = || err(p.line, col, ParseErrorKind::Type(format!("bad range for kind {}", kind.name())));
            match kind {
                ValueKind::Integer => {
                    let (min, max) = (lo.as_integer().ok_or_else(bad)?, hi.as_integer().ok_or_else(bad)?);
                    if min > max {
                        return Err(bad());
                    }
                    Ok(Domain::IntRange { min, max })
                }
                ValueKind::Code => match (&lo, &hi) {
                    (VariableValue::Code(a), VariableValue::Code(b)) if a.len() == b.len() => {
                        let (min, max): (u32, u32) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                        if min > max {
                            return Err(bad());
                        }
                        Ok(Domain::CodeRange { min, max, width: a.len() })
                    }
                    _ => Err(bad()),
                },
                ValueKind::Date => match (lo, hi) {
                    (VariableValue::Date(min), VariableValue::Date(max)) if min <= max => {
                        Ok(Domain::DateRange { min, max })
                    }
                    _ => Err(bad()),
                },
                ValueKind::Text => Err(bad()),
            }
        }
        _ => Err(p.error("expected `{`, `[` or end of line")),
    }
}

fn coerce_to_kind(v: VariableValue, kind: ValueKind) -> Option<VariableValue> {
    match (kind, v) {
        (ValueKind::Code, v @ VariableValue::Code(_)) => Some(v),
        (ValueKind::Integer, v) => v.as_integer().map(VariableValue::Integer),
        (ValueKind::Date, v @ VariableValue::Date(_)) => Some(v),
        (ValueKind::Text, v @ VariableValue::Text(_)) => Some(v),
        (ValueKind::Text, VariableValue::Code(s)) => Some(VariableValue::Text(s)),
        _ => None,
    }
}
