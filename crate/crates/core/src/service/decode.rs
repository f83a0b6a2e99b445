//! Lenient request decoding: values are typed according to the declared
//! variable kind when they can be, and kept as text otherwise, so that
//! schema-violating inputs reach the rules. Dates are the exception: a date
//! field that is present but unparseable aborts the request.

use chrono::NaiveDate;
use serde_json::Value;

use crate::dsl::{RuleSetVersion, ValueKind, VariableValue};
use crate::engine::{CancerCase, CancerMessage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    /// Structurally unusable body (client error).
    BadRequest(String),
    /// A date field could not be parsed.
    DateParse { field: String, raw: String },
}

pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    // strict ISO-8601 calendar date, four-digit year
    let b = raw.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return None;
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").ok()
}

pub fn decode_value(kind: Option<ValueKind>, field: &str, v: &Value) -> Result<VariableValue, DecodeError> {
    if v.is_null() {
        return Ok(VariableValue::Null);
    }
    Ok(match kind {
        Some(ValueKind::Date) => {
            let raw = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            match parse_date(&raw) {
                Some(d) => VariableValue::Date(d),
                None => return Err(DecodeError::DateParse { field: field.to_string(), raw }),
            }
        }
        Some(ValueKind::Code) => match v {
            Value::String(s) if crate::dsl::is_code_literal(s) => VariableValue::Code(s.clone()),
            Value::Number(n) => match n.as_i64() {
                Some(i) if (0..=9999).contains(&i) => VariableValue::Code(i.to_string()),
                Some(i) => VariableValue::Integer(i),
                None => VariableValue::Text(n.to_string()),
            },
            Value::String(s) => VariableValue::Text(s.clone()),
            other => VariableValue::Text(other.to_string()),
        },
        Some(ValueKind::Integer) => match v {
            Value::Number(n) => match n.as_i64() {
                Some(i) => VariableValue::Integer(i),
                None => VariableValue::Text(n.to_string()),
            },
            Value::String(s) => match crate::dsl::parse_strict_integer(s) {
                Some(i) => VariableValue::Integer(i),
                None => VariableValue::Text(s.clone()),
            },
            other => VariableValue::Text(other.to_string()),
        },
        Some(ValueKind::Text) | None => match v {
            Value::String(s) => VariableValue::Text(s.clone()),
            other => VariableValue::Text(other.to_string()),
        },
    })
}

/// Decode a message object; variables absent from the schema are ignored.
pub fn decode_message(rs: &RuleSetVersion, v: &Value) -> Result<CancerMessage, DecodeError> {
    let Value::Object(map) = v else {
        return Err(DecodeError::BadRequest("message must be an object".into()));
    };
    let mut msg = CancerMessage::default();
    for decl in &rs.schema {
        if let Some(raw) = map.get(&decl.name) {
            let value = decode_value(Some(decl.kind), &decl.name, raw)?;
            msg.variables.insert(decl.name.clone(), value);
        }
    }
    Ok(msg)
}

pub fn decode_case(rs: &RuleSetVersion, v: &Value) -> Result<CancerCase, DecodeError> {
    let Value::Object(map) = v else {
        return Err(DecodeError::BadRequest("previousCase must be an object".into()));
    };
    let case_id = match map.get("caseId") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    };
    let source_message_count = map.get("sourceMessageCount").and_then(Value::as_u64).unwrap_or(0);
    let mut aggregated_fields = std::collections::BTreeMap::new();
    if let Some(Value::Object(fields)) = map.get("aggregatedFields") {
        for (k, raw) in fields {
            let kind = rs.variable(k).map(|d| d.kind).or(Some(ValueKind::Text));
            aggregated_fields.insert(k.clone(), decode_value(kind, k, raw)?);
        }
    }
    Ok(CancerCase {
        case_id,
        aggregated_fields,
        source_message_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn strict_dates() {
        assert!(parse_date("2020-02-29").is_some());
        assert!(parse_date("2020-13-45").is_none());
        assert!(parse_date("").is_none());
        assert!(parse_date("2020-2-3").is_none());
        assert!(parse_date("20200-01-01").is_none());
    }

    #[test]
    fn codes_and_integers_are_lenient() {
        assert_eq!(decode_value(Some(ValueKind::Code), "b", &json!("32")).unwrap(), VariableValue::code("32"));
        assert_eq!(decode_value(Some(ValueKind::Code), "b", &json!(32)).unwrap(), VariableValue::code("32"));
        assert_eq!(decode_value(Some(ValueKind::Code), "b", &json!("")).unwrap(), VariableValue::text(""));
        assert_eq!(
            decode_value(Some(ValueKind::Integer), "n", &json!(1_000_000_000_000i64)).unwrap(),
            VariableValue::Integer(1_000_000_000_000)
        );
        assert_eq!(decode_value(Some(ValueKind::Integer), "n", &json!("x")).unwrap(), VariableValue::text("x"));
    }

    #[test]
    fn malformed_date_is_an_error() {
        let e = decode_value(Some(ValueKind::Date), "diagnosisDate", &json!("2020-13-45")).unwrap_err();
        assert!(matches!(e, DecodeError::DateParse { .. }));
    }
}
