use std::collections::HashMap;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{Map, Value};

use super::{EndpointFocus, Request};
use crate::service::{parse_date, ApiSchema, EndpointSpec, SchemaNode};

/// Unparseable date strings used for pathological date fields.
pub const MALFORMED_DATES: [&str; 4] = ["", "2020-13-45", "31/12/2020", "2020-02-30"];

const HUGE_INTEGER: i64 = 1_000_000_000_000;
const OPTIONAL_P: f64 = 0.95;
/// Optional object property that makes aggregation stateful; sampled rarely.
const PREVIOUS_CASE: &str = "previousCase";
const PREVIOUS_CASE_P: f64 = 0.3;
const BOUNDARY_P: f64 = 0.2;
const ALNUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

fn date_bounds() -> (NaiveDate, NaiveDate) {
    (
        NaiveDate::from_ymd_opt(1990, 1, 1).expect("valid date"),
        NaiveDate::from_ymd_opt(2030, 12, 31).expect("valid date"),
    )
}

/// `(min, max)` digit counts of a `^[0-9]{m,n}$` pattern.
pub(crate) fn digit_pattern(pattern: &str) -> Option<(usize, usize)> {
    let inner = pattern.strip_prefix("^[0-9]{")?.strip_suffix("}$")?;
    let (a, b) = inner.split_once(',').unwrap_or((inner, inner));
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

pub(crate) fn is_date_node(node: &SchemaNode) -> bool {
    matches!(node, SchemaNode::String { format: Some(f), .. } if f == "date")
}

/// Draws requests from an API schema.
#[derive(Debug, Clone)]
pub struct Sampler {
    endpoints: Vec<EndpointSpec>,
    by_key: HashMap<String, usize>,
    valid_bias: f64,
}

impl Sampler {
    pub fn new(schema: &ApiSchema, valid_bias: f64) -> Self {
        Sampler::focused(schema, valid_bias, EndpointFocus::All)
    }

    /// A sampler restricted to the endpoints under test.
    pub fn focused(schema: &ApiSchema, valid_bias: f64, focus: EndpointFocus) -> Self {
        let endpoints: Vec<EndpointSpec> = match focus {
            EndpointFocus::All => schema.endpoints.clone(),
            EndpointFocus::RuleHandling => schema.rule_handling().cloned().collect(),
        };
        let by_key = endpoints.iter().enumerate().map(|(i, e)| (e.key(), i)).collect();
        Sampler {
            endpoints,
            by_key,
            valid_bias: valid_bias.clamp(0.0, 1.0),
        }
    }

    pub fn endpoints(&self) -> &[EndpointSpec] {
        &self.endpoints
    }

    pub fn endpoint(&self, key: &str) -> Option<&EndpointSpec> {
        self.by_key.get(key).map(|&i| &self.endpoints[i])
    }

    pub fn valid_bias(&self) -> f64 {
        self.valid_bias
    }

    /// Uniformly chosen endpoint with a sampled body.
    pub fn sample(&self, rng: &mut impl Rng) -> Request {
        let i = rng.gen_range(0..self.endpoints.len());
        self.sample_for(i, rng)
    }

    pub fn sample_for(&self, endpoint: usize, rng: &mut impl Rng) -> Request {
        let e = &self.endpoints[endpoint];
        let path = concrete_path(&e.path, rng);
        let body = e.request_body.as_ref().map(|node| self.structured(node, rng));
        Request {
            method: e.method.clone(),
            template: e.path.clone(),
            path,
            body,
        }
    }

    pub(crate) fn structured(&self, node: &SchemaNode, rng: &mut impl Rng) -> Value {
        match node {
            SchemaNode::Object { properties, required } => {
                let mut map = Map::new();
                for p in properties {
                    let include = required.contains(&p.name)
                        || rng.gen_bool(if p.name == PREVIOUS_CASE { PREVIOUS_CASE_P } else { OPTIONAL_P });
                    if !include {
                        continue;
                    }
                    let v = match &p.schema {
                        inner @ (SchemaNode::Object { .. } | SchemaNode::Array { .. }) => Some(self.structured(inner, rng)),
                        leaf => self.leaf(leaf, rng),
                    };
                    if let Some(v) = v {
                        map.insert(p.name.clone(), v);
                    }
                }
                Value::Object(map)
            }
            SchemaNode::Array { items, min_items, max_items } => {
                let n = rng.gen_range(*min_items..=(*max_items).max(*min_items));
                Value::Array((0..n).map(|_| self.structured(items, rng)).collect())
            }
            leaf => self.leaf(leaf, rng).unwrap_or(Value::Null),
        }
    }

    /// A leaf value, or `None` for a missing field.
    fn leaf(&self, node: &SchemaNode, rng: &mut impl Rng) -> Option<Value> {
        if rng.gen::<f64>() >= self.valid_bias {
            return Some(pathological(node, rng)).filter(|v| !v.is_null());
        }
        Some(valid_leaf(node, rng))
    }
}

fn pathological(node: &SchemaNode, rng: &mut impl Rng) -> Value {
    if is_date_node(node) {
        return Value::from(*MALFORMED_DATES.choose(rng).expect("non-empty pool"));
    }
    match rng.gen_range(0..4) {
        0 => Value::from(""),
        1 => Value::from(HUGE_INTEGER),
        2 => Value::Null, // missing
        _ => Value::from(MALFORMED_DATES[1]),
    }
}

/// A value drawn from the node's declared kind and range.
pub(crate) fn valid_leaf(node: &SchemaNode, rng: &mut impl Rng) -> Value {
    match node {
        SchemaNode::Integer { minimum, maximum } => {
            if rng.gen_bool(BOUNDARY_P) {
                Value::from(if rng.gen_bool(0.5) { *minimum } else { *maximum })
            } else {
                Value::from(rng.gen_range(*minimum..=*maximum))
            }
        }
        SchemaNode::String { values: Some(values), .. } if !values.is_empty() => {
            Value::from(values.choose(rng).expect("non-empty enum").clone())
        }
        SchemaNode::String { pattern: Some(p), .. } if digit_pattern(p).is_some() => {
            let (lo, hi) = digit_pattern(p).expect("checked");
            let len = rng.gen_range(lo.max(1)..=hi.max(lo.max(1)));
            Value::from((0..len).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect::<String>())
        }
        s if is_date_node(s) => {
            let (lo, hi) = date_bounds();
            let d = lo + Duration::days(rng.gen_range(0..=(hi - lo).num_days()));
            Value::from(d.format("%Y-%m-%d").to_string())
        }
        SchemaNode::String { .. } => {
            let len = rng.gen_range(1..=6);
            Value::from(
                (0..len)
                    .map(|_| char::from(*ALNUM.choose(rng).expect("non-empty alphabet")))
                    .collect::<String>(),
            )
        }
        SchemaNode::Object { .. } | SchemaNode::Array { .. } => Value::Null,
    }
}

pub(crate) fn concrete_path(template: &str, rng: &mut impl Rng) -> String {
    template
        .split('/')
        .map(|seg| {
            if seg.starts_with('{') {
                rng.gen_range(1..=1000u32).to_string()
            } else {
                seg.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("/")
}

/// Draw one request: uniform endpoint, each leaf valid with probability
/// `valid_bias`, pathological otherwise.
pub fn sample_random_request(schema: &ApiSchema, rng: &mut impl Rng, valid_bias: f64) -> Request {
    Sampler::new(schema, valid_bias).sample(rng)
}

/// Whether a JSON value satisfies a schema node.
pub fn conforms(node: &SchemaNode, v: &Value) -> bool {
    match (node, v) {
        (SchemaNode::Object { properties, required }, Value::Object(map)) => {
            required.iter().all(|r| map.contains_key(r))
                && map.iter().all(|(k, v)| {
                    properties
                        .iter()
                        .find(|p| &p.name == k)
                        .is_some_and(|p| conforms(&p.schema, v))
                })
        }
        (SchemaNode::Array { items, min_items, max_items }, Value::Array(xs)) => {
            (*min_items..=*max_items).contains(&xs.len()) && xs.iter().all(|x| conforms(items, x))
        }
        (SchemaNode::Integer { minimum, maximum }, Value::Number(n)) => {
            n.as_i64().is_some_and(|i| (*minimum..=*maximum).contains(&i))
        }
        (SchemaNode::String { pattern, format, values }, Value::String(s)) => {
            let pattern_ok = match pattern.as_deref().and_then(digit_pattern) {
                Some((lo, hi)) => (lo..=hi).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_digit()),
                None => true,
            };
            let format_ok = format.as_deref() != Some("date") || parse_date(s).is_some();
            let enum_ok = values.as_ref().is_none_or(|vs| vs.contains(s));
            pattern_ok && format_ok && enum_ok
        }
        _ => false,
    }
}

/// Whether the request targets a declared endpoint with a conforming body.
pub fn request_conforms(schema: &ApiSchema, req: &Request) -> bool {
    let Some(e) = schema.endpoint(&req.method, &req.path) else { return false };
    if e.path != req.template {
        return false;
    }
    match (&e.request_body, &req.body) {
        (Some(node), Some(body)) => conforms(node, body),
        (None, None) => true,
        _ => false,
    }
}
