use chrono::{Duration, Months};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{Map, Value};

use super::sampler::{digit_pattern, is_date_node, valid_leaf, Sampler};
use super::{Request, TestCase};
use crate::service::{parse_date, SchemaNode, AGGREGATE_PATH, VALIDATE_PATH};

/// Lineage entries kept per test; older ones are dropped after the origin.
const LINEAGE_LIMIT: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DateUnit {
    Day,
    Month,
    Year,
}

/// A single, fully determined edit of a request.
#[derive(Debug, Clone, PartialEq)]
pub enum Mutation {
    /// Add `delta` to an integer, or to a digit code keeping its width.
    Nudge { pointer: String, delta: i64 },
    /// Set an integer to its declared bound, or a code to all-0/all-9 digits.
    Boundary { pointer: String, max: bool },
    /// Replace a code by another of the same width, or an enum value by another.
    Swap { pointer: String, value: Value },
    DateShift { pointer: String, unit: DateUnit, amount: i32 },
    Drop { pointer: String },
    Add { pointer: String, value: Value },
    EndpointSwap { method: String, template: String, path: String, body: Option<Value> },
}

fn split_pointer(pointer: &str) -> (&str, &str) {
    pointer.rsplit_once('/').unwrap_or(("", pointer))
}

fn digits_with_width(n: i64, width: usize) -> String {
    let max = 10i64.pow(width as u32) - 1;
    format!("{:0width$}", n.clamp(0, max), width = width)
}

fn shift_date(s: &str, unit: DateUnit, amount: i32) -> Option<String> {
    let d = parse_date(s)?;
    let months = |n: i32| Months::new(n.unsigned_abs());
    let shifted = match (unit, amount >= 0) {
        (DateUnit::Day, _) => d.checked_add_signed(Duration::days(i64::from(amount))),
        (DateUnit::Month, true) => d.checked_add_months(months(amount)),
        (DateUnit::Month, false) => d.checked_sub_months(months(amount)),
        (DateUnit::Year, true) => d.checked_add_months(months(amount * 12)),
        (DateUnit::Year, false) => d.checked_sub_months(months(amount * 12)),
    }?;
    Some(shifted.format("%Y-%m-%d").to_string())
}

impl Mutation {
    pub fn label(&self) -> String {
        match self {
            Mutation::Nudge { pointer, delta } => format!("nudge {pointer} {delta:+}"),
            Mutation::Boundary { pointer, max } => format!("boundary {pointer} {}", if *max { "max" } else { "min" }),
            Mutation::Swap { pointer, value } => format!("swap {pointer} {value}"),
            Mutation::DateShift { pointer, unit, amount } => format!("date-shift {pointer} {amount:+} {unit:?}"),
            Mutation::Drop { pointer } => format!("drop {pointer}"),
            Mutation::Add { pointer, .. } => format!("add {pointer}"),
            Mutation::EndpointSwap { method, template, .. } => format!("endpoint-swap {method} {template}"),
        }
    }

    /// Apply to a request whose body follows `schema` (the endpoint's body
    /// schema). Edits addressing absent locations leave the request unchanged.
    pub fn apply(&self, req: &Request, schema: Option<&SchemaNode>) -> Request {
        let mut out = req.clone();
        if let Mutation::EndpointSwap { method, template, path, body } = self {
            out.method = method.clone();
            out.template = template.clone();
            out.path = path.clone();
            out.body = body.clone();
            return out;
        }
        let Some(body) = out.body.as_mut() else { return out };
        match self {
            Mutation::Nudge { pointer, delta } => {
                let node = schema.and_then(|s| node_at(s, pointer));
                if let Some(v) = body.pointer_mut(pointer) {
                    *v = match (&*v, node) {
                        (Value::String(s), _) if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) => {
                            let n: i64 = s.parse().unwrap_or(0);
                            Value::from(digits_with_width(n.saturating_add(*delta), s.len()))
                        }
                        (Value::Number(n), _) => match n.as_i64() {
                            Some(i) => Value::from(i.saturating_add(*delta)),
                            None => v.clone(),
                        },
                        _ => v.clone(),
                    };
                }
            }
            Mutation::Boundary { pointer, max } => {
                let node = schema.and_then(|s| node_at(s, pointer));
                if let Some(v) = body.pointer_mut(pointer) {
                    *v = match (&*v, node) {
                        (Value::String(s), _) if !s.is_empty() => {
                            Value::from(if *max { "9" } else { "0" }.repeat(s.len()))
                        }
                        (_, Some(SchemaNode::Integer { minimum, maximum })) => {
                            Value::from(if *max { *maximum } else { *minimum })
                        }
                        _ => v.clone(),
                    };
                }
            }
            Mutation::Swap { pointer, value } => {
                if let Some(v) = body.pointer_mut(pointer) {
                    *v = value.clone();
                }
            }
            Mutation::DateShift { pointer, unit, amount } => {
                if let Some(v) = body.pointer_mut(pointer) {
                    if let Some(s) = v.as_str().and_then(|s| shift_date(s, *unit, *amount)) {
                        *v = Value::from(s);
                    }
                }
            }
            Mutation::Drop { pointer } => {
                let (parent, key) = split_pointer(pointer);
                if let Some(Value::Object(m)) = body.pointer_mut(parent) {
                    m.remove(key);
                }
            }
            Mutation::Add { pointer, value } => {
                let (parent, key) = split_pointer(pointer);
                if let Some(Value::Object(m)) = body.pointer_mut(parent) {
                    m.insert(key.to_string(), value.clone());
                }
            }
            Mutation::EndpointSwap { .. } => unreachable!("handled above"),
        }
        out
    }
}

/// Schema node addressed by a JSON pointer into a conforming value.
pub(crate) fn node_at<'a>(root: &'a SchemaNode, pointer: &str) -> Option<&'a SchemaNode> {
    let mut node = root;
    for seg in pointer.split('/').skip(1) {
        node = match node {
            SchemaNode::Object { properties, .. } => &properties.iter().find(|p| p.name == seg)?.schema,
            SchemaNode::Array { items, .. } => items,
            _ => return None,
        };
    }
    Some(node)
}

#[derive(Default)]
struct Sites<'a> {
    /// Present scalar values with their schema node.
    leaves: Vec<(String, &'a SchemaNode, &'a Value)>,
    present: Vec<String>,
    missing: Vec<(String, &'a SchemaNode)>,
}

fn collect<'a>(node: &'a SchemaNode, v: &'a Value, pointer: &str, sites: &mut Sites<'a>) {
    match (node, v) {
        (SchemaNode::Object { properties, .. }, Value::Object(map)) => {
            for p in properties {
                let ptr = format!("{pointer}/{}", p.name);
                match map.get(&p.name) {
                    Some(child) => {
                        sites.present.push(ptr.clone());
                        collect(&p.schema, child, &ptr, sites);
                    }
                    None => sites.missing.push((ptr, &p.schema)),
                }
            }
        }
        (SchemaNode::Array { items, .. }, Value::Array(xs)) => {
            for (i, x) in xs.iter().enumerate() {
                collect(items, x, &format!("{pointer}/{i}"), sites);
            }
        }
        (SchemaNode::Object { .. } | SchemaNode::Array { .. }, _) => {}
        (leaf, value) => sites.leaves.push((pointer.to_string(), leaf, value)),
    }
}

fn is_digits(v: &Value) -> Option<usize> {
    v.as_str().filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())).map(str::len)
}

fn endpoint_swap(req: &Request, sampler: &Sampler, rng: &mut impl Rng) -> Mutation {
    let message = |v: Option<&Value>| v.cloned().unwrap_or_else(|| Value::Object(Map::new()));
    let body = req.body.as_ref();
    let converted = match (req.method.as_str(), req.template.as_str()) {
        ("POST", VALIDATE_PATH) => Some((
            AGGREGATE_PATH,
            serde_json::json!({ "messages": [message(body.and_then(|b| b.get("message")))] }),
        )),
        ("POST", AGGREGATE_PATH) => Some((
            VALIDATE_PATH,
            serde_json::json!({ "message": message(body.and_then(|b| b.pointer("/messages/0"))) }),
        )),
        _ => None,
    };
    match converted {
        Some((template, body)) => Mutation::EndpointSwap {
            method: "POST".into(),
            template: template.into(),
            path: template.into(),
            body: Some(body),
        },
        None => {
            let fresh = sampler.sample(rng);
            Mutation::EndpointSwap {
                method: fresh.method,
                template: fresh.template,
                path: fresh.path,
                body: fresh.body,
            }
        }
    }
}

/// Pick one applicable operator and site uniformly and draw its parameters.
pub fn choose_mutation(req: &Request, sampler: &Sampler, rng: &mut impl Rng) -> Mutation {
    let schema = sampler.endpoint(&req.endpoint_key()).and_then(|e| e.request_body.as_ref());
    let mut sites = Sites::default();
    if let (Some(s), Some(b)) = (schema, req.body.as_ref()) {
        collect(s, b, "", &mut sites);
    }
    let numeric: Vec<_> = sites
        .leaves
        .iter()
        .filter(|(_, node, v)| match node {
            SchemaNode::Integer { .. } => v.as_i64().is_some(),
            SchemaNode::String { pattern: Some(p), .. } => digit_pattern(p).is_some() && is_digits(v).is_some(),
            _ => false,
        })
        .collect();
    let swappable: Vec<_> = sites
        .leaves
        .iter()
        .filter(|(_, node, v)| match node {
            SchemaNode::String { values: Some(vs), .. } => vs.len() > 1,
            SchemaNode::String { pattern: Some(p), .. } => digit_pattern(p).is_some() && is_digits(v).is_some(),
            _ => false,
        })
        .collect();
    let dates: Vec<_> = sites
        .leaves
        .iter()
        .filter(|(_, node, v)| is_date_node(node) && v.as_str().and_then(parse_date).is_some())
        .collect();

    #[derive(Clone, Copy)]
    enum Op {
        Nudge,
        Swap,
        Date,
        Drop,
        Add,
        Endpoint,
    }
    let mut ops = vec![Op::Endpoint];
    for (op, ok) in [
        (Op::Nudge, !numeric.is_empty()),
        (Op::Swap, !swappable.is_empty()),
        (Op::Date, !dates.is_empty()),
        (Op::Drop, !sites.present.is_empty()),
        (Op::Add, !sites.missing.is_empty()),
    ] {
        if ok {
            ops.push(op);
        }
    }
    match *ops.choose(rng).expect("endpoint swap always applies") {
        Op::Nudge => {
            let (ptr, _, _) = numeric.choose(rng).expect("non-empty");
            let pointer = ptr.clone();
            match rng.gen_range(0..5) {
                0 => Mutation::Nudge { pointer, delta: -1 },
                1 => Mutation::Nudge { pointer, delta: 1 },
                2 => Mutation::Nudge { pointer, delta: -10 },
                3 => Mutation::Nudge { pointer, delta: 10 },
                _ => Mutation::Boundary { pointer, max: rng.gen_bool(0.5) },
            }
        }
        Op::Swap => {
            let (ptr, node, v) = swappable.choose(rng).expect("non-empty");
            let value = match node {
                SchemaNode::String { values: Some(vs), .. } => {
                    let others: Vec<&String> = vs.iter().filter(|x| v.as_str() != Some(x.as_str())).collect();
                    Value::from(others.choose(rng).map_or_else(|| vs[0].clone(), |s| (*s).clone()))
                }
                _ => {
                    let width = is_digits(v).expect("digit leaf");
                    Value::from((0..width).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect::<String>())
                }
            };
            Mutation::Swap { pointer: ptr.clone(), value }
        }
        Op::Date => {
            let (ptr, _, _) = dates.choose(rng).expect("non-empty");
            let unit = *[DateUnit::Day, DateUnit::Month, DateUnit::Year].choose(rng).expect("non-empty");
            Mutation::DateShift {
                pointer: ptr.clone(),
                unit,
                amount: if rng.gen_bool(0.5) { 1 } else { -1 },
            }
        }
        Op::Drop => Mutation::Drop {
            pointer: sites.present.choose(rng).expect("non-empty").clone(),
        },
        Op::Add => {
            let (ptr, node) = sites.missing.choose(rng).expect("non-empty");
            let value = match node {
                SchemaNode::Object { .. } | SchemaNode::Array { .. } => sampler.structured(node, rng),
                leaf => valid_leaf(leaf, rng),
            };
            Mutation::Add { pointer: ptr.clone(), value }
        }
        Op::Endpoint => endpoint_swap(req, sampler, rng),
    }
}

/// Offspring of `tc` with exactly one operator applied and recorded in the lineage.
pub fn mutate(tc: &TestCase, sampler: &Sampler, rng: &mut impl Rng) -> TestCase {
    let m = choose_mutation(&tc.request, sampler, rng);
    let schema = sampler.endpoint(&tc.request.endpoint_key()).and_then(|e| e.request_body.as_ref());
    let request = m.apply(&tc.request, schema);
    let mut lineage = tc.lineage.clone();
    if lineage.len() >= LINEAGE_LIMIT {
        lineage.remove(1);
    }
    lineage.push(m.label());
    TestCase {
        request,
        lineage,
        observed: None,
    }
}
