//! HTTP facade over the rule engine: two rule-handling endpoints, thirty stub
//! endpoints answering 501, the API schema, and harness-only `/internal`
//! endpoints for coverage, execution tallies and search heuristics.
//!
//! Request handling is transport independent ([`RulesService::handle`]); the
//! same handler backs the in-process transport and the axum server in
//! [`http`].

mod decode;
pub mod http;
mod schema;

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dsl::{RuleSetVersion, RuleType};
use crate::engine::{
    AggregateError, CancerMessage, Engine, ExecutionResult, ExecutionStatus, Feedback, ProbeKind, ProbeRegistry,
    RuleExecution, RuleHeuristic, ENGINE_FRAME_PREFIX,
};

pub use decode::{decode_case, decode_message, decode_value, parse_date, DecodeError};
pub use schema::{
    emit_api_schema, message_schema, ApiSchema, EndpointSpec, Property, SchemaNode, AGGREGATE_PATH, MAX_MESSAGES,
    STUB_ENDPOINTS, VALIDATE_PATH,
};

pub const ENTRY_VALIDATE: &str = "service::validate";
pub const ENTRY_AGGREGATE: &str = "service::aggregate";
pub const ENTRY_DECODE_MESSAGE: &str = "service::decode_message";
pub const ENTRY_DECODE_CASE: &str = "service::decode_case";
pub const ENTRY_PARSE_DATE: &str = "service::parse_date";
pub const ENTRY_API_SCHEMA: &str = "service::api_schema";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    /// The failing frame lies inside rule-engine code.
    Engine,
    Plumbing,
}

/// Structured description of a 500 response.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ErrorSignature {
    pub endpoint: String,
    pub error_kind: String,
    pub trace_path: Vec<String>,
    pub top_frame: String,
    pub origin: Origin,
}

impl ErrorSignature {
    pub fn new(endpoint: &str, error_kind: &str, trace_path: Vec<String>) -> ErrorSignature {
        let top_frame = trace_path.first().cloned().unwrap_or_default();
        let origin = if top_frame.starts_with(ENGINE_FRAME_PREFIX) {
            Origin::Engine
        } else {
            Origin::Plumbing
        };
        ErrorSignature {
            endpoint: endpoint.to_string(),
            error_kind: error_kind.to_string(),
            trace_path,
            top_frame,
            origin,
        }
    }
}

/// Run-level per-rule execution counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecutionTally {
    pub not_applied: u64,
    pub pass: u64,
    pub fail: u64,
    pub warning: u64,
}

impl ExecutionTally {
    pub fn record(&mut self, e: &RuleExecution) {
        match (e.status, e.result) {
            (ExecutionStatus::Applied, ExecutionResult::Pass) => self.pass += 1,
            (ExecutionStatus::Applied, ExecutionResult::Fail) => self.fail += 1,
            (ExecutionStatus::Applied, ExecutionResult::Warning) => self.warning += 1,
            _ => self.not_applied += 1,
        }
    }

    pub fn applied(&self) -> u64 {
        self.pass + self.fail + self.warning
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RuleTally {
    pub rule_id: String,
    pub rule_type: RuleType,
    #[serde(flatten)]
    pub tally: ExecutionTally,
}

/// Probe hits and distances of the most recent rule-handling request.
/// Indices refer to the registry order published at `/internal/probes`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeuristicsReport {
    pub statements: Vec<usize>,
    pub entries: Vec<usize>,
    /// (decision outcome index, normalized distance)
    pub decisions: Vec<(usize, f64)>,
    pub rules: BTreeMap<String, RuleHeuristic>,
}

impl From<Feedback> for HeuristicsReport {
    fn from(fb: Feedback) -> Self {
        HeuristicsReport {
            statements: fb.statements.into_iter().collect(),
            entries: fb.entries.into_iter().collect(),
            decisions: fb.decisions.into_iter().collect(),
            rules: fb.rules,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub body: Value,
}

impl Response {
    fn new(status: u16, body: Value) -> Response {
        Response { status, body }
    }

    fn error(status: u16, msg: impl Into<String>) -> Response {
        Response::new(status, json!({ "error": msg.into() }))
    }
}

#[derive(Debug)]
struct Entries {
    validate: usize,
    aggregate: usize,
    decode_message: usize,
    decode_case: usize,
    parse_date: usize,
    api_schema: usize,
    stubs: Vec<usize>,
}

/// One service instance serving a single rule-set version.
#[derive(Debug)]
pub struct RulesService {
    engine: Engine,
    schema: ApiSchema,
    schema_json: Value,
    entries: Entries,
    executions: Mutex<BTreeMap<String, ExecutionTally>>,
    last: Mutex<HeuristicsReport>,
}

fn to_frames(frames: &[&str]) -> Vec<String> {
    frames.iter().map(|s| s.to_string()).collect()
}

impl RulesService {
    pub fn new(rules: RuleSetVersion) -> RulesService {
        let mut reg = ProbeRegistry::new();
        let entries = Entries {
            validate: reg.register_entry(ENTRY_VALIDATE),
            aggregate: reg.register_entry(ENTRY_AGGREGATE),
            decode_message: reg.register_entry(ENTRY_DECODE_MESSAGE),
            decode_case: reg.register_entry(ENTRY_DECODE_CASE),
            parse_date: reg.register_entry(ENTRY_PARSE_DATE),
            api_schema: reg.register_entry(ENTRY_API_SCHEMA),
            stubs: STUB_ENDPOINTS
                .iter()
                .map(|(_, _, op)| reg.register_entry(format!("service::stub::{op}")))
                .collect(),
        };
        let schema = emit_api_schema(&rules);
        let schema_json = serde_json::to_value(&schema).expect("schema serializes");
        let engine = Engine::with_registry(rules, reg);
        let executions = engine
            .rules()
            .validation_rules
            .iter()
            .map(|r| &r.id)
            .chain(engine.rules().aggregation_rules.iter().map(|r| &r.id))
            .map(|id| (id.clone(), ExecutionTally::default()))
            .collect();
        RulesService {
            engine,
            schema,
            schema_json,
            entries,
            executions: Mutex::new(executions),
            last: Mutex::new(HeuristicsReport::default()),
        }
    }

    /// Parse a rules document and build a service for it.
    pub fn from_document(doc: &str) -> Result<RulesService, crate::dsl::ParseError> {
        Ok(RulesService::new(crate::dsl::parse_rule_set(doc)?))
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn api_schema(&self) -> &ApiSchema {
        &self.schema
    }

    pub fn probes(&self) -> &ProbeRegistry {
        self.engine.probes()
    }

    pub fn executions(&self) -> BTreeMap<String, ExecutionTally> {
        self.executions.lock().expect("tally lock").clone()
    }

    /// Zero coverage counters, execution tallies and the heuristics buffer.
    pub fn reset(&self) {
        self.probes().reset();
        for t in self.executions.lock().expect("tally lock").values_mut() {
            *t = ExecutionTally::default();
        }
        *self.last.lock().expect("heuristics lock") = HeuristicsReport::default();
    }

    /// Copy of the feedback buffer served at `/internal/heuristics`.
    pub fn last_heuristics(&self) -> HeuristicsReport {
        self.last.lock().expect("heuristics lock").clone()
    }

    fn hit(&self, fb: &mut Feedback, entry: usize) {
        self.probes().hit(ProbeKind::Entry, entry);
        fb.entries.insert(entry);
    }

    /// Handle a request with a raw body (empty when absent).
    pub fn handle(&self, method: &str, path: &str, body: &[u8]) -> Response {
        if body.is_empty() {
            return self.handle_json(method, path, None);
        }
        match serde_json::from_slice::<Value>(body) {
            Ok(v) => self.handle_json(method, path, Some(&v)),
            Err(e) => {
                let msg = format!("malformed JSON body: {e}");
                let body = Err(msg);
                self.route(method, path, body)
            }
        }
    }

    /// Handle a request whose body is already parsed.
    pub fn handle_json(&self, method: &str, path: &str, body: Option<&Value>) -> Response {
        self.route(method, path, Ok(body))
    }

    fn route(&self, method: &str, path: &str, body: Result<Option<&Value>, String>) -> Response {
        let path = path.split('?').next().unwrap_or(path);
        let method = method.to_ascii_uppercase();
        match (method.as_str(), path) {
            ("GET", "/internal/coverage") => Response::new(200, json!(self.probes().snapshot())),
            ("POST", "/internal/coverage/reset") => {
                self.reset();
                Response::new(200, json!({ "reset": true }))
            }
            ("GET", "/internal/executions") => Response::new(200, json!(self.executions_report())),
            ("GET", "/internal/heuristics") => Response::new(200, json!(*self.last.lock().expect("heuristics lock"))),
            ("GET", "/internal/probes") => Response::new(200, json!(self.probes().catalog())),
            _ => self.finish(|s, fb| s.api(&method, path, body, fb)),
        }
    }

    fn api(&self, method: &str, path: &str, body: Result<Option<&Value>, String>, fb: &mut Feedback) -> Response {
        match (method, path) {
            ("GET", "/api/schema") => {
                self.hit(fb, self.entries.api_schema);
                Response::new(200, self.schema_json.clone())
            }
            ("POST", VALIDATE_PATH) => self.validate(body, fb),
            ("POST", AGGREGATE_PATH) => self.aggregate(body, fb),
            _ => match self.schema.endpoints.iter().filter(|e| !e.rule_handling).position(|e| e.matches(method, path)) {
                Some(i) => {
                    self.hit(fb, self.entries.stubs[i]);
                    Response::error(501, format!("{} is not implemented", STUB_ENDPOINTS[i].2))
                }
                None => Response::error(404, format!("no route for {method} {path}")),
            },
        }
    }

    /// The run-level tally per rule, in rule-set order.
    pub fn executions_report(&self) -> Vec<RuleTally> {
        let t = self.executions.lock().expect("tally lock");
        let rules = self.engine.rules();
        RuleType::ALL
            .iter()
            .flat_map(|&ty| rules.rule_ids(ty).into_iter().map(move |id| (id, ty)))
            .map(|(id, ty)| RuleTally {
                rule_id: id.to_string(),
                rule_type: ty,
                tally: t.get(id).copied().unwrap_or_default(),
            })
            .collect()
    }

    fn finish(&self, f: impl FnOnce(&Self, &mut Feedback) -> Response) -> Response {
        let mut fb = Feedback::default();
        let resp = f(self, &mut fb);
        *self.last.lock().expect("heuristics lock") = fb.into();
        resp
    }

    fn tally(&self, execs: &[RuleExecution]) {
        let mut t = self.executions.lock().expect("tally lock");
        for e in execs {
            if let Some(slot) = t.get_mut(&e.rule_id) {
                slot.record(e);
            }
        }
    }

    fn parse_body(body: Result<Option<&Value>, String>) -> Result<&Value, Response> {
        match body {
            Ok(Some(v)) => Ok(v),
            Ok(None) => Err(Response::error(400, "request body required")),
            Err(e) => Err(Response::error(400, e)),
        }
    }

    fn decode_msg(&self, v: &Value, fb: &mut Feedback, tail: &[&str]) -> Result<CancerMessage, Response> {
        self.hit(fb, self.entries.decode_message);
        match decode_message(self.engine.rules(), v) {
            Ok(m) => {
                if m.variables.values().any(|v| matches!(v, crate::dsl::VariableValue::Date(_))) {
                    self.hit(fb, self.entries.parse_date);
                }
                Ok(m)
            }
            Err(e) => Err(self.decode_failure(e, fb, "service::decode_message", tail)),
        }
    }

    fn decode_failure(&self, e: DecodeError, fb: &mut Feedback, decoder: &str, tail: &[&str]) -> Response {
        match e {
            DecodeError::BadRequest(m) => Response::error(400, m),
            DecodeError::DateParse { field, raw } => {
                self.hit(fb, self.entries.parse_date);
                let mut frames = vec![ENTRY_PARSE_DATE.to_string(), format!("{decoder}[{field}]")];
                frames.extend(to_frames(tail));
                let endpoint = tail.last().copied().unwrap_or_default();
                let endpoint = if endpoint == ENTRY_VALIDATE { VALIDATE_PATH } else { AGGREGATE_PATH };
                let sig = ErrorSignature::new(endpoint, "date-parse", frames);
                Response::new(
                    500,
                    json!({ "error": sig, "detail": format!("cannot parse date {raw:?} in field {field}") }),
                )
            }
        }
    }

    fn validate(&self, body: Result<Option<&Value>, String>, fb: &mut Feedback) -> Response {
        self.hit(fb, self.entries.validate);
        let v = match Self::parse_body(body) {
            Ok(v) => v,
            Err(r) => return r,
        };
        let Some(raw) = v.get("message") else {
            return Response::error(400, "body must contain a message object");
        };
        let msg = match self.decode_msg(raw, fb, &[ENTRY_VALIDATE]) {
            Ok(m) => m,
            Err(r) => return r,
        };
        match self.engine.validate_message(&msg, fb) {
            Ok(execs) => {
                self.tally(&execs);
                Response::new(200, json!({ "executions": execs }))
            }
            Err(failure) => {
                let mut frames = failure.error.frames.clone();
                frames.push(ENTRY_VALIDATE.to_string());
                let sig = ErrorSignature::new(VALIDATE_PATH, "rule-parse", frames);
                Response::new(
                    500,
                    json!({ "error": sig, "detail": failure.error.to_string(), "partialExecutions": failure.partial }),
                )
            }
        }
    }

    fn aggregate(&self, body: Result<Option<&Value>, String>, fb: &mut Feedback) -> Response {
        self.hit(fb, self.entries.aggregate);
        let v = match Self::parse_body(body) {
            Ok(v) => v,
            Err(r) => return r,
        };
        let Some(Value::Array(raw_msgs)) = v.get("messages") else {
            return Response::error(400, "body must contain a messages array");
        };
        let tail = [ENTRY_AGGREGATE];
        let previous = match v.get("previousCase") {
            None | Some(Value::Null) => None,
            Some(raw) => {
                self.hit(fb, self.entries.decode_case);
                match decode_case(self.engine.rules(), raw) {
                    Ok(c) => Some(c),
                    Err(e) => return self.decode_failure(e, fb, "service::decode_case", &tail),
                }
            }
        };
        let mut msgs = Vec::with_capacity(raw_msgs.len());
        for raw in raw_msgs {
            match self.decode_msg(raw, fb, &tail) {
                Ok(m) => msgs.push(m),
                Err(r) => return r,
            }
        }
        match self.engine.aggregate_case(previous.as_ref(), &msgs, fb) {
            Ok((case, execs)) => {
                self.tally(&execs);
                Response::new(200, json!({ "case": case, "executions": execs }))
            }
            Err(AggregateError::NoMessages) => Response::error(400, "at least one message is required"),
            Err(AggregateError::Engine(failure)) => {
                let mut frames = failure.error.frames.clone();
                frames.push(ENTRY_AGGREGATE.to_string());
                let sig = ErrorSignature::new(AGGREGATE_PATH, "rule-parse", frames);
                Response::new(
                    500,
                    json!({ "error": sig, "detail": failure.error.to_string(), "partialExecutions": failure.partial }),
                )
            }
        }
    }
}
