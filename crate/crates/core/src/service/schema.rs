use serde::{Deserialize, Serialize};

use crate::dsl::{Domain, RuleSetVersion, ValueKind, VarDecl, VariableValue};

pub const VALIDATE_PATH: &str = "/api/messages/validate";
pub const AGGREGATE_PATH: &str = "/api/cases/aggregate";

/// Most messages a generated aggregate request carries.
pub const MAX_MESSAGES: usize = 3;

/// Subset of JSON-Schema sufficient for request bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SchemaNode {
    Object {
        properties: Vec<Property>,
        #[serde(default)]
        required: Vec<String>,
    },
    Array {
        items: Box<SchemaNode>,
        #[serde(rename = "minItems")]
        min_items: usize,
        #[serde(rename = "maxItems")]
        max_items: usize,
    },
    String {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pattern: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        format: Option<String>,
        #[serde(default, rename = "enum", skip_serializing_if = "Option::is_none")]
        values: Option<Vec<String>>,
    },
    Integer {
        minimum: i64,
        maximum: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Property {
    pub name: String,
    pub schema: SchemaNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndpointSpec {
    pub method: String,
    pub path: String,
    pub operation_id: String,
    pub rule_handling: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_body: Option<SchemaNode>,
}

impl EndpointSpec {
    pub fn key(&self) -> String {
        format!("{} {}", self.method, self.path)
    }

    /// Whether a concrete request path matches this (possibly templated) path.
    pub fn matches(&self, method: &str, path: &str) -> bool {
        if !self.method.eq_ignore_ascii_case(method) {
            return false;
        }
        let mut want = self.path.split('/');
        let mut got = path.split('/');
        loop {
            match (want.next(), got.next()) {
                (None, None) => return true,
                (Some(w), Some(g)) if w.starts_with('{') && !g.is_empty() => {}
                (Some(w), Some(g)) if w == g => {}
                _ => return false,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ApiSchema {
    pub title: String,
    pub version: String,
    pub endpoints: Vec<EndpointSpec>,
}

impl ApiSchema {
    pub fn endpoint(&self, method: &str, path: &str) -> Option<&EndpointSpec> {
        self.endpoints.iter().find(|e| e.matches(method, path))
    }

    pub fn rule_handling(&self) -> impl Iterator<Item = &EndpointSpec> {
        self.endpoints.iter().filter(|e| e.rule_handling)
    }
}

pub const STUB_ENDPOINTS: [(&str, &str, &str); 30] = [
    ("GET", "/api/patients", "listPatients"),
    ("POST", "/api/patients", "createPatient"),
    ("GET", "/api/patients/{id}", "getPatient"),
    ("PUT", "/api/patients/{id}", "updatePatient"),
    ("DELETE", "/api/patients/{id}", "deletePatient"),
    ("GET", "/api/tumors", "listTumors"),
    ("POST", "/api/tumors", "createTumor"),
    ("GET", "/api/tumors/{id}", "getTumor"),
    ("GET", "/api/reports", "listReports"),
    ("POST", "/api/reports", "createReport"),
    ("GET", "/api/reports/{id}", "getReport"),
    ("GET", "/api/codes/topography", "listTopographyCodes"),
    ("GET", "/api/codes/morphology", "listMorphologyCodes"),
    ("GET", "/api/codes/basis", "listBasisCodes"),
    ("GET", "/api/users", "listUsers"),
    ("POST", "/api/users", "createUser"),
    ("GET", "/api/users/{id}", "getUser"),
    ("GET", "/api/hospitals", "listHospitals"),
    ("GET", "/api/hospitals/{id}", "getHospital"),
    ("GET", "/api/messages", "listMessages"),
    ("GET", "/api/messages/{id}", "getMessage"),
    ("DELETE", "/api/messages/{id}", "deleteMessage"),
    ("GET", "/api/cases", "listCases"),
    ("GET", "/api/cases/{id}", "getCase"),
    ("DELETE", "/api/cases/{id}", "deleteCase"),
    ("GET", "/api/rules", "listRules"),
    ("GET", "/api/rules/{id}", "getRule"),
    ("GET", "/api/statistics", "getStatistics"),
    ("GET", "/api/audit", "listAuditEntries"),
    ("GET", "/api/health", "health"),
];

fn field_schema(v: &VarDecl) -> SchemaNode {
    match (v.kind, &v.domain) {
        (ValueKind::Integer, Domain::IntRange { min, max }) => SchemaNode::Integer {
            minimum: *min,
            maximum: *max,
        },
        (ValueKind::Integer, _) => SchemaNode::Integer {
            minimum: i64::from(i32::MIN),
            maximum: i64::from(i32::MAX),
        },
        (ValueKind::Code, _) => SchemaNode::String {
            pattern: Some("^[0-9]{1,4}$".into()),
            format: None,
            values: None,
        },
        (ValueKind::Date, _) => SchemaNode::String {
            pattern: None,
            format: Some("date".into()),
            values: None,
        },
        (ValueKind::Text, Domain::Set(values)) => SchemaNode::String {
            pattern: None,
            format: None,
            values: Some(values.iter().filter(|v| !v.is_null()).map(VariableValue::to_string).collect()),
        },
        (ValueKind::Text, _) => SchemaNode::String {
            pattern: None,
            format: None,
            values: None,
        },
    }
}

/// Message body schema mirroring the version's variable schema.
pub fn message_schema(rs: &RuleSetVersion) -> SchemaNode {
    SchemaNode::Object {
        properties: rs
            .schema
            .iter()
            .map(|v| Property {
                name: v.name.clone(),
                schema: field_schema(v),
            })
            .collect(),
        required: Vec::new(),
    }
}

fn string() -> SchemaNode {
    SchemaNode::String {
        pattern: None,
        format: None,
        values: None,
    }
}

pub fn emit_api_schema(rs: &RuleSetVersion) -> ApiSchema {
    let message = message_schema(rs);
    let mut targets: Vec<&str> = rs.aggregation_rules.iter().map(|r| r.target_field.as_str()).collect();
    targets.sort_unstable();
    targets.dedup();
    let previous_case = SchemaNode::Object {
        properties: vec![
            Property { name: "caseId".into(), schema: string() },
            Property {
                name: "sourceMessageCount".into(),
                schema: SchemaNode::Integer { minimum: 0, maximum: 100 },
            },
            Property {
                name: "aggregatedFields".into(),
                schema: SchemaNode::Object {
                    properties: targets
                        .iter()
                        .map(|t| Property { name: t.to_string(), schema: string() })
                        .collect(),
                    required: Vec::new(),
                },
            },
        ],
        required: vec!["caseId".into()],
    };
    let mut endpoints = vec![
        EndpointSpec {
            method: "POST".into(),
            path: VALIDATE_PATH.into(),
            operation_id: "validateMessage".into(),
            rule_handling: true,
            request_body: Some(SchemaNode::Object {
                properties: vec![Property { name: "message".into(), schema: message.clone() }],
                required: vec!["message".into()],
            }),
        },
        EndpointSpec {
            method: "POST".into(),
            path: AGGREGATE_PATH.into(),
            operation_id: "aggregateCase".into(),
            rule_handling: true,
            request_body: Some(SchemaNode::Object {
                properties: vec![
                    Property { name: "previousCase".into(), schema: previous_case },
                    Property {
                        name: "messages".into(),
                        schema: SchemaNode::Array {
                            items: Box::new(message),
                            min_items: 1,
                            max_items: MAX_MESSAGES,
                        },
                    },
                ],
                required: vec!["messages".into()],
            }),
        },
    ];
    for (method, path, op) in STUB_ENDPOINTS {
        let request_body = matches!(method, "POST" | "PUT").then(|| SchemaNode::Object {
            properties: vec![Property { name: "name".into(), schema: string() }],
            required: Vec::new(),
        });
        endpoints.push(EndpointSpec {
            method: method.into(),
            path: path.into(),
            operation_id: op.into(),
            rule_handling: false,
            request_body,
        });
    }
    ApiSchema {
        title: "Cancer registry rules API".into(),
        version: rs.version_id.clone(),
        endpoints,
    }
}
