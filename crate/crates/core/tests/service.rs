use std::sync::Arc;

use serde_json::{json, Value};

use rulebench::corpus::{generate_corpus, CorpusSpec};
use rulebench::metrics::{classify_errors, ObservedError};
use rulebench::service::{http, ErrorSignature, Origin, RulesService, AGGREGATE_PATH, VALIDATE_PATH};
use rulebench::testgen::{HttpTransport, Transport};

const DOC: &str = "\
VAR messageType : text {D, H, T, F}
VAR surgery : code {00, 10, 95, 96}
VAR basis : code {10, 22, 32, 40, 99}
VAR diagnosisDate : date [2000-01-01, 2022-12-31]
VAR patientAge : integer [0, 120]
VAR tumorCount : integer [0, 5]
RULE r1 FOR H WHEN surgery = 96 CHECK basis > 32
RULE z1 FOR T WHEN tumorCount <= 1 CHECK patientAge / tumorCount < 60
AGG a1 SET morphVerified BY basis CASE {22, 32} => \"Yes\" CASE {10} => \"No\" DEFAULT null
";

fn svc() -> RulesService {
    RulesService::from_document(DOC).unwrap()
}

fn post(s: &RulesService, path: &str, body: Value) -> (u16, Value) {
    let r = s.handle_json("POST", path, Some(&body));
    (r.status, r.body)
}

#[test]
fn schema_lists_32_endpoints_two_of_them_rule_handling() {
    let versions = generate_corpus(&CorpusSpec::default(), 1).unwrap();
    for rs in &versions {
        let s = RulesService::new(rs.clone());
        let schema = s.api_schema();
        assert_eq!(schema.endpoints.len(), 32);
        assert_eq!(schema.rule_handling().count(), 2);
        let doc = s.handle_json("GET", "/api/schema", None);
        assert_eq!(doc.status, 200);
        let text = serde_json::to_string(&doc.body).unwrap();
        for var in &rs.schema {
            assert!(text.contains(&format!("\"{}\"", var.name)), "{} missing from {}", var.name, rs.version_id);
        }
    }
}

#[test]
fn validate_returns_one_execution_per_validation_rule() {
    let s = svc();
    let (status, body) = post(&s, VALIDATE_PATH, json!({ "message": { "messageType": "H", "surgery": "96", "basis": "40" } }));
    assert_eq!(status, 200);
    let ex = body["executions"].as_array().unwrap();
    assert_eq!(ex.len(), 2);
    let r1 = ex.iter().find(|e| e["ruleId"] == "r1").unwrap();
    assert_eq!((r1["status"].as_str(), r1["result"].as_str()), (Some("applied"), Some("pass")));
}

#[test]
fn aggregate_needs_at_least_one_message() {
    let s = svc();
    assert_eq!(post(&s, AGGREGATE_PATH, json!({ "messages": [] })).0, 400);
    assert_eq!(s.handle("POST", AGGREGATE_PATH, b"{not json").status, 400);
    assert_eq!(s.handle("POST", VALIDATE_PATH, b"").status, 400);
    let (status, body) = post(&s, AGGREGATE_PATH, json!({ "messages": [{ "basis": "22" }] }));
    assert_eq!(status, 200);
    assert_eq!(body["case"]["aggregatedFields"]["morphVerified"]["value"], json!("Yes"));
    assert_eq!(body["executions"].as_array().unwrap().len(), 1);
}

#[test]
fn malformed_date_is_a_date_parse_500() {
    let s = svc();
    let (status, body) = post(&s, VALIDATE_PATH, json!({ "message": { "diagnosisDate": "2020-13-45" } }));
    assert_eq!(status, 500);
    let sig: ErrorSignature = serde_json::from_value(body["error"].clone()).unwrap();
    assert_eq!(sig.error_kind, "date-parse");
    assert_eq!(sig.origin, Origin::Plumbing);
    assert_eq!(sig.top_frame, sig.trace_path[0]);
    let (_, again) = post(&s, VALIDATE_PATH, json!({ "message": { "diagnosisDate": "2020-13-45" } }));
    assert_eq!(again["error"], body["error"]);
}

#[test]
fn zero_divide_fixture_is_one_library_failure_point() {
    let s = svc();
    let mut errors = Vec::new();
    for age in [10, 70, 100] {
        let (status, body) = post(
            &s,
            VALIDATE_PATH,
            json!({ "message": { "messageType": "T", "tumorCount": 0, "patientAge": age } }),
        );
        assert_eq!(status, 500);
        let signature: ErrorSignature = serde_json::from_value(body["error"].clone()).unwrap();
        assert_eq!(signature.origin, Origin::Engine);
        errors.push(ObservedError::Service { signature });
    }
    let m = classify_errors(&errors);
    assert_eq!(m.unique_errors.remaining, 1);
    assert_eq!(m.unique_library_failure_points.remaining, 1);
    assert_eq!(m.non_library_failure_points(), 0);
}

#[test]
fn stubs_answer_501_and_unknown_paths_404() {
    let s = svc();
    let stubs: Vec<_> = s.api_schema().endpoints.iter().filter(|e| !e.rule_handling).cloned().collect();
    assert_eq!(stubs.len(), 30);
    for e in stubs {
        let path = e.path.replace("{id}", "7");
        assert_eq!(s.handle_json(&e.method, &path, None).status, 501, "{}", e.key());
    }
    assert_eq!(s.handle_json("GET", "/api/nowhere", None).status, 404);
}

#[test]
fn executions_accumulate_and_reset() {
    let s = svc();
    for _ in 0..3 {
        post(&s, VALIDATE_PATH, json!({ "message": { "messageType": "H", "surgery": "96", "basis": "10" } }));
    }
    let r1 = s.executions()["r1"];
    assert_eq!((r1.fail, r1.applied()), (3, 3));
    let report = s.handle_json("GET", "/internal/executions", None);
    let rows = report.body.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().any(|r| r["ruleId"] == "r1" && r["fail"] == 3));
    let cov = s.handle_json("GET", "/internal/coverage", None).body;
    assert!(cov.to_string().contains('1'));
    assert_eq!(s.handle_json("POST", "/internal/coverage/reset", None).status, 200);
    assert_eq!(s.executions()["r1"].applied(), 0);
}

#[test]
fn http_server_round_trip() {
    let server = http::serve(Arc::new(svc()), "127.0.0.1:0".parse().unwrap()).unwrap();
    let t = HttpTransport::new(server.base_url());
    let r = t
        .send("POST", VALIDATE_PATH, Some(&json!({ "message": { "messageType": "H", "surgery": "96", "basis": "99" } })))
        .unwrap();
    assert_eq!(r.status, 200);
    assert_eq!(r.body["executions"].as_array().unwrap().len(), 2);
    let h = t.heuristics().unwrap();
    assert_eq!(h.rules["r1"].guard, 0.0);
    assert_eq!(t.send("GET", "/api/schema", None).unwrap().body["endpoints"].as_array().unwrap().len(), 32);
    assert_eq!(t.send("DELETE", "/api/patients/3", None).unwrap().status, 501);
    server.shutdown();
}

#[test]
fn bind_failure_is_reported() {
    let first = http::serve(Arc::new(svc()), "127.0.0.1:0".parse().unwrap()).unwrap();
    let err = http::serve(Arc::new(svc()), first.addr());
    assert!(err.is_err());
}
