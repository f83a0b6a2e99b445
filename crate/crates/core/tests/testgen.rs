use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use rulebench::corpus::{generate_corpus, CorpusSpec};
use rulebench::engine::RuleExecution;
use rulebench::service::{http, RulesService, VALIDATE_PATH};
use rulebench::testgen::*;

const DOC: &str = "\
VAR messageType : text {D, H, T, F}
VAR surgery : code {00, 10, 95, 96}
VAR basis : code {10, 22, 32, 40, 99}
VAR diagnosisDate : date [2000-01-01, 2022-12-31]
VAR patientAge : integer [0, 120]
RULE r1 FOR H WHEN surgery = 96 CHECK basis > 32
AGG a1 SET morphVerified BY basis CASE {22, 32} => \"Yes\" CASE {10} => \"No\" DEFAULT null
";

fn service(doc: &str) -> InProcess {
    InProcess(Arc::new(RulesService::from_document(doc).unwrap()))
}

fn v1() -> InProcess {
    let rs = generate_corpus(&CorpusSpec::default(), 1).unwrap().remove(0);
    InProcess(Arc::new(RulesService::new(rs)))
}

fn validate(msg: Value) -> Request {
    Request {
        method: "POST".into(),
        template: VALIDATE_PATH.into(),
        path: VALIDATE_PATH.into(),
        body: Some(json!({ "message": msg })),
    }
}

#[test]
fn budgets_parse() {
    let c = Clock::default();
    assert_eq!(Budget::parse("100req", c).unwrap(), Budget::Requests(100));
    assert_eq!(Budget::parse("250", c).unwrap(), Budget::Requests(250));
    assert_eq!(Budget::parse("60s", c).unwrap(), Budget::Seconds { secs: 60.0, clock: c });
    assert_eq!(Budget::parse("10m", c).unwrap(), Budget::Seconds { secs: 600.0, clock: c });
    assert_eq!(Budget::parse("60s", c).unwrap().request_limit(), Some(3000));
    assert_eq!(Budget::parse("1h", Clock::Wall).unwrap().request_limit(), None);
    for bad in ["", "0req", "-5s", "tenreq", "5parsecs"] {
        assert!(Budget::parse(bad, c).is_err(), "{bad}");
    }
    assert_eq!("mosa".parse::<ToolId>().unwrap(), ToolId::Mosa);
}

#[test]
fn valid_samples_conform_to_the_schema() {
    let t = v1();
    let schema = t.0.api_schema().clone();
    let sampler = Sampler::new(&schema, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut endpoints = std::collections::BTreeSet::new();
    for _ in 0..1000 {
        let req = sampler.sample(&mut rng);
        assert!(request_conforms(&schema, &req), "{req:?}");
        endpoints.insert(req.endpoint_key());
    }
    assert_eq!(endpoints.len(), 32);
}

#[test]
fn zero_bias_dates_come_from_the_malformed_pool() {
    let t = v1();
    let sampler = Sampler::new(t.0.api_schema(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen = 0;
    for _ in 0..2000 {
        let req = sampler.sample(&mut rng);
        let Some(body) = &req.body else { continue };
        let msgs: Vec<&Value> = match (body.get("message"), body.get("messages")) {
            (Some(m), _) => vec![m],
            (_, Some(Value::Array(ms))) => ms.iter().collect(),
            _ => vec![],
        };
        for m in msgs {
            if let Some(d) = m.get("diagnosisDate") {
                assert!(MALFORMED_DATES.contains(&d.as_str().unwrap()), "{d}");
                seen += 1;
            }
        }
    }
    assert!(seen > 100);
}

#[test]
fn sampling_is_seed_deterministic() {
    let t = v1();
    let schema = t.0.api_schema();
    let a = sample_random_request(schema, &mut ChaCha8Rng::seed_from_u64(42), 0.9);
    let b = sample_random_request(schema, &mut ChaCha8Rng::seed_from_u64(42), 0.9);
    assert_eq!(a, b);
}

#[test]
fn nudge_reaches_the_guard_boundary() {
    let req = validate(json!({ "messageType": "H", "surgery": "96", "basis": "33" }));
    let m = Mutation::Nudge { pointer: "/message/basis".into(), delta: -1 };
    let out = m.apply(&req, None);
    assert_eq!(out.body.unwrap()["message"]["basis"], json!("32"));
    // width is kept for codes
    let m = Mutation::Nudge { pointer: "/message/surgery".into(), delta: -90 };
    assert_eq!(m.apply(&req, None).body.unwrap()["message"]["surgery"], json!("06"));
}

#[test]
fn field_drop_removes_one_field() {
    let req = validate(json!({ "messageType": "H", "surgery": "96", "basis": "33", "patientAge": 40, "grade": "1" }));
    let out = Mutation::Drop { pointer: "/message/grade".into() }.apply(&req, None);
    assert_eq!(out.body.unwrap()["message"].as_object().unwrap().len(), 4);
}

#[test]
fn date_shift_moves_by_calendar_units() {
    let req = validate(json!({ "diagnosisDate": "2020-01-31" }));
    let shift = |unit, amount| {
        Mutation::DateShift { pointer: "/message/diagnosisDate".into(), unit, amount }.apply(&req, None).body.unwrap()
            ["message"]["diagnosisDate"]
            .clone()
    };
    assert_eq!(shift(DateUnit::Day, 1), json!("2020-02-01"));
    assert_eq!(shift(DateUnit::Month, 1), json!("2020-02-29"));
    assert_eq!(shift(DateUnit::Year, -1), json!("2019-01-31"));
}

#[test]
fn endpoint_swap_converts_between_rule_endpoints() {
    let t = v1();
    let sampler = Sampler::new(t.0.api_schema(), 0.9);
    let msg = json!({ "messageType": "H" });
    let tc = TestCase::new(validate(msg.clone()), "sample");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut converted = false;
    for _ in 0..200 {
        let m = choose_mutation(&tc.request, &sampler, &mut rng);
        if let Mutation::EndpointSwap { template, body, .. } = m {
            assert_eq!(template, rulebench::service::AGGREGATE_PATH);
            assert_eq!(body.unwrap(), json!({ "messages": [msg.clone()] }));
            converted = true;
        }
    }
    assert!(converted);
}

#[test]
fn mutation_is_seed_deterministic_and_extends_lineage() {
    let t = v1();
    let sampler = Sampler::new(t.0.api_schema(), 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let tc = TestCase::new(sampler.sample(&mut rng), "sample");
        let seed = rand::Rng::gen::<u64>(&mut rng);
        let a = mutate(&tc, &sampler, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = mutate(&tc, &sampler, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(a, b);
        assert_eq!(a.lineage.len(), 2);
        assert_eq!(a.lineage[0], "sample");
    }
}

fn observe(t: &InProcess, msg: Value) -> (HeuristicsReportOwned, Vec<RuleExecution>) {
    let r = t.send("POST", VALIDATE_PATH, Some(&json!({ "message": msg }))).unwrap();
    assert_eq!(r.status, 200);
    let execs: Vec<RuleExecution> = serde_json::from_value(r.body["executions"].clone()).unwrap();
    (t.heuristics().unwrap(), execs)
}

type HeuristicsReportOwned = rulebench::service::HeuristicsReport;

fn domain_distance(t: &InProcess, msg: Value, target: &str) -> f64 {
    let (h, execs) = observe(t, msg);
    let by_rule: BTreeMap<&str, &RuleExecution> = execs.iter().map(|e| (e.rule_id.as_str(), e)).collect();
    let obs = Observation::new(200, &h, &by_rule);
    let mut reg = ObjectiveRegistry::new(vec![RuleInfo {
        id: "r1".into(),
        rule_type: rulebench::dsl::RuleType::Validation,
    }]);
    reg.register(&RuleOutcomeObjectives::all()).unwrap();
    let i = reg.ids().position(|id| id == target).unwrap();
    let d = reg.evaluate(&obs).find(|&(j, _)| j == i).unwrap().1;
    d
}

#[test]
fn rule_outcome_objective_distances() {
    let t = service(DOC);
    let applied = RuleOutcomeObjectives::target_id("r1", DomainOutcome::Applied);
    assert_eq!(applied, "domain:r1:applied");
    let hit = json!({ "messageType": "H", "surgery": "96", "basis": "40" });
    assert_eq!(domain_distance(&t, hit.clone(), &applied), 0.0);
    assert_eq!(domain_distance(&t, hit, "domain:r1:pass"), 0.0);
    let near = json!({ "messageType": "H", "surgery": "95", "basis": "40" });
    assert_eq!(domain_distance(&t, near, &applied), 0.5);
}

#[test]
fn duplicate_objectives_are_rejected() {
    let rules = vec![RuleInfo { id: "r1".into(), rule_type: rulebench::dsl::RuleType::Validation }];
    let mut reg = ObjectiveRegistry::new(rules);
    let one = RuleOutcomeObjectives::pairs(vec![("r1".into(), DomainOutcome::Applied)]);
    assert_eq!(reg.register(&one), Ok(1));
    assert_eq!(reg.register(&one), Err(ObjectiveError::Duplicate("domain:r1:applied".into())));
    assert_eq!(reg.len(), 1);
}

#[test]
fn bb_run_logs_every_request_and_archives_first_coverers() {
    let t = v1();
    let run = run_tool(&t, &RunConfig::new(ToolId::Bb, 1, Budget::Requests(100))).unwrap();
    assert_eq!(run.log.len(), 100);
    assert_eq!(run.requests, 100);
    let key = format!("status:POST {VALIDATE_PATH}:2xx");
    let archived = &run.archive[&key];
    let first = run
        .log
        .iter()
        .find(|r| r.test.request.template == VALIDATE_PATH && r.test.observed.as_ref().unwrap().status == Some(200))
        .unwrap();
    assert_eq!(&first.test, archived);
    let covered: usize = run.log.iter().map(|r| r.test.observed.as_ref().unwrap().covered.len()).sum();
    assert_eq!(covered, run.archive.len());
}

#[test]
fn runs_are_deterministic_and_replayable() {
    let versions = generate_corpus(&CorpusSpec::default(), 1).unwrap();
    let rs = &versions[0];
    for tool in ToolId::ALL {
        let cfg = RunConfig::new(tool, 77, Budget::Requests(400));
        let once = || run_tool(&InProcess(Arc::new(RulesService::new(rs.clone()))), &cfg).unwrap();
        let (a, b) = (once(), once());
        assert_eq!(a, b, "{tool}");
        assert_eq!(a.log_digest, b.log_digest);
        assert_eq!(a.status_metrics(rs).unwrap(), b.status_metrics(rs).unwrap());
        let fresh = InProcess(Arc::new(RulesService::new(rs.clone())));
        assert_eq!(replay(&fresh, &a.log).unwrap(), vec![], "{tool}");
        let c = run_tool(&fresh, &RunConfig::new(tool, 78, Budget::Requests(400))).unwrap();
        assert_ne!(a.log_digest, c.log_digest);
    }
}

#[test]
fn http_and_in_process_transports_agree() {
    let rs = generate_corpus(&CorpusSpec::default(), 1).unwrap().remove(0);
    let cfg = RunConfig::new(ToolId::Mio, 4, Budget::Requests(60));
    let local = run_tool(&InProcess(Arc::new(RulesService::new(rs.clone()))), &cfg).unwrap();
    let server = http::serve(Arc::new(RulesService::new(rs)), "127.0.0.1:0".parse().unwrap()).unwrap();
    let remote = run_tool(&HttpTransport::new(server.base_url()), &cfg).unwrap();
    server.shutdown();
    assert_eq!(local.log, remote.log);
    assert_eq!(local.log_digest, remote.log_digest);
    assert_eq!(local.executions, remote.executions);
}

#[test]
fn unreachable_service_is_a_run_error() {
    let t = HttpTransport::new("http://127.0.0.1:9");
    let err = run_tool(&t, &RunConfig::new(ToolId::Bb, 1, Budget::Requests(5))).unwrap_err();
    assert!(matches!(err, RunError::Transport { .. }), "{err}");
}

#[test]
fn archived_tests_recover_their_targets_in_isolation() {
    let versions = generate_corpus(&CorpusSpec::default(), 1).unwrap();
    let mut cfg = RunConfig::new(ToolId::Mio, 12, Budget::Requests(600));
    cfg.domain_objectives = true;
    let run = run_tool(&InProcess(Arc::new(RulesService::new(versions[0].clone()))), &cfg).unwrap();
    assert!(run.archive.len() > 100);
    let catalog = &run.catalog;
    for (target, test) in &run.archive {
        let t = InProcess(Arc::new(RulesService::new(versions[0].clone())));
        let req = &test.request;
        let r = t.send(&req.method, &req.path, req.body.as_ref()).unwrap();
        let h = t.heuristics().unwrap();
        let ok = if let Some(rest) = target.strip_prefix("status:") {
            rest.ends_with(status_class(r.status))
        } else if let Some(id) = target.strip_prefix("line:") {
            h.statements.iter().any(|&i| catalog.statements[i] == id)
        } else if let Some(id) = target.strip_prefix("branch:") {
            h.decisions.iter().any(|&(i, d)| catalog.decisions[i] == id && d == 0.0)
        } else if let Some(id) = target.strip_prefix("method:") {
            h.entries.iter().any(|&i| catalog.entries[i] == id)
        } else if target.starts_with("fault:") {
            r.status == 500
        } else {
            true
        };
        assert!(ok, "{target} not re-covered by {req:?}");
    }
}

#[test]
fn mio_population_replaces_the_worst_member() {
    let mut p: Population<&str> = Population::default();
    for (name, d) in [("a", 0.75), ("b", 0.7), ("c", 0.72)] {
        p.insert(name, d, 3);
    }
    assert!(!p.insert("d", 0.9, 3));
    assert!(p.insert("e", 0.60, 3));
    assert_eq!(p.distances(), vec![0.60, 0.7, 0.72]);
    p.shrink(1);
    assert_eq!(p.distances(), vec![0.60]);
    let params = MioParams::default();
    assert_eq!(params.p_random(0.0), 0.5);
    assert_eq!(params.p_random(0.25), 0.25);
    assert_eq!(params.p_random(0.5), 0.0);
    assert_eq!(params.p_random(0.9), 0.0);
}

#[test]
fn mosa_preference_front_and_crowding() {
    let vs = vec![vec![(0, 0.2)], vec![(0, 0.5)], vec![(0, 0.9)]];
    assert_eq!(preference_front(&vs), vec![0]);
    // a tie on the target goes to the test closer overall
    let vs = vec![vec![(0, 0.2)], vec![(0, 0.2), (1, 0.5)]];
    assert_eq!(preference_front(&vs), vec![1]);
    let a = vec![(0, 0.1)];
    let b = vec![(0, 0.5)];
    let c = vec![(0, 0.9)];
    let cd = crowding_distances(&[&a, &b, &c]);
    assert!(cd[0].is_infinite() && cd[2].is_infinite());
    assert!((cd[1] - (0.9 - 0.1) / 0.8).abs() < 1e-12);
}

fn dense(v: &[(u32, f64)], n: u32) -> Vec<f64> {
    (0..n).map(|t| v.iter().find(|e| e.0 == t).map_or(1.0, |e| e.1)).collect()
}

fn sparse(n: u32) -> impl Strategy<Value = Vec<(u32, f64)>> {
    prop::collection::btree_map(0..n, prop::sample::select(vec![0.0, 0.25, 0.5, 0.75]), 0..n as usize)
        .prop_map(|m| m.into_iter().collect())
}

proptest! {
    #[test]
    fn sparse_dominance_matches_dense(a in sparse(6), b in sparse(6)) {
        let (da, db) = (dense(&a, 6), dense(&b, 6));
        let expect = da.iter().zip(&db).all(|(x, y)| x <= y) && da.iter().zip(&db).any(|(x, y)| x < y);
        prop_assert_eq!(dominates(&a, &b), expect);
    }

    #[test]
    fn adding_a_test_never_worsens_suite_fitness(suite in prop::collection::vec(sparse(8), 1..6), extra in sparse(8)) {
        let before = suite_fitness(&suite, 8);
        let mut more = suite.clone();
        more.push(extra);
        prop_assert!(suite_fitness(&more, 8) <= before + 1e-12);
        let oracle: f64 = (0..8u32)
            .map(|t| suite.iter().map(|v| dense(v, 8)[t as usize]).fold(1.0, f64::min))
            .sum();
        prop_assert!((before - oracle).abs() < 1e-9);
    }

    #[test]
    fn preference_front_is_never_dominated(pop in prop::collection::vec(sparse(5), 2..12)) {
        for &i in &preference_front(&pop) {
            for (j, other) in pop.iter().enumerate() {
                prop_assert!(j == i || !dominates(other, &pop[i]));
            }
        }
    }
}

#[test]
fn suite_covering_everything_has_zero_fitness() {
    let all: Vec<(u32, f64)> = (0..5).map(|t| (t, 0.0)).collect();
    assert_eq!(suite_fitness(&[all], 5), 0.0);
    assert_eq!(suite_fitness(&[vec![]], 5), 5.0);
}

#[test]
fn search_invariants_hold_on_logged_runs() {
    let t = v1();
    let mut cfg = RunConfig::new(ToolId::Mio, 3, Budget::Requests(2000));
    cfg.keep_log = false;
    let mio = run_tool(&t, &cfg).unwrap();
    assert_eq!(mio.trace.mio.len(), 2000);
    assert!(mio.trace.mio.iter().all(|s| s.max_population <= s.cap));
    assert!(mio.trace.mio.iter().filter(|s| s.focused).all(|s| s.cap == 1 && s.p_random == 0.0));
    assert!(mio.trace.mio.iter().any(|s| !s.sampled));

    cfg.tool = ToolId::Mosa;
    let mosa = run_tool(&t, &cfg).unwrap();
    assert!(mosa.trace.mosa.len() >= 30);
    assert!(mosa.trace.mosa.iter().all(|g| g.front0_dominated == 0));

    cfg.tool = ToolId::Wts;
    let wts = run_tool(&t, &cfg).unwrap();
    assert!(wts.trace.wts.len() >= 30);
    assert!(wts.trace.wts.windows(2).all(|w| w[1].best_fitness <= w[0].best_fitness));
}

#[test]
fn run_artifacts_round_trip() {
    let t = v1();
    let run = run_tool(&t, &RunConfig::new(ToolId::Wts, 8, Budget::Requests(120))).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run(&run, dir.path()).unwrap();
    assert_eq!(read_log(&dir.path().join("log.jsonl")).unwrap(), run.log);
    let files = std::fs::read_dir(dir.path().join("archive")).unwrap().count();
    assert_eq!(files, run.archive.len());
    let summary: Value = serde_json::from_slice(&std::fs::read(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(summary["requests"], json!(120));
}
