use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rulebench::corpus::{
    generate_corpus, generate_production_trace, guard_probability, load_version, production_profile, tally_trace,
    write_corpus, CorpusSpec, ANCHOR_AGGREGATION_ID, ANCHOR_VALIDATION_ID, FAULT_FIXTURE_ID,
};
use rulebench::dsl::{diff_rule_sets, parse_rule_set, serialize_rule_set, Expr, RuleType};
use rulebench::metrics::{compare_to_production, rule_result_metrics, ProductionProfile, ResultVector};

const COUNTS: [(usize, usize); 10] =
    [(30, 32), (31, 33), (48, 35), (49, 35), (53, 37), (56, 37), (66, 38), (69, 43), (69, 43), (70, 43)];

#[test]
fn versions_have_published_counts_and_parse() {
    let versions = generate_corpus(&CorpusSpec::default(), 7).unwrap();
    assert_eq!(versions.len(), 10);
    for (v, counts) in versions.iter().zip(COUNTS) {
        assert_eq!(v.rule_counts(), counts, "{}", v.version_id);
        let text = serialize_rule_set(v);
        let back = parse_rule_set(&text).unwrap();
        assert_eq!(&back, v);
        assert_eq!(back.rule_counts(), counts);
        assert!(v.rule_type_of(ANCHOR_VALIDATION_ID).is_some());
        assert!(v.rule_type_of(ANCHOR_AGGREGATION_ID).is_some());
        assert!(v.rule_type_of(FAULT_FIXTURE_ID).is_some());
    }
}

#[test]
fn consecutive_versions_differ() {
    let versions = generate_corpus(&CorpusSpec::default(), 7).unwrap();
    for w in versions.windows(2) {
        assert!(!diff_rule_sets(&w[0], &w[1]).is_empty(), "{} -> {}", w[0].version_id, w[1].version_id);
    }
    let d = diff_rule_sets(&versions[0], &versions[1]);
    assert_eq!(d.validation.added.len() as i64 - d.validation.removed.len() as i64, 1);
    let last = diff_rule_sets(&versions[8], &versions[9]);
    assert_eq!(last.validation.added.len(), 1);
    assert!(last.validation.removed.is_empty() && last.validation.modified.is_empty());
    assert!(last.aggregation.is_empty());
}

#[test]
fn generated_guards_lie_in_the_probability_band() {
    for p in [0.05, 0.1, 0.2] {
        let versions = generate_corpus(&CorpusSpec::with_guard_p(p), 3).unwrap();
        for v in &versions {
            for r in &v.validation_rules {
                if r.id == ANCHOR_VALIDATION_ID || r.id == FAULT_FIXTURE_ID {
                    continue;
                }
                let Expr::And(conjuncts) = &r.guard else { panic!("{} guard is not a conjunction", r.id) };
                assert!((2..=4).contains(&conjuncts.len()));
                assert!(r.guard.depth() <= 4);
                let prob = guard_probability(&r.guard, &v.schema).unwrap();
                assert!(prob >= p / 2.0 - 1e-12 && prob <= 2.0 * p + 1e-12, "{}: {prob}", r.id);
            }
        }
    }
}

#[test]
fn generation_is_deterministic_and_rejects_infeasible_p() {
    let spec = CorpusSpec::default();
    assert_eq!(generate_corpus(&spec, 11).unwrap(), generate_corpus(&spec, 11).unwrap());
    assert!(generate_corpus(&CorpusSpec::with_guard_p(0.0), 1).is_err());
    assert!(generate_corpus(&CorpusSpec::with_guard_p(1e-9), 1).is_err());
}

#[test]
fn corpus_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let versions = generate_corpus(&CorpusSpec::default(), 5).unwrap();
    write_corpus(dir.path(), &versions).unwrap();
    for v in &versions {
        assert_eq!(&load_version(dir.path(), &v.version_id).unwrap(), v);
    }
    assert!(dir.path().join("production_profile.toml").exists());
}

#[test]
fn production_profile_fixture() {
    let p = production_profile();
    assert_eq!(p, production_profile());
    assert!((p.validation.sum() - 100.0).abs() < 0.01);
    assert!((p.aggregation.sum() - 100.0).abs() < 0.01);
    assert_eq!(p.aggregation.pass, 99.8835781985487);
    assert_eq!(compare_to_production(&p, &p).validation, 0.0);
}

#[test]
fn all_not_applied_distance_matches_hand_computation() {
    let p = production_profile();
    let all_not_applied = ProductionProfile {
        validation: ResultVector { not_applied: 100.0, ..Default::default() },
        aggregation: p.aggregation,
    };
    // (|0 - 26.1918| + 0.0536 + 0.0000066 + |100 - 73.7546| + 0) / 2
    let expected = (26.1918255485415 + 0.0535950998398514 + 6.55323984204683e-06 + (100.0 - 73.7545727983788)) / 2.0;
    let d = compare_to_production(&all_not_applied, &p);
    assert!((d.validation - expected).abs() < 1e-9);
    assert!((d.validation - 26.25).abs() < 0.05);
    assert_eq!(d.aggregation, 0.0);
    assert_eq!(compare_to_production(&p, &all_not_applied).validation, d.validation);
}

#[test]
fn production_trace_converges_to_profile() {
    let v10 = generate_corpus(&CorpusSpec::default(), 1).unwrap().pop().unwrap();
    let p = production_profile();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let trace = generate_production_trace(&v10, &p, 100_000, &mut rng);
    assert_eq!(trace.len(), 100_000);
    let m = rule_result_metrics(&tally_trace(&trace), &v10).unwrap();
    for ty in RuleType::ALL {
        let got = m.for_type(ty).mean.to_array();
        let want = p.for_type(ty).to_array();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1.0, "{ty:?}: {got:?} vs {want:?}");
        }
    }
    let pass = m.validation.mean.pass;
    assert!((25.2..=27.2).contains(&pass));

    let mut a = ChaCha8Rng::seed_from_u64(3);
    let mut b = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(generate_production_trace(&v10, &p, 1000, &mut a), generate_production_trace(&v10, &p, 1000, &mut b));

    let all_pass = ProductionProfile {
        validation: ResultVector { pass: 100.0, ..Default::default() },
        aggregation: ResultVector { pass: 100.0, ..Default::default() },
    };
    let t = generate_production_trace(&v10, &all_pass, 1000, &mut a);
    assert!(t.iter().all(|e| e.result == rulebench::engine::ExecutionResult::Pass));
}
