use dypol_core::bench::*;
use dypol_core::io::serialize_policy;
use dypol_core::update::EngineMode;
use dypol_core::*;

fn small() -> BenchConfig {
    BenchConfig {
        sessions: 40,
        ..BenchConfig::default()
    }
}

#[test]
fn builtin_profiles_are_met_exactly() {
    for p in DatasetProfile::builtins() {
        for seed in 0..10 {
            let d = generate(&p, seed).unwrap();
            let shape = Shape::of(&d.snapshot);
            assert!(shape.matches(&p), "{} seed {seed}: {shape:?}", p.name);
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let p = DatasetProfile::synthetic_360();
    let text = |seed| serialize_policy(&generate_dataset(&p, seed).unwrap().trees()[0]);
    assert_eq!(text(7), text(7));
    assert_ne!(text(7), text(8));
}

#[test]
fn bad_profiles_are_rejected() {
    let mut p = DatasetProfile::kmarket();
    p.levels = 5;
    assert!(matches!(generate(&p, 0), Err(BenchError::InfeasibleProfile(_))));

    let mut p = DatasetProfile::kmarket();
    p.rules = 2;
    assert!(matches!(generate(&p, 0), Err(BenchError::InfeasibleProfile(_))));

    let mut p = DatasetProfile::geyser();
    p.function_mix.insert(FunctionClass::Other, 0.5);
    assert!(matches!(generate(&p, 0), Err(BenchError::InvalidProfile(_))));

    let mut p = DatasetProfile::geyser();
    p.levels = 1;
    assert!(matches!(generate(&p, 0), Err(BenchError::InvalidProfile(_))));
}

#[test]
fn profiles_read_from_json() {
    let text = r#"{"name":"tiny","levels":2,"policySets":1,"policies":2,"rules":3,"attributes":2,
        "functionMix":{"equality":0.5,"greater-than":0.5}}"#;
    let p: DatasetProfile = serde_json::from_str(text).unwrap();
    assert_eq!(p.algorithm_mix, AlgorithmMix::Uniform);
    let d = generate(&p, 3).unwrap();
    assert!(Shape::of(&d.snapshot).matches(&p));
    let back: DatasetProfile = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
    assert_eq!(back, p);
}

#[test]
fn every_testbed_agrees_across_engines() {
    for p in [DatasetProfile::kmarket(), DatasetProfile::geyser()] {
        let d = generate(&p, 1).unwrap();
        for t in Testbed::ALL {
            let (inc, base) = run_testbed(t, &d, 8, 1, &small()).unwrap();
            assert_eq!(inc.decisions_digest, base.decisions_digest);
            assert_eq!((inc.engine, base.engine), (EngineMode::Incremental, EngineMode::Baseline));
            assert!(inc.counters.evaluate_request <= base.counters.evaluate_request);
            if inc.unaffected > 0 {
                assert!(inc.counters.evaluate_request < base.counters.evaluate_request);
            }
        }
    }
}

#[test]
fn no_updates_means_idle_engines() {
    let d = generate(&DatasetProfile::kmarket(), 0).unwrap();
    let (inc, base) = run_testbed(Testbed::DeleteCondition, &d, 0, 0, &small()).unwrap();
    assert_eq!(inc.updates(), 0);
    assert_eq!(inc.decisions_digest, base.decisions_digest);
    assert_eq!(inc.counters, base.counters);
    let csv = report(&[inc, base]);
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().contains(",0,0,,"));
}

#[test]
fn insert_policy_costs_granted_sessions_nothing() {
    let d = generate(&DatasetProfile::geyser(), 0).unwrap();
    let cfg = BenchConfig {
        sessions: 30,
        granted_fraction: 1.0,
        ..BenchConfig::default()
    };
    let requests = request_corpus(&d.snapshot, &cfg, 0);
    let all_granted = requests
        .iter()
        .all(|r| evaluate_pap(r, d.snapshot.trees(), &EvalOptions::default()).unwrap().applied.is_some());
    assert!(all_granted);
    let (inc, base) = run_testbed(Testbed::InsertPolicy, &d, 5, 0, &cfg).unwrap();
    assert_eq!(inc.counters.evaluate_request, 30);
    assert_eq!(base.counters.evaluate_request, 30 * 6);
}

#[test]
fn corpus_mixes_granted_and_refused() {
    let d = generate(&DatasetProfile::geyser(), 2).unwrap();
    let requests = request_corpus(&d.snapshot, &small(), 4);
    assert_eq!(requests.len(), 40);
    let granted = requests
        .iter()
        .filter(|r| evaluate_pap(r, d.snapshot.trees(), &EvalOptions::default()).unwrap().applied.is_some())
        .count();
    assert_eq!(granted, 20);
}

fn result(engine: EngineMode, nanos: Vec<u64>) -> WorkloadResult {
    WorkloadResult {
        testbed: "delete-condition".into(),
        engine,
        dataset: "KMarket".into(),
        sessions: 1,
        wall_nanos_per_update: nanos,
        counters: Counters::new(1, 2, 2, 1, 0),
        unaffected: 0,
        decisions_digest: String::new(),
    }
}

#[test]
fn speedup_is_baseline_over_incremental_median() {
    let csv = report(&[
        result(EngineMode::Incremental, vec![10, 20, 30]),
        result(EngineMode::Baseline, vec![40, 40, 60]),
    ]);
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[5..9], ["20", "30", "2.000", "1.000"]);
    assert_eq!(&row[9..], ["1", "2", "2", "1", "0"]);
    assert_eq!(report(&[]), format!("{CSV_HEADER}\n"));
    assert!(gnuplot_data(&[
        result(EngineMode::Incremental, vec![10]),
        result(EngineMode::Baseline, vec![30]),
    ])
    .ends_with("delete-condition KMarket 10 30\n"));
}

#[test]
fn unknown_testbed_is_an_error() {
    assert!(matches!(Testbed::from_name("rename-policy"), Err(BenchError::UnknownTestbed(_))));
    for t in Testbed::ALL {
        assert_eq!(Testbed::from_name(t.name()).unwrap(), t);
    }
}
