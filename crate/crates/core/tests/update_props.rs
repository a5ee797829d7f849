use std::time::Duration;

use dypol_core::gen::{attribute_pool, random_event, random_pap, random_request, GenConfig, PoolEntry};
use dypol_core::pap::PapSnapshot;
use dypol_core::update::*;
use dypol_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Answer = Box<dyn FnMut(&str, &[Obligation], Duration) -> ObligationOutcome>;

/// Answers with the first pool value, except that every fifth session refuses.
fn answering(pool: Vec<PoolEntry>) -> FnService<Answer> {
    FnService(Box::new(move |session: &str, obligations: &[Obligation], _| {
        if session.ends_with('0') || session.ends_with('5') {
            return ObligationOutcome::Refused;
        }
        ObligationOutcome::Provided(
            obligations
                .iter()
                .filter_map(|o| {
                    let e = pool.iter().find(|e| e.attr.id == o.attribute_id)?;
                    Some((o.attribute_id.clone(), e.values[0].clone()))
                })
                .collect(),
        )
    }))
}

fn visible(s: &SessionRecord) -> impl PartialEq + std::fmt::Debug + '_ {
    (
        &s.request,
        s.decision,
        &s.applied,
        &s.non_applied,
        &s.rejected,
        &s.obligations,
        &s.obligations_issued,
        s.stale,
    )
}

fn run(seed: u64, sessions: usize, changes: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = attribute_pool(&mut rng, 2 + (seed % 4) as usize);
    let cfg = GenConfig::small(pool.clone());
    let trees = random_pap(&mut rng, &cfg, 1 + (seed % 4) as usize);
    let snap = PapSnapshot::new(trees).unwrap();
    let mode = |m| EngineConfig {
        mode: m,
        ..EngineConfig::default()
    };
    let mut inc = UpdateEngine::new(snap.clone(), answering(pool.clone()), mode(EngineMode::Incremental));
    let mut base = UpdateEngine::new(snap, answering(pool.clone()), mode(EngineMode::Baseline));
    for i in 0..sessions {
        let req = random_request(&mut rng, &pool);
        inc.open_session(&format!("s{i}"), req.clone()).unwrap();
        base.open_session(&format!("s{i}"), req).unwrap();
    }
    let mut fresh = 0;
    for step in 0..changes {
        let event = random_event(&mut rng, &inc.snapshot(), &cfg, &mut fresh);
        let before: Vec<SessionRecord> = inc.sessions().into_iter().cloned().collect();
        let report = inc.apply_event(&event).unwrap();
        base.apply_event(&event).unwrap();
        let snap = inc.snapshot();
        for (old, (a, b)) in before.iter().zip(inc.sessions().into_iter().zip(base.sessions())) {
            let ctx = format!("seed {seed} step {step} {} {event:?}", a.id);
            assert_eq!(visible(a), visible(b), "{ctx}");
            if !a.stale {
                let fresh_eval = evaluate_pap(&a.request, snap.trees(), &EvalOptions::default()).unwrap();
                assert_eq!(a.decision, fresh_eval.decision, "{ctx}");
                assert_eq!(a.applied, fresh_eval.applied, "{ctx}");
            }
            let spent = a.counters.evaluate_request - old.counters.evaluate_request;
            assert!(spent <= 1, "{ctx}");
            if !report.affected.contains(&a.id) {
                assert_eq!(spent, 0, "{ctx}");
                assert_eq!(a.decision, old.decision, "{ctx}");
            }
            assert!(a.counters.evaluate_request <= b.counters.evaluate_request, "{ctx}");
        }
    }
}

#[test]
fn fixed_seeds_agree() {
    for seed in 0..100 {
        run(seed, 20, 15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn incremental_matches_full_rescan(seed in any::<u64>()) {
        run(seed, 16, 12);
    }
}
