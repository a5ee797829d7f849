use dypol_core::gen::{attribute_pool, random_event, random_pap, random_request, random_tree, GenConfig};
use dypol_core::io::*;
use dypol_core::pap::PapSnapshot;
use dypol_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(rng: &mut ChaCha8Rng) -> GenConfig {
    GenConfig::small(attribute_pool(rng, 6))
}

fn effect() -> impl Strategy<Value = Effect> {
    prop_oneof![Just(Effect::Permit), Just(Effect::Deny)]
}

fn obligation() -> impl Strategy<Value = Obligation> {
    (
        "Os[0-9]{1,3}",
        effect(),
        "[A-Za-z][A-Za-z0-9 _&<>'-]{0,12}",
        prop::sample::select(ValueType::ALL.to_vec()),
        "[a-z]{1,8}",
    )
        .prop_map(|(id, fulfill_on, attribute_id, data_type, action)| Obligation {
            id,
            fulfill_on,
            attribute_id,
            data_type,
            action,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn policies_survive_xml(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config(&mut rng);
        let tree = random_tree(&mut rng, &cfg);
        let xml = serialize_policy(&tree);
        prop_assert_eq!(parse_policy(xml.as_bytes()).unwrap().root, tree);
    }

    #[test]
    fn requests_survive_json(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config(&mut rng);
        let req = random_request(&mut rng, &cfg.pool);
        let text = serialize_request(&req);
        prop_assert_eq!(parse_request(text.as_bytes()).unwrap(), req);
    }

    #[test]
    fn responses_survive_json(
        decision in prop::option::of(prop::sample::select(Decision::ALL.to_vec())),
        obligations in prop::collection::vec(obligation(), 0..4),
    ) {
        let resp = Response { decision, obligations };
        let text = serialize_response(&resp);
        prop_assert_eq!(parse_response(text.as_bytes()).unwrap(), resp);
    }

    #[test]
    fn events_survive_ndjson(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config(&mut rng);
        let snap = PapSnapshot::new(random_pap(&mut rng, &cfg, 3)).unwrap();
        let mut fresh = 0;
        let events: Vec<_> = (0..5).map(|_| random_event(&mut rng, &snap, &cfg, &mut fresh)).collect();
        let text: String = events.iter().map(|e| serialize_update_event(e) + "\n").collect();
        prop_assert!(!text.lines().any(|l| l.is_empty()));
        prop_assert_eq!(parse_update_events(&text).unwrap(), events);
    }
}
