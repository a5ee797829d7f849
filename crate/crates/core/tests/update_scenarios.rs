use dypol_core::io::{RuleEdit, UpdateEvent};
use dypol_core::pap::PapSnapshot;
use dypol_core::scenario::*;
use dypol_core::update::*;
use dypol_core::*;

fn engine<S: ObligationService>(service: S, mode: EngineMode) -> UpdateEngine<S> {
    let config = EngineConfig {
        mode,
        ..EngineConfig::default()
    };
    let mut e = UpdateEngine::new(PapSnapshot::new(vec![example_policy()]).unwrap(), service, config);
    assert_eq!(
        e.open_session("s1", nurse_request()).unwrap().decision,
        Some(Decision::Permit)
    );
    e
}

fn nurse() -> UpdateEngine<StaticService> {
    engine(StaticService::default(), EngineMode::Incremental)
}

fn counters(e: &UpdateEngine<impl ObligationService>) -> [u64; 5] {
    e.session("s1").unwrap().counters.as_tuple()
}

fn decision(e: &UpdateEngine<impl ObligationService>) -> Decision {
    e.session("s1").unwrap().decision
}

fn insert_department_rule() -> UpdateEvent {
    UpdateEvent::InsertRule {
        target: "P".into(),
        rule: department_rule(),
    }
}

fn with_department(dept: &str) -> StaticService {
    StaticService::providing([(DEPARTMENT.to_string(), AttributeValue::string(dept))])
}

#[test]
fn deleting_the_applied_policy_leaves_nothing_applicable() {
    let mut e = nurse();
    let report = e.apply_event(&UpdateEvent::DeletePolicy { target: "P".into() }).unwrap();
    assert_eq!(decision(&e), Decision::NotApplicable);
    assert_eq!(counters(&e), [1, 2, 2, 1, 0]);
    assert_eq!(report.change_type, ChangeType::DeletePolicy);
    assert_eq!(report.affected, ["s1"]);
}

#[test]
fn inserting_an_unrelated_policy_skips_granted_sessions() {
    let mut e = nurse();
    let report = e
        .apply_event(&UpdateEvent::InsertPolicy {
            parent: None,
            policy: doctor_policy(),
        })
        .unwrap();
    assert_eq!(decision(&e), Decision::Permit);
    assert_eq!(counters(&e), [1, 2, 1, 0, 0]);
    assert!(report.affected.is_empty());
}

#[test]
fn deleting_the_age_rule_keeps_the_permit() {
    let mut e = nurse();
    e.apply_event(&UpdateEvent::DeleteRule { target: "R4".into() }).unwrap();
    assert_eq!(decision(&e), Decision::Permit);
    assert_eq!(counters(&e), [1, 2, 2, 1, 0]);
}

#[test]
fn editing_the_age_rule_denies() {
    let mut e = nurse();
    let report = e
        .apply_event(&UpdateEvent::EditRule {
            target: "R4".into(),
            edit: RuleEdit::Replace(rule4_edited()),
        })
        .unwrap();
    assert_eq!(decision(&e), Decision::Deny);
    assert_eq!(counters(&e), [1, 2, 2, 1, 1]);
    assert_eq!(report.outcomes[0].attribute_request, None);
}

#[test]
fn inserted_rule_asks_for_the_department() {
    let mut e = engine(with_department(HEART_CENTER), EngineMode::Incremental);
    let report = e.apply_event(&insert_department_rule()).unwrap();
    assert_eq!(decision(&e), Decision::Permit);
    assert_eq!(counters(&e), [1, 2, 2, 1, 1]);
    let asked = report.outcomes[0].attribute_request.as_ref().unwrap();
    assert_eq!(asked.decision, None);
    assert_eq!(asked.obligations.len(), 1);
    let o = &asked.obligations[0];
    assert_eq!(
        (o.id.as_str(), o.fulfill_on, o.attribute_id.as_str(), o.data_type),
        ("Os1", Effect::Deny, DEPARTMENT, ValueType::String)
    );
    assert_eq!(e.session("s1").unwrap().obligations_issued.len(), 1);
    let dept = e.session("s1").unwrap().request.lookup(&department()).unwrap().to_vec();
    assert_eq!(dept, [AttributeValue::string(HEART_CENTER)]);
}

#[test]
fn another_department_is_denied() {
    let mut e = engine(with_department("Oncology"), EngineMode::Incremental);
    e.apply_event(&insert_department_rule()).unwrap();
    assert_eq!(decision(&e), Decision::Deny);
}

#[test]
fn unanswered_obligation_is_indeterminate() {
    let mut e = engine(StaticService::default(), EngineMode::Incremental);
    e.apply_event(&insert_department_rule()).unwrap();
    let s = e.session("s1").unwrap();
    assert_eq!(s.decision, Decision::IndeterminateD);
    assert!(s.stale);
    assert_eq!(s.counters.as_tuple(), [1, 2, 1, 0, 0]);

    let mut e = engine(StaticService::refusing(), EngineMode::Incremental);
    e.apply_event(&insert_department_rule()).unwrap();
    assert_eq!(decision(&e), Decision::IndeterminateD);
}

#[test]
fn inserted_rule_with_attribute_present_needs_no_request() {
    let mut e = nurse();
    let req = nurse_request().with(
        AttributeCategory::Resource,
        DEPARTMENT,
        AttributeValue::string(HEART_CENTER),
    );
    e.open_session("s1", req).unwrap();
    let report = e.apply_event(&insert_department_rule()).unwrap();
    assert_eq!(decision(&e), Decision::Permit);
    assert_eq!(counters(&e), [1, 2, 2, 1, 0]);
    assert_eq!(report.outcomes[0].attribute_request, None);
}

#[test]
fn first_applicable_still_permits() {
    let mut e = nurse();
    e.apply_event(&UpdateEvent::SetCombiningAlg {
        target: "P".into(),
        algorithm: CombiningAlgorithm::FirstApplicable,
    })
    .unwrap();
    assert_eq!(decision(&e), Decision::Permit);
}

#[test]
fn baseline_counts_a_full_evaluation_without_filtering() {
    let events = [
        UpdateEvent::DeletePolicy { target: "P".into() },
        UpdateEvent::InsertPolicy {
            parent: None,
            policy: doctor_policy(),
        },
        UpdateEvent::DeleteRule { target: "R4".into() },
        UpdateEvent::EditRule {
            target: "R4".into(),
            edit: RuleEdit::Replace(rule4_edited()),
        },
    ];
    for event in events {
        let mut e = engine(StaticService::default(), EngineMode::Baseline);
        e.apply_event(&event).unwrap();
        assert_eq!(counters(&e), [1, 2, 2, 0, 0], "{event:?}");
    }
}

#[test]
fn set_effect_warns() {
    let mut e = nurse();
    let report = e
        .apply_event(&UpdateEvent::SetEffect {
            target: "R6".into(),
            effect: Effect::Deny,
        })
        .unwrap();
    assert_eq!(report.warnings.len(), 1);
    assert_eq!(decision(&e), Decision::Deny);
}

#[test]
fn audit_line_is_one_json_object() {
    let mut e = nurse();
    let report = e.apply_event(&UpdateEvent::DeleteRule { target: "R4".into() }).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report.audit_line()).unwrap();
    assert_eq!(v["changeType"], "delete-rule");
    assert_eq!(v["affectedSessions"][0], "s1");
    assert_eq!(v["counters"]["evaluateRequest"], 1);
}

#[test]
fn registry_drops_the_least_recently_touched() {
    let config = EngineConfig {
        capacity: 2,
        ..EngineConfig::default()
    };
    let mut e = UpdateEngine::new(
        PapSnapshot::new(vec![example_policy()]).unwrap(),
        StaticService::default(),
        config,
    );
    for id in ["a", "b"] {
        e.open_session(id, nurse_request()).unwrap();
    }
    e.contact("a", nurse_request()).unwrap();
    e.open_session("c", nurse_request()).unwrap();
    assert!(e.session("a").is_some());
    assert!(e.session("b").is_none());
    assert_eq!(e.len(), 2);
}

#[test]
fn deleting_the_granting_tree_rescans_only_later_trees() {
    let fallback = PolicyNode::Policy(Policy {
        id: "C".into(),
        rules: vec![Rule::new("C1", Effect::Deny)],
        algorithm: CombiningAlgorithm::FirstApplicable,
        target: Target::any(),
        obligations: vec![],
    });
    let snap = PapSnapshot::new(vec![doctor_policy(), example_policy(), fallback]).unwrap();
    let mut e = UpdateEngine::new(snap, StaticService::default(), EngineConfig::default());
    e.open_session("s1", nurse_request()).unwrap();
    let s = e.session("s1").unwrap();
    assert_eq!((s.applied.as_deref(), s.non_applied.as_slice()), (Some("P"), &["Q".to_string()][..]));

    e.apply_event(&UpdateEvent::DeletePolicy { target: "P".into() }).unwrap();
    let s = e.session("s1").unwrap();
    assert_eq!(s.decision, Decision::Deny);
    assert_eq!(s.applied.as_deref(), Some("C"));
    assert_eq!(s.counters.as_tuple(), [1, 2, 2, 1, 0]);
}
