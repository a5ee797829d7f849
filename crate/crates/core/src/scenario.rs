//! The hospital running example: policy `P` (six rules under
//! deny-overrides), the canonical nurse request, and the update fragments
//! used by the update scenarios.
//!
//! Constraints are written in their deny-triggering orientation, so each of
//! `R1`..`R5` fires only when the request violates the access requirement.

use crate::model::*;

pub const ROLE: &str = "role";
pub const ACTION_ID: &str = "action-id";
pub const RESOURCE_TYPE: &str = "resource-type";
pub const CURRENT_TIME: &str = "current-time";
pub const CURRENT_PLACE: &str = "current-place";
pub const ADDRESS: &str = "address";
pub const AGE: &str = "age";
pub const DISEASE: &str = "disease";
pub const DEPARTMENT: &str = "Department";

pub const PATIENT_ROOM: &str = "patients' room";
pub const PATIENT_RECORD: &str = "patients' record";
pub const HEART_CENTER: &str = "Heart Center";
/// Age used by the canonical request; any value above 50 works.
pub const NURSE_AGE: i64 = 55;

pub fn role() -> AttributeRef {
    AttributeRef::new(AttributeCategory::Subject, ROLE, ValueType::String)
}
pub fn action_id() -> AttributeRef {
    AttributeRef::new(AttributeCategory::Action, ACTION_ID, ValueType::String)
}
pub fn resource_type() -> AttributeRef {
    AttributeRef::new(AttributeCategory::Resource, RESOURCE_TYPE, ValueType::String)
}
pub fn current_time() -> AttributeRef {
    AttributeRef::new(AttributeCategory::Environment, CURRENT_TIME, ValueType::Time)
}
pub fn current_place() -> AttributeRef {
    AttributeRef::new(AttributeCategory::Environment, CURRENT_PLACE, ValueType::String)
}
pub fn address() -> AttributeRef {
    AttributeRef::new(AttributeCategory::Resource, ADDRESS, ValueType::String)
}
pub fn age() -> AttributeRef {
    AttributeRef::new(AttributeCategory::Resource, AGE, ValueType::Integer)
}
pub fn disease() -> AttributeRef {
    AttributeRef::new(AttributeCategory::Resource, DISEASE, ValueType::String)
}
pub fn department() -> AttributeRef {
    AttributeRef::new(AttributeCategory::Resource, DEPARTMENT, ValueType::String)
}

fn string_eq(attr: AttributeRef, literal: &str) -> Predicate {
    Predicate::new(attr, MatchFunction::StringEqual, AttributeValue::string(literal))
}

fn time(h: u32, m: u32) -> AttributeValue {
    AttributeValue::Time(TimeOfDay::hm(h, m).expect("valid clock time"))
}

fn deny(id: &str, condition: Condition) -> Rule {
    Rule::new(id, Effect::Deny).with_condition(condition)
}

/// `R1`: outside 08:00..20:00.
pub fn rule1() -> Rule {
    deny(
        "R1",
        Condition::Or(vec![
            Condition::Predicate(Predicate::new(
                current_time(),
                MatchFunction::TimeGreaterThan,
                time(20, 0),
            )),
            Condition::Predicate(Predicate::new(
                current_time(),
                MatchFunction::TimeLessThan,
                time(8, 0),
            )),
        ]),
    )
}

/// `R2`: not in the patients' room.
pub fn rule2() -> Rule {
    deny(
        "R2",
        Condition::not(Condition::Predicate(string_eq(current_place(), PATIENT_ROOM))),
    )
}

/// `R3`: address outside the southern provinces.
pub fn rule3() -> Rule {
    deny(
        "R3",
        Condition::not(Condition::Predicate(Predicate::in_set(
            address(),
            ["Can Tho", "Ho Chi Minh", "Ca Mau"],
        ))),
    )
}

/// `R4`: patient younger than 16 (strict).
pub fn rule4() -> Rule {
    deny(
        "R4",
        Condition::Predicate(Predicate::new(
            age(),
            MatchFunction::IntegerLessThan,
            AttributeValue::Integer(16),
        )),
    )
}

/// `R4` after the edit scenario: age greater than 16 now denies.
pub fn rule4_edited() -> Rule {
    deny(
        "R4",
        Condition::Predicate(Predicate::new(
            age(),
            MatchFunction::IntegerGreaterThan,
            AttributeValue::Integer(16),
        )),
    )
}

/// `R5`: disease other than hypertension.
pub fn rule5() -> Rule {
    deny(
        "R5",
        Condition::not(Condition::Predicate(string_eq(disease(), "Hypertension"))),
    )
}

/// `R6`: unconditional permit.
pub fn rule6() -> Rule {
    Rule::new("R6", Effect::Permit)
}

/// Rule inserted by the insert-rule scenario: deny unless the department is
/// the heart center.
pub fn department_rule() -> Rule {
    deny(
        "R7",
        Condition::not(Condition::Predicate(string_eq(department(), HEART_CENTER))),
    )
}

pub fn example_target() -> Target {
    Target::all([
        string_eq(role(), "nurse"),
        string_eq(resource_type(), PATIENT_RECORD),
        string_eq(action_id(), "read"),
    ])
}

pub fn example_policy_body() -> Policy {
    Policy {
        id: "P".into(),
        rules: vec![rule1(), rule2(), rule3(), rule4(), rule5(), rule6()],
        algorithm: CombiningAlgorithm::DenyOverrides,
        target: example_target(),
        obligations: vec![],
    }
}

/// Policy `P`.
pub fn example_policy() -> PolicyNode {
    PolicyNode::Policy(example_policy_body())
}

/// The nurse reading a hypertension patient's record at 08:00 in the
/// patients' room.
pub fn nurse_request() -> Request {
    Request::new()
        .with(AttributeCategory::Subject, ROLE, AttributeValue::string("nurse"))
        .with(AttributeCategory::Action, ACTION_ID, AttributeValue::string("read"))
        .with(
            AttributeCategory::Resource,
            RESOURCE_TYPE,
            AttributeValue::string(PATIENT_RECORD),
        )
        .with(AttributeCategory::Resource, AGE, AttributeValue::Integer(NURSE_AGE))
        .with(AttributeCategory::Resource, ADDRESS, AttributeValue::string("Ho Chi Minh"))
        .with(AttributeCategory::Resource, DISEASE, AttributeValue::string("Hypertension"))
        .with(AttributeCategory::Environment, CURRENT_TIME, time(8, 0))
        .with(
            AttributeCategory::Environment,
            CURRENT_PLACE,
            AttributeValue::string(PATIENT_ROOM),
        )
}

/// A second top-level policy used by the insert-policy scenario: doctors may
/// read everything.
pub fn doctor_policy() -> PolicyNode {
    PolicyNode::Policy(Policy {
        id: "Q".into(),
        rules: vec![Rule::new("Q1", Effect::Permit)],
        algorithm: CombiningAlgorithm::PermitOverrides,
        target: Target::all([string_eq(role(), "doctor")]),
        obligations: vec![],
    })
}
