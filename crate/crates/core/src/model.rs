//! Policy, request and response model.
//!
//! A policy tree is `PolicySet -> (PolicySet | Policy)* -> Rule*`. Every
//! element may carry a [`Target`]; rules additionally carry a single
//! [`Condition`]. All values are immutable once built and can be shared
//! freely between evaluation threads.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// The four XACML attribute categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeCategory {
    Subject,
    Action,
    Resource,
    Environment,
}

impl AttributeCategory {
    pub const ALL: [AttributeCategory; 4] = [
        AttributeCategory::Subject,
        AttributeCategory::Action,
        AttributeCategory::Resource,
        AttributeCategory::Environment,
    ];

    /// Key used in request documents.
    pub fn key(self) -> &'static str {
        match self {
            AttributeCategory::Subject => "subject",
            AttributeCategory::Action => "action",
            AttributeCategory::Resource => "resource",
            AttributeCategory::Environment => "environment",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.key() == key)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AttributeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Tag of an [`AttributeValue`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ValueType {
    String,
    Integer,
    Boolean,
    Time,
    Date,
}

impl ValueType {
    pub const ALL: [ValueType; 5] = [
        ValueType::String,
        ValueType::Integer,
        ValueType::Boolean,
        ValueType::Time,
        ValueType::Date,
    ];

    /// Capitalised name, as used in obligation tuples (`String`, `Integer`, ...).
    pub fn name(self) -> &'static str {
        match self {
            ValueType::String => "String",
            ValueType::Integer => "Integer",
            ValueType::Boolean => "Boolean",
            ValueType::Time => "Time",
            ValueType::Date => "Date",
        }
    }

    /// Lower-case key used in request documents.
    pub fn key(self) -> &'static str {
        match self {
            ValueType::String => "string",
            ValueType::Integer => "integer",
            ValueType::Boolean => "boolean",
            ValueType::Time => "time",
            ValueType::Date => "date",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == name || t.key() == name)
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Seconds since midnight, `0..86400`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeOfDay(u32);

impl TimeOfDay {
    pub const SECONDS_PER_DAY: u32 = 86_400;

    pub fn from_seconds(seconds: u32) -> Option<Self> {
        (seconds < Self::SECONDS_PER_DAY).then_some(TimeOfDay(seconds))
    }

    pub fn hm(hour: u32, minute: u32) -> Option<Self> {
        if hour < 24 && minute < 60 {
            Self::from_seconds(hour * 3600 + minute * 60)
        } else {
            None
        }
    }

    pub fn seconds(self) -> u32 {
        self.0
    }

    /// Accepts `HH:MM`, `HH:MM:SS` (24-hour) and `H:MM AM` / `H:MM PM`.
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        let upper = text.to_ascii_uppercase();
        let (clock, meridiem) = if let Some(rest) = upper.strip_suffix("AM") {
            (rest.trim_end().to_string(), Some(false))
        } else if let Some(rest) = upper.strip_suffix("PM") {
            (rest.trim_end().to_string(), Some(true))
        } else {
            (upper, None)
        };
        let mut parts = clock.split(':');
        let hour: u32 = parts.next()?.trim().parse().ok()?;
        let minute: u32 = parts.next()?.trim().parse().ok()?;
        let second: u32 = match parts.next() {
            Some(s) => s.trim().parse().ok()?,
            None => 0,
        };
        if parts.next().is_some() || minute >= 60 || second >= 60 {
            return None;
        }
        let hour = match meridiem {
            None if hour < 24 => hour,
            Some(pm) if (1..=12).contains(&hour) => (hour % 12) + if pm { 12 } else { 0 },
            _ => return None,
        };
        Self::from_seconds(hour * 3600 + minute * 60 + second)
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (h, m, s) = (self.0 / 3600, (self.0 / 60) % 60, self.0 % 60);
        if s == 0 {
            write!(f, "{h:02}:{m:02}")
        } else {
            write!(f, "{h:02}:{m:02}:{s:02}")
        }
    }
}

/// A typed attribute value. Comparisons are only defined between values
/// carrying the same tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttributeValue {
    String(String),
    Integer(i64),
    Boolean(bool),
    Time(TimeOfDay),
    Date(NaiveDate),
}

impl AttributeValue {
    pub fn string(s: impl Into<String>) -> Self {
        AttributeValue::String(s.into())
    }

    pub fn value_type(&self) -> ValueType {
        match self {
            AttributeValue::String(_) => ValueType::String,
            AttributeValue::Integer(_) => ValueType::Integer,
            AttributeValue::Boolean(_) => ValueType::Boolean,
            AttributeValue::Time(_) => ValueType::Time,
            AttributeValue::Date(_) => ValueType::Date,
        }
    }

    /// Parses the lexical form used by both XML and JSON documents.
    pub fn parse(data_type: ValueType, text: &str) -> Option<Self> {
        let text = text.trim();
        Some(match data_type {
            ValueType::String => AttributeValue::String(text.to_string()),
            ValueType::Integer => AttributeValue::Integer(text.parse().ok()?),
            ValueType::Boolean => AttributeValue::Boolean(match text {
                "true" => true,
                "false" => false,
                _ => return None,
            }),
            ValueType::Time => AttributeValue::Time(TimeOfDay::parse(text)?),
            ValueType::Date => {
                AttributeValue::Date(NaiveDate::parse_from_str(text, "%Y-%m-%d").ok()?)
            }
        })
    }

    /// Lexical form accepted back by [`AttributeValue::parse`].
    pub fn lexical(&self) -> String {
        match self {
            AttributeValue::String(s) => s.clone(),
            AttributeValue::Integer(i) => i.to_string(),
            AttributeValue::Boolean(b) => b.to_string(),
            AttributeValue::Time(t) => t.to_string(),
            AttributeValue::Date(d) => d.format("%Y-%m-%d").to_string(),
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeValue::String(s) => write!(f, "{s:?}"),
            other => f.write_str(&other.lexical()),
        }
    }
}

/// Names one attribute of one category.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttributeRef {
    pub category: AttributeCategory,
    pub id: String,
    pub data_type: ValueType,
}

impl AttributeRef {
    pub fn new(category: AttributeCategory, id: impl Into<String>, data_type: ValueType) -> Self {
        AttributeRef {
            category,
            id: id.into(),
            data_type,
        }
    }
}

impl fmt::Display for AttributeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.category, self.id)
    }
}

/// Closed set of predicate functions. Every function reads as
/// `attribute-value OP literal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MatchFunction {
    StringEqual,
    IntegerEqual,
    IntegerGreaterThan,
    IntegerLessThan,
    TimeGreaterThan,
    TimeLessThan,
    /// The attribute value is a member of the literal string set.
    StringIsInSet,
    DateEqual,
}

impl MatchFunction {
    pub const ALL: [MatchFunction; 8] = [
        MatchFunction::StringEqual,
        MatchFunction::IntegerEqual,
        MatchFunction::IntegerGreaterThan,
        MatchFunction::IntegerLessThan,
        MatchFunction::TimeGreaterThan,
        MatchFunction::TimeLessThan,
        MatchFunction::StringIsInSet,
        MatchFunction::DateEqual,
    ];

    pub fn operand_type(self) -> ValueType {
        match self {
            MatchFunction::StringEqual | MatchFunction::StringIsInSet => ValueType::String,
            MatchFunction::IntegerEqual
            | MatchFunction::IntegerGreaterThan
            | MatchFunction::IntegerLessThan => ValueType::Integer,
            MatchFunction::TimeGreaterThan | MatchFunction::TimeLessThan => ValueType::Time,
            MatchFunction::DateEqual => ValueType::Date,
        }
    }

    pub fn is_equality(self) -> bool {
        matches!(
            self,
            MatchFunction::StringEqual | MatchFunction::IntegerEqual | MatchFunction::DateEqual
        )
    }

    /// Suffix of the XACML function identifier.
    pub fn uri_suffix(self) -> &'static str {
        match self {
            MatchFunction::StringEqual => "string-equal",
            MatchFunction::IntegerEqual => "integer-equal",
            MatchFunction::IntegerGreaterThan => "integer-greater-than",
            MatchFunction::IntegerLessThan => "integer-less-than",
            MatchFunction::TimeGreaterThan => "time-greater-than",
            MatchFunction::TimeLessThan => "time-less-than",
            MatchFunction::StringIsInSet => "string-at-least-one-member-of",
            MatchFunction::DateEqual => "date-equal",
        }
    }

    pub fn from_uri(uri: &str) -> Option<Self> {
        let suffix = uri.rsplit(':').next()?;
        Self::ALL.into_iter().find(|f| f.uri_suffix() == suffix)
    }

    fn symbol(self) -> &'static str {
        match self {
            MatchFunction::StringEqual | MatchFunction::IntegerEqual | MatchFunction::DateEqual => {
                "=="
            }
            MatchFunction::IntegerGreaterThan | MatchFunction::TimeGreaterThan => ">",
            MatchFunction::IntegerLessThan | MatchFunction::TimeLessThan => "<",
            MatchFunction::StringIsInSet => "in",
        }
    }
}

/// Right-hand side of a predicate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operand {
    Value(AttributeValue),
    StringSet(BTreeSet<String>),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Value(v) => write!(f, "{v}"),
            Operand::StringSet(set) => {
                f.write_str("{")?;
                for (i, s) in set.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{s:?}")?;
                }
                f.write_str("}")
            }
        }
    }
}

/// One typed comparison between a request attribute and a literal. Used both
/// as a target `Match` and as a condition leaf.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Predicate {
    pub attr: AttributeRef,
    pub function: MatchFunction,
    pub operand: Operand,
}

/// A target match element.
pub type Match = Predicate;

impl Predicate {
    pub fn new(attr: AttributeRef, function: MatchFunction, literal: AttributeValue) -> Self {
        Predicate {
            attr,
            function,
            operand: Operand::Value(literal),
        }
    }

    pub fn in_set<I, S>(attr: AttributeRef, members: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Predicate {
            attr,
            function: MatchFunction::StringIsInSet,
            operand: Operand::StringSet(members.into_iter().map(Into::into).collect()),
        }
    }

    /// Whether function, attribute type and literal agree on one value tag.
    pub fn is_well_typed(&self) -> bool {
        let tag = self.function.operand_type();
        if self.attr.data_type != tag {
            return false;
        }
        match (&self.operand, self.function) {
            (Operand::StringSet(_), MatchFunction::StringIsInSet) => true,
            (Operand::StringSet(_), _) | (_, MatchFunction::StringIsInSet) => false,
            (Operand::Value(v), _) => v.value_type() == tag,
        }
    }

    /// Applies the predicate to a single attribute value. Values with a
    /// different tag never satisfy it.
    pub fn holds_for(&self, value: &AttributeValue) -> bool {
        use AttributeValue as V;
        use MatchFunction as F;
        match (&self.operand, self.function, value) {
            (Operand::StringSet(set), F::StringIsInSet, V::String(v)) => set.contains(v),
            (Operand::Value(V::String(l)), F::StringEqual, V::String(v)) => v == l,
            (Operand::Value(V::Integer(l)), F::IntegerEqual, V::Integer(v)) => v == l,
            (Operand::Value(V::Integer(l)), F::IntegerGreaterThan, V::Integer(v)) => v > l,
            (Operand::Value(V::Integer(l)), F::IntegerLessThan, V::Integer(v)) => v < l,
            (Operand::Value(V::Time(l)), F::TimeGreaterThan, V::Time(v)) => v > l,
            (Operand::Value(V::Time(l)), F::TimeLessThan, V::Time(v)) => v < l,
            (Operand::Value(V::Date(l)), F::DateEqual, V::Date(v)) => v == l,
            _ => false,
        }
    }

    /// Bag semantics: holds if any value of the attribute satisfies it.
    pub fn holds_any(&self, values: &[AttributeValue]) -> bool {
        values.iter().any(|v| self.holds_for(v))
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.attr, self.function.symbol(), self.operand)
    }
}

/// Conjunction of matches.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AllOf {
    pub matches: Vec<Match>,
}

/// Disjunction of [`AllOf`]s.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnyOf {
    pub all_ofs: Vec<AllOf>,
}

/// Conjunction of [`AnyOf`]s; empty matches every request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Target {
    pub any_ofs: Vec<AnyOf>,
}

impl Target {
    pub fn any() -> Self {
        Target::default()
    }

    /// Target made of single-match `AnyOf`s, all of which must hold.
    pub fn all(matches: impl IntoIterator<Item = Match>) -> Self {
        Target {
            any_ofs: matches
                .into_iter()
                .map(|m| AnyOf {
                    all_ofs: vec![AllOf { matches: vec![m] }],
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.any_ofs.is_empty()
    }

    pub fn predicates(&self) -> impl Iterator<Item = &Predicate> {
        self.any_ofs
            .iter()
            .flat_map(|a| a.all_ofs.iter())
            .flat_map(|a| a.matches.iter())
    }
}

/// Boolean expression refining a rule's applicability.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub enum Condition {
    #[default]
    True,
    Predicate(Predicate),
    And(Vec<Condition>),
    Or(Vec<Condition>),
    Not(Box<Condition>),
}

impl Condition {
    pub fn not(inner: Condition) -> Self {
        Condition::Not(Box::new(inner))
    }

    pub fn predicates(&self) -> Vec<&Predicate> {
        let mut out = Vec::new();
        self.collect_predicates(&mut out);
        out
    }

    fn collect_predicates<'a>(&'a self, out: &mut Vec<&'a Predicate>) {
        match self {
            Condition::True => {}
            Condition::Predicate(p) => out.push(p),
            Condition::And(cs) | Condition::Or(cs) => {
                cs.iter().for_each(|c| c.collect_predicates(out))
            }
            Condition::Not(c) => c.collect_predicates(out),
        }
    }

    /// Distinct attributes referenced, in first-occurrence order.
    pub fn attributes(&self) -> Vec<&AttributeRef> {
        let mut seen = HashSet::new();
        self.predicates()
            .into_iter()
            .map(|p| &p.attr)
            .filter(|a| seen.insert(*a))
            .collect()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn join(f: &mut fmt::Formatter<'_>, op: &str, cs: &[Condition]) -> fmt::Result {
            f.write_str("(")?;
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    write!(f, " {op} ")?;
                }
                write!(f, "{c}")?;
            }
            f.write_str(")")
        }
        match self {
            Condition::True => f.write_str("true"),
            Condition::Predicate(p) => write!(f, "{p}"),
            Condition::And(cs) => join(f, "and", cs),
            Condition::Or(cs) => join(f, "or", cs),
            Condition::Not(c) => write!(f, "not {c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Effect {
    Permit,
    Deny,
}

impl Effect {
    pub fn name(self) -> &'static str {
        match self {
            Effect::Permit => "Permit",
            Effect::Deny => "Deny",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "Permit" => Some(Effect::Permit),
            "Deny" => Some(Effect::Deny),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Effect::Permit => Effect::Deny,
            Effect::Deny => Effect::Permit,
        }
    }

    pub fn decision(self) -> Decision {
        match self {
            Effect::Permit => Decision::Permit,
            Effect::Deny => Decision::Deny,
        }
    }

    /// The extended indeterminate this effect degrades to.
    pub fn indeterminate(self) -> Decision {
        match self {
            Effect::Permit => Decision::IndeterminateP,
            Effect::Deny => Decision::IndeterminateD,
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub id: String,
    pub target: Target,
    pub condition: Condition,
    pub effect: Effect,
}

impl Rule {
    pub fn new(id: impl Into<String>, effect: Effect) -> Self {
        Rule {
            id: id.into(),
            target: Target::any(),
            condition: Condition::True,
            effect,
        }
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = target;
        self
    }

    pub fn with_condition(mut self, condition: Condition) -> Self {
        self.condition = condition;
        self
    }
}

/// `(OID, FF, AID, DT, Ac)`: an action the enforcement point carries out when
/// the final decision equals `fulfill_on`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Obligation {
    pub id: String,
    pub fulfill_on: Effect,
    pub attribute_id: String,
    pub data_type: ValueType,
    pub action: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CombiningAlgorithm {
    DenyOverrides,
    PermitOverrides,
    DenyUnlessPermit,
    PermitUnlessDeny,
    FirstApplicable,
    OnlyOneApplicable,
}

impl CombiningAlgorithm {
    pub const ALL: [CombiningAlgorithm; 6] = [
        CombiningAlgorithm::DenyOverrides,
        CombiningAlgorithm::PermitOverrides,
        CombiningAlgorithm::DenyUnlessPermit,
        CombiningAlgorithm::PermitUnlessDeny,
        CombiningAlgorithm::FirstApplicable,
        CombiningAlgorithm::OnlyOneApplicable,
    ];

    /// Algorithms usable for combining rules inside a `Policy`.
    pub const RULE_LEVEL: [CombiningAlgorithm; 5] = [
        CombiningAlgorithm::DenyOverrides,
        CombiningAlgorithm::PermitOverrides,
        CombiningAlgorithm::DenyUnlessPermit,
        CombiningAlgorithm::PermitUnlessDeny,
        CombiningAlgorithm::FirstApplicable,
    ];

    /// Last segment of the XACML identifier, e.g. `deny-overrides`.
    pub fn name(self) -> &'static str {
        match self {
            CombiningAlgorithm::DenyOverrides => "deny-overrides",
            CombiningAlgorithm::PermitOverrides => "permit-overrides",
            CombiningAlgorithm::DenyUnlessPermit => "deny-unless-permit",
            CombiningAlgorithm::PermitUnlessDeny => "permit-unless-deny",
            CombiningAlgorithm::FirstApplicable => "first-applicable",
            CombiningAlgorithm::OnlyOneApplicable => "only-one-applicable",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            CombiningAlgorithm::DenyOverrides => "dov",
            CombiningAlgorithm::PermitOverrides => "pov",
            CombiningAlgorithm::DenyUnlessPermit => "dup",
            CombiningAlgorithm::PermitUnlessDeny => "pud",
            CombiningAlgorithm::FirstApplicable => "fa",
            CombiningAlgorithm::OnlyOneApplicable => "ooa",
        }
    }

    /// Accepts the bare name, the short code, or a full URI ending in the name.
    pub fn from_name(name: &str) -> Option<Self> {
        let last = name.rsplit(':').next().unwrap_or(name);
        Self::ALL
            .into_iter()
            .find(|a| a.name() == last || a.short() == last)
    }

    pub fn rule_uri(self) -> String {
        format!(
            "urn:oasis:names:tc:xacml:3.0:rule-combining-algorithm:{}",
            self.name()
        )
    }

    pub fn policy_uri(self) -> String {
        format!(
            "urn:oasis:names:tc:xacml:3.0:policy-combining-algorithm:{}",
            self.name()
        )
    }
}

impl fmt::Display for CombiningAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy {
    pub id: String,
    pub rules: Vec<Rule>,
    pub algorithm: CombiningAlgorithm,
    pub target: Target,
    pub obligations: Vec<Obligation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PolicySet {
    pub id: String,
    pub children: Vec<PolicyNode>,
    pub algorithm: CombiningAlgorithm,
    pub target: Target,
    pub obligations: Vec<Obligation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PolicyNode {
    Policy(Policy),
    PolicySet(PolicySet),
}

impl PolicyNode {
    pub fn id(&self) -> &str {
        match self {
            PolicyNode::Policy(p) => &p.id,
            PolicyNode::PolicySet(s) => &s.id,
        }
    }

    pub fn target(&self) -> &Target {
        match self {
            PolicyNode::Policy(p) => &p.target,
            PolicyNode::PolicySet(s) => &s.target,
        }
    }

    pub fn algorithm(&self) -> CombiningAlgorithm {
        match self {
            PolicyNode::Policy(p) => p.algorithm,
            PolicyNode::PolicySet(s) => s.algorithm,
        }
    }

    pub fn obligations(&self) -> &[Obligation] {
        match self {
            PolicyNode::Policy(p) => &p.obligations,
            PolicyNode::PolicySet(s) => &s.obligations,
        }
    }

    /// Number of PolicySet/Policy levels; a lone `Policy` has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            PolicyNode::Policy(_) => 1,
            PolicyNode::PolicySet(s) => 1 + s.children.iter().map(|c| c.depth()).max().unwrap_or(0),
        }
    }

    /// Pre-order walk over all policy and policy-set nodes.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a PolicyNode)) {
        f(self);
        if let PolicyNode::PolicySet(s) = self {
            for c in &s.children {
                c.walk(f);
            }
        }
    }

    pub fn rules(&self) -> Vec<&Rule> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let PolicyNode::Policy(p) = n {
                out.extend(p.rules.iter());
            }
        });
        out
    }

    /// Every element id in the tree (sets, policies and rules), pre-order.
    pub fn ids(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            out.push(n.id().to_string());
            if let PolicyNode::Policy(p) = n {
                out.extend(p.rules.iter().map(|r| r.id.clone()));
            }
        });
        out
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.ids().iter().any(|i| i == id)
    }

    pub fn find(&self, id: &str) -> Option<&PolicyNode> {
        if self.id() == id {
            return Some(self);
        }
        match self {
            PolicyNode::Policy(_) => None,
            PolicyNode::PolicySet(s) => s.children.iter().find_map(|c| c.find(id)),
        }
    }

    pub fn find_mut(&mut self, id: &str) -> Option<&mut PolicyNode> {
        if self.id() == id {
            return Some(self);
        }
        match self {
            PolicyNode::Policy(_) => None,
            PolicyNode::PolicySet(s) => s.children.iter_mut().find_map(|c| c.find_mut(id)),
        }
    }

    /// The policy holding rule `rule_id`.
    pub fn policy_of_rule_mut(&mut self, rule_id: &str) -> Option<&mut Policy> {
        match self {
            PolicyNode::Policy(p) => p.rules.iter().any(|r| r.id == rule_id).then_some(p),
            PolicyNode::PolicySet(s) => s
                .children
                .iter_mut()
                .find_map(|c| c.policy_of_rule_mut(rule_id)),
        }
    }

    /// Attributes referenced by any rule condition, first-occurrence order.
    pub fn condition_attributes(&self) -> Vec<AttributeRef> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for rule in self.rules() {
            for a in rule.condition.attributes() {
                if seen.insert(a.clone()) {
                    out.push(a.clone());
                }
            }
        }
        out
    }

    /// Every predicate in targets and conditions, pre-order.
    pub fn predicates(&self) -> Vec<&Predicate> {
        let mut out: Vec<&Predicate> = Vec::new();
        self.walk(&mut |n| {
            out.extend(n.target().predicates());
            if let PolicyNode::Policy(p) = n {
                for r in &p.rules {
                    out.extend(r.target.predicates());
                    out.extend(r.condition.predicates());
                }
            }
        });
        out
    }
}

/// Request attribute bag for one category.
pub type Bag = BTreeMap<String, Vec<AttributeValue>>;

/// `(Sr, Ar, Rr, Er)`: four bags of attribute values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Request {
    bags: [Bag; 4],
}

impl Request {
    pub fn new() -> Self {
        Request::default()
    }

    pub fn with(mut self, category: AttributeCategory, id: &str, value: AttributeValue) -> Self {
        self.push(category, id, value);
        self
    }

    pub fn push(&mut self, category: AttributeCategory, id: &str, value: AttributeValue) {
        self.bags[category.index()]
            .entry(id.to_string())
            .or_default()
            .push(value);
    }

    /// Replaces the values of an attribute; an empty list removes it.
    pub fn set(&mut self, category: AttributeCategory, id: &str, values: Vec<AttributeValue>) {
        let bag = &mut self.bags[category.index()];
        if values.is_empty() {
            bag.remove(id);
        } else {
            bag.insert(id.to_string(), values);
        }
    }

    pub fn bag(&self, category: AttributeCategory) -> &Bag {
        &self.bags[category.index()]
    }

    pub fn get(&self, category: AttributeCategory, id: &str) -> Option<&[AttributeValue]> {
        self.bags[category.index()]
            .get(id)
            .map(Vec::as_slice)
            .filter(|v| !v.is_empty())
    }

    pub fn lookup(&self, attr: &AttributeRef) -> Option<&[AttributeValue]> {
        self.get(attr.category, &attr.id)
    }

    pub fn contains(&self, attr: &AttributeRef) -> bool {
        self.lookup(attr).is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.iter().all(|b| b.is_empty())
    }
}

/// Six-valued decision with extended indeterminates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Decision {
    Permit,
    Deny,
    NotApplicable,
    IndeterminateP,
    IndeterminateD,
    IndeterminatePD,
}

impl Decision {
    pub const ALL: [Decision; 6] = [
        Decision::Permit,
        Decision::Deny,
        Decision::NotApplicable,
        Decision::IndeterminateP,
        Decision::IndeterminateD,
        Decision::IndeterminatePD,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Decision::Permit => "Permit",
            Decision::Deny => "Deny",
            Decision::NotApplicable => "NotApplicable",
            Decision::IndeterminateP => "IndeterminateP",
            Decision::IndeterminateD => "IndeterminateD",
            Decision::IndeterminatePD => "IndeterminatePD",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == name)
    }

    pub fn is_indeterminate(self) -> bool {
        matches!(
            self,
            Decision::IndeterminateP | Decision::IndeterminateD | Decision::IndeterminatePD
        )
    }

    /// Permit or Deny.
    pub fn is_definite(self) -> bool {
        matches!(self, Decision::Permit | Decision::Deny)
    }

    pub fn effect(self) -> Option<Effect> {
        match self {
            Decision::Permit => Some(Effect::Permit),
            Decision::Deny => Some(Effect::Deny),
            _ => None,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `(D, Os)`. A response without a decision is an attribute request: it only
/// carries obligations the requester has to fulfil first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub decision: Option<Decision>,
    pub obligations: Vec<Obligation>,
}

impl Response {
    pub fn decided(decision: Decision, obligations: Vec<Obligation>) -> Self {
        Response {
            decision: Some(decision),
            obligations,
        }
    }

    pub fn bare(decision: Decision) -> Self {
        Response::decided(decision, Vec::new())
    }

    pub fn attribute_request(obligations: Vec<Obligation>) -> Self {
        Response {
            decision: None,
            obligations,
        }
    }
}

/// One broken invariant, naming the offending element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub element: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.message)
    }
}

/// Checks every structural invariant of a policy tree. Never fails; an empty
/// list means the tree is valid.
pub fn validate(node: &PolicyNode) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    validate_node(node, &mut seen, &mut out);
    out
}

fn violation(out: &mut Vec<Violation>, element: &str, message: impl Into<String>) {
    out.push(Violation {
        element: element.to_string(),
        message: message.into(),
    });
}

fn check_id<'a>(id: &'a str, seen: &mut HashSet<&'a str>, out: &mut Vec<Violation>) {
    if id.is_empty() {
        violation(out, id, "identifier must not be empty");
    } else if !seen.insert(id) {
        violation(out, id, format!("duplicate identifier {id}"));
    }
}

fn validate_predicate(owner: &str, p: &Predicate, out: &mut Vec<Violation>) {
    if p.attr.id.is_empty() {
        violation(out, owner, "attribute id must not be empty");
    }
    if !p.is_well_typed() {
        let literal = match &p.operand {
            Operand::Value(v) => v.value_type().name().to_string(),
            Operand::StringSet(_) => "string set".to_string(),
        };
        violation(
            out,
            owner,
            format!(
                "type mismatch: {} expects {}, attribute {} is {}, literal is {}",
                p.function.uri_suffix(),
                p.function.operand_type(),
                p.attr,
                p.attr.data_type,
                literal
            ),
        );
    }
}

fn validate_target(owner: &str, t: &Target, out: &mut Vec<Violation>) {
    for any in &t.any_ofs {
        if any.all_ofs.is_empty() {
            violation(out, owner, "AnyOf must contain at least one AllOf");
        }
        for all in &any.all_ofs {
            if all.matches.is_empty() {
                violation(out, owner, "AllOf must contain at least one Match");
            }
            for m in &all.matches {
                validate_predicate(owner, m, out);
            }
        }
    }
}

fn validate_condition(owner: &str, c: &Condition, out: &mut Vec<Violation>) {
    match c {
        Condition::True => {}
        Condition::Predicate(p) => validate_predicate(owner, p, out),
        Condition::And(cs) | Condition::Or(cs) => {
            if cs.is_empty() {
                violation(out, owner, "And/Or condition must have at least one operand");
            }
            cs.iter().for_each(|c| validate_condition(owner, c, out));
        }
        Condition::Not(c) => validate_condition(owner, c, out),
    }
}

fn validate_node<'a>(node: &'a PolicyNode, seen: &mut HashSet<&'a str>, out: &mut Vec<Violation>) {
    check_id(node.id(), seen, out);
    validate_target(node.id(), node.target(), out);
    match node {
        PolicyNode::Policy(p) => {
            if p.rules.is_empty() {
                violation(out, &p.id, "policy must contain at least one rule");
            }
            if p.algorithm == CombiningAlgorithm::OnlyOneApplicable {
                violation(
                    out,
                    &p.id,
                    "only-one-applicable is only valid as a policy combining algorithm",
                );
            }
            for r in &p.rules {
                check_id(&r.id, seen, out);
                validate_target(&r.id, &r.target, out);
                validate_condition(&r.id, &r.condition, out);
            }
        }
        PolicyNode::PolicySet(s) => {
            if s.children.is_empty() {
                violation(out, &s.id, "policy set must contain at least one child");
            }
            for c in &s.children {
                validate_node(c, seen, out);
            }
        }
    }
    for o in node.obligations() {
        if o.id.is_empty() || o.attribute_id.is_empty() {
            violation(out, node.id(), "obligation id and attribute id must not be empty");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario;

    fn attr(id: &str, t: ValueType) -> AttributeRef {
        AttributeRef::new(AttributeCategory::Resource, id, t)
    }

    #[test]
    fn example_policy_is_valid() {
        assert!(validate(&scenario::example_policy()).is_empty());
    }

    #[test]
    fn empty_policy_is_rejected() {
        let node = PolicyNode::Policy(Policy {
            id: "P".into(),
            rules: vec![],
            algorithm: CombiningAlgorithm::DenyOverrides,
            target: Target::any(),
            obligations: vec![],
        });
        let v = validate(&node);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "policy must contain at least one rule");
        assert_eq!(v[0].element, "P");
    }

    #[test]
    fn integer_function_with_string_literal_is_a_type_mismatch() {
        let bad = Predicate::new(
            attr("age", ValueType::Integer),
            MatchFunction::IntegerGreaterThan,
            AttributeValue::string("old"),
        );
        let node = PolicyNode::Policy(Policy {
            id: "P".into(),
            rules: vec![Rule::new("R", Effect::Deny).with_condition(Condition::Predicate(bad))],
            algorithm: CombiningAlgorithm::DenyOverrides,
            target: Target::any(),
            obligations: vec![],
        });
        let v = validate(&node);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].element, "R");
        assert!(v[0].message.starts_with("type mismatch"), "{}", v[0]);
    }

    #[test]
    fn duplicate_ids_and_ooa_on_rules() {
        let node = PolicyNode::PolicySet(PolicySet {
            id: "S".into(),
            children: vec![PolicyNode::Policy(Policy {
                id: "S".into(),
                rules: vec![Rule::new("R", Effect::Permit), Rule::new("R", Effect::Deny)],
                algorithm: CombiningAlgorithm::OnlyOneApplicable,
                target: Target::any(),
                obligations: vec![],
            })],
            algorithm: CombiningAlgorithm::OnlyOneApplicable,
            target: Target::any(),
            obligations: vec![],
        });
        let msgs: Vec<String> = validate(&node).iter().map(|v| v.message.clone()).collect();
        assert_eq!(msgs.len(), 3, "{msgs:?}");
        assert!(msgs.iter().any(|m| m.contains("only-one-applicable")));
        assert_eq!(msgs.iter().filter(|m| m.starts_with("duplicate")).count(), 2);
    }

    #[test]
    fn time_parsing() {
        assert_eq!(TimeOfDay::parse("8:00 AM").unwrap().seconds(), 28_800);
        assert_eq!(TimeOfDay::parse("08:00").unwrap().seconds(), 28_800);
        assert_eq!(TimeOfDay::parse("8:00 PM").unwrap().seconds(), 72_000);
        assert_eq!(TimeOfDay::parse("12:30 AM").unwrap().seconds(), 1_800);
        assert_eq!(TimeOfDay::parse("12:00 PM").unwrap().seconds(), 43_200);
        assert_eq!(TimeOfDay::parse("23:59:59").unwrap().seconds(), 86_399);
        assert!(TimeOfDay::parse("24:00").is_none());
        assert!(TimeOfDay::parse("13:00 PM").is_none());
        assert!(TimeOfDay::from_seconds(86_400).is_none());
        assert_eq!(TimeOfDay::hm(21, 30).unwrap().to_string(), "21:30");
    }

    #[test]
    fn predicates_only_compare_identical_tags() {
        let p = Predicate::new(
            attr("age", ValueType::Integer),
            MatchFunction::IntegerLessThan,
            AttributeValue::Integer(16),
        );
        assert!(p.holds_for(&AttributeValue::Integer(15)));
        assert!(!p.holds_for(&AttributeValue::Integer(16)));
        assert!(!p.holds_for(&AttributeValue::string("15")));
        let s = Predicate::in_set(attr("city", ValueType::String), ["Can Tho", "Ca Mau"]);
        assert!(s.is_well_typed());
        assert!(s.holds_any(&[AttributeValue::string("x"), AttributeValue::string("Ca Mau")]));
        assert!(!s.holds_any(&[]));
    }

    #[test]
    fn decision_has_six_values() {
        let mut names: Vec<_> = Decision::ALL.iter().map(|d| d.name()).collect();
        names.dedup();
        assert_eq!(names.len(), 6);
        for d in Decision::ALL {
            let definite = match d {
                Decision::Permit | Decision::Deny => true,
                Decision::NotApplicable
                | Decision::IndeterminateP
                | Decision::IndeterminateD
                | Decision::IndeterminatePD => false,
            };
            assert_eq!(d.is_definite(), definite);
            assert_eq!(Decision::from_name(d.name()), Some(d));
        }
    }
}
