//! Synthetic datasets shaped like well-known policy corpora, the five update
//! testbeds, and paired incremental/full-reload runs over them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::{evaluate_pap, Counters, EvalOptions};
use crate::gen::PoolEntry;
use crate::io::{parse_policy, parse_request, serialize_policy, serialize_request, RuleEdit, UpdateEvent};
use crate::model::*;
use crate::pap::PapSnapshot;
use crate::update::{
    EngineConfig, EngineMode, ObligationOutcome, ObligationService, UpdateEngine, UpdateError,
};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("infeasible profile: {0}")]
    InfeasibleProfile(String),
    #[error("unknown testbed {0:?}")]
    UnknownTestbed(String),
    #[error("engines disagree on {testbed}/{dataset}: incremental {incremental}, baseline {baseline}")]
    DigestMismatch {
        testbed: String,
        dataset: String,
        incremental: String,
        baseline: String,
    },
    #[error(transparent)]
    Update(#[from] UpdateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionClass {
    Equality,
    GreaterThan,
    LessThan,
    /// Ordered comparisons in either direction and set membership.
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmMix {
    Uniform,
    Fixed(CombiningAlgorithm),
}

/// Shape of a generated dataset: one root policy set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetProfile {
    pub name: String,
    /// Policy set / policy nesting levels, the root counting as one.
    pub levels: usize,
    pub policy_sets: usize,
    pub policies: usize,
    pub rules: usize,
    /// Distinct attributes referenced by predicates.
    pub attributes: usize,
    pub function_mix: BTreeMap<FunctionClass, f64>,
    #[serde(default = "uniform")]
    pub algorithm_mix: AlgorithmMix,
}

fn uniform() -> AlgorithmMix {
    AlgorithmMix::Uniform
}

impl DatasetProfile {
    fn builtin(
        name: &str,
        [levels, policy_sets, policies, rules, attributes]: [usize; 5],
        mix: &[(FunctionClass, f64)],
    ) -> Self {
        DatasetProfile {
            name: name.into(),
            levels,
            policy_sets,
            policies,
            rules,
            attributes,
            function_mix: mix.iter().copied().collect(),
            algorithm_mix: AlgorithmMix::Uniform,
        }
    }

    pub fn synthetic_360() -> Self {
        Self::builtin(
            "Synthetic-360",
            [4, 31, 72, 360, 10],
            &[(FunctionClass::Equality, 0.8), (FunctionClass::Other, 0.2)],
        )
    }

    pub fn geyser() -> Self {
        Self::builtin("GEYSER", [3, 6, 7, 33, 3], &[(FunctionClass::Equality, 1.0)])
    }

    pub fn kmarket() -> Self {
        Self::builtin(
            "KMarket",
            [2, 1, 3, 12, 4],
            &[(FunctionClass::Equality, 0.588), (FunctionClass::GreaterThan, 0.412)],
        )
    }

    pub fn continue_a() -> Self {
        Self::builtin("Continue-a", [6, 111, 266, 298, 14], &[(FunctionClass::Equality, 1.0)])
    }

    pub fn builtins() -> Vec<Self> {
        vec![Self::synthetic_360(), Self::geyser(), Self::kmarket(), Self::continue_a()]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::builtins().into_iter().find(|p| p.name.eq_ignore_ascii_case(name))
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidProfile(format!("{}: {m}", self.name)));
        if self.levels < 2 {
            return bad("levels must be at least 2");
        }
        if [self.policy_sets, self.policies, self.rules, self.attributes].contains(&0) {
            return bad("counts must be positive");
        }
        if self.function_mix.values().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("fractions must lie in [0, 1]");
        }
        let total: f64 = self.function_mix.values().sum();
        if (total - 1.0).abs() > 1e-6 {
            return bad("function fractions must sum to 1");
        }
        if let AlgorithmMix::Fixed(CombiningAlgorithm::OnlyOneApplicable) = self.algorithm_mix {
            return bad("only-one-applicable cannot combine rules");
        }
        Ok(())
    }
}

/// A generated store together with the attributes and literals it uses.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub profile: DatasetProfile,
    pub snapshot: PapSnapshot,
    pub pool: Vec<PoolEntry>,
}

/// Counts as the profile defines them, measured on a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub levels: usize,
    pub policy_sets: usize,
    pub policies: usize,
    pub rules: usize,
    pub attributes: usize,
}

impl Shape {
    pub fn of(snapshot: &PapSnapshot) -> Self {
        let mut shape = Shape {
            levels: 0,
            policy_sets: 0,
            policies: 0,
            rules: 0,
            attributes: 0,
        };
        let mut attrs = std::collections::BTreeSet::new();
        for t in snapshot.trees() {
            shape.levels = shape.levels.max(t.depth());
            t.walk(&mut |n| match n {
                PolicyNode::PolicySet(_) => shape.policy_sets += 1,
                PolicyNode::Policy(p) => {
                    shape.policies += 1;
                    shape.rules += p.rules.len();
                }
            });
            attrs.extend(t.predicates().into_iter().map(|p| p.attr.clone()));
        }
        shape.attributes = attrs.len();
        shape
    }

    pub fn matches(&self, p: &DatasetProfile) -> bool {
        *self
            == Shape {
                levels: p.levels,
                policy_sets: p.policy_sets,
                policies: p.policies,
                rules: p.rules,
                attributes: p.attributes,
            }
    }
}

struct PredicateMaker<'a> {
    pool: &'a [PoolEntry],
    mix: Vec<(FunctionClass, f64)>,
}

impl PredicateMaker<'_> {
    fn class(&self, rng: &mut impl Rng) -> FunctionClass {
        let mut x: f64 = rng.gen();
        for (c, f) in &self.mix {
            if x < *f {
                return *c;
            }
            x -= f;
        }
        self.mix.last().map_or(FunctionClass::Equality, |(c, _)| *c)
    }

    fn compatible(class: FunctionClass, t: ValueType) -> bool {
        match class {
            FunctionClass::Equality | FunctionClass::Other => true,
            FunctionClass::GreaterThan | FunctionClass::LessThan => t == ValueType::Integer,
        }
    }

    /// A predicate over `entry`, or over an attribute suiting the drawn
    /// function class when no entry is forced.
    fn make(&self, rng: &mut impl Rng, entry: Option<&PoolEntry>) -> Predicate {
        let mut class = self.class(rng);
        let e = match entry {
            Some(e) => {
                if !Self::compatible(class, e.attr.data_type) {
                    class = FunctionClass::Equality;
                }
                e
            }
            None => {
                let fits: Vec<&PoolEntry> = self
                    .pool
                    .iter()
                    .filter(|e| Self::compatible(class, e.attr.data_type))
                    .collect();
                match fits.choose(rng) {
                    Some(e) => e,
                    None => {
                        class = FunctionClass::Equality;
                        self.pool.choose(rng).expect("non-empty pool")
                    }
                }
            }
        };
        let attr = e.attr.clone();
        let literal = e.values.choose(rng).expect("values").clone();
        let integer = attr.data_type == ValueType::Integer;
        match class {
            FunctionClass::Equality if integer => Predicate::new(attr, MatchFunction::IntegerEqual, literal),
            FunctionClass::Equality => Predicate::new(attr, MatchFunction::StringEqual, literal),
            FunctionClass::GreaterThan => Predicate::new(attr, MatchFunction::IntegerGreaterThan, literal),
            FunctionClass::LessThan => Predicate::new(attr, MatchFunction::IntegerLessThan, literal),
            FunctionClass::Other if integer => {
                let f = if rng.gen_bool(0.5) {
                    MatchFunction::IntegerGreaterThan
                } else {
                    MatchFunction::IntegerLessThan
                };
                Predicate::new(attr, f, literal)
            }
            FunctionClass::Other => {
                let mut members: Vec<String> = e.values.iter().map(|v| v.lexical()).collect();
                members.shuffle(rng);
                members.truncate(2);
                Predicate::in_set(attr, members)
            }
        }
    }

    /// Equality on a random attribute, for targets.
    fn equality(&self, rng: &mut impl Rng) -> Predicate {
        let e = self.pool.choose(rng).expect("non-empty pool");
        let f = match e.attr.data_type {
            ValueType::Integer => MatchFunction::IntegerEqual,
            _ => MatchFunction::StringEqual,
        };
        Predicate::new(e.attr.clone(), f, e.values.choose(rng).expect("values").clone())
    }

    fn condition(&self, rng: &mut impl Rng, forced: &[&PoolEntry], extra: usize) -> Condition {
        let mut preds: Vec<Condition> = forced
            .iter()
            .map(|e| Condition::Predicate(self.make(rng, Some(e))))
            .collect();
        preds.extend((0..extra).map(|_| Condition::Predicate(self.make(rng, None))));
        match preds.len() {
            1 => preds.pop().expect("one predicate"),
            _ => Condition::And(preds),
        }
    }
}

fn dataset_pool(profile: &DatasetProfile) -> Vec<PoolEntry> {
    let ordered: f64 = profile
        .function_mix
        .iter()
        .filter(|(c, _)| **c != FunctionClass::Equality)
        .map(|(_, f)| f)
        .sum();
    let numeric = if ordered > 0.0 {
        ((profile.attributes as f64 * ordered).round() as usize).clamp(1, profile.attributes)
    } else {
        0
    };
    (0..profile.attributes)
        .map(|i| {
            let id = format!("attr{i}");
            if i < profile.attributes - numeric {
                PoolEntry {
                    attr: AttributeRef::new(AttributeCategory::ALL[i % 4], id, ValueType::String),
                    values: (0..4).map(|j| AttributeValue::string(format!("a{i}v{j}"))).collect(),
                }
            } else {
                PoolEntry {
                    attr: AttributeRef::new(AttributeCategory::ALL[i % 4], id, ValueType::Integer),
                    values: (1..=4).map(|j| AttributeValue::Integer(10 * j)).collect(),
                }
            }
        })
        .collect()
}

/// Root algorithms that can leave a request not applicable.
const ROOT_ALGORITHMS: [CombiningAlgorithm; 3] = [
    CombiningAlgorithm::DenyOverrides,
    CombiningAlgorithm::PermitOverrides,
    CombiningAlgorithm::FirstApplicable,
];

enum Slot {
    Set(Vec<usize>, Vec<usize>),
    Leaf,
}

/// Generates a dataset matching every count of `profile`.
pub fn generate(profile: &DatasetProfile, seed: u64) -> Result<Dataset, BenchError> {
    profile.validate()?;
    let infeasible = |m: String| Err(BenchError::InfeasibleProfile(format!("{}: {m}", profile.name)));
    let (levels, sets, policies, rules) = (profile.levels, profile.policy_sets, profile.policies, profile.rules);
    if sets < levels - 1 {
        return infeasible(format!("{levels} levels need at least {} policy sets", levels - 1));
    }
    if levels == 2 && sets > 1 {
        return infeasible("two levels allow only the root policy set".into());
    }
    if rules < policies {
        return infeasible("every policy needs a rule".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Set skeleton: set i has a level, child sets and child policies.
    let mut level = vec![1usize];
    let mut child_sets: Vec<Vec<usize>> = vec![vec![]];
    for i in 1..levels - 1 {
        level.push(i + 1);
        child_sets.push(vec![]);
        child_sets[i - 1].push(i);
    }
    let mut leaves = 0usize;
    let leaf_budget = policies - 1;
    for i in levels - 1..sets {
        let hosts: Vec<usize> = (0..i).filter(|&s| level[s] < levels - 1).collect();
        let empty: Vec<usize> = hosts
            .iter()
            .copied()
            .filter(|&s| child_sets[s].is_empty() && s != levels - 2)
            .collect();
        let parent = if !empty.is_empty() && (leaves >= leaf_budget || rng.gen_bool(0.5)) {
            *empty.choose(&mut rng).expect("non-empty")
        } else {
            *hosts.choose(&mut rng).expect("root hosts")
        };
        if child_sets[parent].is_empty() && parent != levels - 2 {
            leaves -= 1;
        }
        level.push(level[parent] + 1);
        child_sets.push(vec![]);
        child_sets[parent].push(i);
        leaves += 1;
    }
    let mut child_policies: Vec<Vec<usize>> = vec![vec![]; sets];
    child_policies[levels - 2].push(0);
    let mut next_policy = 1;
    for s in 0..sets {
        if child_sets[s].is_empty() && child_policies[s].is_empty() {
            if next_policy == policies {
                return infeasible("too few policies to fill every policy set".into());
            }
            child_policies[s].push(next_policy);
            next_policy += 1;
        }
    }
    for p in next_policy..policies {
        child_policies[rng.gen_range(0..sets)].push(p);
    }
    let mut rule_counts = vec![1usize; policies];
    for _ in policies..rules {
        rule_counts[rng.gen_range(0..policies)] += 1;
    }

    // Predicates: the first `attributes` slots cover each attribute once.
    let pool = dataset_pool(profile);
    let maker = PredicateMaker {
        pool: &pool,
        mix: profile.function_mix.iter().map(|(c, f)| (*c, *f)).collect(),
    };
    let mut per_rule: Vec<usize> = (0..rules).map(|_| rng.gen_range(1..=2)).collect();
    let mut total: usize = per_rule.iter().sum();
    let mut k = 0;
    while total < pool.len() {
        per_rule[k % rules] += 1;
        total += 1;
        k += 1;
    }
    let mut forced: Vec<&PoolEntry> = pool.iter().collect();
    forced.shuffle(&mut rng);
    let mut forced = forced.into_iter();

    let rule_alg = |rng: &mut ChaCha8Rng| match profile.algorithm_mix {
        AlgorithmMix::Fixed(a) => a,
        AlgorithmMix::Uniform => *CombiningAlgorithm::RULE_LEVEL.choose(rng).expect("non-empty"),
    };
    let set_alg = |rng: &mut ChaCha8Rng| match profile.algorithm_mix {
        AlgorithmMix::Fixed(a) => a,
        AlgorithmMix::Uniform => *CombiningAlgorithm::ALL.choose(rng).expect("non-empty"),
    };
    let mut rule_id = 0;
    let mut built: Vec<Option<PolicyNode>> = vec![None; policies];
    for (p, slot) in built.iter_mut().enumerate() {
        let mut rs = Vec::new();
        for _ in 0..rule_counts[p] {
            let n = per_rule[rule_id];
            let f: Vec<&PoolEntry> = forced.by_ref().take(n).collect();
            let effect = if rng.gen_bool(0.5) { Effect::Permit } else { Effect::Deny };
            let condition = maker.condition(&mut rng, &f, n - f.len());
            rs.push(Rule::new(format!("R{rule_id}"), effect).with_condition(condition));
            rule_id += 1;
        }
        let target = if rng.gen_bool(0.8) {
            Target::all([maker.equality(&mut rng)])
        } else {
            Target::any()
        };
        *slot = Some(PolicyNode::Policy(Policy {
            id: format!("P{p}"),
            rules: rs,
            algorithm: rule_alg(&mut rng),
            target,
            obligations: vec![],
        }));
    }
    let mut slots: Vec<Slot> = (0..sets)
        .map(|s| Slot::Set(child_sets[s].clone(), child_policies[s].clone()))
        .collect();
    fn build(
        s: usize,
        slots: &mut [Slot],
        policies: &mut [Option<PolicyNode>],
        rng: &mut ChaCha8Rng,
        set_alg: &dyn Fn(&mut ChaCha8Rng) -> CombiningAlgorithm,
        maker: &PredicateMaker,
    ) -> PolicyNode {
        let Slot::Set(sub, pols) = std::mem::replace(&mut slots[s], Slot::Leaf) else {
            unreachable!("each set is built once")
        };
        let mut children: Vec<PolicyNode> = sub
            .into_iter()
            .map(|c| build(c, slots, policies, rng, set_alg, maker))
            .collect();
        children.extend(pols.into_iter().map(|p| policies[p].take().expect("placed once")));
        children.shuffle(rng);
        let target = if s > 0 && rng.gen_bool(0.6) {
            Target::all([maker.equality(rng)])
        } else {
            Target::any()
        };
        let mut algorithm = set_alg(rng);
        if s == 0 && !ROOT_ALGORITHMS.contains(&algorithm) {
            algorithm = *ROOT_ALGORITHMS.choose(rng).expect("non-empty");
        }
        PolicyNode::PolicySet(PolicySet {
            id: format!("PS{s}"),
            children,
            algorithm,
            target,
            obligations: vec![],
        })
    }
    let root = build(0, &mut slots, &mut built, &mut rng, &set_alg, &maker);
    let snapshot = PapSnapshot::new(vec![root]).map_err(|e| BenchError::InvalidProfile(e.to_string()))?;
    Ok(Dataset {
        profile: profile.clone(),
        snapshot,
        pool,
    })
}

pub fn generate_dataset(profile: &DatasetProfile, seed: u64) -> Result<PapSnapshot, BenchError> {
    generate(profile, seed).map(|d| d.snapshot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Testbed {
    InsertPolicy,
    DeletePolicy,
    DeleteCondition,
    EditCondition,
    InsertCondition,
}

impl Testbed {
    pub const ALL: [Testbed; 5] = [
        Testbed::InsertPolicy,
        Testbed::DeletePolicy,
        Testbed::DeleteCondition,
        Testbed::EditCondition,
        Testbed::InsertCondition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Testbed::InsertPolicy => "insert-policy",
            Testbed::DeletePolicy => "delete-policy",
            Testbed::DeleteCondition => "delete-condition",
            Testbed::EditCondition => "edit-condition",
            Testbed::InsertCondition => "insert-condition",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, BenchError> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| BenchError::UnknownTestbed(name.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sessions: usize,
    /// Share of sessions whose request some tree grants.
    pub granted_fraction: f64,
    /// Probability that a request carries a given attribute.
    pub presence: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sessions: 200,
            granted_fraction: 0.5,
            presence: 0.97,
        }
    }
}

/// Requests over the store's literals plus out-of-range values, picked so
/// that about `granted_fraction` of them are granted.
pub fn request_corpus(snapshot: &PapSnapshot, cfg: &BenchConfig, seed: u64) -> Vec<Request> {
    let domains = crate::space::derive_domains(snapshot.trees().iter().map(|t| &**t));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let want_granted = (cfg.sessions as f64 * cfg.granted_fraction).round() as usize;
    let (mut granted, mut other) = (Vec::new(), Vec::new());
    for _ in 0..cfg.sessions * 50 {
        if granted.len() >= want_granted && other.len() >= cfg.sessions - want_granted {
            break;
        }
        let mut req = Request::new();
        for (attr, values) in &domains {
            if rng.gen_bool(cfg.presence) {
                req.push(attr.category, &attr.id, values.choose(&mut rng).expect("values").clone());
            }
        }
        let r = evaluate_pap(&req, snapshot.trees(), &EvalOptions::default()).expect("no filter");
        if r.applied.is_some() {
            granted.push(req);
        } else {
            other.push(req);
        }
    }
    let take_granted = want_granted.min(granted.len()).max(cfg.sessions.saturating_sub(other.len()));
    granted.truncate(take_granted);
    other.truncate(cfg.sessions - granted.len().min(cfg.sessions));
    granted.extend(other);
    granted.truncate(cfg.sessions);
    granted.shuffle(&mut rng);
    granted
}

fn deletable_policies(snapshot: &PapSnapshot) -> Vec<String> {
    let mut out = Vec::new();
    if snapshot.trees().len() > 1 {
        out.extend(snapshot.tree_ids());
    }
    for t in snapshot.trees() {
        t.walk(&mut |n| {
            if let PolicyNode::PolicySet(s) = n {
                if s.children.len() > 1 {
                    out.extend(s.children.iter().filter(|c| matches!(c, PolicyNode::Policy(_))).map(|c| c.id().to_string()));
                }
            }
        });
    }
    out
}

fn policies_of(snapshot: &PapSnapshot) -> Vec<&Policy> {
    let mut out = Vec::new();
    for t in snapshot.trees() {
        t.walk(&mut |n| {
            if let PolicyNode::Policy(p) = n {
                out.push(p);
            }
        });
    }
    out
}

/// The next change of `testbed`, or `None` once the store offers nothing to
/// change.
pub fn testbed_event(
    testbed: Testbed,
    dataset: &Dataset,
    snapshot: &PapSnapshot,
    rng: &mut ChaCha8Rng,
    serial: usize,
) -> Option<UpdateEvent> {
    let maker = PredicateMaker {
        pool: &dataset.pool,
        mix: dataset.profile.function_mix.iter().map(|(c, f)| (*c, *f)).collect(),
    };
    let policies = policies_of(snapshot);
    let new_rule = |rng: &mut ChaCha8Rng, id: String| {
        let effect = if rng.gen_bool(0.5) { Effect::Permit } else { Effect::Deny };
        let extra = rng.gen_range(1..=2);
        Rule::new(id, effect).with_condition(maker.condition(rng, &[], extra))
    };
    match testbed {
        Testbed::InsertPolicy => {
            let rules = (0..rng.gen_range(1..=3))
                .map(|j| new_rule(rng, format!("X{serial}R{j}")))
                .collect();
            let target = Target::all([maker.make(rng, None)]);
            Some(UpdateEvent::InsertPolicy {
                parent: None,
                policy: PolicyNode::Policy(Policy {
                    id: format!("X{serial}"),
                    rules,
                    algorithm: *CombiningAlgorithm::RULE_LEVEL.choose(rng).expect("non-empty"),
                    target,
                    obligations: vec![],
                }),
            })
        }
        Testbed::DeletePolicy => deletable_policies(snapshot)
            .choose(rng)
            .map(|id| UpdateEvent::DeletePolicy { target: id.clone() }),
        Testbed::DeleteCondition => {
            let rules: Vec<&Rule> = policies
                .iter()
                .flat_map(|p| &p.rules)
                .filter(|r| r.condition != Condition::True)
                .collect();
            rules.choose(rng).map(|r| UpdateEvent::EditRule {
                target: r.id.clone(),
                edit: RuleEdit::Condition(Condition::True),
            })
        }
        Testbed::EditCondition => {
            let rules: Vec<&Rule> = policies.iter().flat_map(|p| &p.rules).collect();
            let old = rules.choose(rng)?;
            let mut rule = new_rule(rng, old.id.clone());
            rule.target = old.target.clone();
            Some(UpdateEvent::EditRule {
                target: old.id.clone(),
                edit: RuleEdit::Replace(rule),
            })
        }
        Testbed::InsertCondition => {
            let p = policies.choose(rng)?;
            Some(UpdateEvent::InsertRule {
                target: p.id.clone(),
                rule: new_rule(rng, format!("X{serial}")),
            })
        }
    }
}

/// Answers attribute obligations with the first literal of the attribute.
#[derive(Debug, Clone)]
pub struct PoolService {
    values: BTreeMap<String, AttributeValue>,
}

impl PoolService {
    pub fn new(pool: &[PoolEntry]) -> Self {
        PoolService {
            values: pool.iter().map(|e| (e.attr.id.clone(), e.values[0].clone())).collect(),
        }
    }
}

impl ObligationService for PoolService {
    fn fulfil(&mut self, _: &str, obligations: &[Obligation], _: Duration) -> ObligationOutcome {
        ObligationOutcome::Provided(
            obligations
                .iter()
                .filter_map(|o| Some((o.attribute_id.clone(), self.values.get(&o.attribute_id)?.clone())))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadResult {
    pub testbed: String,
    pub engine: EngineMode,
    pub dataset: String,
    pub sessions: usize,
    pub wall_nanos_per_update: Vec<u64>,
    /// Summed over all sessions.
    pub counters: Counters,
    /// Session/update pairs the engine left alone.
    pub unaffected: u64,
    pub decisions_digest: String,
}

impl WorkloadResult {
    pub fn updates(&self) -> usize {
        self.wall_nanos_per_update.len()
    }

    pub fn engine_name(&self) -> &'static str {
        match self.engine {
            EngineMode::Incremental => "incremental",
            EngineMode::Baseline => "baseline",
        }
    }

    /// Nearest-rank percentile of per-update wall time; 0 when idle.
    pub fn percentile(&self, q: f64) -> u64 {
        let mut xs = self.wall_nanos_per_update.clone();
        if xs.is_empty() {
            return 0;
        }
        xs.sort_unstable();
        let rank = ((q * xs.len() as f64).ceil() as usize).clamp(1, xs.len());
        xs[rank - 1]
    }
}

fn digest<S>(engine: &UpdateEngine<S>) -> String
where
    S: ObligationService,
{
    let mut h = Sha256::new();
    for s in engine.sessions() {
        h.update(format!("{}\t{}\n", s.id, s.decision.name()));
    }
    format!("{:x}", h.finalize())
}

fn workload<S: ObligationService>(
    testbed: Testbed,
    dataset: &Dataset,
    engine: &UpdateEngine<S>,
    wall: Vec<u64>,
    unaffected: u64,
) -> WorkloadResult {
    let mut counters = Counters::default();
    for s in engine.sessions() {
        counters += s.counters;
    }
    WorkloadResult {
        testbed: testbed.name().into(),
        engine: engine.config().mode,
        dataset: dataset.profile.name.clone(),
        sessions: engine.len(),
        wall_nanos_per_update: wall,
        counters,
        unaffected,
        decisions_digest: digest(engine),
    }
}

/// Runs `updates` changes of `testbed` through both engines over the same
/// sessions. The baseline additionally re-reads the store and every request
/// after each change, as a server without incremental support would.
pub fn run_testbed(
    testbed: Testbed,
    dataset: &Dataset,
    updates: usize,
    seed: u64,
    cfg: &BenchConfig,
) -> Result<(WorkloadResult, WorkloadResult), BenchError> {
    let requests = request_corpus(&dataset.snapshot, cfg, seed);
    let request_bytes: Vec<String> = requests.iter().map(serialize_request).collect();
    let mode = |mode| EngineConfig {
        mode,
        capacity: requests.len().max(1),
        ..EngineConfig::default()
    };
    let service = PoolService::new(&dataset.pool);
    let mut inc = UpdateEngine::new(dataset.snapshot.clone(), service.clone(), mode(EngineMode::Incremental));
    let mut base = UpdateEngine::new(dataset.snapshot.clone(), service, mode(EngineMode::Baseline));
    for (i, r) in requests.iter().enumerate() {
        inc.open_session(&format!("s{i:04}"), r.clone())?;
        base.open_session(&format!("s{i:04}"), r.clone())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (mut inc_wall, mut base_wall) = (Vec::new(), Vec::new());
    let mut unaffected = 0;
    for serial in 0..updates {
        let snapshot = inc.snapshot();
        let Some(event) = testbed_event(testbed, dataset, &snapshot, &mut rng, serial) else {
            break;
        };
        let after = snapshot.apply_event(&event).map_err(UpdateError::from)?;
        let documents: Vec<String> = after.trees().iter().map(|t| serialize_policy(t)).collect();

        let start = Instant::now();
        let report = inc.apply_event(&event)?;
        inc_wall.push(start.elapsed().as_nanos() as u64);
        unaffected += (inc.len() - report.affected.len()) as u64;

        let start = Instant::now();
        for d in &documents {
            black_box(parse_policy(d.as_bytes()).expect("serialized policy parses"));
        }
        base.apply_event(&event)?;
        for r in &request_bytes {
            black_box(parse_request(r.as_bytes()).expect("serialized request parses"));
        }
        base_wall.push(start.elapsed().as_nanos() as u64);
    }
    let a = workload(testbed, dataset, &inc, inc_wall, unaffected);
    let b = workload(testbed, dataset, &base, base_wall, 0);
    if a.decisions_digest != b.decisions_digest {
        return Err(BenchError::DigestMismatch {
            testbed: testbed.name().into(),
            dataset: dataset.profile.name.clone(),
            incremental: a.decisions_digest,
            baseline: b.decisions_digest,
        });
    }
    Ok((a, b))
}

fn ratio(num: u64, den: u64) -> String {
    if den == 0 {
        String::new()
    } else {
        format!("{:.3}", num as f64 / den as f64)
    }
}

pub const CSV_HEADER: &str = "testbed,dataset,engine,updates,sessions,p50_nanos,p95_nanos,speedup,eval_speedup,parse,load,eval,filter,rewrite";

/// One CSV row per result. Speedups compare each row with the baseline row
/// of the same testbed and dataset.
pub fn report(results: &[WorkloadResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        let base = results
            .iter()
            .find(|b| b.engine == EngineMode::Baseline && b.testbed == r.testbed && b.dataset == r.dataset);
        let (speedup, eval_speedup) = match base {
            Some(b) => (
                ratio(b.percentile(0.5), r.percentile(0.5)),
                ratio(b.counters.evaluate_request, r.counters.evaluate_request),
            ),
            None => (String::new(), String::new()),
        };
        let c = r.counters.as_tuple();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.testbed,
            r.dataset,
            r.engine_name(),
            r.updates(),
            r.sessions,
            r.percentile(0.5),
            r.percentile(0.95),
            speedup,
            eval_speedup,
            c[0],
            c[1],
            c[2],
            c[3],
            c[4]
        );
    }
    out
}

/// Whitespace-separated columns for plotting: testbed, dataset, then the
/// incremental and baseline medians.
pub fn gnuplot_data(results: &[WorkloadResult]) -> String {
    let mut out = String::from("# testbed dataset incremental_p50 baseline_p50\n");
    for r in results.iter().filter(|r| r.engine == EngineMode::Incremental) {
        if let Some(b) = results
            .iter()
            .find(|b| b.engine == EngineMode::Baseline && b.testbed == r.testbed && b.dataset == r.dataset)
        {
            let _ = writeln!(
                out,
                "{} {} {} {}",
                r.testbed,
                r.dataset,
                r.percentile(0.5),
                b.percentile(0.5)
            );
        }
    }
    out
}
