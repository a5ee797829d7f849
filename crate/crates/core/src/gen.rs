//! Random policy trees and requests over small attribute pools, for
//! property tests and the decision-space oracle.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::io::{RuleEdit, UpdateEvent};
use crate::model::*;
use crate::pap::PapSnapshot;
use crate::space::Domains;

/// An attribute together with the values requests may give it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolEntry {
    pub attr: AttributeRef,
    pub values: Vec<AttributeValue>,
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    /// Maximum number of policy/policy-set levels.
    pub max_depth: usize,
    pub max_rules: usize,
    pub pool: Vec<PoolEntry>,
    /// Probability that a policy or set carries an obligation.
    pub obligation_rate: f64,
}

impl GenConfig {
    pub fn small(pool: Vec<PoolEntry>) -> Self {
        GenConfig {
            max_depth: 4,
            max_rules: 12,
            pool,
            obligation_rate: 0.2,
        }
    }
}

fn time(h: u32) -> AttributeValue {
    AttributeValue::Time(TimeOfDay::hm(h, 0).expect("hour below 24"))
}

fn date(d: u32) -> AttributeValue {
    AttributeValue::Date(NaiveDate::from_ymd_opt(2024, 1, d).expect("valid day"))
}

/// `n` attributes with two values each, cycling through the value types
/// that predicates can test.
pub fn attribute_pool(rng: &mut impl Rng, n: usize) -> Vec<PoolEntry> {
    (0..n)
        .map(|i| {
            let category = AttributeCategory::ALL[rng.gen_range(0..4)];
            let (data_type, values) = match i % 4 {
                0 => (
                    ValueType::String,
                    vec![AttributeValue::string(format!("v{i}")), AttributeValue::string("a&b <c>")],
                ),
                1 => (ValueType::Integer, vec![AttributeValue::Integer(10), AttributeValue::Integer(20)]),
                2 => (ValueType::Time, vec![time(8), time(21)]),
                _ => (ValueType::Date, vec![date(1), date(2)]),
            };
            PoolEntry {
                attr: AttributeRef::new(category, format!("a{i}"), data_type),
                values,
            }
        })
        .collect()
}

/// Domains for exhaustive enumeration over a pool.
pub fn pool_domains(pool: &[PoolEntry]) -> Domains {
    pool.iter()
        .map(|e| (e.attr.clone(), e.values.clone()))
        .collect()
}

/// A request giving each pool attribute one of its values or leaving it out.
pub fn random_request(rng: &mut impl Rng, pool: &[PoolEntry]) -> Request {
    let mut req = Request::new();
    for e in pool {
        let pick = rng.gen_range(0..=e.values.len());
        if pick > 0 {
            req.push(e.attr.category, &e.attr.id, e.values[pick - 1].clone());
        }
    }
    req
}

pub fn random_predicate(rng: &mut impl Rng, pool: &[PoolEntry]) -> Predicate {
    let e = pool.choose(rng).expect("non-empty pool");
    let attr = e.attr.clone();
    let literal = |rng: &mut _| e.values.choose(rng).expect("values").clone();
    match attr.data_type {
        ValueType::String => {
            if rng.gen_bool(0.3) {
                let mut members: Vec<String> = e.values.iter().map(|v| v.lexical()).collect();
                members.truncate(rng.gen_range(1..=members.len()));
                members.push("zz".into());
                Predicate::in_set(attr, members)
            } else {
                Predicate::new(attr, MatchFunction::StringEqual, literal(rng))
            }
        }
        ValueType::Integer => {
            let f = *[
                MatchFunction::IntegerEqual,
                MatchFunction::IntegerGreaterThan,
                MatchFunction::IntegerLessThan,
            ]
            .choose(rng)
            .expect("non-empty");
            let lit = *[10, 15, 20].choose(rng).expect("non-empty");
            Predicate::new(attr, f, AttributeValue::Integer(lit))
        }
        ValueType::Time => {
            let f = if rng.gen_bool(0.5) {
                MatchFunction::TimeGreaterThan
            } else {
                MatchFunction::TimeLessThan
            };
            Predicate::new(attr, f, time(rng.gen_range(7..=22)))
        }
        ValueType::Date | ValueType::Boolean => {
            Predicate::new(attr, MatchFunction::DateEqual, date(rng.gen_range(1..=3)))
        }
    }
}

pub fn random_condition(rng: &mut impl Rng, pool: &[PoolEntry], depth: usize) -> Condition {
    let leaf = depth == 0 || rng.gen_bool(0.4);
    if leaf {
        return Condition::Predicate(random_predicate(rng, pool));
    }
    match rng.gen_range(0..3) {
        0 => Condition::not(random_condition(rng, pool, depth - 1)),
        k => {
            let xs = (0..rng.gen_range(2..=3))
                .map(|_| random_condition(rng, pool, depth - 1))
                .collect();
            if k == 1 {
                Condition::And(xs)
            } else {
                Condition::Or(xs)
            }
        }
    }
}

pub fn random_target(rng: &mut impl Rng, pool: &[PoolEntry]) -> Target {
    if rng.gen_bool(0.5) {
        return Target::any();
    }
    Target {
        any_ofs: (0..rng.gen_range(1..=2))
            .map(|_| AnyOf {
                all_ofs: (0..rng.gen_range(1..=2))
                    .map(|_| AllOf {
                        matches: (0..rng.gen_range(1..=2))
                            .map(|_| random_predicate(rng, pool))
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

struct Builder<'a, R> {
    rng: &'a mut R,
    cfg: &'a GenConfig,
    tag: &'a str,
    next_id: usize,
}

impl<R: Rng> Builder<'_, R> {
    fn id(&mut self, prefix: &str) -> String {
        self.next_id += 1;
        format!("{prefix}{}{}", self.tag, self.next_id)
    }

    fn obligations(&mut self) -> Vec<Obligation> {
        if !self.rng.gen_bool(self.cfg.obligation_rate) {
            return vec![];
        }
        let e = self.cfg.pool.choose(self.rng).expect("non-empty pool");
        vec![Obligation {
            id: self.id("O"),
            fulfill_on: if self.rng.gen_bool(0.5) { Effect::Permit } else { Effect::Deny },
            attribute_id: e.attr.id.clone(),
            data_type: e.attr.data_type,
            action: format!("get{}", e.attr.data_type.name()),
        }]
    }

    fn rule(&mut self) -> Rule {
        let effect = if self.rng.gen_bool(0.5) { Effect::Permit } else { Effect::Deny };
        let mut rule = Rule::new(self.id("r"), effect);
        if self.rng.gen_bool(0.3) {
            rule.target = random_target(self.rng, &self.cfg.pool);
        }
        if self.rng.gen_bool(0.8) {
            rule.condition = random_condition(self.rng, &self.cfg.pool, 2);
        }
        rule
    }

    fn node(&mut self, levels: usize, budget: usize) -> PolicyNode {
        if levels <= 1 || budget < 2 || self.rng.gen_bool(0.3) {
            let n = self.rng.gen_range(1..=budget.min(4));
            let id = self.id("P");
            let rules = (0..n).map(|_| self.rule()).collect();
            return PolicyNode::Policy(Policy {
                id,
                rules,
                algorithm: *CombiningAlgorithm::RULE_LEVEL.choose(self.rng).expect("non-empty"),
                target: random_target(self.rng, &self.cfg.pool),
                obligations: self.obligations(),
            });
        }
        let id = self.id("S");
        let n = self.rng.gen_range(1..=budget.min(3));
        let mut remaining = budget;
        let mut children = Vec::new();
        for i in 0..n {
            let share = if i + 1 == n {
                remaining
            } else {
                self.rng.gen_range(1..=remaining - (n - i - 1))
            };
            remaining -= share;
            children.push(self.node(levels - 1, share));
        }
        PolicyNode::PolicySet(PolicySet {
            id,
            children,
            algorithm: *CombiningAlgorithm::ALL.choose(self.rng).expect("non-empty"),
            target: random_target(self.rng, &self.cfg.pool),
            obligations: self.obligations(),
        })
    }
}

/// A valid tree with at most `max_depth` levels and `max_rules` rules.
pub fn random_tree(rng: &mut impl Rng, cfg: &GenConfig) -> PolicyNode {
    random_tree_tagged(rng, cfg, "")
}

/// Like [`random_tree`], with `tag` spliced into every id so that trees
/// built with different tags never collide.
pub fn random_tree_tagged(rng: &mut impl Rng, cfg: &GenConfig, tag: &str) -> PolicyNode {
    let budget = rng.gen_range(1..=cfg.max_rules.max(1));
    Builder {
        rng,
        cfg,
        tag,
        next_id: 0,
    }
    .node(cfg.max_depth, budget)
}

/// `n` top-level trees with disjoint ids.
pub fn random_pap(rng: &mut impl Rng, cfg: &GenConfig, n: usize) -> Vec<PolicyNode> {
    (0..n).map(|i| random_tree_tagged(rng, cfg, &format!("{i}_"))).collect()
}

fn fresh_rule(rng: &mut impl Rng, cfg: &GenConfig, tag: &str) -> Rule {
    Builder {
        rng,
        cfg,
        tag,
        next_id: 0,
    }
    .rule()
}

/// A random change that the store accepts. `fresh` numbers the ids of new
/// elements and is advanced on every call.
pub fn random_event(
    rng: &mut impl Rng,
    snapshot: &PapSnapshot,
    cfg: &GenConfig,
    fresh: &mut usize,
) -> UpdateEvent {
    let mut sets: Vec<&PolicySet> = vec![];
    let mut policies: Vec<&Policy> = vec![];
    for t in snapshot.trees() {
        t.walk(&mut |n| match n {
            PolicyNode::PolicySet(s) => sets.push(s),
            PolicyNode::Policy(p) => policies.push(p),
        });
    }
    let top: Vec<&str> = snapshot.trees().iter().map(|t| t.id()).collect();
    loop {
        *fresh += 1;
        let tag = format!("u{fresh}_");
        match rng.gen_range(0..7) {
            0 => {
                let mut victims: Vec<&str> = if top.len() > 1 { top.clone() } else { vec![] };
                for s in sets.iter().filter(|s| s.children.len() > 1) {
                    victims.extend(s.children.iter().map(|c| c.id()));
                }
                if let Some(v) = victims.choose(rng) {
                    return UpdateEvent::DeletePolicy { target: v.to_string() };
                }
            }
            1 => {
                let small = GenConfig {
                    max_depth: cfg.max_depth.min(2),
                    max_rules: cfg.max_rules.min(4),
                    ..cfg.clone()
                };
                let policy = random_tree_tagged(rng, &small, &tag);
                let parent = if rng.gen_bool(0.5) {
                    sets.choose(rng).map(|s| s.id.clone())
                } else {
                    None
                };
                return UpdateEvent::InsertPolicy { parent, policy };
            }
            2 => {
                let p = policies.choose(rng).expect("store holds a policy");
                return UpdateEvent::InsertRule {
                    target: p.id.clone(),
                    rule: fresh_rule(rng, cfg, &tag),
                };
            }
            3 => {
                let rules: Vec<&Rule> = policies
                    .iter()
                    .filter(|p| p.rules.len() > 1)
                    .flat_map(|p| &p.rules)
                    .collect();
                if let Some(r) = rules.choose(rng) {
                    return UpdateEvent::DeleteRule { target: r.id.clone() };
                }
            }
            4 => {
                let p = policies.choose(rng).expect("store holds a policy");
                let old = p.rules.choose(rng).expect("policy holds a rule");
                let edit = if rng.gen_bool(0.5) {
                    let mut rule = fresh_rule(rng, cfg, &tag);
                    rule.id = old.id.clone();
                    RuleEdit::Replace(rule)
                } else {
                    RuleEdit::Condition(random_condition(rng, &cfg.pool, 2))
                };
                return UpdateEvent::EditRule {
                    target: old.id.clone(),
                    edit,
                };
            }
            5 => {
                if rng.gen_bool(0.5) || sets.is_empty() {
                    let p = policies.choose(rng).expect("store holds a policy");
                    return UpdateEvent::SetCombiningAlg {
                        target: p.id.clone(),
                        algorithm: *CombiningAlgorithm::RULE_LEVEL.choose(rng).expect("non-empty"),
                    };
                }
                let s = sets.choose(rng).expect("non-empty");
                return UpdateEvent::SetCombiningAlg {
                    target: s.id.clone(),
                    algorithm: *CombiningAlgorithm::ALL.choose(rng).expect("non-empty"),
                };
            }
            _ => {
                let p = policies.choose(rng).expect("store holds a policy");
                let r = p.rules.choose(rng).expect("policy holds a rule");
                return UpdateEvent::SetEffect {
                    target: r.id.clone(),
                    effect: match r.effect {
                        Effect::Permit => Effect::Deny,
                        Effect::Deny => Effect::Permit,
                    },
                };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_trees_are_valid_and_bounded() {
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool = attribute_pool(&mut rng, 6);
            let cfg = GenConfig::small(pool);
            let tree = random_tree(&mut rng, &cfg);
            assert!(validate(&tree).is_empty(), "seed {seed}: {:?}", validate(&tree));
            assert!(tree.depth() <= 4);
            assert!(tree.rules().len() <= 12);
        }
    }

    #[test]
    fn random_events_apply() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = GenConfig::small(attribute_pool(&mut rng, 4));
            let mut snap = PapSnapshot::new(random_pap(&mut rng, &cfg, 3)).unwrap();
            let mut fresh = 0;
            for _ in 0..30 {
                let event = random_event(&mut rng, &snap, &cfg, &mut fresh);
                snap = snap
                    .apply_event(&event)
                    .unwrap_or_else(|e| panic!("seed {seed}: {event:?}: {e}"));
            }
        }
    }
}
