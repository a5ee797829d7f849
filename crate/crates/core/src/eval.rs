//! Direct (PDP) evaluation of requests against rules, policies and policy
//! sets.
//!
//! Targets are two-valued: an attribute missing from the request simply
//! fails its match. Conditions are three-valued (Kleene) and are the only
//! source of indeterminate decisions.

use std::borrow::Borrow;
use std::collections::{BTreeSet, HashSet};
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::*;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("only-one-applicable cannot combine rules (policy {0})")]
    OnlyOneApplicableOnRules(String),
    #[error("unknown policy id {0}")]
    UnknownPolicyId(String),
    #[error("exclude and only options are mutually exclusive")]
    ConflictingOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchResult {
    Match,
    NoMatch,
}

/// Three-valued condition outcome; `Indeterminate` names the missing
/// attributes that caused it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionResult {
    True,
    False,
    Indeterminate(BTreeSet<AttributeRef>),
}

/// Step counters of one request workflow. Each counter only ever grows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Counters {
    pub parse_request: u64,
    pub load_policies: u64,
    pub evaluate_request: u64,
    pub filter_policy: u64,
    pub rewrite_request: u64,
}

impl Counters {
    pub const fn new(
        parse_request: u64,
        load_policies: u64,
        evaluate_request: u64,
        filter_policy: u64,
        rewrite_request: u64,
    ) -> Self {
        Counters {
            parse_request,
            load_policies,
            evaluate_request,
            filter_policy,
            rewrite_request,
        }
    }

    pub fn as_tuple(&self) -> [u64; 5] {
        [
            self.parse_request,
            self.load_policies,
            self.evaluate_request,
            self.filter_policy,
            self.rewrite_request,
        ]
    }
}

impl AddAssign for Counters {
    fn add_assign(&mut self, rhs: Self) {
        self.parse_request += rhs.parse_request;
        self.load_policies += rhs.load_policies;
        self.evaluate_request += rhs.evaluate_request;
        self.filter_policy += rhs.filter_policy;
        self.rewrite_request += rhs.rewrite_request;
    }
}

/// Per-node decisions recorded during one evaluation, pre-order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalTrace {
    pub nodes: Vec<(String, Decision)>,
}

pub fn eval_predicate(p: &Predicate, req: &Request) -> Option<bool> {
    req.lookup(&p.attr).map(|values| p.holds_any(values))
}

pub fn eval_target(target: &Target, req: &Request) -> MatchResult {
    let matched = target.any_ofs.iter().all(|any| {
        any.all_ofs.iter().any(|all| {
            all.matches
                .iter()
                .all(|m| eval_predicate(m, req).unwrap_or(false))
        })
    });
    if matched {
        MatchResult::Match
    } else {
        MatchResult::NoMatch
    }
}

pub fn eval_condition(cond: &Condition, req: &Request) -> ConditionResult {
    use ConditionResult as C;
    match cond {
        Condition::True => C::True,
        Condition::Predicate(p) => match eval_predicate(p, req) {
            Some(true) => C::True,
            Some(false) => C::False,
            None => C::Indeterminate(BTreeSet::from([p.attr.clone()])),
        },
        Condition::Not(inner) => match eval_condition(inner, req) {
            C::True => C::False,
            C::False => C::True,
            indeterminate => indeterminate,
        },
        Condition::And(cs) => {
            let mut missing = BTreeSet::new();
            for c in cs {
                match eval_condition(c, req) {
                    C::False => return C::False,
                    C::True => {}
                    C::Indeterminate(m) => missing.extend(m),
                }
            }
            if missing.is_empty() {
                C::True
            } else {
                C::Indeterminate(missing)
            }
        }
        Condition::Or(cs) => {
            let mut missing = BTreeSet::new();
            for c in cs {
                match eval_condition(c, req) {
                    C::True => return C::True,
                    C::False => {}
                    C::Indeterminate(m) => missing.extend(m),
                }
            }
            if missing.is_empty() {
                C::False
            } else {
                C::Indeterminate(missing)
            }
        }
    }
}

pub fn eval_rule(rule: &Rule, req: &Request) -> Decision {
    if eval_target(&rule.target, req) == MatchResult::NoMatch {
        return Decision::NotApplicable;
    }
    match eval_condition(&rule.condition, req) {
        ConditionResult::True => rule.effect.decision(),
        ConditionResult::False => Decision::NotApplicable,
        ConditionResult::Indeterminate(_) => rule.effect.indeterminate(),
    }
}

/// Two-input combining table for `alg`.
pub fn combine_pair(alg: CombiningAlgorithm, a: Decision, b: Decision) -> Decision {
    use CombiningAlgorithm as A;
    use Decision::*;
    let either = |d: Decision| a == d || b == d;
    match alg {
        A::DenyOverrides => {
            if either(Deny) {
                Deny
            } else if either(IndeterminatePD)
                || (a == IndeterminateD && matches!(b, IndeterminateP | Permit))
                || (b == IndeterminateD && matches!(a, IndeterminateP | Permit))
            {
                IndeterminatePD
            } else if either(IndeterminateD) {
                IndeterminateD
            } else if either(Permit) {
                Permit
            } else if either(IndeterminateP) {
                IndeterminateP
            } else {
                NotApplicable
            }
        }
        A::PermitOverrides => {
            if either(Permit) {
                Permit
            } else if either(IndeterminatePD)
                || (a == IndeterminateP && matches!(b, IndeterminateD | Deny))
                || (b == IndeterminateP && matches!(a, IndeterminateD | Deny))
            {
                IndeterminatePD
            } else if either(IndeterminateP) {
                IndeterminateP
            } else if either(Deny) {
                Deny
            } else if either(IndeterminateD) {
                IndeterminateD
            } else {
                NotApplicable
            }
        }
        A::DenyUnlessPermit => {
            if either(Permit) {
                Permit
            } else {
                Deny
            }
        }
        A::PermitUnlessDeny => {
            if either(Deny) {
                Deny
            } else {
                Permit
            }
        }
        A::FirstApplicable => {
            if a != NotApplicable {
                a
            } else {
                b
            }
        }
        A::OnlyOneApplicable => match (a != NotApplicable, b != NotApplicable) {
            (true, true) => IndeterminatePD,
            (true, false) => a,
            (false, true) => b,
            (false, false) => NotApplicable,
        },
    }
}

/// Result of combining an empty list; also the seed of every fold.
pub fn combine_identity(alg: CombiningAlgorithm) -> Decision {
    match alg {
        CombiningAlgorithm::DenyUnlessPermit => Decision::Deny,
        CombiningAlgorithm::PermitUnlessDeny => Decision::Permit,
        _ => Decision::NotApplicable,
    }
}

/// Left fold of [`combine_pair`] over `decisions`.
pub fn combine(alg: CombiningAlgorithm, decisions: &[Decision]) -> Decision {
    decisions
        .iter()
        .fold(combine_identity(alg), |acc, &d| combine_pair(alg, acc, d))
}

/// [`combine`] at rule level, where only-one-applicable is not allowed.
pub fn combine_rules(
    policy_id: &str,
    alg: CombiningAlgorithm,
    decisions: &[Decision],
) -> Result<Decision, EvalError> {
    if alg == CombiningAlgorithm::OnlyOneApplicable {
        return Err(EvalError::OnlyOneApplicableOnRules(policy_id.to_string()));
    }
    Ok(combine(alg, decisions))
}

pub fn eval_node(node: &PolicyNode, req: &Request) -> Result<Response, EvalError> {
    eval_node_inner(node, req, None)
}

pub fn eval_node_traced(
    node: &PolicyNode,
    req: &Request,
    trace: &mut EvalTrace,
) -> Result<Response, EvalError> {
    eval_node_inner(node, req, Some(trace))
}

fn eval_node_inner(
    node: &PolicyNode,
    req: &Request,
    mut trace: Option<&mut EvalTrace>,
) -> Result<Response, EvalError> {
    let slot = trace.as_mut().map(|t| {
        t.nodes.push((node.id().to_string(), Decision::NotApplicable));
        t.nodes.len() - 1
    });
    let response = if eval_target(node.target(), req) == MatchResult::NoMatch {
        Response::bare(Decision::NotApplicable)
    } else {
        let (decision, mut obligations) = match node {
            PolicyNode::Policy(p) => {
                let decisions: Vec<Decision> = p
                    .rules
                    .iter()
                    .map(|r| {
                        let d = eval_rule(r, req);
                        if let Some(t) = trace.as_mut() {
                            t.nodes.push((r.id.clone(), d));
                        }
                        d
                    })
                    .collect();
                (combine_rules(&p.id, p.algorithm, &decisions)?, Vec::new())
            }
            PolicyNode::PolicySet(s) => {
                let mut children = Vec::with_capacity(s.children.len());
                for c in &s.children {
                    children.push(eval_node_inner(c, req, trace.as_deref_mut())?);
                }
                let decisions: Vec<Decision> = children
                    .iter()
                    .map(|r| r.decision.unwrap_or(Decision::NotApplicable))
                    .collect();
                let decision = combine(s.algorithm, &decisions);
                (decision, contributing_obligations(s.algorithm, decision, children))
            }
        };
        if let Some(effect) = decision.effect() {
            obligations.extend(
                node.obligations()
                    .iter()
                    .filter(|o| o.fulfill_on == effect)
                    .cloned(),
            );
        } else {
            obligations.clear();
        }
        Response::decided(decision, obligations)
    };
    if let (Some(t), Some(i)) = (trace, slot) {
        t.nodes[i].1 = response.decision.unwrap_or(Decision::NotApplicable);
    }
    Ok(response)
}

/// Obligations of the children that produced the combined decision.
fn contributing_obligations(
    alg: CombiningAlgorithm,
    decision: Decision,
    children: Vec<Response>,
) -> Vec<Obligation> {
    if !decision.is_definite() {
        return Vec::new();
    }
    let selective = matches!(
        alg,
        CombiningAlgorithm::FirstApplicable | CombiningAlgorithm::OnlyOneApplicable
    );
    let mut out = Vec::new();
    for child in children {
        let d = child.decision.unwrap_or(Decision::NotApplicable);
        if selective && d != Decision::NotApplicable {
            if d == decision {
                out.extend(child.obligations);
            }
            break;
        }
        if d == decision {
            out.extend(child.obligations);
        }
    }
    out
}

/// Candidate restriction for [`evaluate_pap`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub exclude: Option<BTreeSet<String>>,
    pub only: Option<BTreeSet<String>>,
}

impl EvalOptions {
    pub fn exclude<I: IntoIterator<Item = S>, S: Into<String>>(ids: I) -> Self {
        EvalOptions {
            exclude: Some(ids.into_iter().map(Into::into).collect()),
            only: None,
        }
    }

    pub fn only<I: IntoIterator<Item = S>, S: Into<String>>(ids: I) -> Self {
        EvalOptions {
            exclude: None,
            only: Some(ids.into_iter().map(Into::into).collect()),
        }
    }

    pub fn is_filtered(&self) -> bool {
        self.exclude.is_some() || self.only.is_some()
    }
}

/// `(decision, non_applied_policies, applied_policy)` plus what the scan saw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PapEvaluation {
    pub decision: Decision,
    /// Trees scanned and rejected, in scan order.
    pub non_applied: Vec<String>,
    pub applied: Option<String>,
    /// Decision of each rejected tree, parallel to `non_applied`.
    pub rejected_decisions: Vec<Decision>,
    pub obligations: Vec<Obligation>,
    /// Number of top-level trees actually evaluated.
    pub trees_evaluated: usize,
}

impl PapEvaluation {
    pub fn response(&self) -> Response {
        Response::decided(self.decision, self.obligations.clone())
    }
}

/// Scans top-level trees in order; the first tree answering Permit or Deny
/// is applied. When none does, the first indeterminate seen is returned,
/// else NotApplicable.
pub fn evaluate_pap<T: Borrow<PolicyNode>>(
    req: &Request,
    trees: &[T],
    options: &EvalOptions,
) -> Result<PapEvaluation, EvalError> {
    if options.exclude.is_some() && options.only.is_some() {
        return Err(EvalError::ConflictingOptions);
    }
    let known: HashSet<&str> = trees.iter().map(|t| t.borrow().id()).collect();
    let unknown = options
        .only
        .iter()
        .chain(options.exclude.iter())
        .flatten()
        .find(|id| !known.contains(id.as_str()));
    if let Some(id) = unknown {
        return Err(EvalError::UnknownPolicyId(id.clone()));
    }

    let mut out = PapEvaluation {
        decision: Decision::NotApplicable,
        non_applied: Vec::new(),
        applied: None,
        rejected_decisions: Vec::new(),
        obligations: Vec::new(),
        trees_evaluated: 0,
    };
    for tree in trees {
        let tree = tree.borrow();
        let id = tree.id();
        if options.exclude.as_ref().is_some_and(|ex| ex.contains(id))
            || options.only.as_ref().is_some_and(|only| !only.contains(id))
        {
            continue;
        }
        let response = eval_node(tree, req)?;
        out.trees_evaluated += 1;
        let decision = response.decision.unwrap_or(Decision::NotApplicable);
        if decision.is_definite() {
            out.decision = decision;
            out.applied = Some(id.to_string());
            out.obligations = response.obligations;
            return Ok(out);
        }
        out.non_applied.push(id.to_string());
        out.rejected_decisions.push(decision);
    }
    out.decision = out
        .rejected_decisions
        .iter()
        .copied()
        .find(|d| d.is_indeterminate())
        .unwrap_or(Decision::NotApplicable);
    Ok(out)
}
