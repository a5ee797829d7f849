//! Live policy changes: classification, diffing, attribute acquisition and
//! the incremental re-evaluation engine.

mod engine;
mod service;

pub use engine::{
    affects, ChangeReport, EngineConfig, EngineMode, SessionOutcome, SessionRecord, UpdateEngine,
};
pub use service::{
    AutoFulfill, FnService, ObligationOutcome, ObligationService, StaticService, DEFAULT_TIMEOUT,
    TIMEOUT_ENV,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::eval::EvalError;
use crate::io::{RuleEdit, UpdateEvent};
use crate::model::*;
use crate::pap::{PapError, PapSnapshot};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UpdateError {
    #[error(transparent)]
    Pap(#[from] PapError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("attribute {0} already has a different value")]
    ConflictingAttribute(String),
    #[error("session {0} refers to ids missing from the store")]
    StaleSession(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
}

/// What an edit does inside an existing tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EditKind {
    InsertRule(Rule),
    DeleteRule(String),
    EditRule(String, RuleEdit),
    SetCombiningAlg(CombiningAlgorithm),
    SetEffect(String, Effect),
    /// A policy or set added below the edited set.
    InsertChild(PolicyNode),
    /// A policy or set removed from below the edited set.
    DeleteChild(String),
    /// The edited node swapped wholesale.
    Replace(PolicyNode),
}

/// A change as seen by the engine: whole top-level trees come and go, or
/// one node inside a tree is edited.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyChange {
    DeletePolicy(String),
    InsertPolicy(PolicyNode),
    EditPolicy { policy: String, kind: EditKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChangeType {
    DeletePolicy,
    InsertPolicy,
    DeleteRule,
    EditRule,
    InsertRule,
    SetCombiningAlg,
    SetEffect,
    ReplacePolicy,
}

impl ChangeType {
    pub fn name(self) -> &'static str {
        match self {
            ChangeType::DeletePolicy => "delete-policy",
            ChangeType::InsertPolicy => "insert-policy",
            ChangeType::DeleteRule => "delete-rule",
            ChangeType::EditRule => "edit-rule",
            ChangeType::InsertRule => "insert-rule",
            ChangeType::SetCombiningAlg => "set-combining-alg",
            ChangeType::SetEffect => "set-effect",
            ChangeType::ReplacePolicy => "replace-policy",
        }
    }
}

fn parent_of<'a>(node: &'a PolicyNode, id: &str) -> Option<&'a PolicyNode> {
    match node {
        PolicyNode::Policy(_) => None,
        PolicyNode::PolicySet(s) => {
            if s.children.iter().any(|c| c.id() == id) {
                Some(node)
            } else {
                s.children.iter().find_map(|c| parent_of(c, id))
            }
        }
    }
}

fn policy_holding<'a>(snap: &'a PapSnapshot, rule: &str) -> Result<&'a str, UpdateError> {
    let tree = snap
        .locate(rule)
        .map(|l| &snap.trees()[l.tree])
        .ok_or_else(|| PapError::TargetNotFound(rule.to_string()))?;
    let mut found = None;
    tree.walk(&mut |n| {
        if let PolicyNode::Policy(p) = n {
            if p.rules.iter().any(|r| r.id == rule) {
                found = Some(n.id());
            }
        }
    });
    found.ok_or_else(|| PapError::TargetNotFound(rule.to_string()).into())
}

impl PolicyChange {
    /// Classifies `event` against the snapshot it will be applied to.
    pub fn from_event(event: &UpdateEvent, before: &PapSnapshot) -> Result<Self, UpdateError> {
        let not_found = |id: &str| UpdateError::from(PapError::TargetNotFound(id.to_string()));
        let edit = |policy: &str, kind| PolicyChange::EditPolicy {
            policy: policy.to_string(),
            kind,
        };
        Ok(match event {
            UpdateEvent::DeletePolicy { target } => {
                let tree = before.top_level_of(target).ok_or_else(|| not_found(target))?;
                if tree == target {
                    PolicyChange::DeletePolicy(target.clone())
                } else {
                    let root = before.tree(tree).expect("located tree");
                    let parent = parent_of(root, target).ok_or_else(|| not_found(target))?;
                    edit(parent.id(), EditKind::DeleteChild(target.clone()))
                }
            }
            UpdateEvent::InsertPolicy { parent: None, policy } => PolicyChange::InsertPolicy(policy.clone()),
            UpdateEvent::InsertPolicy {
                parent: Some(parent),
                policy,
            } => edit(parent, EditKind::InsertChild(policy.clone())),
            UpdateEvent::InsertRule { target, rule } => edit(target, EditKind::InsertRule(rule.clone())),
            UpdateEvent::DeleteRule { target } => {
                edit(policy_holding(before, target)?, EditKind::DeleteRule(target.clone()))
            }
            UpdateEvent::EditRule { target, edit: e } => edit(
                policy_holding(before, target)?,
                EditKind::EditRule(target.clone(), e.clone()),
            ),
            UpdateEvent::SetEffect { target, effect } => edit(
                policy_holding(before, target)?,
                EditKind::SetEffect(target.clone(), *effect),
            ),
            UpdateEvent::SetCombiningAlg { target, algorithm } => {
                edit(target, EditKind::SetCombiningAlg(*algorithm))
            }
            UpdateEvent::ReplacePolicy { policy } => edit(policy.id(), EditKind::Replace(policy.clone())),
        })
    }

    pub fn to_event(&self) -> UpdateEvent {
        match self {
            PolicyChange::DeletePolicy(id) => UpdateEvent::DeletePolicy { target: id.clone() },
            PolicyChange::InsertPolicy(tree) => UpdateEvent::InsertPolicy {
                parent: None,
                policy: tree.clone(),
            },
            PolicyChange::EditPolicy { policy, kind } => match kind {
                EditKind::InsertRule(rule) => UpdateEvent::InsertRule {
                    target: policy.clone(),
                    rule: rule.clone(),
                },
                EditKind::DeleteRule(id) => UpdateEvent::DeleteRule { target: id.clone() },
                EditKind::EditRule(id, e) => UpdateEvent::EditRule {
                    target: id.clone(),
                    edit: e.clone(),
                },
                EditKind::SetCombiningAlg(a) => UpdateEvent::SetCombiningAlg {
                    target: policy.clone(),
                    algorithm: *a,
                },
                EditKind::SetEffect(id, e) => UpdateEvent::SetEffect {
                    target: id.clone(),
                    effect: *e,
                },
                EditKind::InsertChild(child) => UpdateEvent::InsertPolicy {
                    parent: Some(policy.clone()),
                    policy: child.clone(),
                },
                EditKind::DeleteChild(id) => UpdateEvent::DeletePolicy { target: id.clone() },
                EditKind::Replace(node) => UpdateEvent::ReplacePolicy { policy: node.clone() },
            },
        }
    }

    pub fn change_type(&self) -> ChangeType {
        match self {
            PolicyChange::DeletePolicy(_) => ChangeType::DeletePolicy,
            PolicyChange::InsertPolicy(_) => ChangeType::InsertPolicy,
            PolicyChange::EditPolicy { kind, .. } => match kind {
                EditKind::InsertRule(_) => ChangeType::InsertRule,
                EditKind::DeleteRule(_) => ChangeType::DeleteRule,
                EditKind::EditRule(..) => ChangeType::EditRule,
                EditKind::SetCombiningAlg(_) => ChangeType::SetCombiningAlg,
                EditKind::SetEffect(..) => ChangeType::SetEffect,
                EditKind::InsertChild(_) => ChangeType::InsertPolicy,
                EditKind::DeleteChild(_) => ChangeType::DeletePolicy,
                EditKind::Replace(_) => ChangeType::ReplacePolicy,
            },
        }
    }
}

/// Attributes used by some condition of `node` but missing from `req`.
pub fn get_lack_att(req: &Request, node: &PolicyNode) -> BTreeSet<AttributeRef> {
    node.condition_attributes()
        .into_iter()
        .filter(|a| !req.contains(a))
        .collect()
}

/// Adds `provided` values to `req`. Existing attributes are kept verbatim; a
/// provided attribute already present must carry one of the present values.
pub fn rewrite_request(
    req: &Request,
    provided: &BTreeMap<AttributeRef, AttributeValue>,
) -> Result<Request, UpdateError> {
    let mut out = req.clone();
    for (attr, value) in provided {
        match req.lookup(attr) {
            Some(values) if values.contains(value) => {}
            Some(_) => return Err(UpdateError::ConflictingAttribute(attr.id.clone())),
            None => out.push(attr.category, &attr.id, value.clone()),
        }
    }
    Ok(out)
}

/// One obligation per missing attribute, numbered `Os1`, `Os2`, ... and
/// enforced when the decision equals `pending`.
pub fn make_obligation(missing: &BTreeSet<AttributeRef>, pending: Effect) -> Vec<Obligation> {
    missing
        .iter()
        .enumerate()
        .map(|(i, a)| Obligation {
            id: format!("Os{}", i + 1),
            fulfill_on: pending,
            attribute_id: a.id.clone(),
            data_type: a.data_type,
            action: format!("get{}", a.data_type.name()),
        })
        .collect()
}

fn check_unique(node: &PolicyNode) -> Result<(), UpdateError> {
    let mut seen = BTreeSet::new();
    for id in node.ids() {
        if !seen.insert(id.clone()) {
            return Err(UpdateError::DuplicateId(id));
        }
    }
    Ok(())
}

/// Id-anchored difference between two versions of one tree. Applying the
/// result to `old` yields `new`.
pub fn diff_policies(old: &PolicyNode, new: &PolicyNode) -> Result<Vec<PolicyChange>, UpdateError> {
    check_unique(old)?;
    check_unique(new)?;
    if old.id() != new.id() {
        return Ok(vec![
            PolicyChange::DeletePolicy(old.id().to_string()),
            PolicyChange::InsertPolicy(new.clone()),
        ]);
    }
    let mut out = Vec::new();
    diff_node(old, new, &mut out);
    Ok(out)
}

/// Difference between two ordered lists of top-level trees.
pub fn diff_paps(old: &[PolicyNode], new: &[PolicyNode]) -> Result<Vec<PolicyChange>, UpdateError> {
    let new_ids: BTreeSet<&str> = new.iter().map(|t| t.id()).collect();
    let old_by_id: HashMap<&str, &PolicyNode> = old.iter().map(|t| (t.id(), t)).collect();
    let old_order: Vec<&str> = old.iter().map(|t| t.id()).collect();
    let new_order: Vec<&str> = new.iter().map(|t| t.id()).collect();
    let mut out = Vec::new();
    if !same_order(&old_order, &new_order) {
        out.extend(old.iter().map(|t| PolicyChange::DeletePolicy(t.id().to_string())));
        out.extend(new.iter().map(|t| PolicyChange::InsertPolicy(t.clone())));
        return Ok(out);
    }
    for t in old.iter().filter(|t| !new_ids.contains(t.id())) {
        out.push(PolicyChange::DeletePolicy(t.id().to_string()));
    }
    for t in new {
        match old_by_id.get(t.id()) {
            Some(o) => out.extend(diff_policies(o, t)?),
            None => out.push(PolicyChange::InsertPolicy(t.clone())),
        }
    }
    Ok(out)
}

/// True when `new` lists the surviving items of `old` in the same order,
/// followed by the added ones.
fn same_order<'a>(old: &[&'a str], new: &[&'a str]) -> bool {
    let old_set: BTreeSet<&str> = old.iter().copied().collect();
    let new_set: BTreeSet<&str> = new.iter().copied().collect();
    let kept_old: Vec<&str> = old.iter().copied().filter(|i| new_set.contains(i)).collect();
    let kept_new: Vec<&str> = new.iter().copied().filter(|i| old_set.contains(i)).collect();
    let first_added = new.iter().position(|i| !old_set.contains(i)).unwrap_or(new.len());
    kept_old == kept_new && new[first_added..].iter().all(|i| !old_set.contains(i))
}

fn diff_node(old: &PolicyNode, new: &PolicyNode, out: &mut Vec<PolicyChange>) {
    let id = old.id().to_string();
    let replace = |out: &mut Vec<PolicyChange>| {
        out.push(PolicyChange::EditPolicy {
            policy: id.clone(),
            kind: EditKind::Replace(new.clone()),
        })
    };
    if old.target() != new.target() || old.obligations() != new.obligations() {
        return replace(out);
    }
    let edit = |kind| PolicyChange::EditPolicy {
        policy: id.clone(),
        kind,
    };
    match (old, new) {
        (PolicyNode::Policy(a), PolicyNode::Policy(b)) => {
            let a_ids: Vec<&str> = a.rules.iter().map(|r| r.id.as_str()).collect();
            let b_ids: Vec<&str> = b.rules.iter().map(|r| r.id.as_str()).collect();
            if !same_order(&a_ids, &b_ids) {
                return replace(out);
            }
            let mut changes = Vec::new();
            if a.algorithm != b.algorithm {
                changes.push(edit(EditKind::SetCombiningAlg(b.algorithm)));
            }
            for r in &a.rules {
                match b.rules.iter().find(|n| n.id == r.id) {
                    None => changes.push(edit(EditKind::DeleteRule(r.id.clone()))),
                    Some(n) if n.target != r.target || n.condition != r.condition => {
                        changes.push(edit(EditKind::EditRule(r.id.clone(), RuleEdit::Replace(n.clone()))))
                    }
                    Some(n) if n.effect != r.effect => {
                        changes.push(edit(EditKind::SetEffect(r.id.clone(), n.effect)))
                    }
                    Some(_) => {}
                }
            }
            for r in b.rules.iter().filter(|r| !a_ids.contains(&r.id.as_str())) {
                changes.push(edit(EditKind::InsertRule(r.clone())));
            }
            // Deleting every old rule before inserting would leave the policy
            // empty in between.
            let deletes = changes
                .iter()
                .filter(|c| matches!(c, PolicyChange::EditPolicy { kind: EditKind::DeleteRule(_), .. }))
                .count();
            if deletes == a.rules.len() {
                return replace(out);
            }
            out.extend(changes);
        }
        (PolicyNode::PolicySet(a), PolicyNode::PolicySet(b)) => {
            let a_ids: Vec<&str> = a.children.iter().map(|c| c.id()).collect();
            let b_ids: Vec<&str> = b.children.iter().map(|c| c.id()).collect();
            if !same_order(&a_ids, &b_ids) || a_ids.iter().all(|i| !b_ids.contains(i)) {
                return replace(out);
            }
            if a.algorithm != b.algorithm {
                out.push(edit(EditKind::SetCombiningAlg(b.algorithm)));
            }
            for c in &a.children {
                match b.children.iter().find(|n| n.id() == c.id()) {
                    None => out.push(edit(EditKind::DeleteChild(c.id().to_string()))),
                    Some(n) if matches!((c, n), (PolicyNode::Policy(_), PolicyNode::Policy(_)) | (PolicyNode::PolicySet(_), PolicyNode::PolicySet(_))) => {
                        diff_node(c, n, out)
                    }
                    Some(n) => out.push(PolicyChange::EditPolicy {
                        policy: c.id().to_string(),
                        kind: EditKind::Replace(n.clone()),
                    }),
                }
            }
            for c in b.children.iter().filter(|c| !a_ids.contains(&c.id())) {
                out.push(edit(EditKind::InsertChild(c.clone())));
            }
        }
        _ => replace(out),
    }
}
