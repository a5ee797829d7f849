use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Duration;

use serde_json::json;

use super::service::configured_timeout;
use super::*;
use crate::eval::{evaluate_pap, Counters, EvalOptions, PapEvaluation};
use crate::io::{RuleEdit, UpdateEvent};
use crate::pap::{PapSnapshot, PapStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineMode {
    /// Re-evaluate only affected sessions, scanning only candidate trees.
    Incremental,
    /// Re-evaluate every session against the whole store after each change.
    Baseline,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub mode: EngineMode,
    /// Sessions kept before the least recently touched is dropped.
    pub capacity: usize,
    pub timeout: Duration,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mode: EngineMode::Incremental,
            capacity: 10_000,
            timeout: configured_timeout(),
        }
    }
}

impl EngineConfig {
    pub fn baseline() -> Self {
        EngineConfig {
            mode: EngineMode::Baseline,
            ..Self::default()
        }
    }
}

/// Everything remembered about one live access session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRecord {
    pub id: String,
    pub request: Request,
    pub decision: Decision,
    /// Tree that produced a Permit or Deny.
    pub applied: Option<String>,
    /// Trees scanned and rejected, in store order.
    pub non_applied: Vec<String>,
    /// Decision each rejected tree gave.
    pub rejected: BTreeMap<String, Decision>,
    pub obligations: Vec<Obligation>,
    /// Attribute obligations sent to the requester so far.
    pub obligations_issued: Vec<Obligation>,
    pub counters: Counters,
    /// The stored tuple no longer reflects a scan, e.g. after a refused
    /// obligation; the next contact evaluates from scratch.
    pub stale: bool,
}

impl SessionRecord {
    pub fn response(&self) -> Response {
        Response::decided(self.decision, self.obligations.clone())
    }

    fn set_scan(&mut self, r: PapEvaluation) {
        self.decision = r.decision;
        self.applied = r.applied;
        self.rejected = r.non_applied.iter().cloned().zip(r.rejected_decisions).collect();
        self.non_applied = r.non_applied;
        self.obligations = r.obligations;
        self.stale = false;
    }

    fn forget(&mut self, tree: &str) {
        self.non_applied.retain(|t| t != tree);
        self.rejected.remove(tree);
    }
}

/// Result for one affected session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionOutcome {
    pub session: String,
    /// Attribute request sent before re-evaluating, if any.
    pub attribute_request: Option<Response>,
    pub response: Response,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeReport {
    pub change_type: ChangeType,
    pub version: u64,
    pub affected: Vec<String>,
    pub outcomes: Vec<SessionOutcome>,
    /// Sum over all sessions of the steps this change cost.
    pub counters: Counters,
    pub warnings: Vec<String>,
}

impl ChangeReport {
    /// `{"changeType", "affectedSessions", "counters"}` on one line.
    pub fn audit_line(&self) -> String {
        json!({
            "changeType": self.change_type.name(),
            "affectedSessions": self.affected,
            "counters": self.counters,
        })
        .to_string()
    }
}

/// Whether `change` can alter the decision of `session` under the
/// first-applicable scan of the store. `tree` is the top-level tree the
/// change touches.
pub fn affects(change: &PolicyChange, tree: &str, session: &SessionRecord) -> bool {
    if session.stale {
        return true;
    }
    let applied = session.applied.as_deref() == Some(tree);
    let rejected = session.non_applied.iter().any(|t| t == tree);
    match change {
        PolicyChange::InsertPolicy(_) => session.applied.is_none(),
        PolicyChange::DeletePolicy(_) | PolicyChange::EditPolicy { .. } => applied || rejected,
    }
}

struct Ctx<'a> {
    before: &'a PapSnapshot,
    after: &'a PapSnapshot,
    change: &'a PolicyChange,
    tree: &'a str,
    mode: EngineMode,
    timeout: Duration,
}

enum Acquired {
    Ready(BTreeSet<AttributeRef>),
    Forced,
}

fn position(snap: &PapSnapshot, id: &str) -> usize {
    snap.trees().iter().position(|t| t.id() == id).unwrap_or(usize::MAX)
}

fn eval(
    rec: &mut SessionRecord,
    snap: &PapSnapshot,
    options: &EvalOptions,
) -> Result<PapEvaluation, UpdateError> {
    rec.counters.evaluate_request += 1;
    if options.is_filtered() {
        rec.counters.filter_policy += 1;
    }
    Ok(evaluate_pap(&rec.request, snap.trees(), options)?)
}

fn full(rec: &mut SessionRecord, snap: &PapSnapshot) -> Result<(), UpdateError> {
    let r = eval(rec, snap, &EvalOptions::default())?;
    rec.set_scan(r);
    Ok(())
}

/// Without a granting tree the decision is the first indeterminate among the
/// rejected trees, else NotApplicable.
fn settle(rec: &mut SessionRecord, snap: &PapSnapshot) {
    if rec.applied.is_some() {
        return;
    }
    rec.obligations.clear();
    rec.decision = snap
        .trees()
        .iter()
        .filter_map(|t| rec.rejected.get(t.id()))
        .copied()
        .find(|d| d.is_indeterminate())
        .unwrap_or(Decision::NotApplicable);
}

/// Folds in a scan that skipped `rec.non_applied`.
fn merge(rec: &mut SessionRecord, r: PapEvaluation, snap: &PapSnapshot) {
    for (t, d) in r.non_applied.iter().zip(&r.rejected_decisions) {
        rec.rejected.insert(t.clone(), *d);
        if !rec.non_applied.contains(t) {
            rec.non_applied.push(t.clone());
        }
    }
    rec.non_applied.sort_by_key(|t| position(snap, t));
    rec.applied = r.applied;
    match &rec.applied {
        Some(a) => {
            let limit = position(snap, a);
            rec.non_applied.retain(|t| position(snap, t) < limit);
            let keep: BTreeSet<&String> = rec.non_applied.iter().collect();
            rec.rejected.retain(|t, _| keep.contains(t));
            rec.decision = r.decision;
            rec.obligations = r.obligations;
        }
        None => settle(rec, snap),
    }
}

fn exclusion(rec: &SessionRecord, snap: &PapSnapshot) -> EvalOptions {
    EvalOptions::exclude(rec.non_applied.iter().filter(|t| snap.tree(t).is_some()).cloned())
}

/// The edited rule's effect, when the change asks for attributes.
fn pending_effect(change: &PolicyChange, after: &PapSnapshot, tree: &str) -> Option<Effect> {
    let PolicyChange::EditPolicy { kind, .. } = change else {
        return None;
    };
    match kind {
        EditKind::InsertRule(rule) | EditKind::EditRule(_, RuleEdit::Replace(rule)) => Some(rule.effect),
        EditKind::EditRule(id, RuleEdit::Condition(_)) => after
            .tree(tree)?
            .rules()
            .into_iter()
            .find(|r| r.id == *id)
            .map(|r| r.effect),
        _ => None,
    }
}

/// Requests attributes the edited tree needs but the session lacks, and
/// rewrites the request with the answers.
fn acquire<S: ObligationService>(
    rec: &mut SessionRecord,
    service: &mut S,
    ctx: &Ctx,
    attribute_request: &mut Option<Response>,
) -> Result<Acquired, UpdateError> {
    if rec.applied.as_deref() != Some(ctx.tree) {
        return Ok(Acquired::Ready(BTreeSet::new()));
    }
    let Some(pending) = pending_effect(ctx.change, ctx.after, ctx.tree) else {
        return Ok(Acquired::Ready(BTreeSet::new()));
    };
    let is_edit = ctx.change.change_type() == ChangeType::EditRule;
    let counts_always = is_edit && ctx.mode == EngineMode::Incremental;
    let t_star = ctx.after.tree(ctx.tree).expect("applied tree survives an edit");
    let lack = get_lack_att(&rec.request, t_star);
    if lack.is_empty() {
        if counts_always {
            rec.request = rewrite_request(&rec.request, &BTreeMap::new())?;
            rec.counters.rewrite_request += 1;
        }
        return Ok(Acquired::Ready(BTreeSet::new()));
    }
    let obligations = make_obligation(&lack, pending);
    rec.obligations_issued.extend(obligations.iter().cloned());
    *attribute_request = Some(Response::attribute_request(obligations.clone()));
    match service.fulfil(&rec.id, &obligations, ctx.timeout) {
        ObligationOutcome::Provided(values) => {
            let provided: BTreeMap<AttributeRef, AttributeValue> = lack
                .iter()
                .filter_map(|a| {
                    let v = values.get(&a.id)?;
                    (v.value_type() == a.data_type).then(|| (a.clone(), v.clone()))
                })
                .collect();
            if !provided.is_empty() || counts_always {
                rec.request = rewrite_request(&rec.request, &provided)?;
                rec.counters.rewrite_request += 1;
            }
            Ok(Acquired::Ready(provided.into_keys().collect()))
        }
        ObligationOutcome::Refused | ObligationOutcome::TimedOut => {
            rec.decision = pending.indeterminate();
            rec.applied = None;
            rec.non_applied.clear();
            rec.rejected.clear();
            rec.obligations.clear();
            rec.stale = true;
            Ok(Acquired::Forced)
        }
    }
}

fn tree_mentions(snap: &PapSnapshot, tree: &str, attrs: &BTreeSet<AttributeRef>) -> bool {
    snap.tree(tree)
        .is_some_and(|t| t.predicates().iter().any(|p| attrs.contains(&p.attr)))
}

fn incremental<S: ObligationService>(
    rec: &mut SessionRecord,
    service: &mut S,
    ctx: &Ctx,
    attribute_request: &mut Option<Response>,
) -> Result<(), UpdateError> {
    if rec.stale {
        return full(rec, ctx.after);
    }
    let tree = ctx.tree;
    let applied_here = rec.applied.as_deref() == Some(tree);
    match ctx.change {
        PolicyChange::DeletePolicy(_) => {
            if applied_here {
                let r = eval(rec, ctx.after, &exclusion(rec, ctx.after))?;
                merge(rec, r, ctx.after);
            } else {
                rec.forget(tree);
                settle(rec, ctx.after);
            }
        }
        PolicyChange::InsertPolicy(_) => {
            let r = eval(rec, ctx.after, &EvalOptions::only([tree]))?;
            if r.applied.is_some() {
                rec.applied = r.applied;
                rec.decision = r.decision;
                rec.obligations = r.obligations;
            } else {
                merge(rec, r, ctx.after);
            }
        }
        PolicyChange::EditPolicy { .. } if applied_here => {
            let Acquired::Ready(added) = acquire(rec, service, ctx, attribute_request)? else {
                return Ok(());
            };
            if !added.is_empty() {
                let stale: Vec<String> = rec
                    .non_applied
                    .iter()
                    .filter(|t| tree_mentions(ctx.after, t, &added))
                    .cloned()
                    .collect();
                for t in stale {
                    rec.forget(&t);
                }
            }
            let r = eval(rec, ctx.after, &exclusion(rec, ctx.after))?;
            merge(rec, r, ctx.after);
        }
        PolicyChange::EditPolicy { .. } => {
            let r = eval(rec, ctx.after, &EvalOptions::only([tree]))?;
            if r.applied.is_some() {
                let limit = position(ctx.after, tree);
                rec.non_applied.retain(|t| position(ctx.after, t) < limit);
                let keep: BTreeSet<&String> = rec.non_applied.iter().collect();
                rec.rejected.retain(|t, _| keep.contains(t));
                rec.applied = r.applied;
                rec.decision = r.decision;
                rec.obligations = r.obligations;
            } else {
                rec.rejected.insert(tree.to_string(), r.decision);
                settle(rec, ctx.after);
            }
        }
    }
    Ok(())
}

fn baseline<S: ObligationService>(
    rec: &mut SessionRecord,
    service: &mut S,
    ctx: &Ctx,
    attribute_request: &mut Option<Response>,
) -> Result<(), UpdateError> {
    if let Acquired::Forced = acquire(rec, service, ctx, attribute_request)? {
        return Ok(());
    }
    full(rec, ctx.after)
}

/// Session registry plus the policy store, applying changes one at a time.
pub struct UpdateEngine<S> {
    config: EngineConfig,
    store: PapStore,
    sessions: HashMap<String, (u64, SessionRecord)>,
    recency: BTreeMap<u64, String>,
    tick: u64,
    service: S,
}

impl<S: ObligationService> UpdateEngine<S> {
    pub fn new(snapshot: PapSnapshot, service: S, config: EngineConfig) -> Self {
        UpdateEngine {
            config,
            store: PapStore::new(snapshot),
            sessions: HashMap::new(),
            recency: BTreeMap::new(),
            tick: 0,
            service,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &PapStore {
        &self.store
    }

    pub fn snapshot(&self) -> Arc<PapSnapshot> {
        self.store.current()
    }

    pub fn service_mut(&mut self) -> &mut S {
        &mut self.service
    }

    pub fn session(&self, id: &str) -> Option<&SessionRecord> {
        self.sessions.get(id).map(|(_, r)| r)
    }

    /// All sessions, ordered by id.
    pub fn sessions(&self) -> Vec<&SessionRecord> {
        let mut out: Vec<&SessionRecord> = self.sessions.values().map(|(_, r)| r).collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    fn touch(&mut self, id: &str) {
        self.tick += 1;
        if let Some((t, _)) = self.sessions.get_mut(id) {
            self.recency.remove(t);
            *t = self.tick;
            self.recency.insert(self.tick, id.to_string());
        }
    }

    /// Evaluates `request` against the whole store and remembers the session.
    pub fn open_session(&mut self, id: &str, request: Request) -> Result<Response, UpdateError> {
        let mut rec = SessionRecord {
            id: id.to_string(),
            request,
            decision: Decision::NotApplicable,
            applied: None,
            non_applied: vec![],
            rejected: BTreeMap::new(),
            obligations: vec![],
            obligations_issued: vec![],
            counters: Counters {
                parse_request: 1,
                load_policies: 1,
                ..Counters::default()
            },
            stale: false,
        };
        full(&mut rec, &self.store.current())?;
        let response = rec.response();
        if let Some((t, _)) = self.sessions.remove(id) {
            self.recency.remove(&t);
        }
        self.sessions.insert(id.to_string(), (0, rec));
        self.touch(id);
        while self.sessions.len() > self.config.capacity.max(1) {
            let (_, oldest) = self.recency.pop_first().expect("non-empty registry");
            self.sessions.remove(&oldest);
        }
        Ok(response)
    }

    /// The session's current response; dropped sessions are opened again.
    pub fn contact(&mut self, id: &str, request: Request) -> Result<Response, UpdateError> {
        match self.sessions.get(id) {
            Some((_, rec)) if !rec.stale => {
                let response = rec.response();
                self.touch(id);
                Ok(response)
            }
            _ => self.open_session(id, request),
        }
    }

    pub fn apply_event(&mut self, event: &UpdateEvent) -> Result<ChangeReport, UpdateError> {
        let before = self.store.current();
        let change = PolicyChange::from_event(event, &before)?;
        let tree = match &change {
            PolicyChange::DeletePolicy(id) => id.clone(),
            PolicyChange::InsertPolicy(t) => t.id().to_string(),
            PolicyChange::EditPolicy { policy, .. } => before
                .top_level_of(policy)
                .ok_or_else(|| PapError::TargetNotFound(policy.clone()))?
                .to_string(),
        };
        let after = self.store.apply(event)?;
        let mut warnings = Vec::new();
        if let UpdateEvent::SetEffect { target, .. } = event {
            warnings.push(format!(
                "changing the effect of {target} changes what the rule means; affected sessions are re-evaluated"
            ));
        }
        let ctx = Ctx {
            before: &before,
            after: &after,
            change: &change,
            tree: &tree,
            mode: self.config.mode,
            timeout: self.config.timeout,
        };
        let mut ids: Vec<String> = self.sessions.keys().cloned().collect();
        ids.sort();
        let mut report = ChangeReport {
            change_type: change.change_type(),
            version: after.version(),
            affected: vec![],
            outcomes: vec![],
            counters: Counters::default(),
            warnings,
        };
        for id in ids {
            let (_, rec) = self.sessions.get_mut(&id).expect("listed session");
            let start = rec.counters;
            rec.counters.load_policies += 1;
            if let Some(a) = &rec.applied {
                if ctx.before.tree(a).is_none() && ctx.after.tree(a).is_none() {
                    return Err(UpdateError::StaleSession(id));
                }
            }
            let hit = match ctx.mode {
                EngineMode::Baseline => true,
                EngineMode::Incremental => affects(&change, &tree, rec),
            };
            if hit {
                let mut attribute_request = None;
                match ctx.mode {
                    EngineMode::Baseline => baseline(rec, &mut self.service, &ctx, &mut attribute_request)?,
                    EngineMode::Incremental => {
                        incremental(rec, &mut self.service, &ctx, &mut attribute_request)?
                    }
                }
                report.outcomes.push(SessionOutcome {
                    session: id.clone(),
                    attribute_request,
                    response: rec.response(),
                });
                report.affected.push(id.clone());
            }
            let used = rec.counters;
            report.counters += Counters {
                parse_request: used.parse_request - start.parse_request,
                load_policies: used.load_policies - start.load_policies,
                evaluate_request: used.evaluate_request - start.evaluate_request,
                filter_policy: used.filter_policy - start.filter_policy,
                rewrite_request: used.rewrite_request - start.rewrite_request,
            };
            if hit {
                self.touch(&id);
            }
        }
        Ok(report)
    }
}
