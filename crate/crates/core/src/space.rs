//! Decision spaces: every decision of a rule or policy tree as a boolean
//! formula over two kinds of atoms.
//!
//! * `ac` atoms hold when a predicate is satisfied by some value of its
//!   attribute in the request (false when the attribute is absent);
//! * `at` atoms hold when an attribute used by a condition is absent.
//!
//! Formulas live in a hash-consed arena so that subformulas shared by the
//! combining equations are stored and evaluated once. Only constant folding
//! is applied while building; partition and equivalence are checked by
//! enumerating requests.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::model::*;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpaceError {
    #[error("no atom assigned to predicate {0}")]
    UnmappedPredicate(String),
    #[error("only-one-applicable cannot combine rules (policy {0})")]
    OnlyOneApplicableOnRules(String),
    #[error("decision space is not a partition here: {holding:?} hold")]
    PartitionViolation { holding: Vec<Decision> },
    #[error("request domain has {size} combinations, bound is {bound}")]
    DomainTooLarge { size: u128, bound: u128 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Atom {
    /// Applicable constraint: a predicate holds for the request.
    Ac { name: String, predicate: Predicate },
    /// Attribute type: the attribute is absent from the request.
    At { name: String, attr: AttributeRef },
}

impl Atom {
    pub fn name(&self) -> &str {
        match self {
            Atom::Ac { name, .. } | Atom::At { name, .. } => name,
        }
    }
}

/// Atoms of one encoding, indexed densely.
#[derive(Debug, Clone, Default)]
pub struct AtomTable {
    atoms: Vec<Atom>,
    ac_index: HashMap<Predicate, usize>,
    at_index: HashMap<AttributeRef, usize>,
}

impl AtomTable {
    /// One `ac` atom per distinct predicate and one `at` atom per attribute
    /// used in any condition, numbered in pre-order.
    pub fn for_nodes<'a>(nodes: impl IntoIterator<Item = &'a PolicyNode>) -> Self {
        let mut table = AtomTable::default();
        let nodes: Vec<&PolicyNode> = nodes.into_iter().collect();
        for node in &nodes {
            for p in node.predicates() {
                table.add_predicate(p);
            }
        }
        for node in &nodes {
            for a in node.condition_attributes() {
                table.add_attribute(&a);
            }
        }
        table
    }

    pub fn for_node(node: &PolicyNode) -> Self {
        Self::for_nodes([node])
    }

    pub fn add_predicate(&mut self, p: &Predicate) -> usize {
        if let Some(&i) = self.ac_index.get(p) {
            return i;
        }
        let name = format!("ac{}", self.ac_index.len());
        self.atoms.push(Atom::Ac {
            name,
            predicate: p.clone(),
        });
        self.ac_index.insert(p.clone(), self.atoms.len() - 1);
        self.atoms.len() - 1
    }

    pub fn add_attribute(&mut self, a: &AttributeRef) -> usize {
        if let Some(&i) = self.at_index.get(a) {
            return i;
        }
        let name = format!("at{}", self.at_index.len());
        self.atoms.push(Atom::At {
            name,
            attr: a.clone(),
        });
        self.at_index.insert(a.clone(), self.atoms.len() - 1);
        self.atoms.len() - 1
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn ac(&self, p: &Predicate) -> Option<usize> {
        self.ac_index.get(p).copied()
    }

    pub fn at(&self, a: &AttributeRef) -> Option<usize> {
        self.at_index.get(a).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<usize> {
        self.atoms.iter().position(|a| a.name() == name)
    }

    /// Every attribute any atom refers to.
    pub fn attributes(&self) -> BTreeSet<AttributeRef> {
        self.atoms
            .iter()
            .map(|a| match a {
                Atom::Ac { predicate, .. } => predicate.attr.clone(),
                Atom::At { attr, .. } => attr.clone(),
            })
            .collect()
    }
}

pub type FormulaId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Node {
    Const(bool),
    Atom(u32),
    Not(FormulaId),
    And(Vec<FormulaId>),
    Or(Vec<FormulaId>),
}

/// Arena of formulas. Children always have smaller ids than their parents.
#[derive(Debug, Clone)]
pub struct Formulas {
    nodes: Vec<Node>,
    interned: HashMap<Node, FormulaId>,
}

impl Default for Formulas {
    fn default() -> Self {
        let mut f = Formulas {
            nodes: Vec::new(),
            interned: HashMap::new(),
        };
        f.intern(Node::Const(false));
        f.intern(Node::Const(true));
        f
    }
}

impl Formulas {
    /// `∅`
    pub const EMPTY: FormulaId = 0;
    /// `ℛ`
    pub const FULL: FormulaId = 1;

    pub fn new() -> Self {
        Self::default()
    }

    fn intern(&mut self, node: Node) -> FormulaId {
        if let Some(&id) = self.interned.get(&node) {
            return id;
        }
        let id = self.nodes.len() as FormulaId;
        self.nodes.push(node.clone());
        self.interned.insert(node, id);
        id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 2
    }

    pub fn atom(&mut self, index: usize) -> FormulaId {
        self.intern(Node::Atom(index as u32))
    }

    pub fn not(&mut self, x: FormulaId) -> FormulaId {
        match x {
            Self::EMPTY => Self::FULL,
            Self::FULL => Self::EMPTY,
            _ => self.intern(Node::Not(x)),
        }
    }

    pub fn and(&mut self, xs: impl IntoIterator<Item = FormulaId>) -> FormulaId {
        let mut kept = Vec::new();
        for x in xs {
            match x {
                Self::EMPTY => return Self::EMPTY,
                Self::FULL => {}
                _ => kept.push(x),
            }
        }
        match kept.len() {
            0 => Self::FULL,
            1 => kept[0],
            _ => self.intern(Node::And(kept)),
        }
    }

    pub fn or(&mut self, xs: impl IntoIterator<Item = FormulaId>) -> FormulaId {
        let mut kept = Vec::new();
        for x in xs {
            match x {
                Self::FULL => return Self::FULL,
                Self::EMPTY => {}
                _ => kept.push(x),
            }
        }
        match kept.len() {
            0 => Self::EMPTY,
            1 => kept[0],
            _ => self.intern(Node::Or(kept)),
        }
    }

    /// Set difference `a \ b`.
    pub fn diff(&mut self, a: FormulaId, b: FormulaId) -> FormulaId {
        let nb = self.not(b);
        self.and([a, nb])
    }

    /// Truth value of every node under `v`, indexed by [`FormulaId`].
    pub fn evaluate_all(&self, v: &AtomValuation) -> Vec<bool> {
        let mut out: Vec<bool> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node {
                Node::Const(b) => *b,
                Node::Atom(i) => v.get(*i as usize),
                Node::Not(x) => !out[*x as usize],
                Node::And(xs) => xs.iter().all(|x| out[*x as usize]),
                Node::Or(xs) => xs.iter().any(|x| out[*x as usize]),
            };
            out.push(value);
        }
        out
    }

    pub fn evaluate(&self, id: FormulaId, v: &AtomValuation) -> bool {
        self.evaluate_all(v)[id as usize]
    }

    /// Size of `id` when written out as a tree.
    pub fn tree_size(&self, id: FormulaId) -> u64 {
        let mut sizes: Vec<u64> = Vec::with_capacity(id as usize + 1);
        for node in &self.nodes[..=id as usize] {
            let s = match node {
                Node::Const(_) | Node::Atom(_) => 1,
                Node::Not(x) => 1 + sizes[*x as usize],
                Node::And(xs) | Node::Or(xs) => xs
                    .iter()
                    .fold(1u64, |acc, x| acc.saturating_add(sizes[*x as usize])),
            };
            sizes.push(s);
        }
        sizes[id as usize]
    }

    /// Prefix notation, e.g. `(and ac0 (not at1))`; `R` is the full space and
    /// `0` the empty one.
    pub fn to_prefix(&self, id: FormulaId, table: &AtomTable) -> String {
        let mut out = String::new();
        self.write_prefix(id, table, &mut out, None);
        out
    }

    fn write_prefix(
        &self,
        id: FormulaId,
        table: &AtomTable,
        out: &mut String,
        shared: Option<&BTreeSet<FormulaId>>,
    ) {
        let node = &self.nodes[id as usize];
        let (op, children): (&str, &[FormulaId]) = match node {
            Node::Const(true) => return out.push('R'),
            Node::Const(false) => return out.push('0'),
            Node::Atom(i) => return out.push_str(table.atoms[*i as usize].name()),
            Node::Not(x) => ("not", std::slice::from_ref(x)),
            Node::And(xs) => ("and", xs),
            Node::Or(xs) => ("or", xs),
        };
        out.push('(');
        out.push_str(op);
        for c in children {
            out.push(' ');
            match shared {
                Some(s) if s.contains(c) => {
                    let _ = write!(out, "#{c}");
                }
                _ => self.write_prefix(*c, table, out, shared),
            }
        }
        out.push(')');
    }

    /// Definitions `#k = ...` for every compound node reachable from `roots`,
    /// children first. Used when tree form would be too large.
    pub fn to_prefix_dag(&self, roots: &[FormulaId], table: &AtomTable) -> Vec<String> {
        let mut reachable = BTreeSet::new();
        let mut stack: Vec<FormulaId> = roots.to_vec();
        while let Some(id) = stack.pop() {
            match &self.nodes[id as usize] {
                Node::Not(x) => {
                    if reachable.insert(id) {
                        stack.push(*x)
                    }
                }
                Node::And(xs) | Node::Or(xs) => {
                    if reachable.insert(id) {
                        stack.extend(xs.iter().copied())
                    }
                }
                _ => {}
            }
        }
        reachable
            .iter()
            .map(|&id| {
                let mut line = format!("#{id} = ");
                let mut body = String::new();
                self.write_prefix(id, table, &mut body, Some(&without(&reachable, id)));
                line.push_str(&body);
                line
            })
            .collect()
    }
}

fn without(set: &BTreeSet<FormulaId>, id: FormulaId) -> BTreeSet<FormulaId> {
    let mut s = set.clone();
    s.remove(&id);
    s
}

/// Six formulas, one per decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionSpace {
    pub permit: FormulaId,
    pub deny: FormulaId,
    pub indeterminate_p: FormulaId,
    pub indeterminate_d: FormulaId,
    pub indeterminate_pd: FormulaId,
    pub not_applicable: FormulaId,
}

impl DecisionSpace {
    /// The space where `decision` covers everything.
    pub fn point(decision: Decision) -> Self {
        let pick = |d: Decision| {
            if d == decision {
                Formulas::FULL
            } else {
                Formulas::EMPTY
            }
        };
        DecisionSpace {
            permit: pick(Decision::Permit),
            deny: pick(Decision::Deny),
            indeterminate_p: pick(Decision::IndeterminateP),
            indeterminate_d: pick(Decision::IndeterminateD),
            indeterminate_pd: pick(Decision::IndeterminatePD),
            not_applicable: pick(Decision::NotApplicable),
        }
    }

    pub fn get(&self, d: Decision) -> FormulaId {
        match d {
            Decision::Permit => self.permit,
            Decision::Deny => self.deny,
            Decision::IndeterminateP => self.indeterminate_p,
            Decision::IndeterminateD => self.indeterminate_d,
            Decision::IndeterminatePD => self.indeterminate_pd,
            Decision::NotApplicable => self.not_applicable,
        }
    }

    /// `DS_IN`: union of the three indeterminate flavours.
    pub fn indeterminate(&self, f: &mut Formulas) -> FormulaId {
        f.or([self.indeterminate_p, self.indeterminate_d, self.indeterminate_pd])
    }
}

/// Truth assignment for every atom of a table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomValuation(pub Vec<bool>);

impl AtomValuation {
    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }
}

pub fn valuation_from_request(req: &Request, table: &AtomTable) -> AtomValuation {
    AtomValuation(
        table
            .atoms
            .iter()
            .map(|a| match a {
                Atom::Ac { predicate, .. } => req
                    .lookup(&predicate.attr)
                    .is_some_and(|values| predicate.holds_any(values)),
                Atom::At { attr, .. } => !req.contains(attr),
            })
            .collect(),
    )
}

/// Deliberate encoding defects, used to check that the oracle notices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    FlipRuleEffects,
}

/// Builds decision spaces over one atom table.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub table: AtomTable,
    pub formulas: Formulas,
    mutation: Option<Mutation>,
}

impl Encoder {
    pub fn new(table: AtomTable) -> Self {
        Encoder {
            table,
            formulas: Formulas::new(),
            mutation: None,
        }
    }

    pub fn with_mutation(mut self, mutation: Mutation) -> Self {
        self.mutation = Some(mutation);
        self
    }

    fn ac(&mut self, p: &Predicate) -> Result<FormulaId, SpaceError> {
        let i = self
            .table
            .ac(p)
            .ok_or_else(|| SpaceError::UnmappedPredicate(p.to_string()))?;
        Ok(self.formulas.atom(i))
    }

    fn at(&mut self, a: &AttributeRef) -> Result<FormulaId, SpaceError> {
        let i = self
            .table
            .at(a)
            .ok_or_else(|| SpaceError::UnmappedPredicate(format!("attribute {a}")))?;
        Ok(self.formulas.atom(i))
    }

    pub fn encode_target(&mut self, target: &Target) -> Result<FormulaId, SpaceError> {
        let mut any_ofs = Vec::new();
        for any in &target.any_ofs {
            let mut all_ofs = Vec::new();
            for all in &any.all_ofs {
                let mut ms = Vec::new();
                for m in &all.matches {
                    ms.push(self.ac(m)?);
                }
                all_ofs.push(self.formulas.and(ms));
            }
            any_ofs.push(self.formulas.or(all_ofs));
        }
        Ok(self.formulas.and(any_ofs))
    }

    /// Two-valued formula over `ac` atoms only.
    fn condition_formula(&mut self, c: &Condition) -> Result<FormulaId, SpaceError> {
        Ok(match c {
            Condition::True => Formulas::FULL,
            Condition::Predicate(p) => self.ac(p)?,
            Condition::Not(inner) => {
                let x = self.condition_formula(inner)?;
                self.formulas.not(x)
            }
            Condition::And(cs) => {
                let xs = cs
                    .iter()
                    .map(|c| self.condition_formula(c))
                    .collect::<Result<Vec<_>, _>>()?;
                self.formulas.and(xs)
            }
            Condition::Or(cs) => {
                let xs = cs
                    .iter()
                    .map(|c| self.condition_formula(c))
                    .collect::<Result<Vec<_>, _>>()?;
                self.formulas.or(xs)
            }
        })
    }

    /// `(definitely true, definitely false)` under Kleene semantics.
    fn condition_kleene(&mut self, c: &Condition) -> Result<(FormulaId, FormulaId), SpaceError> {
        Ok(match c {
            Condition::True => (Formulas::FULL, Formulas::EMPTY),
            Condition::Predicate(p) => {
                let ac = self.ac(p)?;
                let at = self.at(&p.attr)?;
                let present = self.formulas.not(at);
                let not_ac = self.formulas.not(ac);
                (
                    self.formulas.and([ac, present]),
                    self.formulas.and([not_ac, present]),
                )
            }
            Condition::Not(inner) => {
                let (t, f) = self.condition_kleene(inner)?;
                (f, t)
            }
            Condition::And(cs) | Condition::Or(cs) => {
                let mut ts = Vec::new();
                let mut fs = Vec::new();
                for c in cs {
                    let (t, f) = self.condition_kleene(c)?;
                    ts.push(t);
                    fs.push(f);
                }
                if matches!(c, Condition::And(_)) {
                    (self.formulas.and(ts), self.formulas.or(fs))
                } else {
                    (self.formulas.or(ts), self.formulas.and(fs))
                }
            }
        })
    }

    /// `(applicable, indeterminate)` regions of a condition.
    fn condition_regions(&mut self, c: &Condition) -> Result<(FormulaId, FormulaId), SpaceError> {
        let attrs = c.attributes();
        if attrs.len() == 1 {
            // One attribute: it is either absent (indeterminate) or the
            // two-valued formula decides.
            let attr = attrs[0].clone();
            let phi = self.condition_formula(c)?;
            let alpha = self.at(&attr)?;
            let applicable = self.formulas.diff(phi, alpha);
            return Ok((applicable, alpha));
        }
        let (t, f) = self.condition_kleene(c)?;
        let undecided = self.formulas.or([t, f]);
        let indeterminate = self.formulas.not(undecided);
        Ok((t, indeterminate))
    }

    pub fn encode_rule(&mut self, rule: &Rule) -> Result<DecisionSpace, SpaceError> {
        let tau = self.encode_target(&rule.target)?;
        let (applicable, indeterminate) = self.condition_regions(&rule.condition)?;
        let fires = self.formulas.and([tau, applicable]);
        let unsure = self.formulas.and([tau, indeterminate]);
        let covered = self.formulas.or([fires, unsure]);
        let na = self.formulas.not(covered);
        let effect = match self.mutation {
            Some(Mutation::FlipRuleEffects) => rule.effect.flipped(),
            None => rule.effect,
        };
        let mut ds = DecisionSpace::point(Decision::NotApplicable);
        ds.not_applicable = na;
        match effect {
            Effect::Permit => {
                ds.permit = fires;
                ds.indeterminate_p = unsure;
            }
            Effect::Deny => {
                ds.deny = fires;
                ds.indeterminate_d = unsure;
            }
        }
        Ok(ds)
    }

    /// Combines two spaces with the set equations of each algorithm.
    pub fn combine_spaces(
        &mut self,
        alg: CombiningAlgorithm,
        a: &DecisionSpace,
        b: &DecisionSpace,
    ) -> DecisionSpace {
        let f = &mut self.formulas;
        let na = f.and([a.not_applicable, b.not_applicable]);
        match alg {
            CombiningAlgorithm::DenyOverrides | CombiningAlgorithm::PermitOverrides => {
                // Written for deny-overrides; permit-overrides swaps roles.
                let deny_wins = alg == CombiningAlgorithm::DenyOverrides;
                let (a_win, a_lose, a_in_win, a_in_lose) = if deny_wins {
                    (a.deny, a.permit, a.indeterminate_d, a.indeterminate_p)
                } else {
                    (a.permit, a.deny, a.indeterminate_p, a.indeterminate_d)
                };
                let (b_win, b_lose, b_in_win, b_in_lose) = if deny_wins {
                    (b.deny, b.permit, b.indeterminate_d, b.indeterminate_p)
                } else {
                    (b.permit, b.deny, b.indeterminate_p, b.indeterminate_d)
                };
                let win = f.or([a_win, b_win]);
                let both_pd = f.or([a.indeterminate_pd, b.indeterminate_pd]);
                let b_other = f.or([b_in_lose, b_lose]);
                let left = f.and([a_in_win, b_other]);
                let a_other = f.or([a_in_lose, a_lose]);
                let right = f.and([b_in_win, a_other]);
                let pd_raw = f.or([both_pd, left, right]);
                let pd = f.diff(pd_raw, win);
                let in_win_raw = f.or([a_in_win, b_in_win]);
                let above = f.or([win, pd]);
                let in_win = f.diff(in_win_raw, above);
                let lose_raw = f.or([a_lose, b_lose]);
                let above = f.or([win, pd, in_win]);
                let lose = f.diff(lose_raw, above);
                let in_lose_raw = f.or([a_in_lose, b_in_lose]);
                let above = f.or([win, pd, in_win, lose]);
                let in_lose = f.diff(in_lose_raw, above);
                let (permit, deny, inp, ind) = if deny_wins {
                    (lose, win, in_lose, in_win)
                } else {
                    (win, lose, in_win, in_lose)
                };
                DecisionSpace {
                    permit,
                    deny,
                    indeterminate_p: inp,
                    indeterminate_d: ind,
                    indeterminate_pd: pd,
                    not_applicable: na,
                }
            }
            CombiningAlgorithm::OnlyOneApplicable => {
                let only = |f: &mut Formulas, x: FormulaId, y: FormulaId| {
                    let l = f.and([x, b.not_applicable]);
                    let r = f.and([a.not_applicable, y]);
                    f.or([l, r])
                };
                let deny = only(f, a.deny, b.deny);
                let permit = only(f, a.permit, b.permit);
                let inp = only(f, a.indeterminate_p, b.indeterminate_p);
                let ind = only(f, a.indeterminate_d, b.indeterminate_d);
                let pp = f.and([a.permit, b.permit]);
                let pd = f.and([a.permit, b.deny]);
                let dp = f.and([a.deny, b.permit]);
                let dd = f.and([a.deny, b.deny]);
                let a_in = a.indeterminate(f);
                let b_in = b.indeterminate(f);
                let all_in = f.or([pp, pd, dp, dd, a_in, b_in]);
                let flavoured = f.or([inp, ind]);
                let inpd = f.diff(all_in, flavoured);
                DecisionSpace {
                    permit,
                    deny,
                    indeterminate_p: inp,
                    indeterminate_d: ind,
                    indeterminate_pd: inpd,
                    not_applicable: na,
                }
            }
            CombiningAlgorithm::DenyUnlessPermit => {
                let permit = f.or([a.permit, b.permit]);
                let deny = f.diff(Formulas::FULL, permit);
                DecisionSpace {
                    permit,
                    deny,
                    ..DecisionSpace::point(Decision::Permit)
                }
                .with_empty_rest()
            }
            CombiningAlgorithm::PermitUnlessDeny => {
                let deny = f.or([a.deny, b.deny]);
                let permit = f.diff(Formulas::FULL, deny);
                DecisionSpace {
                    permit,
                    deny,
                    ..DecisionSpace::point(Decision::Permit)
                }
                .with_empty_rest()
            }
            CombiningAlgorithm::FirstApplicable => {
                let first = |f: &mut Formulas, x: FormulaId, y: FormulaId| {
                    let fallthrough = f.and([a.not_applicable, y]);
                    f.or([x, fallthrough])
                };
                DecisionSpace {
                    permit: first(f, a.permit, b.permit),
                    deny: first(f, a.deny, b.deny),
                    indeterminate_p: first(f, a.indeterminate_p, b.indeterminate_p),
                    indeterminate_d: first(f, a.indeterminate_d, b.indeterminate_d),
                    indeterminate_pd: first(f, a.indeterminate_pd, b.indeterminate_pd),
                    not_applicable: na,
                }
            }
        }
    }

    fn fold(
        &mut self,
        alg: CombiningAlgorithm,
        children: Vec<DecisionSpace>,
    ) -> DecisionSpace {
        let seed = DecisionSpace::point(crate::eval::combine_identity(alg));
        children
            .iter()
            .fold(seed, |acc, c| self.combine_spaces(alg, &acc, c))
    }

    fn restrict(&mut self, target: &Target, ds: DecisionSpace) -> Result<DecisionSpace, SpaceError> {
        let tau = self.encode_target(target)?;
        let f = &mut self.formulas;
        let outside = f.not(tau);
        let inside_na = f.and([tau, ds.not_applicable]);
        Ok(DecisionSpace {
            permit: f.and([tau, ds.permit]),
            deny: f.and([tau, ds.deny]),
            indeterminate_p: f.and([tau, ds.indeterminate_p]),
            indeterminate_d: f.and([tau, ds.indeterminate_d]),
            indeterminate_pd: f.and([tau, ds.indeterminate_pd]),
            not_applicable: f.or([outside, inside_na]),
        })
    }

    pub fn encode_node(&mut self, node: &PolicyNode) -> Result<DecisionSpace, SpaceError> {
        let folded = match node {
            PolicyNode::Policy(p) => {
                if p.algorithm == CombiningAlgorithm::OnlyOneApplicable {
                    return Err(SpaceError::OnlyOneApplicableOnRules(p.id.clone()));
                }
                let rules = p
                    .rules
                    .iter()
                    .map(|r| self.encode_rule(r))
                    .collect::<Result<Vec<_>, _>>()?;
                self.fold(p.algorithm, rules)
            }
            PolicyNode::PolicySet(s) => {
                let children = s
                    .children
                    .iter()
                    .map(|c| self.encode_node(c))
                    .collect::<Result<Vec<_>, _>>()?;
                self.fold(s.algorithm, children)
            }
        };
        self.restrict(node.target(), folded)
    }

    /// Pretty dump: the atom table, then one `dsX: formula` line per decision.
    pub fn dump(&self, ds: &DecisionSpace) -> String {
        const TREE_LIMIT: u64 = 100_000;
        let mut out = String::new();
        for atom in self.table.atoms() {
            let _ = match atom {
                Atom::Ac { name, predicate } => writeln!(out, "{name}: {predicate}"),
                Atom::At { name, attr } => writeln!(out, "{name}: {attr} absent"),
            };
        }
        let rows = space_rows(ds);
        let roots: Vec<FormulaId> = rows.iter().map(|r| r.1).collect();
        let large = roots.iter().any(|&r| self.formulas.tree_size(r) > TREE_LIMIT);
        if large {
            for line in self.formulas.to_prefix_dag(&roots, &self.table) {
                let _ = writeln!(out, "{line}");
            }
        }
        for (label, id) in rows {
            let body = if large && self.formulas.tree_size(id) > 1 {
                format!("#{id}")
            } else {
                self.formulas.to_prefix(id, &self.table)
            };
            let _ = writeln!(out, "{label}: {body}");
        }
        out
    }
}

fn space_rows(ds: &DecisionSpace) -> [(&'static str, FormulaId); 6] {
    [
        ("dsP", ds.permit),
        ("dsD", ds.deny),
        ("dsINP", ds.indeterminate_p),
        ("dsIND", ds.indeterminate_d),
        ("dsINPD", ds.indeterminate_pd),
        ("dsNA", ds.not_applicable),
    ]
}

impl DecisionSpace {
    fn with_empty_rest(mut self) -> Self {
        self.indeterminate_p = Formulas::EMPTY;
        self.indeterminate_d = Formulas::EMPTY;
        self.indeterminate_pd = Formulas::EMPTY;
        self.not_applicable = Formulas::EMPTY;
        self
    }
}

/// The unique decision whose formula holds under `v`.
pub fn evaluate_space(
    formulas: &Formulas,
    ds: &DecisionSpace,
    v: &AtomValuation,
) -> Result<Decision, SpaceError> {
    let values = formulas.evaluate_all(v);
    decision_from_values(&values, ds)
}

/// Like [`evaluate_space`] but reuses node values already computed with
/// [`Formulas::evaluate_all`].
pub fn decision_from_values(values: &[bool], ds: &DecisionSpace) -> Result<Decision, SpaceError> {
    let holding: Vec<Decision> = Decision::ALL
        .into_iter()
        .filter(|d| values[ds.get(*d) as usize])
        .collect();
    match holding.as_slice() {
        [d] => Ok(*d),
        _ => Err(SpaceError::PartitionViolation { holding }),
    }
}

/// A complete encoding of one policy tree.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub encoder: Encoder,
    pub space: DecisionSpace,
}

impl Encoding {
    pub fn of_node(node: &PolicyNode) -> Result<Self, SpaceError> {
        Self::build(Encoder::new(AtomTable::for_node(node)), node)
    }

    pub fn build(mut encoder: Encoder, node: &PolicyNode) -> Result<Self, SpaceError> {
        let space = encoder.encode_node(node)?;
        Ok(Encoding { encoder, space })
    }

    pub fn table(&self) -> &AtomTable {
        &self.encoder.table
    }

    pub fn decide(&self, req: &Request) -> Result<Decision, SpaceError> {
        let v = valuation_from_request(req, &self.encoder.table);
        evaluate_space(&self.encoder.formulas, &self.space, &v)
    }

    pub fn dump(&self) -> String {
        self.encoder.dump(&self.space)
    }
}

/// Finite value domain per attribute; absence is always added implicitly.
pub type Domains = BTreeMap<AttributeRef, Vec<AttributeValue>>;

pub const DEFAULT_ENUMERATION_BOUND: u128 = 1_000_000;

/// Number of requests [`enumerate_requests`] would produce.
pub fn domain_size(domains: &Domains) -> u128 {
    domains
        .values()
        .fold(1u128, |acc, v| acc.saturating_mul(v.len() as u128 + 1))
}

/// Cartesian product over every attribute taking each of its values or
/// being absent.
pub fn enumerate_requests(
    domains: &Domains,
    bound: u128,
) -> Result<RequestEnumeration, SpaceError> {
    let size = domain_size(domains);
    if size > bound {
        return Err(SpaceError::DomainTooLarge { size, bound });
    }
    Ok(RequestEnumeration {
        axes: domains.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        digits: vec![0; domains.len()],
        done: false,
    })
}

#[derive(Debug, Clone)]
pub struct RequestEnumeration {
    axes: Vec<(AttributeRef, Vec<AttributeValue>)>,
    digits: Vec<usize>,
    done: bool,
}

impl Iterator for RequestEnumeration {
    type Item = Request;

    fn next(&mut self) -> Option<Request> {
        if self.done {
            return None;
        }
        let mut req = Request::new();
        for ((attr, values), &digit) in self.axes.iter().zip(&self.digits) {
            if digit > 0 {
                req.push(attr.category, &attr.id, values[digit - 1].clone());
            }
        }
        // Advance the mixed-radix counter.
        self.done = true;
        for (digit, (_, values)) in self.digits.iter_mut().zip(&self.axes) {
            if *digit < values.len() {
                *digit += 1;
                self.done = false;
                break;
            }
            *digit = 0;
        }
        Some(req)
    }
}

/// Domains derived from the literals of a policy: each literal plus
/// neighbours on both sides for ordered types, plus one value outside every
/// literal for strings.
pub fn derive_domains<'a>(nodes: impl IntoIterator<Item = &'a PolicyNode>) -> Domains {
    let mut sets: BTreeMap<AttributeRef, BTreeSet<AttributeValue>> = BTreeMap::new();
    for node in nodes {
        for p in node.predicates() {
            let set = sets.entry(p.attr.clone()).or_default();
            match &p.operand {
                Operand::StringSet(members) => {
                    set.extend(members.iter().map(|m| AttributeValue::String(m.clone())))
                }
                Operand::Value(v) => set.extend(neighbours(v)),
            }
        }
    }
    sets.into_iter()
        .map(|(attr, mut values)| {
            if attr.data_type == ValueType::String {
                values.insert(AttributeValue::string("~other"));
            }
            (attr, values.into_iter().collect())
        })
        .collect()
}

fn neighbours(v: &AttributeValue) -> Vec<AttributeValue> {
    match v {
        AttributeValue::Integer(i) => vec![
            AttributeValue::Integer(i.saturating_sub(1)),
            v.clone(),
            AttributeValue::Integer(i.saturating_add(1)),
        ],
        AttributeValue::Time(t) => {
            let s = t.seconds();
            let mut out = vec![v.clone()];
            out.extend(s.checked_sub(60).and_then(TimeOfDay::from_seconds).map(AttributeValue::Time));
            out.extend(TimeOfDay::from_seconds(s + 60).map(AttributeValue::Time));
            out
        }
        AttributeValue::Date(d) => {
            let mut out = vec![v.clone()];
            out.extend(d.succ_opt().map(AttributeValue::Date));
            out
        }
        AttributeValue::Boolean(_) => {
            vec![AttributeValue::Boolean(false), AttributeValue::Boolean(true)]
        }
        AttributeValue::String(_) => vec![v.clone()],
    }
}

/// Outcome of an oracle run over an enumerated request domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleReport {
    pub requests: u64,
    pub mismatch: Option<OracleMismatch>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleMismatch {
    pub request: Request,
    pub direct: Decision,
    pub space: Result<Decision, SpaceError>,
}

/// Checks the partition property and agreement with direct evaluation on
/// every request of the domain; stops at the first counterexample.
pub fn check_equivalence(
    encoding: &Encoding,
    node: &PolicyNode,
    domains: &Domains,
    bound: u128,
) -> Result<OracleReport, SpaceError> {
    let mut requests = 0;
    for req in enumerate_requests(domains, bound)? {
        requests += 1;
        let direct = crate::eval::eval_node(node, &req)
            .map(|r| r.decision.unwrap_or(Decision::NotApplicable))
            .map_err(|_| SpaceError::OnlyOneApplicableOnRules(node.id().to_string()))?;
        let space = encoding.decide(&req);
        if space.as_ref() != Ok(&direct) {
            return Ok(OracleReport {
                requests,
                mismatch: Some(OracleMismatch {
                    request: req,
                    direct,
                    space,
                }),
            });
        }
    }
    Ok(OracleReport {
        requests,
        mismatch: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval;
    use crate::scenario::{self, *};

    fn encoder_for(node: &PolicyNode) -> Encoder {
        Encoder::new(AtomTable::for_node(node))
    }

    #[test]
    fn atom_numbering_follows_the_running_example() {
        let p = example_policy();
        let t = AtomTable::for_node(&p);
        let names: Vec<&str> = t.atoms().iter().map(|a| a.name()).collect();
        assert_eq!(
            names,
            ["ac0", "ac1", "ac2", "ac3", "ac4", "ac5", "ac6", "ac7", "ac8", "at0", "at1", "at2", "at3", "at4"]
        );
        assert_eq!(t.at(&current_time()), t.by_name("at0"));
        assert_eq!(t.at(&scenario::disease()), t.by_name("at4"));
    }

    #[test]
    fn rule1_space_matches_the_printed_formula() {
        let p = example_policy();
        let mut enc = encoder_for(&p);
        let ds = enc.encode_rule(&rule1()).unwrap();
        assert_eq!(ds.permit, Formulas::EMPTY);
        assert_eq!(enc.formulas.to_prefix(ds.deny, &enc.table), "(and (or ac3 ac4) (not at0))");
        assert_eq!(enc.formulas.to_prefix(ds.indeterminate_d, &enc.table), "at0");
        let ds6 = enc.encode_rule(&rule6()).unwrap();
        assert_eq!(ds6, DecisionSpace::point(Decision::Permit));
    }

    #[test]
    fn nurse_valuation_matches_table_one() {
        let p = example_policy();
        let t = AtomTable::for_node(&p);
        let v = valuation_from_request(&nurse_request(), &t);
        let truth = |name: &str| v.get(t.by_name(name).unwrap());
        for name in ["ac0", "ac1", "ac2"] {
            assert!(truth(name), "{name}");
        }
        // Deny-triggering orientation: ac3, ac4, ac7 directly; ac5, ac6, ac8
        // appear negated in their rules and hold here.
        assert!(!truth("ac3") && !truth("ac4") && !truth("ac7"));
        assert!(truth("ac5") && truth("ac6") && truth("ac8"));
        for name in ["at0", "at1", "at2", "at3", "at4"] {
            assert!(!truth(name), "{name}");
        }
        let mut enc = encoder_for(&p);
        for rule in [rule1(), rule2(), rule3(), rule4(), rule5()] {
            let ds = enc.encode_rule(&rule).unwrap();
            assert!(!enc.formulas.evaluate(ds.deny, &v), "{} fires", rule.id);
        }

        let mut late = nurse_request();
        late.set(
            AttributeCategory::Environment,
            CURRENT_TIME,
            vec![AttributeValue::Time(TimeOfDay::hm(21, 30).unwrap())],
        );
        let v = valuation_from_request(&late, &t);
        assert!(v.get(t.by_name("ac3").unwrap()));
        let mut no_disease = nurse_request();
        no_disease.set(AttributeCategory::Resource, DISEASE, vec![]);
        let v = valuation_from_request(&no_disease, &t);
        assert!(v.get(t.by_name("at4").unwrap()));
        assert!(!v.get(t.by_name("ac8").unwrap()));
    }

    #[test]
    fn policy_space_decides_the_example() {
        let p = example_policy();
        let enc = Encoding::of_node(&p).unwrap();
        assert_eq!(enc.decide(&nurse_request()).unwrap(), Decision::Permit);
        let t = enc.table();
        let mut v = valuation_from_request(&nurse_request(), t);
        v.0[t.by_name("ac7").unwrap()] = true;
        assert_eq!(evaluate_space(&enc.encoder.formulas, &enc.space, &v).unwrap(), Decision::Deny);
        let mut v = valuation_from_request(&nurse_request(), t);
        v.0[t.by_name("ac0").unwrap()] = false;
        assert_eq!(
            evaluate_space(&enc.encoder.formulas, &enc.space, &v).unwrap(),
            Decision::NotApplicable
        );
        let dump = enc.dump();
        assert!(dump.contains("dsNA: (not (and ac0 ac1 ac2))"), "{dump}");
    }

    #[test]
    fn dup_space_has_no_indeterminate_or_na() {
        let p = example_policy();
        let mut enc = encoder_for(&p);
        let a = enc.encode_rule(&rule1()).unwrap();
        let b = enc.encode_rule(&rule5()).unwrap();
        let ds = enc.combine_spaces(CombiningAlgorithm::DenyUnlessPermit, &a, &b);
        assert_eq!(ds.not_applicable, Formulas::EMPTY);
        assert_eq!(ds.indeterminate(&mut enc.formulas), Formulas::EMPTY);
    }

    #[test]
    fn first_applicable_skips_an_all_na_left_side() {
        let p = example_policy();
        let mut enc = encoder_for(&p);
        let b = enc.encode_rule(&rule1()).unwrap();
        let na = DecisionSpace::point(Decision::NotApplicable);
        let ds = enc.combine_spaces(CombiningAlgorithm::FirstApplicable, &na, &b);
        let domains = derive_domains([&p]);
        for req in enumerate_requests(&domains, DEFAULT_ENUMERATION_BOUND).unwrap().take(2000) {
            let v = valuation_from_request(&req, &enc.table);
            let vals = enc.formulas.evaluate_all(&v);
            assert_eq!(decision_from_values(&vals, &ds), decision_from_values(&vals, &b));
        }
    }

    #[test]
    fn full_targets_are_identity_and_pov_of_permits_is_full() {
        let permit_all = |id: &str| {
            PolicyNode::Policy(Policy {
                id: id.into(),
                rules: vec![Rule::new(format!("{id}r"), Effect::Permit)],
                algorithm: CombiningAlgorithm::DenyOverrides,
                target: Target::any(),
                obligations: vec![],
            })
        };
        let set = PolicyNode::PolicySet(PolicySet {
            id: "S".into(),
            children: vec![permit_all("A"), permit_all("B")],
            algorithm: CombiningAlgorithm::PermitOverrides,
            target: Target::any(),
            obligations: vec![],
        });
        let enc = Encoding::of_node(&set).unwrap();
        assert_eq!(enc.space, DecisionSpace::point(Decision::Permit));
    }

    #[test]
    fn enumeration_counts() {
        let a = AttributeRef::new(AttributeCategory::Subject, "a", ValueType::Integer);
        let b = AttributeRef::new(AttributeCategory::Subject, "b", ValueType::Integer);
        let mut d = Domains::new();
        d.insert(a.clone(), vec![AttributeValue::Integer(1), AttributeValue::Integer(2)]);
        d.insert(b, vec![AttributeValue::Integer(1), AttributeValue::Integer(2)]);
        let all: Vec<Request> = enumerate_requests(&d, 100).unwrap().collect();
        assert_eq!(all.len(), 9);
        let distinct: std::collections::HashSet<_> = all.iter().cloned().collect();
        assert_eq!(distinct.len(), 9);
        assert_eq!(enumerate_requests(&Domains::new(), 1).unwrap().count(), 1);
        assert_eq!(
            enumerate_requests(&d, 8).unwrap_err(),
            SpaceError::DomainTooLarge { size: 9, bound: 8 }
        );
    }

    #[test]
    fn example_policy_is_equivalent_on_two_point_domains() {
        let p = example_policy();
        let mut d = Domains::new();
        let s = AttributeValue::string;
        let t = |h, m| AttributeValue::Time(TimeOfDay::hm(h, m).unwrap());
        d.insert(role(), vec![s("nurse"), s("doctor")]);
        d.insert(action_id(), vec![s("read"), s("write")]);
        d.insert(resource_type(), vec![s(PATIENT_RECORD), s("billing")]);
        d.insert(current_time(), vec![t(8, 0), t(21, 0)]);
        d.insert(current_place(), vec![s(PATIENT_ROOM), s("lobby")]);
        d.insert(address(), vec![s("Ho Chi Minh"), s("Ha Noi")]);
        d.insert(age(), vec![AttributeValue::Integer(55), AttributeValue::Integer(10)]);
        d.insert(disease(), vec![s("Hypertension"), s("Flu")]);
        let enc = Encoding::of_node(&p).unwrap();
        let report = check_equivalence(&enc, &p, &d, DEFAULT_ENUMERATION_BOUND).unwrap();
        assert_eq!(report.requests, 6561);
        assert_eq!(report.mismatch, None);

        let mutant = Encoding::build(encoder_for(&p).with_mutation(Mutation::FlipRuleEffects), &p).unwrap();
        let report = check_equivalence(&mutant, &p, &d, DEFAULT_ENUMERATION_BOUND).unwrap();
        let m = report.mismatch.expect("mutant must be caught");
        assert_eq!(Ok(m.direct), eval::eval_node(&p, &m.request).map(|r| r.decision.unwrap()));
    }

    #[test]
    fn multi_attribute_conditions_follow_kleene() {
        let cond = Condition::And(vec![rule4().condition, rule5().condition]);
        let node = PolicyNode::Policy(Policy {
            id: "K".into(),
            rules: vec![Rule::new("K1", Effect::Deny).with_condition(cond)],
            algorithm: CombiningAlgorithm::DenyOverrides,
            target: Target::any(),
            obligations: vec![],
        });
        let enc = Encoding::of_node(&node).unwrap();
        let d = derive_domains([&node]);
        let report = check_equivalence(&enc, &node, &d, DEFAULT_ENUMERATION_BOUND).unwrap();
        assert_eq!(report.mismatch, None);
        assert!(report.requests > 1);
    }
}
