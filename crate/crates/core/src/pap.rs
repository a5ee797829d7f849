//! Policy administration point: ordered, versioned, copy-on-write storage of
//! top-level policy trees with an append-only change journal.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::io::{self, FormatError, RuleEdit, UpdateEvent};
use crate::model::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PapError {
    #[error("no element with id {0}")]
    TargetNotFound(String),
    #[error("id {0} is already in use")]
    DuplicateId(String),
    #[error("invalid placement: {0}")]
    InvalidPlacement(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("{file}: {error}")]
    Format { file: String, error: FormatError },
    #[error("bad manifest: {0}")]
    Manifest(String),
}

impl From<std::io::Error> for PapError {
    fn from(e: std::io::Error) -> Self {
        PapError::Io(e.to_string())
    }
}

/// Who administers a tree. Recorded only; evaluation ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// System policy written by an administrator.
    #[default]
    Admin,
    /// Data policy written by a resource owner.
    Owner,
}

impl Provenance {
    fn name(self) -> &'static str {
        match self {
            Provenance::Admin => "admin",
            Provenance::Owner => "owner",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    PolicySet,
    Policy,
    Rule,
}

/// Where an id lives: the top-level tree holding it and its kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub tree: usize,
    pub kind: ElementKind,
}

/// An immutable state of the store. Unchanged trees are shared between
/// versions.
#[derive(Debug, Clone)]
pub struct PapSnapshot {
    version: u64,
    trees: Vec<Arc<PolicyNode>>,
    provenance: Vec<Provenance>,
    index: HashMap<String, Location>,
}

impl PartialEq for PapSnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.provenance == other.provenance
            && self.trees.len() == other.trees.len()
            && self.trees.iter().zip(&other.trees).all(|(a, b)| a == b)
    }
}

fn build_index(trees: &[Arc<PolicyNode>]) -> Result<HashMap<String, Location>, PapError> {
    let mut index = HashMap::new();
    for (i, tree) in trees.iter().enumerate() {
        let mut dup = None;
        tree.walk(&mut |n| {
            let kind = match n {
                PolicyNode::Policy(_) => ElementKind::Policy,
                PolicyNode::PolicySet(_) => ElementKind::PolicySet,
            };
            let mut add = |id: &str, kind| {
                if index.insert(id.to_string(), Location { tree: i, kind }).is_some() {
                    dup.get_or_insert_with(|| id.to_string());
                }
            };
            add(n.id(), kind);
            if let PolicyNode::Policy(p) = n {
                for r in &p.rules {
                    add(&r.id, ElementKind::Rule);
                }
            }
        });
        if let Some(id) = dup {
            return Err(PapError::DuplicateId(id));
        }
    }
    Ok(index)
}

impl PapSnapshot {
    /// Version 0 holding `trees` in scan order.
    pub fn new(trees: Vec<PolicyNode>) -> Result<Self, PapError> {
        let provenance = vec![Provenance::Admin; trees.len()];
        Self::with_provenance(trees, provenance)
    }

    pub fn with_provenance(trees: Vec<PolicyNode>, provenance: Vec<Provenance>) -> Result<Self, PapError> {
        let trees: Vec<Arc<PolicyNode>> = trees.into_iter().map(Arc::new).collect();
        Ok(PapSnapshot {
            version: 0,
            index: build_index(&trees)?,
            trees,
            provenance,
        })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn trees(&self) -> &[Arc<PolicyNode>] {
        &self.trees
    }

    pub fn tree(&self, id: &str) -> Option<&Arc<PolicyNode>> {
        self.trees.iter().find(|t| t.id() == id)
    }

    pub fn tree_ids(&self) -> Vec<String> {
        self.trees.iter().map(|t| t.id().to_string()).collect()
    }

    pub fn provenance(&self, tree: usize) -> Provenance {
        self.provenance[tree]
    }

    pub fn locate(&self, id: &str) -> Option<Location> {
        self.index.get(id).copied()
    }

    /// Id of the top-level tree containing `id`.
    pub fn top_level_of(&self, id: &str) -> Option<&str> {
        self.locate(id).map(|l| self.trees[l.tree].id())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn rule_count(&self) -> usize {
        self.trees.iter().map(|t| t.rules().len()).sum()
    }

    fn require(&self, id: &str, kinds: &[ElementKind]) -> Result<Location, PapError> {
        let loc = self
            .locate(id)
            .ok_or_else(|| PapError::TargetNotFound(id.to_string()))?;
        if !kinds.contains(&loc.kind) {
            return Err(PapError::InvalidPlacement(format!(
                "{id} is a {:?}, expected one of {kinds:?}",
                loc.kind
            )));
        }
        Ok(loc)
    }

    fn fresh(&self, node_ids: impl IntoIterator<Item = String>) -> Result<(), PapError> {
        let mut seen = std::collections::HashSet::new();
        for id in node_ids {
            if self.contains(&id) || !seen.insert(id.clone()) {
                return Err(PapError::DuplicateId(id));
            }
        }
        Ok(())
    }

    /// Applies one change, returning the next version. `self` is untouched.
    pub fn apply_event(&self, event: &UpdateEvent) -> Result<PapSnapshot, PapError> {
        let mut trees = self.trees.clone();
        let mut provenance = self.provenance.clone();
        let edit_tree = |trees: &mut Vec<Arc<PolicyNode>>, loc: Location| -> PolicyNode {
            (*trees[loc.tree]).clone()
        };
        match event {
            UpdateEvent::DeletePolicy { target } => {
                let loc = self.require(target, &[ElementKind::Policy, ElementKind::PolicySet])?;
                if trees[loc.tree].id() == target {
                    trees.remove(loc.tree);
                    provenance.remove(loc.tree);
                } else {
                    let mut tree = edit_tree(&mut trees, loc);
                    remove_child(&mut tree, target)?;
                    trees[loc.tree] = Arc::new(tree);
                }
            }
            UpdateEvent::InsertPolicy { parent, policy } => {
                self.fresh(policy.ids())?;
                match parent {
                    None => {
                        trees.push(Arc::new(policy.clone()));
                        provenance.push(Provenance::Admin);
                    }
                    Some(parent) => {
                        let loc = self.require(parent, &[ElementKind::PolicySet])?;
                        let mut tree = edit_tree(&mut trees, loc);
                        if let Some(PolicyNode::PolicySet(s)) = tree.find_mut(parent) {
                            s.children.push(policy.clone());
                        }
                        trees[loc.tree] = Arc::new(tree);
                    }
                }
            }
            UpdateEvent::InsertRule { target, rule } => {
                let loc = self.require(target, &[ElementKind::Policy])?;
                self.fresh([rule.id.clone()])?;
                let mut tree = edit_tree(&mut trees, loc);
                if let Some(PolicyNode::Policy(p)) = tree.find_mut(target) {
                    p.rules.push(rule.clone());
                }
                trees[loc.tree] = Arc::new(tree);
            }
            UpdateEvent::DeleteRule { target } => {
                let loc = self.require(target, &[ElementKind::Rule])?;
                let mut tree = edit_tree(&mut trees, loc);
                let policy = tree.policy_of_rule_mut(target).expect("indexed rule");
                if policy.rules.len() == 1 {
                    return Err(PapError::InvalidPlacement(format!(
                        "deleting {target} would leave policy {} without rules",
                        policy.id
                    )));
                }
                policy.rules.retain(|r| r.id != *target);
                trees[loc.tree] = Arc::new(tree);
            }
            UpdateEvent::EditRule { target, edit } => {
                let loc = self.require(target, &[ElementKind::Rule])?;
                let mut tree = edit_tree(&mut trees, loc);
                let policy = tree.policy_of_rule_mut(target).expect("indexed rule");
                let rule = policy
                    .rules
                    .iter_mut()
                    .find(|r| r.id == *target)
                    .expect("indexed rule");
                match edit {
                    RuleEdit::Replace(new) => *rule = new.clone(),
                    RuleEdit::Condition(c) => rule.condition = c.clone(),
                }
                trees[loc.tree] = Arc::new(tree);
            }
            UpdateEvent::SetCombiningAlg { target, algorithm } => {
                let loc = self.require(target, &[ElementKind::Policy, ElementKind::PolicySet])?;
                if loc.kind == ElementKind::Policy && *algorithm == CombiningAlgorithm::OnlyOneApplicable {
                    return Err(PapError::InvalidPlacement(format!(
                        "only-one-applicable cannot combine the rules of {target}"
                    )));
                }
                let mut tree = edit_tree(&mut trees, loc);
                match tree.find_mut(target).expect("indexed node") {
                    PolicyNode::Policy(p) => p.algorithm = *algorithm,
                    PolicyNode::PolicySet(s) => s.algorithm = *algorithm,
                }
                trees[loc.tree] = Arc::new(tree);
            }
            UpdateEvent::ReplacePolicy { policy } => {
                let target = policy.id();
                let loc = self.require(target, &[ElementKind::Policy, ElementKind::PolicySet])?;
                let old = trees[loc.tree].find(target).expect("indexed node").ids();
                self.fresh(policy.ids().into_iter().filter(|id| !old.contains(id)))?;
                let mut tree = edit_tree(&mut trees, loc);
                *tree.find_mut(target).expect("indexed node") = policy.clone();
                trees[loc.tree] = Arc::new(tree);
            }
            UpdateEvent::SetEffect { target, effect } => {
                let loc = self.require(target, &[ElementKind::Rule])?;
                let mut tree = edit_tree(&mut trees, loc);
                let policy = tree.policy_of_rule_mut(target).expect("indexed rule");
                for r in policy.rules.iter_mut().filter(|r| r.id == *target) {
                    r.effect = *effect;
                }
                trees[loc.tree] = Arc::new(tree);
            }
        }
        Ok(PapSnapshot {
            version: self.version + 1,
            index: build_index(&trees)?,
            trees,
            provenance,
        })
    }

    /// Writes `NN_id.xml` per tree plus `manifest.txt`. Earlier `NN_*.xml`
    /// files in `dir` are removed first.
    pub fn save(&self, dir: &Path) -> Result<(), PapError> {
        fs::create_dir_all(dir)?;
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if is_tree_file(&path) {
                fs::remove_file(path)?;
            }
        }
        let width = self.trees.len().to_string().len().max(2);
        let mut manifest = format!("version {}\n", self.version);
        for (i, tree) in self.trees.iter().enumerate() {
            let name = format!("{:0width$}_{}.xml", i + 1, file_safe(tree.id()));
            fs::write(dir.join(&name), io::serialize_policy(tree))?;
            manifest.push_str(&format!("{} {}\n", tree.id(), self.provenance[i].name()));
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    /// Reads every `*.xml` in `dir` in file-name order. A `manifest.txt`, if
    /// present, supplies the version and provenance and must list the same
    /// ids in the same order.
    pub fn load(dir: &Path) -> Result<Self, PapError> {
        let mut files: Vec<_> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "xml"));
        files.sort();
        let mut trees = Vec::new();
        for path in &files {
            let bytes = fs::read(path)?;
            let file = path.display().to_string();
            let doc = io::parse_policy_named(&bytes, &file)
                .map_err(|error| PapError::Format { file, error })?;
            trees.push(doc.root);
        }
        let manifest_path = dir.join("manifest.txt");
        if !manifest_path.exists() {
            return Self::new(trees);
        }
        let text = fs::read_to_string(manifest_path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let version = lines
            .next()
            .and_then(|l| l.strip_prefix("version "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| PapError::Manifest("first line must be `version N`".into()))?;
        let mut provenance = Vec::new();
        for (line, tree) in lines.by_ref().zip(&trees) {
            let mut parts = line.split_whitespace();
            let id = parts.next().unwrap_or_default();
            if id != tree.id() {
                return Err(PapError::Manifest(format!("expected {}, manifest lists {id}", tree.id())));
            }
            provenance.push(match parts.next() {
                Some("owner") => Provenance::Owner,
                _ => Provenance::Admin,
            });
        }
        if provenance.len() != trees.len() || lines.next().is_some() {
            return Err(PapError::Manifest("manifest and directory list different trees".into()));
        }
        let mut snap = Self::with_provenance(trees, provenance)?;
        snap.version = version;
        Ok(snap)
    }
}

fn is_tree_file(path: &Path) -> bool {
    let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
        return false;
    };
    let Some((digits, _)) = name.split_once('_') else {
        return false;
    };
    name.ends_with(".xml") && !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn remove_child(tree: &mut PolicyNode, id: &str) -> Result<(), PapError> {
    let PolicyNode::PolicySet(s) = tree else {
        return Ok(());
    };
    if let Some(i) = s.children.iter().position(|c| c.id() == id) {
        if s.children.len() == 1 {
            return Err(PapError::InvalidPlacement(format!(
                "deleting {id} would leave policy set {} empty",
                s.id
            )));
        }
        s.children.remove(i);
        return Ok(());
    }
    for c in &mut s.children {
        remove_child(c, id)?;
    }
    Ok(())
}

/// One applied change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JournalEntry {
    pub version: u64,
    pub event: UpdateEvent,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PapJournal {
    pub entries: Vec<JournalEntry>,
}

impl PapJournal {
    pub fn to_ndjson(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                let event: Value = serde_json::from_str(&io::serialize_update_event(&e.event))
                    .expect("events serialize to JSON");
                let line = serde_json::json!({
                    "version": e.version,
                    "timestamp": e.timestamp_ms,
                    "event": event,
                });
                line.to_string() + "\n"
            })
            .collect()
    }

    pub fn from_ndjson(text: &str) -> Result<Self, FormatError> {
        let mut entries = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let v: Value =
                serde_json::from_str(line).map_err(|e| FormatError::MalformedDocument(e.to_string()))?;
            let field = |k: &str| {
                v.get(k)
                    .and_then(Value::as_u64)
                    .ok_or_else(|| FormatError::MalformedDocument(format!("journal entry without {k}")))
            };
            let event = v
                .get("event")
                .ok_or_else(|| FormatError::MalformedDocument("journal entry without event".into()))?;
            entries.push(JournalEntry {
                version: field("version")?,
                timestamp_ms: field("timestamp")?,
                event: io::parse_update_event(&event.to_string())?,
            });
        }
        Ok(PapJournal { entries })
    }
}

/// Replays `journal` on top of `base`.
pub fn replay(base: &PapSnapshot, journal: &PapJournal) -> Result<PapSnapshot, PapError> {
    journal
        .entries
        .iter()
        .try_fold(base.clone(), |snap, e| snap.apply_event(&e.event))
}

/// The single writer: current snapshot, the snapshot it started from, and
/// the journal between them.
#[derive(Debug, Clone)]
pub struct PapStore {
    base: Arc<PapSnapshot>,
    current: Arc<PapSnapshot>,
    journal: PapJournal,
}

impl PapStore {
    pub fn new(base: PapSnapshot) -> Self {
        let base = Arc::new(base);
        PapStore {
            current: base.clone(),
            base,
            journal: PapJournal::default(),
        }
    }

    pub fn current(&self) -> Arc<PapSnapshot> {
        self.current.clone()
    }

    pub fn base(&self) -> &PapSnapshot {
        &self.base
    }

    pub fn journal(&self) -> &PapJournal {
        &self.journal
    }

    pub fn apply(&mut self, event: &UpdateEvent) -> Result<Arc<PapSnapshot>, PapError> {
        let next = Arc::new(self.current.apply_event(event)?);
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        self.journal.entries.push(JournalEntry {
            version: next.version,
            event: event.clone(),
            timestamp_ms,
        });
        self.current = next.clone();
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::*;

    fn p_only() -> PapSnapshot {
        PapSnapshot::new(vec![example_policy()]).unwrap()
    }

    #[test]
    fn insert_policy_appends() {
        let s0 = p_only();
        let s1 = s0
            .apply_event(&UpdateEvent::InsertPolicy {
                parent: None,
                policy: doctor_policy(),
            })
            .unwrap();
        assert_eq!(s1.tree_ids(), ["P", "Q"]);
        assert_eq!(s1.version(), 1);
        assert_eq!(s0.tree_ids(), ["P"]);
        assert!(Arc::ptr_eq(&s0.trees()[0], &s1.trees()[0]));
        assert_eq!(s1.top_level_of("Q1"), Some("Q"));
    }

    #[test]
    fn delete_rule_leaves_five() {
        let s1 = p_only()
            .apply_event(&UpdateEvent::DeleteRule { target: "R4".into() })
            .unwrap();
        assert_eq!(s1.trees()[0].rules().len(), 5);
        assert!(!s1.contains("R4"));
    }

    #[test]
    fn errors() {
        let s = p_only();
        assert_eq!(
            s.apply_event(&UpdateEvent::DeletePolicy { target: "X".into() }).unwrap_err(),
            PapError::TargetNotFound("X".into())
        );
        assert_eq!(
            s.apply_event(&UpdateEvent::InsertRule {
                target: "P".into(),
                rule: rule1()
            })
            .unwrap_err(),
            PapError::DuplicateId("R1".into())
        );
        assert!(matches!(
            s.apply_event(&UpdateEvent::InsertRule {
                target: "R1".into(),
                rule: department_rule()
            }),
            Err(PapError::InvalidPlacement(_))
        ));
        assert!(matches!(
            s.apply_event(&UpdateEvent::SetCombiningAlg {
                target: "P".into(),
                algorithm: CombiningAlgorithm::OnlyOneApplicable
            }),
            Err(PapError::InvalidPlacement(_))
        ));
        assert_eq!(
            PapSnapshot::new(vec![example_policy(), example_policy()]).unwrap_err(),
            PapError::DuplicateId("P".into())
        );
    }

    #[test]
    fn nested_changes_stay_in_their_tree() {
        let set = PolicyNode::PolicySet(PolicySet {
            id: "S".into(),
            children: vec![example_policy()],
            algorithm: CombiningAlgorithm::FirstApplicable,
            target: Target::any(),
            obligations: vec![],
        });
        let s = PapSnapshot::new(vec![set]).unwrap();
        let s = s
            .apply_event(&UpdateEvent::InsertPolicy {
                parent: Some("S".into()),
                policy: doctor_policy(),
            })
            .unwrap();
        assert_eq!(s.top_level_of("Q1"), Some("S"));
        let s = s.apply_event(&UpdateEvent::DeletePolicy { target: "P".into() }).unwrap();
        assert_eq!(s.trees()[0].find("S").map(|n| n.rules().len()), Some(1));
        assert!(matches!(
            s.apply_event(&UpdateEvent::DeletePolicy { target: "Q".into() }),
            Err(PapError::InvalidPlacement(_))
        ));
    }

    #[test]
    fn journal_replays() {
        let mut store = PapStore::new(p_only());
        store.apply(&UpdateEvent::DeleteRule { target: "R4".into() }).unwrap();
        store
            .apply(&UpdateEvent::InsertRule {
                target: "P".into(),
                rule: department_rule(),
            })
            .unwrap();
        let text = store.journal().to_ndjson();
        let journal = PapJournal::from_ndjson(&text).unwrap();
        assert_eq!(&journal, store.journal());
        assert_eq!(replay(store.base(), &journal).unwrap(), *store.current());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = PapStore::new(p_only());
        store
            .apply(&UpdateEvent::InsertPolicy {
                parent: None,
                policy: doctor_policy(),
            })
            .unwrap();
        let snap = store.current();
        snap.save(dir.path()).unwrap();
        assert!(dir.path().join("01_P.xml").exists());
        let loaded = PapSnapshot::load(dir.path()).unwrap();
        assert_eq!(loaded, *snap);
        snap.save(dir.path()).unwrap();
        assert_eq!(PapSnapshot::load(dir.path()).unwrap(), *snap);
    }

    #[test]
    fn load_rejects_duplicate_ids_across_files() {
        let dir = tempfile::tempdir().unwrap();
        let xml = io::serialize_policy(&example_policy());
        fs::write(dir.path().join("01_P.xml"), &xml).unwrap();
        fs::write(dir.path().join("02_P.xml"), &xml).unwrap();
        assert_eq!(
            PapSnapshot::load(dir.path()).unwrap_err(),
            PapError::DuplicateId("P".into())
        );
        fs::remove_file(dir.path().join("02_P.xml")).unwrap();
        let s = PapSnapshot::load(dir.path()).unwrap();
        assert_eq!((s.tree_ids(), s.version()), (vec!["P".to_string()], 0));
    }
}
