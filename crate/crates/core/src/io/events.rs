use serde_json::{Map, Value};

use super::xml::{parse_condition, parse_policy_fragment, parse_rule, serialize_condition, serialize_policy, serialize_rule};
use super::FormatError;
use crate::model::*;

/// Replacement for an existing rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleEdit {
    /// New target, condition and effect; the id stays.
    Replace(Rule),
    /// New condition only.
    Condition(Condition),
}

/// One administrative change to the policy store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UpdateEvent {
    DeletePolicy { target: String },
    /// Adds a top-level tree, or a child of `parent` when given.
    InsertPolicy { parent: Option<String>, policy: PolicyNode },
    /// Appends `rule` to policy `target`.
    InsertRule { target: String, rule: Rule },
    DeleteRule { target: String },
    EditRule { target: String, edit: RuleEdit },
    SetCombiningAlg { target: String, algorithm: CombiningAlgorithm },
    SetEffect { target: String, effect: Effect },
    /// Swaps the policy or policy set with the payload's id for the payload,
    /// keeping its position.
    ReplacePolicy { policy: PolicyNode },
}

impl UpdateEvent {
    pub fn op(&self) -> &'static str {
        match self {
            UpdateEvent::DeletePolicy { .. } => "delete-policy",
            UpdateEvent::InsertPolicy { .. } => "insert-policy",
            UpdateEvent::InsertRule { .. } => "insert-rule",
            UpdateEvent::DeleteRule { .. } => "delete-rule",
            UpdateEvent::EditRule { .. } => "edit-rule",
            UpdateEvent::SetCombiningAlg { .. } => "set-combining-alg",
            UpdateEvent::SetEffect { .. } => "set-effect",
            UpdateEvent::ReplacePolicy { .. } => "replace-policy",
        }
    }

    /// Id of the element the event acts on (the new policy for inserts).
    pub fn target(&self) -> &str {
        match self {
            UpdateEvent::InsertPolicy { policy, .. } | UpdateEvent::ReplacePolicy { policy } => {
                policy.id()
            }
            UpdateEvent::DeletePolicy { target }
            | UpdateEvent::InsertRule { target, .. }
            | UpdateEvent::DeleteRule { target }
            | UpdateEvent::EditRule { target, .. }
            | UpdateEvent::SetCombiningAlg { target, .. }
            | UpdateEvent::SetEffect { target, .. } => target,
        }
    }
}

/// Parses one NDJSON line: `{"op": ..., "target": ..., "payload": ...}`.
pub fn parse_update_event(line: &str) -> Result<UpdateEvent, FormatError> {
    let doc: Value =
        serde_json::from_str(line).map_err(|e| FormatError::MalformedDocument(e.to_string()))?;
    let field = |k: &str| doc.get(k).and_then(Value::as_str);
    let op = field("op").ok_or_else(|| FormatError::MalformedDocument("event without op".into()))?;
    let missing = || FormatError::MissingPayload(op.to_string());
    let target = || field("target").map(str::to_string).ok_or_else(missing);
    let payload = || field("payload").ok_or_else(missing);
    let event = match op {
        "delete-policy" => UpdateEvent::DeletePolicy { target: target()? },
        "delete-rule" => UpdateEvent::DeleteRule { target: target()? },
        "insert-policy" => {
            let policy = parse_policy_fragment(payload()?.as_bytes())?;
            if let Some(t) = field("target") {
                if t != policy.id() {
                    return Err(FormatError::Invalid {
                        element: t.to_string(),
                        message: format!("payload policy is {}", policy.id()),
                    });
                }
            }
            UpdateEvent::InsertPolicy {
                parent: field("parent").map(str::to_string),
                policy,
            }
        }
        "replace-policy" => {
            let policy = parse_policy_fragment(payload()?.as_bytes())?;
            if target()? != policy.id() {
                return Err(FormatError::Invalid {
                    element: policy.id().to_string(),
                    message: "replacement must keep the target id".into(),
                });
            }
            UpdateEvent::ReplacePolicy { policy }
        }
        "insert-rule" => UpdateEvent::InsertRule {
            target: target()?,
            rule: parse_rule(payload()?.as_bytes())?,
        },
        "edit-rule" => {
            let target = target()?;
            let text = payload()?;
            let edit = match parse_rule(text.as_bytes()) {
                Ok(rule) if rule.id == target => RuleEdit::Replace(rule),
                Ok(rule) => {
                    return Err(FormatError::Invalid {
                        element: target,
                        message: format!("replacement rule has id {}", rule.id),
                    })
                }
                Err(FormatError::UnsupportedElement { name, .. }) if name == "Condition" => {
                    RuleEdit::Condition(parse_condition(text.as_bytes())?)
                }
                Err(e) => return Err(e),
            };
            UpdateEvent::EditRule { target, edit }
        }
        "set-combining-alg" => {
            let name = payload()?;
            UpdateEvent::SetCombiningAlg {
                target: target()?,
                algorithm: CombiningAlgorithm::from_name(name).ok_or_else(|| {
                    FormatError::UnknownAlgorithmUri {
                        uri: name.to_string(),
                        at: Default::default(),
                    }
                })?,
            }
        }
        "set-effect" => {
            let name = payload()?;
            UpdateEvent::SetEffect {
                target: target()?,
                effect: Effect::from_name(name).ok_or_else(|| FormatError::Invalid {
                    element: "set-effect".into(),
                    message: format!("unknown effect {name:?}"),
                })?,
            }
        }
        other => return Err(FormatError::UnknownOp(other.to_string())),
    };
    Ok(event)
}

/// Parses every non-blank line; errors name the 1-based line.
pub fn parse_update_events(text: &str) -> Result<Vec<UpdateEvent>, (usize, FormatError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_update_event(l).map_err(|e| (i + 1, e)))
        .collect()
}

/// Single-line JSON form accepted by [`parse_update_event`].
pub fn serialize_update_event(event: &UpdateEvent) -> String {
    let mut doc = Map::new();
    doc.insert("op".into(), Value::from(event.op()));
    doc.insert("target".into(), Value::from(event.target()));
    let payload = match event {
        UpdateEvent::DeletePolicy { .. } | UpdateEvent::DeleteRule { .. } => None,
        UpdateEvent::InsertPolicy { parent, policy } => {
            if let Some(p) = parent {
                doc.insert("parent".into(), Value::from(p.as_str()));
            }
            Some(serialize_policy(policy))
        }
        UpdateEvent::ReplacePolicy { policy } => Some(serialize_policy(policy)),
        UpdateEvent::InsertRule { rule, .. } => Some(serialize_rule(rule)),
        UpdateEvent::EditRule { edit, .. } => Some(match edit {
            RuleEdit::Replace(rule) => serialize_rule(rule),
            RuleEdit::Condition(c) => serialize_condition(c),
        }),
        UpdateEvent::SetCombiningAlg { algorithm, .. } => Some(algorithm.name().to_string()),
        UpdateEvent::SetEffect { effect, .. } => Some(effect.name().to_string()),
    };
    if let Some(p) = payload {
        doc.insert("payload".into(), Value::from(p));
    }
    Value::Object(doc).to_string()
}
