//! Document formats: XACML XML policies, JSON requests and responses, and
//! newline-delimited update events.

mod events;
mod json;
mod xml;

pub use events::{parse_update_event, parse_update_events, serialize_update_event, RuleEdit, UpdateEvent};
pub use json::{parse_request, parse_response, serialize_request, serialize_response};
pub use xml::{
    parse_condition, parse_policy, parse_policy_fragment, parse_policy_named, parse_rule, serialize_condition,
    serialize_policy, serialize_rule, PolicyDocument,
};

use std::fmt;

use thiserror::Error;

/// Line and column (both 1-based) in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("malformed XML at {0}: {1}")]
    MalformedXml(Pos, String),
    #[error("unsupported element <{name}> at {at}")]
    UnsupportedElement { name: String, at: Pos },
    #[error("missing attribute {attribute} on <{element}> at {at}")]
    MissingAttribute {
        element: String,
        attribute: String,
        at: Pos,
    },
    #[error("unknown combining algorithm {uri} at {at}")]
    UnknownAlgorithmUri { uri: String, at: Pos },
    #[error("unknown function {uri} at {at}")]
    UnknownFunctionUri { uri: String, at: Pos },
    #[error("unknown data type {uri} at {at}")]
    UnknownDataType { uri: String, at: Pos },
    #[error("unknown category {0}")]
    UnknownCategory(String),
    #[error("bad literal for {0}")]
    BadValueLiteral(String),
    #[error("type mismatch in {0}")]
    TypeMismatch(String),
    #[error("invalid element {element}: {message}")]
    Invalid { element: String, message: String },
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("unknown update op {0:?}")]
    UnknownOp(String),
    #[error("update {0} is missing its payload or target")]
    MissingPayload(String),
}
