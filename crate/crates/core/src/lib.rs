//! Dynamic XACML-style policy evaluation: a six-valued evaluator, decision
//! spaces, a versioned policy store and an incremental update engine.

pub mod bench;
pub mod eval;
pub mod gen;
pub mod io;
pub mod model;
pub mod pap;
pub mod scenario;
pub mod space;
pub mod update;

pub use eval::{evaluate_pap, eval_node, Counters, EvalError, EvalOptions, PapEvaluation};
pub use model::*;
pub use space::{DecisionSpace, Encoding, Formulas, SpaceError};
