//! Hybrid constituency/dependency grammars over timed, multi-articulator
//! annotations.
//!
//! A [`model::Model`] holds set-valued production rules: patterns (AND) whose
//! role-named children are related by temporal and attribute constraints, and
//! alternatives (OR). Dependency grammars in the extended Hays form
//! ([`depgram`]) compile into the same rule language. The top-down
//! [`parser`] builds solution graphs from detector answers ([`detector`]),
//! and [`synth`] plus [`eval`] reproduce a synthetic-corpus evaluation.

pub mod cli;
pub mod depgram;
pub mod detector;
pub mod eval;
pub mod model;
pub mod parser;
pub mod synth;
pub mod temporal;

pub use model::{build_implicit_graph, validate_model, Model, ValidationReport};
pub use temporal::{eval_allen, infer_parent_interval, AttributeSet, Interval, Relation};
