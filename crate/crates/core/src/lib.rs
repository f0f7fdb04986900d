//! Interactive diagnosis environment with gatekeeper agents, a cost model and
//! a rubric judge, plus the diagnose / grade / evolve loop that updates an
//! actor's prompt rules and experience memory between episodes.
//!
//! Modules:
//! - `corpus`: hidden case files and initial abstracts
//! - `cost`: versioned cost table and per-action accounting
//! - `env`: episode state machine, Patient and Examination gatekeepers
//! - `judge`: rubric grading of the submitted diagnosis
//! - `gateway`: chat-completion contract, prompt templates, scripted replay
//! - `actor`: the diagnosing policy and its editable rule set
//! - `memory`: budgeted experience store with similarity retrieval
//! - `grader`: per-turn process labels
//! - `belief`: exact entropy / information gain / advantage oracle
//! - `evolver`: budgeted rule and memory edits
//! - `metrics`, `run`: the learning stream, persistence and replay

pub mod actor;
pub mod belief;
pub mod corpus;
pub mod cost;
pub mod env;
pub mod error;
pub mod evolver;
pub mod gateway;
pub mod grader;
pub mod judge;
pub mod memory;
pub mod metrics;
pub mod run;
pub mod simulated;
mod text;

pub use error::{Error, Result};
