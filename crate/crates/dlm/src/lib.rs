//! Language-conditioned reward design for restless multi-armed bandits.
//!
//! The crate wires together five pieces:
//!
//! - [`rmab`] — synthetic arm populations and the stochastic transition
//!   simulator,
//! - [`reward`] — the single-line reward-expression language that language
//!   models emit, with a sandboxed evaluator and feature-usage analysis,
//! - [`policy`] — budget-aware tabular Q-learning under a Lagrangian action
//!   charge,
//! - [`outcome`] — state-feature distribution reports used as the reflection
//!   signal,
//! - [`pipeline`] — the generate → train → analyze → reflect loop, backed by
//!   either a scripted transcript or an HTTP chat-completions endpoint
//!   ([`llm`]).
//!
//! [`tasks`] ships the 16-task catalog with ground-truth base rewards,
//! [`eval`] the normalized-reward metrics and baseline policies, and
//! [`search`] a grid-search model of weight tuning with a verification
//! harness.

pub mod eval;
pub mod llm;
pub mod outcome;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod rmab;
pub mod search;
pub mod seed;
pub mod tasks;
