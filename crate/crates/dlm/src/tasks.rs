//! The 16-task catalog: language prompts paired with hidden ground-truth
//! base rewards.
//!
//! The base reward is the scalar objective a prompt stands for. It is never
//! shown to the language model; training sees only candidate rewards, and
//! the base reward is queried at evaluation time. The catalog ships as an
//! embedded JSON data file and is validated on first access.

use crate::reward::{self, Expr};
use serde::Deserialize;
use std::collections::BTreeSet;
use std::sync::OnceLock;

const CATALOG_JSON: &str = include_str!("tasks.json");

/// Tasks 4 through 15 combine two or more features in their base reward.
pub const MULTI_FEATURE_TASKS: std::ops::Range<usize> = 4..16;

#[derive(Debug, Deserialize)]
struct RawTask {
    index: usize,
    label: String,
    prompt: String,
    base_reward: String,
    base_features: Vec<usize>,
}

/// One catalog entry.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub index: usize,
    pub label: String,
    /// The human policy-preference command handed to the language model.
    pub prompt: String,
    /// Source text of the base reward as catalogued.
    pub base_reward_source: String,
    pub base_reward: Expr,
    pub base_features: BTreeSet<usize>,
}

fn load() -> Vec<TaskSpec> {
    let raw: Vec<RawTask> =
        serde_json::from_str(CATALOG_JSON).expect("embedded catalog is valid JSON");
    assert_eq!(raw.len(), 16, "catalog must hold exactly 16 tasks");
    raw.into_iter()
        .enumerate()
        .map(|(i, t)| {
            assert_eq!(t.index, i, "catalog indices must be contiguous");
            let base_reward = reward::parse(&t.base_reward)
                .unwrap_or_else(|e| panic!("task {i} base reward does not parse: {e}"));
            let base_features: BTreeSet<usize> = t.base_features.iter().copied().collect();
            assert_eq!(
                reward::used_features(&base_reward),
                base_features,
                "task {i}: catalogued feature set disagrees with the expression"
            );
            TaskSpec {
                index: t.index,
                label: t.label,
                prompt: t.prompt,
                base_reward_source: t.base_reward,
                base_reward,
                base_features,
            }
        })
        .collect()
}

/// The validated catalog.
pub fn catalog() -> &'static [TaskSpec] {
    static CATALOG: OnceLock<Vec<TaskSpec>> = OnceLock::new();
    CATALOG.get_or_init(load)
}

/// Task by index, if in range.
pub fn get(index: usize) -> Option<&'static TaskSpec> {
    catalog().get(index)
}
