//! Shared test oracles, independent of the library's implementation paths.

use dlm::policy::{select_actions, ActionMode, PolicyTable};
use dlm::reward::Expr;
use dlm::rmab::RmabInstance;

/// Exact value of the optimal joint policy, by value iteration on the full
/// joint MDP (2^N states, all action subsets within budget). Only viable
/// for tiny instances.
pub fn joint_optimal_values(instance: &RmabInstance, base_reward: &Expr) -> Vec<f64> {
    let n = instance.n_arms();
    assert!(n <= 10, "joint enumeration explodes past a few arms");
    let actions = feasible_actions(n, instance.budget);
    sweep_values(instance, base_reward, |state_values, s| {
        actions
            .iter()
            .map(|a| expected_next(instance, s, a, state_values))
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Exact value of the greedy budgeted policy induced by a learned table.
pub fn joint_policy_values(
    instance: &RmabInstance,
    base_reward: &Expr,
    policy: &PolicyTable,
) -> Vec<f64> {
    let n = instance.n_arms();
    sweep_values(instance, base_reward, |state_values, s| {
        let states = unpack(s, n);
        // Eval-mode selection is deterministic; the RNG is never drawn.
        let mut rng = dlm::seed::rng(0);
        let action = select_actions(policy, &states, instance.budget, ActionMode::Eval, &mut rng);
        expected_next(instance, s, &action, state_values)
    })
}

fn sweep_values(
    instance: &RmabInstance,
    base_reward: &Expr,
    backup: impl Fn(&[f64], usize) -> f64,
) -> Vec<f64> {
    let n = instance.n_arms();
    let states = 1usize << n;
    let rewards: Vec<f64> = (0..states)
        .map(|s| {
            let bits = unpack(s, n);
            instance
                .arms
                .iter()
                .zip(&bits)
                .map(|(arm, &b)| dlm::reward::evaluate(base_reward, b, &arm.features).unwrap())
                .sum()
        })
        .collect();
    let mut values = vec![0.0f64; states];
    for _ in 0..600 {
        let mut next = vec![0.0f64; states];
        for s in 0..states {
            next[s] = rewards[s] + instance.discount * backup(&values, s);
        }
        values = next;
    }
    values
}

fn feasible_actions(n: usize, budget: usize) -> Vec<Vec<u8>> {
    (0usize..1 << n)
        .filter(|mask| mask.count_ones() as usize <= budget)
        .map(|mask| unpack(mask, n))
        .collect()
}

fn unpack(mask: usize, n: usize) -> Vec<u8> {
    (0..n).map(|i| ((mask >> i) & 1) as u8).collect()
}

/// Expected continuation value of taking `action` in joint state `s`.
fn expected_next(instance: &RmabInstance, s: usize, action: &[u8], values: &[f64]) -> f64 {
    let n = instance.n_arms();
    let bits = unpack(s, n);
    let engage: Vec<f64> = instance
        .arms
        .iter()
        .zip(&bits)
        .zip(action)
        .map(|((arm, &b), &a)| arm.p.engage_prob(b, a))
        .collect();
    (0..1usize << n)
        .map(|next| {
            let prob: f64 = (0..n)
                .map(|i| {
                    if (next >> i) & 1 == 1 {
                        engage[i]
                    } else {
                        1.0 - engage[i]
                    }
                })
                .product();
            prob * values[next]
        })
        .sum()
}

/// Parse a rendered outcome report back into (category, [(label, pct)])
/// sections. Independent of the renderer's internals.
pub fn parse_rendered_report(rendered: &str) -> Vec<(String, Vec<(String, f64)>)> {
    let mut sections: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    for line in rendered.lines() {
        if let Some(title) = line.strip_prefix("Category: ") {
            sections.push((title.to_string(), Vec::new()));
        } else if let Some((label, value)) = line.rsplit_once(": ") {
            if let Some(pct) = value.strip_suffix('%') {
                if let (Some(section), Ok(pct)) = (sections.last_mut(), pct.parse::<f64>()) {
                    section.1.push((label.to_string(), pct));
                }
            }
        }
    }
    sections
}

/// Generation response in the shape live models produce.
pub fn generation_response(expr: &str) -> String {
    format!("Python Code: '$$$ {expr} $$$' Explanation: '''prioritizes the requested group.'''")
}

/// Reflection response naming a candidate index.
pub fn reflection_response(index: usize) -> String {
    format!("The best reward function is at index: {index}")
}
