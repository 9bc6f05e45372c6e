//! Budget-aware policy training via Lagrangian relaxation.
//!
//! Each arm learns an independent tabular Q-function over its two states and
//! two actions; a scalar action charge λ prices the budget. Training
//! alternates epochs of decoupled ε-greedy simulation (λ frozen, one
//! Q-update per observed transition) with a λ step driven by the gap between
//! the epoch's empirical discounted spend and the discounted budget
//! `B / (1 - β)`. At evaluation time the budget is enforced exactly by
//! acting on the top-B arms ranked by charged advantage.

use crate::reward::{self, Expr, RewardError};
use crate::rmab::{RmabInstance, Simulation};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Cost of an action: 1 for acting, 0 otherwise.
pub fn action_cost(a: u8) -> f64 {
    f64::from(a)
}

/// Learning-rate and exploration settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha_q: f64,
    pub alpha_lambda: f64,
    /// Exploration rate at the first epoch, decayed linearly...
    pub epsilon_start: f64,
    /// ...to this value at the last epoch.
    pub epsilon_end: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha_q: 0.1,
            alpha_lambda: 0.01,
            epsilon_start: 0.1,
            epsilon_end: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Q-update sweeps over each epoch's transition buffer. The buffer is
    /// collected once per epoch under a frozen behavior policy and replayed
    /// this many times, which is what squeezes a usable value estimate out
    /// of a 500-sample budget.
    pub replay_passes: usize,
    pub hyper: Hyperparams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            steps_per_epoch: 100,
            replay_passes: 15,
            hyper: Hyperparams::default(),
        }
    }
}

/// Learned per-arm Q-tables plus the action charge.
///
/// `q[arm][s][a]` is the charged action value of taking `a` in state `s`.
/// Serializes as `{lambda, q}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub lambda: f64,
    pub q: Vec<[[f64; 2]; 2]>,
}

impl PolicyTable {
    pub fn zeros(n_arms: usize) -> Self {
        Self {
            lambda: 0.0,
            q: vec![[[0.0; 2]; 2]; n_arms],
        }
    }

    pub fn n_arms(&self) -> usize {
        self.q.len()
    }

    /// Charged advantage of acting on arm `n` in state `s`:
    /// `Q(s, 1) - Q(s, 0) - λ`.
    pub fn advantage(&self, n: usize, s: u8) -> f64 {
        let q = &self.q[n][s as usize];
        q[1] - q[0] - self.lambda
    }
}

/// How actions are drawn from a policy table.
#[derive(Debug, Clone, Copy)]
pub enum ActionMode {
    /// Decoupled ε-greedy on `Q(s, a) - λ c_a`, no budget cap.
    Train { epsilon: f64 },
    /// Hard budget: act on the top-B arms by charged advantage, ties broken
    /// by lower arm id. The budget is an allocation, not an option — the
    /// top-B arms are acted on even when every advantage is negative.
    Eval,
}

/// One Bellman backup on a single observed transition:
/// `Q(s, a) <- (1 - α_q) Q(s, a) + α_q (r - λ c_a + β max_a' Q(s', a'))`.
#[allow(clippy::too_many_arguments)]
pub fn q_update(
    policy: &mut PolicyTable,
    arm: usize,
    s: u8,
    a: u8,
    reward: f64,
    s_next: u8,
    alpha_q: f64,
    beta: f64,
) {
    let next = policy.q[arm][s_next as usize];
    let bootstrap = next[0].max(next[1]);
    let target = reward - policy.lambda * action_cost(a) + beta * bootstrap;
    let cell = &mut policy.q[arm][s as usize][a as usize];
    *cell = (1.0 - alpha_q) * *cell + alpha_q * target;
    assert!(cell.is_finite(), "Q-value diverged for arm {arm}");
}

/// λ ascends when the observed discounted spend exceeds the discounted
/// budget and decays otherwise, projected onto λ >= 0:
/// `λ <- max(0, λ + α_Λ (spend - B / (1 - β)))`.
pub fn lambda_update(
    policy: &mut PolicyTable,
    spend: f64,
    budget: usize,
    beta: f64,
    alpha_lambda: f64,
) {
    let target = budget as f64 / (1.0 - beta);
    policy.lambda = (policy.lambda + alpha_lambda * (spend - target)).max(0.0);
}

/// Draw an action vector for the given states.
pub fn select_actions(
    policy: &PolicyTable,
    states: &[u8],
    budget: usize,
    mode: ActionMode,
    rng: &mut impl Rng,
) -> Vec<u8> {
    match mode {
        ActionMode::Train { epsilon } => states
            .iter()
            .enumerate()
            .map(|(n, &s)| {
                if rng.random::<f64>() < epsilon {
                    rng.random_range(0..2u8)
                } else {
                    let q = &policy.q[n][s as usize];
                    // Charged greedy; ties fall to not acting.
                    u8::from(q[1] - policy.lambda > q[0])
                }
            })
            .collect(),
        ActionMode::Eval => {
            let mut ranked: Vec<(usize, f64)> = states
                .iter()
                .enumerate()
                .map(|(n, &s)| (n, policy.advantage(n, s)))
                .collect();
            ranked.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .expect("Q-values are asserted finite")
                    .then(a.0.cmp(&b.0))
            });
            let mut actions = vec![0u8; states.len()];
            for &(n, _) in ranked.iter().take(budget) {
                actions[n] = 1;
            }
            actions
        }
    }
}

/// Per-arm rewards precomputed for both states. Evaluation errors (for
/// example a division by zero somewhere reachable) surface here, before any
/// simulation runs, and poison the candidate.
pub fn reward_table(reward: &Expr, instance: &RmabInstance) -> Result<Vec<[f64; 2]>, RewardError> {
    instance
        .arms
        .iter()
        .map(|arm| {
            Ok([
                reward::evaluate(reward, 0, &arm.features)?,
                reward::evaluate(reward, 1, &arm.features)?,
            ])
        })
        .collect()
}

/// Train a policy for the given reward expression. Deterministic in `seed`.
pub fn train(
    instance: &RmabInstance,
    reward: &Expr,
    config: &TrainConfig,
    seed: u64,
) -> Result<PolicyTable, RewardError> {
    let rewards = reward_table(reward, instance)?;
    let mut rng = crate::seed::rng(seed);
    let mut policy = PolicyTable::zeros(instance.n_arms());
    let mut sim = Simulation::new(instance);
    let hyper = config.hyper;
    let beta = instance.discount;
    // The buffer accumulates across epochs; every epoch replays all of it.
    let mut buffer: Vec<(u8, u8, u8)> =
        Vec::with_capacity(config.epochs * config.steps_per_epoch * instance.n_arms());

    for epoch in 0..config.epochs {
        let frac = if config.epochs > 1 {
            epoch as f64 / (config.epochs - 1) as f64
        } else {
            0.0
        };
        let epsilon = hyper.epsilon_start + (hyper.epsilon_end - hyper.epsilon_start) * frac;
        let mut spend = 0.0;
        let mut discount_t = 1.0;
        for _ in 0..config.steps_per_epoch {
            let actions = select_actions(
                &policy,
                sim.states(),
                instance.budget,
                ActionMode::Train { epsilon },
                &mut rng,
            );
            spend += discount_t * actions.iter().map(|&a| action_cost(a)).sum::<f64>();
            discount_t *= beta;
            let step = sim
                .step(&actions, &mut rng)
                .expect("action vector length matches by construction");
            for ((&prev, &action), &next) in step.prev.iter().zip(&actions).zip(&step.next) {
                buffer.push((prev, action, next));
            }
        }
        // Arm index recovers from buffer order: one entry per arm per step.
        for _ in 0..config.replay_passes.max(1) {
            for (i, &(s, a, s_next)) in buffer.iter().enumerate() {
                let n = i % instance.n_arms();
                q_update(
                    &mut policy,
                    n,
                    s,
                    a,
                    rewards[n][s as usize],
                    s_next,
                    hyper.alpha_q,
                    beta,
                );
            }
        }
        lambda_update(
            &mut policy,
            spend,
            instance.budget,
            beta,
            hyper.alpha_lambda,
        );
    }
    // Consolidation: λ moved between epochs, so replayed targets baked in a
    // mixture of charges. Re-converge the table under the final λ so every
    // cell prices actions consistently.
    for _ in 0..config.replay_passes.max(1) {
        for (i, &(s, a, s_next)) in buffer.iter().enumerate() {
            let n = i % instance.n_arms();
            q_update(
                &mut policy,
                n,
                s,
                a,
                rewards[n][s as usize],
                s_next,
                hyper.alpha_q,
                beta,
            );
        }
    }
    Ok(policy)
}
