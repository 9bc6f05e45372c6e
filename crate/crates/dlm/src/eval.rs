//! Evaluation protocol, baselines, and metrics.
//!
//! Every method is scored with the task's hidden base reward at evaluation
//! time, whatever reward it trained with. Per-seed raw scores are normalized
//! against the Random floor and the Base-trained topline,
//! `(R - R_rand) / (R_base - R_rand)`, then aggregated with the
//! interquartile mean. So Random is 0 and Base is 1 by construction, and a
//! method's score reads as the fraction of the topline it recovers.

use crate::policy::{self, PolicyTable, TrainConfig};
use crate::reward::{self, Expr, RewardError};
use crate::rmab::{generate_instance, PopulationConfig, RmabError, RmabInstance, Simulation};
use crate::seed;
use crate::tasks::TaskSpec;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeSet;
use thiserror::Error;

/// Evaluation protocol: how many seeds, trials, and steps per trial.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub n_seeds: usize,
    pub trials_per_seed: usize,
    pub steps_per_trial: usize,
}

impl Default for EvalProtocol {
    /// Desk-scale default: 50 seeds keeps a full sweep in minutes. The full
    /// published protocol (200 seeds) is a flag away.
    fn default() -> Self {
        Self {
            n_seeds: 50,
            trials_per_seed: 50,
            steps_per_trial: 10,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Rmab(#[from] RmabError),
}

/// Anything that can pick a budget-feasible action vector.
pub trait Allocator: Sync {
    fn actions(&self, states: &[u8], budget: usize, rng: &mut ChaCha8Rng) -> Vec<u8>;
}

impl Allocator for PolicyTable {
    fn actions(&self, states: &[u8], budget: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
        policy::select_actions(self, states, budget, policy::ActionMode::Eval, rng)
    }
}

/// Acts on B arms chosen uniformly at random each step.
pub struct RandomAllocator;

impl Allocator for RandomAllocator {
    fn actions(&self, states: &[u8], budget: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
        let mut actions = vec![0u8; states.len()];
        for n in rand::seq::index::sample(rng, states.len(), budget.min(states.len())) {
            actions[n] = 1;
        }
        actions
    }
}

/// Never acts.
pub struct NoActionAllocator;

impl Allocator for NoActionAllocator {
    fn actions(&self, states: &[u8], _budget: usize, _rng: &mut ChaCha8Rng) -> Vec<u8> {
        vec![0u8; states.len()]
    }
}

/// Per-trial sums of base reward, plus the number of simulated steps.
#[derive(Debug, Clone)]
pub struct TrialScores {
    pub per_trial: Vec<f64>,
    pub steps: u64,
}

impl TrialScores {
    pub fn mean(&self) -> f64 {
        self.per_trial.iter().sum::<f64>() / self.per_trial.len() as f64
    }
}

/// Roll the allocator out for `trials` trials of `steps_per_trial` steps
/// each, summing the base reward over visited states. Every trial restarts
/// from the instance's initial states. Budget feasibility is asserted on
/// every step.
pub fn evaluate_policy<A: Allocator + ?Sized>(
    alloc: &A,
    instance: &RmabInstance,
    base_reward: &Expr,
    trials: usize,
    steps_per_trial: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrialScores, RewardError> {
    let rewards = policy::reward_table(base_reward, instance)?;
    let mut per_trial = Vec::with_capacity(trials);
    let mut steps = 0u64;
    for _ in 0..trials {
        let mut sim = Simulation::new(instance);
        let mut total = 0.0;
        for _ in 0..steps_per_trial {
            let actions = alloc.actions(sim.states(), instance.budget, rng);
            let acted: usize = actions.iter().map(|&a| usize::from(a)).sum();
            assert!(
                acted <= instance.budget,
                "budget violated: {acted} > {}",
                instance.budget
            );
            total += sim
                .states()
                .iter()
                .zip(&rewards)
                .map(|(&s, r)| r[s as usize])
                .sum::<f64>();
            sim.step(&actions, rng)
                .expect("allocator returns one action per arm");
            steps += 1;
        }
        per_trial.push(total);
    }
    Ok(TrialScores { per_trial, steps })
}

/// A method under evaluation. All methods are evaluated with the base
/// reward; they differ in what they train with.
#[derive(Debug, Clone)]
pub enum Method {
    Random,
    NoAction,
    /// Trained with the fixed legacy objective `state`.
    Default,
    /// Trained with the task's ground-truth base reward; the topline.
    Base,
    /// Trained with a supplied reward expression (e.g. a loop-selected one).
    Candidate {
        name: String,
        expr: Expr,
    },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Random => "random".into(),
            Method::NoAction => "no-action".into(),
            Method::Default => "default".into(),
            Method::Base => "base".into(),
            Method::Candidate { name, .. } => name.clone(),
        }
    }

    fn seed_tag(&self) -> u64 {
        match self {
            Method::Random => 0,
            Method::NoAction => 1,
            Method::Default => 2,
            Method::Base => 3,
            Method::Candidate { name, .. } => {
                10 + name
                    .bytes()
                    .fold(0u64, |h, b| h.wrapping_mul(31) + u64::from(b))
            }
        }
    }

    /// The reward this method trains with, if it trains at all.
    fn train_reward(&self, task: &TaskSpec) -> Option<Expr> {
        match self {
            Method::Random | Method::NoAction => None,
            Method::Default => Some(reward::parse("state").expect("literal parses")),
            Method::Base => Some(task.base_reward.clone()),
            Method::Candidate { expr, .. } => Some(expr.clone()),
        }
    }
}

/// Raw per-seed scores for every method on one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskScores {
    pub task_index: usize,
    pub methods: Vec<String>,
    /// `per_seed[m][s]` is method `m`'s mean trial score on seed `s`.
    pub per_seed: Vec<Vec<f64>>,
    /// Total simulated evaluation steps, all budget-checked.
    pub steps: u64,
}

impl TaskScores {
    pub fn scores(&self, name: &str) -> Option<&[f64]> {
        self.methods
            .iter()
            .position(|m| m == name)
            .map(|i| self.per_seed[i].as_slice())
    }
}

/// Settings shared by every seed of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_arms: usize,
    pub budget: usize,
    pub population: PopulationConfig,
    pub train: TrainConfig,
    pub protocol: EvalProtocol,
    pub base_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_arms: 48,
            budget: 5,
            population: PopulationConfig::default(),
            train: TrainConfig::default(),
            protocol: EvalProtocol::default(),
            base_seed: 0,
        }
    }
}

/// Score every method on one instance with paired evaluation streams.
///
/// One evaluation stream per call, shared by every method: common random
/// numbers keep method comparisons paired, so two policies of equal quality
/// score equally up to their actual allocation differences. Trainable
/// methods draw independent training seeds.
#[allow(clippy::too_many_arguments)]
fn score_methods(
    instance: &RmabInstance,
    task: &TaskSpec,
    methods: &[Method],
    trials: usize,
    steps_per_trial: usize,
    train: &TrainConfig,
    base_seed: u64,
    tags: [u64; 2],
) -> Result<(Vec<f64>, u64), EvalError> {
    let mut scores = Vec::with_capacity(methods.len());
    let mut steps = 0u64;
    let eval_seed = seed::derive(base_seed, &[tags[0], tags[1], 7]);
    for method in methods {
        let policy = method
            .train_reward(task)
            .map(|expr| {
                policy::train(
                    instance,
                    &expr,
                    train,
                    seed::derive(base_seed, &[tags[0], tags[1], method.seed_tag(), 1]),
                )
            })
            .transpose()?;
        let mut rng = seed::rng(eval_seed);
        let trial = match (&policy, method) {
            (Some(p), _) => evaluate_policy(
                p,
                instance,
                &task.base_reward,
                trials,
                steps_per_trial,
                &mut rng,
            )?,
            (None, Method::Random) => evaluate_policy(
                &RandomAllocator,
                instance,
                &task.base_reward,
                trials,
                steps_per_trial,
                &mut rng,
            )?,
            (None, _) => evaluate_policy(
                &NoActionAllocator,
                instance,
                &task.base_reward,
                trials,
                steps_per_trial,
                &mut rng,
            )?,
        };
        steps += trial.steps;
        scores.push(trial.mean());
    }
    Ok((scores, steps))
}

/// Raw scores of the four standard baselines on one given instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineScores {
    pub random: f64,
    pub no_action: f64,
    pub default_reward: f64,
    pub base: f64,
    pub steps: u64,
}

/// Evaluate Random, NoAction, Default, and Base on a provided instance.
pub fn baselines(
    instance: &RmabInstance,
    task: &TaskSpec,
    trials: usize,
    steps_per_trial: usize,
    train: &TrainConfig,
    seed: u64,
) -> Result<BaselineScores, EvalError> {
    let methods = [
        Method::Random,
        Method::NoAction,
        Method::Default,
        Method::Base,
    ];
    let (scores, steps) = score_methods(
        instance,
        task,
        &methods,
        trials,
        steps_per_trial,
        train,
        seed,
        [task.index as u64, 0],
    )?;
    Ok(BaselineScores {
        random: scores[0],
        no_action: scores[1],
        default_reward: scores[2],
        base: scores[3],
        steps,
    })
}

/// Evaluate the given methods on one task. Each seed draws its own arm
/// population, trains every trainable method on it, and scores everything
/// with the base reward. Seeds run in parallel.
pub fn evaluate_task(
    task: &TaskSpec,
    methods: &[Method],
    config: &SweepConfig,
) -> Result<TaskScores, EvalError> {
    let rows: Result<Vec<(Vec<f64>, u64)>, EvalError> = (0..config.protocol.n_seeds)
        .into_par_iter()
        .map(|seed_index| {
            let instance_seed =
                seed::derive(config.base_seed, &[task.index as u64, seed_index as u64, 0]);
            let instance = generate_instance(
                instance_seed,
                config.n_arms,
                config.budget,
                &config.population,
            )?;
            score_methods(
                &instance,
                task,
                methods,
                config.protocol.trials_per_seed,
                config.protocol.steps_per_trial,
                &config.train,
                config.base_seed,
                [task.index as u64, seed_index as u64],
            )
        })
        .collect();
    let rows = rows?;

    let mut per_seed = vec![Vec::with_capacity(rows.len()); methods.len()];
    let mut steps = 0;
    for (scores, row_steps) in rows {
        steps += row_steps;
        for (m, s) in scores.into_iter().enumerate() {
            per_seed[m].push(s);
        }
    }
    Ok(TaskScores {
        task_index: task.index,
        methods: methods.iter().map(Method::name).collect(),
        per_seed,
        steps,
    })
}

/// Interquartile mean: the mean of the central half (the lowest and highest
/// quarter of the sorted values are dropped).
pub fn iqm(values: &[f64]) -> f64 {
    let central = central_half(values);
    central.iter().sum::<f64>() / central.len() as f64
}

/// Standard error of the interquartile mean, estimated as the central
/// half's sample standard deviation over the square root of its size.
pub fn iqm_standard_error(values: &[f64]) -> f64 {
    let central = central_half(values);
    if central.len() < 2 {
        return 0.0;
    }
    let mean = central.iter().sum::<f64>() / central.len() as f64;
    let var = central.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (central.len() - 1) as f64;
    (var / central.len() as f64).sqrt()
}

fn central_half(values: &[f64]) -> Vec<f64> {
    assert!(!values.is_empty(), "iqm of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    let drop = sorted.len() / 4;
    sorted[drop..sorted.len() - drop].to_vec()
}

/// Normalized per-seed scores and their aggregate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MnrSummary {
    /// `None` where the seed was excluded for a degenerate denominator.
    pub per_seed: Vec<Option<f64>>,
    pub excluded: usize,
    pub iqm: f64,
    pub se: f64,
}

impl MnrSummary {
    pub fn defined(&self) -> Vec<f64> {
        self.per_seed.iter().filter_map(|x| *x).collect()
    }
}

/// Mean normalized reward: per seed, `(m - r) / (b - r)`; seeds whose
/// topline and floor coincide are excluded and flagged.
pub fn mnr(method: &[f64], random: &[f64], base: &[f64]) -> MnrSummary {
    assert_eq!(method.len(), random.len());
    assert_eq!(method.len(), base.len());
    let per_seed: Vec<Option<f64>> = method
        .iter()
        .zip(random)
        .zip(base)
        .map(|((&m, &r), &b)| {
            if (b - r).abs() < 1e-9 {
                None
            } else {
                Some((m - r) / (b - r))
            }
        })
        .collect();
    let excluded = per_seed.iter().filter(|x| x.is_none()).count();
    let defined: Vec<f64> = per_seed.iter().filter_map(|x| *x).collect();
    let (iqm_value, se) = if defined.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (iqm(&defined), iqm_standard_error(&defined))
    };
    MnrSummary {
        per_seed,
        excluded,
        iqm: iqm_value,
        se,
    }
}

/// Welch's one-tailed t-test for H1: mean(a) > mean(b). When both samples
/// are exactly constant the p-value degenerates to 0, 1, or 0.5 by the sign
/// of the mean difference.
pub fn one_tailed_t(a: &[f64], b: &[f64]) -> f64 {
    assert!(a.len() >= 2 && b.len() >= 2, "need at least two samples");
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64], m: f64| {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma), var(b, mb));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let denom = va / na + vb / nb;
    if denom == 0.0 {
        return match ma.partial_cmp(&mb).expect("means are finite") {
            std::cmp::Ordering::Greater => 0.0,
            std::cmp::Ordering::Less => 1.0,
            std::cmp::Ordering::Equal => 0.5,
        };
    }
    let t = (ma - mb) / denom.sqrt();
    let df = denom.powi(2) / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid degrees of freedom");
    1.0 - dist.cdf(t)
}

/// Precision and recall of the candidate's feature set against the task's
/// base features. An empty candidate set scores zero precision against a
/// nonempty base set.
pub fn feature_precision_recall(candidate: &Expr, task: &TaskSpec) -> (f64, f64) {
    let used = reward::used_features(candidate);
    let base = &task.base_features;
    let overlap = used.intersection(base).count() as f64;
    let precision = if used.is_empty() {
        if base.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        overlap / used.len() as f64
    };
    let recall = if base.is_empty() {
        1.0
    } else {
        overlap / base.len() as f64
    };
    (precision, recall)
}

/// Does the candidate reproduce the base reward's logical structure? True
/// when both rewards favor exactly the same feature assignments over the
/// union of their feature sets. Candidates whose union exceeds the
/// enumeration bound, or whose evaluation faults, do not match.
pub fn bonus_match(candidate: &Expr, task: &TaskSpec) -> bool {
    let mut union: BTreeSet<usize> = task.base_features.clone();
    union.extend(reward::used_features(candidate));
    match (
        reward::bonus_set(candidate, &union),
        reward::bonus_set(&task.base_reward, &union),
    ) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

/// Over candidates that include at least the base features, the fraction
/// whose bonus structure matches the base reward's. `None` when no
/// candidate qualifies.
pub fn logic_recall(candidates: &[Expr], task: &TaskSpec) -> Option<f64> {
    let qualifying: Vec<&Expr> = candidates
        .iter()
        .filter(|c| reward::used_features(c).is_superset(&task.base_features))
        .collect();
    if qualifying.is_empty() {
        return None;
    }
    let matches = qualifying.iter().filter(|c| bonus_match(c, task)).count();
    Some(matches as f64 / qualifying.len() as f64)
}

/// One method's aggregate on one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    pub iqm: f64,
    pub se: f64,
    pub excluded_seeds: usize,
    pub mnr_per_seed: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TTestEntry {
    pub hypothesis: String,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_index: usize,
    pub label: String,
    pub methods: Vec<MethodSummary>,
    pub t_tests: Vec<TTestEntry>,
    pub steps: u64,
}

/// Results of a sweep over several tasks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResults {
    pub config: SweepConfig,
    pub tasks: Vec<TaskSummary>,
}

/// Normalize a task's raw scores and attach the pairwise tests. Requires
/// the `random` and `base` methods to be present.
pub fn summarize_task(task: &TaskSpec, scores: &TaskScores) -> TaskSummary {
    let random = scores.scores("random").expect("random method present");
    let base = scores.scores("base").expect("base method present");

    let mut methods = Vec::new();
    for (name, raw) in scores.methods.iter().zip(&scores.per_seed) {
        let summary = mnr(raw, random, base);
        methods.push(MethodSummary {
            name: name.clone(),
            iqm: summary.iqm,
            se: summary.se,
            excluded_seeds: summary.excluded,
            mnr_per_seed: summary.per_seed,
        });
    }

    let normalized = |name: &str| -> Option<Vec<f64>> {
        methods
            .iter()
            .find(|m| m.name == name)
            .map(|m| m.mnr_per_seed.iter().filter_map(|x| *x).collect())
    };
    let mut t_tests = Vec::new();
    if let (Some(b), Some(r)) = (normalized("base"), normalized("random")) {
        t_tests.push(TTestEntry {
            hypothesis: "base > random".into(),
            p: one_tailed_t(&b, &r),
        });
    }
    if let (Some(b), Some(d)) = (normalized("base"), normalized("default")) {
        t_tests.push(TTestEntry {
            hypothesis: "base > default".into(),
            p: one_tailed_t(&b, &d),
        });
    }
    for name in &scores.methods {
        if matches!(name.as_str(), "random" | "no-action" | "default" | "base") {
            continue;
        }
        if let (Some(m), Some(d)) = (normalized(name), normalized("default")) {
            t_tests.push(TTestEntry {
                hypothesis: format!("{name} > default"),
                p: one_tailed_t(&m, &d),
            });
        }
    }

    TaskSummary {
        task_index: task.index,
        label: task.label.clone(),
        methods,
        t_tests,
        steps: scores.steps,
    }
}

/// Markdown table mirroring the per-task normalized scores.
pub fn render_results_markdown(results: &EvalResults) -> String {
    use std::fmt::Write;
    let mut out = String::from("# Evaluation results\n\n");
    let _ = writeln!(
        out,
        "Protocol: {} seeds x {} trials x {} steps; {} arms, budget {}.\n",
        results.config.protocol.n_seeds,
        results.config.protocol.trials_per_seed,
        results.config.protocol.steps_per_trial,
        results.config.n_arms,
        results.config.budget
    );
    if let Some(first) = results.tasks.first() {
        let _ = write!(out, "| Task | Label |");
        for m in &first.methods {
            let _ = write!(out, " {} |", m.name);
        }
        let _ = writeln!(out);
        let _ = write!(out, "|---|---|");
        for _ in &first.methods {
            let _ = write!(out, "---|");
        }
        let _ = writeln!(out);
        for task in &results.tasks {
            let _ = write!(out, "| {} | {} |", task.task_index, task.label);
            for m in &task.methods {
                let _ = write!(out, " {:.2} ± {:.3} |", m.iqm, m.se);
            }
            let _ = writeln!(out);
        }
    }
    out.push_str("\n## One-tailed t-tests (normalized scores)\n\n");
    for task in &results.tasks {
        let _ = writeln!(out, "### Task {} — {}", task.task_index, task.label);
        for t in &task.t_tests {
            let rendered = if t.p < 0.001 {
                "p < 0.001".to_string()
            } else {
                format!("p = {:.3}", t.p)
            };
            let _ = writeln!(out, "- {}: {}", t.hypothesis, rendered);
        }
        let _ = writeln!(out);
    }
    out
}
