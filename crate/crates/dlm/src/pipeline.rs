//! The reward-design loop.
//!
//! Each iteration samples K candidate rewards from the language model
//! (with the running list of previous winners as context), trains a policy
//! per parseable candidate, rolls the policies out to produce state-feature
//! distribution reports, and asks the model to pick the best candidate. The
//! winner seeds the next iteration's context; the final winner is the
//! selected reward.
//!
//! Failed candidate slots degrade gracefully: generation is re-queried up to
//! a retry budget, unparseable or poisoned candidates are recorded and
//! skipped, and an iteration with no surviving candidate leaves the context
//! untouched. Only a run in which every iteration fails is an error.

use crate::llm::{self, LlmBackend, LlmError};
use crate::outcome::{self, OutcomeReport};
use crate::policy::{self, TrainConfig};
use crate::reward::Expr;
use crate::rmab::RmabInstance;
use crate::seed;
use crate::tasks::TaskSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("language model backend failed: {0}")]
    Backend(#[from] LlmError),
    #[error("no candidate reward survived any iteration")]
    NoCandidate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Reflection rounds.
    pub iterations: usize,
    /// Candidate rewards sampled per round.
    pub candidates_per_iter: usize,
    /// Re-queries allowed per failed candidate slot.
    pub gen_retries: usize,
    pub train: TrainConfig,
    /// Rollout length of the outcome analysis per candidate.
    pub analysis_steps: usize,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            candidates_per_iter: 2,
            gen_retries: 2,
            train: TrainConfig::default(),
            analysis_steps: 500,
            seed: 0,
        }
    }
}

/// Terminal status of one candidate slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason")]
pub enum CandidateStatus {
    Selected,
    TrainedNotSelected,
    Failed(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub slot: usize,
    /// Generation queries spent on this slot (1 + retries used).
    pub attempts: usize,
    /// Canonical render of the parsed reward, when parsing succeeded.
    pub source: Option<String>,
    pub status: CandidateStatus,
    /// Final action charge of the trained policy.
    pub lambda: Option<f64>,
    /// Rendered state-feature distribution report.
    pub outcome: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReflectionTrace {
    /// Index the model answered with, if it parsed.
    pub response_index: Option<usize>,
    /// True when the deterministic fallback picked the winner instead.
    pub fallback: bool,
    /// Winning slot, in the iteration's slot numbering.
    pub chosen_slot: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationTrace {
    pub candidates: Vec<CandidateTrace>,
    pub reflection: Option<ReflectionTrace>,
    /// True when no candidate survived and the context was left unchanged.
    pub skipped: bool,
    pub winner: Option<String>,
}

/// Full record of one loop run. Contains no timestamps, so identical runs
/// serialize to identical bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopTrace {
    pub task_index: usize,
    pub seed: u64,
    pub iterations: Vec<IterationTrace>,
    pub generation_calls: usize,
    pub reflection_calls: usize,
    /// Canonical render of the selected reward.
    pub selected: Option<String>,
}

/// Outcome of a completed loop run.
pub struct LoopOutcome {
    pub selected: Expr,
    pub trace: LoopTrace,
}

struct TrainedCandidate {
    slot: usize,
    expr: Expr,
    report: OutcomeReport,
}

/// Run the full loop and return the last iteration's winning reward.
pub fn run(
    task: &TaskSpec,
    instance: &RmabInstance,
    backend: &mut LlmBackend,
    config: &LoopConfig,
) -> Result<LoopOutcome, PipelineError> {
    let mut trace = LoopTrace {
        task_index: task.index,
        seed: config.seed,
        iterations: Vec::new(),
        generation_calls: 0,
        reflection_calls: 0,
        selected: None,
    };
    let mut context: Vec<String> = Vec::new();
    let mut selected: Option<Expr> = None;

    for iteration in 0..config.iterations {
        let mut candidates: Vec<CandidateTrace> = Vec::new();
        let mut trained: Vec<TrainedCandidate> = Vec::new();

        for slot in 0..config.candidates_per_iter {
            let (candidate, expr) =
                generate_candidate(task, backend, config, &context, &mut trace.generation_calls)?;
            let mut candidate = CandidateTrace { slot, ..candidate };
            if let Some(expr) = expr {
                let train_seed = seed::derive(config.seed, &[iteration as u64, slot as u64, 1]);
                match policy::train(instance, &expr, &config.train, train_seed) {
                    Ok(policy) => {
                        let mut rng = seed::rng(seed::derive(
                            config.seed,
                            &[iteration as u64, slot as u64, 2],
                        ));
                        let report =
                            outcome::analyze(&policy, instance, config.analysis_steps, &mut rng);
                        candidate.lambda = Some(policy.lambda);
                        candidate.outcome = Some(report.rendered.clone());
                        candidate.status = CandidateStatus::TrainedNotSelected;
                        trained.push(TrainedCandidate { slot, expr, report });
                    }
                    Err(e) => {
                        candidate.status = CandidateStatus::Failed(format!("training: {e}"));
                    }
                }
            }
            candidates.push(candidate);
        }

        if trained.is_empty() {
            trace.iterations.push(IterationTrace {
                candidates,
                reflection: None,
                skipped: true,
                winner: None,
            });
            continue;
        }

        let shown: Vec<(String, String)> = trained
            .iter()
            .map(|c| (c.expr.render(), c.report.rendered.clone()))
            .collect();
        let prompt = llm::build_reflection_prompt(task, &shown);
        let response = backend.complete(&prompt, llm::REFLECTION_TEMPERATURE)?;
        trace.reflection_calls += 1;

        let (winner_pos, reflection) =
            match llm::parse_reflection_response(&response, trained.len()) {
                Ok(i) => (
                    i,
                    ReflectionTrace {
                        response_index: Some(i),
                        fallback: false,
                        chosen_slot: trained[i].slot,
                    },
                ),
                Err(_) => {
                    let i = fallback_choice(task, &trained);
                    (
                        i,
                        ReflectionTrace {
                            response_index: None,
                            fallback: true,
                            chosen_slot: trained[i].slot,
                        },
                    )
                }
            };

        let winner = &trained[winner_pos];
        for candidate in &mut candidates {
            if candidate.slot == winner.slot {
                candidate.status = CandidateStatus::Selected;
            }
        }
        let winner_render = winner.expr.render();
        context.push(winner_render.clone());
        selected = Some(winner.expr.clone());
        trace.iterations.push(IterationTrace {
            candidates,
            reflection: Some(reflection),
            skipped: false,
            winner: Some(winner_render),
        });
    }

    let selected = selected.ok_or(PipelineError::NoCandidate)?;
    trace.selected = Some(selected.render());
    Ok(LoopOutcome { selected, trace })
}

/// Ablation of the reflection rounds: one generation query, no reflection;
/// the zero-shot candidate is the result.
pub fn run_no_reflection(
    task: &TaskSpec,
    backend: &mut LlmBackend,
    config: &LoopConfig,
) -> Result<LoopOutcome, PipelineError> {
    let mut trace = LoopTrace {
        task_index: task.index,
        seed: config.seed,
        iterations: Vec::new(),
        generation_calls: 0,
        reflection_calls: 0,
        selected: None,
    };
    let (candidate, expr) =
        generate_candidate(task, backend, config, &[], &mut trace.generation_calls)?;
    let mut candidate = CandidateTrace {
        slot: 0,
        ..candidate
    };
    let Some(expr) = expr else {
        trace.iterations.push(IterationTrace {
            candidates: vec![candidate],
            reflection: None,
            skipped: true,
            winner: None,
        });
        return Err(PipelineError::NoCandidate);
    };
    candidate.status = CandidateStatus::Selected;
    let render = expr.render();
    trace.iterations.push(IterationTrace {
        candidates: vec![candidate],
        reflection: None,
        skipped: false,
        winner: Some(render.clone()),
    });
    trace.selected = Some(render);
    Ok(LoopOutcome {
        selected: expr,
        trace,
    })
}

/// Query one candidate slot, re-querying up to the retry budget. Backend
/// failures (exhausted transcript, dead endpoint) abort the run; parse
/// failures only fail the slot.
fn generate_candidate(
    task: &TaskSpec,
    backend: &mut LlmBackend,
    config: &LoopConfig,
    context: &[String],
    generation_calls: &mut usize,
) -> Result<(CandidateTrace, Option<Expr>), PipelineError> {
    let prompt = llm::build_generation_prompt(task, context);
    let mut attempts = 0;
    let mut last_error = String::new();
    while attempts <= config.gen_retries {
        let response = backend.complete(&prompt, llm::GENERATION_TEMPERATURE)?;
        *generation_calls += 1;
        attempts += 1;
        match llm::parse_generation_response(&response) {
            Ok(expr) => {
                return Ok((
                    CandidateTrace {
                        slot: 0,
                        attempts,
                        source: Some(expr.render()),
                        status: CandidateStatus::TrainedNotSelected,
                        lambda: None,
                        outcome: None,
                    },
                    Some(expr),
                ))
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    Ok((
        CandidateTrace {
            slot: 0,
            attempts,
            source: None,
            status: CandidateStatus::Failed(format!("generation: {last_error}")),
            lambda: None,
            outcome: None,
        },
        None,
    ))
}

/// Deterministic stand-in when the reflection answer cannot be parsed: pick
/// the candidate whose outcome report concentrates the most percentage mass
/// on the groups named by the task's base features. Ties go to the earlier
/// candidate.
fn fallback_choice(task: &TaskSpec, trained: &[TrainedCandidate]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, candidate) in trained.iter().enumerate() {
        let score: f64 = task
            .base_features
            .iter()
            .map(|&k| candidate.report.share_of_feature(k))
            .sum();
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

/// Markdown report for one loop run.
pub fn render_run_report(task: &TaskSpec, trace: &LoopTrace) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "# Run report: task {} ({})", task.index, task.label);
    let _ = writeln!(out, "\nPrompt: {}", task.prompt);
    let _ = writeln!(
        out,
        "\nSelected reward: `{}`",
        trace.selected.as_deref().unwrap_or("(none)")
    );
    let _ = writeln!(
        out,
        "\nLanguage-model calls: {} generation, {} reflection",
        trace.generation_calls, trace.reflection_calls
    );
    for (i, iteration) in trace.iterations.iter().enumerate() {
        let _ = writeln!(out, "\n## Iteration {i}");
        if iteration.skipped {
            let _ = writeln!(out, "\nSkipped: no candidate survived.");
        }
        for candidate in &iteration.candidates {
            let _ = writeln!(
                out,
                "\n### Candidate {} — {}",
                candidate.slot,
                match &candidate.status {
                    CandidateStatus::Selected => "selected".to_string(),
                    CandidateStatus::TrainedNotSelected => "trained".to_string(),
                    CandidateStatus::Failed(reason) => format!("failed ({reason})"),
                }
            );
            if let Some(source) = &candidate.source {
                let _ = writeln!(out, "\n`{source}`");
            }
            if let Some(lambda) = candidate.lambda {
                let _ = writeln!(out, "\nAction charge after training: {lambda:.4}");
            }
            if let Some(outcome) = &candidate.outcome {
                let _ = writeln!(out, "\n```\n{}\n```", outcome.trim_end());
            }
        }
        if let Some(reflection) = &iteration.reflection {
            let _ = writeln!(
                out,
                "\nReflection chose slot {}{}.",
                reflection.chosen_slot,
                if reflection.fallback {
                    " (fallback selection)"
                } else {
                    ""
                }
            );
        }
    }
    out
}
