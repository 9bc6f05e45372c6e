//! Command-line surface: instance generation, loop runs, evaluation
//! sweeps, grid-search verification, and report emission.
//!
//! Exit codes: 0 success, 2 usage, 3 language-model backend failure,
//! 4 verification failure, 1 anything else.

use clap::{Args, Parser, Subcommand};
use dlm::eval::{self, EvalProtocol, EvalResults, Method, SweepConfig};
use dlm::llm::{HttpConfig, HttpLlm, LlmBackend, ScriptedTranscript};
use dlm::pipeline::{self, LoopConfig, PipelineError};
use dlm::policy::TrainConfig;
use dlm::reward;
use dlm::rmab::{generate_instance, PopulationConfig, RmabInstance};
use dlm::search;
use dlm::tasks;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dlm",
    version,
    about = "Language-conditioned reward design for restless-bandit resource allocation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic arm population and write it as JSON.
    Gen(GenArgs),
    /// Run the reward-design loop for one task.
    Run(RunArgs),
    /// Evaluate baselines and candidate rewards across seeds.
    Eval(EvalArgs),
    /// Verify the grid search against brute force on randomized cases.
    Oracle(OracleArgs),
    /// Re-render a markdown report from an existing artifact.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 48)]
    arms: usize,
    #[arg(long, default_value_t = 5)]
    budget: usize,
    #[arg(long, default_value_t = 0.9)]
    discount: f64,
    /// Output path for the instance JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Task index (0-15).
    #[arg(long)]
    task: usize,
    /// Instance file produced by `dlm gen`.
    #[arg(long)]
    instance: PathBuf,
    /// Backend: `scripted:<path>` or `http`.
    #[arg(long)]
    llm: String,
    /// Optional JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reflection rounds [default: 2].
    #[arg(long)]
    iterations: Option<usize>,
    /// Candidate rewards per round [default: 2].
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the reflection rounds; return the zero-shot candidate.
    #[arg(long)]
    no_reflection: bool,
    /// Training epochs [default: 5].
    #[arg(long)]
    epochs: Option<usize>,
    /// Simulation steps per epoch [default: 100].
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    /// Q-update sweeps over the buffer per epoch [default: 15].
    #[arg(long)]
    replay_passes: Option<usize>,
    /// Outcome-analysis rollout length [default: 500].
    #[arg(long)]
    analysis_steps: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    http: HttpArgs,
}

#[derive(Args)]
struct HttpArgs {
    /// Chat-completions endpoint for the http backend.
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    llm_url: String,
    #[arg(long, default_value = "gpt-4o-mini")]
    llm_model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "DLM_API_KEY")]
    llm_key_env: String,
    #[arg(long, default_value_t = 60)]
    llm_timeout_secs: u64,
    #[arg(long, default_value_t = 3)]
    llm_max_retries: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Comma-separated task indices, or `all`.
    #[arg(long, default_value = "all")]
    tasks: String,
    /// Comma-separated methods from: random, no-action, default, base.
    /// `random` and `base` are always included (the normalization needs
    /// them).
    #[arg(long, default_value = "random,no-action,default,base")]
    methods: String,
    /// Candidate reward file(s), `name=path` or bare path; the file holds
    /// one reward expression.
    #[arg(long = "reward")]
    rewards: Vec<String>,
    /// Optional JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds per task [default: 50].
    #[arg(long)]
    seeds: Option<usize>,
    /// Trials per seed [default: 50].
    #[arg(long)]
    trials: Option<usize>,
    /// Steps per trial [default: 10].
    #[arg(long)]
    steps: Option<usize>,
    /// Population size [default: 48].
    #[arg(long)]
    arms: Option<usize>,
    /// Actions per step [default: 5].
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Worker threads for the per-seed fan-out (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Training epochs [default: 5].
    #[arg(long)]
    epochs: Option<usize>,
    /// Simulation steps per epoch [default: 100].
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    /// Q-update sweeps over the buffer per epoch [default: 15].
    #[arg(long)]
    replay_passes: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 200)]
    cases: usize,
    #[arg(long, default_value_t = 3)]
    support_max: usize,
    #[arg(long, default_value_t = 3)]
    k_max: u32,
    /// Comma-separated grid bases.
    #[arg(long, default_value = "2,10")]
    alphas: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stress with a non-monotone valuation; mismatches become
    /// informational.
    #[arg(long)]
    non_monotone: bool,
    /// Optional directory for the JSON + markdown report.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A trace JSON produced by `dlm run`.
    #[arg(long, conflicts_with = "results")]
    trace: Option<PathBuf>,
    /// A results JSON produced by `dlm eval`.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum AppError {
    Usage(String),
    Backend(String),
    Verification(String),
    Other(anyhow::Error),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Backend(_) => 3,
            AppError::Verification(_) => 4,
            AppError::Other(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            AppError::Usage(m) | AppError::Backend(m) | AppError::Verification(m) => m.clone(),
            AppError::Other(e) => format!("{e:#}"),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Other(e.into())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::Other(e.into())
    }
}

impl From<PipelineError> for AppError {
    fn from(e: PipelineError) -> Self {
        AppError::Backend(e.to_string())
    }
}

/// Snapshot describing one command invocation; every artifact a command
/// writes is listed in exactly one manifest.
#[derive(Serialize)]
struct RunManifest {
    version: String,
    command: String,
    created_unix_ms: u128,
    backend: Option<String>,
    seeds: Vec<u64>,
    config: serde_json::Value,
    artifacts: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            created_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            backend: None,
            seeds: Vec::new(),
            config,
            artifacts: Vec::new(),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn cmd_gen(args: GenArgs) -> Result<(), AppError> {
    if args.budget > args.arms {
        return Err(AppError::Usage(format!(
            "budget {} exceeds arm count {}",
            args.budget, args.arms
        )));
    }
    let config = PopulationConfig {
        discount: args.discount,
        ..PopulationConfig::default()
    };
    let instance = generate_instance(args.seed, args.arms, args.budget, &config)
        .map_err(|e| AppError::Usage(e.to_string()))?;
    write_json(&args.out, &instance)?;

    let mut manifest = RunManifest::new("gen", serde_json::to_value(&config)?);
    manifest.seeds = vec![args.seed];
    manifest.artifacts = vec![args.out.display().to_string()];
    write_json(&manifest_path(&args.out), &manifest)?;

    println!(
        "wrote {}: {} arms, budget {}, discount {}, seed {}",
        args.out.display(),
        args.arms,
        args.budget,
        args.discount,
        args.seed
    );
    Ok(())
}

fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

fn load_instance(path: &Path) -> Result<RmabInstance, AppError> {
    let text = std::fs::read_to_string(path)?;
    let instance: RmabInstance = serde_json::from_str(&text)?;
    instance
        .validate()
        .map_err(|e| AppError::Usage(format!("invalid instance {}: {e}", path.display())))?;
    Ok(instance)
}

fn make_backend(spec: &str, http: &HttpArgs) -> Result<LlmBackend, AppError> {
    if let Some(path) = spec.strip_prefix("scripted:") {
        let transcript = ScriptedTranscript::from_file(Path::new(path))
            .map_err(|e| AppError::Usage(e.to_string()))?;
        Ok(LlmBackend::Scripted(transcript))
    } else if spec == "http" {
        Ok(LlmBackend::Http(Box::new(HttpLlm::new(HttpConfig {
            url: http.llm_url.clone(),
            model: http.llm_model.clone(),
            api_key_env: http.llm_key_env.clone(),
            timeout_secs: http.llm_timeout_secs,
            max_retries: http.llm_max_retries,
        }))))
    } else {
        Err(AppError::Usage(format!(
            "unknown --llm spec '{spec}'; use scripted:<path> or http"
        )))
    }
}

/// Config-file layer: any field present becomes the default for its flag;
/// explicit flags still win.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    iterations: Option<usize>,
    candidates: Option<usize>,
    epochs: Option<usize>,
    steps_per_epoch: Option<usize>,
    replay_passes: Option<usize>,
    analysis_steps: Option<usize>,
    seeds: Option<usize>,
    trials: Option<usize>,
    steps: Option<usize>,
    arms: Option<usize>,
    budget: Option<usize>,
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig, AppError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Usage(format!("config file {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| AppError::Usage(format!("config file {}: {e}", path.display())))
}

fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn cmd_run(args: RunArgs) -> Result<(), AppError> {
    let Some(task) = tasks::get(args.task) else {
        return Err(AppError::Usage(format!(
            "unknown task index {}; the catalog has {} tasks",
            args.task,
            tasks::catalog().len()
        )));
    };
    let instance = load_instance(&args.instance)?;
    let mut backend = make_backend(&args.llm, &args.http)?;
    let file = load_file_config(args.config.as_ref())?;
    let config = LoopConfig {
        iterations: resolve(args.iterations, file.iterations, 2),
        candidates_per_iter: resolve(args.candidates, file.candidates, 2),
        train: TrainConfig {
            epochs: resolve(args.epochs, file.epochs, 5),
            steps_per_epoch: resolve(args.steps_per_epoch, file.steps_per_epoch, 100),
            replay_passes: resolve(args.replay_passes, file.replay_passes, 15),
            ..TrainConfig::default()
        },
        analysis_steps: resolve(args.analysis_steps, file.analysis_steps, 500),
        seed: args.seed,
        ..LoopConfig::default()
    };

    let outcome = if args.no_reflection {
        pipeline::run_no_reflection(task, &mut backend, &config)?
    } else {
        pipeline::run(task, &instance, &mut backend, &config)?
    };

    std::fs::create_dir_all(&args.out_dir)?;
    let trace_path = args.out_dir.join("trace.json");
    let report_path = args.out_dir.join("report.md");
    let reward_path = args.out_dir.join("selected_reward.txt");
    write_json(&trace_path, &outcome.trace)?;
    std::fs::write(
        &report_path,
        pipeline::render_run_report(task, &outcome.trace),
    )?;
    std::fs::write(&reward_path, format!("{}\n", outcome.selected.render()))?;

    let mut manifest = RunManifest::new("run", serde_json::to_value(&config)?);
    manifest.backend = Some(backend.descriptor());
    manifest.seeds = vec![args.seed];
    manifest.artifacts = vec![
        trace_path.display().to_string(),
        report_path.display().to_string(),
        reward_path.display().to_string(),
    ];
    write_json(&args.out_dir.join("manifest.json"), &manifest)?;

    println!(
        "task {} ({}): selected reward `{}`",
        task.index,
        task.label,
        outcome.selected.render()
    );
    Ok(())
}

fn parse_task_list(spec: &str) -> Result<Vec<usize>, AppError> {
    if spec == "all" {
        return Ok((0..tasks::catalog().len()).collect());
    }
    spec.split(',')
        .map(|part| {
            let index: usize = part
                .trim()
                .parse()
                .map_err(|_| AppError::Usage(format!("bad task index '{part}'")))?;
            if index >= tasks::catalog().len() {
                return Err(AppError::Usage(format!("task index {index} out of range")));
            }
            Ok(index)
        })
        .collect()
}

fn parse_methods(args: &EvalArgs) -> Result<Vec<Method>, AppError> {
    fn push_unique(methods: &mut Vec<Method>, method: Method) {
        if !methods.iter().any(|x| x.name() == method.name()) {
            methods.push(method);
        }
    }
    let mut methods = Vec::new();
    // Normalization anchors come first, whatever was asked for.
    push_unique(&mut methods, Method::Random);
    push_unique(&mut methods, Method::Base);
    for name in args.methods.split(',') {
        let method = match name.trim() {
            "random" => Method::Random,
            "no-action" => Method::NoAction,
            "default" => Method::Default,
            "base" => Method::Base,
            other => {
                return Err(AppError::Usage(format!(
                    "unknown method '{other}'; expected random, no-action, default or base"
                )))
            }
        };
        push_unique(&mut methods, method);
    }
    for spec in &args.rewards {
        let (name, path) = match spec.split_once('=') {
            Some((name, path)) => (name.to_string(), PathBuf::from(path)),
            None => {
                let path = PathBuf::from(spec);
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "candidate".to_string());
                (stem, path)
            }
        };
        let text = std::fs::read_to_string(&path).map_err(|e| {
            AppError::Usage(format!(
                "reward artifact {} unreadable: {e}",
                path.display()
            ))
        })?;
        let expr = reward::parse(text.trim())
            .map_err(|e| AppError::Usage(format!("reward artifact {}: {e}", path.display())))?;
        push_unique(&mut methods, Method::Candidate { name, expr });
    }
    Ok(methods)
}

fn cmd_eval(args: EvalArgs) -> Result<(), AppError> {
    let task_ids = parse_task_list(&args.tasks)?;
    let methods = parse_methods(&args)?;
    let file = load_file_config(args.config.as_ref())?;
    let n_arms = resolve(args.arms, file.arms, 48);
    let budget = resolve(args.budget, file.budget, 5);
    if budget > n_arms {
        return Err(AppError::Usage(format!(
            "budget {budget} exceeds arm count {n_arms}"
        )));
    }
    if args.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.workers)
            .build_global()
            .ok();
    }
    let config = SweepConfig {
        n_arms,
        budget,
        population: PopulationConfig::default(),
        train: TrainConfig {
            epochs: resolve(args.epochs, file.epochs, 5),
            steps_per_epoch: resolve(args.steps_per_epoch, file.steps_per_epoch, 100),
            replay_passes: resolve(args.replay_passes, file.replay_passes, 15),
            ..TrainConfig::default()
        },
        protocol: EvalProtocol {
            n_seeds: resolve(args.seeds, file.seeds, 50),
            trials_per_seed: resolve(args.trials, file.trials, 50),
            steps_per_trial: resolve(args.steps, file.steps, 10),
        },
        base_seed: args.seed_base,
    };

    let mut summaries = Vec::new();
    for id in &task_ids {
        let task = tasks::get(*id).expect("indices validated above");
        let scores = eval::evaluate_task(task, &methods, &config)
            .map_err(|e| AppError::Other(anyhow::anyhow!("task {id}: {e}")))?;
        summaries.push(eval::summarize_task(task, &scores));
    }
    let results = EvalResults {
        config: config.clone(),
        tasks: summaries,
    };

    std::fs::create_dir_all(&args.out_dir)?;
    let results_path = args.out_dir.join("results.json");
    let report_path = args.out_dir.join("report.md");
    write_json(&results_path, &results)?;
    std::fs::write(&report_path, eval::render_results_markdown(&results))?;

    let mut manifest = RunManifest::new("eval", serde_json::to_value(&config)?);
    manifest.seeds = (0..config.protocol.n_seeds as u64).collect();
    manifest.artifacts = vec![
        results_path.display().to_string(),
        report_path.display().to_string(),
    ];
    write_json(&args.out_dir.join("manifest.json"), &manifest)?;

    for task in &results.tasks {
        let line: Vec<String> = task
            .methods
            .iter()
            .map(|m| format!("{}={:.3}±{:.3}", m.name, m.iqm, m.se))
            .collect();
        println!(
            "task {:2} ({}): {}",
            task.task_index,
            task.label,
            line.join(" ")
        );
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), AppError> {
    if args.cases == 0 {
        return Err(AppError::Usage("--cases must be at least 1".into()));
    }
    let alphas: Vec<f64> = args
        .alphas
        .split(',')
        .map(|a| {
            a.trim()
                .parse::<f64>()
                .map_err(|_| AppError::Usage(format!("bad alpha '{a}'")))
        })
        .collect::<Result<_, _>>()?;
    if alphas.iter().any(|&a| a <= 1.0) {
        return Err(AppError::Usage("alphas must exceed 1".into()));
    }

    let report = search::run_verification(
        args.cases,
        args.support_max,
        args.k_max,
        &alphas,
        args.seed,
        !args.non_monotone,
    );
    let rendered = search::render_verification_report(&report);
    println!("{rendered}");

    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)?;
        let json_path = dir.join("verification.json");
        let md_path = dir.join("verification.md");
        write_json(&json_path, &report)?;
        std::fs::write(&md_path, &rendered)?;
        let mut manifest = RunManifest::new(
            "oracle",
            serde_json::json!({
                "cases": args.cases,
                "support_max": args.support_max,
                "k_max": args.k_max,
                "alphas": alphas,
                "monotone": !args.non_monotone,
            }),
        );
        manifest.seeds = vec![args.seed];
        manifest.artifacts = vec![
            json_path.display().to_string(),
            md_path.display().to_string(),
        ];
        write_json(&dir.join("manifest.json"), &manifest)?;
    }

    if !args.non_monotone && report.mismatches > 0 {
        return Err(AppError::Verification(format!(
            "{} monotone case(s) diverged from brute force",
            report.mismatches
        )));
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), AppError> {
    let rendered = if let Some(trace_path) = &args.trace {
        let text = std::fs::read_to_string(trace_path)?;
        let trace: pipeline::LoopTrace = serde_json::from_str(&text)?;
        let Some(task) = tasks::get(trace.task_index) else {
            return Err(AppError::Usage(format!(
                "trace references unknown task {}",
                trace.task_index
            )));
        };
        pipeline::render_run_report(task, &trace)
    } else if let Some(results_path) = &args.results {
        let text = std::fs::read_to_string(results_path)?;
        let results: EvalResults = serde_json::from_str(&text)?;
        eval::render_results_markdown(&results)
    } else {
        return Err(AppError::Usage(
            "pass --trace <file> or --results <file>".into(),
        ));
    };
    match &args.out {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}
