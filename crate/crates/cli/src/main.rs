//! dermdx — command-line front end for the diagnosis pipeline.
//!
//! Subcommands: `run` executes retrieve → re-rank → align over a dataset,
//! `record` does the same while emphasizing the manifest as a replay
//! fixture, `evaluate` scores a finished run directory, `apo` optimizes
//! the aligner's style rules against a training corpus, and
//! `replay-verify` proves a recorded run reproduces itself byte for byte.
//!
//! Exit codes: 0 on success (per-case diagnostic failures do not fail a
//! run), 1 for infrastructure failures mid-run, 2 for configuration and
//! usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dermdx_core::align::{apo_optimize, AlignError, ApoConfig, ApoReport, RuleSet};
use dermdx_core::case::load_dataset;
use dermdx_core::gateway::{
    Backend, GatewayError, LiveBackend, ReplayBackend, SyntheticBackend,
};
use dermdx_core::metrics::{EvalReport, ExactJudge, LlmJudge};
use dermdx_core::pipeline::{
    evaluate_run, finalize_apo_rules, load_train_pairs, run_pipeline, verify_replay,
    PipelineConfig, PipelineError, RunOutput,
};
use dermdx_core::prompts::{PromptLibrary, PromptName};

#[derive(Parser)]
#[command(
    name = "dermdx",
    version,
    about = "Deterministic, replayable LLM diagnosis pipeline for dermatology cases"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration file (TOML or JSON). Flags take precedence
    /// over values in the file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Which backend answers the LLM calls.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendMode>,

    /// Output override: the run directory root for run/record/evaluate,
    /// the optimized rules file for apo.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendMode {
    /// The configured HTTP endpoint; requires AUTH_TOKEN.
    Live,
    /// Serve responses from a recorded manifest (needs --manifest).
    Replay,
    /// The bundled deterministic offline model.
    Scripted,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over every case in the dataset.
    Run(RunArgs),
    /// Run the pipeline and keep the manifest as a replay fixture.
    Record(RunArgs),
    /// Score a finished run directory against its dataset.
    Evaluate(EvaluateArgs),
    /// Optimize the aligner style rules on draft/reference pairs.
    Apo(ApoArgs),
    /// Replay a recorded run from its manifest and compare every artifact.
    ReplayVerify(ReplayVerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Manifest to replay from (required with --backend replay).
    #[arg(long)]
    manifest: Option<PathBuf>,

    /// Pin the run id instead of minting timestamp-plus-suffix.
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory produced by `run` (the directory containing
    /// manifest.jsonl).
    #[arg(long)]
    run: PathBuf,

    /// Dataset the run was produced from; defaults to the config file's
    /// dataset_path.
    #[arg(long)]
    dataset: Option<PathBuf>,

    /// How condition names are compared against ground truth.
    #[arg(long, value_enum, default_value_t = JudgeMode::Exact)]
    judge: JudgeMode,

    /// Manifest for --judge llm with --backend replay.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum JudgeMode {
    /// Normalized string equality only; no LLM calls.
    Exact,
    /// Exact fast path plus the rule-based LLM judge for the rest.
    Llm,
}

#[derive(Args)]
struct ApoArgs {
    /// JSONL training pairs: {"case_id", "draft", "reference"} per line.
    #[arg(long)]
    pairs: PathBuf,

    /// Starting rule set; the bundled rules when omitted.
    #[arg(long)]
    rules: Option<PathBuf>,

    /// Optimization budget; 0 writes the input rules back with a bumped
    /// version.
    #[arg(long)]
    max_iterations: Option<u32>,

    /// Manifest for --backend replay.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayVerifyArgs {
    /// Run directory to verify against its own manifest.
    #[arg(long)]
    run: PathBuf,

    /// Serve replay responses by case and stage order even when request
    /// bytes differ from the recording.
    #[arg(long)]
    lenient: bool,
}

/// An error carrying its process exit code.
#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn infra(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        let code = match &err {
            PipelineError::Config(_)
            | PipelineError::Malformed { .. }
            | PipelineError::MissingArtifacts(_)
            | PipelineError::Case(_)
            | PipelineError::Prompt(_) => 2,
            PipelineError::Align(align) => align_exit_code(align),
            PipelineError::Gateway(gateway) => gateway_exit_code(gateway),
            PipelineError::Metrics(_) | PipelineError::Io { .. } => 1,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(err: GatewayError) -> Self {
        Self {
            code: gateway_exit_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<AlignError> for CliError {
    fn from(err: AlignError) -> Self {
        Self {
            code: align_exit_code(&err),
            message: err.to_string(),
        }
    }
}

fn gateway_exit_code(err: &GatewayError) -> u8 {
    match err {
        GatewayError::MissingAuthToken | GatewayError::Config(_) => 2,
        _ => 1,
    }
}

fn align_exit_code(err: &AlignError) -> u8 {
    match err {
        AlignError::Gateway(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mode = cli.backend.unwrap_or(BackendMode::Scripted);
    match cli.command {
        Command::Run(ref args) => {
            let config = effective_config(&cli)?;
            let output = execute_run(&config, mode, args)?;
            print!("{}", run_summary(&output));
            Ok(())
        }
        Command::Record(ref args) => {
            if mode == BackendMode::Replay {
                return Err(CliError::usage(
                    "record needs a live or scripted backend; replay would only echo an \
                     earlier recording",
                ));
            }
            let config = effective_config(&cli)?;
            let output = execute_run(&config, mode, args)?;
            print!("{}", run_summary(&output));
            println!(
                "manifest: {}",
                output.run_dir.join("manifest.jsonl").display()
            );
            Ok(())
        }
        Command::Evaluate(ref args) => {
            let report = execute_evaluate(&cli, mode, args)?;
            print!("{}", report.to_text());
            if let Some(dir) = &cli.out {
                write_eval_report(dir, &report)?;
            }
            Ok(())
        }
        Command::Apo(ref args) => {
            let (out_path, line) = execute_apo(&cli, mode, args)?;
            println!("{line}");
            println!("rules written to {}", out_path.display());
            Ok(())
        }
        Command::ReplayVerify(ref args) => {
            let diffs = verify_replay(&args.run, None, !args.lenient)?;
            if diffs.is_empty() {
                println!("replay matches the recorded run");
                Ok(())
            } else {
                for diff in &diffs {
                    eprintln!("diverged: {} ({})", diff.path, diff.detail);
                }
                Err(CliError::infra(format!(
                    "replay diverged in {} file(s)",
                    diffs.len()
                )))
            }
        }
    }
}

/// Load the config file and fold the global flag overrides in.
fn effective_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::usage("--config <file> is required for this command"))?;
    let mut config = load_config(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn load_config(path: &Path) -> Result<PipelineConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|err| CliError::usage(format!("{}: {err}", path.display())))?;
    let parse_toml = |text: &str| toml::from_str::<PipelineConfig>(text).map_err(|e| e.to_string());
    let parse_json =
        |text: &str| serde_json::from_str::<PipelineConfig>(text).map_err(|e| e.to_string());
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => parse_toml(&text),
        Some("json") => parse_json(&text),
        // Unknown extension: accept either format.
        _ => parse_json(&text).or_else(|_| parse_toml(&text)),
    };
    parsed.map_err(|detail| CliError::usage(format!("{}: {detail}", path.display())))
}

fn make_backend(
    mode: BackendMode,
    config: &PipelineConfig,
    manifest: Option<&Path>,
) -> Result<Arc<dyn Backend>, CliError> {
    match mode {
        BackendMode::Scripted => Ok(Arc::new(SyntheticBackend::new(config.seed))),
        BackendMode::Live => Ok(Arc::new(LiveBackend::from_env(config.gateway.clone())?)),
        BackendMode::Replay => {
            let path = manifest.ok_or_else(|| {
                CliError::usage("--backend replay requires --manifest <path>")
            })?;
            Ok(Arc::new(ReplayBackend::from_manifest(path, true)?))
        }
    }
}

fn execute_run(
    config: &PipelineConfig,
    mode: BackendMode,
    args: &RunArgs,
) -> Result<RunOutput, CliError> {
    let backend = make_backend(mode, config, args.manifest.as_deref())?;
    Ok(run_pipeline(config, backend, args.run_id.clone())?)
}

fn run_summary(output: &RunOutput) -> String {
    let mut text = format!(
        "run {}: {} ok, {} failed\n",
        output.run_id, output.report.ok, output.report.failed
    );
    for case in &output.report.cases {
        if let dermdx_core::pipeline::CaseStatus::Failed { reason } = &case.status {
            text.push_str(&format!("  {} failed: {reason}\n", case.case_id));
        }
    }
    text.push_str(&format!("artifacts: {}\n", output.run_dir.display()));
    text
}

fn execute_evaluate(
    cli: &Cli,
    mode: BackendMode,
    args: &EvaluateArgs,
) -> Result<EvalReport, CliError> {
    let dataset_path = match (&args.dataset, &cli.config) {
        (Some(path), _) => path.clone(),
        (None, Some(_)) => effective_config(cli)?.dataset_path,
        (None, None) => {
            return Err(CliError::usage(
                "evaluate needs --dataset <file> or a --config naming one",
            ))
        }
    };
    let dataset = load_dataset(&dataset_path).map_err(PipelineError::from)?;

    let report = match args.judge {
        JudgeMode::Exact => evaluate_run(&args.run, &dataset, &ExactJudge)?,
        JudgeMode::Llm => {
            let config = match &cli.config {
                Some(_) => effective_config(cli)?,
                None => {
                    // The judge only needs a backend; a default config
                    // carries the scripted one.
                    let mut config = PipelineConfig::new(&dataset_path, ".");
                    config.seed = cli.seed.unwrap_or(0);
                    config
                }
            };
            let backend = make_backend(mode, &config, args.manifest.as_deref())?;
            let library = library_for(&config)?;
            let judge = LlmJudge::new(backend, library.get(PromptName::Judge).to_string());
            evaluate_run(&args.run, &dataset, &judge)?
        }
    };
    Ok(report)
}

fn library_for(config: &PipelineConfig) -> Result<PromptLibrary, CliError> {
    Ok(match &config.prompts_dir {
        Some(dir) => PromptLibrary::load_from_dir(dir).map_err(PipelineError::from)?,
        None => PromptLibrary::bundled(),
    })
}

fn write_eval_report(dir: &Path, report: &EvalReport) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|err| CliError::infra(format!("{}: {err}", dir.display())))?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|err| CliError::infra(err.to_string()))?;
    std::fs::write(dir.join("eval_report.json"), json + "\n")
        .map_err(|err| CliError::infra(format!("{}: {err}", dir.display())))?;
    std::fs::write(dir.join("eval_report.txt"), report.to_text())
        .map_err(|err| CliError::infra(format!("{}: {err}", dir.display())))?;
    Ok(())
}

fn execute_apo(
    cli: &Cli,
    mode: BackendMode,
    args: &ApoArgs,
) -> Result<(PathBuf, String), CliError> {
    let pairs = load_train_pairs(&args.pairs)?;
    let initial = match &args.rules {
        Some(path) => RuleSet::load(path)?,
        None => RuleSet::bundled(),
    };
    let input_version = initial.version;

    // The backend and prompt library come from the config file when one
    // is given; otherwise the bundled defaults suffice.
    let config = match &cli.config {
        Some(_) => effective_config(cli)?,
        None => {
            let mut config = PipelineConfig::new(&args.pairs, ".");
            config.seed = cli.seed.unwrap_or(0);
            config
        }
    };
    let backend = make_backend(mode, &config, args.manifest.as_deref())?;
    let library = library_for(&config)?;

    let mut apo_config = ApoConfig::default();
    if let Some(budget) = args.max_iterations {
        apo_config.max_iterations = budget;
    }
    let report = apo_optimize(&backend, &library, &pairs, initial, &apo_config)?;
    let line = delta_bleu_line(&report);

    let finalized = finalize_apo_rules(input_version, report.rules);
    let out_path = match &cli.out {
        Some(path) => path.clone(),
        None => default_rules_out(args.rules.as_deref()),
    };
    finalized.save(&out_path)?;
    Ok((out_path, line))
}

fn default_rules_out(input: Option<&Path>) -> PathBuf {
    match input {
        Some(path) => path.with_extension("optimized.json"),
        None => PathBuf::from("rules.optimized.json"),
    }
}

fn delta_bleu_line(report: &ApoReport) -> String {
    let fmt = |score: Option<f64>| match score {
        Some(value) => format!("{value:.6}"),
        None => "n/a".to_string(),
    };
    format!(
        "DeltaBLEU before={} after={}",
        fmt(report.initial_score),
        fmt(report.final_score)
    )
}
