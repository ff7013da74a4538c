//! End-to-end orchestration: load a dataset, push every case through
//! retrieve → re-rank → align under a bounded worker pool, and persist
//! the artifacts under `out_dir/<run_id>/`. One case failing — a parse
//! error, a protocol violation, even a panic — marks that case failed
//! and leaves the rest of the run intact.
//!
//! Determinism contract: with the same config, seed, and backend
//! responses, two runs produce byte-identical artifact files. Everything
//! run-specific (run id, wall-clock time) lives in the manifest header
//! line, never in the artifact bodies; per-case randomness is seeded from
//! (run seed, case id) so thread scheduling cannot reorder outcomes.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::Utc;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{apply_rules, AlignError, ApoTrainPair, RuleSet};
use crate::case::{load_dataset, CaseError, ConditionName, Dataset, DermCase};
use crate::gateway::{
    Backend, GatewayConfig, GatewayError, Manifest, ManifestHeader, MemorySink, RecordingBackend,
    ReplayBackend,
};
use crate::mac::{run_mac, MacConfig, MacOutcome};
use crate::metrics::{evaluate_cases, CaseEvalInput, EvalReport, Judge, MetricsError};
use crate::prompts::{PromptError, PromptLibrary};
use crate::rerank::{rerank, RerankStrategy, ScoredCandidate};
use crate::retrieval::{retrieve, CandidateSet, RetrievalStrategy};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("missing artifacts: {0}")]
    MissingArtifacts(String),
}

/// How the candidate list gets ordered after retrieval: one of the three
/// scoring strategies, or the multi-agent discussion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankMode {
    Naive,
    ExpertContext,
    ExpertImage,
    Mac,
}

impl RerankMode {
    /// The scoring strategy behind this mode; `None` for the discussion.
    pub fn scoring(self) -> Option<RerankStrategy> {
        match self {
            Self::Naive => Some(RerankStrategy::NaiveCot),
            Self::ExpertContext => Some(RerankStrategy::ExpertWithContext),
            Self::ExpertImage => Some(RerankStrategy::ExpertImageOnly),
            Self::Mac => None,
        }
    }
}

impl std::str::FromStr for RerankMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Self::Naive),
            "expert_context" => Ok(Self::ExpertContext),
            "expert_image" => Ok(Self::ExpertImage),
            "mac" => Ok(Self::Mac),
            other => Err(format!(
                "unknown rerank mode {other:?}; expected naive, expert_context, expert_image or mac"
            )),
        }
    }
}

impl std::fmt::Display for RerankMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Naive => "naive",
            Self::ExpertContext => "expert_context",
            Self::ExpertImage => "expert_image",
            Self::Mac => "mac",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset_path: PathBuf,
    /// Overrides for individual prompt files; bundled templates fill the
    /// gaps.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    /// Style rules for the aligner; the bundled set when absent.
    #[serde(default)]
    pub rules_path: Option<PathBuf>,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub mac: MacConfig,
    #[serde(default = "default_retrieval")]
    pub retrieval_strategy: RetrievalStrategy,
    #[serde(default = "default_rerank")]
    pub rerank_strategy: RerankMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    pub out_dir: PathBuf,
}

fn default_retrieval() -> RetrievalStrategy {
    RetrievalStrategy::ExpertCot
}

fn default_rerank() -> RerankMode {
    RerankMode::ExpertContext
}

fn default_concurrency() -> usize {
    4
}

impl PipelineConfig {
    pub fn new(dataset_path: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset_path: dataset_path.into(),
            prompts_dir: None,
            rules_path: None,
            gateway: GatewayConfig::default(),
            mac: MacConfig::default(),
            retrieval_strategy: default_retrieval(),
            rerank_strategy: default_rerank(),
            seed: 0,
            max_concurrency: default_concurrency(),
            out_dir: out_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !self.dataset_path.exists() {
            return Err(PipelineError::Config(format!(
                "dataset not found: {}",
                self.dataset_path.display()
            )));
        }
        for (label, path) in [
            ("prompts_dir", &self.prompts_dir),
            ("rules_path", &self.rules_path),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(PipelineError::Config(format!(
                        "{label} not found: {}",
                        path.display()
                    )));
                }
            }
        }
        if self.max_concurrency == 0 {
            return Err(PipelineError::Config(
                "max_concurrency must be at least 1".into(),
            ));
        }
        self.gateway
            .validate()
            .map_err(|err| PipelineError::Config(err.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CaseStatus {
    Ok,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: String,
    #[serde(flatten)]
    pub status: CaseStatus,
    /// The winning condition, when the case got that far.
    pub diagnosis: Option<ConditionName>,
}

/// The run-level report. Deliberately free of run ids and timestamps so
/// that identical runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub model_name: String,
    pub retrieval_strategy: RetrievalStrategy,
    pub rerank_strategy: RerankMode,
    pub ok: usize,
    pub failed: usize,
    pub cases: Vec<CaseSummary>,
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "model: {}  seed: {}  retrieval: {}  rerank: {}\n\n",
            self.model_name, self.seed, self.retrieval_strategy, self.rerank_strategy
        );
        let width = self
            .cases
            .iter()
            .map(|c| c.case_id.len())
            .max()
            .unwrap_or(0)
            .max(7);
        for case in &self.cases {
            let (status, detail) = match &case.status {
                CaseStatus::Ok => (
                    "ok",
                    case.diagnosis
                        .as_ref()
                        .map(|d| d.normalized().to_string())
                        .unwrap_or_default(),
                ),
                CaseStatus::Failed { reason } => ("failed", reason.clone()),
            };
            out.push_str(&format!(
                "{:<width$}  {:<7}{}\n",
                case.case_id,
                status,
                detail,
                width = width
            ));
        }
        out.push_str(&format!("\nok: {}  failed: {}\n", self.ok, self.failed));
        out
    }
}

/// The ranking artifact written for every case, whichever mode produced
/// it. Scoring modes carry their per-candidate scores; the discussion
/// carries none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub case_id: String,
    pub mode: RerankMode,
    /// Most to least probable.
    pub ranked: Vec<ConditionName>,
    pub scores: Vec<ScoredCandidate>,
    pub tie_break_used: bool,
}

pub struct RunOutput {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub report: RunReport,
    pub manifest: Manifest,
}

struct CaseArtifacts {
    candidates: CandidateSet,
    ranking: RankingRecord,
    mac: Option<MacOutcome>,
    aligned: String,
}

/// Run the whole dataset against `backend`, recording every call. Pass a
/// `run_id` to pin the output directory (replays, tests); otherwise one
/// is minted from the clock.
pub fn run_pipeline(
    config: &PipelineConfig,
    backend: Arc<dyn Backend>,
    run_id: Option<String>,
) -> Result<RunOutput, PipelineError> {
    config.validate()?;
    let dataset = load_dataset(&config.dataset_path)?;
    let library = match &config.prompts_dir {
        Some(dir) => PromptLibrary::load_from_dir(dir)?,
        None => PromptLibrary::bundled(),
    };
    let rules = match &config.rules_path {
        Some(path) => RuleSet::load(path)?,
        None => RuleSet::bundled(),
    };

    let run_id = run_id.unwrap_or_else(mint_run_id);
    let run_dir = config.out_dir.join(&run_id);
    for sub in ["candidates", "rankings", "mac", "aligned"] {
        let dir = run_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|source| PipelineError::Io { path: dir, source })?;
    }

    let sink = Arc::new(MemorySink::new());
    let recording = RecordingBackend::new(backend.clone(), sink.clone());
    let results = run_cases(&recording, &library, config, &rules, dataset.cases());
    drop(recording);

    let mut cases = Vec::with_capacity(results.len());
    let mut ok = 0usize;
    for (case, result) in dataset.cases().iter().zip(results) {
        let summary = match result {
            Ok(artifacts) => {
                write_case_artifacts(&run_dir, &case.case_id, &artifacts)?;
                ok += 1;
                CaseSummary {
                    case_id: case.case_id.clone(),
                    status: CaseStatus::Ok,
                    diagnosis: Some(artifacts.ranking.ranked[0].clone()),
                }
            }
            Err(reason) => CaseSummary {
                case_id: case.case_id.clone(),
                status: CaseStatus::Failed { reason },
                diagnosis: None,
            },
        };
        cases.push(summary);
    }

    let report = RunReport {
        seed: config.seed,
        model_name: backend.info().model_name,
        retrieval_strategy: config.retrieval_strategy,
        rerank_strategy: config.rerank_strategy,
        ok,
        failed: cases.len() - ok,
        cases,
    };

    // Record order depends on thread scheduling; sort into dataset order
    // so the manifest body is reproducible.
    let case_order: HashMap<&str, usize> = dataset
        .cases()
        .iter()
        .enumerate()
        .map(|(i, c)| (c.case_id.as_str(), i))
        .collect();
    let mut manifest = Manifest {
        header: ManifestHeader {
            run_id: run_id.clone(),
            created_at: Utc::now(),
            model_name: report.model_name.clone(),
            seed: config.seed,
        },
        records: sink.records(),
    };
    manifest.sort_records_by(|record| {
        case_order
            .get(record.case_id.as_str())
            .copied()
            .unwrap_or(usize::MAX)
    });
    manifest.write_to(&run_dir.join("manifest.jsonl"))?;

    write_json(&run_dir.join("config.json"), config)?;
    write_json(&run_dir.join("report.json"), &report)?;
    write_text(&run_dir.join("report.txt"), &report.to_text())?;

    Ok(RunOutput {
        run_id,
        run_dir,
        report,
        manifest,
    })
}

/// Bounded worker pool: `max_concurrency` threads pull case indices from
/// a shared counter. A panic inside one case is caught and reported as
/// that case's failure.
fn run_cases(
    backend: &dyn Backend,
    library: &PromptLibrary,
    config: &PipelineConfig,
    rules: &RuleSet,
    cases: &[DermCase],
) -> Vec<Result<CaseArtifacts, String>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<CaseArtifacts, String>>>> =
        Mutex::new((0..cases.len()).map(|_| None).collect());
    let workers = config.max_concurrency.min(cases.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= cases.len() {
                    break;
                }
                let case = &cases[index];
                let outcome =
                    catch_unwind(AssertUnwindSafe(|| {
                        run_case(backend, library, config, rules, case)
                    }))
                    .unwrap_or_else(|panic| Err(format!("panic: {}", panic_message(&panic))));
                results.lock().unwrap()[index] = Some(outcome);
            });
        }
    });

    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every case index visited"))
        .collect()
}

fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "opaque panic payload".to_string()
    }
}

fn run_case(
    backend: &dyn Backend,
    library: &PromptLibrary,
    config: &PipelineConfig,
    rules: &RuleSet,
    case: &DermCase,
) -> Result<CaseArtifacts, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed(config.seed, &case.case_id));

    let candidates = retrieve(backend, library, config.retrieval_strategy, case)
        .map_err(|err| err.to_string())?;

    let (ranking, mac) = match config.rerank_strategy.scoring() {
        Some(strategy) => {
            let outcome = rerank(
                backend,
                library,
                strategy,
                case,
                &candidates.candidates,
                &mut rng,
            )
            .map_err(|err| err.to_string())?;
            let record = RankingRecord {
                case_id: case.case_id.clone(),
                mode: config.rerank_strategy,
                ranked: outcome.ranked,
                scores: outcome.scores,
                tie_break_used: outcome.tie_break_used,
            };
            (record, None)
        }
        None => {
            let outcome = run_mac(&backend, library, &config.mac, case, &candidates.candidates)
                .map_err(|failure| failure.to_string())?;
            // The discussion yields a single winner; the remaining
            // candidates keep their retrieval order behind it.
            let mut ranked = vec![outcome.final_diagnosis.clone()];
            ranked.extend(
                candidates
                    .candidates
                    .iter()
                    .filter(|c| **c != outcome.final_diagnosis)
                    .cloned(),
            );
            let record = RankingRecord {
                case_id: case.case_id.clone(),
                mode: RerankMode::Mac,
                ranked,
                scores: Vec::new(),
                tie_break_used: false,
            };
            (record, Some(outcome))
        }
    };

    let draft = compose_draft(&ranking.ranked);
    let aligned = apply_rules(backend, library, rules, &case.case_id, &draft)
        .map_err(|err| err.to_string())?;

    Ok(CaseArtifacts {
        candidates,
        ranking,
        mac,
        aligned: aligned.text,
    })
}

/// The draft the aligner restyles: a hedged sentence naming the winner
/// and the runner-up, in the register the raw pipeline tends to produce.
fn compose_draft(ranked: &[ConditionName]) -> String {
    match ranked {
        [] => "No diagnosis could be established from the available information.".to_string(),
        [only] => format!(
            "Based on the visual descriptions, it seems like the most probable condition \
             is {only}."
        ),
        [first, second, ..] => format!(
            "Based on the visual descriptions, it seems like the most probable condition \
             is {first}, though {second} cannot be excluded without further testing."
        ),
    }
}

/// Per-case RNG seed: a hash of the run seed and the case id, so results
/// do not depend on which worker picked the case up.
fn case_seed(seed: u64, case_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(case_id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

fn mint_run_id() -> String {
    format!(
        "{}-{:06x}",
        Utc::now().format("%Y%m%dT%H%M%SZ"),
        rand::random::<u32>() & 0xff_ffff
    )
}

/// Case ids become file names; keep them path-safe.
fn artifact_stem(case_id: &str) -> String {
    case_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_case_artifacts(
    run_dir: &Path,
    case_id: &str,
    artifacts: &CaseArtifacts,
) -> Result<(), PipelineError> {
    let stem = artifact_stem(case_id);
    write_json(
        &run_dir.join("candidates").join(format!("{stem}.json")),
        &artifacts.candidates,
    )?;
    write_json(
        &run_dir.join("rankings").join(format!("{stem}.json")),
        &artifacts.ranking,
    )?;
    if let Some(mac) = &artifacts.mac {
        write_json(&run_dir.join("mac").join(format!("{stem}.json")), mac)?;
    }
    write_text(
        &run_dir.join("aligned").join(format!("{stem}.txt")),
        &artifacts.aligned,
    )?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|err| PipelineError::Malformed {
        path: path.to_path_buf(),
        detail: err.to_string(),
    })?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|err| PipelineError::Malformed {
        path: path.to_path_buf(),
        detail: err.to_string(),
    })
}

/// Score a finished run directory against its dataset. Cases whose
/// artifacts are missing (failed mid-run) count as misses but stay in the
/// denominators when their ground truth is known.
pub fn evaluate_run(
    run_dir: &Path,
    dataset: &Dataset,
    judge: &dyn Judge,
) -> Result<EvalReport, PipelineError> {
    let candidates_dir = run_dir.join("candidates");
    let rankings_dir = run_dir.join("rankings");
    if !candidates_dir.is_dir() || !rankings_dir.is_dir() {
        return Err(PipelineError::MissingArtifacts(format!(
            "{} lacks candidates/ or rankings/",
            run_dir.display()
        )));
    }

    struct Loaded {
        candidates: Option<CandidateSet>,
        ranking: Option<RankingRecord>,
        aligned: Option<String>,
    }
    let mut loaded = Vec::with_capacity(dataset.cases().len());
    for case in dataset.cases() {
        let stem = artifact_stem(&case.case_id);
        let cand_path = candidates_dir.join(format!("{stem}.json"));
        let rank_path = rankings_dir.join(format!("{stem}.json"));
        let text_path = run_dir.join("aligned").join(format!("{stem}.txt"));
        loaded.push(Loaded {
            candidates: cand_path.exists().then(|| read_json(&cand_path)).transpose()?,
            ranking: rank_path.exists().then(|| read_json(&rank_path)).transpose()?,
            aligned: if text_path.exists() {
                Some(
                    std::fs::read_to_string(&text_path).map_err(|source| PipelineError::Io {
                        path: text_path.clone(),
                        source,
                    })?,
                )
            } else {
                None
            },
        });
    }

    let inputs: Vec<CaseEvalInput<'_>> = dataset
        .cases()
        .iter()
        .zip(&loaded)
        .map(|(case, loaded)| CaseEvalInput {
            case_id: &case.case_id,
            ground_truth: case.ground_truth.as_ref(),
            candidates: loaded.candidates.as_ref().map(|c| c.candidates.as_slice()),
            ranked: loaded.ranking.as_ref().map(|r| r.ranked.as_slice()),
            aligned: loaded.aligned.as_deref(),
            reference: case.reference_response.as_deref(),
        })
        .collect();
    Ok(evaluate_cases(&inputs, judge)?)
}

/// One file that differs between a run and its replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayDiff {
    /// Path relative to the run directory.
    pub path: String,
    pub detail: String,
}

/// Re-run a recorded run from its own manifest and compare every
/// deterministic artifact byte-for-byte. Returns the differences; an
/// empty list means the replay reproduced the run. The replay executes
/// under `scratch_dir` (a temp directory when `None`) and cleans up after
/// itself.
pub fn verify_replay(
    run_dir: &Path,
    scratch_dir: Option<&Path>,
    strict: bool,
) -> Result<Vec<ReplayDiff>, PipelineError> {
    let config: PipelineConfig = read_json(&run_dir.join("config.json"))?;
    let manifest_path = run_dir.join("manifest.jsonl");
    if !manifest_path.exists() {
        return Err(PipelineError::MissingArtifacts(format!(
            "{} has no manifest.jsonl",
            run_dir.display()
        )));
    }

    let scratch = match scratch_dir {
        Some(dir) => dir.to_path_buf(),
        None => std::env::temp_dir(),
    }
    .join(format!("replay-verify-{:08x}", rand::random::<u32>()));

    let replay = Arc::new(ReplayBackend::from_manifest(&manifest_path, strict)?);
    let mut replay_config = config;
    replay_config.out_dir = scratch.clone();
    let output = run_pipeline(&replay_config, replay, Some("replay".into()));
    let diffs = output.and_then(|output| compare_run_dirs(run_dir, &output.run_dir));
    // Best-effort cleanup either way.
    let _ = std::fs::remove_dir_all(&scratch);
    diffs
}

/// Compare the deterministic artifacts of two run directories. The
/// manifest is compared without its header line (run id and timestamp
/// legitimately differ); config.json is skipped (out_dir differs by
/// construction).
fn compare_run_dirs(original: &Path, replayed: &Path) -> Result<Vec<ReplayDiff>, PipelineError> {
    let mut diffs = Vec::new();

    for sub in ["candidates", "rankings", "mac", "aligned"] {
        let mut names = std::collections::BTreeSet::new();
        for side in [original, replayed] {
            let dir = side.join(sub);
            if let Ok(entries) = std::fs::read_dir(&dir) {
                for entry in entries.flatten() {
                    names.insert(format!("{sub}/{}", entry.file_name().to_string_lossy()));
                }
            }
        }
        for name in names {
            compare_file(original, replayed, &name, &mut diffs)?;
        }
    }
    for name in ["report.json", "report.txt"] {
        compare_file(original, replayed, name, &mut diffs)?;
    }

    // Manifest bodies (everything after the header line) must agree.
    let read_body = |side: &Path| -> Result<String, PipelineError> {
        let path = side.join("manifest.jsonl");
        let text = std::fs::read_to_string(&path)
            .map_err(|source| PipelineError::Io { path, source })?;
        Ok(text.split_once('\n').map(|(_, body)| body).unwrap_or("").to_string())
    };
    if read_body(original)? != read_body(replayed)? {
        diffs.push(ReplayDiff {
            path: "manifest.jsonl".into(),
            detail: "call records differ".into(),
        });
    }

    Ok(diffs)
}

fn compare_file(
    original: &Path,
    replayed: &Path,
    relative: &str,
    diffs: &mut Vec<ReplayDiff>,
) -> Result<(), PipelineError> {
    let a = original.join(relative);
    let b = replayed.join(relative);
    match (a.exists(), b.exists()) {
        (false, false) => {}
        (true, false) => diffs.push(ReplayDiff {
            path: relative.into(),
            detail: "missing from replay".into(),
        }),
        (false, true) => diffs.push(ReplayDiff {
            path: relative.into(),
            detail: "only produced by replay".into(),
        }),
        (true, true) => {
            let bytes_a = std::fs::read(&a).map_err(|source| PipelineError::Io {
                path: a.clone(),
                source,
            })?;
            let bytes_b = std::fs::read(&b).map_err(|source| PipelineError::Io {
                path: b.clone(),
                source,
            })?;
            if bytes_a != bytes_b {
                diffs.push(ReplayDiff {
                    path: relative.into(),
                    detail: format!("{} vs {} bytes", bytes_a.len(), bytes_b.len()),
                });
            }
        }
    }
    Ok(())
}

/// Load APO training pairs from a JSONL file, one pair per line.
pub fn load_train_pairs(path: &Path) -> Result<Vec<ApoTrainPair>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut pairs = Vec::new();
    for (number, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: ApoTrainPair =
            serde_json::from_str(line).map_err(|err| PipelineError::Malformed {
                path: path.to_path_buf(),
                detail: format!("line {}: {err}", number + 1),
            })?;
        if pair.draft.trim().is_empty() || pair.reference.trim().is_empty() {
            return Err(PipelineError::Malformed {
                path: path.to_path_buf(),
                detail: format!("line {}: empty draft or reference", number + 1),
            });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// The rule set an APO command writes out: when the loop accepted edits
/// the result already carries a bumped version; when it changed nothing,
/// the version still moves forward so the output file marks the pass.
pub fn finalize_apo_rules(input_version: u32, result: RuleSet) -> RuleSet {
    let mut result = result;
    if result.version <= input_version {
        result.version = input_version + 1;
    }
    result
}
