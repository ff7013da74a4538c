//! Acceptance checklist for the whole workspace. Runs without a harness so
//! every criterion prints exactly one PASS/FAIL line, visible in plain
//! `cargo test` output; the process exits nonzero if any criterion fails.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dermdx_core::align::{apo_optimize, ApoConfig, RuleSet};
use dermdx_core::case::{ConditionName, DermCase, ImagePayload, Split};
use dermdx_core::gateway::{
    Backend, CallCtx, Conversation, GatewayError, ReplayBackend, ScriptedBackend,
    SyntheticBackend,
};
use dermdx_core::mac::{extract_final_diagnosis, run_mac, MacConfig, MacError};
use dermdx_core::metrics::bleu::{bleu, corpus_delta_bleu, delta_bleu, Smoothing};
use dermdx_core::metrics::{retrieval_accuracy, topk_accuracy, ExactJudge, Judge, LlmJudge};
use dermdx_core::pipeline::{run_pipeline, verify_replay, PipelineConfig, RerankMode};
use dermdx_core::prompts::{PromptLibrary, PromptName};
use dermdx_core::rerank::{parse_scores, RankOutcome, RerankStrategy};
use dermdx_core::retrieval::parse_candidate_list;

fn main() {
    let criteria: Vec<(&str, fn() -> Result<String, String>)> = vec![
        ("retrieval accuracy arithmetic", criterion_1),
        ("top-k accuracy arithmetic", criterion_2),
        ("MAC protocol suite", criterion_3),
        ("BLEU oracle", criterion_4),
        ("record/replay round trip", criterion_5),
        ("similarity judge suite", criterion_6),
        ("APO monotonicity", criterion_7),
        ("parser fuzz floor", criterion_8),
    ];

    let mut failures = 0usize;
    for (number, (label, criterion)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            Err(message)
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS - {label} ({detail})", number + 1),
            Err(reason) => {
                failures += 1;
                println!("criterion {}: FAIL - {label}: {reason}", number + 1);
            }
        }
    }

    if failures > 0 {
        eprintln!("{failures} acceptance criterion(s) failed");
        std::process::exit(1);
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn name(raw: &str) -> ConditionName {
    ConditionName::new(raw).unwrap()
}

fn names(raw: &[&str]) -> Vec<ConditionName> {
    raw.iter().map(|r| name(r)).collect()
}

fn approx(actual: f64, expected: f64, tolerance: f64) -> Result<(), String> {
    if (actual - expected).abs() <= tolerance {
        Ok(())
    } else {
        Err(format!("expected {expected}, got {actual} (tolerance {tolerance})"))
    }
}

/// Retrieval accuracy reproduces the published ratios over 47 cases.
fn criterion_1() -> Result<String, String> {
    let rows = [
        (22usize, 0.468085),
        (28, 0.595744),
        (40, 0.851063),
        (35, 0.744680),
    ];
    let started = Instant::now();
    for (hits, expected) in rows {
        let actual =
            retrieval_accuracy(hits, 47).map_err(|e| e.to_string())?;
        approx(actual, expected, 1e-6)?;
    }
    let elapsed = started.elapsed();
    if elapsed >= Duration::from_millis(1) {
        return Err(format!("took {elapsed:?}, budget 1ms"));
    }
    Ok(format!("4 ratios within 1e-6 in {elapsed:?}"))
}

fn outcomes_with_hits(hits: usize, total: usize, gt_rank: usize) -> (Vec<RankOutcome>, HashMap<String, ConditionName>) {
    let mut outcomes = Vec::with_capacity(total);
    let mut truths = HashMap::new();
    for i in 0..total {
        let case_id = format!("case-{i:03}");
        let gt = name(&format!("condition {i}"));
        let mut ranked = names(&["decoy alpha", "decoy beta", "decoy gamma"]);
        if i < hits {
            ranked.insert(gt_rank, gt.clone());
        }
        truths.insert(case_id.clone(), gt);
        outcomes.push(RankOutcome {
            case_id,
            strategy: RerankStrategy::ExpertWithContext,
            scores: Vec::new(),
            ranked,
            tie_break_used: false,
        });
    }
    (outcomes, truths)
}

/// Top-k accuracy reproduces the published ratios from constructed rank
/// outcomes carrying exactly the published hit counts.
fn criterion_2() -> Result<String, String> {
    let rows = [
        (20usize, 47usize, 0.425531),
        (26, 47, 0.553191),
        (25, 47, 0.531915),
        (29, 47, 0.617021),
        (21, 47, 0.446808),
        (8, 15, 0.53333),
        (11, 15, 0.73333),
    ];
    for (hits, total, expected) in rows {
        let (outcomes, truths) = outcomes_with_hits(hits, total, 0);
        let actual = topk_accuracy(&outcomes, &truths, 1, &ExactJudge)
            .map_err(|e| e.to_string())?;
        approx(actual, expected, 1e-5)?;
    }
    // Rank-two placements count at k = 2 but not k = 1.
    let (outcomes, truths) = outcomes_with_hits(8, 15, 1);
    let at_1 = topk_accuracy(&outcomes, &truths, 1, &ExactJudge).map_err(|e| e.to_string())?;
    let at_2 = topk_accuracy(&outcomes, &truths, 2, &ExactJudge).map_err(|e| e.to_string())?;
    approx(at_1, 0.0, 1e-9)?;
    approx(at_2, 0.53333, 1e-5)?;
    Ok("7 ratios within 1e-5, k=1/k=2 split verified".to_string())
}

struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> CountingBackend<B> {
    fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn complete(&self, ctx: &CallCtx, conversation: &Conversation) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(ctx, conversation)
    }
}

fn stub_case() -> DermCase {
    let mut png = vec![0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A];
    png.extend_from_slice(&[0, 0, 0, 0]);
    DermCase::new(
        "acceptance-case",
        "Firm, intensely itchy nodules on the lower legs.",
        vec![ImagePayload::new("stub.png", png).unwrap()],
        Some(name("prurigo nodularis")),
        Split::Validation,
    )
    .unwrap()
}

/// Replies shaped on a real five-way discussion: one revision round, then
/// convergence on chronic eczema.
fn appendix_scripts() -> Vec<String> {
    let specialist = |mine: &str, rivals: [&str; 4]| {
        format!(
            "EVIDENCE: The presentation is most consistent with {mine}: the nodular, \
             intensely pruritic lesions with excoriation marks fit its classic course.\n\
             CRITIQUE {}: the distribution argues against it.\n\
             CRITIQUE {}: the lesion morphology does not match.\n\
             CRITIQUE {}: key features of that condition are absent.\n\
             CRITIQUE {}: the history does not support it.",
            rivals[0], rivals[1], rivals[2], rivals[3]
        )
    };
    vec![
        "The image shows multiple firm, hyperpigmented nodules with overlying excoriations \
         on the lower leg, on a background of dry, lichenified skin."
            .to_string(),
        "Welcome, team. Rick will advocate for prurigo nodularis; Sam for chronic eczema; \
         Michael for psoriasis; Laura for lichen simplex chronicus; Elena for allergic or \
         irritant contact dermatitis."
            .to_string(),
        specialist(
            "prurigo nodularis",
            [
                "chronic eczema",
                "psoriasis",
                "lichen simplex chronicus",
                "allergic or irritant contact dermatitis",
            ],
        ),
        specialist(
            "chronic eczema",
            [
                "prurigo nodularis",
                "psoriasis",
                "lichen simplex chronicus",
                "allergic or irritant contact dermatitis",
            ],
        ),
        specialist(
            "psoriasis",
            [
                "prurigo nodularis",
                "chronic eczema",
                "lichen simplex chronicus",
                "allergic or irritant contact dermatitis",
            ],
        ),
        specialist(
            "lichen simplex chronicus",
            [
                "prurigo nodularis",
                "chronic eczema",
                "psoriasis",
                "allergic or irritant contact dermatitis",
            ],
        ),
        specialist(
            "allergic or irritant contact dermatitis",
            [
                "prurigo nodularis",
                "chronic eczema",
                "psoriasis",
                "lichen simplex chronicus",
            ],
        ),
        "Compiled report: each specialist's evidence and critiques are summarised above \
         for the Admin's review."
            .to_string(),
        "The critiques are thorough. I would like to ask Sam to enhance the evidence \
         supporting chronic eczema, aligning it closer to the observed lichenification."
            .to_string(),
        "REFINED EVIDENCE: The chronic scratching history, the lichenified background and \
         the excoriated nodules align with chronic eczema of long standing."
            .to_string(),
        "The refined evidence for chronic eczema is now the most consistent with the \
         clinical observation. Please **TERMINATE** the conversation."
            .to_string(),
        "FINAL_DIAGNOSIS: Chronic Eczema".to_string(),
    ]
}

/// The discussion protocol holds for every supported candidate count, the
/// count limits are enforced, and the bundled five-way discussion fixture
/// converges on its known answer.
fn criterion_3() -> Result<String, String> {
    let started = Instant::now();
    let library = PromptLibrary::bundled();
    let config = MacConfig::default();
    let case = stub_case();

    let pools: [&[&str]; 3] = [
        &["chronic eczema", "psoriasis", "scabies"],
        &["chronic eczema", "psoriasis", "scabies", "tinea corporis"],
        &[
            "prurigo nodularis",
            "chronic eczema",
            "psoriasis",
            "lichen simplex chronicus",
            "scabies",
        ],
    ];
    for pool in pools {
        let n = pool.len();
        let candidates = names(pool);
        let backend = CountingBackend::new(SyntheticBackend::new(11));
        let outcome = run_mac(&backend, &library, &config, &case, &candidates)
            .map_err(|f| format!("n={n}: {f}"))?;

        // Bijective assignment: every candidate to exactly one specialist.
        let mut assigned: Vec<&ConditionName> =
            outcome.reports.iter().map(|r| &r.candidate).collect();
        assigned.sort_by(|a, b| a.normalized().cmp(b.normalized()));
        assigned.dedup_by(|a, b| a == b);
        if assigned.len() != n {
            return Err(format!("n={n}: assignments are not bijective"));
        }
        let specialists: std::collections::HashSet<&str> =
            outcome.reports.iter().map(|r| r.specialist.as_str()).collect();
        if specialists.len() != n {
            return Err(format!("n={n}: specialist names repeat"));
        }

        if !candidates.contains(&outcome.final_diagnosis) {
            return Err(format!("n={n}: final diagnosis outside the candidate list"));
        }
        if outcome.revision_rounds > config.max_revision_rounds {
            return Err(format!("n={n}: revision budget exceeded"));
        }
        // Documented ceiling: observation + assignment + n specialists +
        // compilation + (rounds+1) admin verdicts + rounds*n refinements +
        // final verdict, with no corrective re-asks for a compliant model.
        let budget = 3 + n + (config.max_revision_rounds as usize + 1)
            + config.max_revision_rounds as usize * n + 1;
        if backend.calls() > budget {
            return Err(format!("n={n}: {} calls exceed budget {budget}", backend.calls()));
        }
    }

    let six = names(&["a", "b", "c", "d", "e", "f"]);
    match run_mac(
        &SyntheticBackend::new(11),
        &library,
        &config,
        &case,
        &six,
    ) {
        Err(failure) if matches!(failure.error, MacError::TooManyCandidates { count: 6 }) => {}
        other => return Err(format!("n=6 should be rejected, got {other:?}")),
    }

    let backend = ScriptedBackend::new(appendix_scripts());
    let candidates = names(&[
        "prurigo nodularis",
        "chronic eczema",
        "psoriasis",
        "lichen simplex chronicus",
        "allergic or irritant contact dermatitis",
    ]);
    let outcome = run_mac(&backend, &library, &config, &case, &candidates)
        .map_err(|f| format!("appendix fixture: {f}"))?;
    if outcome.final_diagnosis.normalized() != "chronic eczema" {
        return Err(format!(
            "appendix fixture finalized {:?}",
            outcome.final_diagnosis.normalized()
        ));
    }

    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(5) {
        return Err(format!("took {elapsed:?}, budget 5s"));
    }
    Ok(format!(
        "n in {{3,4,5}} protocol-clean, n=6 rejected, fixture converges, in {elapsed:?}"
    ))
}

/// BLEU matches hand-computed oracles and DeltaBLEU reduces to BLEU for a
/// single weight-1 reference.
fn criterion_4() -> Result<String, String> {
    for text in [
        "the cat sat on the mat",
        "Thank you for sharing the images.",
        "a b c d e f g",
    ] {
        let score = bleu(text, &[text], 4, Smoothing::AddOne);
        if score != 1.0 {
            return Err(format!("bleu(x,[x]) = {score}, expected exactly 1.0"));
        }
    }

    // "the cat" vs "the cat sat": unigram precision 1, brevity penalty
    // exp(1 - 3/2) -> e^-0.5.
    let hand = bleu("the cat", &["the cat sat"], 1, Smoothing::None);
    approx(hand, (-0.5f64).exp(), 1e-6)?;

    let vocab = ["the", "cat", "sat", "on", "a", "mat", "dog", "ran", "far", "away"];
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let sentence = |rng: &mut ChaCha8Rng| -> String {
        let len = rng.gen_range(1..12);
        (0..len)
            .map(|_| vocab[rng.gen_range(0..vocab.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    for round in 0..50 {
        let hyp = sentence(&mut rng);
        let reference = sentence(&mut rng);
        let plain = bleu(&hyp, &[reference.as_str()], 4, Smoothing::AddOne);
        let weighted = delta_bleu(&hyp, &[(reference.as_str(), 1.0)], 4, Smoothing::AddOne);
        if (plain - weighted).abs() > 1e-12 {
            return Err(format!(
                "round {round}: bleu {plain} != delta_bleu {weighted} for single weight-1 ref"
            ));
        }
    }
    Ok("identity, hand oracle, and 50-pair reduction hold".to_string())
}

fn run_dir_files(dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for sub in ["candidates", "rankings", "mac", "aligned"] {
        if let Ok(entries) = std::fs::read_dir(dir.join(sub)) {
            for entry in entries.flatten() {
                files.push(PathBuf::from(sub).join(entry.file_name()));
            }
        }
    }
    files.push(PathBuf::from("report.json"));
    files.push(PathBuf::from("report.txt"));
    files.sort();
    files
}

fn assert_identical_runs(a: &Path, b: &Path) -> Result<usize, String> {
    let files = run_dir_files(a);
    if files != run_dir_files(b) {
        return Err(format!(
            "file sets differ between {} and {}",
            a.display(),
            b.display()
        ));
    }
    for file in &files {
        let bytes_a = std::fs::read(a.join(file)).map_err(|e| format!("{}: {e}", file.display()))?;
        let bytes_b = std::fs::read(b.join(file)).map_err(|e| format!("{}: {e}", file.display()))?;
        if bytes_a != bytes_b {
            return Err(format!("{} differs between runs", file.display()));
        }
    }
    Ok(files.len())
}

/// Record a ten-case discussion-mode run, then prove the manifest replays
/// it byte for byte, twice over.
fn criterion_5() -> Result<String, String> {
    let started = Instant::now();
    let dataset_path = workspace_root().join("fixtures/demo/cases.jsonl");
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;

    let mut config = PipelineConfig::new(&dataset_path, scratch.path().join("recorded"));
    config.rerank_strategy = RerankMode::Mac;
    config.seed = 7;

    let recorded = run_pipeline(&config, std::sync::Arc::new(SyntheticBackend::new(7)), Some("original".into()))
        .map_err(|e| format!("recording run: {e}"))?;
    if recorded.report.ok != 10 || recorded.report.failed != 0 {
        return Err(format!(
            "expected 10 ok cases, got {} ok / {} failed",
            recorded.report.ok, recorded.report.failed
        ));
    }
    let manifest_path = recorded.run_dir.join("manifest.jsonl");

    let mut replays = Vec::new();
    for tag in ["replay-a", "replay-b"] {
        let backend = ReplayBackend::from_manifest(&manifest_path, true)
            .map_err(|e| format!("{tag}: {e}"))?;
        let mut replay_config = config.clone();
        replay_config.out_dir = scratch.path().join(tag);
        let output = run_pipeline(&replay_config, std::sync::Arc::new(backend), Some(tag.into()))
            .map_err(|e| format!("{tag}: {e}"))?;
        replays.push(output.run_dir);
    }

    let compared = assert_identical_runs(&recorded.run_dir, &replays[0])?;
    assert_identical_runs(&recorded.run_dir, &replays[1])?;
    assert_identical_runs(&replays[0], &replays[1])?;

    // The library-level round trip again, through the single public entry
    // point the CLI uses.
    let diffs = verify_replay(&recorded.run_dir, Some(scratch.path()), true)
        .map_err(|e| e.to_string())?;
    if !diffs.is_empty() {
        return Err(format!("verify_replay reported {} difference(s)", diffs.len()));
    }

    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(30) {
        return Err(format!("took {elapsed:?}, budget 30s"));
    }
    Ok(format!(
        "10 cases, {} files byte-identical across two replays, in {elapsed:?}",
        compared
    ))
}

/// The similarity judge short-circuits identical names, applies the shared
/// -root rule, and re-asks exactly once on malformed verdicts.
fn criterion_6() -> Result<String, String> {
    let template = PromptLibrary::bundled().get(PromptName::Judge).to_string();

    let backend = ScriptedBackend::from_strs(&[]);
    let judge = LlmJudge::new(&backend, template.clone());
    let verdict = judge
        .similar(&name("Chronic Eczema."), &name("chronic  eczema"))
        .map_err(|e| e.to_string())?;
    if !verdict.similar || verdict.rule_applied != 0 {
        return Err(format!("fast path verdict: {verdict:?}"));
    }
    if backend.calls() != 0 {
        return Err(format!("fast path made {} backend call(s)", backend.calls()));
    }

    let backend = ScriptedBackend::from_strs(&[
        "Both names share the root eczema. VERDICT: SIMILAR, RULE: 3",
    ]);
    let judge = LlmJudge::new(&backend, template.clone());
    let verdict = judge
        .similar(&name("herpetic eczema"), &name("seborrheic eczema"))
        .map_err(|e| e.to_string())?;
    if !verdict.similar || verdict.rule_applied != 3 {
        return Err(format!("shared-root verdict: {verdict:?}"));
    }

    let backend = ScriptedBackend::from_strs(&["no verdict here", "still no verdict"]);
    let judge = LlmJudge::new(&backend, template);
    match judge.similar(&name("rosacea"), &name("psoriasis")) {
        Err(_) if backend.calls() == 2 => {}
        Err(_) => {
            return Err(format!(
                "malformed verdicts took {} call(s), expected exactly 2 (one re-ask)",
                backend.calls()
            ))
        }
        Ok(v) => return Err(format!("malformed verdicts produced {v:?}")),
    }
    Ok("fast path zero-call, rule 3 fixture, single re-ask".to_string())
}

const CRITIC_REPLY: &str = r#"Here is a tightened rule set.
```json
[
  {"index": 1, "title": "Simplify and Be Direct", "example": "It looks like psoriasis.", "explanation": "Lead with the diagnosis in plain words."},
  {"index": 2, "title": "Use Patient-Friendly Language", "example": "This rash is not contagious.", "explanation": "Avoid jargon; reassure where warranted."}
]
```"#;

/// The APO loop never returns a worse rule set than it started with, and
/// the CLI reports the before/after scores.
fn criterion_7() -> Result<String, String> {
    let pairs_path = workspace_root().join("fixtures/apo/pairs.jsonl");
    let pairs = dermdx_core::pipeline::load_train_pairs(&pairs_path).map_err(|e| e.to_string())?;
    let library = PromptLibrary::bundled();

    // Scripted improvement: the initial scoring pass echoes each draft,
    // the candidate pass under the critic's rules answers with the
    // reference verbatim.
    let mut replies: Vec<String> = pairs.iter().map(|p| p.draft.clone()).collect();
    replies.push(CRITIC_REPLY.to_string());
    replies.extend(pairs.iter().map(|p| p.reference.clone()));
    let backend = ScriptedBackend::new(replies);
    let report = apo_optimize(
        &backend,
        &library,
        &pairs,
        RuleSet::bundled(),
        &ApoConfig {
            max_iterations: 1,
            ..ApoConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;

    let initial = report.initial_score.ok_or("no initial score")?;
    let final_score = report.final_score.ok_or("no final score")?;
    if final_score < initial {
        return Err(format!("final {final_score} < initial {initial}"));
    }

    // Independent re-score of both rule sets from a fresh backend serving
    // the same rewrites.
    let mut replies: Vec<String> = pairs.iter().map(|p| p.draft.clone()).collect();
    replies.extend(pairs.iter().map(|p| p.reference.clone()));
    let rescore_backend = ScriptedBackend::new(replies);
    let rescore = |rules: &RuleSet| -> Result<f64, String> {
        let mut rewrites = Vec::new();
        for pair in &pairs {
            let outcome = dermdx_core::align::apply_rules(
                &rescore_backend,
                &library,
                rules,
                &pair.case_id,
                &pair.draft,
            )
            .map_err(|e| e.to_string())?;
            rewrites.push(outcome.text);
        }
        let scored: Vec<(&str, Vec<(&str, f64)>)> = rewrites
            .iter()
            .zip(&pairs)
            .map(|(text, pair)| (text.as_str(), vec![(pair.reference.as_str(), 1.0)]))
            .collect();
        Ok(corpus_delta_bleu(&scored, 4, Smoothing::AddOne))
    };
    let rescored_initial = rescore(&RuleSet::bundled())?;
    let rescored_final = rescore(&report.rules)?;
    approx(rescored_initial, initial, 1e-9).map_err(|e| format!("initial rescore: {e}"))?;
    approx(rescored_final, final_score, 1e-9).map_err(|e| format!("final rescore: {e}"))?;
    if rescored_final < rescored_initial {
        return Err("independently re-scored final set is worse".to_string());
    }

    // The CLI prints the before/after line.
    let out_rules = tempfile::tempdir().map_err(|e| e.to_string())?;
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_dermdx"))
        .current_dir(workspace_root())
        .args([
            "apo",
            "--pairs",
            "fixtures/apo/pairs.jsonl",
            "--backend",
            "scripted",
            "--max-iterations",
            "1",
            "--out",
        ])
        .arg(out_rules.path().join("rules.json"))
        .output()
        .map_err(|e| e.to_string())?;
    if !output.status.success() {
        return Err(format!(
            "dermdx apo exited {:?}: {}",
            output.status.code(),
            String::from_utf8_lossy(&output.stderr)
        ));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    let line = stdout
        .lines()
        .find(|l| l.starts_with("DeltaBLEU before="))
        .ok_or_else(|| format!("no DeltaBLEU line in output: {stdout:?}"))?;
    let values: Vec<f64> = line
        .split(['=', ' '])
        .filter_map(|part| part.parse().ok())
        .collect();
    if values.len() != 2 || values[1] < values[0] {
        return Err(format!("unexpected DeltaBLEU line: {line:?}"));
    }

    Ok(format!(
        "scripted gain {initial:.6} -> {final_score:.6}, CLI line verified"
    ))
}

/// The free-text parsers absorb arbitrary input without panicking.
fn criterion_8() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_000);
    let candidates = names(&["chronic eczema", "psoriasis", "tinea corporis"]);
    let fragments = [
        "SCORE", "score", ":", "[", "]", "\"", ",", "FINAL_DIAGNOSIS:", "CRITIQUE",
        "EVIDENCE:", "psoriasis", "chronic eczema", "-", "1.", "10", "-3", "\n", "  ",
        "{", "}", "REVISE:", "TERMINATE",
    ];

    let arbitrary = |rng: &mut ChaCha8Rng| -> String {
        if rng.gen_bool(0.5) {
            // Raw bytes, lossily decoded: exercises non-UTF8 shrapnel.
            let len = rng.gen_range(0..160);
            let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            String::from_utf8_lossy(&bytes).into_owned()
        } else {
            // Structure-adjacent text: fragments glued at random.
            let len = rng.gen_range(0..24);
            (0..len)
                .map(|_| fragments[rng.gen_range(0..fragments.len())])
                .collect::<Vec<_>>()
                .join(if rng.gen_bool(0.3) { "\n" } else { " " })
        }
    };

    for _ in 0..10_000 {
        let input = arbitrary(&mut rng);
        let _ = parse_candidate_list(&input);
        let _ = parse_scores(&input, &candidates, "fuzz-case");
        let _ = extract_final_diagnosis(&input, &candidates);
    }
    Ok("3 parsers x 10,000 inputs, no panics".to_string())
}
