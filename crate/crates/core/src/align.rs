//! Doctor-style alignment: rewrite a pipeline draft under a set of style
//! rules, and improve the rules themselves with an APO loop scored by
//! corpus DeltaBLEU against doctor references.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::{complete, Backend, CallCtx, ChatMessage, Conversation, GatewayError, Stage};
use crate::metrics::bleu::{corpus_delta_bleu, delta_bleu, Smoothing};
use crate::prompts::{PromptError, PromptLibrary, PromptName};

/// Hard cap on rules per set; the critic is told to stay small, this
/// enforces it.
pub const MAX_RULES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleRule {
    pub index: u32,
    pub title: String,
    pub example: String,
    pub explanation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Bundled,
    Learned,
}

/// An ordered, versioned set of style rules. Versions only grow: every
/// accepted APO edit bumps the number, so a file on disk tells you how
/// far from the bundled set it has walked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub version: u32,
    pub provenance: Provenance,
    pub rules: Vec<StyleRule>,
}

impl RuleSet {
    pub fn new(
        version: u32,
        provenance: Provenance,
        rules: Vec<StyleRule>,
    ) -> Result<Self, AlignError> {
        let set = Self {
            version,
            provenance,
            rules,
        };
        set.validate()?;
        Ok(set)
    }

    /// The seven rules shipped with the crate, usable with zero training.
    pub fn bundled() -> Self {
        let set: Self = serde_json::from_str(include_str!("../assets/bundled_rules.json"))
            .expect("bundled rule set parses");
        set.validate().expect("bundled rule set is valid");
        set
    }

    pub fn load(path: &Path) -> Result<Self, AlignError> {
        let text = std::fs::read_to_string(path)?;
        let set: Self = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<(), AlignError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    fn validate(&self) -> Result<(), AlignError> {
        if self.rules.is_empty() || self.rules.len() > MAX_RULES {
            return Err(AlignError::RuleCount {
                count: self.rules.len(),
            });
        }
        for (pos, rule) in self.rules.iter().enumerate() {
            if rule.title.trim().is_empty() {
                return Err(AlignError::EmptyTitle { index: rule.index });
            }
            if rule.index as usize != pos + 1 {
                return Err(AlignError::BadIndices);
            }
        }
        Ok(())
    }

    /// The text block injected as `{rules}` into the aligner and critic
    /// prompts: every field of every rule, numbered.
    pub fn rendered(&self) -> String {
        let mut out = String::new();
        for rule in &self.rules {
            if !out.is_empty() {
                out.push_str("\n\n");
            }
            out.push_str(&format!(
                "Rule {}: {}\n  Example: {}\n  Why: {}",
                rule.index, rule.title, rule.example, rule.explanation
            ));
        }
        out
    }
}

/// One APO training example: what the pipeline said, what the doctor said.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApoTrainPair {
    pub case_id: String,
    pub draft: String,
    pub reference: String,
}

#[derive(Debug, thiserror::Error)]
pub enum AlignError {
    #[error("draft is empty; nothing to align")]
    EmptyDraft,
    #[error("a rule set holds 1 to {MAX_RULES} rules, got {count}")]
    RuleCount { count: usize },
    #[error("rule {index} has an empty title")]
    EmptyTitle { index: u32 },
    #[error("rule indices must run 1..n in order")]
    BadIndices,
    #[error("training pair {case_id} has an empty draft or reference")]
    EmptyPair { case_id: String },
    #[error("cannot read rule set: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse rule set: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Why a critic reply could not be turned into a rule set. These do not
/// abort the APO loop — the iteration is skipped and counted.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CriticParseError {
    #[error("no JSON array in the critic reply")]
    NoJsonBlock,
    #[error("critic JSON is not a rule array: {detail}")]
    NotRuleArray { detail: String },
    #[error("critic proposed {count} rules; 1 to {MAX_RULES} allowed")]
    RuleCount { count: usize },
    #[error("critic rule at position {position} has an empty title")]
    EmptyTitle { position: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignOutcome {
    pub text: String,
    /// True when the model returned nothing and the draft was kept.
    pub used_fallback: bool,
}

/// Rewrite `draft` under `rules` with a single model call. The reply is
/// returned verbatim; an empty reply keeps the draft and logs a warning
/// rather than erroring, since a lost rewrite should not sink a run.
pub fn apply_rules<B: Backend + ?Sized>(
    backend: &B,
    library: &PromptLibrary,
    rules: &RuleSet,
    case_id: &str,
    draft: &str,
) -> Result<AlignOutcome, AlignError> {
    if draft.trim().is_empty() {
        return Err(AlignError::EmptyDraft);
    }
    let prompt = library.render(
        PromptName::Aligner,
        &[("rules", rules.rendered().as_str()), ("draft", draft)],
    )?;
    let mut conv = Conversation::new();
    conv.push(ChatMessage::user_text(prompt))?;
    let ctx = CallCtx::new(case_id, Stage::Align);
    let reply = complete(&backend, &ctx, &conv)?;
    if reply.trim().is_empty() {
        log::warn!("aligner returned nothing for case {case_id}; keeping the draft");
        return Ok(AlignOutcome {
            text: draft.to_string(),
            used_fallback: true,
        });
    }
    Ok(AlignOutcome {
        text: reply,
        used_fallback: false,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApoConfig {
    pub max_iterations: u32,
    /// Minimum corpus-DeltaBLEU improvement for an edit to be accepted.
    pub min_gain: f64,
    /// How many of the worst-scoring pairs the critic gets to see.
    pub worst_pairs: usize,
}

impl Default for ApoConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5,
            min_gain: 0.01,
            worst_pairs: 3,
        }
    }
}

/// What an APO run did, with the scores needed to check monotonicity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApoReport {
    pub rules: RuleSet,
    /// Corpus DeltaBLEU of the starting set; absent when nothing was
    /// scored (no pairs, or a zero iteration budget).
    pub initial_score: Option<f64>,
    pub final_score: Option<f64>,
    pub iterations: u32,
    pub accepted: u32,
    pub skipped_critic_parses: u32,
}

const APO_BLEU_ORDER: usize = 4;
// Training drafts are short; without smoothing a single zero-match order
// floors the sentence scores used to rank pairs.
const APO_SMOOTHING: Smoothing = Smoothing::AddOne;

/// Greedy hill climb over rule sets: rewrite every draft, score the
/// corpus against the references, let a critic propose a full replacement
/// set, keep it only if it gains at least `min_gain`. The result never
/// scores below the starting set. Iterations are sequential; the rewrites
/// within one scoring pass could in principle fan out, but the loop keeps
/// them ordered so replay manifests stay deterministic.
pub fn apo_optimize<B: Backend>(
    backend: &B,
    library: &PromptLibrary,
    pairs: &[ApoTrainPair],
    initial: RuleSet,
    config: &ApoConfig,
) -> Result<ApoReport, AlignError> {
    for pair in pairs {
        if pair.draft.trim().is_empty() || pair.reference.trim().is_empty() {
            return Err(AlignError::EmptyPair {
                case_id: pair.case_id.clone(),
            });
        }
    }
    if pairs.is_empty() || config.max_iterations == 0 {
        return Ok(ApoReport {
            rules: initial,
            initial_score: None,
            final_score: None,
            iterations: 0,
            accepted: 0,
            skipped_critic_parses: 0,
        });
    }

    let mut current = initial;
    let mut scored = score_rules(backend, library, &current, pairs)?;
    let initial_score = scored.corpus;
    let mut accepted = 0u32;
    let mut skipped = 0u32;
    let mut iterations = 0u32;

    for _ in 0..config.max_iterations {
        iterations += 1;
        let critique_block = render_worst_pairs(pairs, &scored, config.worst_pairs);
        let prompt = library.render(
            PromptName::ApoCritic,
            &[
                ("rules", current.rendered().as_str()),
                ("pairs", critique_block.as_str()),
            ],
        )?;
        let mut conv = Conversation::new();
        conv.push(ChatMessage::user_text(prompt))?;
        let ctx = CallCtx::new("apo", Stage::Apo);
        let reply = complete(backend, &ctx, &conv)?;

        let rules = match parse_critic_rules(&reply) {
            Ok(rules) => rules,
            Err(err) => {
                log::warn!("skipping APO iteration {iterations}: {err}");
                skipped += 1;
                continue;
            }
        };
        let candidate = RuleSet {
            version: current.version + 1,
            provenance: Provenance::Learned,
            rules,
        };
        let candidate_scored = score_rules(backend, library, &candidate, pairs)?;
        if candidate_scored.corpus - scored.corpus >= config.min_gain {
            current = candidate;
            scored = candidate_scored;
            accepted += 1;
        }
    }

    Ok(ApoReport {
        rules: current,
        initial_score: Some(initial_score),
        final_score: Some(scored.corpus),
        iterations,
        accepted,
        skipped_critic_parses: skipped,
    })
}

struct ScoredPass {
    corpus: f64,
    per_pair: Vec<f64>,
    rewrites: Vec<String>,
}

/// Rewrite every draft under `rules` and score the whole corpus, keeping
/// per-pair sentence scores so the critic can be shown the worst ones.
fn score_rules<B: Backend>(
    backend: &B,
    library: &PromptLibrary,
    rules: &RuleSet,
    pairs: &[ApoTrainPair],
) -> Result<ScoredPass, AlignError> {
    let mut rewrites = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let outcome = apply_rules(backend, library, rules, &pair.case_id, &pair.draft)?;
        rewrites.push(outcome.text);
    }
    let corpus_input: Vec<(&str, Vec<(&str, f64)>)> = rewrites
        .iter()
        .zip(pairs)
        .map(|(rewrite, pair)| (rewrite.as_str(), vec![(pair.reference.as_str(), 1.0)]))
        .collect();
    let corpus = corpus_delta_bleu(&corpus_input, APO_BLEU_ORDER, APO_SMOOTHING);
    let per_pair = rewrites
        .iter()
        .zip(pairs)
        .map(|(rewrite, pair)| {
            delta_bleu(
                rewrite,
                &[(pair.reference.as_str(), 1.0)],
                APO_BLEU_ORDER,
                APO_SMOOTHING,
            )
        })
        .collect();
    Ok(ScoredPass {
        corpus,
        per_pair,
        rewrites,
    })
}

fn render_worst_pairs(pairs: &[ApoTrainPair], scored: &ScoredPass, take: usize) -> String {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| scored.per_pair[a].total_cmp(&scored.per_pair[b]));
    order.truncate(take.max(1));
    let mut out = String::new();
    for idx in order {
        if !out.is_empty() {
            out.push_str("\n\n");
        }
        out.push_str(&format!(
            "Case {} (DeltaBLEU {:.3}):\n  Rewritten: {}\n  Reference: {}",
            pairs[idx].case_id, scored.per_pair[idx], scored.rewrites[idx], pairs[idx].reference
        ));
    }
    out
}

/// Pull a replacement rule list out of a critic reply. The requested
/// shape is a fenced JSON array; a bare array is accepted too. Indices
/// are reassigned 1..n in array order, so a critic that forgets to
/// renumber does not lose its edit.
pub fn parse_critic_rules(reply: &str) -> Result<Vec<StyleRule>, CriticParseError> {
    #[derive(Deserialize)]
    struct RawRule {
        #[serde(default)]
        #[allow(dead_code)]
        index: Option<u32>,
        title: String,
        #[serde(default)]
        example: String,
        #[serde(default)]
        explanation: String,
    }

    let json = fenced_block(reply)
        .or_else(|| bracket_slice(reply))
        .ok_or(CriticParseError::NoJsonBlock)?;
    let raw: Vec<RawRule> =
        serde_json::from_str(json).map_err(|err| CriticParseError::NotRuleArray {
            detail: err.to_string(),
        })?;
    if raw.is_empty() || raw.len() > MAX_RULES {
        return Err(CriticParseError::RuleCount { count: raw.len() });
    }
    raw.iter()
        .enumerate()
        .map(|(pos, rule)| {
            if rule.title.trim().is_empty() {
                return Err(CriticParseError::EmptyTitle { position: pos });
            }
            Ok(StyleRule {
                index: pos as u32 + 1,
                title: rule.title.clone(),
                example: rule.example.clone(),
                explanation: rule.explanation.clone(),
            })
        })
        .collect()
}

/// The body of the first fenced code block, tolerating a language tag.
fn fenced_block(reply: &str) -> Option<&str> {
    let open = reply.find("```")?;
    let after_fence = &reply[open + 3..];
    let body_start = after_fence.find('\n')? + 1;
    let body = &after_fence[body_start..];
    let close = body.find("```")?;
    Some(body[..close].trim())
}

/// Fallback: the outermost bracketed slice of the reply.
fn bracket_slice(reply: &str) -> Option<&str> {
    let open = reply.find('[')?;
    let close = reply.rfind(']')?;
    (close > open).then(|| &reply[open..=close])
}
