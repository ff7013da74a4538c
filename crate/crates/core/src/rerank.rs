//! Re-ranking: score each retrieved candidate 1-10 against the case and
//! pick a winner. Three single-call strategies live here; the multi-agent
//! conversation ranker has its own module.
//!
//! Ties at the top are broken at random for the naive strategy — the
//! instructions tell the model to do that, so when it leaves the tie to
//! us the engine honors it with the case's seeded generator — and by
//! first-listed order for the expert strategies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::case::{ConditionName, DermCase};
use crate::gateway::{complete, Backend, CallCtx, ChatMessage, Conversation, GatewayError, Stage};
use crate::prompts::{PromptError, PromptLibrary, PromptName};

#[derive(Debug, thiserror::Error)]
pub enum RerankError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("case {case_id}: no candidates to rank")]
    NoCandidates { case_id: String },
    #[error("case {case_id}: reply has no score for {name:?}")]
    MissingScore { case_id: String, name: String },
    #[error("case {case_id}: score {score} for {name:?} outside 1-10")]
    OutOfRangeScore {
        case_id: String,
        name: String,
        score: i64,
    },
}

/// How candidates are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankStrategy {
    /// Query + images, minimal instructions, random tie-break.
    NaiveCot,
    /// Query + images walked through the systematic evaluation steps.
    ExpertWithContext,
    /// Images only — the query is withheld — scored on visual features.
    ExpertImageOnly,
}

impl RerankStrategy {
    fn prompt_name(self) -> PromptName {
        match self {
            RerankStrategy::NaiveCot => PromptName::RerankNaiveCot,
            RerankStrategy::ExpertWithContext => PromptName::RerankExpertContext,
            RerankStrategy::ExpertImageOnly => PromptName::RerankExpertImage,
        }
    }

    fn uses_query(self) -> bool {
        !matches!(self, RerankStrategy::ExpertImageOnly)
    }

    fn randomizes_ties(self) -> bool {
        matches!(self, RerankStrategy::NaiveCot)
    }
}

impl std::str::FromStr for RerankStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive_cot" => Ok(Self::NaiveCot),
            "expert_with_context" => Ok(Self::ExpertWithContext),
            "expert_image_only" => Ok(Self::ExpertImageOnly),
            other => Err(format!(
                "unknown rerank strategy {other:?} (expected naive_cot, expert_with_context or expert_image_only)"
            )),
        }
    }
}

impl std::fmt::Display for RerankStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NaiveCot => "naive_cot",
            Self::ExpertWithContext => "expert_with_context",
            Self::ExpertImageOnly => "expert_image_only",
        })
    }
}

/// One candidate's score, in original candidate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub name: ConditionName,
    pub score: u8,
}

/// The full result of ranking one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOutcome {
    pub case_id: String,
    pub strategy: RerankStrategy,
    /// Scores in the order candidates were presented.
    pub scores: Vec<ScoredCandidate>,
    /// Candidates from most to least probable; `ranked[0]` is the winner.
    pub ranked: Vec<ConditionName>,
    /// True when several candidates tied at the top and the winner was
    /// drawn at random.
    pub tie_break_used: bool,
}

impl RankOutcome {
    pub fn winner(&self) -> &ConditionName {
        &self.ranked[0]
    }
}

/// Score and rank `candidates` for a case under the given strategy.
pub fn rerank(
    backend: &dyn Backend,
    library: &PromptLibrary,
    strategy: RerankStrategy,
    case: &DermCase,
    candidates: &[ConditionName],
    rng: &mut impl Rng,
) -> Result<RankOutcome, RerankError> {
    if candidates.is_empty() {
        return Err(RerankError::NoCandidates {
            case_id: case.case_id.clone(),
        });
    }
    let listed = candidates
        .iter()
        .map(|c| c.normalized().to_string())
        .collect::<Vec<_>>()
        .join("\n");
    let mut vars: Vec<(&str, &str)> = vec![("candidates", listed.as_str())];
    if strategy.uses_query() {
        vars.push(("query", case.query.as_str()));
    }
    let text = library.render(strategy.prompt_name(), &vars)?;
    let conversation =
        Conversation::from_messages(vec![ChatMessage::user_with_images(text, &case.images)])
            .expect("single user message");

    let ctx = CallCtx::new(case.case_id.clone(), Stage::Rerank);
    let reply = complete(backend, &ctx, &conversation)?;
    let scores = parse_scores(&reply, candidates, &case.case_id)?;
    let (ranked, tie_break_used) = order_by_score(&scores, rng, strategy.randomizes_ties());
    Ok(RankOutcome {
        case_id: case.case_id.clone(),
        strategy,
        scores,
        ranked,
        tie_break_used,
    })
}

/// Pull a 1-10 score for every candidate out of a reply.
///
/// The requested format is one `SCORE <name>: <integer>` line per
/// candidate; those are read first (first line per candidate wins). Any
/// candidate still unscored is searched for by name in the prose, taking
/// the first integer that follows the mention on its line. A candidate
/// with no score at all, or a score outside 1-10, is an error.
pub fn parse_scores(
    reply: &str,
    candidates: &[ConditionName],
    case_id: &str,
) -> Result<Vec<ScoredCandidate>, RerankError> {
    let mut found: Vec<Option<i64>> = vec![None; candidates.len()];

    for line in reply.lines() {
        let trimmed = line.trim().trim_start_matches(['-', '*']).trim_start();
        let is_score_line = trimmed
            .get(..5)
            .is_some_and(|p| p.eq_ignore_ascii_case("score"));
        if !is_score_line {
            continue;
        }
        let Some((name_part, score_part)) = trimmed[5..].rsplit_once(':') else {
            continue;
        };
        let Ok(name) = ConditionName::new(name_part) else {
            continue;
        };
        let Some(value) = first_integer(score_part) else {
            continue;
        };
        if let Some(idx) = candidates.iter().position(|c| *c == name) {
            found[idx].get_or_insert(value);
        }
    }

    let lowered = reply.to_lowercase();
    for (idx, candidate) in candidates.iter().enumerate() {
        if found[idx].is_some() {
            continue;
        }
        for line in lowered.lines() {
            if let Some(at) = line.find(candidate.normalized()) {
                if let Some(value) = first_integer(&line[at + candidate.normalized().len()..]) {
                    found[idx] = Some(value);
                    break;
                }
            }
        }
    }

    candidates
        .iter()
        .zip(found)
        .map(|(candidate, value)| {
            let value = value.ok_or_else(|| RerankError::MissingScore {
                case_id: case_id.to_string(),
                name: candidate.normalized().to_string(),
            })?;
            if !(1..=10).contains(&value) {
                return Err(RerankError::OutOfRangeScore {
                    case_id: case_id.to_string(),
                    name: candidate.normalized().to_string(),
                    score: value,
                });
            }
            Ok(ScoredCandidate {
                name: candidate.clone(),
                score: value as u8,
            })
        })
        .collect()
}

fn first_integer(text: &str) -> Option<i64> {
    let digits: String = text
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

/// Order candidates by descending score. The winner comes from the top
/// score group — drawn with `rng` when `randomize_ties` and the group has
/// several members, first-listed otherwise. Later positions keep
/// presentation order within equal scores.
fn order_by_score(
    scores: &[ScoredCandidate],
    rng: &mut impl Rng,
    randomize_ties: bool,
) -> (Vec<ConditionName>, bool) {
    let top = scores.iter().map(|s| s.score).max().expect("non-empty");
    let maxima: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i].score == top)
        .collect();
    let (winner, tie_break_used) = if maxima.len() > 1 && randomize_ties {
        (maxima[rng.gen_range(0..maxima.len())], true)
    } else {
        (maxima[0], false)
    };

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(scores[i].score));
    let mut ranked = Vec::with_capacity(scores.len());
    ranked.push(scores[winner].name.clone());
    ranked.extend(
        order
            .into_iter()
            .filter(|&i| i != winner)
            .map(|i| scores[i].name.clone()),
    );
    (ranked, tie_break_used)
}
