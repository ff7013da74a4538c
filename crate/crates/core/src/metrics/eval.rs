//! Run-level scoring: the accuracy ratios the result tables are built
//! from, and the report that bundles them with text-overlap scores.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::case::ConditionName;
use crate::metrics::bleu::{corpus_bleu, corpus_delta_bleu, Smoothing};
use crate::metrics::judge::{Judge, JudgeError};
use crate::metrics::topk_hit;
use crate::rerank::RankOutcome;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no cases with known ground truth; the accuracy denominator is zero")]
    ZeroDenominator,
    #[error("retrieved count {retrieved} exceeds the known-ground-truth count {known}")]
    CountsInverted { retrieved: usize, known: usize },
    #[error("case {case_id} has no ground truth; top-k accuracy is undefined for it")]
    MissingGroundTruth { case_id: String },
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

/// Number of retrieved ground truths over the number of cases whose
/// ground truth is known. Unknown-ground-truth cases must be excluded
/// upstream.
pub fn retrieval_accuracy(retrieved_gt: usize, total_known_gt: usize) -> Result<f64, MetricsError> {
    if retrieved_gt > total_known_gt {
        return Err(MetricsError::CountsInverted {
            retrieved: retrieved_gt,
            known: total_known_gt,
        });
    }
    if total_known_gt == 0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(retrieved_gt as f64 / total_known_gt as f64)
}

/// Fraction of rank outcomes whose top `k` entries contain a condition
/// the judge accepts as the ground truth. Every outcome must belong to a
/// case with known ground truth.
pub fn topk_accuracy(
    outcomes: &[RankOutcome],
    ground_truths: &HashMap<String, ConditionName>,
    k: usize,
    judge: &dyn Judge,
) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::ZeroDenominator);
    }
    let mut hits = 0usize;
    for outcome in outcomes {
        let truth = ground_truths.get(&outcome.case_id).ok_or_else(|| {
            MetricsError::MissingGroundTruth {
                case_id: outcome.case_id.clone(),
            }
        })?;
        if topk_hit(&outcome.ranked, truth, k, judge)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgmentSource {
    Exact,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerCaseJudgment {
    pub case_id: String,
    /// Did the retrieved candidates contain the ground truth?
    pub judged: bool,
    /// Whether any model call was needed to decide it.
    pub judgment_source: JudgmentSource,
}

/// Everything the evaluation needs about one case. Absent artifacts
/// (failed stages) count as misses; they stay in the denominator when
/// ground truth is known, keeping denominators fixed per split.
#[derive(Debug, Clone, Copy)]
pub struct CaseEvalInput<'a> {
    pub case_id: &'a str,
    pub ground_truth: Option<&'a ConditionName>,
    pub candidates: Option<&'a [ConditionName]>,
    pub ranked: Option<&'a [ConditionName]>,
    pub aligned: Option<&'a str>,
    pub reference: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub retrieved_gt: usize,
    pub total_known_gt: usize,
    pub total_cases: usize,
    pub accuracy: f64,
    pub top1_hits: usize,
    pub top2_hits: usize,
    pub top1_accuracy: f64,
    pub top2_accuracy: f64,
    /// Corpus scores over cases that have both an aligned text and a
    /// reference response; absent when no case has both.
    pub bleu: Option<f64>,
    pub delta_bleu: Option<f64>,
    pub per_case: Vec<PerCaseJudgment>,
}

const EVAL_BLEU_ORDER: usize = 4;
const EVAL_SMOOTHING: Smoothing = Smoothing::AddOne;

/// Score a run. Accuracy denominators are the cases with known ground
/// truth; top-k counts use the same denominator, with missing rankings
/// scored as misses.
pub fn evaluate_cases(
    inputs: &[CaseEvalInput<'_>],
    judge: &dyn Judge,
) -> Result<EvalReport, MetricsError> {
    let mut retrieved_gt = 0usize;
    let mut total_known_gt = 0usize;
    let mut top1_hits = 0usize;
    let mut top2_hits = 0usize;
    let mut per_case = Vec::new();

    for input in inputs {
        let Some(truth) = input.ground_truth else {
            continue;
        };
        total_known_gt += 1;

        let mut used_llm = false;
        let mut judged = false;
        if let Some(candidates) = input.candidates {
            judged = any_hit_tracking(candidates, truth, judge, &mut used_llm)?;
        }
        if judged {
            retrieved_gt += 1;
        }

        if let Some(ranked) = input.ranked {
            let top1 = &ranked[..1.min(ranked.len())];
            if any_hit_tracking(top1, truth, judge, &mut used_llm)? {
                top1_hits += 1;
                top2_hits += 1;
            } else {
                let top2 = &ranked[..2.min(ranked.len())];
                if any_hit_tracking(top2, truth, judge, &mut used_llm)? {
                    top2_hits += 1;
                }
            }
        }

        per_case.push(PerCaseJudgment {
            case_id: input.case_id.to_string(),
            judged,
            judgment_source: if used_llm {
                JudgmentSource::Llm
            } else {
                JudgmentSource::Exact
            },
        });
    }

    let accuracy = retrieval_accuracy(retrieved_gt, total_known_gt)?;

    let scored_pairs: Vec<(&str, Vec<&str>)> = inputs
        .iter()
        .filter_map(|input| match (input.aligned, input.reference) {
            (Some(aligned), Some(reference)) => Some((aligned, vec![reference])),
            _ => None,
        })
        .collect();
    let (bleu, delta_bleu) = if scored_pairs.is_empty() {
        (None, None)
    } else {
        let weighted: Vec<(&str, Vec<(&str, f64)>)> = scored_pairs
            .iter()
            .map(|(hyp, refs)| (*hyp, vec![(refs[0], 1.0)]))
            .collect();
        (
            Some(corpus_bleu(&scored_pairs, EVAL_BLEU_ORDER, EVAL_SMOOTHING)),
            Some(corpus_delta_bleu(&weighted, EVAL_BLEU_ORDER, EVAL_SMOOTHING)),
        )
    };

    Ok(EvalReport {
        retrieved_gt,
        total_known_gt,
        total_cases: inputs.len(),
        accuracy,
        top1_hits,
        top2_hits,
        top1_accuracy: top1_hits as f64 / total_known_gt as f64,
        top2_accuracy: top2_hits as f64 / total_known_gt as f64,
        bleu,
        delta_bleu,
        per_case,
    })
}

/// `any_hit` that also notes whether a model call decided anything.
fn any_hit_tracking(
    candidates: &[ConditionName],
    truth: &ConditionName,
    judge: &dyn Judge,
    used_llm: &mut bool,
) -> Result<bool, JudgeError> {
    for candidate in candidates {
        let verdict = judge.similar(candidate, truth)?;
        if verdict.rule_applied > 0 {
            *used_llm = true;
        }
        if verdict.similar {
            return Ok(true);
        }
    }
    Ok(false)
}

impl EvalReport {
    /// The plain-text table: one metric per row, counts alongside.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut row = |label: &str, value: String| {
            out.push_str(&format!("{label:<24}{value}\n"));
        };
        row("Cases", format!("{}", self.total_cases));
        row("Known ground truth", format!("{}", self.total_known_gt));
        row(
            "Retrieval accuracy",
            format!(
                "{:.6} ({}/{})",
                self.accuracy, self.retrieved_gt, self.total_known_gt
            ),
        );
        row(
            "Top-1 accuracy",
            format!(
                "{:.6} ({}/{})",
                self.top1_accuracy, self.top1_hits, self.total_known_gt
            ),
        );
        row(
            "Top-2 accuracy",
            format!(
                "{:.6} ({}/{})",
                self.top2_accuracy, self.top2_hits, self.total_known_gt
            ),
        );
        let overlap = |score: Option<f64>| match score {
            Some(value) => format!("{value:.6}"),
            None => "n/a (no references)".to_string(),
        };
        row("BLEU", overlap(self.bleu));
        row("DeltaBLEU", overlap(self.delta_bleu));
        out
    }
}
