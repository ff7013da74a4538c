//! Evaluation metrics: accuracy ratios over cases with known ground
//! truth, text overlap scores for generated responses, and the
//! similarity judge that decides when a prediction counts as a hit.

pub mod bleu;
pub mod eval;
pub mod judge;

pub use bleu::{bleu, corpus_bleu, corpus_delta_bleu, delta_bleu, tokenize, Smoothing};
pub use eval::{
    evaluate_cases, retrieval_accuracy, topk_accuracy, CaseEvalInput, EvalReport, JudgmentSource,
    MetricsError, PerCaseJudgment,
};
pub use judge::{ExactJudge, Judge, JudgeError, LlmJudge, SimilarityVerdict};

use crate::case::ConditionName;

/// Fraction of hits among cases whose ground truth is known. Cases without
/// a ground-truth label are excluded from the denominator entirely; an
/// empty denominator yields 0.
pub fn hit_ratio(hits: usize, known: usize) -> f64 {
    if known == 0 {
        0.0
    } else {
        hits as f64 / known as f64
    }
}

/// Does any candidate match the truth according to the judge? Used for
/// retrieval accuracy, where order does not matter.
pub fn any_hit(
    candidates: &[ConditionName],
    truth: &ConditionName,
    judge: &dyn Judge,
) -> Result<bool, JudgeError> {
    for candidate in candidates {
        if judge.similar(candidate, truth)?.similar {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Does the truth appear within the first `k` ranked candidates?
pub fn topk_hit(
    ranked: &[ConditionName],
    truth: &ConditionName,
    k: usize,
    judge: &dyn Judge,
) -> Result<bool, JudgeError> {
    any_hit(&ranked[..k.min(ranked.len())], truth, judge)
}
