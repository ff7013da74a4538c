//! BLEU and its weighted-reference variant for scoring generated patient
//! responses against doctor-written references.
//!
//! Conventions, fixed so that scores are comparable across runs:
//! - tokenization lowercases and splits punctuation into its own tokens;
//! - n-gram orders the hypothesis is too short to produce are dropped from
//!   the geometric mean rather than zeroing it;
//! - the brevity penalty compares against the *shortest* reference, which
//!   keeps "add a perfect reference" monotone: it can only help;
//! - optional add-one smoothing applies to orders >= 2 only, so unigram
//!   precision stays honest — a hypothesis sharing no words with any
//!   reference scores 0 regardless of smoothing.

use std::collections::HashMap;

/// Numerator smoothing for higher-order precisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    None,
    /// `(matches + 1) / (total + 1)` for orders >= 2.
    AddOne,
}

/// Lowercase tokens; punctuation characters become standalone tokens.
///
/// "The cat, sat." -> ["the", "cat", ",", "sat", "."]
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Per-order clipped match mass and hypothesis n-gram count. Matches are
/// fractional because references carry weights in the delta variant.
#[derive(Debug, Clone, Copy, Default)]
struct OrderStats {
    matches: f64,
    total: usize,
}

/// Match statistics for one hypothesis/reference-set pair, combinable
/// across a corpus before the final score is taken.
#[derive(Debug, Clone)]
pub struct SegmentStats {
    orders: Vec<OrderStats>,
    hyp_len: usize,
    ref_len: usize,
}

impl SegmentStats {
    fn add(&mut self, other: &SegmentStats) {
        for (a, b) in self.orders.iter_mut().zip(&other.orders) {
            a.matches += b.matches;
            a.total += b.total;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n && n > 0 {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Collect per-order statistics for one segment. Each hypothesis n-gram
/// contributes `max` over the references that contain it of
/// `weight * min(hyp_count, ref_count)`; n-grams absent from every
/// reference contribute nothing. With a single reference of weight 1.0
/// this is exactly the ordinary clipped count.
fn segment_stats(hypothesis: &str, references: &[(&str, f64)], max_n: usize) -> SegmentStats {
    let hyp_tokens = tokenize(hypothesis);
    let ref_tokens: Vec<(Vec<String>, f64)> = references
        .iter()
        .map(|(r, w)| (tokenize(r), *w))
        .collect();
    let ref_len = ref_tokens
        .iter()
        .map(|(t, _)| t.len())
        .min()
        .unwrap_or(0);

    let mut orders = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let hyp_counts = ngram_counts(&hyp_tokens, n);
        let ref_counts: Vec<(HashMap<&[String], usize>, f64)> = ref_tokens
            .iter()
            .map(|(t, w)| (ngram_counts(t, n), *w))
            .collect();
        let mut matches = 0.0;
        let mut total = 0;
        for (gram, &hyp_count) in &hyp_counts {
            total += hyp_count;
            let best = ref_counts
                .iter()
                .filter_map(|(counts, w)| {
                    counts
                        .get(gram)
                        .map(|&rc| w * hyp_count.min(rc) as f64)
                })
                .fold(None, |acc: Option<f64>, v| {
                    Some(acc.map_or(v, |a| a.max(v)))
                });
            matches += best.unwrap_or(0.0);
        }
        orders.push(OrderStats { matches, total });
    }
    SegmentStats {
        orders,
        hyp_len: hyp_tokens.len(),
        ref_len,
    }
}

/// Fold statistics into the final score: geometric mean of included-order
/// precisions times the brevity penalty. Negative weighted match mass is
/// floored at zero per order before use.
fn combine(stats: &SegmentStats, smoothing: Smoothing) -> f64 {
    if stats.hyp_len == 0 || stats.ref_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut included = 0usize;
    for (idx, order) in stats.orders.iter().enumerate() {
        let n = idx + 1;
        if order.total == 0 {
            continue;
        }
        let floored = order.matches.max(0.0);
        let (num, den) = match smoothing {
            Smoothing::AddOne if n >= 2 => (floored + 1.0, order.total as f64 + 1.0),
            _ => (floored, order.total as f64),
        };
        if num <= 0.0 {
            return 0.0;
        }
        log_sum += (num / den).ln();
        included += 1;
    }
    if included == 0 {
        return 0.0;
    }
    let c = stats.hyp_len as f64;
    let r = stats.ref_len as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / included as f64).exp()
}

/// Sentence BLEU against one or more equally-trusted references.
pub fn bleu(hypothesis: &str, references: &[&str], max_n: usize, smoothing: Smoothing) -> f64 {
    let weighted: Vec<(&str, f64)> = references.iter().map(|r| (*r, 1.0)).collect();
    combine(&segment_stats(hypothesis, &weighted, max_n), smoothing)
}

/// BLEU with per-reference quality weights in [-1, 1]: high-weight
/// references pull matching n-grams up, negative-weight references drag
/// them down (floored at zero per order). With a single reference of
/// weight 1.0 this is identical to [`bleu`].
pub fn delta_bleu(
    hypothesis: &str,
    references: &[(&str, f64)],
    max_n: usize,
    smoothing: Smoothing,
) -> f64 {
    combine(&segment_stats(hypothesis, references, max_n), smoothing)
}

/// Corpus BLEU: statistics pool across segments before the score is taken,
/// so long and short segments weigh in by their n-gram mass.
pub fn corpus_bleu(
    pairs: &[(&str, Vec<&str>)],
    max_n: usize,
    smoothing: Smoothing,
) -> f64 {
    let weighted: Vec<(&str, Vec<(&str, f64)>)> = pairs
        .iter()
        .map(|(h, refs)| (*h, refs.iter().map(|r| (*r, 1.0)).collect()))
        .collect();
    corpus_delta_bleu(&weighted, max_n, smoothing)
}

/// Corpus-pooled [`delta_bleu`]; the objective the prompt optimizer climbs.
pub fn corpus_delta_bleu(
    pairs: &[(&str, Vec<(&str, f64)>)],
    max_n: usize,
    smoothing: Smoothing,
) -> f64 {
    let mut acc: Option<SegmentStats> = None;
    for (hypothesis, references) in pairs {
        let stats = segment_stats(hypothesis, references, max_n);
        match &mut acc {
            None => acc = Some(stats),
            Some(a) => a.add(&stats),
        }
    }
    match acc {
        Some(stats) => combine(&stats, smoothing),
        None => 0.0,
    }
}
