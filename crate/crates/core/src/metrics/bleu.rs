//! Sentence-level BLEU with modified n-gram precision, per-n-gram max
//! clip counts across references, no smoothing, and the standard
//! brevity penalty.

use std::collections::HashMap;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_default() += 1;
        }
    }
    counts
}

fn modified_precision(candidate: &[String], references: &[Vec<String>], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let total: usize = cand.values().sum();
    let mut clipped = 0usize;
    for (gram, &count) in &cand {
        let max_ref = references
            .iter()
            .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
            .max()
            .unwrap_or(0);
        clipped += count.min(max_ref);
    }
    (clipped, total)
}

/// Effective reference length: closest to the candidate length, ties
/// to the shorter reference.
fn effective_ref_len(candidate_len: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&rl| {
            (
                (rl as isize - candidate_len as isize).abs(),
                rl,
            )
        })
        .unwrap_or(0)
}

/// BLEU-n in `[0, 1]`: geometric mean of modified precisions 1..=n
/// times the brevity penalty. Any zero precision gives 0 (no
/// smoothing); an empty candidate scores 0.
pub fn bleu_n(candidate: &[String], references: &[Vec<String>], n: usize) -> f64 {
    assert!((1..=4).contains(&n), "bleu order must be 1..=4");
    assert!(!references.is_empty(), "need at least one reference");
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (clipped, total) = modified_precision(candidate, references, k);
        if clipped == 0 || total == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = candidate.len();
    let r = effective_ref_len(c, references);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    (bp * (log_sum / n as f64).exp()).min(1.0)
}
