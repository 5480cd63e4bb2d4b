//! Exact-match METEOR: unigram alignment maximizing matches then
//! minimizing chunks, F = 10PR/(R+9P), fragmentation penalty
//! 0.5 * (chunks/matches)^3.
//!
//! Exact token-sequence equality with a reference short-circuits to a
//! score of 1 (identity pairs must score exactly 1).

use std::collections::HashMap;

const MAX_REF_LEN: usize = 22;

fn word_count(tokens: &[String]) -> HashMap<&String, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t).or_insert(0usize) += 1;
    }
    m
}

/// Number of matches in a maximum exact-match alignment: the per-word
/// minimum of candidate and reference counts, summed.
fn max_matches(candidate: &[String], reference: &[String]) -> usize {
    let c = word_count(candidate);
    let r = word_count(reference);
    c.iter()
        .map(|(w, &cc)| cc.min(r.get(*w).copied().unwrap_or(0)))
        .sum()
}

const NONE_CONT: u8 = u8::MAX;

/// Minimum chunk count over all maximum alignments.
///
/// DP over candidate positions; a state is (used-reference mask,
/// continuation index, matches so far) mapping to the minimum chunks.
/// A match at reference position `rj` extends the current chunk iff
/// the previous candidate position was matched to `rj - 1`.
pub(crate) fn min_chunks(candidate: &[String], reference: &[String], m: usize) -> usize {
    assert!(
        reference.len() <= MAX_REF_LEN,
        "reference too long for exact chunk minimization"
    );
    let mut states: HashMap<(u32, u8, u8), u8> = HashMap::new();
    states.insert((0, NONE_CONT, 0), 0);
    for cw in candidate {
        let mut next: HashMap<(u32, u8, u8), u8> = HashMap::new();
        let mut relax = |key: (u32, u8, u8), chunks: u8| {
            let slot = next.entry(key).or_insert(u8::MAX);
            if chunks < *slot {
                *slot = chunks;
            }
        };
        for (&(mask, cont, matches), &chunks) in &states {
            // Skip this candidate position.
            relax((mask, NONE_CONT, matches), chunks);
            // Or match it to any free reference occurrence of the word.
            for (rj, rw) in reference.iter().enumerate() {
                if rw != cw || mask & (1 << rj) != 0 {
                    continue;
                }
                let continues = cont != NONE_CONT && rj as u8 == cont;
                let new_chunks = chunks + if continues { 0 } else { 1 };
                relax((mask | (1 << rj), rj as u8 + 1, matches + 1), new_chunks);
            }
        }
        states = next;
    }
    states
        .iter()
        .filter(|(&(_, _, matches), _)| matches as usize == m)
        .map(|(_, &chunks)| chunks as usize)
        .min()
        .expect("a maximum alignment always exists")
}

fn score_against(candidate: &[String], reference: &[String]) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    let m = max_matches(candidate, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let chunks = min_chunks(candidate, reference, m);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f * (1.0 - penalty)
}

/// Exact-match METEOR in `[0, 1]`; maximum over references; zero
/// matches score 0; exact equality with a reference scores 1.
pub fn meteor_exact(candidate: &[String], references: &[Vec<String>]) -> f64 {
    assert!(!references.is_empty(), "need at least one reference");
    if candidate.is_empty() {
        return 0.0;
    }
    if references.iter().any(|r| r.as_slice() == candidate) {
        return 1.0;
    }
    references
        .iter()
        .map(|r| score_against(candidate, r))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn identical_pair_scores_exactly_one() {
        let c = toks("a red circle");
        assert_eq!(meteor_exact(&c, &[c.clone()]), 1.0);
    }

    #[test]
    fn no_common_words_scores_zero() {
        assert_eq!(meteor_exact(&toks("a b"), &[toks("x y")]), 0.0);
    }

    #[test]
    fn single_chunk_formula_on_a_strict_subset_pair() {
        // "a b" vs "a b c": m=2 in one chunk; P=1, R=2/3;
        // F = 10*(2/3)/((2/3)+9) = 20/29; penalty = 0.5*(1/2)^3.
        let f = 20.0 / 29.0;
        let expected = f * (1.0 - 0.5 * 0.125);
        let got = meteor_exact(&toks("a b"), &[toks("a b c")]);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn reversed_order_gets_half_penalty() {
        // All words match but every match is its own chunk:
        // penalty = 0.5, score = F / 2 = 0.5 since P = R = 1.
        let c = toks("d c b a");
        let r = toks("a b c d");
        let got = meteor_exact(&c, &[r]);
        assert!((got - 0.5).abs() < 1e-12, "{got}");
    }

    #[test]
    fn chunk_minimization_matches_bruteforce() {
        // Brute force over all maximum alignments by recursive
        // assignment of candidate positions to reference positions.
        fn brute(cand: &[String], refr: &[String], m: usize) -> usize {
            fn rec(
                ci: usize,
                cand: &[String],
                refr: &[String],
                used: &mut Vec<bool>,
                assign: &mut Vec<Option<usize>>,
                matches: usize,
                m: usize,
                best: &mut usize,
            ) {
                if ci == cand.len() {
                    if matches == m {
                        let mut chunks = 0;
                        let mut prev: Option<usize> = None;
                        for a in assign.iter() {
                            match (prev, a) {
                                (Some(p), Some(r)) if *r == p + 1 => {}
                                (_, Some(_)) => chunks += 1,
                                _ => {}
                            }
                            prev = *a;
                        }
                        *best = (*best).min(chunks);
                    }
                    return;
                }
                assign.push(None);
                rec(ci + 1, cand, refr, used, assign, matches, m, best);
                assign.pop();
                for rj in 0..refr.len() {
                    if !used[rj] && refr[rj] == cand[ci] {
                        used[rj] = true;
                        assign.push(Some(rj));
                        rec(ci + 1, cand, refr, used, assign, matches + 1, m, best);
                        assign.pop();
                        used[rj] = false;
                    }
                }
            }
            let mut best = usize::MAX;
            rec(
                0,
                cand,
                refr,
                &mut vec![false; refr.len()],
                &mut Vec::new(),
                0,
                m,
                &mut best,
            );
            best
        }

        let words = ["a", "b", "c"];
        let mut seqs: Vec<Vec<String>> = Vec::new();
        for len in 1..=4usize {
            for code in 0..words.len().pow(len as u32) {
                let mut s = Vec::new();
                let mut c = code;
                for _ in 0..len {
                    s.push(words[c % words.len()].to_string());
                    c /= words.len();
                }
                seqs.push(s);
            }
        }
        for a in seqs.iter().step_by(3) {
            for b in seqs.iter().step_by(5) {
                let m = max_matches(a, b);
                if m == 0 {
                    continue;
                }
                assert_eq!(min_chunks(a, b, m), brute(a, b, m), "{a:?} vs {b:?}");
            }
        }
    }
}
