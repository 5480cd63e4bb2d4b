//! ROUGE-L: longest-common-subsequence F-measure with beta = 1.2,
//! maximum over references.

const BETA: f64 = 1.2;

/// LCS length by dynamic programming.
pub(crate) fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for av in a {
        for (j, bv) in b.iter().enumerate() {
            cur[j + 1] = if av == bv {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn f_measure(lcs: usize, cand_len: usize, ref_len: usize) -> f64 {
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand_len as f64;
    let r = lcs as f64 / ref_len as f64;
    let b2 = BETA * BETA;
    (1.0 + b2) * r * p / (r + b2 * p)
}

/// ROUGE-L in `[0, 1]`; empty candidate or reference scores 0; with
/// multiple references the maximum F-score is reported.
pub fn rouge_l(candidate: &[String], references: &[Vec<String>]) -> f64 {
    assert!(!references.is_empty(), "need at least one reference");
    if candidate.is_empty() {
        return 0.0;
    }
    references
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| f_measure(lcs_len(candidate, r), candidate.len(), r.len()))
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
    fn identical_pair_scores_one() {
        let c = toks("a red circle");
        assert_eq!(rouge_l(&c, &[c.clone()]), 1.0);
    }

    #[test]
    fn disjoint_vocabularies_score_zero() {
        assert_eq!(rouge_l(&toks("a b c"), &[toks("x y z")]), 0.0);
    }

    #[test]
    fn hand_computed_f_measure() {
        // "a c" vs "a b c": LCS = 2, P = 1, R = 2/3.
        let p: f64 = 1.0;
        let r = 2.0 / 3.0;
        let b2 = 1.2f64 * 1.2;
        let expected = (1.0 + b2) * r * p / (r + b2 * p);
        let got = rouge_l(&toks("a c"), &[toks("a b c")]);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn multiple_references_take_the_max() {
        let c = toks("a b");
        let far = toks("x y");
        let near = toks("a b");
        assert_eq!(rouge_l(&c, &[far, near]), 1.0);
    }

    #[test]
    fn dp_matches_bruteforce_on_short_sentences() {
        // Brute force: all candidate subsequences checked against the
        // reference, longest kept.
        fn brute_lcs(a: &[String], b: &[String]) -> usize {
            let mut best = 0;
            for mask in 0u32..(1 << a.len()) {
                let sub: Vec<&String> = (0..a.len())
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| &a[i])
                    .collect();
                let mut it = b.iter();
                if sub.iter().all(|w| it.any(|bw| bw == *w)) {
                    best = best.max(sub.len());
                }
            }
            best
        }
        let words = ["a", "b", "c", "d"];
        let mut seqs = Vec::new();
        for len in 0..=4usize {
            let count = words.len().pow(len as u32);
            for code in 0..count {
                let mut s = Vec::new();
                let mut c = code;
                for _ in 0..len {
                    s.push(words[c % words.len()].to_string());
                    c /= words.len();
                }
                seqs.push(s);
            }
        }
        for a in &seqs {
            for b in seqs.iter().step_by(7) {
                assert_eq!(lcs_len(a, b), brute_lcs(a, b), "{a:?} vs {b:?}");
            }
        }
    }
}
