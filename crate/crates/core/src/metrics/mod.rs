//! Caption similarity metrics (BLEU-1..4, ROUGE-L, exact-match METEOR)
//! and transfer statistics between two captioners.

mod bleu;
mod meteor;
mod rouge;
mod transfer;

pub use bleu::bleu_n;
pub use meteor::meteor_exact;
pub use rouge::rouge_l;
pub use transfer::{transfer_stats, TransferStats};

use serde::{Deserialize, Serialize};

/// Tokenizes caption text the same way the captioner does.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(String::from)
        .collect()
}

/// One bundle of scores between a candidate and a reference set.
/// All scores live in `[0, 1]`; identity pairs score exactly 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub meteor: f64,
}

impl MetricReport {
    /// Scores `candidate` against `references` with every metric.
    pub fn compute(candidate: &[String], references: &[Vec<String>]) -> MetricReport {
        MetricReport {
            bleu: [
                bleu_n(candidate, references, 1),
                bleu_n(candidate, references, 2),
                bleu_n(candidate, references, 3),
                bleu_n(candidate, references, 4),
            ],
            rouge_l: rouge_l(candidate, references),
            meteor: meteor_exact(candidate, references),
        }
    }

    pub fn zeros() -> MetricReport {
        MetricReport {
            bleu: [0.0; 4],
            rouge_l: 0.0,
            meteor: 0.0,
        }
    }

    /// Sentence-averaged mean of several reports.
    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        if reports.is_empty() {
            return MetricReport::zeros();
        }
        let n = reports.len() as f64;
        let mut out = MetricReport::zeros();
        for r in reports {
            for i in 0..4 {
                out.bleu[i] += r.bleu[i] / n;
            }
            out.rouge_l += r.rouge_l / n;
            out.meteor += r.meteor / n;
        }
        out
    }

    pub fn all_in_unit_range(&self) -> bool {
        self.bleu
            .iter()
            .chain([&self.rouge_l, &self.meteor])
            .all(|&v| (0.0..=1.0).contains(&v))
    }

    /// Flat (metric name, value) pairs for table export.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("BLEU-1", self.bleu[0]),
            ("BLEU-2", self.bleu[1]),
            ("BLEU-3", self.bleu[2]),
            ("BLEU-4", self.bleu[3]),
            ("ROUGE", self.rouge_l),
            ("METEOR", self.meteor),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn identity_pair_scores_one_everywhere() {
        let c = toks("a red circle above a blue square");
        let r = MetricReport::compute(&c, &[c.clone()]);
        assert_eq!(r.bleu, [1.0; 4]);
        assert_eq!(r.rouge_l, 1.0);
        assert_eq!(r.meteor, 1.0);
    }

    #[test]
    fn scores_stay_in_unit_range_on_junk() {
        let cases = [
            ("a", "b"),
            ("a a a a", "a"),
            ("x y z", "z y x"),
            ("a b", "a b c d e f g"),
        ];
        for (c, r) in cases {
            let rep = MetricReport::compute(&toks(c), &[toks(r)]);
            assert!(rep.all_in_unit_range(), "{c} vs {r}: {rep:?}");
        }
    }

    #[test]
    fn metrics_are_invariant_under_relabeling() {
        // Renaming words consistently in both sentences changes nothing.
        let c1 = toks("a b a c");
        let r1 = toks("a c b");
        let c2 = toks("x y x z");
        let r2 = toks("x z y");
        assert_eq!(
            MetricReport::compute(&c1, &[r1]),
            MetricReport::compute(&c2, &[r2])
        );
    }

    #[test]
    fn mean_averages_per_metric() {
        let a = MetricReport {
            bleu: [1.0, 0.0, 0.0, 0.0],
            rouge_l: 1.0,
            meteor: 0.0,
        };
        let b = MetricReport {
            bleu: [0.0, 1.0, 0.0, 0.0],
            rouge_l: 0.0,
            meteor: 1.0,
        };
        let m = MetricReport::mean(&[a, b]);
        assert_eq!(m.bleu[0], 0.5);
        assert_eq!(m.bleu[1], 0.5);
        assert_eq!(m.rouge_l, 0.5);
        assert_eq!(m.meteor, 0.5);
    }
}
