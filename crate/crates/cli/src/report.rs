//! Aggregate tables mirroring the experiment report layouts: an
//! overall summary (success rate + mean successful distortion),
//! per-c failure statistics for caption and keyword modes, and the
//! transfer grid.

use advcap::attack::{count_keywords, AttackResult, KeywordSet};
use advcap::captioner::{infer_beam, Caption, CaptionerModel};
use advcap::metrics::{MetricReport, TransferStats};
use anyhow::Result;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Top-level summary row: success rate and mean distortion over the
/// successful examples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub n: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_l2_success: Option<f64>,
}

impl SummaryRow {
    pub fn from_results(experiment: &str, results: &[AttackResult]) -> SummaryRow {
        let successes: Vec<&AttackResult> = results.iter().filter(|r| r.success).collect();
        let mean = if successes.is_empty() {
            None
        } else {
            Some(successes.iter().map(|r| r.l2).sum::<f64>() / successes.len() as f64)
        };
        SummaryRow {
            experiment: experiment.to_string(),
            n: results.len(),
            successes: successes.len(),
            success_rate: if results.is_empty() {
                0.0
            } else {
                successes.len() as f64 / results.len() as f64
            },
            mean_l2_success: mean,
        }
    }
}

/// Failure statistics for caption-mode attacks at one c value:
/// distortion plus similarity of the failed examples' captions to the
/// target (references are the adversarial image's top-5 beam captions).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaptionFailureRow {
    pub c: f64,
    pub n_failed: usize,
    pub mean_l2: f64,
    pub scores: MetricReport,
}

/// Failure statistics for keyword-mode attacks at one c value:
/// partial-success accounting over the failed examples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KeywordFailureRow {
    pub c: f64,
    pub n_failed: usize,
    pub mean_l2: f64,
    /// Fraction of failed examples whose caption contains >= 1 keyword.
    pub frac_at_least_one: f64,
    /// Fraction containing exactly 2 keywords.
    pub frac_exactly_two: f64,
    /// Mean number of distinct keywords present (M').
    pub mean_m_prime: f64,
}

/// One cell of the transfer grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferCell {
    pub c: f64,
    pub epsilon: f64,
    pub n: usize,
    pub mean_l2: f64,
    pub stats: TransferStats,
}

fn beam_top5_words(model: &CaptionerModel, image: &advcap::Image) -> Result<Vec<Vec<String>>> {
    let hyps = infer_beam(model, image, 5, model.dims.max_len)?;
    Ok(hyps
        .iter()
        .map(|h| model.vocab.decode_words(&h.caption))
        .collect())
}

/// Builds the caption-mode failure table over all failed results,
/// bucketed by the c of each run.
pub fn caption_failure_table(
    model: &CaptionerModel,
    failed: &[(&AttackResult, &Caption)],
) -> Result<Vec<CaptionFailureRow>> {
    let mut buckets: std::collections::BTreeMap<u64, (f64, Vec<f64>, Vec<MetricReport>)> =
        Default::default();
    for (result, target) in failed {
        let target_words = model.vocab.decode_words(target);
        for run in &result.runs {
            let Some(image) = &run.final_image else { continue };
            let refs = beam_top5_words(model, image)?;
            let score = MetricReport::compute(&target_words, &refs);
            let entry = buckets
                .entry(run.c.to_bits())
                .or_insert((run.c, Vec::new(), Vec::new()));
            entry.1.push(run.final_l2);
            entry.2.push(score);
        }
    }
    Ok(buckets
        .into_values()
        .map(|(c, l2s, scores)| CaptionFailureRow {
            c,
            n_failed: l2s.len(),
            mean_l2: l2s.iter().sum::<f64>() / l2s.len() as f64,
            scores: MetricReport::mean(&scores),
        })
        .collect())
}

/// Builds the keyword-mode partial-success table over failed results.
pub fn keyword_failure_table(
    model: &CaptionerModel,
    failed: &[(&AttackResult, &KeywordSet)],
) -> Result<Vec<KeywordFailureRow>> {
    let mut buckets: std::collections::BTreeMap<u64, (f64, Vec<f64>, Vec<usize>)> =
        Default::default();
    for (result, keywords) in failed {
        for run in &result.runs {
            let Some(image) = &run.final_image else { continue };
            let caption = advcap::captioner::infer_greedy(model, image, model.dims.max_len)?;
            let m_prime = count_keywords(&caption, keywords);
            let entry = buckets
                .entry(run.c.to_bits())
                .or_insert((run.c, Vec::new(), Vec::new()));
            entry.1.push(run.final_l2);
            entry.2.push(m_prime);
        }
    }
    Ok(buckets
        .into_values()
        .map(|(c, l2s, mprimes)| {
            let n = mprimes.len() as f64;
            KeywordFailureRow {
                c,
                n_failed: mprimes.len(),
                mean_l2: l2s.iter().sum::<f64>() / l2s.len() as f64,
                frac_at_least_one: mprimes.iter().filter(|&&m| m >= 1).count() as f64 / n,
                frac_exactly_two: mprimes.iter().filter(|&&m| m == 2).count() as f64 / n,
                mean_m_prime: mprimes.iter().sum::<usize>() as f64 / n,
            }
        })
        .collect())
}

/// Writes the (image id, metric, value) CSV table.
pub fn write_scores_csv<P: AsRef<Path>>(
    path: P,
    rows: &[(String, String, f64)],
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "image_id,metric,value")?;
    for (id, metric, value) in rows {
        writeln!(f, "{id},{metric},{value}")?;
    }
    Ok(())
}
