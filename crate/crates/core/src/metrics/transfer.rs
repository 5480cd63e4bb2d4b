//! Transfer statistics between two captioners.

use super::MetricReport;
use crate::captioner::{infer_greedy, Caption, CaptionerModel};
use crate::error::{Error, Result};
use crate::Image;
use serde::{Deserialize, Serialize};

/// The three transfer measurements, each sentence-averaged over the
/// image set:
///
/// - `ori`: captions of the original vs the adversarial images, both
///   under model B (low = the perturbation transfers);
/// - `tgt`: the attack's target captions vs model B's captions of the
///   adversarial images (high = the targeted meaning transfers);
/// - `mis`: captions of the same benign images under models A and B
///   (the intrinsic model mismatch).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TransferStats {
    pub ori: MetricReport,
    pub tgt: MetricReport,
    pub mis: MetricReport,
}

fn words_of(model: &CaptionerModel, caption: &Caption) -> Vec<String> {
    model.vocab.decode_words(caption)
}

/// Computes ori/tgt/mis for adversarial examples crafted on model A
/// (with the given target captions) and transferred to model B.
pub fn transfer_stats(
    model_a: &CaptionerModel,
    model_b: &CaptionerModel,
    originals: &[Image],
    adversarials: &[Image],
    targets: &[Caption],
) -> Result<TransferStats> {
    if originals.is_empty() {
        return Err(Error::EmptyInput("transfer image set".into()));
    }
    if originals.len() != adversarials.len() || originals.len() != targets.len() {
        return Err(Error::InvalidConfig(format!(
            "mismatched transfer set sizes: {} originals, {} adversarials, {} targets",
            originals.len(),
            adversarials.len(),
            targets.len()
        )));
    }
    let max_len_a = model_a.dims.max_len;
    let max_len_b = model_b.dims.max_len;
    let mut ori = Vec::with_capacity(originals.len());
    let mut tgt = Vec::with_capacity(originals.len());
    let mut mis = Vec::with_capacity(originals.len());
    for ((orig, adv), target) in originals.iter().zip(adversarials).zip(targets) {
        let b_orig = words_of(model_b, &infer_greedy(model_b, orig, max_len_b)?);
        let b_adv = words_of(model_b, &infer_greedy(model_b, adv, max_len_b)?);
        let a_orig = words_of(model_a, &infer_greedy(model_a, orig, max_len_a)?);
        let target_words = words_of(model_a, target);
        ori.push(MetricReport::compute(&b_adv, &[b_orig.clone()]));
        tgt.push(MetricReport::compute(&b_adv, &[target_words]));
        mis.push(MetricReport::compute(&b_orig, &[a_orig]));
    }
    Ok(TransferStats {
        ori: MetricReport::mean(&ori),
        tgt: MetricReport::mean(&tgt),
        mis: MetricReport::mean(&mis),
    })
}
