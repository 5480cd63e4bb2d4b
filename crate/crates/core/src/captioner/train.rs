//! Teacher-forced cross-entropy training with per-sample ADAM updates.

use super::infer::infer_greedy;
use super::model::{CaptionerModel, Dims, Variant};
use super::{Caption, Vocabulary};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::adam::{adam_step, AdamState};
use crate::{Image, Real, Tape};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Checkpoints below this held-out exact-match accuracy are not
/// attack-ready.
pub const TRAIN_GATE_ACCURACY: f64 = 0.90;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: Real,
    /// Per-epoch multiplicative decay applied after `lr_decay_start`.
    pub lr_decay: Real,
    pub lr_decay_start: usize,
    pub seed: u64,
    /// Stop once held-out exact-match accuracy reaches this value.
    pub early_stop_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 45,
            lr: 3e-3,
            lr_decay: 0.90,
            lr_decay_start: 8,
            seed: 0,
            early_stop_accuracy: Some(0.93),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: Real,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub final_val_accuracy: f64,
    pub gate_passed: bool,
}

/// Fraction of images whose greedy caption matches the reference
/// exactly (token-id sequence equality including END).
pub fn exact_match_accuracy(model: &CaptionerModel, set: &[(Image, Caption)]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyInput("evaluation set".into()));
    }
    let mut hits = 0usize;
    for (image, reference) in set {
        let inferred = infer_greedy(model, image, model.dims.max_len)?;
        if inferred.ids() == reference.ids() {
            hits += 1;
        }
    }
    Ok(hits as f64 / set.len() as f64)
}

/// One teacher-forced gradient step; returns the per-token mean
/// negative log-likelihood.
fn train_step(
    model: &mut CaptionerModel,
    names: &[&'static str],
    state: &mut AdamState<Real>,
    image: &Image,
    caption: &Caption,
    lr: Real,
) -> Result<Real> {
    let mut tape = Tape::new();
    let tw = model.weights_on_tape(&mut tape, true);
    let img = tape.constant(image.clone());
    let log_prob = model.caption_log_prob_on_tape(&mut tape, &tw, img, caption.ids())?;
    let steps = (caption.len() - 1) as Real;
    let loss = tape.mul_scalar(log_prob, -1.0 / steps);
    let loss_val = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let grad_list: Vec<crate::Tensor> = names
        .iter()
        .map(|n| grads.get_or_zero(model.tape_param(&tw, n).unwrap()))
        .collect();
    let mut params = model.params_mut_ordered();
    let mut refs: Vec<&mut crate::Tensor> = params.iter_mut().map(|(_, t)| &mut **t).collect();
    adam_step(&mut refs, &grad_list, state, lr);
    Ok(loss_val)
}

/// Trains a fresh model of the given variant.
///
/// Aborts with [`Error::TrainingDiverged`] if the loss stops being
/// finite. The returned log records per-epoch mean loss and held-out
/// exact-match accuracy; `gate_passed` reflects the final accuracy
/// against [`TRAIN_GATE_ACCURACY`].
pub fn train(
    variant: Variant,
    vocab: Vocabulary,
    dims: Dims,
    train_set: &[(Image, Caption)],
    val_set: &[(Image, Caption)],
    cfg: &TrainConfig,
) -> Result<(CaptionerModel, TrainLog)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyInput("training or validation set".into()));
    }
    let mut model = CaptionerModel::new_random(variant, vocab, dims, cfg.seed);
    let names = model.param_names();
    let shapes: Vec<Vec<usize>> = names
        .iter()
        .map(|n| model.param(n).unwrap().shape().to_vec())
        .collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut adam = AdamState::new(&shape_refs);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, "train-order");
    let mut log = TrainLog {
        epochs: Vec::new(),
        final_val_accuracy: 0.0,
        gate_passed: false,
    };

    let mut lr = cfg.lr;
    for epoch in 0..cfg.epochs {
        if epoch > cfg.lr_decay_start {
            lr *= cfg.lr_decay;
        }
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (i, &idx) in order.iter().enumerate() {
            let (image, caption) = &train_set[idx];
            let loss = train_step(&mut model, &names, &mut adam, image, caption, lr)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, sample: i });
            }
            loss_sum += loss;
        }
        let mean_loss = loss_sum / train_set.len() as Real;
        let val_accuracy = exact_match_accuracy(&model, val_set)?;
        log.epochs.push(EpochStats {
            epoch,
            mean_loss,
            val_accuracy,
        });
        if cfg
            .early_stop_accuracy
            .map_or(false, |gate| val_accuracy >= gate)
        {
            break;
        }
    }
    log.final_val_accuracy = log.epochs.last().map_or(0.0, |e| e.val_accuracy);
    log.gate_passed = log.final_val_accuracy >= TRAIN_GATE_ACCURACY;
    Ok((model, log))
}

impl CaptionerModel {
    /// Mutable references to all parameters in
    /// [`CaptionerModel::param_names`] order.
    pub fn params_mut_ordered(&mut self) -> Vec<(&'static str, &mut crate::Tensor)> {
        let w = &mut self.weights;
        let mut out: Vec<(&'static str, &mut crate::Tensor)> = vec![
            ("conv1_k", &mut w.conv1_k),
            ("conv1_b", &mut w.conv1_b),
            ("conv2_k", &mut w.conv2_k),
            ("conv2_b", &mut w.conv2_b),
        ];
        if let (Some(fw), Some(fb)) = (w.fc_w.as_mut(), w.fc_b.as_mut()) {
            out.push(("fc_w", fw));
            out.push(("fc_b", fb));
        }
        out.extend([
            ("init_h_w", &mut w.init_h_w),
            ("init_h_b", &mut w.init_h_b),
            ("init_c_w", &mut w.init_c_w),
            ("init_c_b", &mut w.init_c_b),
            ("embed", &mut w.embed),
            ("lstm_w", &mut w.lstm_w),
            ("lstm_b", &mut w.lstm_b),
            ("out_w", &mut w.out_w),
            ("out_b", &mut w.out_b),
        ]);
        if let (Some(aw), Some(au), Some(av)) =
            (w.attn_w.as_mut(), w.attn_u.as_mut(), w.attn_v.as_mut())
        {
            out.push(("attn_w", aw));
            out.push(("attn_u", au));
            out.push(("attn_v", av));
        }
        out
    }
}
