//! The attack optimization loop and the c-search scheduler.

use super::losses::{
    caption_logits_loss_on_tape, caption_logprob_loss_on_tape, keyword_logits_loss_on_tape,
    keyword_logprob_loss_on_tape,
};
use super::tanhspace::{from_tanh_space, to_tanh_space};
use super::{AttackConfig, AttackMode, AttackTarget, KeywordSet};
use crate::captioner::{infer_greedy, Caption, CaptionerModel};
use crate::error::{Error, Result};
use crate::tensor::adam::{adam_step, AdamState};
use crate::{Image, Real, Tape, Tensor};
use serde::{Deserialize, Serialize};

/// One logged optimization step. The objective decomposes as
/// `objective = c * loss + distortion^2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: Real,
    pub loss: Real,
    pub distortion: Real,
}

/// Outcome of one fixed-`c` attack run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub c: Real,
    pub success: bool,
    /// Distortion of the best successful iterate, or of the final
    /// iterate when the run failed.
    pub l2: Real,
    /// Distortion of the run's final iterate.
    pub final_l2: Real,
    /// Iteration at which the reported iterate was observed.
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<IterRecord>,
    /// Final iterate's image, kept in memory for failure analysis
    /// (scoring a failed run's captions needs the image at that c).
    #[serde(skip)]
    pub final_image: Option<Image>,
}

/// Final outcome of an attack (single run or full c search).
#[derive(Clone, Debug)]
pub struct AttackResult {
    pub delta: Tensor,
    pub l2: Real,
    pub success: bool,
    pub caption: Caption,
    pub c_used: Real,
    pub iterations_used: usize,
    pub adversarial_image: Image,
    /// Per-c summaries, in execution order.
    pub runs: Vec<RunRecord>,
}

/// Number of distinct keywords of `keywords` present in the caption.
pub fn count_keywords(caption: &Caption, keywords: &KeywordSet) -> usize {
    keywords
        .ids()
        .iter()
        .filter(|kw| caption.ids().contains(kw))
        .count()
}

#[derive(Clone)]
struct Iterate {
    delta: Tensor,
    l2: Real,
    caption: Caption,
    iter: usize,
    adversarial_image: Image,
}

enum RunOutcome {
    /// Minimum-distortion successful iterate of the run.
    Success(Iterate),
    /// Final iterate of a failed run.
    Failure(Iterate),
}

/// Exact-match success is visible in the teacher-forced pass itself:
/// when the argmax at every position equals the target token, greedy
/// decoding follows exactly the same path (and conversely).
fn caption_argmax_success(tape: &Tape, logits: &[crate::NodeId], target: &Caption) -> bool {
    logits
        .iter()
        .zip(&target.ids()[1..])
        .all(|(&z, &tok)| tape.value(z).argmax() as u32 == tok)
}

fn keyword_success(caption: &Caption, keywords: &KeywordSet) -> bool {
    count_keywords(caption, keywords) == keywords.len()
}

fn validate_target(model: &CaptionerModel, target: &AttackTarget) -> Result<()> {
    match target {
        AttackTarget::Caption(c) => {
            if c.len() > model.dims.max_len {
                return Err(Error::InvalidCaption(format!(
                    "target length {} exceeds max_len {}",
                    c.len(),
                    model.dims.max_len
                )));
            }
            for &id in c.ids() {
                if id as usize >= model.vocab.size() {
                    return Err(Error::TokenOutOfRange {
                        id,
                        vocab: model.vocab.size(),
                    });
                }
            }
        }
        AttackTarget::Keywords(k) => {
            for &id in k.ids() {
                if id as usize >= model.vocab.size() {
                    return Err(Error::TokenOutOfRange {
                        id,
                        vocab: model.vocab.size(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Runs the optimization at the fixed `config.c`.
fn run_once(
    model: &CaptionerModel,
    image: &Image,
    target: &AttackTarget,
    config: &AttackConfig,
) -> Result<(RunRecord, RunOutcome)> {
    let y = to_tanh_space(image);
    let mut w = Tensor::zeros(image.shape());
    let mut adam = AdamState::for_params(&[&w]);
    let mut best: Option<Iterate> = None;
    let mut trace = Vec::new();
    let mut forced: Option<Caption> = None;
    let max_len = model.dims.max_len;
    let mut final_iterate: Option<Iterate> = None;

    for iter in 0..=config.max_iters {
        let adv = from_tanh_space(&w, &y);
        let last = iter == config.max_iters;

        // Keyword modes periodically refresh the forced caption with
        // the current greedy prediction; success is checked there.
        let mut success_now = false;
        let mut success_caption: Option<Caption> = None;
        let mut greedy_now: Option<Caption> = None;
        if config.mode.is_keyword() {
            let refresh_due = iter % config.refresh_period == 0 || last || forced.is_none();
            if refresh_due {
                let cap = infer_greedy(model, &adv, max_len)?;
                if let AttackTarget::Keywords(kws) = target {
                    if keyword_success(&cap, kws) {
                        success_now = true;
                        success_caption = Some(cap.clone());
                    }
                }
                // Degenerate captions (bare START+END would still work;
                // length >= 2 always holds for greedy output).
                greedy_now = Some(cap.clone());
                forced = Some(cap);
            }
        }

        // Objective tape at the current iterate.
        let mut tape = Tape::new();
        let w_node = tape.var(w.clone());
        let y_node = tape.constant(y.clone());
        let wy = tape.add(w_node, y_node)?;
        let adv_node = tape.tanh(wy);
        let orig_node = tape.constant(image.clone());
        let diff = tape.sub(adv_node, orig_node)?;
        let dist_sq = tape.l2_norm_sq(diff);

        let tw = model.weights_on_tape(&mut tape, false);
        let loss_node = match (target, config.mode) {
            (AttackTarget::Caption(s), AttackMode::CaptionLogits) => {
                let logits =
                    model.teacher_forced_logits_on_tape(&mut tape, &tw, adv_node, s.ids())?;
                if caption_argmax_success(&tape, &logits, s) {
                    success_now = true;
                    success_caption = Some(s.clone());
                }
                caption_logits_loss_on_tape(&mut tape, &logits, s, config.epsilon)?
            }
            (AttackTarget::Caption(s), AttackMode::CaptionLogprob) => {
                let logits =
                    model.teacher_forced_logits_on_tape(&mut tape, &tw, adv_node, s.ids())?;
                if caption_argmax_success(&tape, &logits, s) {
                    success_now = true;
                    success_caption = Some(s.clone());
                }
                caption_logprob_loss_on_tape(&mut tape, &logits, s)?
            }
            (AttackTarget::Keywords(kws), AttackMode::KeywordLogits) => {
                let f = forced.as_ref().expect("forced caption set before use");
                let logits =
                    model.teacher_forced_logits_on_tape(&mut tape, &tw, adv_node, f.ids())?;
                keyword_logits_loss_on_tape(&mut tape, &logits, kws, config.epsilon, config.gate_a)?
            }
            (AttackTarget::Keywords(kws), AttackMode::KeywordLogprob) => {
                let f = forced.as_ref().expect("forced caption set before use");
                let logits =
                    model.teacher_forced_logits_on_tape(&mut tape, &tw, adv_node, f.ids())?;
                keyword_logprob_loss_on_tape(&mut tape, &logits, kws, config.masked_penalty)?
            }
            (AttackTarget::Caption(_), mode) => {
                return Err(Error::InvalidConfig(format!(
                    "caption target does not match attack mode {mode:?}"
                )))
            }
            (AttackTarget::Keywords(_), mode) => {
                return Err(Error::InvalidConfig(format!(
                    "keyword target does not match attack mode {mode:?}"
                )))
            }
        };

        let weighted = tape.mul_scalar(loss_node, config.c);
        let objective = tape.add(weighted, dist_sq)?;

        if config.record_trace {
            trace.push(IterRecord {
                iter,
                objective: tape.value(objective).item(),
                loss: tape.value(loss_node).item(),
                distortion: tape.value(dist_sq).item().sqrt(),
            });
        }

        let make_iterate = |caption: Caption| -> Iterate {
            let delta_data: Vec<Real> = adv
                .data()
                .iter()
                .zip(image.data())
                .map(|(&a, &o)| a - o)
                .collect();
            let delta = Tensor::new(image.shape().to_vec(), delta_data);
            Iterate {
                l2: delta.l2_norm(),
                delta,
                caption,
                iter,
                adversarial_image: adv.clone(),
            }
        };

        if success_now {
            let cand = make_iterate(success_caption.expect("success implies a caption"));
            if best.as_ref().map_or(true, |b| cand.l2 < b.l2) {
                best = Some(cand);
            }
        }

        if last {
            let caption = match greedy_now {
                Some(c) => c,
                None => infer_greedy(model, &adv, max_len)?,
            };
            final_iterate = Some(make_iterate(caption));
            break;
        }

        let grads = tape.backward(objective)?;
        let g = grads.get_or_zero(w_node);
        adam_step(&mut [&mut w], &[g], &mut adam, config.lr);
    }

    let final_iterate = final_iterate.expect("loop records the final iterate");
    let record = RunRecord {
        c: config.c,
        success: best.is_some(),
        l2: best.as_ref().map_or(final_iterate.l2, |b| b.l2),
        final_l2: final_iterate.l2,
        iterations: best.as_ref().map_or(config.max_iters, |b| b.iter),
        trace,
        final_image: Some(final_iterate.adversarial_image.clone()),
    };
    let outcome = match best {
        Some(b) => RunOutcome::Success(b),
        None => RunOutcome::Failure(final_iterate),
    };
    Ok((record, outcome))
}

fn result_from(iterate: Iterate, success: bool, c_used: Real, runs: Vec<RunRecord>) -> AttackResult {
    AttackResult {
        l2: iterate.l2,
        success,
        caption: iterate.caption,
        c_used,
        iterations_used: iterate.iter,
        delta: iterate.delta,
        adversarial_image: iterate.adversarial_image,
        runs,
    }
}

/// One attack run at `config.c`: ADAM on `w` from `w = 0` minimizing
/// `c * loss(tanh(w+y)) + ||tanh(w+y) - tanh(y)||_2^2`, returning the
/// best-by-distortion successful iterate if any, else the final
/// iterate marked unsuccessful.
pub fn run_attack(
    model: &CaptionerModel,
    image: &Image,
    target: &AttackTarget,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    model.check_image(image)?;
    validate_target(model, target)?;
    let (record, outcome) = run_once(model, image, target, config)?;
    let c = record.c;
    Ok(match outcome {
        RunOutcome::Success(it) => result_from(it, true, c, vec![record]),
        RunOutcome::Failure(it) => result_from(it, false, c, vec![record]),
    })
}

/// The c-search: escalate c by 10x per run until one succeeds, then
/// bisect between the largest failed and the smallest successful c.
/// When the very first c already succeeds (so no failure brackets the
/// search), the remaining steps probe c/10 each to chase smaller
/// distortion. `config.binary_steps` counts total attack runs. The
/// final result is the minimum-distortion success over all runs.
pub fn binary_search_c(
    model: &CaptionerModel,
    image: &Image,
    target: &AttackTarget,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    model.check_image(image)?;
    validate_target(model, target)?;

    let mut runs: Vec<RunRecord> = Vec::with_capacity(config.binary_steps);
    let mut best: Option<(Iterate, Real)> = None;
    let mut largest_fail: Option<Real> = None;
    let mut smallest_success: Option<Real> = None;
    let mut last_failure: Option<Iterate> = None;
    let mut c = config.c;

    for _ in 0..config.binary_steps {
        let mut run_cfg = config.clone();
        run_cfg.c = c;
        let (record, outcome) = run_once(model, image, target, &run_cfg)?;
        runs.push(record);
        match outcome {
            RunOutcome::Success(it) => {
                if best.as_ref().map_or(true, |(b, _)| it.l2 < b.l2) {
                    best = Some((it, c));
                }
                smallest_success = Some(smallest_success.map_or(c, |s: Real| s.min(c)));
            }
            RunOutcome::Failure(it) => {
                last_failure = Some(it);
                largest_fail = Some(largest_fail.map_or(c, |f: Real| f.max(c)));
            }
        }
        c = match (largest_fail, smallest_success) {
            (_, None) => c * 10.0,
            (None, Some(_)) => c / 10.0,
            (Some(lo), Some(hi)) => (lo + hi) / 2.0,
        };
    }

    Ok(match best {
        Some((it, c_used)) => result_from(it, true, c_used, runs),
        None => {
            let last_c = runs.last().unwrap().c;
            result_from(
                last_failure.expect("no success implies a recorded failure"),
                false,
                last_c,
                runs,
            )
        }
    })
}
