//! The four attack losses, built on a tape over teacher-forced logits.
//!
//! Position indices follow the caption convention `S_1..S_N` with
//! `S_1 = START`: `logits[i]` is the logit vector for position
//! `t = i + 2`, obtained by feeding `S_1..S_{N-1}`.

use super::KeywordSet;
use crate::captioner::{Caption, CaptionerModel};
use crate::error::{Error, Result};
use crate::{Image, NodeId, Real, Tape, Tensor};

/// `max(-eps, x)` as a ramp: `relu(x + eps) - eps`. The subgradient at
/// the kink takes the saturated branch (zero).
fn ramp(tape: &mut Tape, x: NodeId, eps: Real) -> NodeId {
    let shifted = tape.add_scalar(x, eps);
    let r = tape.relu(shifted);
    tape.add_scalar(r, -eps)
}

/// Hinge term for one position and one token: `max(-eps, max_{k != tok}
/// z_k - z_tok)`.
fn hinge_term(tape: &mut Tape, z: NodeId, token: u32, eps: Real) -> Result<NodeId> {
    let runner_up = tape.max_except(z, token as usize)?;
    let target = tape.gather(z, token as usize)?;
    let margin = tape.sub(runner_up, target)?;
    Ok(ramp(tape, margin, eps))
}

/// Negative teacher-forced log-likelihood of the target caption: the
/// sum over positions `t = 2..=N` of `lse(z_t) - z_t^(S_t)`.
pub fn caption_logprob_loss_on_tape(
    tape: &mut Tape,
    logits: &[NodeId],
    target: &Caption,
    ) -> Result<NodeId> {
    debug_assert_eq!(logits.len(), target.len() - 1);
    let mut terms = Vec::with_capacity(logits.len());
    for (i, &z) in logits.iter().enumerate() {
        let token = target.ids()[i + 1];
        let zt = tape.gather(z, token as usize)?;
        let lse = tape.log_sum_exp(z)?;
        terms.push(tape.sub(lse, zt)?);
    }
    let stacked = tape.stack(&terms)?;
    Ok(tape.sum(stacked))
}

/// Ramp loss over positions `t = 2..=N-1` (the END position is
/// excluded): each term is `max(-eps, max_{k != S_t} z_k - z^(S_t))`,
/// floored at `-eps` once the target word leads by the margin.
pub fn caption_logits_loss_on_tape(
    tape: &mut Tape,
    logits: &[NodeId],
    target: &Caption,
    eps: Real,
) -> Result<NodeId> {
    debug_assert_eq!(logits.len(), target.len() - 1);
    let mut terms = Vec::new();
    // logits[i] is position t = i+2; keep t <= N-1, i.e. drop the last.
    for (i, &z) in logits[..logits.len().saturating_sub(1)].iter().enumerate() {
        let token = target.ids()[i + 1];
        terms.push(hinge_term(tape, z, token, eps)?);
    }
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let stacked = tape.stack(&terms)?;
    Ok(tape.sum(stacked))
}

/// Top-1 token per position; the collision gate masks a position for
/// keyword j whenever this token is some *other* keyword.
fn top_tokens(tape: &Tape, logits: &[NodeId]) -> Vec<u32> {
    logits
        .iter()
        .map(|&z| tape.value(z).argmax() as u32)
        .collect()
}

/// Hinge-min keyword loss with the collision gate: for each keyword
/// the minimum over positions of the gated hinge term; gated positions
/// contribute the constant `gate_a`.
pub fn keyword_logits_loss_on_tape(
    tape: &mut Tape,
    logits: &[NodeId],
    keywords: &KeywordSet,
    eps: Real,
    gate_a: Real,
) -> Result<NodeId> {
    if keywords.is_empty() {
        return Err(Error::InvalidKeywords("empty keyword set".into()));
    }
    if logits.is_empty() {
        return Err(Error::InvalidCaption(
            "forced caption provides no positions".into(),
        ));
    }
    let argmaxes = top_tokens(tape, logits);
    let mut per_keyword = Vec::with_capacity(keywords.len());
    for &kw in keywords.ids() {
        let mut terms = Vec::with_capacity(logits.len());
        for (&z, &top) in logits.iter().zip(&argmaxes) {
            let masked = top != kw && keywords.ids().contains(&top);
            if masked {
                terms.push(tape.constant(Tensor::scalar(gate_a)));
            } else {
                terms.push(hinge_term(tape, z, kw, eps)?);
            }
        }
        let stacked = tape.stack(&terms)?;
        per_keyword.push(tape.min_over_axis(stacked, None)?);
    }
    let stacked = tape.stack(&per_keyword)?;
    Ok(tape.sum(stacked))
}

/// Log-prob keyword loss: for each keyword, the negative log of its
/// best per-position probability, with gated positions excluded from
/// the max. A keyword whose every position is gated contributes the
/// large-finite `masked_penalty`.
pub fn keyword_logprob_loss_on_tape(
    tape: &mut Tape,
    logits: &[NodeId],
    keywords: &KeywordSet,
    masked_penalty: Real,
) -> Result<NodeId> {
    if keywords.is_empty() {
        return Err(Error::InvalidKeywords("empty keyword set".into()));
    }
    if logits.is_empty() {
        return Err(Error::InvalidCaption(
            "forced caption provides no positions".into(),
        ));
    }
    let argmaxes = top_tokens(tape, logits);
    let mut per_keyword = Vec::with_capacity(keywords.len());
    for &kw in keywords.ids() {
        let mut terms = Vec::new();
        for (&z, &top) in logits.iter().zip(&argmaxes) {
            let masked = top != kw && keywords.ids().contains(&top);
            if masked {
                continue;
            }
            let zt = tape.gather(z, kw as usize)?;
            let lse = tape.log_sum_exp(z)?;
            terms.push(tape.sub(zt, lse)?); // log p_t^(kw)
        }
        if terms.is_empty() {
            per_keyword.push(tape.constant(Tensor::scalar(masked_penalty)));
        } else {
            let stacked = tape.stack(&terms)?;
            let best = tape.max_over_axis(stacked, None)?;
            per_keyword.push(tape.neg(best));
        }
    }
    let stacked = tape.stack(&per_keyword)?;
    Ok(tape.sum(stacked))
}

// ---- value-level wrappers over a full model --------------------------

fn forced_logits(
    model: &CaptionerModel,
    tape: &mut Tape,
    image: &Image,
    tokens: &[u32],
) -> Result<Vec<NodeId>> {
    let tw = model.weights_on_tape(tape, false);
    let img = tape.constant(image.clone());
    model.teacher_forced_logits_on_tape(tape, &tw, img, tokens)
}

/// Negative log probability of the target caption. Always >= 0 and
/// equals `-caption_log_prob` exactly.
pub fn loss_logprob_caption(model: &CaptionerModel, image: &Image, target: &Caption) -> Result<Real> {
    let mut tape = Tape::new();
    let logits = forced_logits(model, &mut tape, image, target.ids())?;
    let loss = caption_logprob_loss_on_tape(&mut tape, &logits, target)?;
    Ok(tape.value(loss).item())
}

/// Ramp loss of the target caption at confidence `eps`.
pub fn loss_logits_caption(
    model: &CaptionerModel,
    image: &Image,
    target: &Caption,
    eps: Real,
) -> Result<Real> {
    let mut tape = Tape::new();
    let logits = forced_logits(model, &mut tape, image, target.ids())?;
    let loss = caption_logits_loss_on_tape(&mut tape, &logits, target, eps)?;
    Ok(tape.value(loss).item())
}

/// Gated hinge-min keyword loss, teacher-forced on `forced_caption`.
pub fn loss_logits_keywords(
    model: &CaptionerModel,
    image: &Image,
    keywords: &KeywordSet,
    eps: Real,
    gate_a: Real,
    forced_caption: &Caption,
) -> Result<Real> {
    let mut tape = Tape::new();
    let logits = forced_logits(model, &mut tape, image, forced_caption.ids())?;
    let loss = keyword_logits_loss_on_tape(&mut tape, &logits, keywords, eps, gate_a)?;
    Ok(tape.value(loss).item())
}

/// Gated log-prob keyword loss, teacher-forced on `forced_caption`.
pub fn loss_logprob_keywords(
    model: &CaptionerModel,
    image: &Image,
    keywords: &KeywordSet,
    masked_penalty: Real,
    forced_caption: &Caption,
) -> Result<Real> {
    let mut tape = Tape::new();
    let logits = forced_logits(model, &mut tape, image, forced_caption.ids())?;
    let loss = keyword_logprob_loss_on_tape(&mut tape, &logits, keywords, masked_penalty)?;
    Ok(tape.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captioner::START;

    /// Stacks raw logit rows onto a tape as constants, mimicking
    /// teacher-forced outputs, so the losses can be probed directly.
    fn logits_on_tape(tape: &mut Tape, rows: &[Vec<Real>], trainable: bool) -> Vec<NodeId> {
        rows.iter()
            .map(|r| {
                let t = Tensor::new(vec![r.len()], r.clone());
                if trainable {
                    tape.var(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect()
    }

    fn caption(ids: &[u32]) -> Caption {
        Caption::new(ids.to_vec(), 16).unwrap()
    }

    #[test]
    fn logits_loss_hand_example() {
        // Three positions scored (N=5 caption, Eq-8 drops the END
        // position). Targets lead by > eps everywhere except position
        // t=3 where the target trails the runner-up by 2.0.
        let eps = 1.0;
        let target = caption(&[START, 3, 4, 5, crate::captioner::END]);
        let rows = vec![
            vec![0.0, 0.0, 0.0, 9.0, 1.0, 0.0], // t=2 target 3 leads by 8
            vec![0.0, 0.0, 0.0, 0.0, 5.0, 7.0], // t=3 target 4 trails 5 by 2
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 9.0], // t=4 target 5 leads by 8
            vec![9.0, 1.0, 0.0, 0.0, 0.0, 0.0], // t=5 END position, excluded
        ];
        let mut tape = Tape::new();
        let logits = logits_on_tape(&mut tape, &rows, false);
        let loss = caption_logits_loss_on_tape(&mut tape, &logits, &target, eps).unwrap();
        // Saturated terms contribute -eps each; the trailing one 2.0.
        assert_eq!(tape.value(loss).item(), -eps * 2.0 + 2.0);
    }

    #[test]
    fn logits_loss_floor_reached_iff_all_margins_exceed_eps() {
        let eps = 1.0;
        let target = caption(&[START, 3, 4, crate::captioner::END]);
        let comfortable = vec![
            vec![0.0, 0.0, 0.0, 5.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 5.0, 0.0],
            vec![5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        let mut tape = Tape::new();
        let logits = logits_on_tape(&mut tape, &comfortable, false);
        let loss = caption_logits_loss_on_tape(&mut tape, &logits, &target, eps).unwrap();
        let n_terms = 2.0;
        assert_eq!(tape.value(loss).item(), -eps * n_terms);

        // Shrink one margin to exactly eps: the floor is no longer met.
        let mut tight = comfortable;
        tight[0][3] = 1.0; // margin = max_other - z_target = 0 - 1 = -1 = -eps
        tight[0][0] = 0.0;
        let mut tape = Tape::new();
        let logits = logits_on_tape(&mut tape, &tight, false);
        let loss = caption_logits_loss_on_tape(&mut tape, &logits, &target, eps).unwrap();
        assert_eq!(tape.value(loss).item(), -eps * n_terms);
        // margin exactly -eps still attains the floor value; push above.
        let mut above = vec![
            vec![0.0, 0.0, 0.0, 0.5, 0.0, 0.0], // margin -0.5 > -eps
            vec![0.0, 0.0, 0.0, 0.0, 5.0, 0.0],
            vec![5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        above[0][3] = 0.5;
        let mut tape = Tape::new();
        let logits = logits_on_tape(&mut tape, &above, false);
        let loss = caption_logits_loss_on_tape(&mut tape, &logits, &target, eps).unwrap();
        assert!(tape.value(loss).item() > -eps * n_terms);
    }

    #[test]
    fn logits_loss_gradient_wrt_target_logit_is_minus_one_or_zero() {
        use rand::Rng;
        use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let eps = 1.0;
        for _ in 0..50 {
            let n_pos = rng.gen_range(2..6);
            let vocab = 8;
            let mut ids = vec![START];
            for _ in 0..n_pos {
                ids.push(rng.gen_range(3..vocab as u32));
            }
            ids.push(crate::captioner::END);
            let target = caption(&ids);
            let rows: Vec<Vec<Real>> = (0..n_pos + 1)
                .map(|_| (0..vocab).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect();
            let mut tape = Tape::new();
            let logits = logits_on_tape(&mut tape, &rows, true);
            let loss = caption_logits_loss_on_tape(&mut tape, &logits, &target, eps).unwrap();
            let grads = tape.backward(loss).unwrap();
            for (i, &z) in logits[..logits.len() - 1].iter().enumerate() {
                let token = target.ids()[i + 1] as usize;
                let g = grads.get_or_zero(z);
                let gt = g.data()[token];
                assert!(
                    gt == -1.0 || gt == 0.0,
                    "grad wrt target logit must be -1 or 0 exactly, got {gt}"
                );
            }
        }
    }

    #[test]
    fn logprob_loss_is_nonnegative_and_matches_sum() {
        let target = caption(&[START, 3, crate::captioner::END]);
        let rows = vec![
            vec![0.0, 0.0, 0.0, 2.0, -1.0, 0.5],
            vec![0.3, 4.0, 0.0, -2.0, 0.0, 0.0],
        ];
        let mut tape = Tape::new();
        let logits = logits_on_tape(&mut tape, &rows, false);
        let loss = caption_logprob_loss_on_tape(&mut tape, &logits, &target).unwrap();
        let expected: Real = rows
            .iter()
            .zip(&target.ids()[1..])
            .map(|(r, &tok)| crate::tensor::kernels::log_sum_exp(r) - r[tok as usize])
            .sum();
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);
        assert!(tape.value(loss).item() >= 0.0);
    }

    #[test]
    fn keyword_gate_masks_collided_positions() {
        // Keyword 4 is argmax at position 0; keyword 5's term there
        // must be the gate constant regardless of its margin.
        let vocab = Vocabulary16();
        let kws = KeywordSet::new(vec![4, 5], &vocab).unwrap();
        let gate_a = 1e5;
        let rows = vec![
            vec![0.0, 0.0, 0.0, 0.0, 9.0, 8.9], // argmax = 4 (a keyword)
            vec![0.0, 0.0, 0.0, 7.0, 0.0, 0.0], // argmax = 3 (not a keyword)
        ];
        let mut tape = Tape::new();
        let logits = logits_on_tape(&mut tape, &rows, false);
        let loss = keyword_logits_loss_on_tape(&mut tape, &logits, &kws, 1.0, gate_a).unwrap();
        // keyword 4: min(hinge at pos0 = max(-1, 8.9-9.0) = -0.1, hinge at pos1 = max(-1, 7-0)=7) = -0.1
        // keyword 5: pos0 gated (A), pos1 hinge = max(-1, 7-0) = 7 -> min = 7
        assert_eq!(tape.value(loss).item(), -0.1 + 7.0);
    }

    #[test]
    fn keyword_logits_micro_instance_matches_bruteforce() {
        use rand::Rng;
        use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
        let vocab = Vocabulary16();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let eps = 1.0;
        let gate_a = 1e5;
        for _ in 0..200 {
            let kws = KeywordSet::new(vec![3, 4], &vocab).unwrap();
            let rows: Vec<Vec<Real>> = (0..3)
                .map(|_| (0..5).map(|_| rng.gen_range(-4.0..4.0)).collect())
                .collect();
            let mut tape = Tape::new();
            let logits = logits_on_tape(&mut tape, &rows, false);
            let loss =
                keyword_logits_loss_on_tape(&mut tape, &logits, &kws, eps, gate_a).unwrap();

            // Independent enumeration of Eq-10 over all (t, j).
            let mut expected = 0.0;
            for &kw in kws.ids() {
                let mut best = Real::INFINITY;
                for row in &rows {
                    let top = crate::tensor::kernels::argmax(row) as u32;
                    let term = if top != kw && kws.ids().contains(&top) {
                        gate_a
                    } else {
                        let (_, mx) =
                            crate::tensor::kernels::max_excluding(row, kw as usize);
                        (mx - row[kw as usize]).max(-eps)
                    };
                    best = best.min(term);
                }
                expected += best;
            }
            assert!((tape.value(loss).item() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn keyword_logprob_trivial_values() {
        let vocab = Vocabulary16();
        let kw = KeywordSet::new(vec![4], &vocab).unwrap();
        // Probability ~1 at some position: loss ~ 0.
        let rows = vec![vec![-40.0, -40.0, -40.0, -40.0, 0.0, -40.0]];
        let mut tape = Tape::new();
        let logits = logits_on_tape(&mut tape, &rows, false);
        let loss = keyword_logprob_loss_on_tape(&mut tape, &logits, &kw, 1e5).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-9);

        // Probability exactly 0.5: loss = -ln 0.5 = ln 2.
        let rows = vec![vec![-40.0, -40.0, -40.0, 0.0, 0.0, -40.0]];
        let mut tape = Tape::new();
        let logits = logits_on_tape(&mut tape, &rows, false);
        let loss = keyword_logprob_loss_on_tape(&mut tape, &logits, &kw, 1e5).unwrap();
        assert!((tape.value(loss).item() - (2.0 as Real).ln()).abs() < 1e-12);
    }

    #[test]
    fn keyword_logprob_micro_matches_bruteforce_and_masks() {
        use rand::Rng;
        use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
        let vocab = Vocabulary16();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let penalty = 1e5;
        for _ in 0..200 {
            let kws = KeywordSet::new(vec![3, 5], &vocab).unwrap();
            let rows: Vec<Vec<Real>> = (0..4)
                .map(|_| (0..6).map(|_| rng.gen_range(-4.0..4.0)).collect())
                .collect();
            let mut tape = Tape::new();
            let logits = logits_on_tape(&mut tape, &rows, false);
            let loss = keyword_logprob_loss_on_tape(&mut tape, &logits, &kws, penalty).unwrap();

            let mut expected = 0.0;
            for &kw in kws.ids() {
                let mut best: Option<Real> = None;
                for row in &rows {
                    let top = crate::tensor::kernels::argmax(row) as u32;
                    if top != kw && kws.ids().contains(&top) {
                        continue;
                    }
                    let lp = row[kw as usize] - crate::tensor::kernels::log_sum_exp(row);
                    best = Some(best.map_or(lp, |b: Real| b.max(lp)));
                }
                expected += best.map_or(penalty, |b| -b);
            }
            assert!((tape.value(loss).item() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_masked_keyword_gets_large_finite_penalty() {
        let vocab = Vocabulary16();
        let kws = KeywordSet::new(vec![4, 5], &vocab).unwrap();
        // Keyword 4 is argmax at every position, so keyword 5 is
        // masked everywhere.
        let rows = vec![
            vec![0.0, 0.0, 0.0, 0.0, 9.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 9.0, 0.0],
        ];
        let mut tape = Tape::new();
        let logits = logits_on_tape(&mut tape, &rows, false);
        let loss = keyword_logprob_loss_on_tape(&mut tape, &logits, &kws, 1e5).unwrap();
        let v = tape.value(loss).item();
        assert!(v.is_finite());
        assert!(v >= 1e5);
    }

    #[test]
    fn empty_keyword_set_is_rejected_at_construction() {
        let vocab = Vocabulary16();
        assert!(KeywordSet::new(vec![], &vocab).is_err());
    }

    #[allow(non_snake_case)]
    fn Vocabulary16() -> Vocabulary {
        Vocabulary::from_words((0..13).map(|i| format!("w{i}")))
    }

    use crate::captioner::Vocabulary;
}
