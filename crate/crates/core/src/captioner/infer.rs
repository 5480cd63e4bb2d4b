//! Greedy and beam-search decoding.

use super::model::{CaptionerModel, DecoderState};
use super::{Caption, END, START};
use crate::error::Result;
use crate::tensor::kernels;
use crate::{Image, Real};

/// Greedy top-1 decoding: argmax token per step (ties to the lowest
/// id), stopping at END or `max_len` total tokens.
pub fn infer_greedy(model: &CaptionerModel, image: &Image, max_len: usize) -> Result<Caption> {
    let features = model.encode(image)?;
    let state = model.init_state(&features);
    Ok(greedy_from_state(model, state, max_len)?.0)
}

/// Greedy decoding from an existing state; also returns the summed
/// log-probability of the emitted tokens.
pub(crate) fn greedy_from_state(
    model: &CaptionerModel,
    mut state: DecoderState,
    max_len: usize,
) -> Result<(Caption, Real)> {
    let mut ids = vec![START];
    let mut log_prob = 0.0;
    while ids.len() < max_len {
        let (z, next) = model.decode_step(&state, *ids.last().unwrap())?;
        let tok = z.argmax() as u32;
        log_prob += z.data()[tok as usize] - kernels::log_sum_exp(z.data());
        ids.push(tok);
        state = next;
        if tok == END {
            break;
        }
    }
    Ok((Caption::from_decoded(ids), log_prob))
}

/// A completed beam hypothesis.
#[derive(Clone, Debug)]
pub struct BeamHypothesis {
    pub caption: Caption,
    pub log_prob: Real,
}

struct LiveBeam {
    ids: Vec<u32>,
    log_prob: Real,
    state: DecoderState,
}

fn sort_hypotheses(hyps: &mut [BeamHypothesis]) {
    hyps.sort_by(|a, b| {
        b.log_prob
            .partial_cmp(&a.log_prob)
            .unwrap()
            .then_with(|| a.caption.ids().cmp(b.caption.ids()))
    });
}

/// Beam search with width `k`; returns up to `k` completed captions in
/// descending log-probability (ties broken by token sequence, then no
/// further ambiguity remains).
///
/// A hypothesis completes on END or when it reaches `max_len` tokens.
/// Each round keeps the `k` best candidates overall, so `k = 1` walks
/// exactly the greedy path, and a width covering every prefix
/// reproduces exhaustive enumeration.
pub fn infer_beam(
    model: &CaptionerModel,
    image: &Image,
    k: usize,
    max_len: usize,
) -> Result<Vec<BeamHypothesis>> {
    assert!(k >= 1, "beam width must be at least 1");
    assert!(max_len >= 2, "max_len must allow START plus one token");
    let features = model.encode(image)?;
    let state = model.init_state(&features);
    let vocab = model.vocab.size();

    let mut live = vec![LiveBeam {
        ids: vec![START],
        log_prob: 0.0,
        state,
    }];
    let mut done: Vec<BeamHypothesis> = Vec::new();

    while !live.is_empty() {
        // Extensions strictly lower a hypothesis' log-probability, so
        // once k completed captions beat every live beam we are done.
        if done.len() >= k {
            let kth = done[k - 1].log_prob;
            let best_live = live
                .iter()
                .map(|b| b.log_prob)
                .fold(Real::NEG_INFINITY, Real::max);
            if kth >= best_live {
                break;
            }
        }

        let mut candidates: Vec<(Real, usize, u32)> = Vec::with_capacity(live.len() * vocab);
        let mut stepped: Vec<DecoderState> = Vec::with_capacity(live.len());
        for (bi, beam) in live.iter().enumerate() {
            let (z, next) = model.decode_step(&beam.state, *beam.ids.last().unwrap())?;
            let lse = kernels::log_sum_exp(z.data());
            for (tok, &logit) in z.data().iter().enumerate() {
                candidates.push((beam.log_prob + (logit - lse), bi, tok as u32));
            }
            stepped.push(next);
        }
        // Deterministic order: score desc, then token asc, then beam asc.
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.2.cmp(&b.2))
                .then(a.1.cmp(&b.1))
        });

        let mut next_live: Vec<LiveBeam> = Vec::new();
        for &(lp, bi, tok) in candidates.iter().take(k) {
            let mut ids = live[bi].ids.clone();
            ids.push(tok);
            if tok == END || ids.len() >= max_len {
                done.push(BeamHypothesis {
                    caption: Caption::from_decoded(ids),
                    log_prob: lp,
                });
            } else {
                next_live.push(LiveBeam {
                    ids,
                    log_prob: lp,
                    state: stepped[bi].clone(),
                });
            }
        }
        sort_hypotheses(&mut done);
        done.truncate(k);
        live = next_live;
    }

    sort_hypotheses(&mut done);
    done.truncate(k);
    Ok(done)
}
