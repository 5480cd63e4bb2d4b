//! Classifier-only baseline attacks: iterative FGSM and a
//! margin-loss L2 attack in tanh space, both targeting the linear
//! scene-attribute head.

use super::classifier::ClassifierHead;
use super::tanhspace::{from_tanh_space, to_tanh_space};
use crate::captioner::CaptionerModel;
use crate::error::Result;
use crate::tensor::adam::{adam_step, AdamState};
use crate::{Image, Real, Tape, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IfgsmParams {
    /// Maximum L-infinity distortion.
    pub eps_inf: Real,
    pub steps: usize,
}

impl Default for IfgsmParams {
    fn default() -> Self {
        IfgsmParams {
            eps_inf: 0.3,
            steps: 40,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CwParams {
    /// Confidence margin the target logit must clear.
    pub kappa: Real,
    /// Loss weight (a fixed constant, no c search here).
    pub c: Real,
    pub lr: Real,
    pub max_iters: usize,
}

impl Default for CwParams {
    fn default() -> Self {
        CwParams {
            kappa: 10.0,
            c: 100.0,
            lr: 0.01,
            max_iters: 1000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaselineResult {
    pub adversarial_image: Image,
    pub delta: Tensor,
    pub l2: Real,
    pub success: bool,
    pub iterations_used: usize,
}

fn delta_between(adv: &Image, orig: &Image) -> Tensor {
    let data: Vec<Real> = adv
        .data()
        .iter()
        .zip(orig.data())
        .map(|(&a, &o)| a - o)
        .collect();
    Tensor::new(orig.shape().to_vec(), data)
}

/// Gradient of the targeted cross-entropy `lse(z) - z_target` w.r.t.
/// the image.
fn ce_grad(
    model: &CaptionerModel,
    head: &ClassifierHead,
    image: &Image,
    target_class: usize,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let img = tape.var(image.clone());
    let z = head.logits_on_tape(model, &mut tape, img)?;
    let lse = tape.log_sum_exp(z)?;
    let zt = tape.gather(z, target_class)?;
    let loss = tape.sub(lse, zt)?;
    let grads = tape.backward(loss)?;
    Ok(grads.get_or_zero(img))
}

/// Iterative FGSM toward `target_class`: sign-gradient descent steps
/// clipped elementwise to the eps_inf ball around the image and to the
/// `[-1, 1]` box. The step size is `2.5 * eps_inf / steps`.
pub fn ifgsm_classifier(
    model: &CaptionerModel,
    head: &ClassifierHead,
    image: &Image,
    target_class: usize,
    params: &IfgsmParams,
) -> Result<BaselineResult> {
    assert!(params.steps >= 1 && params.eps_inf >= 0.0);
    let alpha = 2.5 * params.eps_inf / params.steps as Real;
    let mut x = image.clone();
    for _ in 0..params.steps {
        let g = ce_grad(model, head, &x, target_class)?;
        for ((xv, &gv), &ov) in x
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(image.data())
        {
            let step = if gv > 0.0 {
                alpha
            } else if gv < 0.0 {
                -alpha
            } else {
                0.0
            };
            let lo = (ov - params.eps_inf).max(-1.0);
            let hi = (ov + params.eps_inf).min(1.0);
            *xv = (*xv - step).clamp(lo, hi);
        }
    }
    let success = head.predict(model, &x)? == target_class;
    let delta = delta_between(&x, image);
    Ok(BaselineResult {
        l2: delta.l2_norm(),
        delta,
        adversarial_image: x,
        success,
        iterations_used: params.steps,
    })
}

/// Tanh-space L2 attack on the class head with the margin loss
/// `max(max_{i != t} z_i - z_t, -kappa)`; success requires the target
/// logit to clear the runner-up by `kappa`. Returns the
/// minimum-distortion successful iterate, else the final iterate.
pub fn cw_classifier(
    model: &CaptionerModel,
    head: &ClassifierHead,
    image: &Image,
    target_class: usize,
    params: &CwParams,
) -> Result<BaselineResult> {
    let y = to_tanh_space(image);
    let mut w = Tensor::zeros(image.shape());
    let mut adam = AdamState::for_params(&[&w]);
    let mut best: Option<(Image, Tensor, Real, usize)> = None;

    for iter in 0..=params.max_iters {
        let adv = from_tanh_space(&w, &y);

        let mut tape = Tape::new();
        let w_node = tape.var(w.clone());
        let y_node = tape.constant(y.clone());
        let wy = tape.add(w_node, y_node)?;
        let adv_node = tape.tanh(wy);
        let orig_node = tape.constant(image.clone());
        let diff = tape.sub(adv_node, orig_node)?;
        let dist_sq = tape.l2_norm_sq(diff);
        let z = head.logits_on_tape(model, &mut tape, adv_node)?;
        let runner = tape.max_except(z, target_class)?;
        let zt = tape.gather(z, target_class)?;
        let margin = tape.sub(runner, zt)?;
        // max(margin, -kappa) via the relu ramp.
        let shifted = tape.add_scalar(margin, params.kappa);
        let ramped = tape.relu(shifted);
        let loss = tape.add_scalar(ramped, -params.kappa);
        let weighted = tape.mul_scalar(loss, params.c);
        let objective = tape.add(weighted, dist_sq)?;

        // Success when the loss saturates: z_t >= runner-up + kappa.
        if tape.value(loss).item() <= -params.kappa {
            let delta = delta_between(&adv, image);
            let l2 = delta.l2_norm();
            if best.as_ref().map_or(true, |(_, _, bl2, _)| l2 < *bl2) {
                best = Some((adv.clone(), delta, l2, iter));
            }
        }

        if iter == params.max_iters {
            break;
        }
        let grads = tape.backward(objective)?;
        let g = grads.get_or_zero(w_node);
        adam_step(&mut [&mut w], &[g], &mut adam, params.lr);
    }

    Ok(match best {
        Some((adv, delta, l2, iter)) => BaselineResult {
            adversarial_image: adv,
            delta,
            l2,
            success: true,
            iterations_used: iter,
        },
        None => {
            let adv = from_tanh_space(&w, &y);
            let delta = delta_between(&adv, image);
            BaselineResult {
                l2: delta.l2_norm(),
                delta,
                adversarial_image: adv,
                success: false,
                iterations_used: params.max_iters,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captioner::{CaptionerModel, Dims, Variant, Vocabulary};
    use crate::synth;

    fn setup() -> (CaptionerModel, ClassifierHead, Image) {
        let vocab = Vocabulary::from_words(synth::template_vocabulary());
        let model = CaptionerModel::new_random(Variant::Plain, vocab, Dims::default(), 5);
        let image = synth::render(&synth::Scene::single(
            synth::Shape::Circle,
            synth::Color::Red,
            4,
        ))
        .unwrap();
        let feat_dim = model.dims.feat;
        let head = ClassifierHead {
            w: Tensor::zeros(&[feat_dim, 4]),
            b: Tensor::zeros(&[1, 4]),
            n_classes: 4,
        };
        (model, head, image)
    }

    #[test]
    fn ifgsm_zero_gradient_leaves_image_unchanged() {
        // Zero head weights give constant logits and zero gradient.
        let (model, head, image) = setup();
        let out = ifgsm_classifier(&model, &head, &image, 2, &IfgsmParams::default()).unwrap();
        assert_eq!(out.adversarial_image, image);
        assert_eq!(out.l2, 0.0);
    }

    #[test]
    fn ifgsm_respects_the_ball_exactly() {
        let (model, mut head, image) = setup();
        // Non-trivial head so gradients flow.
        for (i, v) in head.w.data_mut().iter_mut().enumerate() {
            *v = ((i % 7) as f64 - 3.0) * 0.05;
        }
        let params = IfgsmParams {
            eps_inf: 0.3,
            steps: 10,
        };
        let out = ifgsm_classifier(&model, &head, &image, 1, &params).unwrap();
        let linf = out
            .delta
            .data()
            .iter()
            .fold(0.0f64, |m, &d| m.max(d.abs()));
        assert!(linf <= params.eps_inf + 1e-12, "linf = {linf}");
        assert!(out
            .adversarial_image
            .data()
            .iter()
            .all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn cw_self_class_with_margin_succeeds_at_zero_distortion() {
        let (model, mut head, image) = setup();
        // Bias the head so the image's own class wins by > kappa.
        let current = 0usize;
        head.b.data_mut()[current] = 100.0;
        let params = CwParams {
            kappa: 10.0,
            c: 100.0,
            lr: 0.01,
            max_iters: 3,
        };
        let out = cw_classifier(&model, &head, &image, current, &params).unwrap();
        assert!(out.success);
        assert_eq!(out.iterations_used, 0);
        assert!(out.l2 <= 1e-6, "l2 = {}", out.l2);
    }

    #[test]
    fn cw_success_implies_margin_at_least_kappa() {
        let (model, mut head, image) = setup();
        for (i, v) in head.w.data_mut().iter_mut().enumerate() {
            *v = ((i % 5) as f64 - 2.0) * 0.2;
        }
        let params = CwParams {
            kappa: 1.0,
            c: 50.0,
            lr: 0.01,
            max_iters: 200,
        };
        let target = 3usize;
        let out = cw_classifier(&model, &head, &image, target, &params).unwrap();
        if out.success {
            let z = head.logits(&model, &out.adversarial_image).unwrap();
            let (_, runner) = crate::tensor::kernels::max_excluding(z.data(), target);
            assert!(z.data()[target] >= runner + params.kappa - 1e-9);
        }
    }
}
