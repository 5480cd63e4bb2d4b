//! Linear scene-attribute head on the frozen encoder, for the
//! classifier-only baseline attacks.

use crate::captioner::{CaptionerModel, Features, Variant};
use crate::error::{Error, Result};
use crate::tensor::adam::{adam_step, AdamState};
use crate::tensor::kernels;
use crate::{Image, NodeId, Real, Tape, Tensor};
use serde::{Deserialize, Serialize};

/// Linear classifier over the plain encoder's feature vector.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub w: Tensor,
    pub b: Tensor,
    pub n_classes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub lr: Real,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        HeadTrainConfig {
            epochs: 60,
            lr: 0.01,
            seed: 0,
        }
    }
}

impl ClassifierHead {
    fn require_plain(model: &CaptionerModel) -> Result<()> {
        if model.variant != Variant::Plain {
            return Err(Error::InvalidConfig(
                "the classifier head runs on the plain-variant encoder".into(),
            ));
        }
        Ok(())
    }

    /// Feature vector of an image under the frozen encoder.
    pub fn features(model: &CaptionerModel, image: &Image) -> Result<Tensor> {
        Self::require_plain(model)?;
        match model.encode(image)? {
            Features::Plain(f) => Ok(f),
            Features::Attention { .. } => unreachable!(),
        }
    }

    pub fn logits_from_features(&self, feat: &Tensor) -> Tensor {
        let k = feat.len();
        let mut z = vec![0.0; self.n_classes];
        kernels::matmul(feat.data(), self.w.data(), 1, k, self.n_classes, &mut z);
        for (zv, bv) in z.iter_mut().zip(self.b.data()) {
            *zv += bv;
        }
        Tensor::new(vec![self.n_classes], z)
    }

    pub fn logits(&self, model: &CaptionerModel, image: &Image) -> Result<Tensor> {
        Ok(self.logits_from_features(&Self::features(model, image)?))
    }

    pub fn predict(&self, model: &CaptionerModel, image: &Image) -> Result<usize> {
        Ok(self.logits(model, image)?.argmax())
    }

    /// Head logits as a tape node with the image as differentiable
    /// input (encoder and head weights are constants).
    pub fn logits_on_tape(
        &self,
        model: &CaptionerModel,
        tape: &mut Tape,
        image_node: NodeId,
    ) -> Result<NodeId> {
        Self::require_plain(model)?;
        let tw = model.weights_on_tape(tape, false);
        let enc = model.encode_on_tape(tape, &tw, image_node)?;
        let feat = match enc {
            crate::captioner::EncodedNodes::Plain { feat } => feat,
            crate::captioner::EncodedNodes::Attention { .. } => unreachable!(),
        };
        let w = tape.constant(self.w.clone());
        let b = tape.constant(self.b.clone());
        let z = tape.matmul(feat, w)?;
        let z = tape.add(z, b)?;
        tape.reshape(z, &[self.n_classes])
    }
}

/// Trains the head with cross-entropy on frozen features.
pub fn train_head(
    model: &CaptionerModel,
    data: &[(Image, u8)],
    n_classes: usize,
    cfg: &HeadTrainConfig,
) -> Result<ClassifierHead> {
    ClassifierHead::require_plain(model)?;
    if data.is_empty() {
        return Err(Error::EmptyInput("head training set".into()));
    }
    let feats: Vec<Tensor> = data
        .iter()
        .map(|(img, _)| ClassifierHead::features(model, img))
        .collect::<Result<_>>()?;
    let feat_dim = feats[0].len();

    let mut rng = crate::rng::stream(cfg.seed, "head-init");
    use rand::Rng;
    let limit = (6.0 / (feat_dim + n_classes) as f64).sqrt();
    let w_data: Vec<Real> = (0..feat_dim * n_classes)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    let mut w = Tensor::new(vec![feat_dim, n_classes], w_data);
    let mut b = Tensor::zeros(&[1, n_classes]);
    let mut adam = AdamState::for_params(&[&w, &b]);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = crate::rng::stream(cfg.seed, "head-order");
    use rand::seq::SliceRandom;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for &i in &order {
            let label = data[i].1 as usize;
            let mut tape = Tape::new();
            let f = tape.constant(feats[i].clone().reshaped(&[1, feat_dim]));
            let wn = tape.var(w.clone());
            let bn = tape.var(b.clone());
            let z = tape.matmul(f, wn)?;
            let z = tape.add(z, bn)?;
            let lse = tape.log_sum_exp(z)?;
            let zt = tape.gather(z, label)?;
            let loss = tape.sub(lse, zt)?;
            let grads = tape.backward(loss)?;
            let gw = grads.get_or_zero(wn);
            let gb = grads.get_or_zero(bn);
            adam_step(&mut [&mut w, &mut b], &[gw, gb], &mut adam, cfg.lr);
        }
    }
    Ok(ClassifierHead { w, b, n_classes })
}

/// Top-1 accuracy of the head on labeled images.
pub fn head_accuracy(
    model: &CaptionerModel,
    head: &ClassifierHead,
    data: &[(Image, u8)],
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("head evaluation set".into()));
    }
    let mut hits = 0usize;
    for (img, label) in data {
        if head.predict(model, img)? == *label as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
