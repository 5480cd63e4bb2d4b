//! Model weights and the plain (no-tape) forward path.
//!
//! The tape-based forward in [`super::graph`] calls the same kernels in
//! the same order, so both paths produce bit-identical values.

use super::Vocabulary;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::kernels;
use crate::{Image, Real, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Attention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub img_size: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub feat: usize,
    pub embed: usize,
    pub hidden: usize,
    pub attn: usize,
    pub max_len: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            img_size: 32,
            conv1: 16,
            conv2: 32,
            feat: 64,
            embed: 32,
            hidden: 64,
            attn: 32,
            max_len: 15,
        }
    }
}

impl Dims {
    /// Side of the conv feature map (two stride-2 convs).
    pub fn fmap_side(&self) -> usize {
        self.img_size / 4
    }

    /// Number of spatial positions in the conv feature map.
    pub fn fmap_len(&self) -> usize {
        self.fmap_side() * self.fmap_side()
    }

    /// LSTM input width for a variant: the word embedding plus the
    /// image context (the static feature vector for plain, the
    /// attention context for attention).
    pub fn lstm_in(&self, variant: Variant) -> usize {
        match variant {
            Variant::Plain => self.embed + self.feat,
            Variant::Attention => self.embed + self.conv2,
        }
    }
}

/// All weight tensors. Vector-shaped weights are `[1, n]` row vectors
/// except conv biases, which the conv kernel takes flat.
#[derive(Clone, Debug)]
pub struct Weights {
    pub conv1_k: Tensor,
    pub conv1_b: Tensor,
    pub conv2_k: Tensor,
    pub conv2_b: Tensor,
    pub fc_w: Option<Tensor>,
    pub fc_b: Option<Tensor>,
    pub init_h_w: Tensor,
    pub init_h_b: Tensor,
    pub init_c_w: Tensor,
    pub init_c_b: Tensor,
    pub embed: Tensor,
    pub lstm_w: Tensor,
    pub lstm_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
    pub attn_w: Option<Tensor>,
    pub attn_u: Option<Tensor>,
    pub attn_v: Option<Tensor>,
}

/// Encoder output: a feature vector for the plain variant, the conv
/// feature map (plus its attention projection) for the attention one.
#[derive(Clone, Debug)]
pub enum Features {
    Plain(Tensor),
    Attention {
        /// `[positions, conv2]`
        fmap: Tensor,
        /// `fmap x attn_w`, precomputed once per image: `[positions, attn]`
        proj: Tensor,
    },
}

/// Per-run decoder state; never shared between runs.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub h: Vec<Real>,
    pub c: Vec<Real>,
    pub features: Features,
}

#[derive(Clone, Debug)]
pub struct CaptionerModel {
    pub variant: Variant,
    pub dims: Dims,
    pub vocab: Vocabulary,
    pub weights: Weights,
}

impl CaptionerModel {
    /// Glorot-initialized model; all randomness from `(seed, "init")`.
    pub fn new_random(variant: Variant, vocab: Vocabulary, dims: Dims, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "init");
        let v = vocab.size();
        let glorot = |rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize], fan_in, fan_out| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = shape.iter().product();
            let data: Vec<Real> = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
            Tensor::new(shape.to_vec(), data)
        };
        let fmap_flat = dims.fmap_len() * dims.conv2;
        let lstm_in = dims.lstm_in(variant);
        let conv1_k = glorot(&mut rng, &[3, 3, 3, dims.conv1], 27, 9 * dims.conv1);
        let conv2_k = glorot(
            &mut rng,
            &[3, 3, dims.conv1, dims.conv2],
            9 * dims.conv1,
            9 * dims.conv2,
        );
        let (fc_w, fc_b, init_in) = match variant {
            Variant::Plain => (
                Some(glorot(&mut rng, &[fmap_flat, dims.feat], fmap_flat, dims.feat)),
                Some(Tensor::zeros(&[1, dims.feat])),
                dims.feat,
            ),
            Variant::Attention => (None, None, dims.conv2),
        };
        let init_h_w = glorot(&mut rng, &[init_in, dims.hidden], init_in, dims.hidden);
        let init_c_w = glorot(&mut rng, &[init_in, dims.hidden], init_in, dims.hidden);
        let embed = glorot(&mut rng, &[v, dims.embed], v, dims.embed);
        let lstm_w = glorot(
            &mut rng,
            &[lstm_in + dims.hidden, 4 * dims.hidden],
            lstm_in + dims.hidden,
            4 * dims.hidden,
        );
        // Forget-gate bias starts at 1 so early training does not wash
        // out the cell state.
        let mut lstm_b = Tensor::zeros(&[1, 4 * dims.hidden]);
        for i in dims.hidden..2 * dims.hidden {
            lstm_b.data_mut()[i] = 1.0;
        }
        let out_w = glorot(&mut rng, &[dims.hidden, v], dims.hidden, v);
        let (attn_w, attn_u, attn_v) = match variant {
            Variant::Plain => (None, None, None),
            Variant::Attention => (
                Some(glorot(&mut rng, &[dims.conv2, dims.attn], dims.conv2, dims.attn)),
                Some(glorot(&mut rng, &[dims.hidden, dims.attn], dims.hidden, dims.attn)),
                Some(glorot(&mut rng, &[dims.attn, 1], dims.attn, 1)),
            ),
        };
        CaptionerModel {
            variant,
            dims,
            vocab,
            weights: Weights {
                conv1_k,
                conv1_b: Tensor::zeros(&[dims.conv1]),
                conv2_k,
                conv2_b: Tensor::zeros(&[dims.conv2]),
                fc_w,
                fc_b,
                init_h_w,
                init_h_b: Tensor::zeros(&[1, dims.hidden]),
                init_c_w,
                init_c_b: Tensor::zeros(&[1, dims.hidden]),
                embed,
                lstm_w,
                lstm_b,
                out_w,
                out_b: Tensor::zeros(&[1, v]),
            attn_w,
                attn_u,
                attn_v,
            },
        }
    }

    /// Named parameters in a fixed order (checkpoint and ADAM order).
    pub fn param_names(&self) -> Vec<&'static str> {
        let mut names = vec!["conv1_k", "conv1_b", "conv2_k", "conv2_b"];
        if self.weights.fc_w.is_some() {
            names.push("fc_w");
            names.push("fc_b");
        }
        names.extend([
            "init_h_w", "init_h_b", "init_c_w", "init_c_b", "embed", "lstm_w", "lstm_b",
            "out_w", "out_b",
        ]);
        if self.weights.attn_w.is_some() {
            names.extend(["attn_w", "attn_u", "attn_v"]);
        }
        names
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        let w = &self.weights;
        match name {
            "conv1_k" => Some(&w.conv1_k),
            "conv1_b" => Some(&w.conv1_b),
            "conv2_k" => Some(&w.conv2_k),
            "conv2_b" => Some(&w.conv2_b),
            "fc_w" => w.fc_w.as_ref(),
            "fc_b" => w.fc_b.as_ref(),
            "init_h_w" => Some(&w.init_h_w),
            "init_h_b" => Some(&w.init_h_b),
            "init_c_w" => Some(&w.init_c_w),
            "init_c_b" => Some(&w.init_c_b),
            "embed" => Some(&w.embed),
            "lstm_w" => Some(&w.lstm_w),
            "lstm_b" => Some(&w.lstm_b),
            "out_w" => Some(&w.out_w),
            "out_b" => Some(&w.out_b),
            "attn_w" => w.attn_w.as_ref(),
            "attn_u" => w.attn_u.as_ref(),
            "attn_v" => w.attn_v.as_ref(),
            _ => None,
        }
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let w = &mut self.weights;
        match name {
            "conv1_k" => Some(&mut w.conv1_k),
            "conv1_b" => Some(&mut w.conv1_b),
            "conv2_k" => Some(&mut w.conv2_k),
            "conv2_b" => Some(&mut w.conv2_b),
            "fc_w" => w.fc_w.as_mut(),
            "fc_b" => w.fc_b.as_mut(),
            "init_h_w" => Some(&mut w.init_h_w),
            "init_h_b" => Some(&mut w.init_h_b),
            "init_c_w" => Some(&mut w.init_c_w),
            "init_c_b" => Some(&mut w.init_c_b),
            "embed" => Some(&mut w.embed),
            "lstm_w" => Some(&mut w.lstm_w),
            "lstm_b" => Some(&mut w.lstm_b),
            "out_w" => Some(&mut w.out_w),
            "out_b" => Some(&mut w.out_b),
            "attn_w" => w.attn_w.as_mut(),
            "attn_u" => w.attn_u.as_mut(),
            "attn_v" => w.attn_v.as_mut(),
            _ => None,
        }
    }

    pub fn check_image(&self, image: &Image) -> Result<()> {
        let expect = [self.dims.img_size, self.dims.img_size, 3];
        if image.shape() != expect {
            return Err(Error::shapes(
                "encode",
                format!("image {:?}, expected {:?}", image.shape(), expect),
            ));
        }
        Ok(())
    }

    /// Conv trunk shared by both variants: `[s, s, conv2]` feature map
    /// flattened to `[positions, conv2]`.
    fn conv_trunk(&self, image: &Image) -> Tensor {
        let d = &self.dims;
        let s1 = d.img_size / 2;
        let mut a1 = vec![0.0; s1 * s1 * d.conv1];
        kernels::conv2d(
            image.data(),
            self.weights.conv1_k.data(),
            Some(self.weights.conv1_b.data()),
            d.img_size,
            d.img_size,
            3,
            3,
            3,
            d.conv1,
            2,
            1,
            &mut a1,
        );
        for v in a1.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let s2 = d.fmap_side();
        let mut a2 = vec![0.0; s2 * s2 * d.conv2];
        kernels::conv2d(
            &a1,
            self.weights.conv2_k.data(),
            Some(self.weights.conv2_b.data()),
            s1,
            s1,
            d.conv1,
            3,
            3,
            d.conv2,
            2,
            1,
            &mut a2,
        );
        for v in a2.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Tensor::new(vec![d.fmap_len(), d.conv2], a2)
    }

    /// Differentiable feature extraction (the tape twin lives in
    /// [`super::graph`]).
    pub fn encode(&self, image: &Image) -> Result<Features> {
        self.check_image(image)?;
        let d = &self.dims;
        let fmap = self.conv_trunk(image);
        match self.variant {
            Variant::Plain => {
                let fc_w = self.weights.fc_w.as_ref().unwrap();
                let fc_b = self.weights.fc_b.as_ref().unwrap();
                let mut feat = vec![0.0; d.feat];
                kernels::matmul(
                    fmap.data(),
                    fc_w.data(),
                    1,
                    d.fmap_len() * d.conv2,
                    d.feat,
                    &mut feat,
                );
                for (f, b) in feat.iter_mut().zip(fc_b.data()) {
                    *f += b;
                }
                Ok(Features::Plain(Tensor::new(vec![1, d.feat], feat)))
            }
            Variant::Attention => {
                let attn_w = self.weights.attn_w.as_ref().unwrap();
                let mut proj = vec![0.0; d.fmap_len() * d.attn];
                kernels::matmul(
                    fmap.data(),
                    attn_w.data(),
                    d.fmap_len(),
                    d.conv2,
                    d.attn,
                    &mut proj,
                );
                Ok(Features::Attention {
                    fmap,
                    proj: Tensor::new(vec![d.fmap_len(), d.attn], proj),
                })
            }
        }
    }

    /// Initial decoder state from encoder features.
    pub fn init_state(&self, features: &Features) -> DecoderState {
        let d = &self.dims;
        let x: Vec<Real> = match features {
            Features::Plain(feat) => feat.data().to_vec(),
            Features::Attention { fmap, .. } => {
                // Mean over positions = (1/n) row of ones times fmap.
                let n = d.fmap_len();
                let ones: Vec<Real> = vec![1.0 / n as Real; n];
                let mut mean = vec![0.0; d.conv2];
                kernels::matmul(&ones, fmap.data(), 1, n, d.conv2, &mut mean);
                mean
            }
        };
        let proj = |w: &Tensor, b: &Tensor| {
            let mut out = vec![0.0; d.hidden];
            kernels::matmul(&x, w.data(), 1, x.len(), d.hidden, &mut out);
            for (o, bv) in out.iter_mut().zip(b.data()) {
                *o = (*o + bv).tanh();
            }
            out
        };
        DecoderState {
            h: proj(&self.weights.init_h_w, &self.weights.init_h_b),
            c: proj(&self.weights.init_c_w, &self.weights.init_c_b),
            features: features.clone(),
        }
    }

    /// One decoder step: token in, logits over the vocabulary out.
    pub fn decode_step(&self, state: &DecoderState, token: u32) -> Result<(Tensor, DecoderState)> {
        let d = &self.dims;
        let v = self.vocab.size();
        if token as usize >= v {
            return Err(Error::TokenOutOfRange { id: token, vocab: v });
        }
        let e = &self.weights.embed.data()[token as usize * d.embed..(token as usize + 1) * d.embed];

        let x: Vec<Real> = match (&state.features, self.variant) {
            (Features::Plain(feat), Variant::Plain) => {
                let mut x = Vec::with_capacity(d.embed + d.feat);
                x.extend_from_slice(e);
                x.extend_from_slice(feat.data());
                x
            }
            (Features::Attention { fmap, proj }, Variant::Attention) => {
                let n = d.fmap_len();
                let attn_u = self.weights.attn_u.as_ref().unwrap();
                let attn_v = self.weights.attn_v.as_ref().unwrap();
                let mut hu = vec![0.0; d.attn];
                kernels::matmul(&state.h, attn_u.data(), 1, d.hidden, d.attn, &mut hu);
                // scores_i = tanh(proj_i + hu) . attn_v
                let mut act = vec![0.0; n * d.attn];
                for (row, arow) in proj.data().chunks(d.attn).zip(act.chunks_mut(d.attn)) {
                    for ((a, &p), &huv) in arow.iter_mut().zip(row).zip(&hu) {
                        *a = (p + huv).tanh();
                    }
                }
                let mut scores = vec![0.0; n];
                kernels::matmul(&act, attn_v.data(), n, d.attn, 1, &mut scores);
                let mut alpha = vec![0.0; n];
                kernels::softmax_rows(&scores, n, &mut alpha);
                let mut ctx = vec![0.0; d.conv2];
                kernels::matmul(&alpha, fmap.data(), 1, n, d.conv2, &mut ctx);
                let mut x = Vec::with_capacity(d.embed + d.conv2);
                x.extend_from_slice(e);
                x.extend_from_slice(&ctx);
                x
            }
            _ => {
                return Err(Error::shapes(
                    "decode_step",
                    "decoder state came from a different model variant".to_string(),
                ))
            }
        };

        // gates = [x, h] . lstm_w + lstm_b
        let lstm_in = d.lstm_in(self.variant);
        let mut xh = Vec::with_capacity(lstm_in + d.hidden);
        xh.extend_from_slice(&x);
        xh.extend_from_slice(&state.h);
        let mut gates = vec![0.0; 4 * d.hidden];
        kernels::matmul(
            &xh,
            self.weights.lstm_w.data(),
            1,
            lstm_in + d.hidden,
            4 * d.hidden,
            &mut gates,
        );
        for (g, b) in gates.iter_mut().zip(self.weights.lstm_b.data()) {
            *g += b;
        }
        let hdim = d.hidden;
        let mut new_c = vec![0.0; hdim];
        let mut new_h = vec![0.0; hdim];
        for i in 0..hdim {
            let ig = kernels::sigmoid(gates[i]);
            let fg = kernels::sigmoid(gates[hdim + i]);
            let og = kernels::sigmoid(gates[2 * hdim + i]);
            let gg = gates[3 * hdim + i].tanh();
            new_c[i] = fg * state.c[i] + ig * gg;
            new_h[i] = og * new_c[i].tanh();
        }
        let mut logits = vec![0.0; v];
        kernels::matmul(&new_h, self.weights.out_w.data(), 1, hdim, v, &mut logits);
        for (z, b) in logits.iter_mut().zip(self.weights.out_b.data()) {
            *z += b;
        }
        Ok((
            Tensor::new(vec![v], logits),
            DecoderState {
                h: new_h,
                c: new_c,
                features: state.features.clone(),
            },
        ))
    }

    /// Teacher-forced logits `z_2..z_N` for a caption, feeding
    /// `S_1..S_{N-1}`.
    pub fn teacher_forced_logits(&self, image: &Image, caption: &super::Caption) -> Result<Vec<Tensor>> {
        let features = self.encode(image)?;
        let mut state = self.init_state(&features);
        let mut logits = Vec::with_capacity(caption.len() - 1);
        for &token in &caption.ids()[..caption.len() - 1] {
            let (z, next) = self.decode_step(&state, token)?;
            logits.push(z);
            state = next;
        }
        Ok(logits)
    }

    /// `log P(S | image)` under teacher forcing: the sum over
    /// `t = 2..=N` of per-step log-softmax terms.
    pub fn caption_log_prob(&self, image: &Image, caption: &super::Caption) -> Result<Real> {
        let logits = self.teacher_forced_logits(image, caption)?;
        let mut total = 0.0;
        for (z, &token) in logits.iter().zip(&caption.ids()[1..]) {
            total += z.data()[token as usize] - kernels::log_sum_exp(z.data());
        }
        Ok(total)
    }
}
