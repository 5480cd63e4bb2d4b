//! Tape-based forward pass, mirroring [`super::model`] op for op.

use super::model::{CaptionerModel, Variant};
use crate::error::Result;
use crate::{NodeId, Real, Tape, Tensor};

/// Node ids of the model weights on a tape.
#[derive(Clone, Debug)]
pub struct TapeWeights {
    pub conv1_k: NodeId,
    pub conv1_b: NodeId,
    pub conv2_k: NodeId,
    pub conv2_b: NodeId,
    pub fc_w: Option<NodeId>,
    pub fc_b: Option<NodeId>,
    pub init_h_w: NodeId,
    pub init_h_b: NodeId,
    pub init_c_w: NodeId,
    pub init_c_b: NodeId,
    pub embed: NodeId,
    pub lstm_w: NodeId,
    pub lstm_b: NodeId,
    pub out_w: NodeId,
    pub out_b: NodeId,
    pub attn_w: Option<NodeId>,
    pub attn_u: Option<NodeId>,
    pub attn_v: Option<NodeId>,
}

/// Encoder output nodes.
#[derive(Clone, Copy, Debug)]
pub enum EncodedNodes {
    Plain {
        feat: NodeId,
    },
    Attention {
        fmap: NodeId,
        proj: NodeId,
    },
}

impl CaptionerModel {
    /// Places all weights on the tape, as variables when `trainable`.
    pub fn weights_on_tape(&self, tape: &mut Tape, trainable: bool) -> TapeWeights {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.var(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let w = &self.weights;
        TapeWeights {
            conv1_k: put(&w.conv1_k),
            conv1_b: put(&w.conv1_b),
            conv2_k: put(&w.conv2_k),
            conv2_b: put(&w.conv2_b),
            fc_w: w.fc_w.as_ref().map(&mut put),
            fc_b: w.fc_b.as_ref().map(&mut put),
            init_h_w: put(&w.init_h_w),
            init_h_b: put(&w.init_h_b),
            init_c_w: put(&w.init_c_w),
            init_c_b: put(&w.init_c_b),
            embed: put(&w.embed),
            lstm_w: put(&w.lstm_w),
            lstm_b: put(&w.lstm_b),
            out_w: put(&w.out_w),
            out_b: put(&w.out_b),
            attn_w: w.attn_w.as_ref().map(&mut put),
            attn_u: w.attn_u.as_ref().map(&mut put),
            attn_v: w.attn_v.as_ref().map(&mut put),
        }
    }

    /// Named parameter node for gradient collection, mirroring
    /// [`CaptionerModel::param_names`].
    pub fn tape_param(&self, tw: &TapeWeights, name: &str) -> Option<NodeId> {
        match name {
            "conv1_k" => Some(tw.conv1_k),
            "conv1_b" => Some(tw.conv1_b),
            "conv2_k" => Some(tw.conv2_k),
            "conv2_b" => Some(tw.conv2_b),
            "fc_w" => tw.fc_w,
            "fc_b" => tw.fc_b,
            "init_h_w" => Some(tw.init_h_w),
            "init_h_b" => Some(tw.init_h_b),
            "init_c_w" => Some(tw.init_c_w),
            "init_c_b" => Some(tw.init_c_b),
            "embed" => Some(tw.embed),
            "lstm_w" => Some(tw.lstm_w),
            "lstm_b" => Some(tw.lstm_b),
            "out_w" => Some(tw.out_w),
            "out_b" => Some(tw.out_b),
            "attn_w" => tw.attn_w,
            "attn_u" => tw.attn_u,
            "attn_v" => tw.attn_v,
            _ => None,
        }
    }

    /// Tape twin of [`CaptionerModel::encode`]; `image` is a `[s,s,3]` node.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        tw: &TapeWeights,
        image: NodeId,
    ) -> Result<EncodedNodes> {
        let d = &self.dims;
        let a1 = tape.conv2d(image, tw.conv1_k, Some(tw.conv1_b), 2, 1)?;
        let a1 = tape.relu(a1);
        let a2 = tape.conv2d(a1, tw.conv2_k, Some(tw.conv2_b), 2, 1)?;
        let a2 = tape.relu(a2);
        let fmap = tape.reshape(a2, &[d.fmap_len(), d.conv2])?;
        match self.variant {
            Variant::Plain => {
                let flat = tape.reshape(fmap, &[1, d.fmap_len() * d.conv2])?;
                let feat = tape.matmul(flat, tw.fc_w.unwrap())?;
                let feat = tape.add(feat, tw.fc_b.unwrap())?;
                Ok(EncodedNodes::Plain { feat })
            }
            Variant::Attention => {
                let proj = tape.matmul(fmap, tw.attn_w.unwrap())?;
                Ok(EncodedNodes::Attention { fmap, proj })
            }
        }
    }

    /// Tape twin of [`CaptionerModel::init_state`]; returns `(h0, c0)`.
    pub fn init_state_on_tape(
        &self,
        tape: &mut Tape,
        tw: &TapeWeights,
        enc: EncodedNodes,
    ) -> Result<(NodeId, NodeId)> {
        let d = &self.dims;
        let x = match enc {
            EncodedNodes::Plain { feat } => feat,
            EncodedNodes::Attention { fmap, .. } => {
                let n = d.fmap_len();
                let mean_row =
                    tape.constant(Tensor::full(&[1, n], 1.0 / n as Real));
                tape.matmul(mean_row, fmap)?
            }
        };
        let h = tape.matmul(x, tw.init_h_w)?;
        let h = tape.add(h, tw.init_h_b)?;
        let h = tape.tanh(h);
        let c = tape.matmul(x, tw.init_c_w)?;
        let c = tape.add(c, tw.init_c_b)?;
        let c = tape.tanh(c);
        Ok((h, c))
    }

    /// Tape twin of [`CaptionerModel::decode_step`]; returns
    /// `(logits, h', c')`.
    pub fn decode_step_on_tape(
        &self,
        tape: &mut Tape,
        tw: &TapeWeights,
        enc: EncodedNodes,
        h: NodeId,
        c: NodeId,
        token: u32,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        let d = &self.dims;
        let e = tape.embed_lookup(tw.embed, &[token as usize])?; // [1, embed]
        let x = match enc {
            EncodedNodes::Plain { feat } => tape.concat(e, feat)?,
            EncodedNodes::Attention { fmap, proj } => {
                let n = d.fmap_len();
                let hu = tape.matmul(h, tw.attn_u.unwrap())?; // [1, attn]
                let ones = tape.constant(Tensor::full(&[n, 1], 1.0));
                let hu_rows = tape.matmul(ones, hu)?; // [n, attn]
                let act = tape.add(proj, hu_rows)?;
                let act = tape.tanh(act);
                let scores = tape.matmul(act, tw.attn_v.unwrap())?; // [n, 1]
                let scores = tape.reshape(scores, &[n])?;
                let alpha = tape.softmax(scores)?;
                let alpha = tape.reshape(alpha, &[1, n])?;
                let ctx = tape.matmul(alpha, fmap)?; // [1, conv2]
                tape.concat(e, ctx)?
            }
        };
        let xh = tape.concat(x, h)?;
        let gates = tape.matmul(xh, tw.lstm_w)?;
        let gates = tape.add(gates, tw.lstm_b)?;
        let hd = d.hidden;
        let ig = tape.slice(gates, 0, hd)?;
        let ig = tape.sigmoid(ig);
        let fg = tape.slice(gates, hd, hd)?;
        let fg = tape.sigmoid(fg);
        let og = tape.slice(gates, 2 * hd, hd)?;
        let og = tape.sigmoid(og);
        let gg = tape.slice(gates, 3 * hd, hd)?;
        let gg = tape.tanh(gg);
        let fc = tape.mul(fg, c)?;
        let igg = tape.mul(ig, gg)?;
        let new_c = tape.add(fc, igg)?;
        let tc = tape.tanh(new_c);
        let new_h = tape.mul(og, tc)?;
        let z = tape.matmul(new_h, tw.out_w)?;
        let z = tape.add(z, tw.out_b)?;
        Ok((z, new_h, new_c))
    }

    /// Teacher-forced logits nodes `z_2..z_N` for the token prefix
    /// `S_1..S_{N-1}` of `tokens`.
    pub fn teacher_forced_logits_on_tape(
        &self,
        tape: &mut Tape,
        tw: &TapeWeights,
        image: NodeId,
        tokens: &[u32],
    ) -> Result<Vec<NodeId>> {
        let enc = self.encode_on_tape(tape, tw, image)?;
        let (mut h, mut c) = self.init_state_on_tape(tape, tw, enc)?;
        let mut out = Vec::with_capacity(tokens.len().saturating_sub(1));
        for &token in &tokens[..tokens.len() - 1] {
            let (z, nh, nc) = self.decode_step_on_tape(tape, tw, enc, h, c, token)?;
            out.push(z);
            h = nh;
            c = nc;
        }
        Ok(out)
    }

    /// `log P(S | image)` as a tape node (sum over `t = 2..=N`).
    pub fn caption_log_prob_on_tape(
        &self,
        tape: &mut Tape,
        tw: &TapeWeights,
        image: NodeId,
        tokens: &[u32],
    ) -> Result<NodeId> {
        let logits = self.teacher_forced_logits_on_tape(tape, tw, image, tokens)?;
        let mut terms = Vec::with_capacity(logits.len());
        for (z, &token) in logits.iter().zip(&tokens[1..]) {
            let zt = tape.gather(*z, token as usize)?;
            let lse = tape.log_sum_exp(*z)?;
            terms.push(tape.sub(zt, lse)?);
        }
        let stacked = tape.stack(&terms)?;
        Ok(tape.sum(stacked))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captioner::{Caption, Vocabulary};
    use crate::synth;

    fn tiny_model(variant: Variant) -> CaptionerModel {
        let vocab = Vocabulary::from_words(synth::template_vocabulary());
        CaptionerModel::new_random(variant, vocab, super::super::Dims::default(), 99)
    }

    fn tiny_image() -> crate::Image {
        synth::render(&synth::Scene::single(
            synth::Shape::Circle,
            synth::Color::Red,
            4,
        ))
        .unwrap()
    }

    #[test]
    fn tape_forward_matches_plain_forward_bitwise() {
        for variant in [Variant::Plain, Variant::Attention] {
            let model = tiny_model(variant);
            let image = tiny_image();
            let caption = model.vocab.encode("a red circle above a blue square").unwrap();

            let fast = model.teacher_forced_logits(&image, &caption).unwrap();

            let mut tape = Tape::new();
            let tw = model.weights_on_tape(&mut tape, false);
            let img = tape.var(image.clone());
            let nodes = model
                .teacher_forced_logits_on_tape(&mut tape, &tw, img, caption.ids())
                .unwrap();

            assert_eq!(fast.len(), nodes.len());
            for (f, n) in fast.iter().zip(&nodes) {
                let t = tape.value(*n);
                assert_eq!(f.data().len(), t.data().len());
                for (a, b) in f.data().iter().zip(t.data()) {
                    assert_eq!(a.to_bits(), b.to_bits(), "variant {variant:?}");
                }
            }
        }
    }

    #[test]
    fn tape_log_prob_matches_plain_log_prob() {
        for variant in [Variant::Plain, Variant::Attention] {
            let model = tiny_model(variant);
            let image = tiny_image();
            let caption = model.vocab.encode("a blue triangle").unwrap();
            let fast = model.caption_log_prob(&image, &caption).unwrap();
            let mut tape = Tape::new();
            let tw = model.weights_on_tape(&mut tape, false);
            let img = tape.var(image.clone());
            let node = model
                .caption_log_prob_on_tape(&mut tape, &tw, img, caption.ids())
                .unwrap();
            assert_eq!(fast.to_bits(), tape.value(node).item().to_bits());
        }
    }

    #[test]
    fn caption_used_for_checks() {
        // Caption::new keeps the invariants the graph code relies on.
        let vocab = Vocabulary::from_words(synth::template_vocabulary());
        let c = vocab.encode("a red circle").unwrap();
        assert_eq!(c.len(), 5);
        assert!(Caption::new(c.ids().to_vec(), vocab.size()).is_ok());
    }
}
