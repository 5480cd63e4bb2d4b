//! Targeted caption / targeted keyword perturbation search and the
//! classifier-only baselines.

mod baseline;
mod classifier;
mod losses;
mod run;
mod tanhspace;

pub use baseline::{cw_classifier, ifgsm_classifier, BaselineResult, CwParams, IfgsmParams};
pub use classifier::{head_accuracy, train_head, ClassifierHead, HeadTrainConfig};
pub use losses::{
    caption_logits_loss_on_tape, caption_logprob_loss_on_tape, keyword_logits_loss_on_tape,
    keyword_logprob_loss_on_tape, loss_logits_caption, loss_logits_keywords,
    loss_logprob_caption, loss_logprob_keywords,
};
pub use run::{binary_search_c, count_keywords, run_attack, AttackResult, IterRecord, RunRecord};
pub use tanhspace::{from_tanh_space, to_tanh_space, ATANH_CLIP};

use crate::captioner::{Caption, Vocabulary};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    CaptionLogits,
    CaptionLogprob,
    KeywordLogits,
    KeywordLogprob,
}

impl AttackMode {
    pub fn is_keyword(self) -> bool {
        matches!(self, AttackMode::KeywordLogits | AttackMode::KeywordLogprob)
    }
}

/// All attack hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackConfig {
    pub mode: AttackMode,
    /// Loss weight `c` (the starting point for the c search).
    pub c: f64,
    /// Confidence margin of the ramp losses.
    pub epsilon: f64,
    pub lr: f64,
    pub max_iters: usize,
    pub binary_steps: usize,
    /// Keyword modes re-run inference every this many iterations.
    pub refresh_period: usize,
    /// Gate constant masking collided keyword positions; far above any
    /// logit this model produces.
    pub gate_a: f64,
    /// Large-finite surrogate for a fully-masked keyword in the
    /// log-prob keyword loss.
    pub masked_penalty: f64,
    /// Keep the per-iteration (objective, loss, distortion) trace.
    pub record_trace: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            mode: AttackMode::CaptionLogits,
            c: 1.0,
            epsilon: 1.0,
            lr: 0.005,
            max_iters: 1000,
            binary_steps: 5,
            refresh_period: 5,
            gate_a: 1e5,
            masked_penalty: 1e5,
            record_trace: true,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::InvalidConfig(format!("c must be > 0, got {}", self.c)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 || self.binary_steps == 0 || self.refresh_period == 0 {
            return Err(Error::InvalidConfig(
                "max_iters, binary_steps and refresh_period must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.gate_a > 0.0) || !(self.masked_penalty > 0.0) {
            return Err(Error::InvalidConfig(
                "lr, gate_a and masked_penalty must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// 1 to 3 distinct content-word keyword ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    ids: Vec<u32>,
}

impl KeywordSet {
    pub fn new(ids: Vec<u32>, vocab: &Vocabulary) -> Result<KeywordSet> {
        if ids.is_empty() || ids.len() > 3 {
            return Err(Error::InvalidKeywords(format!(
                "need 1..=3 keywords, got {}",
                ids.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &id in &ids {
            if id as usize >= vocab.size() {
                return Err(Error::InvalidKeywords(format!("id {id} out of vocabulary")));
            }
            if vocab.is_special(id) {
                return Err(Error::InvalidKeywords(
                    "START/END/PAD cannot be keywords".into(),
                ));
            }
            if !seen.insert(id) {
                return Err(Error::InvalidKeywords(format!("duplicate keyword id {id}")));
            }
        }
        Ok(KeywordSet { ids })
    }

    pub fn from_words(words: &[&str], vocab: &Vocabulary) -> Result<KeywordSet> {
        let ids = words
            .iter()
            .map(|w| {
                vocab
                    .id_of(w)
                    .ok_or_else(|| Error::InvalidKeywords(format!("unknown word {w:?}")))
            })
            .collect::<Result<Vec<u32>>>()?;
        KeywordSet::new(ids, vocab)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// What the attack drives the captioner toward.
#[derive(Clone, Debug)]
pub enum AttackTarget {
    Caption(Caption),
    Keywords(KeywordSet),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn keyword_set_rules() {
        let vocab = Vocabulary::from_words(synth::template_vocabulary());
        let red = vocab.id_of("red").unwrap();
        let circle = vocab.id_of("circle").unwrap();
        assert!(KeywordSet::new(vec![], &vocab).is_err());
        assert!(KeywordSet::new(vec![red, red], &vocab).is_err());
        assert!(KeywordSet::new(vec![0], &vocab).is_err());
        assert!(KeywordSet::new(vec![red, circle], &vocab).is_ok());
        assert!(KeywordSet::new(vec![red, circle, 3, 4], &vocab).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = AttackConfig::default();
        cfg.validate().unwrap();
        cfg.c = 0.0;
        assert!(cfg.validate().is_err());
        cfg.c = 1.0;
        cfg.epsilon = -0.5;
        assert!(cfg.validate().is_err());
    }
}
