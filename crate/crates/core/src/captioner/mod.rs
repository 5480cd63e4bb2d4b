//! Toy CNN+LSTM captioning model with two decoder variants, training,
//! greedy/beam inference and caption log-probabilities.

pub mod checkpoint;
mod graph;
mod infer;
mod model;
mod train;

pub use graph::{EncodedNodes, TapeWeights};
pub use infer::{infer_beam, infer_greedy, BeamHypothesis};
pub use model::{CaptionerModel, DecoderState, Dims, Features, Variant};
pub use train::{train, EpochStats, TrainConfig, TrainLog, TRAIN_GATE_ACCURACY};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Reserved token ids.
pub const START: u32 = 0;
pub const END: u32 = 1;
pub const PAD: u32 = 2;

const SPECIALS: [&str; 3] = ["<s>", "</s>", "<pad>"];

/// Ordered word list with dense ids; START/END/PAD sit at fixed ids 0..3.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from content words (deduplicated, sorted).
    pub fn from_words<I, S>(words: I) -> Vocabulary
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut content: Vec<String> = words
            .into_iter()
            .map(|w| w.into().to_lowercase())
            .filter(|w| !w.is_empty() && !SPECIALS.contains(&w.as_str()))
            .collect();
        content.sort();
        content.dedup();
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(content);
        Vocabulary { words: all }
    }

    /// Builds a vocabulary from whitespace-tokenized captions.
    pub fn from_corpus<'a, I: IntoIterator<Item = &'a str>>(captions: I) -> Vocabulary {
        Vocabulary::from_words(
            captions
                .into_iter()
                .flat_map(|c| c.split_whitespace().map(|w| w.to_string())),
        )
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn word_of(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(|s| s.as_str())
    }

    pub fn id_of(&self, word: &str) -> Option<u32> {
        self.words.iter().position(|w| w == word).map(|i| i as u32)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn is_special(&self, id: u32) -> bool {
        id < SPECIALS.len() as u32
    }

    /// Lowercases, whitespace-splits and wraps with START/END.
    pub fn encode(&self, text: &str) -> Result<Caption> {
        let mut ids = vec![START];
        for word in text.to_lowercase().split_whitespace() {
            let id = self
                .id_of(word)
                .ok_or_else(|| Error::InvalidCaption(format!("unknown word {word:?}")))?;
            ids.push(id);
        }
        ids.push(END);
        Caption::new(ids, self.size())
    }

    /// Content words of a caption, START/END/PAD stripped.
    pub fn decode_words(&self, caption: &Caption) -> Vec<String> {
        caption
            .ids()
            .iter()
            .filter(|&&id| !self.is_special(id))
            .filter_map(|&id| self.word_of(id).map(String::from))
            .collect()
    }

    pub fn decode_text(&self, caption: &Caption) -> String {
        self.decode_words(caption).join(" ")
    }
}

/// Token-id sequence `S_1..S_N` with `S_1 = START`.
///
/// A well-formed caption ends with END; inference may produce a
/// truncated caption (no END) when it hits the length cap, which is
/// representable but reported by [`Caption::is_terminated`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Caption {
    ids: Vec<u32>,
}

impl Caption {
    /// Strictly validated caption: exactly one START (first), exactly
    /// one END (last), all ids within the vocabulary.
    pub fn new(ids: Vec<u32>, vocab_size: usize) -> Result<Caption> {
        if ids.len() < 2 {
            return Err(Error::InvalidCaption(format!(
                "length {} below START+END",
                ids.len()
            )));
        }
        if ids[0] != START {
            return Err(Error::InvalidCaption("first token must be START".into()));
        }
        if *ids.last().unwrap() != END {
            return Err(Error::InvalidCaption("last token must be END".into()));
        }
        if ids[1..ids.len() - 1]
            .iter()
            .any(|&t| t == START || t == END)
        {
            return Err(Error::InvalidCaption(
                "START/END may only appear at the ends".into(),
            ));
        }
        for &id in &ids {
            if id as usize >= vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab: vocab_size,
                });
            }
        }
        Ok(Caption { ids })
    }

    /// Caption produced by inference; may lack a trailing END.
    pub(crate) fn from_decoded(ids: Vec<u32>) -> Caption {
        debug_assert_eq!(ids.first(), Some(&START));
        Caption { ids }
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

    pub fn is_terminated(&self) -> bool {
        self.ids.last() == Some(&END)
    }

    /// Ids without START/END/PAD.
    pub fn content_ids(&self) -> Vec<u32> {
        self.ids
            .iter()
            .copied()
            .filter(|&id| id != START && id != END && id != PAD)
            .collect()
    }
}
