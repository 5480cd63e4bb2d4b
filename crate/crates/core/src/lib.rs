//! Adversarial example crafting for a toy encoder-decoder image captioner.
//!
//! The crate bundles five pieces:
//!
//! - [`tensor`]: a dense-tensor engine with reverse-mode autodiff and ADAM,
//!   generic over the scalar type;
//! - [`synth`]: a procedural generator of rendered geometric scenes with
//!   template captions;
//! - [`captioner`]: a small CNN encoder + LSTM decoder captioning model
//!   (plain and attention variants) with training, greedy and beam
//!   inference;
//! - [`attack`]: targeted caption / targeted keyword perturbation search
//!   under a tanh-reparameterized L2 penalty, plus classifier-only
//!   baselines (iterative FGSM and a margin-loss L2 attack);
//! - [`metrics`]: BLEU-1..4, ROUGE-L and exact-match METEOR, with
//!   transfer statistics between two models.
//!
//! All math runs on `f64` through the concrete aliases exported below.

pub mod attack;
pub mod captioner;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete scalar type used across the artifact.
pub type Real = f64;

/// Dense tensor over [`Real`].
pub type Tensor = tensor::Tensor<Real>;
/// Autodiff tape over [`Real`].
pub type Tape = tensor::tape::Tape<Real>;
/// Gradient map over [`Real`].
pub type Gradients = tensor::tape::Gradients<Real>;
/// ADAM state over [`Real`].
pub type AdamState = tensor::adam::AdamState<Real>;

pub use tensor::tape::NodeId;

/// Images are `[H, W, 3]` tensors with entries in `[-1, 1]`.
pub type Image = Tensor;
