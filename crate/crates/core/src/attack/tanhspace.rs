//! Box-constraint reparameterization.
//!
//! Optimizing `w` with `image = tanh(w + arctanh(I))` keeps every pixel
//! inside the box by construction.

use crate::{Image, Tensor};

/// Inputs to arctanh are clipped into this open interval to avoid
/// infinities for pixels sitting exactly on the box edge.
pub const ATANH_CLIP: f64 = 1e-6;

/// `y = arctanh(clip(I))`, elementwise.
pub fn to_tanh_space(image: &Image) -> Tensor {
    let data: Vec<f64> = image
        .data()
        .iter()
        .map(|&v| v.clamp(-1.0 + ATANH_CLIP, 1.0 - ATANH_CLIP).atanh())
        .collect();
    Tensor::new(image.shape().to_vec(), data)
}

/// `image = tanh(w + y)`, elementwise.
pub fn from_tanh_space(w: &Tensor, y: &Tensor) -> Image {
    assert_eq!(w.shape(), y.shape(), "w and y must share the image shape");
    let data: Vec<f64> = w
        .data()
        .iter()
        .zip(y.data())
        .map(|(&wv, &yv)| (wv + yv).tanh())
        .collect();
    Tensor::new(w.shape().to_vec(), data)
}
