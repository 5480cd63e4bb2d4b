//! Dataset and image I/O shared by the commands.

use advcap::captioner::{Caption, Vocabulary};
use advcap::synth::{self, DatasetManifest, Split};
use advcap::{Image, Tensor};
use anyhow::{bail, Context, Result};
use serde_json::Value;
use std::path::Path;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Loads a manifest written by `gen-data`.
pub fn load_manifest(data_dir: &Path) -> Result<DatasetManifest> {
    let path = data_dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads one split as (image, caption) pairs, rendering from scene
/// specs (the PPM files are previews; scenes are authoritative).
pub fn load_split(
    manifest: &DatasetManifest,
    split: Split,
    vocab: &Vocabulary,
) -> Result<Vec<(Image, Caption)>> {
    manifest
        .split(split)
        .map(|e| {
            let img = synth::render(&e.scene)?;
            let cap = vocab.encode(&e.caption)?;
            Ok((img, cap))
        })
        .collect()
}

/// Loads one split as (image, class label) pairs for the baseline head.
pub fn load_split_labeled(
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Vec<(Image, u8)>> {
    manifest
        .split(split)
        .map(|e| Ok((synth::render(&e.scene)?, e.class_label)))
        .collect()
}

/// The vocabulary used across the artifact: every template word.
pub fn template_vocab() -> Vocabulary {
    Vocabulary::from_words(synth::template_vocabulary())
}

/// Serializes an image tensor as a flat array with shape, full
/// precision.
pub fn image_to_json(image: &Image) -> Value {
    serde_json::json!({
        "shape": image.shape(),
        "data": image.data(),
    })
}

pub fn image_from_json(v: &Value) -> Result<Image> {
    let shape: Vec<usize> = serde_json::from_value(
        v.get("shape").context("image json: missing shape")?.clone(),
    )?;
    let data: Vec<f64> = serde_json::from_value(
        v.get("data").context("image json: missing data")?.clone(),
    )?;
    if shape.iter().product::<usize>() != data.len() {
        bail!("image json: shape/data mismatch");
    }
    Ok(Tensor::new(shape, data))
}
