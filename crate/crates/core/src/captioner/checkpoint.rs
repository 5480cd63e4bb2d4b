//! Single-document JSON checkpoints.
//!
//! Weights are written as nested arrays of decimal floats; the float
//! formatting round-trips bit-exactly.

use super::model::{CaptionerModel, Dims, Variant};
use super::{Vocabulary, TRAIN_GATE_ACCURACY};
use crate::error::{Error, Result};
use crate::Tensor;
use serde_json::{json, Map, Value};
use std::path::Path;

pub const FORMAT: &str = "captioner-checkpoint-v1";

#[derive(Clone, Debug)]
pub struct CheckpointMeta {
    pub val_accuracy: f64,
    pub gated: bool,
}

fn nest(shape: &[usize], data: &[f64]) -> Value {
    if shape.is_empty() {
        return json!(data[0]);
    }
    if shape.len() == 1 {
        return Value::Array(data.iter().map(|&v| json!(v)).collect());
    }
    let chunk = data.len() / shape[0];
    Value::Array(
        data.chunks(chunk)
            .map(|c| nest(&shape[1..], c))
            .collect(),
    )
}

fn flatten(value: &Value, out: &mut Vec<f64>) -> Result<()> {
    match value {
        Value::Array(items) => {
            for item in items {
                flatten(item, out)?;
            }
            Ok(())
        }
        Value::Number(n) => {
            out.push(
                n.as_f64()
                    .ok_or_else(|| Error::BadFormat("non-float weight entry".into()))?,
            );
            Ok(())
        }
        other => Err(Error::BadFormat(format!("unexpected weight node {other}"))),
    }
}

fn tensor_entry(t: &Tensor) -> Value {
    json!({ "shape": t.shape(), "data": nest(t.shape(), t.data()) })
}

fn entry_tensor(v: &Value, name: &str) -> Result<Tensor> {
    let shape: Vec<usize> = v
        .get("shape")
        .and_then(|s| serde_json::from_value(s.clone()).ok())
        .ok_or_else(|| Error::BadFormat(format!("weight {name}: missing shape")))?;
    let mut data = Vec::new();
    flatten(
        v.get("data")
            .ok_or_else(|| Error::BadFormat(format!("weight {name}: missing data")))?,
        &mut data,
    )?;
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::BadFormat(format!(
            "weight {name}: shape {shape:?} does not match {} values",
            data.len()
        )));
    }
    Ok(Tensor::new(shape, data))
}

pub fn to_value(model: &CaptionerModel, val_accuracy: f64) -> Value {
    let mut weights = Map::new();
    for name in model.param_names() {
        weights.insert(name.to_string(), tensor_entry(model.param(name).unwrap()));
    }
    json!({
        "format": FORMAT,
        "variant": model.variant,
        "dims": model.dims,
        "vocab": model.vocab.words(),
        "val_accuracy": val_accuracy,
        "gated": val_accuracy >= TRAIN_GATE_ACCURACY,
        "weights": Value::Object(weights),
    })
}

pub fn save(model: &CaptionerModel, val_accuracy: f64, path: &Path) -> Result<()> {
    let value = to_value(model, val_accuracy);
    std::fs::write(path, serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

pub fn from_value(value: &Value) -> Result<(CaptionerModel, CheckpointMeta)> {
    if value.get("format").and_then(Value::as_str) != Some(FORMAT) {
        return Err(Error::BadFormat("not a captioner checkpoint".into()));
    }
    let variant: Variant = serde_json::from_value(
        value
            .get("variant")
            .cloned()
            .ok_or_else(|| Error::BadFormat("missing variant".into()))?,
    )?;
    let dims: Dims = serde_json::from_value(
        value
            .get("dims")
            .cloned()
            .ok_or_else(|| Error::BadFormat("missing dims".into()))?,
    )?;
    let words: Vec<String> = serde_json::from_value(
        value
            .get("vocab")
            .cloned()
            .ok_or_else(|| Error::BadFormat("missing vocab".into()))?,
    )?;
    // Reconstruct through from_words to revalidate the reserved slots;
    // the first three entries are the specials themselves.
    let vocab = Vocabulary::from_words(words.iter().skip(3).cloned());
    if vocab.words() != words {
        return Err(Error::BadFormat("vocabulary list is not canonical".into()));
    }
    let mut model = CaptionerModel::new_random(variant, vocab, dims, 0);
    let weights = value
        .get("weights")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::BadFormat("missing weights".into()))?;
    for name in model.param_names() {
        let entry = weights
            .get(name)
            .ok_or_else(|| Error::BadFormat(format!("missing weight {name}")))?;
        let tensor = entry_tensor(entry, name)?;
        let slot = model.param_mut(name).unwrap();
        if slot.shape() != tensor.shape() {
            return Err(Error::BadFormat(format!(
                "weight {name}: shape {:?} does not match model {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        *slot = tensor;
    }
    let val_accuracy = value
        .get("val_accuracy")
        .and_then(Value::as_f64)
        .unwrap_or(0.0);
    let gated = value.get("gated").and_then(Value::as_bool).unwrap_or(false);
    Ok((model, CheckpointMeta { val_accuracy, gated }))
}

pub fn load(path: &Path) -> Result<(CaptionerModel, CheckpointMeta)> {
    let text = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text)?;
    from_value(&value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captioner::Variant;
    use crate::synth;

    fn model(variant: Variant) -> CaptionerModel {
        let vocab = Vocabulary::from_words(synth::template_vocabulary());
        CaptionerModel::new_random(variant, vocab, Dims::default(), 17)
    }

    #[test]
    fn roundtrip_is_bit_exact_for_both_variants() {
        for variant in [Variant::Plain, Variant::Attention] {
            let m = model(variant);
            let value = to_value(&m, 0.93);
            let (back, meta) = from_value(&value).unwrap();
            assert!(meta.gated);
            assert_eq!(meta.val_accuracy, 0.93);
            assert_eq!(back.vocab, m.vocab);
            for name in m.param_names() {
                let a = m.param(name).unwrap();
                let b = back.param(name).unwrap();
                assert_eq!(a.shape(), b.shape(), "{name}");
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert_eq!(x.to_bits(), y.to_bits(), "{name}");
                }
            }
            // Serializing the reloaded model reproduces the document.
            let again = to_value(&back, meta.val_accuracy);
            assert_eq!(
                serde_json::to_string(&value).unwrap(),
                serde_json::to_string(&again).unwrap()
            );
        }
    }

    #[test]
    fn save_and_load_through_disk() {
        let m = model(Variant::Plain);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&m, 0.5, &path).unwrap();
        let (_, meta) = load(&path).unwrap();
        assert!(!meta.gated);
    }

    #[test]
    fn garbage_is_rejected() {
        let v = json!({"format": "something-else"});
        assert!(from_value(&v).is_err());
    }
}
