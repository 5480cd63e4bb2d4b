//! Scratch probe: how fast does training run and converge?
//! Run: cargo run --release -p advcap --example train_probe [variant] [epochs]

use advcap::captioner::{train, Caption, TrainConfig, Variant, Vocabulary};
use advcap::synth::{self, Split};
use advcap::Image;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = match args.get(1).map(|s| s.as_str()) {
        Some("attention") => Variant::Attention,
        _ => Variant::Plain,
    };
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);

    let t0 = Instant::now();
    let manifest = synth::generate(42, 2000, 200).unwrap();
    let vocab = Vocabulary::from_words(synth::template_vocabulary());
    let load = |split| -> Vec<(Image, Caption)> {
        manifest
            .split(split)
            .map(|e| {
                (
                    synth::render(&e.scene).unwrap(),
                    vocab.encode(&e.caption).unwrap(),
                )
            })
            .collect()
    };
    let train_set = load(Split::Train);
    let val_set = load(Split::Val);
    eprintln!("data ready in {:?}", t0.elapsed());

    let cfg = TrainConfig {
        epochs,
        lr: std::env::var("LR").ok().and_then(|s| s.parse().ok()).unwrap_or(3e-3),
        lr_decay: std::env::var("DECAY").ok().and_then(|s| s.parse().ok()).unwrap_or(0.90),
        lr_decay_start: 8,
        seed: 7,
        early_stop_accuracy: Some(0.97),
    };
    let t1 = Instant::now();
    let (_model, log) = train(
        variant,
        vocab,
        Default::default(),
        &train_set,
        &val_set,
        &cfg,
    )
    .unwrap();
    for e in &log.epochs {
        eprintln!(
            "epoch {:>3}  loss {:.4}  val {:.3}  ({:?} elapsed)",
            e.epoch,
            e.mean_loss,
            e.val_accuracy,
            t1.elapsed()
        );
    }
    eprintln!(
        "final val {:.3}, gate {}",
        log.final_val_accuracy, log.gate_passed
    );
}
