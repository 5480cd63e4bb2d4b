//! Seeded dataset manifests over the scene space.

use super::{all_single_scenes, Cell, Color, Relation, Scene, SceneObject, Shape, GRID};
use crate::error::{Error, Result};
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    /// Relative image path once rendered to disk; absent for in-memory use.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    pub caption: String,
    pub scene: Scene,
    pub class_label: u8,
    pub split: Split,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Number of single-object scenes reserved for the validation split so
/// both splits see the full template grammar.
const VAL_SINGLES: usize = 8;

/// Appearance order making the subject choice canonical: for a given
/// pixel configuration exactly one caption exists. Without this rule
/// the same image would carry both "x above y" and "y below x".
fn appearance_key(o: &SceneObject) -> (usize, usize, Cell) {
    (
        Color::ALL.iter().position(|&c| c == o.color).unwrap(),
        Shape::ALL.iter().position(|&s| s == o.shape).unwrap(),
        o.cell,
    )
}

fn sample_pair_scene(rng: &mut impl Rng) -> Scene {
    // Cell geometry first (a shared column or row), then appearances;
    // the subject is the canonically smaller object and the relation
    // is derived from the subject's position.
    let g = GRID as u8;
    let vertical = rng.gen_bool(0.5);
    let lane = rng.gen_range(0..g);
    let p1 = rng.gen_range(0..g - 1);
    let p2 = rng.gen_range(p1 + 1..g);
    let (cell_hi, cell_lo) = if vertical {
        (p1 * g + lane, p2 * g + lane) // upper row index first
    } else {
        (lane * g + p1, lane * g + p2) // left column index first
    };
    let obj = |rng: &mut dyn rand::RngCore, cell: Cell| SceneObject {
        shape: Shape::ALL[rng.gen_range(0..Shape::ALL.len())],
        color: Color::ALL[rng.gen_range(0..Color::ALL.len())],
        cell,
    };
    let a = obj(rng, cell_hi);
    let b = obj(rng, cell_lo);
    let (subject, object) = if appearance_key(&a) <= appearance_key(&b) {
        (a, b)
    } else {
        (b, a)
    };
    let rel = if vertical {
        if subject.cell == cell_hi {
            Relation::Above
        } else {
            Relation::Below
        }
    } else if subject.cell == cell_hi {
        Relation::LeftOf
    } else {
        Relation::RightOf
    };
    Scene::pair(subject, object, rel)
}

/// Builds a seeded manifest of `n_train` + `n_val` distinct scenes.
///
/// Single-object scenes are stratified: nearly all of them go to the
/// train split (so word and scene coverage stays dense), a fixed
/// handful to val. The remainder of both splits is filled with
/// uniformly sampled two-object scenes, distinct across the whole
/// manifest.
pub fn generate(seed: u64, n_train: usize, n_val: usize) -> Result<DatasetManifest> {
    if n_train == 0 || n_val == 0 {
        return Err(Error::InvalidConfig(
            "n_train and n_val must both be positive".into(),
        ));
    }
    let mut rng = rng::stream(seed, "dataset");

    let mut singles = all_single_scenes();
    singles.shuffle(&mut rng);

    let val_singles = VAL_SINGLES.min(n_val).min(singles.len());
    let train_singles = (singles.len() - val_singles).min(n_train.div_ceil(3));

    let mut seen: HashSet<Scene> = HashSet::new();
    let mut train_scenes: Vec<Scene> = Vec::with_capacity(n_train);
    let mut val_scenes: Vec<Scene> = Vec::with_capacity(n_val);

    for scene in singles.iter().take(train_singles) {
        seen.insert(scene.clone());
        train_scenes.push(scene.clone());
    }
    for scene in singles.iter().skip(train_singles).take(val_singles) {
        seen.insert(scene.clone());
        val_scenes.push(scene.clone());
    }

    let mut fill = |target: &mut Vec<Scene>, n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut guard = 0usize;
        while target.len() < n {
            let scene = sample_pair_scene(rng);
            if seen.insert(scene.clone()) {
                target.push(scene);
            }
            guard += 1;
            assert!(
                guard < 1_000_000,
                "scene space exhausted: requested more distinct scenes than exist"
            );
        }
    };
    fill(&mut train_scenes, n_train, &mut rng);
    fill(&mut val_scenes, n_val, &mut rng);

    train_scenes.shuffle(&mut rng);
    val_scenes.shuffle(&mut rng);

    let mut entries = Vec::with_capacity(n_train + n_val);
    for (split, scenes) in [(Split::Train, train_scenes), (Split::Val, val_scenes)] {
        for scene in scenes {
            entries.push(ManifestEntry {
                id: entries.len(),
                image_path: None,
                caption: scene.caption(),
                class_label: scene.class_label(),
                scene,
                split,
            });
        }
    }
    Ok(DatasetManifest {
        seed,
        n_train,
        n_val,
        entries,
    })
}
