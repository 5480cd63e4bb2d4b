//! Procedural image-caption pairs: rendered geometric scenes on a 3x3
//! grid with template captions.

mod dataset;
mod ppm;
mod render;

pub use dataset::{generate, DatasetManifest, ManifestEntry, Split};
pub use ppm::{read_ppm, write_ppm};
pub use render::{render, IMG_CHANNELS, IMG_SIZE};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    pub fn from_word(w: &str) -> Option<Shape> {
        Shape::ALL.into_iter().find(|s| s.word() == w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn from_word(w: &str) -> Option<Color> {
        Color::ALL.into_iter().find(|c| c.word() == w)
    }

    /// RGB values before quantization. Saturation stays below 1 so the
    /// 256-level grid never produces a pixel exactly at the box edge.
    pub fn rgb(self) -> [f64; 3] {
        const HI: f64 = 0.9;
        const LO: f64 = -0.9;
        match self {
            Color::Red => [HI, LO, LO],
            Color::Green => [LO, HI, LO],
            Color::Blue => [LO, LO, HI],
            Color::Yellow => [HI, HI, LO],
        }
    }
}

/// Spatial relation of the first object relative to the second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    Above,
    Below,
    LeftOf,
    RightOf,
}

impl Relation {
    pub const ALL: [Relation; 4] = [
        Relation::Above,
        Relation::Below,
        Relation::LeftOf,
        Relation::RightOf,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::LeftOf => "left-of",
            Relation::RightOf => "right-of",
        }
    }
}

/// Grid cell on the 3x3 layout, `0..9` row-major.
pub type Cell = u8;

pub const GRID: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub cell: Cell,
}

/// One or two objects on the grid; two-object scenes carry the
/// relation of the first object to the second, which must agree with
/// their cells (same column for above/below, same row for left/right).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub relation: Option<Relation>,
}

impl Scene {
    pub fn single(shape: Shape, color: Color, cell: Cell) -> Scene {
        Scene {
            objects: vec![SceneObject { shape, color, cell }],
            relation: None,
        }
    }

    pub fn pair(a: SceneObject, b: SceneObject, relation: Relation) -> Scene {
        Scene {
            objects: vec![a, b],
            relation: Some(relation),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.objects.len(), self.relation) {
            (1, None) => {}
            (1, Some(_)) => {
                return Err(Error::InvalidScene(
                    "single-object scene carries a relation".into(),
                ))
            }
            (2, Some(rel)) => {
                let (a, b) = (&self.objects[0], &self.objects[1]);
                if a.cell == b.cell {
                    return Err(Error::InvalidScene("objects share a cell".into()));
                }
                let (ra, ca) = (a.cell / GRID as u8, a.cell % GRID as u8);
                let (rb, cb) = (b.cell / GRID as u8, b.cell % GRID as u8);
                let consistent = match rel {
                    Relation::Above => ca == cb && ra < rb,
                    Relation::Below => ca == cb && ra > rb,
                    Relation::LeftOf => ra == rb && ca < cb,
                    Relation::RightOf => ra == rb && ca > cb,
                };
                if !consistent {
                    return Err(Error::InvalidScene(format!(
                        "relation {:?} inconsistent with cells {} and {}",
                        rel, a.cell, b.cell
                    )));
                }
            }
            (2, None) => {
                return Err(Error::InvalidScene(
                    "two-object scene is missing its relation".into(),
                ))
            }
            (n, _) => return Err(Error::InvalidScene(format!("{n} objects (must be 1 or 2)"))),
        }
        for o in &self.objects {
            if o.cell as usize >= GRID * GRID {
                return Err(Error::InvalidScene(format!("cell {} out of grid", o.cell)));
            }
        }
        Ok(())
    }

    /// Deterministic template caption.
    ///
    /// `"a <color> <shape>"` for one object,
    /// `"a <color> <shape> <relation> a <color> <shape>"` for two.
    pub fn caption(&self) -> String {
        let o = &self.objects[0];
        match self.relation {
            None => format!("a {} {}", o.color.word(), o.shape.word()),
            Some(rel) => {
                let p = &self.objects[1];
                format!(
                    "a {} {} {} a {} {}",
                    o.color.word(),
                    o.shape.word(),
                    rel.word(),
                    p.color.word(),
                    p.shape.word()
                )
            }
        }
    }

    /// Class label for the baseline classifier head: the subject
    /// object's color, one of 4 classes.
    pub fn class_label(&self) -> u8 {
        Color::ALL
            .iter()
            .position(|&c| c == self.objects[0].color)
            .unwrap() as u8
    }
}

/// Recovers (color, shape) from a single-object template caption.
pub fn parse_single_caption(caption: &str) -> Option<(Color, Shape)> {
    let words: Vec<&str> = caption.split_whitespace().collect();
    match words.as_slice() {
        ["a", color, shape] => Some((Color::from_word(color)?, Shape::from_word(shape)?)),
        _ => None,
    }
}

/// All 108 single-object scenes in a fixed enumeration order.
pub fn all_single_scenes() -> Vec<Scene> {
    let mut scenes = Vec::with_capacity(108);
    for shape in Shape::ALL {
        for color in Color::ALL {
            for cell in 0..(GRID * GRID) as u8 {
                scenes.push(Scene::single(shape, color, cell));
            }
        }
    }
    scenes
}

/// Closed-class words of the template grammar; keyword extraction
/// filters these out so keywords are always content words.
pub fn stopwords() -> Vec<&'static str> {
    let mut s = vec!["a"];
    s.extend(Relation::ALL.iter().map(|r| r.word()));
    s
}

/// Every word the caption templates can produce.
pub fn template_vocabulary() -> Vec<String> {
    let mut words: Vec<String> = vec!["a".to_string()];
    words.extend(Color::ALL.iter().map(|c| c.word().to_string()));
    words.extend(Shape::ALL.iter().map(|s| s.word().to_string()));
    words.extend(Relation::ALL.iter().map(|r| r.word().to_string()));
    words
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn single_caption_template() {
        let s = Scene::single(Shape::Circle, Color::Red, 4);
        assert_eq!(s.caption(), "a red circle");
        s.validate().unwrap();
    }

    #[test]
    fn pair_caption_has_seven_words() {
        let s = Scene::pair(
            SceneObject {
                shape: Shape::Circle,
                color: Color::Red,
                cell: 1,
            },
            SceneObject {
                shape: Shape::Square,
                color: Color::Blue,
                cell: 4,
            },
            Relation::Above,
        );
        s.validate().unwrap();
        assert_eq!(s.caption(), "a red circle above a blue square");
        assert_eq!(s.caption().split_whitespace().count(), 7);
    }

    #[test]
    fn zero_object_scene_rejected() {
        let s = Scene {
            objects: vec![],
            relation: None,
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn inconsistent_relation_rejected() {
        let s = Scene::pair(
            SceneObject {
                shape: Shape::Circle,
                color: Color::Red,
                cell: 4,
            },
            SceneObject {
                shape: Shape::Square,
                color: Color::Blue,
                cell: 1,
            },
            Relation::Above, // cell 4 is below cell 1, not above
        );
        assert!(s.validate().is_err());
    }

    #[test]
    fn caption_roundtrip_for_single_scenes() {
        for scene in all_single_scenes() {
            let (color, shape) = parse_single_caption(&scene.caption()).unwrap();
            assert_eq!(color, scene.objects[0].color);
            assert_eq!(shape, scene.objects[0].shape);
        }
    }

    #[test]
    fn template_vocabulary_is_small() {
        // Enumerating every template caption must stay within the
        // ~40-word budget; the actual grammar uses 12 words.
        let mut words = BTreeSet::new();
        for scene in all_single_scenes() {
            words.extend(scene.caption().split_whitespace().map(String::from));
        }
        for rel in Relation::ALL {
            for c1 in Color::ALL {
                for s1 in Shape::ALL {
                    for c2 in Color::ALL {
                        for s2 in Shape::ALL {
                            let cap = format!(
                                "a {} {} {} a {} {}",
                                c1.word(),
                                s1.word(),
                                rel.word(),
                                c2.word(),
                                s2.word()
                            );
                            words.extend(cap.split_whitespace().map(String::from));
                        }
                    }
                }
            }
        }
        assert!(words.len() <= 40, "vocabulary has {} words", words.len());
        assert_eq!(words.len(), template_vocabulary().len());
    }
}
