//! Synthetic tabletop scenes, their referring expressions, region proposals
//! and dataset partitioning.

mod corpus;
mod generate;
mod io;
mod proposals;
pub mod referring;
mod split;

use serde::{Deserialize, Serialize};

use crate::actuation::ObjectExtent;
use crate::error::{Error, Result};

pub use corpus::{generate_corpus, scene_seed, PARTITIONS, SPLIT_RATIOS};
pub use generate::{generate_expressions, generate_scene, SceneConfig};
pub use io::{load_corpus, load_scene_file, save_corpus, CorpusSplits, SceneFile, SPLITS_FILE};
pub use proposals::{make_proposals, ProposalMode, ProposalSet};
pub use referring::{ExpressionKind, GroundedExpression};
pub use split::{split_by_duplicates, split_dataset, Partitions};

/// Axis-aligned box in pixel coordinates. Serialized as
/// `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !(b.is_finite() && x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidArgument(format!("degenerate box {:?}", b.to_array())));
        }
        Ok(b)
    }

    fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union, 0 for disjoint boxes.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    pub fn inside(&self, width: f64, height: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }

    /// Euclidean gap between the two boxes, 0 when they touch or overlap.
    pub fn gap(&self, other: &BoundingBox) -> f64 {
        let dx = (other.x_min - self.x_max).max(self.x_min - other.x_max).max(0.0);
        let dy = (other.y_min - self.y_max).max(self.y_min - other.y_max).max(0.0);
        dx.hypot(dy)
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

macro_rules! word_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => [$($word:literal),+]),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            /// Surface words that name this value; the first is canonical.
            pub fn words(self) -> &'static [&'static str] {
                match self {
                    $($name::$variant => &[$($word),+]),+
                }
            }

            pub fn from_word(word: &str) -> Option<Self> {
                Self::ALL.iter().copied().find(|v| v.words().contains(&word))
            }

            pub fn index(self) -> usize {
                Self::ALL.iter().position(|v| *v == self).unwrap()
            }
        }
    };
}

word_enum!(Category {
    Cup => ["cup", "mug"],
    Bottle => ["bottle", "flask"],
    Glass => ["glass", "tumbler"],
    Can => ["can", "tin"],
    Book => ["book", "novel"],
    Box => ["box", "carton"],
});

word_enum!(Color {
    Red => ["red"],
    Green => ["green"],
    Blue => ["blue"],
    Orange => ["orange"],
    Yellow => ["yellow"],
    White => ["white"],
});

word_enum!(SizeClass {
    Small => ["small", "little"],
    Large => ["large", "big"],
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub category: Category,
    pub color: Color,
    pub size_class: SizeClass,
    pub bbox: BoundingBox,
    pub extent: ObjectExtent,
}

impl SceneObject {
    pub fn same_attributes(&self, other: &SceneObject) -> bool {
        self.category == other.category
            && self.color == other.color
            && self.size_class == other.size_class
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Checks the structural invariants: at least one object, unique ids,
    /// every box inside the canvas.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(format!("scene {} has an empty canvas", self.id)));
        }
        if self.objects.is_empty() {
            return Err(Error::InvalidArgument(format!("scene {} has no objects", self.id)));
        }
        let mut ids = std::collections::HashSet::new();
        for obj in &self.objects {
            if !ids.insert(obj.id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "scene {} has duplicate object id {}",
                    self.id, obj.id
                )));
            }
            if !obj.bbox.inside(self.width as f64, self.height as f64) {
                return Err(Error::BoxOutOfBounds(obj.bbox.to_array(), self.width, self.height));
            }
        }
        Ok(())
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    /// The full-canvas box.
    pub fn canvas(&self) -> BoundingBox {
        BoundingBox {
            x_min: 0.0,
            y_min: 0.0,
            x_max: self.width as f64,
            y_max: self.height as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_rejects_degenerate() {
        assert!(BoundingBox::new(1.0, 1.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 2.0).is_err());
    }

    #[test]
    fn box_serializes_as_array() {
        let b = BoundingBox::new(1.0, 2.5, 3.0, 4.0).unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.5,3.0,4.0]");
        let back: BoundingBox = serde_json::from_str("[1.0,2.5,3.0,4.0]").unwrap();
        assert_eq!(back, b);
        assert!(serde_json::from_str::<BoundingBox>("[3.0,0.0,1.0,1.0]").is_err());
    }

    #[test]
    fn gap_is_zero_for_touching_boxes() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BoundingBox::new(10.0, 0.0, 20.0, 10.0).unwrap();
        let c = BoundingBox::new(13.0, 14.0, 20.0, 20.0).unwrap();
        assert_eq!(a.gap(&b), 0.0);
        assert!((a.gap(&c) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn words_round_trip() {
        for c in Category::ALL {
            for w in c.words() {
                assert_eq!(Category::from_word(w), Some(*c));
            }
        }
        assert_eq!(SizeClass::from_word("big"), Some(SizeClass::Large));
        assert_eq!(Color::from_word("purple"), None);
    }
}
