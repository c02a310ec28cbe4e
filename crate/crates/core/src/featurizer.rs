//! Region representations: the appearance feature vector and the normalized
//! box encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{BoundingBox, Category, Color, Scene, SizeClass};

pub const DEFAULT_FEATURE_DIM: usize = 64;
pub const BOX_ENCODING_LEN: usize = 5;

const CATEGORY_OFFSET: usize = 0;
const COLOR_OFFSET: usize = CATEGORY_OFFSET + 6;
const SIZE_OFFSET: usize = COLOR_OFFSET + 6;
const BOX_OFFSET: usize = SIZE_OFFSET + 2;
/// Entries used by [`AttributeFeaturizer`]; the rest is zero padding.
pub const USED_FEATURES: usize = BOX_OFFSET + BOX_ENCODING_LEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        FeatureVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `[x_min/W, y_min/H, x_max/W, y_max/H, area/(W*H)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxEncoding(pub [f64; BOX_ENCODING_LEN]);

impl BoxEncoding {
    pub const WHOLE_IMAGE: BoxEncoding = BoxEncoding([0.0, 0.0, 1.0, 1.0, 1.0]);

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn encode_bbox(b: &BoundingBox, width: u32, height: u32) -> Result<BoxEncoding> {
    let (w, h) = (width as f64, height as f64);
    if width == 0 || height == 0 || !(b.x_min < b.x_max && b.y_min < b.y_max) || !b.inside(w, h) {
        return Err(Error::BoxOutOfBounds(b.to_array(), width, height));
    }
    let e = [b.x_min / w, b.y_min / h, b.x_max / w, b.y_max / h];
    Ok(BoxEncoding([e[0], e[1], e[2], e[3], (e[2] - e[0]) * (e[3] - e[1])]))
}

/// Maps a region of a scene to a fixed-length feature vector.
///
/// Any implementation with a declared `dim` can back the pipeline.
pub trait Featurizer: Send + Sync {
    fn dim(&self) -> usize;

    fn extract(&self, scene: &Scene, region: &BoundingBox) -> Result<FeatureVector>;
}

/// Synthetic appearance features: IoU-weighted one-hot attributes of the
/// best-overlapping object, followed by the box encoding, zero padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttributeFeaturizer {
    dim: usize,
}

impl AttributeFeaturizer {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < USED_FEATURES {
            return Err(Error::Dimension(format!(
                "feature dimension {dim} is smaller than the {USED_FEATURES} used entries"
            )));
        }
        Ok(AttributeFeaturizer { dim })
    }
}

impl Default for AttributeFeaturizer {
    fn default() -> Self {
        AttributeFeaturizer {
            dim: DEFAULT_FEATURE_DIM,
        }
    }
}

impl Featurizer for AttributeFeaturizer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, scene: &Scene, region: &BoundingBox) -> Result<FeatureVector> {
        let enc = encode_bbox(region, scene.width, scene.height)?;
        let mut v = vec![0.0; self.dim];
        let mut best: Option<(usize, f64)> = None;
        for (i, o) in scene.objects.iter().enumerate() {
            let iou = o.bbox.iou(region);
            if iou > 0.0 && best.is_none_or(|(_, b)| iou > b) {
                best = Some((i, iou));
            }
        }
        if let Some((i, weight)) = best {
            let o = &scene.objects[i];
            v[CATEGORY_OFFSET + o.category.index()] = weight;
            v[COLOR_OFFSET + o.color.index()] = weight;
            v[SIZE_OFFSET + o.size_class.index()] = weight;
        }
        v[BOX_OFFSET..BOX_OFFSET + BOX_ENCODING_LEN].copy_from_slice(enc.as_slice());
        Ok(FeatureVector(v))
    }
}

const _: () = assert!(Category::ALL.len() == 6 && Color::ALL.len() == 6 && SizeClass::ALL.len() == 2);

/// The whole-image pseudo region: mean of the object features, full-canvas
/// box encoding.
pub fn whole_image_region(
    featurizer: &dyn Featurizer,
    scene: &Scene,
) -> Result<(FeatureVector, BoxEncoding)> {
    let mut mean = vec![0.0; featurizer.dim()];
    for o in &scene.objects {
        let f = featurizer.extract(scene, &o.bbox)?;
        for (m, x) in mean.iter_mut().zip(f.as_slice()) {
            *m += x;
        }
    }
    let n = scene.objects.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok((FeatureVector(mean), BoxEncoding::WHOLE_IMAGE))
}
