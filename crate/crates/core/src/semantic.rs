//! Stage one: score every proposal against the query with the caption model
//! and keep the lowest-loss candidates.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::{encode_bbox, BoxEncoding, FeatureVector, Featurizer};
use crate::scene::{BoundingBox, Scene};
use crate::seqmodel::SeqModel;
use crate::vocab::UNK_ID;

pub const DEFAULT_K: usize = 10;
pub const CAPTION_MAX_LEN: usize = 8;

/// A proposal with its query-independent data: features and the caption
/// the semantic model generates for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// Position in the proposal list.
    pub index: usize,
    pub bbox: BoundingBox,
    pub feature: FeatureVector,
    pub box_encoding: BoxEncoding,
    pub caption: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRegion {
    #[serde(flatten)]
    pub region: Region,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticScores {
    /// Ascending by loss.
    pub regions: Vec<ScoredRegion>,
    /// Every query token was out of vocabulary.
    pub all_unknown: bool,
}

/// Extracts features for each box and captions them.
pub fn describe_regions(
    model: &SeqModel,
    featurizer: &dyn Featurizer,
    scene: &Scene,
    boxes: &[BoundingBox],
) -> Result<Vec<Region>> {
    if boxes.is_empty() {
        return Err(Error::NoCandidates);
    }
    if featurizer.dim() != model.dims().cond_dim {
        return Err(Error::Dimension(format!(
            "featurizer produces {} features, semantic model expects {}",
            featurizer.dim(),
            model.dims().cond_dim
        )));
    }
    boxes
        .par_iter()
        .enumerate()
        .map(|(index, b)| {
            let feature = featurizer.extract(scene, b)?;
            let box_encoding = encode_bbox(b, scene.width, scene.height)?;
            let caption = model.generate_caption_tokens(feature.as_slice(), CAPTION_MAX_LEN)?;
            Ok(Region {
                index,
                bbox: *b,
                feature,
                box_encoding,
                caption,
            })
        })
        .collect()
}

fn region_order(a: &ScoredRegion, b: &ScoredRegion) -> Ordering {
    a.loss
        .total_cmp(&b.loss)
        .then(a.region.bbox.x_min.total_cmp(&b.region.bbox.x_min))
        .then(a.region.bbox.y_min.total_cmp(&b.region.bbox.y_min))
        .then(a.region.index.cmp(&b.region.index))
}

/// Scores already described regions; the result is sorted ascending by loss,
/// ties by box `x_min`, then `y_min`.
pub fn score_described(model: &SeqModel, regions: &[Region], query: &[String]) -> Result<SemanticScores> {
    if regions.is_empty() {
        return Err(Error::NoCandidates);
    }
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let ids = model.encode(query);
    let all_unknown = ids.iter().all(|&i| i == UNK_ID);
    let mut scored = regions
        .par_iter()
        .map(|r| {
            Ok(ScoredRegion {
                loss: model.sequence_nll(r.feature.as_slice(), &ids)?,
                region: r.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(region_order);
    Ok(SemanticScores {
        regions: scored,
        all_unknown,
    })
}

pub fn score_regions(
    model: &SeqModel,
    featurizer: &dyn Featurizer,
    scene: &Scene,
    boxes: &[BoundingBox],
    query: &[String],
) -> Result<SemanticScores> {
    let regions = describe_regions(model, featurizer, scene, boxes)?;
    score_described(model, &regions, query)
}

/// The first `min(k, n)` entries of an ascending score list.
pub fn top_k(scored: &[ScoredRegion], k: usize) -> Result<Vec<ScoredRegion>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(scored[..k.min(scored.len())].to_vec())
}
