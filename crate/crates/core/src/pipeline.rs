//! The full grounding pipeline: semantic scoring, top-k, relevancy
//! clustering and spatial ranking, plus the correction iterator and the
//! robot command parser.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cluster::{normalize_metrics, relevancy_cluster, RelevancePoint, SynonymTable};
use crate::error::{Error, Result};
use crate::featurizer::{whole_image_region, AttributeFeaturizer, FeatureVector, Featurizer};
use crate::models::ModelSet;
use crate::scene::{BoundingBox, Scene};
use crate::semantic::{describe_regions, score_described, top_k, Region, DEFAULT_K};
use crate::seqmodel::SeqModel;
use crate::spatial::{rank, rank_rows, PairMatrix, RankedCandidate, RegionView, SpatialModel};
use crate::vocab::Expression;

pub use crate::spatial::Aggregation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub k: usize,
    pub aggregation: Aggregation,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            k: DEFAULT_K,
            aggregation: Aggregation::NoisyOr,
        }
    }
}

/// Query-independent data for one scene and proposal set. Building it runs
/// the featurizer and the caption generator once per proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedScene {
    pub scene_id: String,
    pub regions: Vec<Region>,
    pub whole_image: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDiagnostic {
    pub index: usize,
    pub bbox: BoundingBox,
    pub loss: f64,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Every proposal, ascending by semantic loss.
    pub regions: Vec<RegionDiagnostic>,
    /// Region indices of the top-k set.
    pub top_k: Vec<usize>,
    pub relevance: Vec<RelevancePoint>,
    /// Region indices of the relevant cluster, the spatial stage's input.
    pub relevant: Vec<usize>,
    pub pair_matrix: PairMatrix,
    /// All query words were outside the vocabulary.
    pub unknown_query: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub query: Expression,
    pub aggregation: Aggregation,
    /// Descending by score; exactly the relevant cluster.
    pub ranked: Vec<RankedCandidate>,
    pub diagnostics: Diagnostics,
}

impl GroundingResult {
    pub fn top(&self) -> &RankedCandidate {
        &self.ranked[0]
    }

    /// First ranked entry whose rank position is not in `rejected`.
    pub fn next_candidate(&self, rejected: &BTreeSet<usize>) -> Option<(usize, &RankedCandidate)> {
        self.ranked.iter().enumerate().find(|(i, _)| !rejected.contains(i))
    }

    /// The same result ranked with another aggregation; the pair matrix is
    /// reused, nothing is re-scored.
    pub fn reranked(&self, aggregation: Aggregation) -> GroundingResult {
        let rows: Vec<(usize, BoundingBox, f64)> = self
            .diagnostics
            .pair_matrix
            .regions
            .iter()
            .map(|&idx| {
                let c = self.ranked.iter().find(|c| c.region_index == idx).expect("ranked covers matrix rows");
                (idx, c.bbox, c.loss)
            })
            .collect();
        GroundingResult {
            query: self.query.clone(),
            aggregation,
            ranked: rank_rows(&rows, &self.diagnostics.pair_matrix, aggregation),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

pub struct GroundingEngine {
    semantic: SeqModel,
    spatial: SpatialModel,
    featurizer: Arc<dyn Featurizer>,
    synonyms: SynonymTable,
    config: EngineConfig,
}

impl std::fmt::Debug for GroundingEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GroundingEngine")
            .field("feature_dim", &self.featurizer.dim())
            .field("vocab_size", &self.semantic.vocab().len())
            .field("config", &self.config)
            .finish()
    }
}

impl GroundingEngine {
    pub fn new(
        semantic: SeqModel,
        spatial: SpatialModel,
        featurizer: Arc<dyn Featurizer>,
        config: EngineConfig,
    ) -> Result<Self> {
        if semantic.vocab() != spatial.vocab() {
            return Err(Error::Bundle("semantic and spatial models use different vocabularies".into()));
        }
        let dim = featurizer.dim();
        if semantic.dims().cond_dim != dim || spatial.feature_dim() != dim {
            return Err(Error::Dimension(format!(
                "featurizer dim {dim}, semantic model {}, spatial model {}",
                semantic.dims().cond_dim,
                spatial.feature_dim()
            )));
        }
        if config.k == 0 || config.k > crate::cluster::MAX_POINTS {
            return Err(Error::InvalidArgument(format!(
                "k must be in 1..={}",
                crate::cluster::MAX_POINTS
            )));
        }
        Ok(GroundingEngine {
            semantic,
            spatial,
            featurizer,
            synonyms: SynonymTable::bundled().clone(),
            config,
        })
    }

    pub fn from_models(models: ModelSet, config: EngineConfig) -> Result<Self> {
        let featurizer = AttributeFeaturizer::new(models.feature_dim())?;
        GroundingEngine::new(models.semantic, models.spatial, Arc::new(featurizer), config)
    }

    /// Loads `semantic.json` and `spatial.json` from a model directory.
    pub fn load(dir: &Path, config: EngineConfig) -> Result<Self> {
        GroundingEngine::from_models(ModelSet::load(dir)?, config)
    }

    pub fn with_synonyms(mut self, synonyms: SynonymTable) -> Self {
        self.synonyms = synonyms;
        self
    }

    pub fn config(&self) -> EngineConfig {
        self.config
    }

    pub fn semantic(&self) -> &SeqModel {
        &self.semantic
    }

    pub fn spatial(&self) -> &SpatialModel {
        &self.spatial
    }

    pub fn featurizer(&self) -> &dyn Featurizer {
        self.featurizer.as_ref()
    }

    pub fn prepare(&self, scene: &Scene, proposals: &[BoundingBox]) -> Result<PreparedScene> {
        let regions = describe_regions(&self.semantic, self.featurizer.as_ref(), scene, proposals)
            .map_err(|e| e.in_stage("semantic"))?;
        let (whole_image, _) =
            whole_image_region(self.featurizer.as_ref(), scene).map_err(|e| e.in_stage("semantic"))?;
        Ok(PreparedScene {
            scene_id: scene.id.clone(),
            regions,
            whole_image,
        })
    }

    pub fn ground(&self, scene: &Scene, proposals: &[BoundingBox], query: &str) -> Result<GroundingResult> {
        let prepared = self.prepare(scene, proposals)?;
        self.ground_prepared(&prepared, query)
    }

    pub fn ground_prepared(&self, prepared: &PreparedScene, query: &str) -> Result<GroundingResult> {
        self.ground_prepared_with(prepared, query, self.config.aggregation)
    }

    pub fn ground_prepared_with(
        &self,
        prepared: &PreparedScene,
        query: &str,
        aggregation: Aggregation,
    ) -> Result<GroundingResult> {
        let query = Expression::new(query);
        if query.is_blank() || query.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let scores = score_described(&self.semantic, &prepared.regions, &query.tokens)
            .map_err(|e| e.in_stage("semantic"))?;
        let top = top_k(&scores.regions, self.config.k).map_err(|e| e.in_stage("semantic"))?;
        let relevance =
            normalize_metrics(&top, &query.tokens, &self.synonyms).map_err(|e| e.in_stage("cluster"))?;
        let members = relevancy_cluster(&relevance).map_err(|e| e.in_stage("cluster"))?;
        let relevant: Vec<_> = members.iter().map(|&i| top[i].clone()).collect();

        let ids = self.spatial.vocab().encode(&query.tokens);
        let whole = RegionView {
            feature: prepared.whole_image.as_slice(),
            box_encoding: crate::featurizer::BoxEncoding::WHOLE_IMAGE,
        };
        let (ranked, pair_matrix) =
            rank(&self.spatial, &relevant, whole, &ids, aggregation).map_err(|e| e.in_stage("spatial"))?;

        let diagnostics = Diagnostics {
            regions: scores
                .regions
                .iter()
                .map(|s| RegionDiagnostic {
                    index: s.region.index,
                    bbox: s.region.bbox,
                    loss: s.loss,
                    caption: s.region.caption.join(" "),
                })
                .collect(),
            top_k: top.iter().map(|s| s.region.index).collect(),
            relevance,
            relevant: pair_matrix.regions.clone(),
            pair_matrix,
            unknown_query: scores.all_unknown,
        };
        Ok(GroundingResult {
            query,
            aggregation,
            ranked,
            diagnostics,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    PickUp,
    PutIt,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::PickUp, Action::PutIt];

    pub fn phrase(self) -> &'static str {
        match self {
            Action::PickUp => "pick up",
            Action::PutIt => "put it",
        }
    }
}

/// Splits a robot command into its action and the expression to ground.
/// The prefix match ignores case and whitespace runs; the remainder is
/// returned as written.
pub fn parse_command(text: &str) -> Result<(Action, String)> {
    let lowered = text.trim_start().to_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    for action in Action::ALL {
        let phrase: Vec<&str> = action.phrase().split(' ').collect();
        if words.len() >= phrase.len() && words[..phrase.len()] == phrase[..] {
            let mut rest = text.trim_start();
            for _ in 0..phrase.len() {
                rest = rest.trim_start();
                let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                rest = &rest[end..];
            }
            return Ok((action, rest.trim().to_string()));
        }
    }
    Err(Error::UnknownAction(text.to_string()))
}
