//! Model directories and training from a scene corpus.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::{encode_bbox, whole_image_region, Featurizer};
use crate::scene::referring::{context_object, parse};
use crate::scene::{ExpressionKind, SceneFile};
use crate::seqmodel::{init_model, ModelBundle, ModelRole, SeqModel, TrainConfig};
use crate::spatial::{
    train_spatial, CandidateSet, SpatialDataset, SpatialExample, SpatialModel, SpatialTrainConfig,
    SpatialTrainOutcome, DEFAULT_REDUCED_DIM, SPATIAL_EMBED_DIM, SPATIAL_HIDDEN_DIM,
};
use crate::vocab::{build_vocab, Expression, Vocabulary};

pub const SEMANTIC_FILE: &str = "semantic.json";
pub const SPATIAL_FILE: &str = "spatial.json";
pub const SEMANTIC_EMBED_DIM: usize = 32;
pub const SEMANTIC_HIDDEN_DIM: usize = 64;

/// Training settings for both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub semantic: TrainConfig,
    pub spatial: SpatialTrainConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            semantic: TrainConfig {
                epochs: 15,
                ..TrainConfig::default()
            },
            spatial: SpatialTrainConfig {
                train: TrainConfig {
                    epochs: 30,
                    ..TrainConfig::default()
                },
                ..SpatialTrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSummary {
    pub semantic_losses: Vec<f64>,
    pub spatial_losses: Vec<f64>,
    /// Spatial examples without a usable negative.
    pub spatial_skipped: usize,
}

/// A trained semantic/spatial pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub semantic: SeqModel,
    pub spatial: SpatialModel,
}

impl ModelSet {
    pub fn feature_dim(&self) -> usize {
        self.semantic.dims().cond_dim
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        semantic_bundle(&self.semantic).save(&dir.join(SEMANTIC_FILE))?;
        self.spatial.to_bundle().save(&dir.join(SPATIAL_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let semantic = load_semantic(&dir.join(SEMANTIC_FILE))?;
        let spatial = SpatialModel::from_bundle(&ModelBundle::load(&dir.join(SPATIAL_FILE))?)?;
        if semantic.vocab() != spatial.vocab() {
            return Err(Error::Bundle("semantic and spatial models use different vocabularies".into()));
        }
        if spatial.feature_dim() != semantic.dims().cond_dim {
            return Err(Error::Bundle(format!(
                "feature dimension mismatch: semantic {}, spatial {}",
                semantic.dims().cond_dim,
                spatial.feature_dim()
            )));
        }
        Ok(ModelSet { semantic, spatial })
    }
}

pub fn semantic_bundle(model: &SeqModel) -> ModelBundle {
    ModelBundle::new(ModelRole::Semantic, model.dims().cond_dim, model, None)
}

pub fn semantic_from_bundle(bundle: &ModelBundle) -> Result<SeqModel> {
    if bundle.role != ModelRole::Semantic {
        return Err(Error::Bundle("expected a semantic model".into()));
    }
    if bundle.feature_dim != bundle.dims.cond_dim {
        return Err(Error::Bundle("semantic model condition size must equal its feature dimension".into()));
    }
    bundle.seq_model()
}

pub fn load_semantic(path: &Path) -> Result<SeqModel> {
    semantic_from_bundle(&ModelBundle::load(path)?)
}

/// Vocabulary of every expression in `scenes` (min count 1).
pub fn corpus_vocabulary(scenes: &[&SceneFile]) -> Result<Vocabulary> {
    let corpus: Vec<Expression> = scenes
        .iter()
        .flat_map(|s| s.expressions.iter().map(|e| Expression::new(e.text.as_str())))
        .collect();
    build_vocab(&corpus, 1)
}

fn target_index(file: &SceneFile, target: &str) -> Result<usize> {
    file.objects
        .iter()
        .position(|o| o.id == target)
        .ok_or_else(|| Error::InvalidArgument(format!("scene {} has no object {target}", file.id)))
}

/// `(target feature, token ids)` for every appearance-only expression.
pub fn semantic_dataset(
    scenes: &[&SceneFile],
    featurizer: &dyn Featurizer,
    vocab: &Vocabulary,
) -> Result<Vec<(Vec<f64>, Vec<usize>)>> {
    let mut out = Vec::new();
    for file in scenes {
        let scene = file.scene();
        for e in file.expressions.iter().filter(|e| e.kind == ExpressionKind::SemanticOnly) {
            let t = target_index(file, &e.target)?;
            let f = featurizer.extract(&scene, &scene.objects[t].bbox)?;
            out.push((f.0, vocab.encode(&Expression::new(e.text.as_str()).tokens)));
        }
    }
    Ok(out)
}

/// Ground-truth candidate sets and one example per expression (both
/// kinds). The positive context comes from parsing the expression.
pub fn spatial_dataset(
    scenes: &[&SceneFile],
    featurizer: &dyn Featurizer,
    vocab: &Vocabulary,
) -> Result<SpatialDataset> {
    let mut data = SpatialDataset::default();
    for file in scenes {
        if file.expressions.is_empty() {
            continue;
        }
        let scene = file.scene();
        let set_index = data.sets.len();
        let mut features = Vec::with_capacity(scene.objects.len());
        let mut encodings = Vec::with_capacity(scene.objects.len());
        for o in &scene.objects {
            features.push(featurizer.extract(&scene, &o.bbox)?.0);
            encodings.push(encode_bbox(&o.bbox, scene.width, scene.height)?);
        }
        let (whole, _) = whole_image_region(featurizer, &scene)?;
        data.sets.push(CandidateSet {
            features,
            encodings,
            whole_feature: whole.0,
        });
        for e in &file.expressions {
            let target = target_index(file, &e.target)?;
            let context = parse(&e.text).and_then(|form| context_object(&scene, &form, target));
            data.examples.push(SpatialExample {
                set: set_index,
                query: vocab.encode(&Expression::new(e.text.as_str()).tokens),
                target,
                context,
            });
        }
    }
    Ok(data)
}

pub fn train_semantic_model(
    scenes: &[&SceneFile],
    featurizer: &dyn Featurizer,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<(SeqModel, Vec<f64>)> {
    let data = semantic_dataset(scenes, featurizer, vocab)?;
    let model = init_model(
        vocab.clone(),
        SEMANTIC_EMBED_DIM,
        SEMANTIC_HIDDEN_DIM,
        featurizer.dim(),
        config.seed,
    )?;
    model.train(&data, config)
}

pub fn train_spatial_model(
    scenes: &[&SceneFile],
    featurizer: &dyn Featurizer,
    vocab: &Vocabulary,
    config: &SpatialTrainConfig,
) -> Result<SpatialTrainOutcome> {
    let data = spatial_dataset(scenes, featurizer, vocab)?;
    let model = SpatialModel::init(
        vocab.clone(),
        featurizer.dim(),
        DEFAULT_REDUCED_DIM,
        SPATIAL_EMBED_DIM,
        SPATIAL_HIDDEN_DIM,
        config.train.seed,
    )?;
    train_spatial(&model, &data, config)
}

/// Trains both models on `scenes` with a shared corpus vocabulary.
pub fn train_models(
    scenes: &[&SceneFile],
    featurizer: &dyn Featurizer,
    config: &TrainingConfig,
) -> Result<(ModelSet, TrainingSummary)> {
    let vocab = corpus_vocabulary(scenes)?;
    let (semantic, semantic_losses) = train_semantic_model(scenes, featurizer, &vocab, &config.semantic)?;
    let spatial = train_spatial_model(scenes, featurizer, &vocab, &config.spatial)?;
    Ok((
        ModelSet {
            semantic,
            spatial: spatial.model,
        },
        TrainingSummary {
            semantic_losses,
            spatial_losses: spatial.epoch_losses,
            spatial_skipped: spatial.skipped,
        },
    ))
}
