#![allow(dead_code)]

use refground::models::{train_models, TrainingConfig};
use refground::scene::{generate_corpus, CorpusSplits, SceneConfig, SceneFile};
use refground::seqmodel::TrainConfig;
use refground::spatial::SpatialTrainConfig;
use refground::{AttributeFeaturizer, EngineConfig, GroundingEngine, ModelSet};

pub fn corpus(n: usize, seed: u64) -> (Vec<SceneFile>, CorpusSplits) {
    generate_corpus(&SceneConfig::default(), n, seed).unwrap()
}

/// A few epochs on a small corpus: enough for non-trivial rankings.
pub fn quick_config() -> TrainingConfig {
    TrainingConfig {
        semantic: TrainConfig {
            learning_rate: 3e-3,
            epochs: 4,
            ..TrainConfig::default()
        },
        spatial: SpatialTrainConfig {
            train: TrainConfig {
                learning_rate: 3e-3,
                epochs: 2,
                ..TrainConfig::default()
            },
            ..SpatialTrainConfig::default()
        },
    }
}

pub fn quick_models(files: &[SceneFile], splits: &CorpusSplits) -> ModelSet {
    let train = splits.select(files, "train");
    train_models(&train, &AttributeFeaturizer::default(), &quick_config()).unwrap().0
}

pub fn quick_engine() -> (GroundingEngine, Vec<SceneFile>, CorpusSplits) {
    let (files, splits) = corpus(60, 1);
    let models = quick_models(&files, &splits);
    (GroundingEngine::from_models(models, EngineConfig::default()).unwrap(), files, splits)
}
