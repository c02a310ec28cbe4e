//! Two-stage referring-expression grounding.
//!
//! A query such as "the left blue bottle" is grounded against a set of region
//! proposals in three steps:
//!
//! 1. every proposal is scored by the negative log-likelihood of the query
//!    under a region-conditioned caption model, and the `k` lowest-loss
//!    regions are kept ([`semantic`]);
//! 2. the survivors are split into relevant / irrelevant groups using the
//!    normalized loss and a caption-similarity score ([`cluster`]);
//! 3. the relevant regions are ranked by a pairwise target/context model whose
//!    per-pair probabilities are aggregated with noisy-or ([`spatial`]).
//!
//! [`pipeline::GroundingEngine`] wires the stages together. The [`scene`]
//! module provides the synthetic tabletop corpus the models are trained and
//! evaluated on, and [`eval`] reproduces the Prec@1 benchmark protocol.

pub mod actuation;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod featurizer;
pub mod models;
pub mod pipeline;
pub mod scene;
pub mod semantic;
pub mod seqmodel;
pub mod spatial;
pub mod vocab;

pub use error::{Error, Result};
pub use featurizer::{AttributeFeaturizer, BoxEncoding, FeatureVector, Featurizer};
pub use models::{train_models, ModelSet, TrainingConfig};
pub use pipeline::{Aggregation, EngineConfig, GroundingEngine, GroundingResult};
pub use scene::{BoundingBox, Scene, SceneObject};
pub use seqmodel::SeqModel;
pub use spatial::SpatialModel;
pub use vocab::{Expression, Vocabulary};
