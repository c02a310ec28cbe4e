//! Stage two: pairwise target/context scoring with a second caption model,
//! aggregated per target by noisy-or or max.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::{BoxEncoding, BOX_ENCODING_LEN};
use crate::scene::BoundingBox;
use crate::semantic::{Region, ScoredRegion};
use crate::seqmodel::{
    finite_difference_check, fit, init_model, matrix_flat, matrix_rows, GradCheckConfig, GradCheckReport,
    GradFault, ModelBundle, ModelRole, SeqModel, SeqNet, TrainConfig,
};
use crate::vocab::Vocabulary;

pub const DEFAULT_REDUCED_DIM: usize = 32;
pub const SPATIAL_EMBED_DIM: usize = 32;
pub const SPATIAL_HIDDEN_DIM: usize = 96;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    NoisyOr,
    Max,
}

impl Aggregation {
    pub const ALL: [Aggregation; 2] = [Aggregation::NoisyOr, Aggregation::Max];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::NoisyOr => "noisy_or",
            Aggregation::Max => "max",
        }
    }

    pub fn apply(self, probabilities: &[f64]) -> f64 {
        match self {
            Aggregation::NoisyOr => noisy_or(probabilities),
            Aggregation::Max => max_probability(probabilities),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noisy-or" | "noisy_or" | "noisyor" => Ok(Aggregation::NoisyOr),
            "max" => Ok(Aggregation::Max),
            _ => Err(Error::InvalidArgument(format!(
                "unknown aggregation {s:?}; expected noisy-or or max"
            ))),
        }
    }
}

/// `1 - prod(1 - p_i)`; 0 for an empty slice.
pub fn noisy_or(probabilities: &[f64]) -> f64 {
    let miss: f64 = probabilities.iter().map(|p| 1.0 - p).product();
    (1.0 - miss).clamp(0.0, 1.0)
}

/// Largest entry; 0 for an empty slice.
pub fn max_probability(probabilities: &[f64]) -> f64 {
    probabilities.iter().copied().fold(0.0, f64::max)
}

/// Length-normalized likelihood `exp(-nll / (T + 1))` of a `T`-token query.
pub fn nll_to_probability(nll: f64, query_len: usize) -> f64 {
    (-nll / (query_len as f64 + 1.0)).exp()
}

/// Feature and box encoding of one side of a pair.
#[derive(Debug, Clone, Copy)]
pub struct RegionView<'a> {
    pub feature: &'a [f64],
    pub box_encoding: BoxEncoding,
}

impl<'a> From<&'a Region> for RegionView<'a> {
    fn from(r: &'a Region) -> Self {
        RegionView {
            feature: r.feature.as_slice(),
            box_encoding: r.box_encoding,
        }
    }
}

/// Projection matrix plus the pair-conditioned sequence model.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialModel {
    seq: SeqModel,
    /// Row-major `reduced_dim x feature_dim`.
    projection: Vec<f64>,
    feature_dim: usize,
    reduced_dim: usize,
}

/// Length of the pair conditioning vector.
pub fn pair_cond_dim(reduced_dim: usize) -> usize {
    2 * (reduced_dim + BOX_ENCODING_LEN)
}

impl SpatialModel {
    pub fn init(
        vocab: Vocabulary,
        feature_dim: usize,
        reduced_dim: usize,
        embed_dim: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if feature_dim == 0 || reduced_dim == 0 {
            return Err(Error::Dimension("feature and reduced dims must be positive".into()));
        }
        let seq = init_model(vocab, embed_dim, hidden_dim, pair_cond_dim(reduced_dim), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_9a7);
        let s = 1.0 / (feature_dim as f64).sqrt();
        let projection = (0..reduced_dim * feature_dim)
            .map(|_| rng.gen_range(-s..=s))
            .collect();
        Ok(SpatialModel {
            seq,
            projection,
            feature_dim,
            reduced_dim,
        })
    }

    pub fn from_parts(seq: SeqModel, projection: Vec<f64>, feature_dim: usize, reduced_dim: usize) -> Result<Self> {
        if projection.len() != feature_dim * reduced_dim {
            return Err(Error::Dimension(format!(
                "projection has {} entries, expected {reduced_dim}x{feature_dim}",
                projection.len()
            )));
        }
        if seq.dims().cond_dim != pair_cond_dim(reduced_dim) {
            return Err(Error::Dimension(format!(
                "spatial model condition size {} does not match reduced dim {reduced_dim}",
                seq.dims().cond_dim
            )));
        }
        if projection.iter().any(|p| !p.is_finite()) {
            return Err(Error::Dimension("non-finite projection entry".into()));
        }
        Ok(SpatialModel {
            seq,
            projection,
            feature_dim,
            reduced_dim,
        })
    }

    pub fn seq(&self) -> &SeqModel {
        &self.seq
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.seq.vocab()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn reduced_dim(&self) -> usize {
        self.reduced_dim
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    /// All trainable parameters: sequence model first, then the projection.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.seq.params().to_vec();
        p.extend_from_slice(&self.projection);
        p
    }

    fn with_flat_params(&self, flat: &[f64]) -> Result<Self> {
        let n = self.seq.params().len();
        let mut seq = self.seq.clone();
        seq.params_mut().copy_from_slice(&flat[..n]);
        SpatialModel::from_parts(seq, flat[n..].to_vec(), self.feature_dim, self.reduced_dim)
    }

    /// `[proj(f_t), b_t, proj(f_c), b_c]`.
    pub fn pair_input(&self, target: RegionView<'_>, context: RegionView<'_>) -> Result<Vec<f64>> {
        pair_input_with(&self.projection, self.feature_dim, self.reduced_dim, target, context)
    }

    pub fn pair_nll(&self, target: RegionView<'_>, context: RegionView<'_>, query: &[usize]) -> Result<f64> {
        let cond = self.pair_input(target, context)?;
        self.seq.sequence_nll(&cond, query)
    }

    pub fn pair_probability(&self, target: RegionView<'_>, context: RegionView<'_>, query: &[usize]) -> Result<f64> {
        Ok(nll_to_probability(self.pair_nll(target, context, query)?, query.len()))
    }

    pub fn to_bundle(&self) -> ModelBundle {
        ModelBundle::new(
            ModelRole::Spatial,
            self.feature_dim,
            &self.seq,
            Some(matrix_rows(&self.projection, self.feature_dim)),
        )
    }

    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self> {
        if bundle.role != ModelRole::Spatial {
            return Err(Error::Bundle("expected a spatial model".into()));
        }
        let rows = bundle
            .projection
            .as_ref()
            .ok_or_else(|| Error::Bundle("spatial bundle has no projection".into()))?;
        let reduced_dim = rows.len();
        let projection = matrix_flat("projection", rows, reduced_dim, bundle.feature_dim)?;
        SpatialModel::from_parts(bundle.seq_model()?, projection, bundle.feature_dim, reduced_dim)
    }

    /// Analytic vs finite-difference gradient of the pair NLL over all
    /// parameters, projection included.
    pub fn grad_check(
        &self,
        target: RegionView<'_>,
        context: RegionView<'_>,
        query: &[usize],
        config: &GradCheckConfig,
    ) -> Result<GradCheckReport> {
        self.grad_check_with_fault(target, context, query, config, GradFault::None)
    }

    #[doc(hidden)]
    pub fn grad_check_with_fault(
        &self,
        target: RegionView<'_>,
        context: RegionView<'_>,
        query: &[usize],
        config: &GradCheckConfig,
        fault: GradFault,
    ) -> Result<GradCheckReport> {
        let flat = self.flat_params();
        let shape = Shape::of(self);
        let mut grad = vec![0.0; flat.len()];
        shape.pair_grad(&flat, target, context, query, 1.0, &mut grad, fault)?;
        finite_difference_check(
            &flat,
            &grad,
            |p| {
                let cond = pair_input_with(shape.projection(p), shape.feature_dim, shape.reduced_dim, target, context)?;
                SeqNet::new(shape.dims, shape.seq_params(p)).nll(&cond, query)
            },
            config,
        )
    }
}

fn pair_input_with(
    projection: &[f64],
    feature_dim: usize,
    reduced_dim: usize,
    target: RegionView<'_>,
    context: RegionView<'_>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pair_cond_dim(reduced_dim));
    for side in [target, context] {
        if side.feature.len() != feature_dim {
            return Err(Error::Dimension(format!(
                "region feature has {} entries, spatial model expects {feature_dim}",
                side.feature.len()
            )));
        }
        for r in 0..reduced_dim {
            out.push(dot(&projection[r * feature_dim..(r + 1) * feature_dim], side.feature));
        }
        out.extend_from_slice(side.box_encoding.as_slice());
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dimensions needed to interpret a flat spatial parameter buffer.
#[derive(Clone, Copy)]
struct Shape {
    dims: crate::seqmodel::SeqDims,
    n_seq: usize,
    feature_dim: usize,
    reduced_dim: usize,
}

impl Shape {
    fn of(m: &SpatialModel) -> Self {
        Shape {
            dims: m.seq.dims(),
            n_seq: m.seq.params().len(),
            feature_dim: m.feature_dim,
            reduced_dim: m.reduced_dim,
        }
    }

    fn seq_params<'a>(&self, flat: &'a [f64]) -> &'a [f64] {
        &flat[..self.n_seq]
    }

    fn projection<'a>(&self, flat: &'a [f64]) -> &'a [f64] {
        &flat[self.n_seq..]
    }

    fn pair_nll(&self, flat: &[f64], target: RegionView<'_>, context: RegionView<'_>, query: &[usize]) -> Result<f64> {
        let cond = pair_input_with(self.projection(flat), self.feature_dim, self.reduced_dim, target, context)?;
        SeqNet::new(self.dims, self.seq_params(flat)).nll(&cond, query)
    }

    /// Accumulates `scale * d(nll)/d(flat)` into `grad`; returns the nll.
    #[allow(clippy::too_many_arguments)]
    fn pair_grad(
        &self,
        flat: &[f64],
        target: RegionView<'_>,
        context: RegionView<'_>,
        query: &[usize],
        scale: f64,
        grad: &mut [f64],
        fault: GradFault,
    ) -> Result<f64> {
        let cond = pair_input_with(self.projection(flat), self.feature_dim, self.reduced_dim, target, context)?;
        let mut dcond = vec![0.0; cond.len()];
        let (g_seq, g_proj) = grad.split_at_mut(self.n_seq);
        let nll = SeqNet::new(self.dims, self.seq_params(flat)).nll_grad(
            &cond,
            query,
            scale,
            g_seq,
            Some(&mut dcond),
            fault,
        )?;
        let (r_dim, f_dim) = (self.reduced_dim, self.feature_dim);
        let offset = r_dim + BOX_ENCODING_LEN;
        for (base, side) in [(0, target), (offset, context)] {
            for r in 0..r_dim {
                let d = dcond[base + r];
                if d == 0.0 {
                    continue;
                }
                let row = &mut g_proj[r * f_dim..(r + 1) * f_dim];
                for (g, x) in row.iter_mut().zip(side.feature) {
                    *g += d * x;
                }
            }
        }
        Ok(nll)
    }
}

/// Per-target pair probabilities. Row `i` is target `candidates[i]`; column
/// `j < k` is context `candidates[j]` (empty on the diagonal) and the last
/// column is the whole image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMatrix {
    /// Region indices of the rows (and of the first `k` columns).
    pub regions: Vec<usize>,
    pub probabilities: Vec<Vec<Option<f64>>>,
}

impl PairMatrix {
    pub fn evaluations(&self) -> usize {
        self.probabilities.iter().flatten().filter(|p| p.is_some()).count()
    }

    /// Aggregated score of row `i`.
    pub fn score(&self, row: usize, aggregation: Aggregation) -> f64 {
        let ps: Vec<f64> = self.probabilities[row].iter().flatten().copied().collect();
        aggregation.apply(&ps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub region_index: usize,
    pub bbox: BoundingBox,
    pub score: f64,
    /// Stage-one loss, used to break score ties.
    pub loss: f64,
}

/// Orders matrix rows `(region index, box, stage-one loss)` by aggregated
/// score, descending; ties go to the lower loss, then the lower index.
pub fn rank_rows(rows: &[(usize, BoundingBox, f64)], matrix: &PairMatrix, aggregation: Aggregation) -> Vec<RankedCandidate> {
    let mut ranked: Vec<RankedCandidate> = rows
        .iter()
        .enumerate()
        .map(|(i, &(region_index, bbox, loss))| RankedCandidate {
            region_index,
            bbox,
            score: matrix.score(i, aggregation),
            loss,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.loss.total_cmp(&b.loss))
            .then(a.region_index.cmp(&b.region_index))
    });
    ranked
}

pub fn rank_from_matrix(candidates: &[ScoredRegion], matrix: &PairMatrix, aggregation: Aggregation) -> Vec<RankedCandidate> {
    let rows: Vec<_> = candidates
        .iter()
        .map(|c| (c.region.index, c.region.bbox, c.loss))
        .collect();
    rank_rows(&rows, matrix, aggregation)
}

fn canonical(candidates: &[ScoredRegion]) -> Vec<ScoredRegion> {
    let mut c = candidates.to_vec();
    c.sort_by(|a, b| {
        a.loss
            .total_cmp(&b.loss)
            .then(a.region.bbox.x_min.total_cmp(&b.region.bbox.x_min))
            .then(a.region.bbox.y_min.total_cmp(&b.region.bbox.y_min))
            .then(a.region.index.cmp(&b.region.index))
    });
    c
}

/// Evaluates the `k x k` pairs (k - 1 peers plus the whole image for each of
/// the `k` targets). Candidates are put in a content-defined order first,
/// so the matrix does not depend on the input order.
pub fn pair_matrix(
    model: &SpatialModel,
    candidates: &[ScoredRegion],
    whole_image: RegionView<'_>,
    query: &[usize],
) -> Result<(Vec<ScoredRegion>, PairMatrix)> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let cands = canonical(candidates);
    let k = cands.len();
    let cells: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (0..=k).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let probs = cells
        .par_iter()
        .map(|&(i, j)| {
            let ctx = if j == k { whole_image } else { RegionView::from(&cands[j].region) };
            model.pair_probability(RegionView::from(&cands[i].region), ctx, query)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut rows = vec![vec![None; k + 1]; k];
    for (&(i, j), p) in cells.iter().zip(probs) {
        rows[i][j] = Some(p);
    }
    let matrix = PairMatrix {
        regions: cands.iter().map(|c| c.region.index).collect(),
        probabilities: rows,
    };
    Ok((cands, matrix))
}

pub fn rank(
    model: &SpatialModel,
    candidates: &[ScoredRegion],
    whole_image: RegionView<'_>,
    query: &[usize],
    aggregation: Aggregation,
) -> Result<(Vec<RankedCandidate>, PairMatrix)> {
    let (cands, matrix) = pair_matrix(model, candidates, whole_image, query)?;
    Ok((rank_from_matrix(&cands, &matrix, aggregation), matrix))
}

pub fn rank_noisy_or(
    model: &SpatialModel,
    candidates: &[ScoredRegion],
    whole_image: RegionView<'_>,
    query: &[usize],
) -> Result<Vec<RankedCandidate>> {
    Ok(rank(model, candidates, whole_image, query, Aggregation::NoisyOr)?.0)
}

pub fn rank_max(
    model: &SpatialModel,
    candidates: &[ScoredRegion],
    whole_image: RegionView<'_>,
    query: &[usize],
) -> Result<Vec<RankedCandidate>> {
    Ok(rank(model, candidates, whole_image, query, Aggregation::Max)?.0)
}

/// Candidate regions of one training scene. The whole image is stored
/// separately and is always available as a context.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub features: Vec<Vec<f64>>,
    pub encodings: Vec<BoxEncoding>,
    pub whole_feature: Vec<f64>,
}

impl CandidateSet {
    fn view(&self, i: Option<usize>) -> RegionView<'_> {
        match i {
            Some(i) => RegionView {
                feature: &self.features[i],
                box_encoding: self.encodings[i],
            },
            None => RegionView {
                feature: &self.whole_feature,
                box_encoding: BoxEncoding::WHOLE_IMAGE,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialExample {
    /// Index into the dataset's candidate sets.
    pub set: usize,
    pub query: Vec<usize>,
    pub target: usize,
    /// Positive context; `None` is the whole image.
    pub context: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpatialDataset {
    pub sets: Vec<CandidateSet>,
    pub examples: Vec<SpatialExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialTrainConfig {
    pub train: TrainConfig,
    pub margin: f64,
    pub margin_weight: f64,
}

impl Default for SpatialTrainConfig {
    fn default() -> Self {
        SpatialTrainConfig {
            train: TrainConfig::default(),
            margin: 1.0,
            margin_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialTrainOutcome {
    pub model: SpatialModel,
    pub epoch_losses: Vec<f64>,
    /// Examples without any valid negative candidate.
    pub skipped: usize,
}

fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// The negative target for an example in a given epoch: uniform over the
/// candidates other than the target and the positive context.
pub fn sample_negative(seed: u64, epoch: usize, example: usize, n: usize, target: usize, context: Option<usize>) -> Option<usize> {
    let pool: Vec<usize> = (0..n).filter(|&i| i != target && Some(i) != context).collect();
    if pool.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix((epoch as u64) << 32 ^ example as u64)));
    Some(pool[rng.gen_range(0..pool.len())])
}

/// Per-example loss `nll(pos) + w * max(0, m - (nll(neg) - nll(pos)))`.
pub fn margin_loss(pos: f64, neg: f64, margin: f64, weight: f64) -> f64 {
    pos + weight * (margin - (neg - pos)).max(0.0)
}

pub fn train_spatial(model: &SpatialModel, data: &SpatialDataset, config: &SpatialTrainConfig) -> Result<SpatialTrainOutcome> {
    if !(config.margin.is_finite() && config.margin_weight >= 0.0 && config.margin_weight.is_finite()) {
        return Err(Error::InvalidArgument("margin and margin_weight must be finite, weight non-negative".into()));
    }
    let mut usable = Vec::with_capacity(data.examples.len());
    let mut skipped = 0;
    for ex in &data.examples {
        let set = data
            .sets
            .get(ex.set)
            .ok_or_else(|| Error::InvalidArgument(format!("example refers to missing candidate set {}", ex.set)))?;
        let n = set.features.len();
        if ex.target >= n || ex.context.is_some_and(|c| c >= n || c == ex.target) {
            return Err(Error::InvalidArgument("example target/context outside its candidate set".into()));
        }
        if sample_negative(0, 0, 0, n, ex.target, ex.context).is_none() {
            skipped += 1;
            continue;
        }
        model.pair_input(set.view(Some(ex.target)), set.view(ex.context))?;
        if ex.query.is_empty() {
            return Err(Error::EmptyQuery);
        }
        if let Some(&id) = ex.query.iter().find(|&&t| t >= model.vocab().len()) {
            return Err(Error::TokenOutOfRange {
                id,
                size: model.vocab().len(),
            });
        }
        usable.push(ex);
    }
    if usable.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let shape = Shape::of(model);
    let mut params = model.flat_params();
    let seed = config.train.seed;
    let (margin, weight) = (config.margin, config.margin_weight);
    let losses = fit(&mut params, usable.len(), &config.train, |p, i, epoch, grad| {
        let ex = usable[i];
        let set = &data.sets[ex.set];
        let (t, c) = (set.view(Some(ex.target)), set.view(ex.context));
        let neg_idx = sample_negative(seed, epoch, i, set.features.len(), ex.target, ex.context)
            .expect("filtered above");
        let neg = set.view(Some(neg_idx));
        let pos_nll = shape.pair_nll(p, t, c, &ex.query)?;
        let neg_nll = shape.pair_nll(p, neg, c, &ex.query)?;
        let active = weight > 0.0 && margin - (neg_nll - pos_nll) > 0.0;
        let pos_scale = if active { 1.0 + weight } else { 1.0 };
        shape.pair_grad(p, t, c, &ex.query, pos_scale, grad, GradFault::None)?;
        if active {
            shape.pair_grad(p, neg, c, &ex.query, -weight, grad, GradFault::None)?;
        }
        Ok(margin_loss(pos_nll, neg_nll, margin, weight))
    })?;
    Ok(SpatialTrainOutcome {
        model: model.with_flat_params(&params)?,
        epoch_losses: losses,
        skipped,
    })
}

/// Mean positive and negative pair NLL over a dataset, using the negative
/// drawn for epoch 0. Examples without a negative are ignored.
pub fn mean_pair_nll(model: &SpatialModel, data: &SpatialDataset, seed: u64) -> Result<(f64, f64)> {
    let (mut pos, mut neg, mut n) = (0.0, 0.0, 0usize);
    for (i, ex) in data.examples.iter().enumerate() {
        let set = &data.sets[ex.set];
        let Some(neg_idx) = sample_negative(seed, 0, i, set.features.len(), ex.target, ex.context) else {
            continue;
        };
        let c = set.view(ex.context);
        pos += model.pair_nll(set.view(Some(ex.target)), c, &ex.query)?;
        neg += model.pair_nll(set.view(Some(neg_idx)), c, &ex.query)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok((pos / n as f64, neg / n as f64))
}
