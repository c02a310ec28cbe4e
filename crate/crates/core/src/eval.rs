//! Prec@1 benchmark over corpus partitions, proposal modes and
//! aggregations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{GroundingEngine, PreparedScene};
use crate::scene::referring::resolve_text;
use crate::scene::{make_proposals, BoundingBox, ExpressionKind, ProposalMode, Scene, SceneFile};
use crate::spatial::Aggregation;
use crate::vocab::{contains_noun, tokenize, NounLexicon};

pub const IOU_THRESHOLD: f64 = 0.5;

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

/// Fraction of `(predicted, truth)` pairs with IoU strictly above
/// `threshold`.
pub fn prec_at_1(results: &[(BoundingBox, BoundingBox)], threshold: f64) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("prec_at_1 needs at least one result".into()));
    }
    let hits = results.iter().filter(|(p, t)| iou(p, t) > threshold).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Anything that can pick a box for a query. Scene preparation is split out
/// so per-scene work is shared by all of its queries.
pub trait Grounder: Sync {
    type Prepared: Send;

    fn prepare(&self, scene: &Scene, proposals: &[BoundingBox]) -> Result<Self::Prepared>;

    /// The top box under each of `aggregations`, in the same order.
    fn predict(&self, prepared: &Self::Prepared, query: &str, aggregations: &[Aggregation]) -> Result<Vec<BoundingBox>>;
}

impl Grounder for GroundingEngine {
    type Prepared = PreparedScene;

    fn prepare(&self, scene: &Scene, proposals: &[BoundingBox]) -> Result<PreparedScene> {
        GroundingEngine::prepare(self, scene, proposals)
    }

    fn predict(&self, prepared: &PreparedScene, query: &str, aggregations: &[Aggregation]) -> Result<Vec<BoundingBox>> {
        let Some(&first) = aggregations.first() else {
            return Ok(Vec::new());
        };
        let result = self.ground_prepared_with(prepared, query, first)?;
        Ok(aggregations
            .iter()
            .map(|&a| if a == first { result.top().bbox } else { result.reranked(a).top().bbox })
            .collect())
    }
}

/// Test stub that resolves the query with the grammar oracle and returns
/// the proposal overlapping the answer most.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleGrounder;

impl Grounder for OracleGrounder {
    type Prepared = (Scene, Vec<BoundingBox>);

    fn prepare(&self, scene: &Scene, proposals: &[BoundingBox]) -> Result<Self::Prepared> {
        Ok((scene.clone(), proposals.to_vec()))
    }

    fn predict(&self, (scene, boxes): &Self::Prepared, query: &str, aggregations: &[Aggregation]) -> Result<Vec<BoundingBox>> {
        let hits = resolve_text(scene, query).unwrap_or_default();
        let &[target] = hits.as_slice() else {
            return Err(Error::InvalidArgument(format!("oracle cannot resolve {query:?}")));
        };
        let truth = scene.objects[target].bbox;
        let best = boxes
            .iter()
            .max_by(|a, b| iou(a, &truth).total_cmp(&iou(b, &truth)))
            .ok_or(Error::NoCandidates)?;
        Ok(vec![*best; aggregations.len()])
    }
}

/// Test stub that picks a proposal uniformly at random, seeded by the query
/// and scene so runs are repeatable.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomGrounder {
    pub seed: u64,
}

impl Grounder for RandomGrounder {
    type Prepared = (String, Vec<BoundingBox>);

    fn prepare(&self, scene: &Scene, proposals: &[BoundingBox]) -> Result<Self::Prepared> {
        Ok((scene.id.clone(), proposals.to_vec()))
    }

    fn predict(&self, (id, boxes): &Self::Prepared, query: &str, aggregations: &[Aggregation]) -> Result<Vec<BoundingBox>> {
        if boxes.is_empty() {
            return Err(Error::NoCandidates);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(id) ^ fnv1a(query).rotate_left(17));
        Ok(vec![boxes[rng.gen_range(0..boxes.len())]; aggregations.len()])
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub proposal_modes: Vec<ProposalMode>,
    pub aggregations: Vec<Aggregation>,
    pub threshold: f64,
    /// Seed for degraded proposals; combined with each scene id.
    pub proposal_seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            proposal_modes: vec![ProposalMode::GroundTruth, ProposalMode::Degraded],
            aggregations: Aggregation::ALL.to_vec(),
            threshold: IOU_THRESHOLD,
            proposal_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub evaluated: usize,
    pub correct: usize,
}

impl KindStats {
    pub fn prec_at_1(&self) -> Option<f64> {
        (self.evaluated > 0).then(|| self.correct as f64 / self.evaluated as f64)
    }

    fn add(&mut self, other: &KindStats) {
        self.evaluated += other.evaluated;
        self.correct += other.correct;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub partition: String,
    pub proposals: ProposalMode,
    pub aggregation: Aggregation,
    /// Expressions scored (failures included, counted as misses).
    pub evaluated: usize,
    pub correct: usize,
    /// Expressions dropped by the noun filter.
    pub pruned: usize,
    /// Expressions the grounder returned an error for.
    pub failures: usize,
    pub prec_at_1: Option<f64>,
    pub by_kind: BTreeMap<ExpressionKind, KindStats>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub threshold: f64,
    pub cells: Vec<ReportCell>,
}

impl BenchmarkReport {
    pub fn cell(&self, partition: &str, proposals: ProposalMode, aggregation: Aggregation) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.partition == partition && c.proposals == proposals && c.aggregation == aggregation)
    }

    /// Pooled counts for one expression kind over several partitions.
    pub fn pooled(
        &self,
        partitions: &[&str],
        proposals: ProposalMode,
        aggregation: Aggregation,
        kind: ExpressionKind,
    ) -> KindStats {
        let mut total = KindStats::default();
        for p in partitions {
            if let Some(s) = self.cell(p, proposals, aggregation).and_then(|c| c.by_kind.get(&kind)) {
                total.add(s);
            }
        }
        total
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// Aligned text table: one row per aggregation, one column per
    /// (proposal mode, partition).
    pub fn render_table(&self) -> String {
        let mut cols: Vec<(ProposalMode, String)> = Vec::new();
        let mut rows: Vec<Aggregation> = Vec::new();
        for c in &self.cells {
            if !cols.contains(&(c.proposals, c.partition.clone())) {
                cols.push((c.proposals, c.partition.clone()));
            }
            if !rows.contains(&c.aggregation) {
                rows.push(c.aggregation);
            }
        }
        let headers: Vec<String> = cols.iter().map(|(m, p)| format!("{}/{}", m.name(), p)).collect();
        let width = headers.iter().map(String::len).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "aggregation");
        for h in &headers {
            let _ = write!(out, " {h:>width$}");
        }
        out.push('\n');
        for a in rows {
            let _ = write!(out, "{:<12}", a.name());
            for (m, p) in &cols {
                let v = self
                    .cell(p, *m, a)
                    .and_then(|c| c.prec_at_1)
                    .map(|v| format!("{:.1}", 100.0 * v))
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, " {v:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Wall-clock measurements, kept apart from the report so the report stays
/// byte-identical across runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub queries: usize,
    pub total_seconds: f64,
    pub mean_query_ms: f64,
    pub p50_query_ms: f64,
    pub p95_query_ms: f64,
    pub max_query_ms: f64,
}

impl TimingStats {
    fn from_samples(mut ms: Vec<f64>, total_seconds: f64) -> Self {
        if ms.is_empty() {
            return TimingStats {
                total_seconds,
                ..Default::default()
            };
        }
        ms.sort_by(f64::total_cmp);
        let q = |f: f64| ms[((ms.len() - 1) as f64 * f).round() as usize];
        TimingStats {
            queries: ms.len(),
            total_seconds,
            mean_query_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p50_query_ms: q(0.5),
            p95_query_ms: q(0.95),
            max_query_ms: *ms.last().unwrap(),
        }
    }
}

/// Seed for the degraded proposals of a scene.
pub fn proposal_seed(base: u64, scene_id: &str) -> u64 {
    base ^ fnv1a(scene_id)
}

struct SceneOutcome {
    /// Per (mode, aggregation): per-kind stats, pruned, failures.
    cells: Vec<(BTreeMap<ExpressionKind, KindStats>, usize, usize)>,
    latencies: Vec<f64>,
}

fn evaluate_scene<G: Grounder>(
    grounder: &G,
    file: &SceneFile,
    config: &BenchmarkConfig,
    lexicon: &NounLexicon,
) -> SceneOutcome {
    let scene = file.scene();
    let n_agg = config.aggregations.len();
    let mut cells = Vec::with_capacity(config.proposal_modes.len() * n_agg);
    let mut latencies = Vec::new();
    for &mode in &config.proposal_modes {
        let proposals = make_proposals(&scene, mode, proposal_seed(config.proposal_seed, &file.id));
        let mut stats = vec![(BTreeMap::new(), 0usize, 0usize); n_agg];
        let started = Instant::now();
        let prepared = grounder.prepare(&scene, &proposals.boxes);
        let prep_ms = started.elapsed().as_secs_f64() * 1e3;
        let scored: Vec<_> = file
            .expressions
            .iter()
            .filter(|e| contains_noun(&tokenize(&e.text), lexicon))
            .collect();
        let share = prep_ms / scored.len().max(1) as f64;
        for e in &file.expressions {
            if !contains_noun(&tokenize(&e.text), lexicon) {
                stats.iter_mut().for_each(|s| s.1 += 1);
                continue;
            }
            let truth = scene.object(&e.target).expect("validated corpus").bbox;
            let t = Instant::now();
            let prediction = prepared
                .as_ref()
                .map_err(|_| ())
                .and_then(|p| grounder.predict(p, &e.text, &config.aggregations).map_err(|_| ()));
            latencies.push(t.elapsed().as_secs_f64() * 1e3 + share);
            for (a, s) in stats.iter_mut().enumerate() {
                let k = s.0.entry(e.kind).or_insert_with(KindStats::default);
                k.evaluated += 1;
                match &prediction {
                    Ok(boxes) if boxes.len() == n_agg => {
                        if iou(&boxes[a], &truth) > config.threshold {
                            k.correct += 1;
                        }
                    }
                    _ => s.2 += 1,
                }
            }
        }
        cells.extend(stats);
    }
    SceneOutcome { cells, latencies }
}

/// Runs every (partition, proposal mode, aggregation) cell. Grounder
/// errors are counted as failures and never abort the run.
pub fn run_benchmark<G: Grounder>(
    grounder: &G,
    partitions: &[(String, Vec<&SceneFile>)],
    config: &BenchmarkConfig,
) -> Result<(BenchmarkReport, TimingStats)> {
    if partitions.is_empty() || partitions.iter().any(|(_, s)| s.is_empty()) {
        return Err(Error::InvalidArgument("every benchmark partition needs scenes".into()));
    }
    if config.proposal_modes.is_empty() || config.aggregations.is_empty() {
        return Err(Error::InvalidArgument("benchmark needs proposal modes and aggregations".into()));
    }
    let lexicon = NounLexicon::default();
    let started = Instant::now();
    let mut report = BenchmarkReport {
        threshold: config.threshold,
        cells: Vec::new(),
    };
    let mut latencies = Vec::new();
    for (name, scenes) in partitions {
        let outcomes: Vec<SceneOutcome> = scenes
            .par_iter()
            .map(|f| evaluate_scene(grounder, f, config, &lexicon))
            .collect();
        let mut i = 0;
        for &mode in &config.proposal_modes {
            for &aggregation in &config.aggregations {
                let mut cell = ReportCell {
                    partition: name.clone(),
                    proposals: mode,
                    aggregation,
                    evaluated: 0,
                    correct: 0,
                    pruned: 0,
                    failures: 0,
                    prec_at_1: None,
                    by_kind: BTreeMap::new(),
                };
                for o in &outcomes {
                    let (kinds, pruned, failures) = &o.cells[i];
                    cell.pruned += pruned;
                    cell.failures += failures;
                    for (k, s) in kinds {
                        cell.by_kind.entry(*k).or_default().add(s);
                    }
                }
                cell.evaluated = cell.by_kind.values().map(|s| s.evaluated).sum();
                cell.correct = cell.by_kind.values().map(|s| s.correct).sum();
                cell.prec_at_1 = (cell.evaluated > 0).then(|| cell.correct as f64 / cell.evaluated as f64);
                report.cells.push(cell);
                i += 1;
            }
        }
        for o in outcomes {
            latencies.extend(o.latencies);
        }
    }
    let timing = TimingStats::from_samples(latencies, started.elapsed().as_secs_f64());
    Ok((report, timing))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(a: f64, b: f64, c: f64, d: f64) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((iou(&a, &bx(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn prec_at_1_counts_strictly() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        let far = bx(5.0, 5.0, 6.0, 6.0);
        assert_eq!(prec_at_1(&[(a, a), (a, a), (a, a), (far, a)], 0.5).unwrap(), 0.75);
        assert_eq!(prec_at_1(&[(far, a)], 0.5).unwrap(), 0.0);
        // IoU exactly 0.5 is a miss.
        let half = bx(0.0, 0.0, 1.0, 2.0);
        assert_eq!(iou(&half, &a), 0.5);
        assert_eq!(prec_at_1(&[(half, a)], 0.5).unwrap(), 0.0);
        assert!(prec_at_1(&[], 0.5).is_err());
    }

    #[test]
    fn timing_quantiles() {
        let t = TimingStats::from_samples(vec![3.0, 1.0, 2.0], 1.0);
        assert_eq!((t.queries, t.p50_query_ms, t.max_query_ms), (3, 2.0, 3.0));
        assert_eq!(t.mean_query_ms, 2.0);
    }
}
