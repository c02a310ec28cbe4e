//! Relevancy clustering: place each top-k region at (inverted normalized
//! loss, normalized caption similarity) and split the points into two
//! groups, keeping the group nearer (1, 1).

use std::collections::BTreeSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantic::ScoredRegion;

const DEFAULT_SYNONYMS: &str = include_str!("../data/synonyms.txt");

/// Largest point set accepted by [`relevancy_cluster`].
pub const MAX_POINTS: usize = 10;

/// Undirected synonym pairs. Every pair is stored in both directions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymTable {
    pairs: BTreeSet<(String, String)>,
}

impl SynonymTable {
    pub fn new() -> Self {
        SynonymTable::default()
    }

    /// One comma-separated group per line; blank lines and `#` comments are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = SynonymTable::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let group: Vec<&str> = line.split(',').map(str::trim).collect();
            if group.len() < 2 || group.iter().any(|w| w.is_empty()) {
                return Err(Error::InvalidArgument(format!("synonym line {}: {line:?}", n + 1)));
            }
            for (i, a) in group.iter().enumerate() {
                for b in &group[i + 1..] {
                    table.insert(a, b);
                }
            }
        }
        Ok(table)
    }

    pub fn insert(&mut self, a: &str, b: &str) {
        let (a, b) = (a.to_lowercase(), b.to_lowercase());
        if a != b {
            self.pairs.insert((a.clone(), b.clone()));
            self.pairs.insert((b, a));
        }
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        self.pairs.contains(&(a.to_string(), b.to_string()))
    }

    /// Number of undirected pairs.
    pub fn len(&self) -> usize {
        self.pairs.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

impl SynonymTable {
    /// The bundled table of category and size synonyms.
    pub fn bundled() -> &'static SynonymTable {
        static TABLE: OnceLock<SynonymTable> = OnceLock::new();
        TABLE.get_or_init(|| SynonymTable::parse(DEFAULT_SYNONYMS).expect("bundled synonyms parse"))
    }
}

/// Unigram METEOR with exact and synonym matching.
///
/// Alignment is greedy in candidate order: first exact matches, then synonym
/// matches, each reference token used once. Chunks are maximal runs of
/// matches that are adjacent in both the candidate and the reference.
pub fn meteor_lite(candidate: &[String], reference: &[String], synonyms: &SynonymTable) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut align: Vec<Option<usize>> = vec![None; candidate.len()];
    let mut used = vec![false; reference.len()];
    let passes: [&dyn Fn(&str, &str) -> bool; 2] =
        [&|a, b| a == b, &|a, b| synonyms.are_synonyms(a, b)];
    for matches in passes {
        for (i, c) in candidate.iter().enumerate() {
            if align[i].is_some() {
                continue;
            }
            if let Some(j) = (0..reference.len()).find(|&j| !used[j] && matches(c, &reference[j])) {
                used[j] = true;
                align[i] = Some(j);
            }
        }
    }
    let matched: Vec<usize> = align.iter().flatten().copied().collect();
    let m = matched.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, a) in align.iter().enumerate() {
        match (a, prev) {
            (Some(j), Some((pi, pj))) if pi + 1 == i && pj + 1 == *j => {}
            (Some(_), _) => chunks += 1,
            (None, _) => {}
        }
        prev = a.map(|j| (i, j));
    }
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f * (1.0 - penalty)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevancePoint {
    pub region_index: usize,
    pub m_loss: f64,
    pub m_gen: f64,
}

/// `(v - min) / (max - min)`, or `invert` of it; all ones when the values
/// coincide.
fn min_max(values: &[f64], invert: bool) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![1.0; values.len()];
    }
    values
        .iter()
        .map(|v| {
            let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            if invert {
                1.0 - t
            } else {
                t
            }
        })
        .collect()
}

/// Builds points from raw losses and similarities. The loss axis is
/// inverted so that relevant regions sit near (1, 1).
pub fn relevance_points(indices: &[usize], losses: &[f64], similarities: &[f64]) -> Result<Vec<RelevancePoint>> {
    if losses.is_empty() || losses.len() != similarities.len() || losses.len() != indices.len() {
        return Err(Error::InvalidArgument("relevance inputs must be non-empty and equally long".into()));
    }
    let inv = min_max(losses, true);
    let gen = min_max(similarities, false);
    Ok(indices
        .iter()
        .zip(inv.into_iter().zip(gen))
        .map(|(&region_index, (m_loss, m_gen))| RelevancePoint {
            region_index,
            m_loss,
            m_gen,
        })
        .collect())
}

pub fn normalize_metrics(
    scored: &[ScoredRegion],
    query: &[String],
    synonyms: &SynonymTable,
) -> Result<Vec<RelevancePoint>> {
    let indices: Vec<usize> = scored.iter().map(|s| s.region.index).collect();
    let losses: Vec<f64> = scored.iter().map(|s| s.loss).collect();
    let sims: Vec<f64> = scored
        .iter()
        .map(|s| meteor_lite(&s.region.caption, query, synonyms))
        .collect();
    relevance_points(&indices, &losses, &sims)
}

fn sq_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn centroid(points: &[RelevancePoint], members: impl Iterator<Item = usize>) -> ((f64, f64), usize) {
    let (mut x, mut y, mut n) = (0.0, 0.0, 0);
    for i in members {
        x += points[i].m_loss;
        y += points[i].m_gen;
        n += 1;
    }
    ((x / n as f64, y / n as f64), n)
}

/// Within-cluster sum of squared deviations of a two-way split. `mask` bit
/// `i` set puts point `i` in the second group.
pub fn partition_sse(points: &[RelevancePoint], mask: u32) -> f64 {
    let mut total = 0.0;
    for side in [false, true] {
        let members = || (0..points.len()).filter(move |&i| (mask >> i & 1 == 1) == side);
        if members().next().is_none() {
            continue;
        }
        let (c, _) = centroid(points, members());
        total += members()
            .map(|i| sq_dist((points[i].m_loss, points[i].m_gen), c))
            .sum::<f64>();
    }
    total
}

/// Exhaustive minimum-SSE bipartition into two non-empty groups. The last
/// point always stays in the first group, so each split is visited once;
/// the first optimum in mask order wins. Returns the mask and its SSE.
pub fn optimal_bipartition(points: &[RelevancePoint]) -> Result<(u32, f64)> {
    let n = points.len();
    if !(2..=MAX_POINTS).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "bipartition needs 2..={MAX_POINTS} points, got {n}"
        )));
    }
    let mut best = (0, f64::INFINITY);
    for mask in 1..(1u32 << (n - 1)) {
        let sse = partition_sse(points, mask);
        if sse < best.1 {
            best = (mask, sse);
        }
    }
    Ok(best)
}

/// Positions (into `points`) of the relevant cluster, ascending.
pub fn relevancy_cluster(points: &[RelevancePoint]) -> Result<Vec<usize>> {
    match points.len() {
        0 => return Err(Error::NoCandidates),
        1 => return Ok(vec![0]),
        n if n > MAX_POINTS => {
            return Err(Error::InvalidArgument(format!("at most {MAX_POINTS} points, got {n}")))
        }
        _ => {}
    }
    let (mask, _) = optimal_bipartition(points)?;
    let group = |side: bool| -> Vec<usize> {
        (0..points.len()).filter(|&i| (mask >> i & 1 == 1) == side).collect()
    };
    let (a, b) = (group(false), group(true));
    let da = sq_dist(centroid(points, a.iter().copied()).0, (1.0, 1.0));
    let db = sq_dist(centroid(points, b.iter().copied()).0, (1.0, 1.0));
    if da < db {
        return Ok(a);
    }
    if db < da {
        return Ok(b);
    }
    let strength = |i: usize| points[i].m_loss + points[i].m_gen;
    let best = (0..points.len())
        .max_by(|&i, &j| strength(i).total_cmp(&strength(j)).then(j.cmp(&i)))
        .unwrap();
    Ok(if a.contains(&best) { a } else { b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::tokenize;

    fn p(i: usize, x: f64, y: f64) -> RelevancePoint {
        RelevancePoint {
            region_index: i,
            m_loss: x,
            m_gen: y,
        }
    }

    fn meteor(a: &str, b: &str, syn: &SynonymTable) -> f64 {
        meteor_lite(&tokenize(a), &tokenize(b), syn)
    }

    #[test]
    fn meteor_fixtures() {
        let none = SynonymTable::new();
        let full = 1.0 - 0.5 / 27.0;
        assert!((meteor("the green glass", "the green glass", &none) - full).abs() < 1e-12);
        assert!((meteor("the green glass", "the green cup", &none) - 0.625).abs() < 1e-12);
        assert_eq!(meteor("red box", "blue cup", &none), 0.0);
        let mut syn = SynonymTable::new();
        syn.insert("glass", "cup");
        assert!((meteor("the green glass", "the green cup", &syn) - full).abs() < 1e-12);
        assert!(meteor("the green glass", "the blue book", &none) < 0.625);
    }

    #[test]
    fn meteor_counts_chunks_in_both_orders() {
        let none = SynonymTable::new();
        // m = 2, P = R = 1, chunks = 2: penalty 0.5 * 1 = 0.5.
        assert!((meteor("cup red", "red cup", &none) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn synonyms_are_symmetric() {
        let t = SynonymTable::parse("cup, mug\n# c\n\nsmall,little,tiny\n").unwrap();
        assert!(t.are_synonyms("mug", "cup") && t.are_synonyms("cup", "mug"));
        assert!(t.are_synonyms("tiny", "small"));
        assert_eq!(t.len(), 4);
        assert!(SynonymTable::parse("lonely\n").is_err());
        assert!(SynonymTable::bundled().are_synonyms("flask", "bottle"));
    }

    #[test]
    fn loss_axis_is_inverted() {
        let pts = relevance_points(&[0, 1, 2], &[2.0, 4.0, 6.0], &[0.5, 0.5, 0.5]).unwrap();
        let m: Vec<f64> = pts.iter().map(|p| p.m_loss).collect();
        assert_eq!(m, vec![1.0, 0.5, 0.0]);
        assert!(pts.iter().all(|p| p.m_gen == 1.0));
        let flat = relevance_points(&[0, 1], &[3.0, 3.0], &[0.1, 0.9]).unwrap();
        assert!(flat.iter().all(|p| p.m_loss == 1.0));
        assert_eq!(flat[0].m_gen, 0.0);
    }

    #[test]
    fn cluster_examples() {
        let pts = [p(0, 0.95, 0.9), p(1, 0.9, 0.95), p(2, 0.1, 0.05)];
        assert_eq!(relevancy_cluster(&pts).unwrap(), vec![0, 1]);
        assert_eq!(relevancy_cluster(&pts[2..]).unwrap(), vec![0]);
        let dup = [p(0, 0.5, 0.5), p(1, 0.5, 0.5), p(2, 0.9, 0.9)];
        assert_eq!(relevancy_cluster(&dup).unwrap(), vec![2]);
        assert!(relevancy_cluster(&[]).is_err());
    }

    #[test]
    fn equidistant_centroids_pick_strongest_point() {
        // Centroids (1, 0) and (0, 1) are both at distance 1 from (1, 1).
        let pts = [p(0, 1.0, 0.0), p(1, 0.0, 1.0), p(2, 1.0, 0.0), p(3, 0.0, 1.0)];
        let out = relevancy_cluster(&pts).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.contains(&0));
    }

    /// SSE as the mean pairwise squared distance, summed per group.
    fn pairwise_sse(points: &[(f64, f64)], side: &[bool]) -> f64 {
        let mut total = 0.0;
        for g in [false, true] {
            let members: Vec<&(f64, f64)> = points.iter().zip(side).filter(|(_, s)| **s == g).map(|(q, _)| q).collect();
            let mut pair = 0.0;
            for a in &members {
                for b in &members {
                    pair += sq_dist(**a, **b);
                }
            }
            if !members.is_empty() {
                total += pair / (2.0 * members.len() as f64);
            }
        }
        total
    }

    proptest::proptest! {
        #[test]
        fn bipartition_is_optimal(raw in proptest::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 2..=MAX_POINTS)) {
            let pts: Vec<RelevancePoint> = raw.iter().enumerate().map(|(i, &(x, y))| p(i, x, y)).collect();
            let (mask, sse) = optimal_bipartition(&pts).unwrap();
            let n = raw.len();
            let mut best = f64::INFINITY;
            for full in 1u32..(1 << n) - 1 {
                let side: Vec<bool> = (0..n).map(|i| full >> i & 1 == 1).collect();
                best = best.min(pairwise_sse(&raw, &side));
            }
            proptest::prop_assert!((sse - best).abs() < 1e-9, "{} vs {}", sse, best);
            proptest::prop_assert!(mask >> (n - 1) == 0 && mask != 0);
            let side: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            proptest::prop_assert!((pairwise_sse(&raw, &side) - sse).abs() < 1e-9);
            let cluster = relevancy_cluster(&pts).unwrap();
            proptest::prop_assert!(!cluster.is_empty() && cluster.len() < n);
        }
    }

    #[test]
    fn planted_blobs_are_recovered() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(3..=MAX_POINTS);
            let n_rel = rng.gen_range(1..n);
            let mut truth = Vec::new();
            let pts: Vec<RelevancePoint> = (0..n)
                .map(|i| {
                    let relevant = i < n_rel;
                    let c = if relevant { 0.9 } else { 0.15 };
                    if relevant {
                        truth.push(i);
                    }
                    p(i, c + rng.gen_range(-0.08..0.08), c + rng.gen_range(-0.08..0.08))
                })
                .collect();
            assert_eq!(relevancy_cluster(&pts).unwrap(), truth);
        }
    }

    #[test]
    fn meteor_is_bounded() {
        use rand::{Rng, SeedableRng};
        let words = ["the", "red", "cup", "mug", "left", "of", "bottle", "blue"];
        let syn = SynonymTable::parse("cup, mug\n").unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<String> {
            let n = rng.gen_range(0..7);
            (0..n).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
        };
        for _ in 0..10_000 {
            let (a, b) = (draw(&mut rng), draw(&mut rng));
            let v = meteor_lite(&a, &b, &syn);
            assert!((0.0..1.0).contains(&v), "{a:?} {b:?} {v}");
            if !a.is_empty() {
                let m = a.len() as f64;
                let same = meteor_lite(&a, &a, &syn);
                assert!((same - (1.0 - 0.5 / (m * m * m))).abs() < 1e-12, "{a:?}");
            }
        }
    }
}
