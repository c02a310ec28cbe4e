use super::io::{CorpusSplits, SceneFile};
use super::{generate_expressions, generate_scene, split_by_duplicates, split_dataset, SceneConfig};
use crate::error::Result;

/// Train/val/test shares of a generated corpus (2000/150/300 at 2450 scenes).
pub const SPLIT_RATIOS: [f64; 3] = [2000.0 / 2450.0, 150.0 / 2450.0, 300.0 / 2450.0];
pub const PARTITIONS: [&str; 4] = ["train", "val", "test_a", "test_b"];

/// Per-scene seed derived from the corpus seed.
pub fn scene_seed(corpus_seed: u64, index: usize) -> u64 {
    corpus_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index as u64)
}

/// Generates `n` scenes with expressions and partitions them into
/// train/val/test_a/test_b. The test share is split by duplicate density.
pub fn generate_corpus(config: &SceneConfig, n: usize, seed: u64) -> Result<(Vec<SceneFile>, CorpusSplits)> {
    let mut files = Vec::with_capacity(n);
    for i in 0..n {
        let s = scene_seed(seed, i);
        let mut scene = generate_scene(config, s)?;
        scene.id = format!("scene-{i:05}");
        let expressions = generate_expressions(&scene, config, s);
        files.push(SceneFile::new(scene, expressions));
    }
    let ids: Vec<usize> = (0..n).collect();
    let parts = split_dataset(&ids, SPLIT_RATIOS, seed)?;
    let test: Vec<_> = parts.test.iter().map(|&i| files[i].scene()).collect();
    let (test_a, test_b) = split_by_duplicates(&test);
    let mut splits = CorpusSplits::default();
    let names = |v: &[usize]| {
        let mut out: Vec<String> = v.iter().map(|&i| files[i].id.clone()).collect();
        out.sort();
        out
    };
    splits.0.insert("train".into(), names(&parts.train));
    splits.0.insert("val".into(), names(&parts.val));
    splits.0.insert("test_a".into(), test_a.into_iter().map(|s| s.id).collect());
    splits.0.insert("test_b".into(), test_b.into_iter().map(|s| s.id).collect());
    Ok((files, splits))
}

impl CorpusSplits {
    /// Ids of a partition; empty when absent.
    pub fn ids(&self, partition: &str) -> &[String] {
        self.0.get(partition).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Scenes of `files` that belong to `partition`, in id order.
    pub fn select<'a>(&self, files: &'a [SceneFile], partition: &str) -> Vec<&'a SceneFile> {
        let ids: std::collections::BTreeSet<&str> = self.ids(partition).iter().map(String::as_str).collect();
        let mut out: Vec<&SceneFile> = files.iter().filter(|f| ids.contains(f.id.as_str())).collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }
}
