use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Scene;
use crate::error::{Error, Result};

/// Three-way partition of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Partitions<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Partition sizes by the largest-remainder rule.
fn sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut out = exact.map(|e| e.floor() as usize);
    let mut rest = n - out.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        out[i] += 1;
        rest -= 1;
    }
    out
}

/// Shuffles whole items (scenes) with `seed` and cuts them into
/// train/val/test by `ratios`.
pub fn split_dataset<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<Partitions<T>> {
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    if items.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} scenes into 3 partitions",
            items.len()
        )));
    }
    let [a, b, _] = sizes(items.len(), ratios);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |range: std::ops::Range<usize>| -> Vec<T> {
        let mut idx = order[range].to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| items[i].clone()).collect()
    };
    Ok(Partitions {
        train: pick(0..a),
        val: pick(a..a + b),
        test: pick(a + b..items.len()),
    })
}

/// Number of objects sharing their category with another object.
fn duplicate_count(scene: &Scene) -> usize {
    scene
        .objects
        .iter()
        .filter(|o| {
            scene
                .objects
                .iter()
                .filter(|p| p.category == o.category)
                .count()
                > 1
        })
        .count()
}

/// Splits scenes into (many same-category duplicates, attribute-diverse)
/// halves by ranking on the duplicate count.
pub fn split_by_duplicates(scenes: &[Scene]) -> (Vec<Scene>, Vec<Scene>) {
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.sort_by(|&a, &b| {
        duplicate_count(&scenes[b])
            .cmp(&duplicate_count(&scenes[a]))
            .then_with(|| scenes[a].id.cmp(&scenes[b].id))
    });
    let half = scenes.len().div_ceil(2);
    let mut a: Vec<Scene> = order[..half].iter().map(|&i| scenes[i].clone()).collect();
    let mut b: Vec<Scene> = order[half..].iter().map(|&i| scenes[i].clone()).collect();
    a.sort_by(|x, y| x.id.cmp(&y.id));
    b.sort_by(|x, y| x.id.cmp(&y.id));
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_sizes() {
        assert_eq!(sizes(10, [0.8, 0.1, 0.1]), [8, 1, 1]);
        assert_eq!(sizes(7, [0.5, 0.25, 0.25]), [3, 2, 2]);
        assert_eq!(sizes(100, [0.7, 0.15, 0.15]), [70, 15, 15]);
    }

    #[test]
    fn split_is_a_partition() {
        let items: Vec<usize> = (0..10).collect();
        let p = split_dataset(&items, [0.8, 0.1, 0.1], 4).unwrap();
        assert_eq!((p.train.len(), p.val.len(), p.test.len()), (8, 1, 1));
        let mut all: Vec<usize> = p.train.iter().chain(&p.val).chain(&p.test).copied().collect();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(p, split_dataset(&items, [0.8, 0.1, 0.1], 4).unwrap());
    }

    #[test]
    fn split_errors() {
        assert!(split_dataset(&[1, 2], [0.5, 0.25, 0.25], 0).is_err());
        assert!(split_dataset(&[1, 2, 3], [0.5, 0.5, 0.1], 0).is_err());
        assert!(split_dataset(&[1, 2, 3], [1.0, 0.0, 0.0], 0).is_err());
    }
}
