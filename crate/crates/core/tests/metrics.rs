mod common;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refground::cluster::{meteor_lite, SynonymTable};
use refground::eval::{iou, prec_at_1, run_benchmark, BenchmarkConfig, OracleGrounder, RandomGrounder};
use refground::scene::ProposalMode;
use refground::vocab::tokenize;
use refground::{Aggregation, BoundingBox};

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let (x, y) = (rng.gen_range(0.0..90.0), rng.gen_range(0.0..90.0));
    BoundingBox::new(x, y, x + rng.gen_range(0.5..40.0), y + rng.gen_range(0.5..40.0)).unwrap()
}

fn iou_oracle(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let area = |r: &BoundingBox| (r.x_max - r.x_min) * (r.y_max - r.y_min);
    inter / (area(a) + area(b) - inter)
}

#[test]
fn iou_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let v = iou(&a, &b);
        assert!((0.0..=1.0).contains(&v));
        assert_eq!(v, iou(&b, &a));
        assert!((v - iou_oracle(&a, &b)).abs() < 1e-12);
        assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        if a.x_max <= b.x_min || b.x_max <= a.x_min || a.y_max <= b.y_min || b.y_max <= a.y_min {
            assert_eq!(v, 0.0);
        }
    }
    let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
    let b = BoundingBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
    assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
}

#[test]
fn prec_at_1_ignores_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        let mut pairs: Vec<_> = (0..n)
            .map(|_| {
                let t = random_box(&mut rng);
                let p = if rng.gen_bool(0.5) { t } else { random_box(&mut rng) };
                (p, t)
            })
            .collect();
        let base = prec_at_1(&pairs, 0.5).unwrap();
        let hits = pairs.iter().filter(|(p, t)| iou(p, t) > 0.5).count();
        assert_eq!(base, hits as f64 / n as f64);
        pairs.shuffle(&mut rng);
        assert_eq!(prec_at_1(&pairs, 0.5).unwrap(), base);
    }
}

#[test]
fn meteor_fixtures() {
    let none = SynonymTable::new();
    let m = |a: &str, b: &str| meteor_lite(&tokenize(a), &tokenize(b), &none);
    assert!((m("the green glass", "the green glass") - 0.98148).abs() < 1e-5);
    assert!((m("the green glass", "the green cup") - 0.625).abs() < 1e-5);
    assert_eq!(m("red box", "blue cup"), 0.0);
}

#[test]
fn oracle_grounder_is_perfect() {
    let (files, splits) = common::corpus(80, 4);
    let parts = vec![("test_a".to_string(), splits.select(&files, "test_a")), ("val".to_string(), splits.select(&files, "val"))];
    let (report, _) = run_benchmark(&OracleGrounder, &parts, &BenchmarkConfig::default()).unwrap();
    assert_eq!(report.cells.len(), 2 * 2 * 2);
    for c in &report.cells {
        assert!(c.evaluated > 0);
        assert_eq!(c.failures, 0);
        if c.proposals == ProposalMode::GroundTruth {
            assert_eq!(c.prec_at_1, Some(1.0), "{c:?}");
        }
    }
}

#[test]
fn random_grounder_matches_chance() {
    let (files, splits) = common::corpus(400, 5);
    let train = splits.select(&files, "train");
    let config = BenchmarkConfig {
        proposal_modes: vec![ProposalMode::GroundTruth],
        aggregations: vec![Aggregation::NoisyOr],
        ..BenchmarkConfig::default()
    };
    let (report, _) = run_benchmark(&RandomGrounder { seed: 9 }, &[("train".into(), train.clone())], &config).unwrap();
    let cell = &report.cells[0];
    let (mut mean, mut var) = (0.0, 0.0);
    for f in &train {
        let p = 1.0 / f.objects.len() as f64;
        mean += p * f.expressions.len() as f64;
        var += p * (1.0 - p) * f.expressions.len() as f64;
    }
    assert_eq!(cell.pruned, 0);
    assert!((cell.correct as f64 - mean).abs() <= 3.0 * var.sqrt(), "{} vs {mean} ± {}", cell.correct, var.sqrt());
}

#[test]
fn report_is_reproducible() {
    let (files, splits) = common::corpus(40, 6);
    let parts = vec![("test_b".to_string(), splits.select(&files, "test_b"))];
    let a = run_benchmark(&RandomGrounder { seed: 1 }, &parts, &BenchmarkConfig::default()).unwrap().0;
    let b = run_benchmark(&RandomGrounder { seed: 1 }, &parts, &BenchmarkConfig::default()).unwrap().0;
    assert_eq!(a.to_json(), b.to_json());
    assert!(a.render_table().contains("noisy_or"));
}
