mod common;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use refground::pipeline::{parse_command, Action};
use refground::scene::{make_proposals, ProposalMode};
use refground::{Aggregation, EngineConfig, Error, GroundingEngine};

#[test]
fn result_structure_is_consistent() {
    let (engine, files, _) = common::quick_engine();
    for file in files.iter().take(10) {
        let scene = file.scene();
        let proposals = make_proposals(&scene, ProposalMode::Degraded, 3).boxes;
        for e in &file.expressions {
            let r = engine.ground(&scene, &proposals, &e.text).unwrap();
            let d = &r.diagnostics;
            assert_eq!(d.regions.len(), proposals.len());
            assert!(d.regions.windows(2).all(|w| w[0].loss <= w[1].loss));
            assert_eq!(d.top_k.len(), proposals.len().min(10));
            assert_eq!(d.relevance.len(), d.top_k.len());
            let relevant: BTreeSet<usize> = d.relevant.iter().copied().collect();
            let ranked: BTreeSet<usize> = r.ranked.iter().map(|c| c.region_index).collect();
            assert_eq!(relevant, ranked);
            assert!(relevant.iter().all(|i| d.top_k.contains(i)));
            assert_eq!(d.pair_matrix.evaluations(), r.ranked.len().pow(2));
            assert!(r.ranked.windows(2).all(|w| w[0].score >= w[1].score));
            for c in &r.ranked {
                assert_eq!(c.bbox, proposals[c.region_index]);
                assert!((0.0..=1.0).contains(&c.score));
            }
        }
    }
}

#[test]
fn rejection_walk_visits_ranking_once() {
    let (engine, files, _) = common::quick_engine();
    let scene = files[0].scene();
    let proposals = make_proposals(&scene, ProposalMode::GroundTruth, 0).boxes;
    let r = engine.ground(&scene, &proposals, &files[0].expressions[0].text).unwrap();
    let mut rejected = BTreeSet::new();
    let mut seen = Vec::new();
    while let Some((rank, c)) = r.next_candidate(&rejected) {
        seen.push(*c);
        rejected.insert(rank);
    }
    assert_eq!(seen, r.ranked);
    assert!(r.next_candidate(&rejected).is_none());
}

#[test]
fn grounding_is_deterministic_and_order_free() {
    let (engine, files, _) = common::quick_engine();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for file in files.iter().take(8) {
        let scene = file.scene();
        let proposals = make_proposals(&scene, ProposalMode::GroundTruth, 0).boxes;
        let mut shuffled = proposals.clone();
        shuffled.shuffle(&mut rng);
        for e in &file.expressions {
            let a = engine.ground(&scene, &proposals, &e.text).unwrap();
            let b = engine.ground(&scene, &proposals, &e.text).unwrap();
            assert_eq!(a, b);
            let c = engine.ground(&scene, &shuffled, &e.text).unwrap();
            let boxes = |r: &refground::GroundingResult| r.ranked.iter().map(|c| (c.bbox, c.score)).collect::<Vec<_>>();
            assert_eq!(boxes(&a), boxes(&c));
        }
    }
}

#[test]
fn rerank_matches_direct_grounding() {
    let (engine, files, _) = common::quick_engine();
    let file = &files[3];
    let scene = file.scene();
    let prepared = engine.prepare(&scene, &make_proposals(&scene, ProposalMode::Degraded, 9).boxes).unwrap();
    for e in &file.expressions {
        let noisy = engine.ground_prepared_with(&prepared, &e.text, Aggregation::NoisyOr).unwrap();
        let max = engine.ground_prepared_with(&prepared, &e.text, Aggregation::Max).unwrap();
        assert_eq!(noisy.reranked(Aggregation::Max), max);
        assert_eq!(max.reranked(Aggregation::NoisyOr), noisy);
    }
}

#[test]
fn bad_inputs_are_reported() {
    let (engine, files, _) = common::quick_engine();
    let scene = files[0].scene();
    let proposals = make_proposals(&scene, ProposalMode::GroundTruth, 0).boxes;
    assert!(matches!(engine.ground(&scene, &proposals, "  "), Err(Error::EmptyQuery)));
    match engine.ground(&scene, &[], "the cup") {
        Err(Error::Stage { stage, source }) => {
            assert_eq!(stage, "semantic");
            assert!(matches!(*source, Error::NoCandidates));
        }
        other => panic!("{other:?}"),
    }
    let r = engine.ground(&scene, &proposals, "zebra quokka").unwrap();
    assert!(r.diagnostics.unknown_query);
    assert!(!r.ranked.is_empty());
}

#[test]
fn small_k_limits_candidates() {
    let (files, splits) = common::corpus(60, 1);
    let models = common::quick_models(&files, &splits);
    let engine = GroundingEngine::from_models(models.clone(), EngineConfig { k: 1, ..Default::default() }).unwrap();
    let scene = files[0].scene();
    let proposals = make_proposals(&scene, ProposalMode::GroundTruth, 0).boxes;
    let r = engine.ground(&scene, &proposals, &files[0].expressions[0].text).unwrap();
    assert_eq!(r.ranked.len(), 1);
    assert_eq!(r.diagnostics.pair_matrix.evaluations(), 1);
    assert!(GroundingEngine::from_models(models.clone(), EngineConfig { k: 0, ..Default::default() }).is_err());
    assert!(GroundingEngine::from_models(models, EngineConfig { k: 11, ..Default::default() }).is_err());
}

#[test]
fn commands_feed_the_engine() {
    let (engine, files, _) = common::quick_engine();
    let scene = files[0].scene();
    let proposals = make_proposals(&scene, ProposalMode::GroundTruth, 0).boxes;
    let text = &files[0].expressions[0].text;
    let (action, rest) = parse_command(&format!("pick up {text}")).unwrap();
    assert_eq!(action, Action::PickUp);
    assert_eq!(&rest, text);
    assert_eq!(
        engine.ground(&scene, &proposals, &rest).unwrap(),
        engine.ground(&scene, &proposals, text).unwrap()
    );
}
