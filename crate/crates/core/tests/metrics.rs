mod common;

use common::{brute_force_f1, matches_brute_force, random_small_graph};
use cyclekg_core::kg::tokenize;
use cyclekg_core::metrics::{cider, corpus_bleu, edge_f1, rouge_l, FIXTURE_SUITE_VERSION};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    hypotheses: Vec<Vec<String>>,
    references: Vec<Vec<Vec<String>>>,
    expected: f64,
}

#[derive(Deserialize)]
struct Fixtures {
    version: String,
    bleu: Vec<Case>,
    rouge_l: Vec<Case>,
    cider: Vec<Case>,
}

fn fixtures() -> Fixtures {
    let raw = include_str!("fixtures/metric_fixtures.json");
    serde_json::from_str(raw).unwrap()
}

#[test]
fn bleu_matches_reference_implementation() {
    let f = fixtures();
    assert_eq!(f.version, FIXTURE_SUITE_VERSION);
    assert_eq!(f.bleu.len(), 20);
    for (i, c) in f.bleu.iter().enumerate() {
        let got = corpus_bleu(&c.hypotheses, &c.references).unwrap();
        assert!(
            (got - c.expected).abs() <= 1e-6,
            "bleu case {i}: {got} vs {}",
            c.expected
        );
    }
}

#[test]
fn rouge_matches_reference_implementation() {
    for (i, c) in fixtures().rouge_l.iter().enumerate() {
        let got = rouge_l(&c.hypotheses, &c.references).unwrap();
        assert!(
            (got - c.expected).abs() <= 1e-6,
            "rouge case {i}: {got} vs {}",
            c.expected
        );
    }
}

#[test]
fn cider_matches_reference_implementation() {
    for (i, c) in fixtures().cider.iter().enumerate() {
        let got = cider(&c.hypotheses, &c.references).unwrap();
        assert!(
            (got - c.expected).abs() <= 1e-4,
            "cider case {i}: {got} vs {}",
            c.expected
        );
    }
}

#[test]
fn identity_corpus_bleu_is_100() {
    let c = &fixtures().bleu[0];
    assert!((corpus_bleu(&c.hypotheses, &c.references).unwrap() - 100.0).abs() < 1e-9);
}

#[test]
fn edge_f1_matches_brute_force_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let n = rng.gen_range(1..6);
        let pred: Vec<_> = (0..n).map(|_| random_small_graph(&mut rng)).collect();
        let gold: Vec<_> = (0..n).map(|_| random_small_graph(&mut rng)).collect();
        let rep = edge_f1(&pred, &gold).unwrap();
        let oracle = brute_force_f1(&pred, &gold);
        assert!(matches_brute_force(&rep, &oracle), "{rep:?}");
    }
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..10)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #[test]
    fn text_metrics_ignore_corpus_and_reference_order(
        items in prop::collection::vec((sentence(), prop::collection::vec(sentence(), 1..4)), 2..8),
        rot in 0usize..8,
    ) {
        let hyps: Vec<_> = items.iter().map(|x| x.0.clone()).collect();
        let refs: Vec<_> = items.iter().map(|x| x.1.clone()).collect();
        let mut hyps2 = hyps.clone();
        let mut refs2 = refs.clone();
        let k = rot % hyps.len();
        hyps2.rotate_left(k);
        refs2.rotate_left(k);
        for r in &mut refs2 {
            r.reverse();
        }
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
        prop_assert!(close(corpus_bleu(&hyps, &refs).unwrap(), corpus_bleu(&hyps2, &refs2).unwrap()));
        prop_assert!(close(rouge_l(&hyps, &refs).unwrap(), rouge_l(&hyps2, &refs2).unwrap()));
        prop_assert!(close(cider(&hyps, &refs).unwrap(), cider(&hyps2, &refs2).unwrap()));
    }

    #[test]
    fn bleu_is_bounded(items in prop::collection::vec((sentence(), prop::collection::vec(sentence(), 1..3)), 1..6)) {
        let hyps: Vec<_> = items.iter().map(|x| x.0.clone()).collect();
        let refs: Vec<_> = items.iter().map(|x| x.1.clone()).collect();
        let b = corpus_bleu(&hyps, &refs).unwrap();
        prop_assert!((0.0..=100.0 + 1e-9).contains(&b));
    }
}

#[test]
fn tokenization_is_shared() {
    assert_eq!(tokenize("The  Band"), vec!["the", "band"]);
}
