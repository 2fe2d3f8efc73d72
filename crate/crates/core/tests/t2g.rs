mod common;

use common::{gradient_check, graph, text, vocabs};
use cyclekg_core::kg::{AnnotatedText, Entity, KnowledgeGraph, Span};
use cyclekg_core::model::{
    classify_edges, edge_scores, encode_tokens, graph_from_scores, pool_entity, t2g_loss,
    t2g_loss_and_grads, t2g_predict, t2g_train_step, EdgeScores, T2GConfig, T2GModel,
};
use cyclekg_core::nn::{Adam, AdamConfig, Tensor};
use cyclekg_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> T2GConfig {
    T2GConfig {
        emb_dim: 4,
        hidden: 3,
        layers: 2,
        classifier_hidden: 5,
    }
}

fn sample() -> (AnnotatedText, KnowledgeGraph) {
    let t = text(
        "allen forest plays hip hop in berlin",
        &[("allen forest", 0, 2), ("hip hop", 3, 5), ("berlin", 6, 7)],
    );
    let g = graph(&[
        ("allen forest", "genre", "hip hop"),
        ("allen forest", "home", "berlin"),
    ]);
    (t, g)
}

fn model(cfg: T2GConfig, seed: u64) -> T2GModel {
    let (t, g) = sample();
    let (v, r) = vocabs(&[g], &[t]);
    T2GModel::new(cfg, v, r, seed).unwrap()
}

#[test]
fn gradients_match_finite_differences_per_group() {
    let (t, g) = sample();
    let mut m = model(tiny(), 3);
    let ex = m.example(&t, &g).unwrap();
    let (_, grads) = t2g_loss_and_grads(&m, &ex);
    let mut probe = m.clone();
    let report = gradient_check(&mut m.params, &grads, 1e-4, |ps| {
        probe.params = ps.clone();
        t2g_loss(&probe, &t, &g).unwrap()
    });
    assert_eq!(report.len(), m.params.len());
    for (name, rel) in report {
        assert!(rel < 1e-3, "{name}: relative error {rel}");
    }
}

#[test]
fn encoder_shapes_and_sensitivity() {
    let m = model(tiny(), 1);
    let one = text("berlin", &[("berlin", 0, 1)]);
    assert_eq!(encode_tokens(&m, &one).unwrap().rows(), 1);
    let (t, _) = sample();
    let base = encode_tokens(&m, &t).unwrap();
    let mut toks = t.tokens().to_vec();
    toks[2] = "berlin".into();
    let changed = encode_tokens(&m, &AnnotatedText::plain(toks)).unwrap();
    assert_ne!(base.row(2), changed.row(2));
    assert_eq!(base, encode_tokens(&m, &t).unwrap());
    assert_eq!(base.cols(), 2 * tiny().hidden);
    assert!(matches!(
        encode_tokens(&m, &AnnotatedText::plain(vec![])),
        Err(Error::EmptyText)
    ));
}

#[test]
fn fixed_seed_gives_identical_encodings() {
    let (t, _) = sample();
    let a = encode_tokens(&model(tiny(), 9), &t).unwrap();
    let b = encode_tokens(&model(tiny(), 9), &t).unwrap();
    assert_eq!(a.data(), b.data());
    let c = encode_tokens(&model(tiny(), 10), &t).unwrap();
    assert_ne!(a.data(), c.data());
}

#[test]
fn pooling_is_the_elementwise_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ctx = Tensor::uniform(7, 5, 1.0, &mut rng);
    let pooled = pool_entity(&ctx, &Span::new("x", 2, 6)).unwrap();
    for c in 0..5 {
        let mut acc = 0.0;
        for r in 2..6 {
            acc += ctx.get(r, c);
        }
        assert!((pooled.get(0, c) - acc / 4.0).abs() < 1e-6);
    }
    assert_eq!(
        pool_entity(&ctx, &Span::new("x", 3, 4)).unwrap().row(0),
        ctx.row(3)
    );
    let same = Tensor::from_vec(2, 2, vec![0.5, -1.0, 0.5, -1.0]);
    assert_eq!(
        pool_entity(&same, &Span::new("x", 0, 2)).unwrap().row(0),
        &[0.5, -1.0]
    );
    assert!(matches!(
        pool_entity(&ctx, &Span::new("x", 3, 3)),
        Err(Error::EmptySpan)
    ));
    assert!(matches!(
        pool_entity(&ctx, &Span::new("x", 5, 9)),
        Err(Error::SpanOutOfBounds { .. })
    ));
}

#[test]
fn classifier_is_permutation_equivariant() {
    let m = model(tiny(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = 2 * tiny().hidden;
    let v = Tensor::uniform(4, d, 1.0, &mut rng);
    let perm = [2, 0, 3, 1];
    let mut pv = Tensor::zeros(4, d);
    for (i, &p) in perm.iter().enumerate() {
        pv.row_mut(i).copy_from_slice(v.row(p));
    }
    let s = classify_edges(&m, &v);
    let ps = classify_edges(&m, &pv);
    for i in 0..4 {
        for j in 0..4 {
            for (a, b) in ps.cell(i, j).iter().zip(s.cell(perm[i], perm[j])) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
    assert!(s.scores.iter().all(|x| x.is_finite()));
    assert_eq!(s, classify_edges(&m, &v));
    let one = classify_edges(&m, &Tensor::uniform(1, d, 1.0, &mut rng));
    assert_eq!((one.k, one.scores.len()), (1, m.relations.len()));
    assert_eq!(one.labels(), vec![0]);
}

#[test]
fn single_entity_text_predicts_no_edges() {
    let m = model(tiny(), 5);
    let t = text("berlin is big", &[("berlin", 0, 1)]);
    let g = t2g_predict(&m, &t).unwrap();
    assert!(g.triples().is_empty());
    assert_eq!(g.entities().len(), 1);
    assert_eq!(t2g_loss(&m, &t, &KnowledgeGraph::empty()).unwrap(), 0.0);
    let none = t2g_predict(&m, &AnnotatedText::plain(vec!["x".into()])).unwrap();
    assert!(none.entities().is_empty() && none.triples().is_empty());
}

fn zero_classifier_output(m: &mut T2GModel) {
    for (i, name) in m.params.names().to_vec().iter().enumerate() {
        if name.starts_with("t2g.classifier.out") {
            m.params.tensors_mut()[i].fill(0.0);
        }
    }
}

#[test]
fn uniform_scores_give_log_r() {
    let (t, g) = sample();
    let mut m = model(tiny(), 2);
    zero_classifier_output(&mut m);
    let r = m.relations.len() as f64;
    assert!((t2g_loss(&m, &t, &g).unwrap() - r.ln()).abs() < 1e-12);
}

#[test]
fn loss_matches_hand_rolled_nll() {
    let (t, g) = sample();
    let m = model(tiny(), 8);
    let scores = edge_scores(&m, &t).unwrap();
    let keys = t.entity_key_order();
    let gold = g.edge_set();
    let mut total = 0.0;
    let mut cells = 0;
    for i in 0..keys.len() {
        for j in 0..keys.len() {
            if i == j {
                continue;
            }
            let label = (0..m.relations.len())
                .find(|&r| {
                    gold.contains(&(
                        keys[i].clone(),
                        m.relations.label(r).to_string(),
                        keys[j].clone(),
                    ))
                })
                .unwrap_or(0);
            let row = scores.cell(i, j);
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            total += z.ln() - row[label];
            cells += 1;
        }
    }
    assert!((t2g_loss(&m, &t, &g).unwrap() - total / cells as f64).abs() < 1e-6);
}

#[test]
fn loss_is_invariant_to_entity_renaming() {
    let (t, g) = sample();
    let m = model(tiny(), 8);
    let renamed_text = text(
        "allen forest plays hip hop in berlin",
        &[("e1", 0, 2), ("e2", 3, 5), ("e3", 6, 7)],
    );
    let e = |id: &str, surface: &str| {
        Entity::new(id, surface.split(' ').map(String::from).collect()).unwrap()
    };
    let renamed_graph = KnowledgeGraph::new(vec![
        cyclekg_core::kg::Triple::new(e("e1", "allen forest"), "genre", e("e2", "hip hop")),
        cyclekg_core::kg::Triple::new(e("e1", "allen forest"), "home", e("e3", "berlin")),
    ])
    .unwrap();
    let a = t2g_loss(&m, &t, &g).unwrap();
    let b = t2g_loss(&m, &renamed_text, &renamed_graph).unwrap();
    assert_eq!(a, b);
}

#[test]
fn entity_mismatch_is_reported() {
    let (t, _) = sample();
    let m = model(tiny(), 8);
    let g = graph(&[("allen forest", "genre", "jazz")]);
    assert!(matches!(t2g_loss(&m, &t, &g), Err(Error::EntityMismatch(id)) if id == "jazz"));
}

#[test]
fn decoding_rules() {
    let (t, _) = sample();
    let m = model(tiny(), 8);
    let ents = t.entities();
    let r = m.relations.len();
    let genre = m.relations.index("genre").unwrap();
    let mut scores = EdgeScores {
        k: 3,
        r,
        scores: vec![0.0; 9 * r],
    };
    for c in 0..9 {
        scores.scores[c * r] = 1.0;
    }
    let g = graph_from_scores(ents.clone(), &scores, &m.relations).unwrap();
    assert!(g.triples().is_empty());
    assert_eq!(g.entities().len(), 3);
    scores.scores[r + genre] = 2.0;
    let g = graph_from_scores(ents.clone(), &scores, &m.relations).unwrap();
    assert_eq!(g.surface_triples().len(), 1);
    assert_eq!(g.triples()[0].key(), ("allen forest", "genre", "hip hop"));
    // A tie between NO_RELATION and a label keeps NO_RELATION.
    scores.scores[r + genre] = 1.0;
    assert!(graph_from_scores(ents, &scores, &m.relations)
        .unwrap()
        .triples()
        .is_empty());
}

#[test]
fn prediction_matches_exhaustive_argmax() {
    let (t, _) = sample();
    for seed in 0..20 {
        let m = model(
            T2GConfig {
                classifier_hidden: 7,
                ..tiny()
            },
            seed,
        );
        let scores = edge_scores(&m, &t).unwrap();
        let keys = t.entity_key_order();
        let mut expected = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let cell = scores.cell(i, j);
                let mut best = 0;
                for (k, &x) in cell.iter().enumerate() {
                    if x > cell[best] {
                        best = k;
                    }
                }
                if best != 0 {
                    expected.push((
                        keys[i].clone(),
                        m.relations.label(best).to_string(),
                        keys[j].clone(),
                    ));
                }
            }
        }
        let got: Vec<_> = t2g_predict(&m, &t)
            .unwrap()
            .triples()
            .iter()
            .map(|tr| {
                (
                    tr.head.id.clone(),
                    tr.relation.label().to_string(),
                    tr.tail.id.clone(),
                )
            })
            .collect();
        assert_eq!(got, expected);
    }
}

#[test]
fn overfitting_one_pair_decreases_loss() {
    let (t, g) = sample();
    let mut m = model(tiny(), 11);
    let ex = m.example(&t, &g).unwrap();
    let mut adam = Adam::new(
        AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        &m.params,
    );
    let mut losses = Vec::new();
    for _ in 0..20 {
        losses.push(t2g_train_step(&mut m, &mut adam, std::slice::from_ref(&ex)).unwrap());
    }
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
    for _ in 0..200 {
        t2g_train_step(&mut m, &mut adam, std::slice::from_ref(&ex)).unwrap();
    }
    let mut pred: Vec<_> = t2g_predict(&m, &t)
        .unwrap()
        .edge_set()
        .into_iter()
        .collect();
    let mut gold: Vec<_> = g.edge_set().into_iter().collect();
    pred.sort();
    gold.sort();
    assert_eq!(pred, gold);
}

#[test]
fn zero_learning_rate_and_determinism() {
    let (t, g) = sample();
    let run = |lr: f64| {
        let mut m = model(tiny(), 12);
        let ex = m.example(&t, &g).unwrap();
        let mut adam = Adam::new(
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            &m.params,
        );
        let before = m.params.checksum();
        let losses: Vec<f64> = (0..5)
            .map(|_| t2g_train_step(&mut m, &mut adam, &[ex.clone(), ex.clone()]).unwrap())
            .collect();
        (before, m.params.checksum(), losses)
    };
    let (before, after, _) = run(0.0);
    assert_eq!(before, after);
    let (_, a, la) = run(1e-2);
    let (_, b, lb) = run(1e-2);
    assert_eq!((a, la), (b, lb));
}

#[test]
fn non_finite_loss_aborts_without_update() {
    let (t, g) = sample();
    let mut m = model(tiny(), 13);
    let ex = m.example(&t, &g).unwrap();
    m.params.tensors_mut()[0].fill(f64::NAN);
    let mut adam = Adam::new(AdamConfig::default(), &m.params);
    let before = m.params.checksum();
    assert!(matches!(
        t2g_train_step(&mut m, &mut adam, &[ex]),
        Err(Error::NonFiniteLoss(_))
    ));
    assert_eq!(before, m.params.checksum());
    assert_eq!(adam.step, 0);
    assert!(matches!(
        t2g_train_step(&mut m, &mut adam, &[]),
        Err(Error::EmptyBatch)
    ));
}

#[test]
fn all_no_relation_is_optimal_for_an_empty_gold_graph() {
    let (t, _) = sample();
    let mut m = model(tiny(), 14);
    let empty = KnowledgeGraph::empty();
    zero_classifier_output(&mut m);
    let uniform = t2g_loss(&m, &t, &empty).unwrap();
    let out_bias = m
        .params
        .names()
        .iter()
        .position(|n| n == "t2g.classifier.out.bias")
        .unwrap();
    m.params.tensors_mut()[out_bias].data_mut()[0] = 30.0;
    let confident = t2g_loss(&m, &t, &empty).unwrap();
    assert!(confident < 1e-9 && confident < uniform);
    assert!(t2g_predict(&m, &t).unwrap().triples().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predicted_nodes_are_exactly_the_text_entities(seed in 0u64..1000, n in 1usize..6) {
        let m = model(tiny(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = ["allen", "forest", "hip", "hop", "berlin", "plays", "in"];
        let tokens: Vec<String> = (0..2 * n).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect();
        let spans: Vec<Span> = (0..n).map(|i| Span::new(format!("e{i}"), 2 * i, 2 * i + 1)).collect();
        let t = AnnotatedText::new(tokens, spans).unwrap();
        let g = t2g_predict(&m, &t).unwrap();
        let mut got: Vec<_> = g.entities().iter().map(|e| e.id.clone()).collect();
        let mut want = t.entity_key_order();
        got.sort();
        want.sort();
        prop_assert_eq!(got, want);
    }
}
