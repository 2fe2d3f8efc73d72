#![allow(dead_code)]

use std::collections::HashSet;

use cyclekg_core::kg::{
    AnnotatedText, Entity, KnowledgeGraph, RelationVocab, Span, TokenVocab, Triple,
};
use cyclekg_core::nn::{Grads, ParamSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn graph(triples: &[(&str, &str, &str)]) -> KnowledgeGraph {
    KnowledgeGraph::new(
        triples
            .iter()
            .map(|(h, r, t)| {
                Triple::new(
                    Entity::from_surface(h).unwrap(),
                    *r,
                    Entity::from_surface(t).unwrap(),
                )
            })
            .collect(),
    )
    .unwrap()
}

/// Text from whitespace tokens with `[id, start, end]` spans.
pub fn text(tokens: &str, spans: &[(&str, usize, usize)]) -> AnnotatedText {
    AnnotatedText::new(
        tokens.split_whitespace().map(String::from).collect(),
        spans
            .iter()
            .map(|(id, s, e)| Span::new(*id, *s, *e))
            .collect(),
    )
    .unwrap()
}

pub fn vocabs(graphs: &[KnowledgeGraph], texts: &[AnnotatedText]) -> (TokenVocab, RelationVocab) {
    (
        TokenVocab::build(graphs, texts).unwrap(),
        RelationVocab::from_graphs(graphs).unwrap(),
    )
}

/// Worst per-parameter-group relative error between `analytic` and central
/// differences of `loss` with step `eps`.
pub fn gradient_check(
    params: &mut ParamSet,
    analytic: &Grads,
    eps: f64,
    mut loss: impl FnMut(&ParamSet) -> f64,
) -> Vec<(String, f64)> {
    let mut report = Vec::new();
    for p in 0..params.len() {
        let n = params.tensors()[p].len();
        let mut num = vec![0.0; n];
        for k in 0..n {
            let orig = params.tensors()[p].data()[k];
            params.tensors_mut()[p].data_mut()[k] = orig + eps;
            let up = loss(params);
            params.tensors_mut()[p].data_mut()[k] = orig - eps;
            let down = loss(params);
            params.tensors_mut()[p].data_mut()[k] = orig;
            num[k] = (up - down) / (2.0 * eps);
        }
        let ana = analytic.tensors()[p].data();
        let diff: f64 = ana
            .iter()
            .zip(&num)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = ana.iter().map(|a| a * a).sum::<f64>().sqrt()
            + num.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = if scale < 1e-12 { 0.0 } else { diff / scale };
        report.push((params.names()[p].clone(), rel));
    }
    report
}

pub fn random_small_graph(rng: &mut ChaCha8Rng) -> KnowledgeGraph {
    let ents = ["a", "b", "c", "d"];
    let rels = ["r1", "r2", "r3"];
    let n = rng.gen_range(0..6);
    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    for _ in 0..n {
        let h = ents[rng.gen_range(0..ents.len())];
        let t = ents[rng.gen_range(0..ents.len())];
        let r = rels[rng.gen_range(0..rels.len())];
        if h != t && seen.insert((h, r, t)) {
            triples.push(Triple::new(
                Entity::from_surface(h).unwrap(),
                r,
                Entity::from_surface(t).unwrap(),
            ));
        }
    }
    KnowledgeGraph::new(triples).unwrap()
}

pub struct BruteForce {
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// Pooled (tp, fp, fn).
    pub counts: (usize, usize, usize),
    /// Relations with at least one nonzero count.
    pub per_relation: Vec<(String, (usize, usize, usize))>,
}

/// Edge counts and F1 found by enumerating every possible edge instead of
/// walking edge sets.
pub fn brute_force_f1(pred: &[KnowledgeGraph], gold: &[KnowledgeGraph]) -> BruteForce {
    let ents = ["a", "b", "c", "d"];
    let rels = ["r1", "r2", "r3"];
    let mut per = vec![(0usize, 0usize, 0usize); rels.len()];
    let mut in_gold = vec![false; rels.len()];
    for (p, g) in pred.iter().zip(gold) {
        let (pe, ge) = (p.edge_set(), g.edge_set());
        for (ri, r) in rels.iter().enumerate() {
            for h in ents {
                for t in ents {
                    let e = (h.to_string(), r.to_string(), t.to_string());
                    match (pe.contains(&e), ge.contains(&e)) {
                        (true, true) => per[ri].0 += 1,
                        (true, false) => per[ri].1 += 1,
                        (false, true) => per[ri].2 += 1,
                        _ => {}
                    }
                    in_gold[ri] |= ge.contains(&e);
                }
            }
        }
    }
    let f = |tp: usize, fp: usize, fn_: usize| {
        if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    let (tp, fp, fn_) = per
        .iter()
        .fold((0, 0, 0), |a, x| (a.0 + x.0, a.1 + x.1, a.2 + x.2));
    let labels: Vec<usize> = (0..rels.len()).filter(|&i| in_gold[i]).collect();
    let macro_f1 = if labels.is_empty() {
        0.0
    } else {
        labels
            .iter()
            .map(|&i| f(per[i].0, per[i].1, per[i].2))
            .sum::<f64>()
            / labels.len() as f64
    };
    BruteForce {
        micro_f1: f(tp, fp, fn_),
        macro_f1,
        counts: (tp, fp, fn_),
        per_relation: rels
            .iter()
            .zip(&per)
            .filter(|(_, c)| c.0 + c.1 + c.2 > 0)
            .map(|(r, c)| (r.to_string(), *c))
            .collect(),
    }
}

/// True when `rep` holds exactly the counts of `oracle` and both F1 values
/// agree up to rounding.
pub fn matches_brute_force(
    rep: &cyclekg_core::metrics::GraphEvalReport,
    oracle: &BruteForce,
) -> bool {
    let per: Vec<(String, (usize, usize, usize))> = rep
        .per_relation
        .iter()
        .filter(|(_, s)| s.tp + s.fp + s.fn_ > 0)
        .map(|(r, s)| (r.clone(), (s.tp, s.fp, s.fn_)))
        .collect();
    (rep.tp, rep.fp, rep.fn_) == oracle.counts
        && per == oracle.per_relation
        && (rep.micro_f1 - oracle.micro_f1).abs() < 1e-12
        && (rep.macro_f1 - oracle.macro_f1).abs() < 1e-12
}
