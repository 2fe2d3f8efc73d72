use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, NO_RELATION};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RelationScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEvalReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub per_relation: BTreeMap<String, RelationScore>,
}

pub(crate) fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

/// Micro and macro F1 over exact `(head, relation, tail)` edge matches.
///
/// Macro F1 averages per-relation F1 over relations that occur in the gold
/// graphs. `NO_RELATION` is never counted.
pub fn edge_f1(predicted: &[KnowledgeGraph], gold: &[KnowledgeGraph]) -> Result<GraphEvalReport> {
    if predicted.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: gold.len(),
        });
    }
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut in_gold: BTreeMap<String, bool> = BTreeMap::new();
    for (p, g) in predicted.iter().zip(gold) {
        let pe = p.edge_set();
        let ge = g.edge_set();
        for e in &pe {
            if e.1 == NO_RELATION {
                continue;
            }
            let c = counts.entry(e.1.clone()).or_default();
            if ge.contains(e) {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
        for e in &ge {
            if e.1 == NO_RELATION {
                continue;
            }
            in_gold.insert(e.1.clone(), true);
            if !pe.contains(e) {
                counts.entry(e.1.clone()).or_default().2 += 1;
            }
        }
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut per_relation = BTreeMap::new();
    for (label, &(t, f, n)) in &counts {
        tp += t;
        fp += f;
        fn_ += n;
        let (precision, recall, f1) = prf(t, f, n);
        per_relation.insert(
            label.clone(),
            RelationScore {
                tp: t,
                fp: f,
                fn_: n,
                precision,
                recall,
                f1,
            },
        );
    }
    let (micro_precision, micro_recall, micro_f1) = prf(tp, fp, fn_);
    let gold_labels: Vec<&String> = in_gold.keys().collect();
    let macro_f1 = if gold_labels.is_empty() {
        0.0
    } else {
        gold_labels.iter().map(|l| per_relation[*l].f1).sum::<f64>() / gold_labels.len() as f64
    };
    Ok(GraphEvalReport {
        micro_f1,
        macro_f1,
        micro_precision,
        micro_recall,
        tp,
        fp,
        fn_,
        per_relation,
    })
}
