//! Text metrics (BLEU, ROUGE-L, CIDEr-D) and edge-level F1 for graphs.
//!
//! All text metrics read token sequences only; entity spans never matter.

pub mod bleu;
pub mod cider;
pub mod edge_f1;
pub mod rouge;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use bleu::corpus_bleu;
pub use cider::{cider, cider_items};
pub use edge_f1::{edge_f1, GraphEvalReport, RelationScore};
pub use rouge::rouge_l;

use crate::error::{Error, Result};

/// Version tag of the committed cross-implementation fixture suite.
pub const FIXTURE_SUITE_VERSION: &str = "metric-fixtures-v1";

pub(crate) fn check_corpus<S>(hyps: usize, refs: &[Vec<S>]) -> Result<()> {
    if hyps != refs.len() {
        return Err(Error::LengthMismatch {
            left: hyps,
            right: refs.len(),
        });
    }
    if let Some(i) = refs.iter().position(Vec::is_empty) {
        return Err(Error::EmptyReferences(i));
    }
    Ok(())
}

pub(crate) fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts
            .entry(w.iter().map(AsRef::as_ref).collect())
            .or_insert(0) += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub bleu_max_order: usize,
    pub rouge_beta: f64,
    pub cider_max_order: usize,
    pub cider_sigma: f64,
    pub tokenization: String,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            bleu_max_order: bleu::BLEU_MAX_ORDER,
            rouge_beta: rouge::ROUGE_BETA,
            cider_max_order: cider::CIDER_MAX_ORDER,
            cider_sigma: cider::CIDER_SIGMA,
            tokenization: "whitespace, lowercased".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEvalReport {
    pub bleu: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub params: MetricParams,
    pub fixture_suite: String,
}

/// BLEU, ROUGE-L and CIDEr-D in one report. CIDEr needs at least two items
/// and is reported as 0 for smaller corpora.
pub fn text_report<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<Vec<S>>],
) -> Result<TextEvalReport> {
    let bleu = corpus_bleu(hypotheses, references)?;
    let rouge_l = rouge_l(hypotheses, references)?;
    let cider = match cider(hypotheses, references) {
        Ok(c) => c,
        Err(Error::DegenerateIdf) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(TextEvalReport {
        bleu,
        rouge_l,
        cider,
        params: MetricParams::default(),
        fixture_suite: FIXTURE_SUITE_VERSION.into(),
    })
}
