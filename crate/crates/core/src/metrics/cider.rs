use std::collections::{BTreeMap, BTreeSet};

use super::check_corpus;
use crate::error::{Error, Result};

pub const CIDER_MAX_ORDER: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;

type Ngram<'a> = Vec<&'a str>;

fn all_ngrams<S: AsRef<str>>(tokens: &[S]) -> BTreeMap<Ngram<'_>, f64> {
    let mut counts = BTreeMap::new();
    for n in 1..=CIDER_MAX_ORDER {
        for w in tokens.windows(n) {
            *counts
                .entry(w.iter().map(AsRef::as_ref).collect())
                .or_insert(0.0) += 1.0;
        }
    }
    counts
}

struct TfIdf<'a> {
    vec: Vec<BTreeMap<Ngram<'a>, f64>>,
    norm: Vec<f64>,
    /// Bigram count, used as the length for the Gaussian penalty.
    length: f64,
}

fn to_vec<'a>(
    counts: &BTreeMap<Ngram<'a>, f64>,
    df: &BTreeMap<Ngram<'a>, f64>,
    log_n: f64,
) -> TfIdf<'a> {
    let mut vec = vec![BTreeMap::new(); CIDER_MAX_ORDER];
    let mut norm = vec![0.0; CIDER_MAX_ORDER];
    let mut length = 0.0;
    for (g, &tf) in counts {
        let n = g.len() - 1;
        let idf = log_n - df.get(g).copied().unwrap_or(0.0).max(1.0).ln();
        let w = tf * idf;
        vec[n].insert(g.clone(), w);
        norm[n] += w * w;
        if n == 1 {
            length += tf;
        }
    }
    TfIdf {
        vec,
        norm: norm.into_iter().map(f64::sqrt).collect(),
        length,
    }
}

fn similarity(hyp: &TfIdf, reference: &TfIdf) -> Vec<f64> {
    let delta = hyp.length - reference.length;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    (0..CIDER_MAX_ORDER)
        .map(|n| {
            let mut val = 0.0;
            for (g, &w) in &hyp.vec[n] {
                let r = reference.vec[n].get(g).copied().unwrap_or(0.0);
                val += w.min(r) * r;
            }
            if hyp.norm[n] != 0.0 && reference.norm[n] != 0.0 {
                val /= hyp.norm[n] * reference.norm[n];
            }
            val * penalty
        })
        .collect()
}

/// Per-item CIDEr-D scores (clipped TF-IDF n-gram cosine, Gaussian length
/// penalty with sigma 6, scaled by 10), IDF taken from the reference corpus.
pub fn cider_items<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<Vec<S>>],
) -> Result<Vec<f64>> {
    check_corpus(hypotheses.len(), references)?;
    if references.len() < 2 {
        return Err(Error::DegenerateIdf);
    }
    let ref_counts: Vec<Vec<BTreeMap<Ngram, f64>>> = references
        .iter()
        .map(|refs| refs.iter().map(|r| all_ngrams(r)).collect())
        .collect();
    let mut df: BTreeMap<Ngram, f64> = BTreeMap::new();
    for refs in &ref_counts {
        let distinct: BTreeSet<&Ngram> = refs.iter().flat_map(|c| c.keys()).collect();
        for g in distinct {
            *df.entry(g.clone()).or_insert(0.0) += 1.0;
        }
    }
    let log_n = (references.len() as f64).ln();
    Ok(hypotheses
        .iter()
        .zip(&ref_counts)
        .map(|(h, refs)| {
            let hv = to_vec(&all_ngrams(h), &df, log_n);
            let mut score = vec![0.0; CIDER_MAX_ORDER];
            for r in refs {
                let rv = to_vec(r, &df, log_n);
                for (s, v) in score.iter_mut().zip(similarity(&hv, &rv)) {
                    *s += v;
                }
            }
            let mean: f64 = score.iter().sum::<f64>() / CIDER_MAX_ORDER as f64;
            mean / refs.len() as f64 * 10.0
        })
        .collect())
}

/// Corpus CIDEr-D: the mean of [`cider_items`].
pub fn cider<S: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<Vec<S>>]) -> Result<f64> {
    let items = cider_items(hypotheses, references)?;
    Ok(items.iter().sum::<f64>() / items.len() as f64)
}
