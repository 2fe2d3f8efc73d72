use std::collections::HashMap;

use super::{check_corpus, ngram_counts};
use crate::error::Result;

pub const BLEU_MAX_ORDER: usize = 4;

/// Corpus BLEU-4 on a 0..100 scale.
///
/// Clipped n-gram counts and lengths are pooled over the corpus; the
/// reference length per item is the closest reference length (shorter wins
/// ties). No smoothing: any zero precision gives 0.
pub fn corpus_bleu<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<Vec<S>>],
) -> Result<f64> {
    check_corpus(hypotheses.len(), references)?;
    let mut matches = [0usize; BLEU_MAX_ORDER];
    let mut totals = [0usize; BLEU_MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for (hyp, refs) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += closest_ref_len(hyp.len(), refs);
        for n in 1..=BLEU_MAX_ORDER {
            let hyp_counts = ngram_counts(hyp, n);
            let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in &hyp_counts {
                matches[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }

    if hyp_len == 0 || matches.iter().any(|&m| m == 0) {
        return Ok(0.0);
    }
    let log_precision: f64 = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / BLEU_MAX_ORDER as f64;
    let brevity = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * log_precision.exp())
}

fn closest_ref_len<S>(hyp_len: usize, refs: &[Vec<S>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(hyp_len), l))
        .unwrap_or(0)
}
