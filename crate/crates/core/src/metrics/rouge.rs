use super::check_corpus;
use crate::error::Result;

pub const ROUGE_BETA: f64 = 1.2;

fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure of one hypothesis against one reference.
pub fn rouge_l_pair<S: AsRef<str>>(hyp: &[S], reference: &[S], beta: f64) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(hyp, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / hyp.len() as f64;
    let r = lcs / reference.len() as f64;
    (1.0 + beta * beta) * p * r / (r + beta * beta * p)
}

/// Mean over items of the best per-reference ROUGE-L F-measure, 0..100.
pub fn rouge_l<S: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<Vec<S>>]) -> Result<f64> {
    check_corpus(hypotheses.len(), references)?;
    if hypotheses.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = hypotheses
        .iter()
        .zip(references)
        .map(|(h, refs)| {
            refs.iter()
                .map(|r| rouge_l_pair(h, r, ROUGE_BETA))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(100.0 * total / hypotheses.len() as f64)
}
