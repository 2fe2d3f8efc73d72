//! Batch inference and dev/test evaluation of both models.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ParallelDataset;
use crate::error::{Error, Result};
use crate::kg::{AnnotatedText, KnowledgeGraph};
use crate::metrics::{edge_f1, text_report, GraphEvalReport, TextEvalReport};
use crate::model::{g2t_generate, t2g_predict, DecodeConfig, G2TModel, T2GModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub text: TextEvalReport,
    pub graph: GraphEvalReport,
}

impl EvalReport {
    /// Model selection score: BLEU on the unit scale plus micro-F1.
    pub fn selection_score(&self) -> f64 {
        self.text.bleu / 100.0 + self.graph.micro_f1
    }
}

/// T2G predictions in input order.
pub fn predict_graphs<'a>(
    t2g: &T2GModel,
    texts: impl IntoIterator<Item = &'a AnnotatedText>,
) -> Result<Vec<KnowledgeGraph>> {
    let texts: Vec<&AnnotatedText> = texts.into_iter().collect();
    texts.par_iter().map(|t| t2g_predict(t2g, t)).collect()
}

/// G2T generations in input order.
pub fn generate_texts<'a>(
    g2t: &G2TModel,
    graphs: impl IntoIterator<Item = &'a KnowledgeGraph>,
    cfg: &DecodeConfig,
) -> Result<Vec<AnnotatedText>> {
    let graphs: Vec<&KnowledgeGraph> = graphs.into_iter().collect();
    graphs
        .par_iter()
        .map(|g| g2t_generate(g2t, g, cfg))
        .collect()
}

/// Distinct graphs of `data` in first-occurrence order: the index of the
/// first pair with that graph, and every text paired with it as references.
pub fn reference_groups(data: &ParallelDataset) -> Vec<(usize, Vec<Vec<String>>)> {
    type Key = (Vec<(String, String, String)>, Vec<String>);
    let mut groups: IndexMap<Key, (usize, Vec<Vec<String>>)> = IndexMap::new();
    for (i, (g, t)) in data.pairs.iter().enumerate() {
        let mut edges: Vec<_> = g.edge_set().into_iter().collect();
        edges.sort();
        let mut ids: Vec<String> = g.entities().iter().map(|e| e.id.clone()).collect();
        ids.sort();
        let key = (edges, ids);
        groups
            .entry(key)
            .or_insert_with(|| (i, Vec::new()))
            .1
            .push(t.tokens().to_vec());
    }
    groups.into_values().collect()
}

/// Text metrics of per-pair predictions. Each distinct graph is scored once,
/// by the prediction at its first pair, against all of its texts.
pub fn evaluate_texts(
    predicted: &[AnnotatedText],
    data: &ParallelDataset,
) -> Result<TextEvalReport> {
    if predicted.len() != data.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: data.len(),
        });
    }
    let (hyps, refs): (Vec<Vec<String>>, Vec<_>) = reference_groups(data)
        .into_iter()
        .map(|(i, refs)| (predicted[i].tokens().to_vec(), refs))
        .unzip();
    text_report(&hyps, &refs)
}

/// Text metrics of `g2t`, decoding each distinct graph once.
pub fn evaluate_g2t(
    g2t: &G2TModel,
    data: &ParallelDataset,
    cfg: &DecodeConfig,
) -> Result<TextEvalReport> {
    let (firsts, refs): (Vec<usize>, Vec<_>) = reference_groups(data).into_iter().unzip();
    let graphs = firsts.iter().map(|&i| &data.pairs[i].0);
    let hyps: Vec<Vec<String>> = generate_texts(g2t, graphs, cfg)?
        .into_iter()
        .map(|t| t.tokens().to_vec())
        .collect();
    text_report(&hyps, &refs)
}

/// Edge F1 of `t2g` on the gold texts.
pub fn evaluate_t2g(t2g: &T2GModel, data: &ParallelDataset) -> Result<GraphEvalReport> {
    let predicted = predict_graphs(t2g, data.texts())?;
    let gold: Vec<KnowledgeGraph> = data.graphs().cloned().collect();
    edge_f1(&predicted, &gold)
}

pub fn evaluate(
    t2g: &T2GModel,
    g2t: &G2TModel,
    data: &ParallelDataset,
    cfg: &DecodeConfig,
) -> Result<EvalReport> {
    Ok(EvalReport {
        pairs: data.len(),
        text: evaluate_g2t(g2t, data, cfg)?,
        graph: evaluate_t2g(t2g, data)?,
    })
}
