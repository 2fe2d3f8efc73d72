//! Text-to-graph: BiLSTM token encoder, mean-pooled entity vectors and a
//! pairwise edge classifier over `RelationVocab` (index 0 is `NO_RELATION`).

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_positive, train_step};
use crate::error::{Error, Result};
use crate::kg::{AnnotatedText, Entity, KnowledgeGraph, RelationVocab, Span, TokenVocab, Triple};
use crate::nn::{
    tensor::argmax, Adam, BiLstm, Grads, Linear, ParamId, ParamSet, Tape, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct T2GConfig {
    pub emb_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub classifier_hidden: usize,
}

impl Default for T2GConfig {
    fn default() -> Self {
        T2GConfig {
            emb_dim: 300,
            hidden: 512,
            layers: 2,
            classifier_hidden: 512,
        }
    }
}

impl T2GConfig {
    pub fn desk() -> Self {
        T2GConfig {
            emb_dim: 24,
            hidden: 32,
            layers: 2,
            classifier_hidden: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("t2g.emb_dim", self.emb_dim)?;
        check_positive("t2g.hidden", self.hidden)?;
        check_positive("t2g.layers", self.layers)?;
        check_positive("t2g.classifier_hidden", self.classifier_hidden)
    }
}

/// Parameters φ together with the vocabularies they index into.
#[derive(Clone, Debug)]
pub struct T2GModel {
    pub config: T2GConfig,
    pub params: ParamSet,
    pub vocab: TokenVocab,
    pub relations: RelationVocab,
    net: T2GNet,
}

/// Parameter handles of the architecture; the values live in a `ParamSet`.
#[derive(Clone, Debug)]
struct T2GNet {
    embedding: ParamId,
    encoder: BiLstm,
    head_proj: Linear,
    tail_proj: Linear,
    out: Linear,
}

impl T2GModel {
    pub fn new(
        config: T2GConfig,
        vocab: TokenVocab,
        relations: RelationVocab,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut params = ParamSet::new();
        let embedding = params.add(
            "t2g.embedding",
            Tensor::uniform(vocab.len(), config.emb_dim, 0.1, &mut rng),
        );
        let encoder = BiLstm::new(
            &mut params,
            "t2g.encoder",
            config.emb_dim,
            config.hidden,
            config.layers,
            &mut rng,
        );
        let d = encoder.output_dim();
        let c = config.classifier_hidden;
        // The first classifier layer on [v_i; v_j] is split into its head and tail halves.
        let head_proj = Linear::new(&mut params, "t2g.classifier.head", d, c, false, &mut rng);
        let tail_proj = Linear::new(&mut params, "t2g.classifier.tail", d, c, true, &mut rng);
        let out = Linear::new(
            &mut params,
            "t2g.classifier.out",
            c,
            relations.len(),
            true,
            &mut rng,
        );
        let net = T2GNet {
            embedding,
            encoder,
            head_proj,
            tail_proj,
            out,
        };
        Ok(T2GModel {
            config,
            params,
            vocab,
            relations,
            net,
        })
    }

    /// Encodes a gold pair into token ids, key-ordered spans and cell targets.
    pub fn example(&self, text: &AnnotatedText, graph: &KnowledgeGraph) -> Result<T2GExample> {
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        let spans = text.spans_in_key_order();
        let index: HashMap<&str, usize> = spans
            .iter()
            .enumerate()
            .map(|(i, s)| (s.entity_id.as_str(), i))
            .collect();
        let k = spans.len();
        let mut cells = vec![0usize; k * k];
        for triple in graph.triples() {
            let lookup = |id: &str| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::EntityMismatch(id.to_string()))
            };
            let (i, j) = (lookup(&triple.head.id)?, lookup(&triple.tail.id)?);
            if i == j {
                return Err(Error::InvalidGraph(format!(
                    "self loop on {}",
                    triple.head.id
                )));
            }
            let r = self
                .relations
                .index(triple.relation.label())
                .ok_or_else(|| {
                    Error::InvalidGraph(format!("unknown relation {}", triple.relation.label()))
                })?;
            cells[i * k + j] = r;
        }
        for e in graph.entities() {
            if !index.contains_key(e.id.as_str()) {
                return Err(Error::EntityMismatch(e.id.clone()));
            }
        }
        let targets = off_diagonal(k).map(|(i, j)| cells[i * k + j]).collect();
        Ok(T2GExample {
            tokens: self.vocab.encode(text.tokens()),
            spans: spans.iter().map(|s| (s.start, s.end)).collect(),
            targets,
        })
    }
}

impl T2GNet {
    fn encode_on_tape(&self, tape: &mut Tape, tokens: &[usize]) -> Var {
        let table = tape.param(self.embedding);
        let xs = tape.gather(table, tokens.to_vec());
        self.encoder.forward(tape, xs)
    }

    fn pool_on_tape(&self, tape: &mut Tape, ctx: Var, spans: &[(usize, usize)]) -> Var {
        let rows: Vec<Var> = spans
            .iter()
            .map(|&(s, e)| tape.mean_rows(ctx, s, e))
            .collect();
        tape.concat_rows(&rows)
    }

    /// Logits for the given ordered entity pairs, one row per pair.
    fn pair_logits(&self, tape: &mut Tape, entities: Var, pairs: &[(usize, usize)]) -> Var {
        let heads = self.head_proj.forward(tape, entities);
        let tails = self.tail_proj.forward(tape, entities);
        let h = tape.gather(heads, pairs.iter().map(|p| p.0).collect());
        let t = tape.gather(tails, pairs.iter().map(|p| p.1).collect());
        let hidden = tape.add(h, t);
        let hidden = tape.tanh(hidden);
        self.out.forward(tape, hidden)
    }

    /// Mean cell cross-entropy of one example on `tape`; a constant 0 when
    /// there are fewer than two entities.
    fn loss_on_tape(&self, tape: &mut Tape, ex: &T2GExample) -> Var {
        let k = ex.spans.len();
        if k < 2 {
            return tape.constant(Tensor::scalar(0.0));
        }
        let ctx = self.encode_on_tape(tape, &ex.tokens);
        let entities = self.pool_on_tape(tape, ctx, &ex.spans);
        let pairs: Vec<(usize, usize)> = off_diagonal(k).collect();
        let logits = self.pair_logits(tape, entities, &pairs);
        tape.cross_entropy(logits, ex.targets.clone())
    }
}

/// A gold (text, graph) pair in index form.
#[derive(Clone, Debug, PartialEq)]
pub struct T2GExample {
    pub tokens: Vec<usize>,
    /// Entity spans in key order.
    pub spans: Vec<(usize, usize)>,
    /// Relation index for each off-diagonal cell, row-major.
    pub targets: Vec<usize>,
}

fn off_diagonal(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
}

/// Relation scores for every ordered entity pair, `K x K x R`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeScores {
    pub k: usize,
    pub r: usize,
    pub scores: Vec<f64>,
}

impl EdgeScores {
    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let at = (i * self.k + j) * self.r;
        &self.scores[at..at + self.r]
    }

    /// Argmax label per cell with the diagonal forced to `NO_RELATION`.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.k * self.k];
        for (i, j) in off_diagonal(self.k) {
            out[i * self.k + j] = argmax(self.cell(i, j));
        }
        out
    }
}

/// Context vectors, one `1 x 2h` row per token.
pub fn encode_tokens(model: &T2GModel, text: &AnnotatedText) -> Result<Tensor> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    let mut tape = Tape::new(&model.params);
    let ctx = model
        .net
        .encode_on_tape(&mut tape, &model.vocab.encode(text.tokens()));
    Ok(tape.value(ctx).clone())
}

/// Mean of the context rows inside `span`.
pub fn pool_entity(context: &Tensor, span: &Span) -> Result<Tensor> {
    if span.is_empty() {
        return Err(Error::EmptySpan);
    }
    if span.end > context.rows() {
        return Err(Error::SpanOutOfBounds {
            start: span.start,
            end: span.end,
            len: context.rows(),
        });
    }
    let mut out = Tensor::zeros(1, context.cols());
    for r in span.start..span.end {
        for (o, &x) in out.data_mut().iter_mut().zip(context.row(r)) {
            *o += x;
        }
    }
    out.scale_assign(1.0 / span.len() as f64);
    Ok(out)
}

/// Scores every ordered pair of the `K x d` entity matrix, diagonal included.
pub fn classify_edges(model: &T2GModel, entities: &Tensor) -> EdgeScores {
    let k = entities.rows();
    let r = model.relations.len();
    let mut tape = Tape::new(&model.params);
    let ev = tape.constant(entities.clone());
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    let logits = model.net.pair_logits(&mut tape, ev, &pairs);
    EdgeScores {
        k,
        r,
        scores: tape.value(logits).data().to_vec(),
    }
}

/// Edge scores of a text's entities in key order.
pub fn edge_scores(model: &T2GModel, text: &AnnotatedText) -> Result<EdgeScores> {
    let ctx = encode_tokens(model, text)?;
    let spans = text.spans_in_key_order();
    let mut rows = Vec::with_capacity(spans.len() * ctx.cols());
    for s in &spans {
        rows.extend(pool_entity(&ctx, s)?.into_vec());
    }
    Ok(classify_edges(
        model,
        &Tensor::from_vec(spans.len(), ctx.cols(), rows),
    ))
}

/// Mean negative log-likelihood over the `K(K-1)` off-diagonal cells.
pub fn t2g_loss(model: &T2GModel, text: &AnnotatedText, graph: &KnowledgeGraph) -> Result<f64> {
    let ex = model.example(text, graph)?;
    Ok(t2g_batch_loss(model, std::slice::from_ref(&ex)))
}

/// Graph over exactly the text's entities, one triple per non-`NO_RELATION`
/// argmax cell, in row-major key order.
pub fn t2g_predict(model: &T2GModel, text: &AnnotatedText) -> Result<KnowledgeGraph> {
    let entities = text.entities();
    if entities.len() < 2 {
        return KnowledgeGraph::with_entities(Vec::new(), entities);
    }
    graph_from_scores(entities, &edge_scores(model, text)?, &model.relations)
}

/// Decodes `scores` over `entities` (in key order) into a graph whose node
/// set is exactly `entities`. Ties go to the lowest relation index.
pub fn graph_from_scores(
    entities: Vec<Entity>,
    scores: &EdgeScores,
    relations: &RelationVocab,
) -> Result<KnowledgeGraph> {
    let k = entities.len();
    assert_eq!(k, scores.k, "score matrix does not match the entity list");
    let labels = scores.labels();
    let triples = off_diagonal(k)
        .filter(|&(i, j)| labels[i * k + j] != 0)
        .map(|(i, j)| {
            Triple::new(
                entities[i].clone(),
                relations.label(labels[i * k + j]),
                entities[j].clone(),
            )
        })
        .collect();
    KnowledgeGraph::with_entities(triples, entities)
}

/// One Adam step on the mean loss of the batch; returns the pre-update loss.
pub fn t2g_train_step(model: &mut T2GModel, adam: &mut Adam, batch: &[T2GExample]) -> Result<f64> {
    let net = model.net.clone();
    train_step(&mut model.params, adam, batch, |tape, ex| {
        net.loss_on_tape(tape, ex)
    })
}

/// Mean loss over already-encoded examples, without updating anything.
pub fn t2g_batch_loss(model: &T2GModel, batch: &[T2GExample]) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|ex| {
            let mut tape = Tape::new(&model.params);
            let loss = model.net.loss_on_tape(&mut tape, ex);
            tape.value(loss).scalar_value()
        })
        .sum();
    total / batch.len().max(1) as f64
}

/// Loss and parameter gradients of one example.
pub fn t2g_loss_and_grads(model: &T2GModel, ex: &T2GExample) -> (f64, Grads) {
    let mut tape = Tape::new(&model.params);
    let loss = model.net.loss_on_tape(&mut tape, ex);
    (tape.value(loss).scalar_value(), tape.backward(loss))
}
