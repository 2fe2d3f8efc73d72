//! Graph-to-text: BiLSTM encoder over the linearized graph and an LSTM
//! decoder with dot-product attention, trained by teacher forcing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_positive, train_step};
use crate::error::{Error, Result};
use crate::kg::vocab::{BOS, EOS, HEAD_MARK, PAD, REL_MARK, TAIL_MARK};
use crate::kg::{linearize, AnnotatedText, Entity, KnowledgeGraph, Span, TokenVocab};
use crate::nn::{
    tensor::argmax, Adam, BiLstm, Grads, Linear, Lstm, ParamId, ParamSet, Tape, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct G2TConfig {
    pub emb_dim: usize,
    pub hidden: usize,
}

impl Default for G2TConfig {
    fn default() -> Self {
        G2TConfig {
            emb_dim: 256,
            hidden: 256,
        }
    }
}

impl G2TConfig {
    pub fn desk() -> Self {
        G2TConfig {
            emb_dim: 32,
            hidden: 48,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("g2t.emb_dim", self.emb_dim)?;
        check_positive("g2t.hidden", self.hidden)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub max_length: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { max_length: 64 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("decode.max_length", self.max_length)
    }
}

/// Parameters θ and the shared token vocabulary.
#[derive(Clone, Debug)]
pub struct G2TModel {
    pub config: G2TConfig,
    pub params: ParamSet,
    pub vocab: TokenVocab,
    net: G2TNet,
}

#[derive(Clone, Debug)]
struct G2TNet {
    embedding: ParamId,
    encoder: BiLstm,
    init: Linear,
    decoder: Lstm,
    attention: ParamId,
    combine: Linear,
    out: Linear,
    hidden: usize,
}

/// A source id sequence and its target text ids (no BOS/EOS framing).
#[derive(Clone, Debug, PartialEq)]
pub struct G2TExample {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl G2TModel {
    pub fn new(config: G2TConfig, vocab: TokenVocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let (e, h) = (config.emb_dim, config.hidden);
        let mut params = ParamSet::new();
        let embedding = params.add(
            "g2t.embedding",
            Tensor::uniform(vocab.len(), e, 0.1, &mut rng),
        );
        let encoder = BiLstm::new(&mut params, "g2t.encoder", e, h, 1, &mut rng);
        let init = Linear::new(&mut params, "g2t.init", 2 * h, h, true, &mut rng);
        let decoder = Lstm::new(&mut params, "g2t.decoder", e, h, &mut rng);
        let scale = (6.0 / (3 * h) as f64).sqrt();
        let attention = params.add("g2t.attention", Tensor::uniform(h, 2 * h, scale, &mut rng));
        let combine = Linear::new(&mut params, "g2t.combine", 3 * h, h, true, &mut rng);
        let out = Linear::new(&mut params, "g2t.out", h, vocab.len(), true, &mut rng);
        let net = G2TNet {
            embedding,
            encoder,
            init,
            decoder,
            attention,
            combine,
            out,
            hidden: h,
        };
        Ok(G2TModel {
            config,
            params,
            vocab,
            net,
        })
    }

    pub fn example(&self, graph: &KnowledgeGraph, text: &AnnotatedText) -> Result<G2TExample> {
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(G2TExample {
            source: linearize(graph, &self.vocab)?,
            target: self.vocab.encode(text.tokens()),
        })
    }
}

struct Encoded {
    memory: Var,
    state: (Var, Var),
}

impl G2TNet {
    fn encode(&self, tape: &mut Tape, source: &[usize]) -> Encoded {
        let table = tape.param(self.embedding);
        let xs = tape.gather(table, source.to_vec());
        let memory = self.encoder.forward(tape, xs);
        let steps = tape.shape(memory).0;
        let mean = tape.mean_rows(memory, 0, steps);
        let h0 = self.init.forward(tape, mean);
        let h0 = tape.tanh(h0);
        let c0 = tape.constant(Tensor::zeros(1, self.hidden));
        Encoded {
            memory,
            state: (h0, c0),
        }
    }

    /// Output logits for decoder states `states: L x h`.
    fn readout(&self, tape: &mut Tape, memory: Var, states: Var) -> Var {
        let wa = tape.param(self.attention);
        let query = tape.matmul(states, wa);
        let scores = tape.matmul_bt(query, memory);
        let alpha = tape.softmax_rows(scores);
        let ctx = tape.matmul(alpha, memory);
        let joint = tape.concat_cols(&[states, ctx]);
        let o = self.combine.forward(tape, joint);
        let o = tape.tanh(o);
        self.out.forward(tape, o)
    }

    fn loss_on_tape(&self, tape: &mut Tape, ex: &G2TExample) -> Var {
        let enc = self.encode(tape, &ex.source);
        let inputs: Vec<usize> = std::iter::once(BOS)
            .chain(ex.target.iter().copied())
            .collect();
        let targets: Vec<usize> = ex
            .target
            .iter()
            .copied()
            .chain(std::iter::once(EOS))
            .collect();
        let table = tape.param(self.embedding);
        let xs = tape.gather(table, inputs);
        let projected = self.decoder.project(tape, xs);
        let mut state = enc.state;
        let mut hs = Vec::with_capacity(targets.len());
        for t in 0..targets.len() {
            let row = tape.slice_rows(projected, t, t + 1);
            state = self.decoder.step(tape, row, Some(state));
            hs.push(state.0);
        }
        let states = tape.concat_rows(&hs);
        let logits = self.readout(tape, enc.memory, states);
        tape.cross_entropy(logits, targets)
    }

    fn generate(&self, tape: &mut Tape, source: &[usize], max_length: usize) -> Vec<usize> {
        let enc = self.encode(tape, source);
        let table = tape.param(self.embedding);
        let mut state = enc.state;
        let mut prev = BOS;
        let mut out = Vec::new();
        while out.len() < max_length {
            let x = tape.gather(table, vec![prev]);
            let projected = self.decoder.project(tape, x);
            state = self.decoder.step(tape, projected, Some(state));
            let logits = self.readout(tape, enc.memory, state.0);
            let mut row = tape.value(logits).data().to_vec();
            for banned in [PAD, BOS, HEAD_MARK, REL_MARK, TAIL_MARK] {
                row[banned] = f64::NEG_INFINITY;
            }
            let next = argmax(&row);
            if next == EOS {
                break;
            }
            out.push(next);
            prev = next;
        }
        out
    }
}

/// Mean token NLL of `text` followed by EOS, given the linearized `graph`.
pub fn g2t_loss(model: &G2TModel, graph: &KnowledgeGraph, text: &AnnotatedText) -> Result<f64> {
    let ex = model.example(graph, text)?;
    Ok(g2t_batch_loss(model, std::slice::from_ref(&ex)))
}

/// Mean loss over already-encoded examples, without updating anything.
pub fn g2t_batch_loss(model: &G2TModel, batch: &[G2TExample]) -> f64 {
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

/// Next-token logits after `prefix`, computed by stepping the decoder one
/// token at a time (the path greedy decoding uses).
pub fn next_token_logits(model: &G2TModel, source: &[usize], prefix: &[usize]) -> Vec<f64> {
    let net = &model.net;
    let mut tape = Tape::new(&model.params);
    let enc = net.encode(&mut tape, source);
    let table = tape.param(net.embedding);
    let mut state = enc.state;
    for &tok in std::iter::once(&BOS).chain(prefix) {
        let x = tape.gather(table, vec![tok]);
        let projected = net.decoder.project(&mut tape, x);
        state = net.decoder.step(&mut tape, projected, Some(state));
    }
    let logits = net.readout(&mut tape, enc.memory, state.0);
    tape.value(logits).data().to_vec()
}

/// Greedy decoding from raw source ids. Never emits PAD, BOS or markers.
pub fn generate_ids(model: &G2TModel, source: &[usize], cfg: &DecodeConfig) -> Vec<usize> {
    let mut tape = Tape::new(&model.params);
    model.net.generate(&mut tape, source, cfg.max_length)
}

/// Greedy verbalization of `graph` with entity spans found by surface matching.
pub fn g2t_generate(
    model: &G2TModel,
    graph: &KnowledgeGraph,
    cfg: &DecodeConfig,
) -> Result<AnnotatedText> {
    cfg.validate()?;
    let source = linearize(graph, &model.vocab)?;
    let tokens: Vec<String> = generate_ids(model, &source, cfg)
        .into_iter()
        .map(|id| model.vocab.token(id).to_string())
        .collect();
    let spans = match_entity_spans(&tokens, graph.entities());
    AnnotatedText::new(tokens, spans)
}

/// First contiguous occurrence of each entity's tokens, skipping positions
/// already claimed by an earlier entity. Entities that never occur get no span.
pub fn match_entity_spans(tokens: &[String], entities: &[Entity]) -> Vec<Span> {
    let mut taken = vec![false; tokens.len()];
    let mut spans = Vec::new();
    for e in entities {
        let n = e.tokens.len();
        if n > tokens.len() {
            continue;
        }
        let hit = (0..=tokens.len() - n)
            .find(|&s| !taken[s..s + n].iter().any(|&t| t) && tokens[s..s + n] == e.tokens[..]);
        if let Some(s) = hit {
            taken[s..s + n].iter_mut().for_each(|t| *t = true);
            spans.push(Span::new(e.id.clone(), s, s + n));
        }
    }
    spans
}

/// One Adam step on the mean batch loss; returns the pre-update loss.
pub fn g2t_train_step(model: &mut G2TModel, adam: &mut Adam, batch: &[G2TExample]) -> Result<f64> {
    let net = model.net.clone();
    train_step(&mut model.params, adam, batch, |tape, ex| {
        net.loss_on_tape(tape, ex)
    })
}

/// Loss and parameter gradients of one example.
pub fn g2t_loss_and_grads(model: &G2TModel, ex: &G2TExample) -> (f64, Grads) {
    let mut tape = Tape::new(&model.params);
    let loss = model.net.loss_on_tape(&mut tape, ex);
    (tape.value(loss).scalar_value(), tape.backward(loss))
}
