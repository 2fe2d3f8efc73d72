//! Iterative back translation: the text cycle trains G2T on T2G outputs, the
//! graph cycle trains T2G on G2T outputs, each with the other model frozen.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Lexicon, NonParallelDataset, ParallelDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::kg::{
    linearize, sentinel_source, AnnotatedText, KnowledgeGraph, RelationVocab, Span, TokenVocab,
};
use crate::model::{
    g2t_generate, g2t_train_step, t2g_predict, t2g_train_step, DecodeConfig, G2TExample, G2TModel,
    ModelConfig, T2GModel,
};
use crate::nn::{Adam, AdamConfig};

/// Produces a discrete graph for a text. The text cycle's frozen side.
pub trait GraphExtractor: Sync {
    fn extract(&self, text: &AnnotatedText) -> Result<KnowledgeGraph>;
}

/// Produces a discrete text for a graph. The graph cycle's frozen side.
pub trait TextGenerator: Sync {
    fn generate(&self, graph: &KnowledgeGraph) -> Result<AnnotatedText>;
}

impl GraphExtractor for T2GModel {
    fn extract(&self, text: &AnnotatedText) -> Result<KnowledgeGraph> {
        t2g_predict(self, text)
    }
}

/// Greedy G2T decoding with a fixed configuration.
#[derive(Clone, Copy, Debug)]
pub struct Decoder<'a> {
    pub model: &'a G2TModel,
    pub config: DecodeConfig,
}

impl TextGenerator for Decoder<'_> {
    fn generate(&self, graph: &KnowledgeGraph) -> Result<AnnotatedText> {
        g2t_generate(self.model, graph, &self.config)
    }
}

/// Exact parsing of generator texts; unparseable texts give an empty graph.
impl GraphExtractor for Lexicon {
    fn extract(&self, text: &AnnotatedText) -> Result<KnowledgeGraph> {
        Ok(self.parse(text.tokens()).unwrap_or_else(|| {
            KnowledgeGraph::with_entities(Vec::new(), text.entities())
                .unwrap_or_else(|_| KnowledgeGraph::empty())
        }))
    }
}

impl TextGenerator for Lexicon {
    fn generate(&self, graph: &KnowledgeGraph) -> Result<AnnotatedText> {
        self.realize(graph)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Granularity {
    /// One text-cycle batch, then one graph-cycle batch.
    #[default]
    PerBatch,
    /// A full pass of the text cycle, then a full pass of the graph cycle.
    PerEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub granularity: Granularity,
    pub t2g_optimizer: AdamConfig,
    pub g2t_optimizer: AdamConfig,
    pub decode: DecodeConfig,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            epochs: 30,
            batch_size: 16,
            granularity: Granularity::PerBatch,
            t2g_optimizer: AdamConfig::default(),
            g2t_optimizer: AdamConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig {
                field: "schedule.batch_size",
                reason: "must be positive".into(),
            });
        }
        for (field, opt) in [
            ("schedule.t2g_optimizer", &self.t2g_optimizer),
            ("schedule.g2t_optimizer", &self.g2t_optimizer),
        ] {
            let ok = opt.lr.is_finite()
                && opt.lr > 0.0
                && (0.0..1.0).contains(&opt.beta1)
                && (0.0..1.0).contains(&opt.beta2)
                && opt.eps > 0.0
                && opt.clip_norm.is_none_or(|c| c > 0.0);
            if !ok {
                return Err(Error::InvalidConfig {
                    field,
                    reason: format!("{opt:?}"),
                });
            }
        }
        self.decode.validate()
    }
}

/// Both models, their optimizers and the training counters.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub t2g: T2GModel,
    pub g2t: G2TModel,
    pub t2g_opt: Adam,
    pub g2t_opt: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken by either model.
    pub step: u64,
    pub schedule: ScheduleConfig,
    seed: u64,
}

impl TrainState {
    pub fn new(
        model: &ModelConfig,
        schedule: ScheduleConfig,
        vocab: TokenVocab,
        relations: RelationVocab,
        seed: u64,
    ) -> Result<Self> {
        model.validate()?;
        schedule.validate()?;
        let t2g = T2GModel::new(model.t2g.clone(), vocab.clone(), relations, seed)?;
        let g2t = G2TModel::new(model.g2t.clone(), vocab, seed)?;
        let t2g_opt = Adam::new(schedule.t2g_optimizer.clone(), &t2g.params);
        let g2t_opt = Adam::new(schedule.g2t_optimizer.clone(), &g2t.params);
        Ok(TrainState {
            t2g,
            g2t,
            t2g_opt,
            g2t_opt,
            epoch: 0,
            step: 0,
            schedule,
            seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            t2g: self.t2g.config.clone(),
            g2t: self.g2t.config.clone(),
        }
    }

    pub fn decoder(&self) -> Decoder<'_> {
        Decoder {
            model: &self.g2t,
            config: self.schedule.decode,
        }
    }
}

/// G2T training examples pairing each text with its extracted graph. Texts
/// whose graph has no triples get the sentinel source.
pub fn back_translate_texts(
    extractor: &impl GraphExtractor,
    vocab: &TokenVocab,
    texts: &[AnnotatedText],
) -> Result<Vec<G2TExample>> {
    texts
        .par_iter()
        .map(|t| {
            if t.is_empty() {
                return Err(Error::EmptyText);
            }
            if t.spans().is_empty() {
                return Err(Error::InvalidText("text has no entity spans".into()));
            }
            let g = extractor.extract(t)?;
            let source = if g.is_empty() {
                sentinel_source()
            } else {
                linearize(&g, vocab)?
            };
            Ok(G2TExample {
                source,
                target: vocab.encode(t.tokens()),
            })
        })
        .collect()
}

/// Updates θ on `(T2G(t), t)` pairs; the extractor is only read.
pub fn text_cycle_step(
    g2t: &mut G2TModel,
    opt: &mut Adam,
    extractor: &impl GraphExtractor,
    texts: &[AnnotatedText],
) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let batch = back_translate_texts(extractor, &g2t.vocab, texts)?;
    g2t_train_step(g2t, opt, &batch)
}

/// Appends the tokens of every graph entity without a span, each as a new
/// span, so every entity of `graph` is anchored in the result.
pub fn repair_spans(text: &AnnotatedText, graph: &KnowledgeGraph) -> Result<AnnotatedText> {
    let mut tokens = text.tokens().to_vec();
    let mut spans: Vec<Span> = text
        .spans()
        .iter()
        .filter(|s| graph.entity(&s.entity_id).is_some())
        .cloned()
        .collect();
    for e in graph.entities() {
        if !spans.iter().any(|s| s.entity_id == e.id) {
            let start = tokens.len();
            tokens.extend(e.tokens.iter().cloned());
            spans.push(Span::new(e.id.clone(), start, tokens.len()));
        }
    }
    AnnotatedText::new(tokens, spans)
}

/// Updates φ on `(G2T(g), g)` pairs; the generator is only read.
pub fn graph_cycle_step(
    t2g: &mut T2GModel,
    opt: &mut Adam,
    generator: &impl TextGenerator,
    graphs: &[KnowledgeGraph],
) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let texts: Vec<AnnotatedText> = graphs
        .par_iter()
        .map(|g| repair_spans(&generator.generate(g)?, g))
        .collect::<Result<_>>()?;
    let batch = texts
        .iter()
        .zip(graphs)
        .map(|(t, g)| t2g.example(t, g))
        .collect::<Result<Vec<_>>>()?;
    t2g_train_step(t2g, opt, &batch)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    FromText,
    FromGraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPair {
    pub text: AnnotatedText,
    pub graph: KnowledgeGraph,
    pub origin: Origin,
}

/// `(t, extract(t))` for every text, then `(generate(g), g)` for every graph.
pub fn build_synthetic_pairs(
    data: &NonParallelDataset,
    extractor: &impl GraphExtractor,
    generator: &impl TextGenerator,
) -> Result<Vec<SyntheticPair>> {
    let from_text = data.texts.par_iter().map(|t| {
        Ok(SyntheticPair {
            text: t.clone(),
            graph: extractor.extract(t)?,
            origin: Origin::FromText,
        })
    });
    let from_graph = data.graphs.par_iter().map(|g| {
        Ok(SyntheticPair {
            text: generator.generate(g)?,
            graph: g.clone(),
            origin: Origin::FromGraph,
        })
    });
    from_text.chain(from_graph).collect()
}

/// Which cycles run during cycle training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cycles {
    #[default]
    Both,
    TextOnly,
    GraphOnly,
}

#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    Cycle {
        data: &'a NonParallelDataset,
        cycles: Cycles,
    },
    /// Both models trained directly on aligned pairs.
    Supervised(&'a ParallelDataset),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    /// θ update; in supervised mode, on gold pairs.
    G2T,
    /// φ update; in supervised mode, on gold pairs.
    T2G,
}

/// One metrics line per epoch. Losses of cycles that did not run and dev
/// metrics without a dev set are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    #[serde(rename = "L_CycT_mean")]
    pub l_cyc_t_mean: Option<f64>,
    #[serde(rename = "L_CycG_mean")]
    pub l_cyc_g_mean: Option<f64>,
    pub dev_bleu: Option<f64>,
    pub dev_rouge_l: Option<f64>,
    pub dev_cider: Option<f64>,
    pub dev_micro_f1: Option<f64>,
    pub dev_macro_f1: Option<f64>,
}

impl EpochMetrics {
    pub fn selection_score(&self) -> Option<f64> {
        Some(self.dev_bleu? / 100.0 + self.dev_micro_f1?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub metrics: EpochMetrics,
    pub wall_clock_s: f64,
    pub dev: Option<EvalReport>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the highest selection score so far.
    pub best_epoch: Option<usize>,
}

/// Hooks into [`train`]. Every method defaults to doing nothing.
pub trait TrainObserver {
    fn before_step(&mut self, _kind: StepKind, _state: &TrainState) {}
    fn after_step(&mut self, _kind: StepKind, _state: &TrainState, _loss: f64) {}
    fn on_epoch(
        &mut self,
        _record: &EpochRecord,
        _is_best: bool,
        _state: &TrainState,
    ) -> Result<()> {
        Ok(())
    }
    /// Called with the state as it was when `error` stopped training.
    fn on_abort(&mut self, _state: &TrainState, _error: &Error) {}
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Runs epochs `state.epoch + 1 ..= schedule.epochs`, evaluating on `dev`
/// after each one. Deterministic given the state's seed.
pub fn train(
    state: &mut TrainState,
    objective: Objective,
    dev: Option<&ParallelDataset>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    let mut best = f64::NEG_INFINITY;
    while state.epoch < state.schedule.epochs {
        let start = Instant::now();
        let epoch = state.epoch + 1;
        let losses = match run_epoch(state, objective, epoch, observer) {
            Ok(l) => l,
            Err(e) => {
                observer.on_abort(state, &e);
                return Err(e);
            }
        };
        state.epoch = epoch;
        let report = match dev
            .map(|d| evaluate(&state.t2g, &state.g2t, d, &state.schedule.decode))
            .transpose()
        {
            Ok(r) => r,
            Err(e) => {
                observer.on_abort(state, &e);
                return Err(e);
            }
        };
        let metrics = EpochMetrics {
            epoch,
            l_cyc_t_mean: losses.0,
            l_cyc_g_mean: losses.1,
            dev_bleu: report.as_ref().map(|r| r.text.bleu),
            dev_rouge_l: report.as_ref().map(|r| r.text.rouge_l),
            dev_cider: report.as_ref().map(|r| r.text.cider),
            dev_micro_f1: report.as_ref().map(|r| r.graph.micro_f1),
            dev_macro_f1: report.as_ref().map(|r| r.graph.macro_f1),
        };
        let score = metrics.selection_score().unwrap_or(f64::NEG_INFINITY);
        let is_best = log.best_epoch.is_none() || score > best;
        if is_best {
            best = score;
            log.best_epoch = Some(epoch);
        }
        let record = EpochRecord {
            metrics,
            wall_clock_s: start.elapsed().as_secs_f64(),
            dev: report,
        };
        log::info!(
            "epoch {epoch}: L_CycT {:?} L_CycG {:?} dev BLEU {:?} micro-F1 {:?} ({:.1}s)",
            record.metrics.l_cyc_t_mean,
            record.metrics.l_cyc_g_mean,
            record.metrics.dev_bleu,
            record.metrics.dev_micro_f1,
            record.wall_clock_s
        );
        if let Err(e) = observer.on_epoch(&record, is_best, state) {
            observer.on_abort(state, &e);
            return Err(e);
        }
        log.epochs.push(record);
    }
    Ok(log)
}

/// Index permutation of `0..n` for `epoch`, independent per `side`.
fn epoch_order(seed: u64, epoch: usize, side: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 2) | side);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn batches<T: Clone>(items: &[T], order: &[usize], size: usize) -> Vec<Vec<T>> {
    order
        .chunks(size)
        .map(|c| c.iter().map(|&i| items[i].clone()).collect())
        .collect()
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

fn run_epoch(
    state: &mut TrainState,
    objective: Objective,
    epoch: usize,
    observer: &mut dyn TrainObserver,
) -> Result<(Option<f64>, Option<f64>)> {
    let bs = state.schedule.batch_size;
    let seed = state.seed;
    let (mut lt, mut lg) = (Mean::default(), Mean::default());
    match objective {
        Objective::Supervised(pairs) => {
            for chunk in epoch_order(seed, epoch, 2, pairs.len()).chunks(bs) {
                let g2t_batch = chunk
                    .iter()
                    .map(|&i| state.g2t.example(&pairs.pairs[i].0, &pairs.pairs[i].1))
                    .collect::<Result<Vec<_>>>()?;
                observer.before_step(StepKind::G2T, state);
                let loss = g2t_train_step(&mut state.g2t, &mut state.g2t_opt, &g2t_batch)?;
                state.step += 1;
                observer.after_step(StepKind::G2T, state, loss);
                lt.push(loss);
                let t2g_batch = chunk
                    .iter()
                    .map(|&i| state.t2g.example(&pairs.pairs[i].1, &pairs.pairs[i].0))
                    .collect::<Result<Vec<_>>>()?;
                observer.before_step(StepKind::T2G, state);
                let loss = t2g_train_step(&mut state.t2g, &mut state.t2g_opt, &t2g_batch)?;
                state.step += 1;
                observer.after_step(StepKind::T2G, state, loss);
                lg.push(loss);
            }
        }
        Objective::Cycle { data, cycles } => {
            let text_batches = match cycles {
                Cycles::GraphOnly => Vec::new(),
                _ => batches(
                    &data.texts,
                    &epoch_order(seed, epoch, 0, data.texts.len()),
                    bs,
                ),
            };
            let graph_batches = match cycles {
                Cycles::TextOnly => Vec::new(),
                _ => batches(
                    &data.graphs,
                    &epoch_order(seed, epoch, 1, data.graphs.len()),
                    bs,
                ),
            };
            let plan: Vec<(StepKind, usize)> = match (state.schedule.granularity, cycles) {
                (Granularity::PerBatch, Cycles::Both) => {
                    let n = text_batches.len().max(graph_batches.len());
                    (0..n)
                        .flat_map(|i| {
                            [
                                (StepKind::G2T, i % text_batches.len()),
                                (StepKind::T2G, i % graph_batches.len()),
                            ]
                        })
                        .collect()
                }
                _ => (0..text_batches.len())
                    .map(|i| (StepKind::G2T, i))
                    .chain((0..graph_batches.len()).map(|i| (StepKind::T2G, i)))
                    .collect(),
            };
            for (kind, i) in plan {
                observer.before_step(kind, state);
                let loss = match kind {
                    StepKind::G2T => {
                        let l = text_cycle_step(
                            &mut state.g2t,
                            &mut state.g2t_opt,
                            &state.t2g,
                            &text_batches[i],
                        )?;
                        lt.push(l);
                        l
                    }
                    StepKind::T2G => {
                        let decoder = Decoder {
                            model: &state.g2t,
                            config: state.schedule.decode,
                        };
                        let l = graph_cycle_step(
                            &mut state.t2g,
                            &mut state.t2g_opt,
                            &decoder,
                            &graph_batches[i],
                        )?;
                        lg.push(l);
                        l
                    }
                };
                state.step += 1;
                observer.after_step(kind, state, loss);
            }
        }
    }
    Ok((lt.get(), lg.get()))
}
