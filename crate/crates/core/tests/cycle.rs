use cyclekg_core::checkpoint;
use cyclekg_core::cycle::{
    back_translate_texts, build_synthetic_pairs, graph_cycle_step, repair_spans, text_cycle_step,
    train, Cycles, Decoder, EpochRecord, Granularity, GraphExtractor, NoObserver, Objective,
    Origin, ScheduleConfig, StepKind, TextGenerator, TrainObserver, TrainState,
};
use cyclekg_core::data::{
    gen_synthetic, NonParallelDataset, ParallelDataset, Split, SyntheticConfig, SyntheticData,
};
use cyclekg_core::eval::{evaluate_g2t, evaluate_t2g};
use cyclekg_core::kg::{sentinel_source, AnnotatedText, KnowledgeGraph};
use cyclekg_core::model::{g2t_batch_loss, g2t_train_step, t2g_batch_loss, ModelConfig};
use cyclekg_core::nn::AdamConfig;
use cyclekg_core::{Error, Result};
use proptest::prelude::*;

fn small_data() -> SyntheticData {
    gen_synthetic(&SyntheticConfig {
        n_train_text: 40,
        n_train_graph: 40,
        n_dev: 20,
        n_test: 20,
        ..Default::default()
    })
    .unwrap()
}

fn state(d: &SyntheticData, schedule: ScheduleConfig, seed: u64) -> TrainState {
    TrainState::new(
        &ModelConfig::desk(),
        schedule,
        d.vocab.clone(),
        d.relations.clone(),
        seed,
    )
    .unwrap()
}

fn schedule(epochs: usize, batch_size: usize) -> ScheduleConfig {
    ScheduleConfig {
        epochs,
        batch_size,
        ..Default::default()
    }
}

/// One text step and one graph step per epoch; the larger G2T step size lets
/// 100 epochs suffice.
fn single_pair_schedule() -> ScheduleConfig {
    ScheduleConfig {
        g2t_optimizer: AdamConfig {
            lr: 4e-2,
            ..Default::default()
        },
        t2g_optimizer: AdamConfig {
            lr: 1e-2,
            ..Default::default()
        },
        ..schedule(100, 1)
    }
}

struct Nothing;

impl GraphExtractor for Nothing {
    fn extract(&self, _: &AnnotatedText) -> Result<KnowledgeGraph> {
        Ok(KnowledgeGraph::empty())
    }
}

impl TextGenerator for Nothing {
    fn generate(&self, _: &KnowledgeGraph) -> Result<AnnotatedText> {
        Ok(AnnotatedText::plain(vec![]))
    }
}

#[test]
fn empty_extractions_use_the_sentinel_source() {
    let d = small_data();
    let texts = &d.nonparallel.texts[..5];
    let batch = back_translate_texts(&Nothing, &d.vocab, texts).unwrap();
    assert!(batch.iter().all(|ex| ex.source == sentinel_source()));
    let mut st = state(&d, schedule(1, 4), 0);
    let phi = st.t2g.params.checksum();
    let loss = text_cycle_step(&mut st.g2t, &mut st.g2t_opt, &Nothing, texts).unwrap();
    assert!(loss.is_finite());
    assert_eq!(st.t2g.params.checksum(), phi);
}

#[test]
fn cycle_steps_reject_empty_batches_and_unanchored_texts() {
    let d = small_data();
    let mut st = state(&d, schedule(1, 4), 0);
    assert!(matches!(
        text_cycle_step(&mut st.g2t, &mut st.g2t_opt, &st.t2g, &[]),
        Err(Error::EmptyBatch)
    ));
    let dec = Decoder {
        model: &st.g2t,
        config: Default::default(),
    };
    assert!(matches!(
        graph_cycle_step(&mut st.t2g, &mut st.t2g_opt, &dec, &[]),
        Err(Error::EmptyBatch)
    ));
    let plain = [AnnotatedText::plain(vec!["x".into()])];
    assert!(text_cycle_step(&mut st.g2t, &mut st.g2t_opt, &st.t2g, &plain).is_err());
}

#[test]
fn repair_anchors_every_graph_entity() {
    let d = small_data();
    for (g, t) in d.dev.pairs.iter().take(10) {
        let empty = repair_spans(&AnnotatedText::plain(vec![]), g).unwrap();
        assert_eq!(empty.spans().len(), g.entities().len());
        for e in g.entities() {
            let s = empty.span_of(&e.id).unwrap();
            assert_eq!(&empty.tokens()[s.start..s.end], &e.tokens[..]);
        }
        assert_eq!(&repair_spans(t, g).unwrap(), t);
    }
}

#[test]
fn oracle_extractor_reduces_the_text_cycle_to_supervised_g2t() {
    let d = small_data();
    let st = state(&d, schedule(1, 8), 1);
    let texts = &d.train_text_side.pairs[..8];
    let only_texts: Vec<AnnotatedText> = texts.iter().map(|p| p.1.clone()).collect();
    let gold: Vec<_> = texts
        .iter()
        .map(|(g, t)| st.g2t.example(g, t).unwrap())
        .collect();
    let expected = g2t_batch_loss(&st.g2t, &gold);
    let (mut g2t, mut opt) = (st.g2t.clone(), st.g2t_opt.clone());
    let loss = text_cycle_step(&mut g2t, &mut opt, &d.lexicon, &only_texts).unwrap();
    assert!((loss - expected).abs() < 1e-6, "{loss} vs {expected}");
}

#[test]
fn oracle_generator_reduces_the_graph_cycle_to_supervised_t2g() {
    let d = small_data();
    let mut st = state(&d, schedule(1, 8), 2);
    let pairs = &d.train_graph_side.pairs[..8];
    let graphs: Vec<KnowledgeGraph> = pairs.iter().map(|p| p.0.clone()).collect();
    let gold: Vec<_> = pairs
        .iter()
        .map(|(g, t)| st.t2g.example(t, g).unwrap())
        .collect();
    let expected = t2g_batch_loss(&st.t2g, &gold);
    let theta = st.g2t.params.checksum();
    let loss = graph_cycle_step(&mut st.t2g, &mut st.t2g_opt, &d.lexicon, &graphs).unwrap();
    assert!((loss - expected).abs() < 1e-6, "{loss} vs {expected}");
    assert_eq!(st.g2t.params.checksum(), theta);
}

#[test]
fn each_cycle_step_freezes_the_other_model() {
    let d = small_data();
    let mut st = state(&d, schedule(1, 4), 3);
    for i in 0..3 {
        let texts = &d.nonparallel.texts[i * 4..i * 4 + 4];
        let (phi, theta) = (st.t2g.params.checksum(), st.g2t.params.checksum());
        text_cycle_step(&mut st.g2t, &mut st.g2t_opt, &st.t2g, texts).unwrap();
        assert_eq!(st.t2g.params.checksum(), phi);
        assert_ne!(st.g2t.params.checksum(), theta);

        let graphs = &d.nonparallel.graphs[i * 4..i * 4 + 4];
        let (phi, theta) = (st.t2g.params.checksum(), st.g2t.params.checksum());
        let dec = Decoder {
            model: &st.g2t,
            config: st.schedule.decode,
        };
        graph_cycle_step(&mut st.t2g, &mut st.t2g_opt, &dec, graphs).unwrap();
        assert_eq!(st.g2t.params.checksum(), theta);
        assert_ne!(st.t2g.params.checksum(), phi);
    }
    let garbage = graph_cycle_step(
        &mut st.t2g,
        &mut st.t2g_opt,
        &Nothing,
        &d.nonparallel.graphs[..4],
    );
    assert!(garbage.unwrap().is_finite());
}

#[test]
fn oracle_t2g_drives_g2t_to_the_supervised_level() {
    let d = gen_synthetic(&SyntheticConfig::default()).unwrap();
    let st = state(&d, schedule(1, 16), 4);
    let initial = evaluate_g2t(&st.g2t, &d.dev, &st.schedule.decode)
        .unwrap()
        .bleu;
    let (mut cyc, mut cyc_opt) = (st.g2t.clone(), st.g2t_opt.clone());
    let (mut sup, mut sup_opt) = (st.g2t.clone(), st.g2t_opt.clone());
    let pairs = &d.train_text_side.pairs;
    for step in 0..200 {
        let idx: Vec<usize> = (0..16).map(|k| (step * 16 + k) % pairs.len()).collect();
        let texts: Vec<AnnotatedText> = idx.iter().map(|&i| pairs[i].1.clone()).collect();
        let gold: Vec<_> = idx
            .iter()
            .map(|&i| sup.example(&pairs[i].0, &pairs[i].1).unwrap())
            .collect();
        let a = text_cycle_step(&mut cyc, &mut cyc_opt, &d.lexicon, &texts).unwrap();
        let b = g2t_train_step(&mut sup, &mut sup_opt, &gold).unwrap();
        assert!((a - b).abs() < 1e-6, "step {step}: {a} vs {b}");
    }
    let cyc_bleu = evaluate_g2t(&cyc, &d.dev, &st.schedule.decode)
        .unwrap()
        .bleu;
    let sup_bleu = evaluate_g2t(&sup, &d.dev, &st.schedule.decode)
        .unwrap()
        .bleu;
    assert!(cyc_bleu >= sup_bleu - 1e-6, "{cyc_bleu} < {sup_bleu}");
    assert!(cyc_bleu > initial, "{initial} -> {cyc_bleu}");
}

#[test]
fn oracle_g2t_drives_t2g_above_point_nine_f1() {
    let d = gen_synthetic(&SyntheticConfig::default()).unwrap();
    let mut st = state(&d, schedule(1, 16), 5);
    let graphs = &d.nonparallel.graphs;
    for step in 0..200 {
        let batch: Vec<KnowledgeGraph> = (0..16)
            .map(|k| graphs[(step * 16 + k) % graphs.len()].clone())
            .collect();
        graph_cycle_step(&mut st.t2g, &mut st.t2g_opt, &d.lexicon, &batch).unwrap();
    }
    let f1 = evaluate_t2g(&st.t2g, &d.dev).unwrap().micro_f1;
    assert!(f1 > 0.9, "micro-F1 {f1}");
}

#[test]
fn synthetic_pairs_cover_both_corpora() {
    let d = small_data();
    let st = state(&d, schedule(1, 4), 6);
    let pairs = build_synthetic_pairs(&d.nonparallel, &st.t2g, &st.decoder()).unwrap();
    let (n, m) = (d.nonparallel.texts.len(), d.nonparallel.graphs.len());
    assert_eq!(pairs.len(), n + m);
    for (p, t) in pairs[..n].iter().zip(&d.nonparallel.texts) {
        assert_eq!(p.origin, Origin::FromText);
        assert_eq!(&p.text, t);
        let mut ids: Vec<_> = p.graph.entities().iter().map(|e| e.id.clone()).collect();
        let mut expected = t.entity_key_order();
        ids.sort();
        expected.sort();
        assert_eq!(ids, expected);
    }
    assert!(pairs[n..]
        .iter()
        .zip(&d.nonparallel.graphs)
        .all(|(p, g)| p.origin == Origin::FromGraph && &p.graph == g));
}

#[test]
fn oracle_synthetic_pairs_recover_the_true_pairing() {
    let d = small_data();
    let pairs = build_synthetic_pairs(&d.nonparallel, &d.lexicon, &d.lexicon).unwrap();
    let sources: Vec<&(KnowledgeGraph, AnnotatedText)> = d
        .train_text_side
        .pairs
        .iter()
        .chain(&d.train_graph_side.pairs)
        .collect();
    for p in &pairs {
        let truth = sources.iter().find(|(g, t)| match p.origin {
            Origin::FromText => t == &p.text,
            Origin::FromGraph => g == &p.graph,
        });
        let (g, t) = truth.unwrap();
        assert_eq!((g, t), (&p.graph, &p.text));
    }
}

#[test]
fn zero_epochs_leave_the_state_untouched() {
    let d = small_data();
    let mut st = state(&d, schedule(0, 4), 7);
    let before = (
        st.t2g.params.checksum(),
        st.g2t.params.checksum(),
        st.t2g_opt.clone(),
        st.g2t_opt.clone(),
    );
    let obj = Objective::Cycle {
        data: &d.nonparallel,
        cycles: Cycles::Both,
    };
    let log = train(&mut st, obj, Some(&d.dev), &mut NoObserver).unwrap();
    assert!(log.epochs.is_empty() && log.best_epoch.is_none());
    assert_eq!((st.epoch, st.step), (0, 0));
    assert_eq!(
        before,
        (
            st.t2g.params.checksum(),
            st.g2t.params.checksum(),
            st.t2g_opt.clone(),
            st.g2t_opt.clone()
        )
    );
}

#[derive(Default)]
struct Isolation {
    pending: Option<(String, String)>,
    counts: [usize; 2],
    violations: Vec<String>,
}

impl TrainObserver for Isolation {
    fn before_step(&mut self, _: StepKind, s: &TrainState) {
        self.pending = Some((s.g2t.params.checksum(), s.t2g.params.checksum()));
    }

    fn after_step(&mut self, kind: StepKind, s: &TrainState, _: f64) {
        let (theta, phi) = self.pending.take().unwrap();
        let (frozen, now, slot) = match kind {
            StepKind::G2T => (phi, s.t2g.params.checksum(), 0),
            StepKind::T2G => (theta, s.g2t.params.checksum(), 1),
        };
        self.counts[slot] += 1;
        if frozen != now {
            self.violations.push(format!("{kind:?} at step {}", s.step));
        }
    }
}

#[test]
fn training_alternates_and_isolates_parameters() {
    let d = small_data();
    let mut st = state(&d, schedule(2, 8), 8);
    let mut obs = Isolation::default();
    let obj = Objective::Cycle {
        data: &d.nonparallel,
        cycles: Cycles::Both,
    };
    let log = train(&mut st, obj, Some(&d.dev), &mut obs).unwrap();
    assert_eq!(log.epochs.len(), 2);
    assert_eq!(obs.counts, [10, 10]);
    assert!(obs.violations.is_empty(), "{:?}", obs.violations);
    assert_eq!((st.epoch, st.step), (2, 20));
}

#[test]
fn shorter_corpus_is_cycled_per_batch_and_not_per_epoch() {
    let d = small_data();
    let texts = d.nonparallel.texts[..8].to_vec();
    let data = NonParallelDataset::new(texts, d.nonparallel.graphs.clone()).unwrap();
    for (granularity, expected) in [
        (Granularity::PerBatch, [5, 5]),
        (Granularity::PerEpoch, [1, 5]),
    ] {
        let mut st = state(
            &d,
            ScheduleConfig {
                granularity,
                ..schedule(1, 8)
            },
            9,
        );
        let mut obs = Isolation::default();
        train(
            &mut st,
            Objective::Cycle {
                data: &data,
                cycles: Cycles::Both,
            },
            None,
            &mut obs,
        )
        .unwrap();
        assert_eq!(obs.counts, expected, "{granularity:?}");
    }
}

#[test]
fn one_cycle_runs_leave_the_other_model_at_initialization() {
    let d = small_data();
    for (cycles, untouched_t2g) in [(Cycles::TextOnly, true), (Cycles::GraphOnly, false)] {
        let mut st = state(&d, schedule(1, 8), 10);
        let init = (st.t2g.params.checksum(), st.g2t.params.checksum());
        let log = train(
            &mut st,
            Objective::Cycle {
                data: &d.nonparallel,
                cycles,
            },
            None,
            &mut NoObserver,
        )
        .unwrap();
        let m = &log.epochs[0].metrics;
        assert_eq!(m.l_cyc_t_mean.is_some(), untouched_t2g);
        assert_eq!(m.l_cyc_g_mean.is_some(), !untouched_t2g);
        assert!(m.dev_bleu.is_none());
        if untouched_t2g {
            assert_eq!(st.t2g.params.checksum(), init.0);
        } else {
            assert_eq!(st.g2t.params.checksum(), init.1);
        }
    }
}

#[test]
fn fixed_seed_reproduces_the_metric_log() {
    let d = small_data();
    let run = |seed| {
        let mut st = state(&d, schedule(2, 8), seed);
        let obj = Objective::Cycle {
            data: &d.nonparallel,
            cycles: Cycles::Both,
        };
        let log = train(&mut st, obj, Some(&d.dev), &mut NoObserver).unwrap();
        let lines: Vec<String> = log
            .epochs
            .iter()
            .map(|r| serde_json::to_string(&r.metrics).unwrap())
            .collect();
        (lines, st.t2g.params.checksum(), st.g2t.params.checksum())
    };
    let a = run(11);
    assert_eq!(a, run(11));
    assert_ne!(a.1, run(12).1);
}

#[test]
fn supervised_mode_fits_the_pairs() {
    let d = small_data();
    let mut st = state(&d, schedule(3, 8), 13);
    let log = train(
        &mut st,
        Objective::Supervised(&d.train_text_side),
        None,
        &mut NoObserver,
    )
    .unwrap();
    let t: Vec<f64> = log
        .epochs
        .iter()
        .map(|r| r.metrics.l_cyc_t_mean.unwrap())
        .collect();
    let g: Vec<f64> = log
        .epochs
        .iter()
        .map(|r| r.metrics.l_cyc_g_mean.unwrap())
        .collect();
    assert!(t[2] < t[0] && g[2] < g[0], "{t:?} {g:?}");
}

#[test]
fn single_true_pair_closes_both_cycles() {
    let d = small_data();
    let (g, t) = d
        .train_text_side
        .pairs
        .iter()
        .find(|(g, _)| g.triples().len() == 2)
        .unwrap()
        .clone();
    let data = NonParallelDataset::new(vec![t.clone()], vec![g.clone()]).unwrap();
    let dev = ParallelDataset::new(Split::Dev, vec![(g, t)]).unwrap();
    let mut st = state(&d, single_pair_schedule(), 14);
    let log = train(
        &mut st,
        Objective::Cycle {
            data: &data,
            cycles: Cycles::Both,
        },
        Some(&dev),
        &mut NoObserver,
    )
    .unwrap();
    let closed = log.epochs.iter().find(|r| {
        let m = &r.metrics;
        m.l_cyc_t_mean.unwrap() < 0.01
            && m.l_cyc_g_mean.unwrap() < 0.01
            && m.dev_bleu.unwrap() == 100.0
    });
    assert!(
        closed.is_some(),
        "last epoch: {:?}",
        log.epochs.last().map(|r| &r.metrics)
    );
}

#[derive(Default)]
struct Aborts(usize);

impl TrainObserver for Aborts {
    fn on_epoch(&mut self, _: &EpochRecord, _: bool, _: &TrainState) -> Result<()> {
        Err(Error::Checkpoint("disk full".into()))
    }

    fn on_abort(&mut self, s: &TrainState, _: &Error) {
        assert_eq!(s.epoch, 1);
        self.0 += 1;
    }
}

#[test]
fn failures_reach_the_abort_hook_with_the_current_state() {
    let d = small_data();
    let mut st = state(&d, schedule(3, 8), 15);
    let mut obs = Aborts::default();
    let r = train(
        &mut st,
        Objective::Supervised(&d.train_text_side),
        None,
        &mut obs,
    );
    assert!(matches!(r, Err(Error::Checkpoint(_))));
    assert_eq!(obs.0, 1);
}

#[test]
fn checkpoints_round_trip_and_resume_exactly() {
    let d = small_data();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    let obj = Objective::Cycle {
        data: &d.nonparallel,
        cycles: Cycles::Both,
    };

    let mut straight = state(&d, schedule(2, 8), 16);
    let full = train(&mut straight, obj, Some(&d.dev), &mut NoObserver).unwrap();

    let mut first = state(&d, schedule(1, 8), 16);
    train(&mut first, obj, Some(&d.dev), &mut NoObserver).unwrap();
    checkpoint::save(&path, &first).unwrap();
    let mut resumed = checkpoint::load(&path, &d.vocab, &d.relations).unwrap();
    assert_eq!(resumed.t2g.params.checksum(), first.t2g.params.checksum());
    assert_eq!(resumed.g2t_opt, first.g2t_opt);
    assert_eq!(
        (resumed.epoch, resumed.step, resumed.seed()),
        (first.epoch, first.step, first.seed())
    );
    resumed.schedule.epochs = 2;
    let rest = train(&mut resumed, obj, Some(&d.dev), &mut NoObserver).unwrap();
    assert_eq!(rest.epochs[0].metrics, full.epochs[1].metrics);
    assert_eq!(
        resumed.g2t.params.checksum(),
        straight.g2t.params.checksum()
    );
    assert_eq!(
        resumed.t2g.params.checksum(),
        straight.t2g.params.checksum()
    );
}

#[test]
fn checkpoints_refuse_foreign_vocabularies_and_corrupt_files() {
    let d = small_data();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    checkpoint::save(&path, &state(&d, schedule(1, 8), 17)).unwrap();
    let other = gen_synthetic(&SyntheticConfig {
        seed: 99,
        n_train_text: 10,
        n_train_graph: 10,
        ..Default::default()
    })
    .unwrap();
    assert!(matches!(
        checkpoint::load(&path, &other.vocab, &d.relations),
        Err(Error::VocabMismatch { .. })
    ));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        checkpoint::load(&path, &d.vocab, &d.relations),
        Err(Error::Checkpoint(_))
    ));
    std::fs::write(&path, b"nope").unwrap();
    assert!(matches!(
        checkpoint::load(&path, &d.vocab, &d.relations),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn schedule_validation_names_the_field() {
    let d = small_data();
    let bad = ScheduleConfig {
        batch_size: 0,
        ..Default::default()
    };
    let err = TrainState::new(
        &ModelConfig::desk(),
        bad,
        d.vocab.clone(),
        d.relations.clone(),
        0,
    )
    .unwrap_err();
    assert!(err.to_string().contains("batch_size"));
    let bad = ScheduleConfig {
        g2t_optimizer: AdamConfig {
            lr: -1.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let err = TrainState::new(
        &ModelConfig::desk(),
        bad,
        d.vocab.clone(),
        d.relations.clone(),
        0,
    )
    .unwrap_err();
    assert!(err.to_string().contains("g2t_optimizer"));
    assert_eq!(ScheduleConfig::default().epochs, 30);
    assert_eq!(ScheduleConfig::default().granularity, Granularity::PerBatch);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn repair_always_yields_a_valid_t2g_example(idx in 0usize..20, cut in 0usize..40) {
        let d = small_data();
        let st = state(&d, schedule(1, 1), 0);
        let (g, t) = &d.dev.pairs[idx];
        let keep = cut.min(t.len());
        let spans = t.spans().iter().filter(|s| s.end <= keep).cloned().collect();
        let truncated = AnnotatedText::new(t.tokens()[..keep].to_vec(), spans).unwrap();
        let fixed = repair_spans(&truncated, g).unwrap();
        prop_assert!(st.t2g.example(&fixed, g).is_ok());
        prop_assert_eq!(&fixed.tokens()[..keep], &t.tokens()[..keep]);
    }
}
