use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cyclekg_core::checkpoint;
use cyclekg_core::cycle::{train, Cycles, EpochRecord, Objective, TrainObserver, TrainState};
use cyclekg_core::data::{
    gen_synthetic, read_json, read_jsonl, write_json, write_jsonl, NonParallelDataset, PairRecord,
    ParallelDataset, Split,
};
use cyclekg_core::eval::{evaluate, evaluate_texts, generate_texts, predict_graphs};
use cyclekg_core::kg::{AnnotatedText, KnowledgeGraph, RelationVocab, TokenVocab};
use cyclekg_core::metrics::{edge_f1, GraphEvalReport, TextEvalReport};
use cyclekg_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Mode, RunConfig};
use crate::error::CliError;

pub const TRAIN_TEXTS: &str = "train.texts.jsonl";
pub const TRAIN_GRAPHS: &str = "train.graphs.jsonl";
pub const TRAIN_PAIRS: &str = "train.pairs.jsonl";
pub const DEV_PAIRS: &str = "dev.pairs.jsonl";
pub const TEST_PAIRS: &str = "test.pairs.jsonl";
pub const VOCAB: &str = "vocab.json";
pub const RELATIONS: &str = "relations.json";
pub const GEN_CONFIG: &str = "gen_config.json";

fn print_line(value: &serde_json::Value) {
    println!("{value}");
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(Error::io(path, e))
}

pub fn gen_data(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let mut sc = cfg.data.clone();
    sc.seed = cfg.seed;
    let d = gen_synthetic(&sc).map_err(CliError::data)?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let write = |name: &str, r: cyclekg_core::Result<()>| {
        r.map_err(CliError::data).map(|_| name.to_string())
    };
    let files = vec![
        write(
            TRAIN_TEXTS,
            write_jsonl(&dir.join(TRAIN_TEXTS), &d.nonparallel.texts),
        )?,
        write(
            TRAIN_GRAPHS,
            write_jsonl(&dir.join(TRAIN_GRAPHS), &d.nonparallel.graphs),
        )?,
        write(
            TRAIN_PAIRS,
            write_jsonl(&dir.join(TRAIN_PAIRS), d.train_text_side.records()),
        )?,
        write(
            DEV_PAIRS,
            write_jsonl(&dir.join(DEV_PAIRS), d.dev.records()),
        )?,
        write(
            TEST_PAIRS,
            write_jsonl(&dir.join(TEST_PAIRS), d.test.records()),
        )?,
        write(VOCAB, write_json(&dir.join(VOCAB), &d.vocab))?,
        write(RELATIONS, write_json(&dir.join(RELATIONS), &d.relations))?,
        write(GEN_CONFIG, write_json(&dir.join(GEN_CONFIG), &sc))?,
    ];
    print_line(&json!({"event": "gen-data", "dir": dir, "files": files}));
    Ok(())
}

/// Role tag of a data file name: `dev` or `test` when any dot, dash or
/// underscore separated part of the name says so.
pub fn role_of(path: &Path) -> Option<Split> {
    let name = path.file_name()?.to_str()?.to_ascii_lowercase();
    name.split(['.', '-', '_']).find_map(|part| match part {
        "dev" | "val" | "valid" | "validation" => Some(Split::Dev),
        "test" => Some(Split::Test),
        _ => None,
    })
}

fn training_path(path: PathBuf) -> Result<PathBuf, CliError> {
    match role_of(&path) {
        Some(role) => Err(CliError::usage(format!(
            "refusing to train on {role} file {}",
            path.display()
        ))),
        None => Ok(path),
    }
}

pub fn load_vocabs(data_dir: &Path) -> Result<(TokenVocab, RelationVocab), CliError> {
    let vocab = read_json(&data_dir.join(VOCAB)).map_err(CliError::data)?;
    let relations = read_json(&data_dir.join(RELATIONS)).map_err(CliError::data)?;
    Ok((vocab, relations))
}

pub fn load_pairs(path: &Path, split: Split) -> Result<ParallelDataset, CliError> {
    let records: Vec<PairRecord> = read_jsonl(path).map_err(CliError::data)?;
    ParallelDataset::new(
        split,
        records.into_iter().map(|r| (r.graph, r.text)).collect(),
    )
    .map_err(CliError::data)
}

enum TrainData {
    Cycle(NonParallelDataset),
    Supervised(ParallelDataset),
}

/// Writes `metrics.jsonl`, `timing.jsonl`, per-epoch checkpoints and the
/// best-epoch marker into a run directory.
struct RunWriter {
    dir: PathBuf,
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
}

impl RunWriter {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| io_err(dir, e))?;
        let open = |name: &str| {
            let p = dir.join(name);
            File::create(&p)
                .map(BufWriter::new)
                .map_err(|e| io_err(&p, e))
        };
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            metrics: open("metrics.jsonl")?,
            timing: open("timing.jsonl")?,
        })
    }

    fn append(w: &mut BufWriter<File>, line: &str, path: &Path) -> cyclekg_core::Result<()> {
        writeln!(w, "{line}")
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

impl TrainObserver for RunWriter {
    fn on_epoch(
        &mut self,
        record: &EpochRecord,
        is_best: bool,
        state: &TrainState,
    ) -> cyclekg_core::Result<()> {
        let epoch = record.metrics.epoch;
        let line = serde_json::to_string(&record.metrics)?;
        Self::append(&mut self.metrics, &line, &self.dir.join("metrics.jsonl"))?;
        let timing = json!({"epoch": epoch, "wall_clock_s": record.wall_clock_s}).to_string();
        Self::append(&mut self.timing, &timing, &self.dir.join("timing.jsonl"))?;
        let mut stdout_line = serde_json::to_value(&record.metrics)?;
        stdout_line["wall_clock_s"] = json!(record.wall_clock_s);
        print_line(&stdout_line);
        let name = format!("epoch-{epoch:04}.ckpt");
        checkpoint::save(&self.dir.join("checkpoints").join(&name), state)?;
        if is_best {
            let best = self.dir.join("best.ckpt");
            fs::copy(self.dir.join("checkpoints").join(&name), &best)
                .map_err(|e| Error::io(&best, e))?;
            let marker = json!({
                "epoch": epoch,
                "checkpoint": format!("checkpoints/{name}"),
                "selection_score": record.metrics.selection_score(),
            });
            write_json(&self.dir.join("best.json"), &marker)?;
        }
        Ok(())
    }

    fn on_abort(&mut self, state: &TrainState, error: &Error) {
        let path = self.dir.join("checkpoints").join("abort.ckpt");
        match checkpoint::save(&path, state) {
            Ok(()) => log::error!(
                "training aborted ({error}); state saved to {}",
                path.display()
            ),
            Err(e) => log::error!(
                "training aborted ({error}); saving {} failed: {e}",
                path.display()
            ),
        }
    }
}

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub best_epoch: Option<usize>,
}

pub fn train_run(cfg: &RunConfig, run_root: &Path) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    let paths = &cfg.paths;
    let data_dir = paths
        .data_dir
        .clone()
        .ok_or_else(|| CliError::usage("--data is required"))?;
    let resolve =
        |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| data_dir.join(name));
    let (vocab, relations) = load_vocabs(&data_dir)?;
    let data = match cfg.mode {
        Mode::Unsupervised => {
            let texts: Vec<AnnotatedText> =
                read_jsonl(&training_path(resolve(&paths.train_texts, TRAIN_TEXTS))?)
                    .map_err(CliError::data)?;
            let graphs: Vec<KnowledgeGraph> =
                read_jsonl(&training_path(resolve(&paths.train_graphs, TRAIN_GRAPHS))?)
                    .map_err(CliError::data)?;
            TrainData::Cycle(NonParallelDataset::new(texts, graphs).map_err(CliError::data)?)
        }
        Mode::Supervised => TrainData::Supervised(load_pairs(
            &training_path(resolve(&paths.train_pairs, TRAIN_PAIRS))?,
            Split::Train,
        )?),
    };
    let dev_path = resolve(&paths.dev_pairs, DEV_PAIRS);
    if role_of(&dev_path) == Some(Split::Test) {
        return Err(CliError::usage(format!(
            "refusing to select models on test file {}",
            dev_path.display()
        )));
    }
    let dev = if paths.dev_pairs.is_some() || dev_path.exists() {
        Some(load_pairs(&dev_path, Split::Dev)?)
    } else {
        None
    };

    let run_dir = run_root.join(cfg.run_name());
    fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;
    write_json(&run_dir.join("run_config.json"), cfg).map_err(CliError::data)?;
    let mut state = TrainState::new(&cfg.model, cfg.schedule.clone(), vocab, relations, cfg.seed)
        .map_err(CliError::usage)?;
    let mut writer = RunWriter::new(&run_dir)?;
    let objective = match &data {
        TrainData::Cycle(d) => Objective::Cycle {
            data: d,
            cycles: cfg.cycles,
        },
        TrainData::Supervised(p) => Objective::Supervised(p),
    };
    let log =
        train(&mut state, objective, dev.as_ref(), &mut writer).map_err(CliError::training)?;
    checkpoint::save(&run_dir.join("final.ckpt"), &state).map_err(CliError::training)?;
    print_line(&json!({
        "event": "done",
        "run_dir": run_dir,
        "epochs": log.epochs.len(),
        "best_epoch": log.best_epoch,
    }));
    Ok(TrainOutcome {
        run_dir,
        best_epoch: log.best_epoch,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub pairs_file: PathBuf,
    pub pairs: usize,
    pub text: Option<TextEvalReport>,
    pub graph: Option<GraphEvalReport>,
}

pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub predicted_texts: Option<PathBuf>,
    pub predicted_graphs: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn eval_reports(args: &EvalArgs) -> Result<EvalOutput, CliError> {
    let pairs_file = match (&args.pairs, &args.data_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.join(TEST_PAIRS),
        (None, None) => return Err(CliError::usage("--pairs or --data is required")),
    };
    let split = role_of(&pairs_file).unwrap_or(Split::Test);
    let gold = load_pairs(&pairs_file, split)?;
    let (text, graph) = match &args.checkpoint {
        Some(ckpt) => {
            if args.predicted_texts.is_some() || args.predicted_graphs.is_some() {
                return Err(CliError::usage(
                    "--checkpoint cannot be combined with prediction files",
                ));
            }
            let data_dir = args
                .data_dir
                .as_ref()
                .ok_or_else(|| CliError::usage("--data is required with --checkpoint"))?;
            let (vocab, relations) = load_vocabs(data_dir)?;
            let state = checkpoint::load(ckpt, &vocab, &relations).map_err(CliError::data)?;
            let r = evaluate(&state.t2g, &state.g2t, &gold, &state.schedule.decode)
                .map_err(CliError::data)?;
            (Some(r.text), Some(r.graph))
        }
        None => {
            if args.predicted_texts.is_none() && args.predicted_graphs.is_none() {
                return Err(CliError::usage(
                    "need --checkpoint or at least one prediction file",
                ));
            }
            let text = match &args.predicted_texts {
                Some(p) => {
                    let preds: Vec<AnnotatedText> = read_jsonl(p).map_err(CliError::data)?;
                    Some(evaluate_texts(&preds, &gold).map_err(CliError::data)?)
                }
                None => None,
            };
            let graph = match &args.predicted_graphs {
                Some(p) => {
                    let preds: Vec<KnowledgeGraph> = read_jsonl(p).map_err(CliError::data)?;
                    let gold_graphs: Vec<KnowledgeGraph> = gold.graphs().cloned().collect();
                    Some(edge_f1(&preds, &gold_graphs).map_err(CliError::data)?)
                }
                None => None,
            };
            (text, graph)
        }
    };
    Ok(EvalOutput {
        pairs_file,
        pairs: gold.len(),
        text,
        graph,
    })
}

pub fn eval_cmd(args: &EvalArgs) -> Result<(), CliError> {
    let output = eval_reports(args)?;
    let out = args.out.clone().or_else(|| {
        let ckpt = args.checkpoint.as_ref()?;
        let stem = output
            .pairs_file
            .file_stem()?
            .to_string_lossy()
            .into_owned();
        Some(ckpt.with_file_name(format!("eval.{stem}.json")))
    });
    if let Some(out) = out {
        write_json(&out, &output).map_err(CliError::data)?;
    }
    print_line(&serde_json::to_value(&output).expect("report serializes"));
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Direction {
    G2t,
    T2g,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GraphInput {
    Pair(PairRecord),
    Graph(KnowledgeGraph),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TextInput {
    Pair(PairRecord),
    Text(AnnotatedText),
}

pub fn generate_cmd(
    checkpoint_path: &Path,
    data_dir: &Path,
    direction: Direction,
    input: &Path,
    output: &Path,
) -> Result<(), CliError> {
    let (vocab, relations) = load_vocabs(data_dir)?;
    let state = checkpoint::load(checkpoint_path, &vocab, &relations).map_err(CliError::data)?;
    let count = match direction {
        Direction::G2t => {
            let graphs: Vec<KnowledgeGraph> = read_jsonl::<GraphInput>(input)
                .map_err(CliError::data)?
                .into_iter()
                .map(|r| match r {
                    GraphInput::Pair(p) => p.graph,
                    GraphInput::Graph(g) => g,
                })
                .collect();
            let texts = generate_texts(&state.g2t, &graphs, &state.schedule.decode)
                .map_err(CliError::data)?;
            write_jsonl(output, &texts).map_err(CliError::data)?;
            texts.len()
        }
        Direction::T2g => {
            let texts: Vec<AnnotatedText> = read_jsonl::<TextInput>(input)
                .map_err(CliError::data)?
                .into_iter()
                .map(|r| match r {
                    TextInput::Pair(p) => p.text,
                    TextInput::Text(t) => t,
                })
                .collect();
            let graphs = predict_graphs(&state.t2g, &texts).map_err(CliError::data)?;
            write_jsonl(output, &graphs).map_err(CliError::data)?;
            graphs.len()
        }
    };
    print_line(&json!({"event": "generate", "output": output, "records": count}));
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestScores {
    pub bleu: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub cycles: Cycles,
    pub run_dir: PathBuf,
    pub best_epoch: Option<usize>,
    /// Test scores of the checkpoint selected on dev.
    pub test: TestScores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub seed: u64,
    pub epochs: usize,
    pub runs: Vec<AblationRun>,
}

/// Trains one unsupervised run per cycle configuration and scores the
/// dev-selected checkpoint of each on the test pairs.
pub fn ablate_cmd(
    cfg: &RunConfig,
    run_root: &Path,
    cycles: &[Cycles],
) -> Result<AblationSummary, CliError> {
    let data_dir = cfg
        .paths
        .data_dir
        .clone()
        .ok_or_else(|| CliError::usage("--data is required"))?;
    let mut runs = Vec::new();
    for &c in cycles {
        let run_cfg = RunConfig {
            mode: Mode::Unsupervised,
            cycles: c,
            ..cfg.clone()
        };
        let outcome = train_run(&run_cfg, run_root)?;
        let ckpt = if outcome.best_epoch.is_some() {
            "best.ckpt"
        } else {
            "final.ckpt"
        };
        let report = eval_reports(&EvalArgs {
            checkpoint: Some(outcome.run_dir.join(ckpt)),
            data_dir: Some(data_dir.clone()),
            pairs: None,
            predicted_texts: None,
            predicted_graphs: None,
            out: None,
        })?;
        let (text, graph) = (
            report.text.expect("model eval"),
            report.graph.expect("model eval"),
        );
        runs.push(AblationRun {
            cycles: c,
            run_dir: outcome.run_dir,
            best_epoch: outcome.best_epoch,
            test: TestScores {
                bleu: text.bleu,
                rouge_l: text.rouge_l,
                cider: text.cider,
                micro_f1: graph.micro_f1,
                macro_f1: graph.macro_f1,
            },
        });
    }
    let summary = AblationSummary {
        seed: cfg.seed,
        epochs: cfg.schedule.epochs,
        runs,
    };
    write_json(&run_root.join("ablation.json"), &summary).map_err(CliError::data)?;
    print_line(&serde_json::to_value(&summary).expect("summary serializes"));
    Ok(summary)
}
