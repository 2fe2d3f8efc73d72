//! Datasets: canonical JSON-lines records, WebNLG-style loading, the
//! non-parallel split and the synthetic benchmark.

pub mod synthetic;

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{AnnotatedText, Entity, KnowledgeGraph, Span};

pub use synthetic::{gen_synthetic, Lexicon, SyntheticConfig, SyntheticData};

/// Fraction of unparseable or invalid records tolerated by [`load_webnlg`].
pub const MAX_INVALID_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig {
                field: "split",
                reason: format!("unknown split `{other}`"),
            }),
        }
    }
}

/// One line of a pairs file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub graph: KnowledgeGraph,
    pub text: AnnotatedText,
}

/// Aligned (graph, text) pairs. Every graph entity has a span in its text.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelDataset {
    pub split: Split,
    pub pairs: Vec<(KnowledgeGraph, AnnotatedText)>,
}

impl ParallelDataset {
    pub fn new(split: Split, pairs: Vec<(KnowledgeGraph, AnnotatedText)>) -> Result<Self> {
        for (g, t) in &pairs {
            check_pair(g, t)?;
        }
        Ok(ParallelDataset { split, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn graphs(&self) -> impl Iterator<Item = &KnowledgeGraph> {
        self.pairs.iter().map(|p| &p.0)
    }

    pub fn texts(&self) -> impl Iterator<Item = &AnnotatedText> {
        self.pairs.iter().map(|p| &p.1)
    }

    pub fn records(&self) -> Vec<PairRecord> {
        self.pairs
            .iter()
            .map(|(g, t)| PairRecord {
                graph: g.clone(),
                text: t.clone(),
            })
            .collect()
    }
}

fn check_pair(g: &KnowledgeGraph, t: &AnnotatedText) -> Result<()> {
    match g.entities().iter().find(|e| t.span_of(&e.id).is_none()) {
        Some(e) => Err(Error::EntityMismatch(e.id.clone())),
        None => Ok(()),
    }
}

/// A text corpus and a graph corpus with no pairing between them.
#[derive(Clone, Debug, PartialEq)]
pub struct NonParallelDataset {
    pub texts: Vec<AnnotatedText>,
    pub graphs: Vec<KnowledgeGraph>,
}

impl NonParallelDataset {
    pub fn new(texts: Vec<AnnotatedText>, graphs: Vec<KnowledgeGraph>) -> Result<Self> {
        if texts.is_empty() || graphs.is_empty() {
            return Err(Error::InvalidConfig {
                field: "dataset",
                reason: "both sides need at least one item".into(),
            });
        }
        Ok(NonParallelDataset { texts, graphs })
    }
}

/// Texts of `text_side` and graphs of `graph_side`, each shuffled with its
/// own stream of `seed`.
pub fn make_nonparallel_from(
    text_side: &ParallelDataset,
    graph_side: &ParallelDataset,
    seed: u64,
) -> Result<NonParallelDataset> {
    let mut texts: Vec<AnnotatedText> = text_side.texts().cloned().collect();
    let mut graphs: Vec<KnowledgeGraph> = graph_side.graphs().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(11);
    texts.shuffle(&mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(12);
    graphs.shuffle(&mut rng);
    NonParallelDataset::new(texts, graphs)
}

/// Shuffles the texts and graphs of `d` independently.
pub fn make_nonparallel(d: &ParallelDataset, seed: u64) -> Result<NonParallelDataset> {
    make_nonparallel_from(d, d, seed)
}

/// Greedy longest-match, left to right, non-overlapping. Each entity keeps
/// its first match only.
pub fn dictionary_ner<S: AsRef<str>>(tokens: &[S], lexicon: &[Entity]) -> Vec<Span> {
    let mut by_surface: HashMap<Vec<&str>, &str> = HashMap::new();
    let mut longest = 0;
    for e in lexicon {
        by_surface
            .entry(e.tokens.iter().map(String::as_str).collect())
            .or_insert(e.id.as_str());
        longest = longest.max(e.tokens.len());
    }
    let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let mut seen = std::collections::HashSet::new();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let hit = (1..=longest.min(toks.len() - i))
            .rev()
            .find_map(|n| by_surface.get(&toks[i..i + n]).map(|id| (n, *id)));
        match hit {
            Some((n, id)) => {
                if seen.insert(id) {
                    spans.push(Span::new(id, i, i + n));
                }
                i += n;
            }
            None => i += 1,
        }
    }
    spans
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads every non-blank line; fails on the first bad record.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let (items, bad) = read_jsonl_lenient(path)?;
    if let Some((line, reason)) = bad.into_iter().next() {
        return Err(Error::CorruptDataset {
            path: path.into(),
            reason: format!("line {line}: {reason}"),
        });
    }
    Ok(items)
}

/// Parsed records plus `(line number, reason)` for every line that failed.
pub fn read_jsonl_lenient<T: DeserializeOwned>(
    path: &Path,
) -> Result<(Vec<T>, Vec<(usize, String)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    let mut bad = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(item) => items.push(item),
            Err(e) => bad.push((n + 1, e.to_string())),
        }
    }
    Ok((items, bad))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Diagnostics from a lenient load.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub accepted: usize,
    pub skipped: Vec<(usize, String)>,
}

/// Loads a pairs file in the canonical format, skipping invalid records.
///
/// Errors with `CorruptDataset` when the file holds no records or more than
/// 5% of them are invalid.
pub fn load_webnlg(path: &Path, split: Split) -> Result<(ParallelDataset, LoadReport)> {
    let (records, mut skipped) = read_jsonl_lenient::<PairRecord>(path)?;
    let mut pairs = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        match check_pair(&r.graph, &r.text) {
            Ok(()) => pairs.push((r.graph, r.text)),
            Err(e) => skipped.push((i + 1, e.to_string())),
        }
    }
    let total = pairs.len() + skipped.len();
    if total == 0 {
        return Err(Error::CorruptDataset {
            path: path.into(),
            reason: "no records".into(),
        });
    }
    if skipped.len() as f64 > MAX_INVALID_FRACTION * total as f64 {
        return Err(Error::CorruptDataset {
            path: path.into(),
            reason: format!("{} of {total} records invalid", skipped.len()),
        });
    }
    for (line, reason) in &skipped {
        log::warn!("{}: skipped record {line}: {reason}", path.display());
    }
    log::info!(
        "{}: {} {split} pairs accepted, {} skipped",
        path.display(),
        pairs.len(),
        skipped.len()
    );
    let report = LoadReport {
        accepted: pairs.len(),
        skipped,
    };
    Ok((ParallelDataset { split, pairs }, report))
}
