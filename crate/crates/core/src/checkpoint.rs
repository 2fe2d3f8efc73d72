//! Binary checkpoints of a [`TrainState`].
//!
//! Layout: `CYKG`, format version (u32 LE), header length (u64 LE), a JSON
//! header, then every tensor listed in the header as f64 LE values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cycle::{ScheduleConfig, TrainState};
use crate::error::{Error, Result};
use crate::kg::{RelationVocab, TokenVocab};
use crate::model::ModelConfig;
use crate::nn::{Adam, ParamSet, Tensor};

const MAGIC: &[u8; 4] = b"CYKG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub token_vocab_hash: String,
    pub relation_vocab_hash: String,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
    pub t2g_adam_step: u64,
    pub g2t_adam_step: u64,
    pub t2g_params_checksum: String,
    pub g2t_params_checksum: String,
    pub tensors: Vec<TensorEntry>,
}

fn groups(state: &TrainState) -> [(&'static str, &ParamSet, Option<&[Tensor]>); 6] {
    let (t, g) = (&state.t2g.params, &state.g2t.params);
    [
        ("", t, None),
        ("", g, None),
        ("adam.m/", t, Some(&state.t2g_opt.first)),
        ("adam.v/", t, Some(&state.t2g_opt.second)),
        ("adam.m/", g, Some(&state.g2t_opt.first)),
        ("adam.v/", g, Some(&state.g2t_opt.second)),
    ]
}

pub fn save(path: &Path, state: &TrainState) -> Result<()> {
    let mut entries = Vec::new();
    let mut body: Vec<u8> = Vec::new();
    for (prefix, params, moments) in groups(state) {
        let tensors = moments.unwrap_or(params.tensors());
        for (name, t) in params.names().iter().zip(tensors) {
            entries.push(TensorEntry {
                name: format!("{prefix}{name}"),
                rows: t.rows(),
                cols: t.cols(),
            });
            for v in t.data() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = CheckpointHeader {
        token_vocab_hash: state.t2g.vocab.hash(),
        relation_vocab_hash: state.t2g.relations.hash(),
        model: state.model_config(),
        schedule: state.schedule.clone(),
        seed: state.seed(),
        epoch: state.epoch,
        step: state.step,
        t2g_adam_step: state.t2g_opt.step,
        g2t_adam_step: state.g2t_opt.step,
        t2g_params_checksum: state.t2g.params.checksum(),
        g2t_params_checksum: state.g2t.params.checksum(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + body.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&body);
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn split_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json = bytes
        .get(16..16 + len)
        .ok_or_else(|| bad("truncated header"))?;
    Ok((serde_json::from_slice(json)?, &bytes[16 + len..]))
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(split_header(&bytes)?.0)
}

fn check_hash(expected: &str, found: String) -> Result<()> {
    if expected != found {
        return Err(Error::VocabMismatch {
            expected: expected.into(),
            found,
        });
    }
    Ok(())
}

/// Restores a state saved by [`save`]. Fails with `VocabMismatch` when the
/// vocabularies differ from the ones the checkpoint was trained with.
pub fn load(path: &Path, vocab: &TokenVocab, relations: &RelationVocab) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, body) = split_header(&bytes)?;
    check_hash(&header.token_vocab_hash, vocab.hash())?;
    check_hash(&header.relation_vocab_hash, relations.hash())?;
    let mut state = TrainState::new(
        &header.model,
        header.schedule.clone(),
        vocab.clone(),
        relations.clone(),
        header.seed,
    )?;
    let total: usize = header.tensors.iter().map(|t| t.rows * t.cols).sum();
    if body.len() != total * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} data bytes, found {}",
            total * 8,
            body.len()
        )));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut entries = header.tensors.iter();
    let mut loaded: Vec<Vec<Tensor>> = Vec::new();
    for (prefix, params, _) in groups(&state) {
        let mut group = Vec::new();
        for (name, t) in params.names().iter().zip(params.tensors()) {
            let e = entries
                .next()
                .ok_or_else(|| Error::Checkpoint("missing tensors".into()))?;
            if e.name != format!("{prefix}{name}") || (e.rows, e.cols) != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` does not match the model",
                    e.name
                )));
            }
            group.push(Tensor::from_vec(
                e.rows,
                e.cols,
                values.by_ref().take(e.rows * e.cols).collect(),
            ));
        }
        loaded.push(group);
    }
    if entries.next().is_some() {
        return Err(Error::Checkpoint("unexpected extra tensors".into()));
    }
    let mut it = loaded.into_iter();
    let mut take = || it.next().unwrap();
    let (tp, gp, tm, tv, gm, gv) = (take(), take(), take(), take(), take(), take());
    let names = state.t2g.params.names().to_vec();
    state
        .t2g
        .params
        .load_from(&names, tp)
        .map_err(Error::Checkpoint)?;
    let names = state.g2t.params.names().to_vec();
    state
        .g2t
        .params
        .load_from(&names, gp)
        .map_err(Error::Checkpoint)?;
    state.t2g_opt = Adam {
        config: header.schedule.t2g_optimizer.clone(),
        step: header.t2g_adam_step,
        first: tm,
        second: tv,
    };
    state.g2t_opt = Adam {
        config: header.schedule.g2t_optimizer.clone(),
        step: header.g2t_adam_step,
        first: gm,
        second: gv,
    };
    state.epoch = header.epoch;
    state.step = header.step;
    if state.t2g.params.checksum() != header.t2g_params_checksum
        || state.g2t.params.checksum() != header.g2t_params_checksum
    {
        return Err(Error::Checkpoint("parameter checksum mismatch".into()));
    }
    Ok(state)
}
