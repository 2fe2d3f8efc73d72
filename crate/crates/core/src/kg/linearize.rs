//! Flattening graphs into `<H> head <R> relation <T> tail` token sequences.

use std::collections::HashSet;

use super::types::{Entity, KnowledgeGraph, Triple, NO_RELATION};
use super::vocab::{is_marker, TokenVocab, HEAD_MARK, REL_MARK, RESERVED, TAIL_MARK, UNK};
use crate::error::{Error, Result};

/// Surface tokens of the linearization, markers included.
pub fn linearize_tokens(g: &KnowledgeGraph) -> Result<Vec<String>> {
    if g.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut out = Vec::new();
    for t in g.triples() {
        out.push(RESERVED[HEAD_MARK].to_string());
        out.extend(t.head.tokens.iter().cloned());
        out.push(RESERVED[REL_MARK].to_string());
        out.extend(t.relation.tokens().map(str::to_string));
        out.push(RESERVED[TAIL_MARK].to_string());
        out.extend(t.tail.tokens.iter().cloned());
    }
    Ok(out)
}

/// Token ids of the linearization; unknown surface tokens map to UNK.
pub fn linearize(g: &KnowledgeGraph, vocab: &TokenVocab) -> Result<Vec<usize>> {
    Ok(vocab.encode(&linearize_tokens(g)?))
}

/// `<H> <unk> <R> <unk> <T> <unk>`: stand-in source for an empty graph.
pub fn sentinel_source() -> Vec<usize> {
    vec![HEAD_MARK, UNK, REL_MARK, UNK, TAIL_MARK, UNK]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedGraph {
    pub graph: KnowledgeGraph,
    pub diagnostics: Vec<String>,
}

/// Best-effort inverse of [`linearize_tokens`]. Never fails.
///
/// The sequence is cut at every `<H>`; each piece must read
/// `<H> x+ <R> y+ <T> z+` with no markers inside the runs. Every piece that
/// does not, stray tokens before the first `<H>`, duplicate triples and
/// `NO_RELATION` labels each add one diagnostic and are dropped. Entity ids
/// are regenerated as the space-joined surface tokens.
pub fn parse_linearized<S: AsRef<str>>(tokens: &[S]) -> ParsedGraph {
    let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let head = RESERVED[HEAD_MARK];
    let mut diagnostics = Vec::new();
    let mut triples: Vec<Triple> = Vec::new();
    let mut seen = HashSet::new();

    let starts: Vec<usize> = toks
        .iter()
        .enumerate()
        .filter(|(_, t)| **t == head)
        .map(|(i, _)| i)
        .collect();
    let first = starts.first().copied().unwrap_or(toks.len());
    if first > 0 {
        diagnostics.push(format!(
            "{first} stray token(s) before the first head marker"
        ));
    }
    for (k, &s) in starts.iter().enumerate() {
        let e = starts.get(k + 1).copied().unwrap_or(toks.len());
        match parse_piece(&toks[s..e]) {
            Some((h, r, t)) => {
                if r == NO_RELATION {
                    diagnostics.push(format!("triple at {s} uses {NO_RELATION}"));
                    continue;
                }
                let head = Entity::new(h.join(" "), h.iter().map(|x| x.to_string()).collect())
                    .expect("non-empty run");
                let tail = Entity::new(t.join(" "), t.iter().map(|x| x.to_string()).collect())
                    .expect("non-empty run");
                let triple = Triple::new(head, r, tail);
                let key = (
                    triple.head.id.clone(),
                    triple.relation.0.clone(),
                    triple.tail.id.clone(),
                );
                if !seen.insert(key) {
                    diagnostics.push(format!("duplicate triple at {s}"));
                    continue;
                }
                triples.push(triple);
            }
            None => diagnostics.push(format!("malformed triple at token {s}")),
        }
    }
    let graph = KnowledgeGraph::new(triples).expect("parsed triples satisfy graph invariants");
    ParsedGraph { graph, diagnostics }
}

/// Parses token ids through `vocab`.
pub fn parse_linearized_ids(ids: &[usize], vocab: &TokenVocab) -> ParsedGraph {
    let toks: Vec<&str> = ids.iter().map(|&i| vocab.token(i)).collect();
    parse_linearized(&toks)
}

fn parse_piece<'a>(piece: &[&'a str]) -> Option<(Vec<&'a str>, String, Vec<&'a str>)> {
    let rel = piece.iter().position(|t| *t == RESERVED[REL_MARK])?;
    let tail = piece.iter().position(|t| *t == RESERVED[TAIL_MARK])?;
    if !(rel < tail) {
        return None;
    }
    let h = &piece[1..rel];
    let r = &piece[rel + 1..tail];
    let t = &piece[tail + 1..];
    let clean = |run: &[&str]| !run.is_empty() && !run.iter().any(|x| is_marker(x));
    if !(clean(h) && clean(r) && clean(t)) {
        return None;
    }
    Some((h.to_vec(), r.join(" "), t.to_vec()))
}
