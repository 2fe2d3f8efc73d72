use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::types::{AnnotatedText, KnowledgeGraph, NO_RELATION};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const HEAD_MARK: usize = 4;
pub const REL_MARK: usize = 5;
pub const TAIL_MARK: usize = 6;

/// Surface forms of the reserved ids `0..7`.
pub const RESERVED: [&str; 7] = ["<pad>", "<bos>", "<eos>", "<unk>", "<H>", "<R>", "<T>"];

pub fn is_marker(token: &str) -> bool {
    token == RESERVED[HEAD_MARK] || token == RESERVED[REL_MARK] || token == RESERVED[TAIL_MARK]
}

/// Bijection between tokens and ids, with reserved ids in fixed positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for TokenVocab {
    fn default() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        TokenVocab { tokens, index }
    }
}

impl TokenVocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `token` if absent and returns its id. Reserved surface forms are rejected.
    pub fn insert(&mut self, token: &str) -> Result<usize> {
        if let Some(&id) = self.index.get(token) {
            if id < RESERVED.len() {
                return Err(Error::InvalidText(format!("`{token}` is a reserved token")));
            }
            return Ok(id);
        }
        if token.is_empty() {
            return Err(Error::InvalidText("empty token".into()));
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        Ok(self.tokens.len() - 1)
    }

    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut v = Self::new();
        for t in tokens {
            v.insert(t)?;
        }
        Ok(v)
    }

    /// Vocabulary covering every surface token (and relation label token) of the data.
    pub fn build<'a>(
        graphs: impl IntoIterator<Item = &'a KnowledgeGraph>,
        texts: impl IntoIterator<Item = &'a AnnotatedText>,
    ) -> Result<Self> {
        let mut v = Self::new();
        for g in graphs {
            for t in g.triples() {
                for tok in t.head.tokens.iter().chain(&t.tail.tokens) {
                    v.insert(tok)?;
                }
                for tok in t.relation.tokens() {
                    v.insert(tok)?;
                }
            }
            for e in g.entities() {
                for tok in &e.tokens {
                    v.insert(tok)?;
                }
            }
        }
        for t in texts {
            for tok in t.tokens() {
                v.insert(tok)?;
            }
        }
        Ok(v)
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn hash(&self) -> String {
        hash_strings(&self.tokens)
    }
}

impl TryFrom<Vec<String>> for TokenVocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::InvalidText(
                "vocabulary does not start with the reserved tokens".into(),
            ));
        }
        let mut v = TokenVocab::new();
        for t in &tokens[RESERVED.len()..] {
            let before = v.len();
            v.insert(t)?;
            if v.len() == before {
                return Err(Error::InvalidText(format!(
                    "duplicate vocabulary token `{t}`"
                )));
            }
        }
        Ok(v)
    }
}

impl From<TokenVocab> for Vec<String> {
    fn from(v: TokenVocab) -> Self {
        v.tokens
    }
}

/// Relation labels with `NO_RELATION` fixed at index 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct RelationVocab {
    labels: Vec<String>,
}

impl RelationVocab {
    pub fn new<S: AsRef<str>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut all = vec![NO_RELATION.to_string()];
        for l in labels {
            let l = l.as_ref();
            if l == NO_RELATION {
                continue;
            }
            if l.trim().is_empty() {
                return Err(Error::InvalidGraph("empty relation label".into()));
            }
            if !all.iter().any(|x| x == l) {
                all.push(l.to_string());
            }
        }
        Ok(RelationVocab { labels: all })
    }

    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a KnowledgeGraph>) -> Result<Self> {
        let mut labels: Vec<String> = Vec::new();
        for g in graphs {
            for t in g.triples() {
                if !labels.contains(&t.relation.0) {
                    labels.push(t.relation.0.clone());
                }
            }
        }
        Self::new(labels)
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hash(&self) -> String {
        hash_strings(&self.labels)
    }
}

impl TryFrom<Vec<String>> for RelationVocab {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        if labels.first().map(String::as_str) != Some(NO_RELATION) {
            return Err(Error::InvalidGraph(
                "relation vocabulary must start with NO_RELATION".into(),
            ));
        }
        let v = RelationVocab::new(&labels)?;
        if v.len() != labels.len() {
            return Err(Error::InvalidGraph("duplicate relation labels".into()));
        }
        Ok(v)
    }
}

impl From<RelationVocab> for Vec<String> {
    fn from(v: RelationVocab) -> Self {
        v.labels
    }
}

fn hash_strings(items: &[String]) -> String {
    let mut h = Sha256::new();
    for s in items {
        h.update((s.len() as u64).to_le_bytes());
        h.update(s.as_bytes());
    }
    hex::encode(h.finalize())
}
