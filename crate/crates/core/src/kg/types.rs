use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label of the distinguished "no edge" relation class.
pub const NO_RELATION: &str = "NO_RELATION";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub tokens: Vec<String>,
}

impl Entity {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() || tokens.iter().any(String::is_empty) {
            return Err(Error::InvalidGraph(format!(
                "entity `{id}` needs non-empty tokens"
            )));
        }
        Ok(Entity { id, tokens })
    }

    /// Entity whose id is its surface form, tokens split on whitespace.
    pub fn from_surface(surface: &str) -> Result<Self> {
        let tokens: Vec<String> = surface.split_whitespace().map(str::to_string).collect();
        Entity::new(tokens.join(" "), tokens)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Relation(pub String);

impl Relation {
    pub fn new(label: impl Into<String>) -> Self {
        Relation(label.into())
    }

    pub fn label(&self) -> &str {
        &self.0
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.0.split_whitespace()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: Entity,
    pub relation: Relation,
    pub tail: Entity,
}

impl Triple {
    pub fn new(head: Entity, relation: impl Into<String>, tail: Entity) -> Self {
        Triple {
            head,
            relation: Relation::new(relation),
            tail,
        }
    }

    /// `(head.id, relation, tail.id)`: identity of an edge.
    pub fn key(&self) -> (&str, &str, &str) {
        (&self.head.id, self.relation.label(), &self.tail.id)
    }
}

/// Ordered triples over an ordered set of distinct entities.
///
/// Entities mentioned by triples come first, in first-mention order; entities
/// without edges (possible for predicted graphs) follow in insertion order.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "GraphRecord", into = "GraphRecord")]
pub struct KnowledgeGraph {
    triples: Vec<Triple>,
    entities: Vec<Entity>,
}

impl KnowledgeGraph {
    pub fn new(triples: Vec<Triple>) -> Result<Self> {
        Self::with_entities(triples, Vec::new())
    }

    /// Graph over `triples` plus any extra (possibly isolated) `entities`.
    pub fn with_entities(triples: Vec<Triple>, extra: Vec<Entity>) -> Result<Self> {
        let mut seen_triples = HashSet::new();
        let mut by_id: HashMap<String, Vec<String>> = HashMap::new();
        let mut entities: Vec<Entity> = Vec::new();
        let mut register = |e: &Entity, entities: &mut Vec<Entity>| -> Result<()> {
            match by_id.get(&e.id) {
                Some(tokens) if *tokens != e.tokens => Err(Error::InvalidGraph(format!(
                    "entity `{}` has inconsistent surface tokens",
                    e.id
                ))),
                Some(_) => Ok(()),
                None => {
                    by_id.insert(e.id.clone(), e.tokens.clone());
                    entities.push(e.clone());
                    Ok(())
                }
            }
        };
        for t in &triples {
            if t.relation.label() == NO_RELATION {
                return Err(Error::InvalidGraph(
                    "triples cannot carry NO_RELATION".into(),
                ));
            }
            if t.relation.label().trim().is_empty() {
                return Err(Error::InvalidGraph("empty relation label".into()));
            }
            if !seen_triples.insert((t.head.id.clone(), t.relation.0.clone(), t.tail.id.clone())) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate triple ({}, {}, {})",
                    t.head.id, t.relation.0, t.tail.id
                )));
            }
            register(&t.head, &mut entities)?;
            register(&t.tail, &mut entities)?;
        }
        for e in &extra {
            register(e, &mut entities)?;
        }
        Ok(KnowledgeGraph { triples, entities })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Entity ids in the deterministic key order used to index edge matrices.
    pub fn entity_key_order(&self) -> Vec<String> {
        self.entities.iter().map(|e| e.id.clone()).collect()
    }

    /// Set of `(head.id, relation, tail.id)` edges.
    pub fn edge_set(&self) -> HashSet<(String, String, String)> {
        self.triples
            .iter()
            .map(|t| (t.head.id.clone(), t.relation.0.clone(), t.tail.id.clone()))
            .collect()
    }

    /// Triples by surface form, independent of entity ids.
    pub fn surface_triples(&self) -> Vec<(Vec<String>, String, Vec<String>)> {
        self.triples
            .iter()
            .map(|t| {
                (
                    t.head.tokens.clone(),
                    t.relation.0.clone(),
                    t.tail.tokens.clone(),
                )
            })
            .collect()
    }

    pub fn to_record(&self) -> GraphRecord {
        GraphRecord {
            triples: self
                .triples
                .iter()
                .map(|t| (t.head.id.clone(), t.relation.0.clone(), t.tail.id.clone()))
                .collect(),
            entities: self
                .entities
                .iter()
                .map(|e| (e.id.clone(), e.tokens.clone()))
                .collect(),
        }
    }

    pub fn from_record(record: GraphRecord) -> Result<Self> {
        let lookup = |id: &str| -> Result<Entity> {
            let tokens = record.entities.get(id).ok_or_else(|| {
                Error::InvalidGraph(format!("triple references unknown entity `{id}`"))
            })?;
            Entity::new(id, tokens.clone())
        };
        let triples = record
            .triples
            .iter()
            .map(|(h, r, t)| Ok(Triple::new(lookup(h)?, r.clone(), lookup(t)?)))
            .collect::<Result<Vec<_>>>()?;
        let extra = record
            .entities
            .iter()
            .map(|(id, tokens)| Entity::new(id.clone(), tokens.clone()))
            .collect::<Result<Vec<_>>>()?;
        KnowledgeGraph::with_entities(triples, extra)
    }
}

/// On-disk graph: `{"triples": [[head_id, relation, tail_id], ...], "entities": {id: [tokens...]}}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub triples: Vec<(String, String, String)>,
    pub entities: IndexMap<String, Vec<String>>,
}

impl TryFrom<GraphRecord> for KnowledgeGraph {
    type Error = Error;

    fn try_from(record: GraphRecord) -> Result<Self> {
        KnowledgeGraph::from_record(record)
    }
}

impl From<KnowledgeGraph> for GraphRecord {
    fn from(g: KnowledgeGraph) -> Self {
        g.to_record()
    }
}

/// Half-open token range `start..end` that mentions `entity_id`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub entity_id: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(entity_id: impl Into<String>, start: usize, end: usize) -> Self {
        Span {
            entity_id: entity_id.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Token sequence with one span per mentioned entity.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "TextRecord", into = "TextRecord")]
pub struct AnnotatedText {
    tokens: Vec<String>,
    spans: Vec<Span>,
}

impl AnnotatedText {
    pub fn new(tokens: Vec<String>, spans: Vec<Span>) -> Result<Self> {
        let mut ids = HashSet::new();
        for s in &spans {
            if s.start >= s.end || s.end > tokens.len() {
                return Err(Error::InvalidText(format!(
                    "span {}..{} of `{}` invalid for {} tokens",
                    s.start,
                    s.end,
                    s.entity_id,
                    tokens.len()
                )));
            }
            if !ids.insert(s.entity_id.as_str()) {
                return Err(Error::InvalidText(format!(
                    "entity `{}` has two spans",
                    s.entity_id
                )));
            }
        }
        let mut sorted: Vec<&Span> = spans.iter().collect();
        sorted.sort_by_key(|s| s.start);
        if sorted.windows(2).any(|w| w[1].start < w[0].end) {
            return Err(Error::InvalidText("entity spans overlap".into()));
        }
        Ok(AnnotatedText { tokens, spans })
    }

    /// Text without entity annotation.
    pub fn plain(tokens: Vec<String>) -> Self {
        AnnotatedText {
            tokens,
            spans: Vec::new(),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Spans ordered by start position (the edge-matrix key order).
    pub fn spans_in_key_order(&self) -> Vec<&Span> {
        let mut sorted: Vec<&Span> = self.spans.iter().collect();
        sorted.sort_by_key(|s| s.start);
        sorted
    }

    pub fn entity_key_order(&self) -> Vec<String> {
        self.spans_in_key_order()
            .into_iter()
            .map(|s| s.entity_id.clone())
            .collect()
    }

    /// Entities as mentioned in the text, in key order.
    pub fn entities(&self) -> Vec<Entity> {
        self.spans_in_key_order()
            .into_iter()
            .map(|s| Entity {
                id: s.entity_id.clone(),
                tokens: self.tokens[s.start..s.end].to_vec(),
            })
            .collect()
    }

    pub fn span_of(&self, entity_id: &str) -> Option<&Span> {
        self.spans.iter().find(|s| s.entity_id == entity_id)
    }

    pub fn to_record(&self) -> TextRecord {
        TextRecord {
            tokens: self.tokens.clone(),
            entities: self
                .spans
                .iter()
                .map(|s| (s.entity_id.clone(), s.start, s.end))
                .collect(),
        }
    }

    pub fn from_record(record: TextRecord) -> Result<Self> {
        let spans = record
            .entities
            .into_iter()
            .map(|(id, s, e)| Span::new(id, s, e))
            .collect();
        AnnotatedText::new(record.tokens, spans)
    }
}

/// On-disk text: `{"tokens": [...], "entities": [[id, start, end], ...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub tokens: Vec<String>,
    pub entities: Vec<(String, usize, usize)>,
}

impl TryFrom<TextRecord> for AnnotatedText {
    type Error = Error;

    fn try_from(record: TextRecord) -> Result<Self> {
        AnnotatedText::from_record(record)
    }
}

impl From<AnnotatedText> for TextRecord {
    fn from(t: AnnotatedText) -> Self {
        t.to_record()
    }
}

/// Either side of the edge-matrix key order.
pub trait EntityKeyOrder {
    fn entity_key_order(&self) -> Vec<String>;
}

impl EntityKeyOrder for KnowledgeGraph {
    fn entity_key_order(&self) -> Vec<String> {
        KnowledgeGraph::entity_key_order(self)
    }
}

impl EntityKeyOrder for AnnotatedText {
    fn entity_key_order(&self) -> Vec<String> {
        AnnotatedText::entity_key_order(self)
    }
}

/// Whitespace tokenization with lowercasing.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}
