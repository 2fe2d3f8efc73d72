//! Graphs, annotated texts, vocabularies and graph linearization.

pub mod linearize;
pub mod types;
pub mod vocab;

pub use linearize::{
    linearize, linearize_tokens, parse_linearized, parse_linearized_ids, sentinel_source,
    ParsedGraph,
};
pub use types::{
    tokenize, AnnotatedText, Entity, EntityKeyOrder, GraphRecord, KnowledgeGraph, Relation, Span,
    TextRecord, Triple, NO_RELATION,
};
pub use vocab::{RelationVocab, TokenVocab};
