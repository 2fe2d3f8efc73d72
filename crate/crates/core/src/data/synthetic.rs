//! Synthetic graph/text benchmark with an exact, invertible realizer.
//!
//! Entities are typed and every relation has its own (head type, tail type)
//! signature, so the relation of an ordered entity pair is determined by the
//! two types. Graphs are closed: whenever two entities of a graph have types
//! matching some relation, that edge is present. A graph's text is one clause
//! per triple, with the template picked by triple position.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{make_nonparallel_from, NonParallelDataset, ParallelDataset, Split};
use crate::error::{Error, Result};
use crate::kg::{AnnotatedText, Entity, KnowledgeGraph, RelationVocab, Span, TokenVocab, Triple};

/// Relation definitions available to the generator.
pub const RELATION_CAPACITY: usize = 10;
/// Templates defined per relation.
pub const TEMPLATE_CAPACITY: usize = 3;

const CLAUSE_END: &str = ".";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Kind {
    Person,
    City,
    Genre,
    Year,
    Instrument,
    Nation,
    Language,
    Company,
}

struct RelationSpec {
    label: &'static str,
    head: Kind,
    tail: Kind,
    templates: [&'static str; TEMPLATE_CAPACITY],
}

const LIBRARY: [RelationSpec; RELATION_CAPACITY] = [
    RelationSpec {
        label: "birth place",
        head: Kind::Person,
        tail: Kind::City,
        templates: [
            "{h} was born in {t} .",
            "{h} is a native of {t} .",
            "{t} is the birthplace of {h} .",
        ],
    },
    RelationSpec {
        label: "genre",
        head: Kind::Person,
        tail: Kind::Genre,
        templates: [
            "{h} performs {t} music .",
            "{h} is known for {t} .",
            "the style of {h} is {t} .",
        ],
    },
    RelationSpec {
        label: "birth year",
        head: Kind::Person,
        tail: Kind::Year,
        templates: [
            "{h} was born in the year {t} .",
            "{h} arrived in {t} .",
            "{t} is the birth year of {h} .",
        ],
    },
    RelationSpec {
        label: "instrument",
        head: Kind::Person,
        tail: Kind::Instrument,
        templates: [
            "{h} plays the {t} .",
            "{h} is a {t} player .",
            "the {t} is played by {h} .",
        ],
    },
    RelationSpec {
        label: "country",
        head: Kind::City,
        tail: Kind::Nation,
        templates: [
            "{h} is a city in {t} .",
            "{h} lies in {t} .",
            "{t} contains the city {h} .",
        ],
    },
    RelationSpec {
        label: "language",
        head: Kind::Nation,
        tail: Kind::Language,
        templates: [
            "people in {h} speak {t} .",
            "the language of {h} is {t} .",
            "{t} is spoken in {h} .",
        ],
    },
    RelationSpec {
        label: "origin",
        head: Kind::Genre,
        tail: Kind::Nation,
        templates: [
            "{h} music comes from {t} .",
            "{h} originated in {t} .",
            "{t} is the home of {h} .",
        ],
    },
    RelationSpec {
        label: "founding year",
        head: Kind::City,
        tail: Kind::Year,
        templates: [
            "{h} was founded in {t} .",
            "{h} dates back to {t} .",
            "{t} saw the founding of {h} .",
        ],
    },
    RelationSpec {
        label: "employer",
        head: Kind::Person,
        tail: Kind::Company,
        templates: [
            "{h} works for {t} .",
            "{h} is employed by {t} .",
            "{t} employs {h} .",
        ],
    },
    RelationSpec {
        label: "headquarters",
        head: Kind::Company,
        tail: Kind::City,
        templates: [
            "{h} is based in {t} .",
            "{h} has its headquarters in {t} .",
            "{t} hosts the offices of {h} .",
        ],
    },
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub min_triples: usize,
    pub max_triples: usize,
    pub templates_per_relation: usize,
    /// Source pairs whose texts form the text corpus.
    pub n_train_text: usize,
    /// Source pairs, disjoint from the above, whose graphs form the graph corpus.
    pub n_train_graph: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_entities: 50,
            n_relations: 8,
            min_triples: 1,
            max_triples: 3,
            templates_per_relation: 2,
            n_train_text: 2000,
            n_train_graph: 2000,
            n_dev: 200,
            n_test: 500,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::InvalidConfig { field, reason });
        if self.n_relations == 0 || self.n_relations > RELATION_CAPACITY {
            return bad(
                "n_relations",
                format!(
                    "must be in 1..={RELATION_CAPACITY}, got {}",
                    self.n_relations
                ),
            );
        }
        if self.templates_per_relation == 0 || self.templates_per_relation > TEMPLATE_CAPACITY {
            return bad(
                "templates_per_relation",
                format!(
                    "must be in 1..={TEMPLATE_CAPACITY}, got {}",
                    self.templates_per_relation
                ),
            );
        }
        if self.min_triples == 0 || self.max_triples < self.min_triples {
            return bad(
                "min_triples",
                format!(
                    "need 1 <= min_triples <= max_triples, got {}..{}",
                    self.min_triples, self.max_triples
                ),
            );
        }
        let kinds = active_kinds(self.n_relations).len();
        if self.n_entities < 2 * kinds {
            return bad(
                "n_entities",
                format!("need at least {} for {kinds} entity types", 2 * kinds),
            );
        }
        if self.n_train_text == 0 || self.n_train_graph == 0 {
            return bad(
                "n_train_text",
                "both training corpora must be non-empty".into(),
            );
        }
        Ok(())
    }
}

fn active_kinds(n_relations: usize) -> Vec<Kind> {
    let set: BTreeSet<Kind> = LIBRARY[..n_relations.min(RELATION_CAPACITY)]
        .iter()
        .flat_map(|r| [r.head, r.tail])
        .collect();
    set.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Word(String),
    Head,
    Tail,
}

fn parse_template(s: &str) -> Vec<Piece> {
    s.split_whitespace()
        .map(|w| match w {
            "{h}" => Piece::Head,
            "{t}" => Piece::Tail,
            w => Piece::Word(w.to_string()),
        })
        .collect()
}

#[derive(Clone, Debug)]
struct RelationDef {
    label: String,
    head: Kind,
    tail: Kind,
    templates: Vec<Vec<Piece>>,
}

/// Entities, relations and templates of one generated benchmark.
#[derive(Clone, Debug)]
pub struct Lexicon {
    relations: Vec<RelationDef>,
    entities: Vec<Entity>,
    kinds: Vec<Kind>,
    templates_per_relation: usize,
    by_id: HashMap<String, usize>,
    by_surface: HashMap<Vec<String>, usize>,
}

impl Lexicon {
    pub fn new(cfg: &SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let relations: Vec<RelationDef> = LIBRARY[..cfg.n_relations]
            .iter()
            .map(|r| RelationDef {
                label: r.label.to_string(),
                head: r.head,
                tail: r.tail,
                templates: r.templates.iter().map(|t| parse_template(t)).collect(),
            })
            .collect();
        let mut reserved: HashSet<String> = HashSet::new();
        for r in &relations {
            reserved.extend(r.label.split_whitespace().map(String::from));
            for t in &r.templates {
                reserved.extend(t.iter().filter_map(|p| match p {
                    Piece::Word(w) => Some(w.clone()),
                    _ => None,
                }));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let kinds = allocate(&relations, cfg.n_entities);
        let mut used = reserved;
        let mut years: Vec<u32> = (1900..2025).collect();
        years.shuffle(&mut rng);
        let mut entities = Vec::with_capacity(kinds.len());
        for &kind in &kinds {
            let tokens = match kind {
                Kind::Year => vec![years.pop().expect("year pool").to_string()],
                Kind::Person => vec![
                    fresh_word(&mut rng, &mut used),
                    fresh_word(&mut rng, &mut used),
                ],
                _ => {
                    let n = if rng.gen_bool(0.3) { 2 } else { 1 };
                    (0..n).map(|_| fresh_word(&mut rng, &mut used)).collect()
                }
            };
            used.extend(tokens.iter().cloned());
            entities.push(Entity::new(tokens.join(" "), tokens)?);
        }
        let by_id = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
        let by_surface = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.tokens.clone(), i))
            .collect();
        Ok(Lexicon {
            relations,
            entities,
            kinds,
            templates_per_relation: cfg.templates_per_relation,
            by_id,
            by_surface,
        })
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relation_labels(&self) -> Vec<&str> {
        self.relations.iter().map(|r| r.label.as_str()).collect()
    }

    /// Literal words of the templates in use, in first-use order.
    pub fn template_words(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in &self.relations {
            for t in &r.templates[..self.templates_per_relation] {
                for p in t {
                    if let Piece::Word(w) = p {
                        if seen.insert(w.clone()) {
                            out.push(w.clone());
                        }
                    }
                }
            }
        }
        out
    }

    /// Relation label tokens, then template words, then entity name tokens.
    pub fn vocab(&self) -> Result<TokenVocab> {
        let labels: Vec<&str> = self
            .relations
            .iter()
            .flat_map(|r| r.label.split_whitespace())
            .collect();
        let words = self.template_words();
        TokenVocab::from_tokens(
            labels
                .into_iter()
                .chain(words.iter().map(String::as_str))
                .chain(
                    self.entities
                        .iter()
                        .flat_map(|e| e.tokens.iter().map(String::as_str)),
                ),
        )
    }

    pub fn relation_vocab(&self) -> Result<RelationVocab> {
        RelationVocab::new(self.relation_labels())
    }

    fn relation_for(&self, head: Kind, tail: Kind) -> Option<usize> {
        self.relations
            .iter()
            .position(|r| r.head == head && r.tail == tail)
    }

    /// Renders one clause per triple; the template of triple `i` is
    /// `i % templates_per_relation`. Spans mark each entity's first mention.
    pub fn realize(&self, g: &KnowledgeGraph) -> Result<AnnotatedText> {
        if g.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let mut tokens: Vec<String> = Vec::new();
        let mut spans: Vec<Span> = Vec::new();
        let mut seen = HashSet::new();
        for (i, triple) in g.triples().iter().enumerate() {
            let rel = self
                .relations
                .iter()
                .find(|r| r.label == triple.relation.label())
                .ok_or_else(|| {
                    Error::InvalidGraph(format!(
                        "no template for relation `{}`",
                        triple.relation.label()
                    ))
                })?;
            for piece in &rel.templates[i % self.templates_per_relation] {
                let entity = match piece {
                    Piece::Word(w) => {
                        tokens.push(w.clone());
                        continue;
                    }
                    Piece::Head => &triple.head,
                    Piece::Tail => &triple.tail,
                };
                if seen.insert(entity.id.clone()) {
                    spans.push(Span::new(
                        entity.id.clone(),
                        tokens.len(),
                        tokens.len() + entity.tokens.len(),
                    ));
                }
                tokens.extend(entity.tokens.iter().cloned());
            }
        }
        AnnotatedText::new(tokens, spans)
    }

    /// Exact inverse of [`Lexicon::realize`]: recovers the graph (triples in
    /// clause order) or `None` if any clause fails to match exactly one
    /// template in use at its position.
    pub fn parse<S: AsRef<str>>(&self, tokens: &[S]) -> Option<KnowledgeGraph> {
        let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        if toks.is_empty() || toks.last() != Some(&CLAUSE_END) {
            return None;
        }
        let mut triples = Vec::new();
        for (i, clause) in toks.split_inclusive(|t| *t == CLAUSE_END).enumerate() {
            let slot = i % self.templates_per_relation;
            let mut found = None;
            for rel in &self.relations {
                for (h, t) in self.match_clause(&rel.templates[slot], clause, rel) {
                    if found.is_some() {
                        return None;
                    }
                    found = Some(Triple::new(
                        self.entities[h].clone(),
                        rel.label.clone(),
                        self.entities[t].clone(),
                    ));
                }
            }
            triples.push(found?);
        }
        KnowledgeGraph::new(triples).ok()
    }

    fn match_clause(
        &self,
        template: &[Piece],
        clause: &[&str],
        rel: &RelationDef,
    ) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.match_from(template, clause, rel, None, None, &mut out);
        out
    }

    fn match_from(
        &self,
        template: &[Piece],
        clause: &[&str],
        rel: &RelationDef,
        head: Option<usize>,
        tail: Option<usize>,
        out: &mut Vec<(usize, usize)>,
    ) {
        match template.split_first() {
            None => {
                if clause.is_empty() {
                    if let (Some(h), Some(t)) = (head, tail) {
                        out.push((h, t));
                    }
                }
            }
            Some((Piece::Word(w), rest)) => {
                if clause.first() == Some(&w.as_str()) {
                    self.match_from(rest, &clause[1..], rel, head, tail, out);
                }
            }
            Some((slot, rest)) => {
                let kind = if *slot == Piece::Head {
                    rel.head
                } else {
                    rel.tail
                };
                for n in 1..=clause.len() {
                    let surface: Vec<String> = clause[..n].iter().map(|s| s.to_string()).collect();
                    if let Some(&e) = self.by_surface.get(&surface) {
                        if self.kinds[e] != kind {
                            continue;
                        }
                        let (h, t) = if *slot == Piece::Head {
                            (Some(e), tail)
                        } else {
                            (head, Some(e))
                        };
                        self.match_from(rest, &clause[n..], rel, h, t, out);
                    }
                }
            }
        }
    }

    /// True when every type-compatible ordered pair of the graph's entities is an edge.
    pub fn is_closed(&self, g: &KnowledgeGraph) -> bool {
        let edges = g.edge_set();
        let ids: Vec<usize> = match g
            .entities()
            .iter()
            .map(|e| self.by_id.get(&e.id).copied())
            .collect()
        {
            Some(ids) => ids,
            None => return false,
        };
        for &a in &ids {
            for &b in &ids {
                if a == b {
                    continue;
                }
                if let Some(r) = self.relation_for(self.kinds[a], self.kinds[b]) {
                    let e = (
                        self.entities[a].id.clone(),
                        self.relations[r].label.clone(),
                        self.entities[b].id.clone(),
                    );
                    if !edges.contains(&e) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn sample_graph(
        &self,
        rng: &mut ChaCha8Rng,
        by_kind: &HashMap<Kind, Vec<usize>>,
        n: usize,
    ) -> Vec<(usize, usize, usize)> {
        let pick = |rng: &mut ChaCha8Rng, kind: Kind| {
            *by_kind[&kind].choose(rng).expect("kind has entities")
        };
        let r = rng.gen_range(0..self.relations.len());
        let rel = &self.relations[r];
        let mut triples = vec![(pick(rng, rel.head), r, pick(rng, rel.tail))];
        let mut guard = 0;
        while triples.len() < n && guard < 20 {
            guard += 1;
            let anchor_triple = triples[rng.gen_range(0..triples.len())];
            let anchor = if rng.gen_bool(0.5) {
                anchor_triple.0
            } else {
                anchor_triple.2
            };
            let kind = self.kinds[anchor];
            let options: Vec<(usize, bool)> = self
                .relations
                .iter()
                .enumerate()
                .flat_map(|(i, r)| {
                    let mut v = Vec::new();
                    if r.head == kind {
                        v.push((i, true));
                    }
                    if r.tail == kind {
                        v.push((i, false));
                    }
                    v
                })
                .collect();
            let Some(&(r, as_head)) = options.choose(rng) else {
                break;
            };
            let rel = &self.relations[r];
            let t = if as_head {
                (anchor, r, pick(rng, rel.tail))
            } else {
                (pick(rng, rel.head), r, anchor)
            };
            if t.0 != t.2 && !triples.contains(&t) {
                triples.push(t);
            }
        }
        triples
    }

    fn build_graph(&self, triples: &[(usize, usize, usize)]) -> Result<KnowledgeGraph> {
        KnowledgeGraph::new(
            triples
                .iter()
                .map(|&(h, r, t)| {
                    Triple::new(
                        self.entities[h].clone(),
                        self.relations[r].label.clone(),
                        self.entities[t].clone(),
                    )
                })
                .collect(),
        )
    }

    /// Reorders triples until their order is row-major over the rendered
    /// text's entity key order, so the text-to-graph decoding order and the
    /// realizer order agree. `None` if no fixed point is reached.
    fn canonicalize(&self, g: KnowledgeGraph) -> Option<(KnowledgeGraph, AnnotatedText)> {
        let mut g = g;
        for _ in 0..8 {
            let text = self.realize(&g).ok()?;
            let keys = text.entity_key_order();
            let pos = |id: &str| {
                keys.iter()
                    .position(|k| k == id)
                    .expect("entity is mentioned")
            };
            let mut sorted = g.triples().to_vec();
            sorted.sort_by_key(|t| (pos(&t.head.id), pos(&t.tail.id)));
            if sorted == g.triples() {
                return Some((g, text));
            }
            g = KnowledgeGraph::new(sorted).ok()?;
        }
        None
    }

    fn sample_pair(
        &self,
        rng: &mut ChaCha8Rng,
        by_kind: &HashMap<Kind, Vec<usize>>,
        cfg: &SyntheticConfig,
    ) -> Option<(KnowledgeGraph, AnnotatedText)> {
        let n = rng.gen_range(cfg.min_triples..=cfg.max_triples);
        let triples = self.sample_graph(rng, by_kind, n);
        if triples.len() != n {
            return None;
        }
        let g = self.build_graph(&triples).ok()?;
        if !self.is_closed(&g) {
            return None;
        }
        self.canonicalize(g)
    }
}

/// Splits `n` entities over the active types proportionally to how many
/// relations touch each type, at least two per type.
fn allocate(relations: &[RelationDef], n: usize) -> Vec<Kind> {
    let kinds: Vec<Kind> = relations
        .iter()
        .flat_map(|r| [r.head, r.tail])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let weight = |k: Kind| {
        relations
            .iter()
            .filter(|r| r.head == k || r.tail == k)
            .count()
    };
    let total: usize = kinds.iter().map(|&k| weight(k)).sum();
    let spare = n - 2 * kinds.len();
    let mut counts: Vec<usize> = kinds
        .iter()
        .map(|&k| 2 + spare * weight(k) / total)
        .collect();
    let mut remainders: Vec<(usize, usize)> = kinds
        .iter()
        .enumerate()
        .map(|(i, &k)| (spare * weight(k) % total, i))
        .collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = n - counts.iter().sum::<usize>();
    for (_, i) in remainders {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    kinds
        .iter()
        .zip(counts)
        .flat_map(|(&k, c)| std::iter::repeat(k).take(c))
        .collect()
}

fn fresh_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    const ONSETS: [&str; 16] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st",
    ];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    loop {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

/// Everything [`gen_synthetic`] produces.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub config: SyntheticConfig,
    pub lexicon: Lexicon,
    /// Source pairs of the text corpus; also the supervised training set.
    pub train_text_side: ParallelDataset,
    /// Source pairs of the graph corpus.
    pub train_graph_side: ParallelDataset,
    pub dev: ParallelDataset,
    pub test: ParallelDataset,
    pub nonparallel: NonParallelDataset,
    pub vocab: TokenVocab,
    pub relations: RelationVocab,
}

/// Generates distinct closed graphs for all splits, realizes them, and builds
/// the non-parallel training corpora from disjoint source pairs.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    let lexicon = Lexicon::new(cfg)?;
    let mut by_kind: HashMap<Kind, Vec<usize>> = HashMap::new();
    for (i, &k) in lexicon.kinds.iter().enumerate() {
        by_kind.entry(k).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut seen: HashSet<Vec<(String, String, String)>> = HashSet::new();
    let mut draw = |count: usize, split: Split| -> Result<ParallelDataset> {
        let mut pairs = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while pairs.len() < count {
            attempts += 1;
            if attempts > 2000 * (count + 10) {
                return Err(Error::InvalidConfig {
                    field: "n_entities",
                    reason: format!(
                        "could not draw {count} distinct {split} graphs; the support is too small"
                    ),
                });
            }
            let Some((g, t)) = lexicon.sample_pair(&mut rng, &by_kind, cfg) else {
                continue;
            };
            let mut key: Vec<_> = g.edge_set().into_iter().collect();
            key.sort();
            if seen.insert(key) {
                pairs.push((g, t));
            }
        }
        ParallelDataset::new(split, pairs)
    };
    let train_text_side = draw(cfg.n_train_text, Split::Train)?;
    let train_graph_side = draw(cfg.n_train_graph, Split::Train)?;
    let dev = draw(cfg.n_dev, Split::Dev)?;
    let test = draw(cfg.n_test, Split::Test)?;
    let nonparallel = make_nonparallel_from(&train_text_side, &train_graph_side, cfg.seed)?;
    Ok(SyntheticData {
        config: cfg.clone(),
        vocab: lexicon.vocab()?,
        relations: lexicon.relation_vocab()?,
        lexicon,
        train_text_side,
        train_graph_side,
        dev,
        test,
        nonparallel,
    })
}
