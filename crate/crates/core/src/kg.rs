//! Triples, knowledge graphs and sample datasets.
//!
//! Entity and relation names are interned into dense integer ids. A
//! [`Vocabulary`] holds both intern tables and is shared by the dataset, the
//! probability graph built from it and every graph parsed against it.
//!
//! File formats:
//!
//! - dataset: JSON Lines, one `{"sample_id": <int>, "triples": [[h, r, t], ...]}`
//!   per line;
//! - knowledge graph: `{"triples": [[h, r, t], ...]}` (a bare triple array is
//!   accepted on input).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::marker::PhantomData;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate sample_id {sample_id}")]
    DuplicateSample { line: usize, sample_id: u64 },
    #[error("dangling {kind} id {id}")]
    DanglingId { kind: &'static str, id: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

macro_rules! intern_id {
    ($name:ident, $kind:literal) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u32);

        impl From<u32> for $name {
            fn from(v: u32) -> Self {
                $name(v)
            }
        }

        impl From<$name> for u32 {
            fn from(v: $name) -> u32 {
                v.0
            }
        }

        impl InternId for $name {
            const KIND: &'static str = $kind;
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}#{}", $kind, self.0)
            }
        }
    };
}

pub trait InternId: Copy + From<u32> + Into<u32> {
    const KIND: &'static str;
}

intern_id!(EntityId, "entity");
intern_id!(RelationId, "relation");

/// Injective string table handing out dense ids in first-seen order.
#[derive(Clone, Debug)]
pub struct Interner<Id> {
    names: Vec<String>,
    index: HashMap<String, u32>,
    _id: PhantomData<Id>,
}

impl<Id: InternId> Default for Interner<Id> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            index: HashMap::new(),
            _id: PhantomData,
        }
    }
}

impl<Id: InternId> Interner<Id> {
    pub fn intern(&mut self, name: &str) -> Id {
        if let Some(&id) = self.index.get(name) {
            return Id::from(id);
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        Id::from(id)
    }

    pub fn get(&self, name: &str) -> Option<Id> {
        self.index.get(name).map(|&id| Id::from(id))
    }

    pub fn resolve(&self, id: Id) -> Result<&str, KgError> {
        let raw: u32 = id.into();
        self.names
            .get(raw as usize)
            .map(String::as_str)
            .ok_or(KgError::DanglingId {
                kind: Id::KIND,
                id: raw,
            })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// The entity and relation intern tables.
#[derive(Clone, Debug, Default)]
pub struct Vocabulary {
    pub entities: Interner<EntityId>,
    pub relations: Interner<RelationId>,
}

impl Vocabulary {
    pub fn intern_triple(&mut self, head: &str, relation: &str, tail: &str) -> Triple {
        Triple {
            head: self.entities.intern(head),
            relation: self.relations.intern(relation),
            tail: self.entities.intern(tail),
        }
    }

    /// Looks up a triple without growing the tables.
    pub fn lookup_triple(&self, head: &str, relation: &str, tail: &str) -> Option<Triple> {
        Some(Triple {
            head: self.entities.get(head)?,
            relation: self.relations.get(relation)?,
            tail: self.entities.get(tail)?,
        })
    }

    pub fn resolve_triple(&self, t: &Triple) -> Result<[&str; 3], KgError> {
        Ok([
            self.entities.resolve(t.head)?,
            self.relations.resolve(t.relation)?,
            self.entities.resolve(t.tail)?,
        ])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    pub fn pair(&self) -> (EntityId, EntityId) {
        (self.head, self.tail)
    }
}

/// An ordered set of triples. Duplicates are dropped on construction, first
/// occurrence wins.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    triples: Vec<Triple>,
    pub source_id: Option<u64>,
}

impl KnowledgeGraph {
    pub fn new(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut seen = HashSet::new();
        let triples = triples.into_iter().filter(|t| seen.insert(*t)).collect();
        Self {
            triples,
            source_id: None,
        }
    }

    pub fn with_source(mut self, source_id: u64) -> Self {
        self.source_id = Some(source_id);
        self
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }
}

/// Samples `T_1..T_N`. Sample index `n` (1-based) is the position in the file;
/// the file's `sample_id` is kept as the graph's `source_id`.
#[derive(Clone, Debug, Default)]
pub struct SampleDataset {
    samples: Vec<KnowledgeGraph>,
    pub vocab: Vocabulary,
}

impl SampleDataset {
    pub fn new(samples: Vec<KnowledgeGraph>, vocab: Vocabulary) -> Self {
        Self { samples, vocab }
    }

    pub fn samples(&self) -> &[KnowledgeGraph] {
        &self.samples
    }

    /// Sample by 1-based index.
    pub fn sample(&self, index: u32) -> Option<&KnowledgeGraph> {
        (index as usize)
            .checked_sub(1)
            .and_then(|i| self.samples.get(i))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

type RawTriple = (String, String, String);

#[derive(Serialize, Deserialize)]
struct DatasetLine {
    sample_id: u64,
    triples: Vec<RawTriple>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    triples: Vec<RawTriple>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GraphInput {
    Object(GraphFile),
    Bare(Vec<RawTriple>),
}

pub fn parse_dataset(source: impl BufRead) -> Result<SampleDataset, KgError> {
    parse_dataset_with(source, Vocabulary::default())
}

/// Like [`parse_dataset`] but interning into an existing vocabulary, so ids
/// line up with a graph built elsewhere.
pub fn parse_dataset_with(
    source: impl BufRead,
    mut vocab: Vocabulary,
) -> Result<SampleDataset, KgError> {
    let mut samples = Vec::new();
    let mut seen_ids = HashSet::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DatasetLine = serde_json::from_str(&line).map_err(|e| KgError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen_ids.insert(parsed.sample_id) {
            return Err(KgError::DuplicateSample {
                line: line_no,
                sample_id: parsed.sample_id,
            });
        }
        let triples = parsed
            .triples
            .iter()
            .map(|(h, r, t)| vocab.intern_triple(h, r, t));
        samples.push(KnowledgeGraph::new(triples).with_source(parsed.sample_id));
    }
    Ok(SampleDataset { samples, vocab })
}

pub fn write_dataset(dataset: &SampleDataset, mut out: impl Write) -> Result<(), KgError> {
    for (i, g) in dataset.samples.iter().enumerate() {
        let line = DatasetLine {
            sample_id: g.source_id.unwrap_or(i as u64 + 1),
            triples: raw_triples(g, &dataset.vocab)?,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a knowledge-graph file, interning unseen names into `vocab`.
pub fn parse_graph(source: &[u8], vocab: &mut Vocabulary) -> Result<KnowledgeGraph, KgError> {
    let input: GraphInput = serde_json::from_slice(source).map_err(|e| KgError::Malformed {
        line: e.line(),
        message: e.to_string(),
    })?;
    let raw = match input {
        GraphInput::Object(f) => f.triples,
        GraphInput::Bare(v) => v,
    };
    Ok(KnowledgeGraph::new(
        raw.iter().map(|(h, r, t)| vocab.intern_triple(h, r, t)),
    ))
}

pub fn serialize_graph(g: &KnowledgeGraph, vocab: &Vocabulary) -> Result<Vec<u8>, KgError> {
    let file = GraphFile {
        triples: raw_triples(g, vocab)?,
    };
    let mut bytes = serde_json::to_vec(&file)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn raw_triples(g: &KnowledgeGraph, vocab: &Vocabulary) -> Result<Vec<RawTriple>, KgError> {
    g.triples
        .iter()
        .map(|t| {
            let [h, r, tl] = vocab.resolve_triple(t)?;
            Ok((h.to_owned(), r.to_owned(), tl.to_owned()))
        })
        .collect()
}
