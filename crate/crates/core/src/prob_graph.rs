//! The shared probability graph.
//!
//! Every `(head, tail)` pair seen in the sample dataset becomes a
//! [`Quadruple`] listing the relations observed between the two entities,
//! each with the set of samples in which that triple holds. Probabilities are
//! ratios of set cardinalities and are compared exactly by
//! cross-multiplication, never through floating point.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, RelationId, SampleDataset, Triple, Vocabulary};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PgError {
    #[error("not in knowledge base: {0}")]
    NotInKnowledgeBase(String),
    #[error("undefined conditional: conditions exclude every sample of the pair")]
    UndefinedConditional,
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
}

/// A set of 1-based sample indices.
///
/// Kept both as a sorted id list and as a bitset; set algebra runs on the
/// bitset words.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SampleSet {
    ids: Vec<u32>,
    words: Vec<u64>,
}

impl SampleSet {
    pub fn from_ids(ids: impl IntoIterator<Item = u32>) -> Self {
        let mut ids: Vec<u32> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let mut words = vec![0u64; ids.last().map_or(0, |&m| m as usize / 64 + 1)];
        for &id in &ids {
            words[id as usize / 64] |= 1 << (id % 64);
        }
        Self { ids, words }
    }

    fn from_words(mut words: Vec<u64>) -> Self {
        while words.last() == Some(&0) {
            words.pop();
        }
        let mut ids = Vec::new();
        for (w, &word) in words.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let b = bits.trailing_zeros();
                ids.push(w as u32 * 64 + b);
                bits &= bits - 1;
            }
        }
        Self { ids, words }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> u64 {
        self.ids.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.words
            .get(id as usize / 64)
            .is_some_and(|w| w & (1 << (id % 64)) != 0)
    }

    pub fn intersect(&self, other: &SampleSet) -> SampleSet {
        Self::from_words(
            self.words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & b)
                .collect(),
        )
    }

    pub fn union(&self, other: &SampleSet) -> SampleSet {
        let (long, short) = if self.words.len() >= other.words.len() {
            (self, other)
        } else {
            (other, self)
        };
        let mut words = long.words.clone();
        for (w, s) in words.iter_mut().zip(&short.words) {
            *w |= s;
        }
        Self::from_words(words)
    }

    /// `|self ∩ other|` without materializing the intersection.
    pub fn intersection_len(&self, other: &SampleSet) -> u64 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum()
    }
}

/// An exact probability `hits / total` with `total > 0`.
#[derive(Clone, Copy, Debug)]
pub struct Probability {
    pub hits: u64,
    pub total: u64,
}

impl Probability {
    pub fn new(hits: u64, total: u64) -> Option<Self> {
        (total > 0 && hits <= total).then_some(Self { hits, total })
    }

    pub fn value(&self) -> f64 {
        self.hits as f64 / self.total as f64
    }
}

impl PartialEq for Probability {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Probability {}

impl PartialOrd for Probability {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Probability {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = self.hits as u128 * other.total as u128;
        let rhs = other.hits as u128 * self.total as u128;
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.hits, self.total)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationEntry {
    pub relation: RelationId,
    pub support: SampleSet,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quadruple {
    pub head: EntityId,
    pub tail: EntityId,
    relations: Vec<RelationEntry>,
    union: SampleSet,
    support_total: u64,
}

impl Quadruple {
    fn new(head: EntityId, tail: EntityId, mut relations: Vec<RelationEntry>) -> Self {
        relations.sort_by_key(|e| e.relation);
        let union = relations
            .iter()
            .fold(SampleSet::default(), |acc, e| acc.union(&e.support));
        let support_total = relations.iter().map(|e| e.support.len()).sum();
        Self {
            head,
            tail,
            relations,
            union,
            support_total,
        }
    }

    pub fn relations(&self) -> &[RelationEntry] {
        &self.relations
    }

    pub fn entry(&self, relation: RelationId) -> Option<&RelationEntry> {
        self.relations
            .binary_search_by_key(&relation, |e| e.relation)
            .ok()
            .map(|i| &self.relations[i])
    }

    /// Samples in which any relation between the pair holds.
    pub fn union(&self) -> &SampleSet {
        &self.union
    }

    fn probability_under(
        &self,
        entry: &RelationEntry,
        condition: Option<&SampleSet>,
    ) -> Option<Probability> {
        match condition {
            None => Probability::new(entry.support.len(), self.support_total),
            Some(c) => Probability::new(
                entry.support.intersection_len(c),
                self.union.intersection_len(c),
            ),
        }
    }

    /// Relation distribution given the intersection of the condition supports
    /// (`None` means no conditions). `None` probabilities are undefined.
    pub fn distribution_under(
        &self,
        condition: Option<&SampleSet>,
    ) -> Vec<(RelationId, Option<Probability>)> {
        self.relations
            .iter()
            .map(|e| (e.relation, self.probability_under(e, condition)))
            .collect()
    }

    /// The relation whose probability strictly exceeds every other defined
    /// entry, if there is one.
    pub fn strict_argmax_under(&self, condition: Option<&SampleSet>) -> Option<RelationId> {
        let mut best: Option<(RelationId, Probability)> = None;
        let mut tied = false;
        for e in &self.relations {
            let Some(p) = self.probability_under(e, condition) else {
                continue;
            };
            match best {
                None => best = Some((e.relation, p)),
                Some((_, bp)) => match p.cmp(&bp) {
                    Ordering::Greater => {
                        best = Some((e.relation, p));
                        tied = false;
                    }
                    Ordering::Equal => tied = true,
                    Ordering::Less => {}
                },
            }
        }
        if tied {
            None
        } else {
            best.map(|(r, _)| r)
        }
    }
}

/// Triples known to hold, used as conditions of a query.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConditionSet {
    conditions: Vec<Triple>,
}

impl ConditionSet {
    pub fn new(conditions: impl IntoIterator<Item = Triple>) -> Self {
        let mut conditions: Vec<Triple> = conditions.into_iter().collect();
        conditions.sort_unstable();
        conditions.dedup();
        Self { conditions }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triple> {
        self.conditions.iter()
    }
}

#[derive(Clone, Debug)]
pub struct ProbabilityGraph {
    pub vocab: Vocabulary,
    sample_count: u32,
    quadruples: Vec<Quadruple>,
    index: HashMap<(EntityId, EntityId), usize>,
}

type PendingQuadruple = ((EntityId, EntityId), Vec<(RelationId, Vec<u32>)>);

/// Aggregates every sample's triples into quadruples. Quadruples appear in
/// first-seen order of their `(head, tail)` pair.
pub fn build_probability_graph(dataset: &SampleDataset) -> ProbabilityGraph {
    let mut index: HashMap<(EntityId, EntityId), usize> = HashMap::new();
    let mut pending: Vec<PendingQuadruple> = Vec::new();
    for (pos, g) in dataset.samples().iter().enumerate() {
        let sample = pos as u32 + 1;
        for t in g.triples() {
            let slot = *index.entry(t.pair()).or_insert_with(|| {
                pending.push((t.pair(), Vec::new()));
                pending.len() - 1
            });
            let rels = &mut pending[slot].1;
            match rels.iter_mut().find(|(r, _)| *r == t.relation) {
                Some((_, ids)) => ids.push(sample),
                None => rels.push((t.relation, vec![sample])),
            }
        }
    }
    let quadruples = pending
        .into_iter()
        .map(|((h, t), rels)| {
            let entries = rels
                .into_iter()
                .map(|(relation, ids)| RelationEntry {
                    relation,
                    support: SampleSet::from_ids(ids),
                })
                .collect();
            Quadruple::new(h, t, entries)
        })
        .collect();
    ProbabilityGraph {
        vocab: dataset.vocab.clone(),
        sample_count: dataset.len() as u32,
        quadruples,
        index,
    }
}

impl ProbabilityGraph {
    pub fn sample_count(&self) -> u32 {
        self.sample_count
    }

    pub fn quadruples(&self) -> &[Quadruple] {
        &self.quadruples
    }

    pub fn quadruple(&self, head: EntityId, tail: EntityId) -> Option<&Quadruple> {
        self.index.get(&(head, tail)).map(|&i| &self.quadruples[i])
    }

    /// Support of a triple, if the triple occurs in the knowledge base.
    pub fn support(&self, t: &Triple) -> Option<&SampleSet> {
        self.quadruple(t.head, t.tail)
            .and_then(|q| q.entry(t.relation))
            .map(|e| &e.support)
    }

    fn describe(&self, t: &Triple) -> String {
        match self.vocab.resolve_triple(t) {
            Ok([h, r, tl]) => format!("({h}, {r}, {tl})"),
            Err(_) => format!("({}, {}, {})", t.head, t.relation, t.tail),
        }
    }

    fn require_quadruple(&self, head: EntityId, tail: EntityId) -> Result<&Quadruple, PgError> {
        self.quadruple(head, tail).ok_or_else(|| {
            let name = |e| self.vocab.entities.resolve(e).map(str::to_owned);
            PgError::NotInKnowledgeBase(format!(
                "pair ({}, {})",
                name(head).unwrap_or_else(|_| head.to_string()),
                name(tail).unwrap_or_else(|_| tail.to_string())
            ))
        })
    }

    fn require_support(&self, t: &Triple) -> Result<&SampleSet, PgError> {
        self.support(t)
            .ok_or_else(|| PgError::NotInKnowledgeBase(self.describe(t)))
    }

    /// Intersection of every condition's support; `None` for no conditions.
    pub fn condition_support(&self, cond: &ConditionSet) -> Result<Option<SampleSet>, PgError> {
        let mut acc: Option<SampleSet> = None;
        for c in cond.iter() {
            let s = self.require_support(c)?;
            acc = Some(match acc {
                None => s.clone(),
                Some(a) => a.intersect(s),
            });
        }
        Ok(acc)
    }

    pub fn marginal_probability(
        &self,
        head: EntityId,
        relation: RelationId,
        tail: EntityId,
    ) -> Result<Probability, PgError> {
        self.conditional_probability(&Triple::new(head, relation, tail), &ConditionSet::empty())
    }

    /// Probability of `target` given that every triple of `cond` holds. With
    /// no conditions this is the marginal (count over summed counts).
    pub fn conditional_probability(
        &self,
        target: &Triple,
        cond: &ConditionSet,
    ) -> Result<Probability, PgError> {
        let quad = self.require_quadruple(target.head, target.tail)?;
        let entry = quad
            .entry(target.relation)
            .ok_or_else(|| PgError::NotInKnowledgeBase(self.describe(target)))?;
        let condition = self.condition_support(cond)?;
        quad.probability_under(entry, condition.as_ref())
            .ok_or(PgError::UndefinedConditional)
    }

    pub fn relation_distribution(
        &self,
        head: EntityId,
        tail: EntityId,
        cond: &ConditionSet,
    ) -> Result<Vec<(RelationId, Option<Probability>)>, PgError> {
        let quad = self.require_quadruple(head, tail)?;
        let condition = self.condition_support(cond)?;
        Ok(quad.distribution_under(condition.as_ref()))
    }

    pub fn strict_argmax_relation(
        &self,
        head: EntityId,
        tail: EntityId,
        cond: &ConditionSet,
    ) -> Result<Option<RelationId>, PgError> {
        let quad = self.require_quadruple(head, tail)?;
        let condition = self.condition_support(cond)?;
        Ok(quad.strict_argmax_under(condition.as_ref()))
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    sample_count: u32,
    quadruples: Vec<SnapshotQuadruple>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotQuadruple {
    head: String,
    tail: String,
    relations: Vec<SnapshotRelation>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotRelation {
    relation: String,
    support: Vec<u32>,
}

pub fn save_snapshot(pg: &ProbabilityGraph) -> Result<Vec<u8>, PgError> {
    let invalid = |e: crate::kg::KgError| PgError::InvalidSnapshot(e.to_string());
    let quadruples = pg
        .quadruples
        .iter()
        .map(|q| {
            Ok(SnapshotQuadruple {
                head: pg
                    .vocab
                    .entities
                    .resolve(q.head)
                    .map_err(invalid)?
                    .to_owned(),
                tail: pg
                    .vocab
                    .entities
                    .resolve(q.tail)
                    .map_err(invalid)?
                    .to_owned(),
                relations: q
                    .relations
                    .iter()
                    .map(|e| {
                        Ok(SnapshotRelation {
                            relation: pg
                                .vocab
                                .relations
                                .resolve(e.relation)
                                .map_err(invalid)?
                                .to_owned(),
                            support: e.support.ids().to_vec(),
                        })
                    })
                    .collect::<Result<_, PgError>>()?,
            })
        })
        .collect::<Result<_, PgError>>()?;
    let file = SnapshotFile {
        sample_count: pg.sample_count,
        quadruples,
    };
    let mut bytes =
        serde_json::to_vec(&file).map_err(|e| PgError::InvalidSnapshot(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn load_snapshot(bytes: &[u8]) -> Result<ProbabilityGraph, PgError> {
    let file: SnapshotFile =
        serde_json::from_slice(bytes).map_err(|e| PgError::InvalidSnapshot(e.to_string()))?;
    let n = file.sample_count;
    let mut vocab = Vocabulary::default();
    let mut index = HashMap::new();
    let mut quadruples = Vec::with_capacity(file.quadruples.len());
    for q in file.quadruples {
        let head = vocab.entities.intern(&q.head);
        let tail = vocab.entities.intern(&q.tail);
        if q.relations.is_empty() {
            return Err(PgError::InvalidSnapshot(format!(
                "pair ({}, {}) has no relations",
                q.head, q.tail
            )));
        }
        let mut entries = Vec::with_capacity(q.relations.len());
        for r in q.relations {
            let relation = vocab.relations.intern(&r.relation);
            if r.support.is_empty() || r.support.iter().any(|&s| s == 0 || s > n) {
                return Err(PgError::InvalidSnapshot(format!(
                    "support of ({}, {}, {}) must be a non-empty subset of 1..={n}",
                    q.head, r.relation, q.tail
                )));
            }
            if entries
                .iter()
                .any(|e: &RelationEntry| e.relation == relation)
            {
                return Err(PgError::InvalidSnapshot(format!(
                    "relation {} repeated in pair ({}, {})",
                    r.relation, q.head, q.tail
                )));
            }
            entries.push(RelationEntry {
                relation,
                support: SampleSet::from_ids(r.support),
            });
        }
        if index.insert((head, tail), quadruples.len()).is_some() {
            return Err(PgError::InvalidSnapshot(format!(
                "pair ({}, {}) listed twice",
                q.head, q.tail
            )));
        }
        quadruples.push(Quadruple::new(head, tail, entries));
    }
    Ok(ProbabilityGraph {
        vocab,
        sample_count: n,
        quadruples,
        index,
    })
}
