//! Relation-omission codec.
//!
//! The sender drops the relation of a triple whenever the shared probability
//! graph makes that relation the strict argmax of the pair's relation
//! distribution, either unconditionally (round 1) or conditioned on
//! relations already omitted (round 2 and later). The receiver repeats the
//! argmax against the same graph and restores every omitted relation.
//!
//! Round 2 runs in cycles: each cycle scans the still-kept triples in message
//! order against the entries omitted before the cycle began, one condition at
//! a time, and the first condition that makes the triple's relation the
//! strict argmax wins. Cycles repeat until one omits nothing. Round `k > 2`
//! does the same with condition sets of size `k - 1`, enumerated in
//! lexicographic order of omitted-entry indices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph, SampleDataset, Triple, Vocabulary};
use crate::prob_graph::{ProbabilityGraph, Quadruple, SampleSet};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("corrupt message: {0}")]
    CorruptMessage(String),
    #[error("max_rounds must be at least 1")]
    ZeroRounds,
    #[error("cannot measure an omission profile over an empty corpus")]
    EmptyCorpus,
    #[error("invalid omission profile: {0}")]
    InvalidProfile(String),
    #[error("message encoding: {0}")]
    Encoding(String),
}

fn corrupt(msg: impl Into<String>) -> CodecError {
    CodecError::CorruptMessage(msg.into())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeptTriple {
    pub pos: usize,
    pub triple: Triple,
}

/// A triple sent as `(head, tail)` only. `condition_refs` index earlier
/// entries of the omitted list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OmittedEntry {
    pub pos: usize,
    pub head: EntityId,
    pub tail: EntityId,
    pub round: u32,
    pub condition_refs: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CompressedMessage {
    pub total_triples: usize,
    pub kept: Vec<KeptTriple>,
    pub omitted: Vec<OmittedEntry>,
}

impl CompressedMessage {
    /// `E`, the number of triples sent without their relation.
    pub fn omitted_count(&self) -> usize {
        self.omitted.len()
    }

    /// Payload size `R(3M - E)`. Position tags and conditions are not counted.
    pub fn payload_bits(&self, bits_per_symbol: f64) -> f64 {
        crate::cost_model::message_bits(
            self.total_triples as f64,
            self.omitted.len() as f64,
            bits_per_symbol,
        )
    }

    /// Size of the condition stream when each reference is written with
    /// `ceil(log2 E)` bits.
    pub fn condition_bits(&self) -> u64 {
        let e = self.omitted.len() as u64;
        if e < 2 {
            return 0;
        }
        let width = 64 - (e - 1).leading_zeros() as u64;
        let refs: u64 = self
            .omitted
            .iter()
            .map(|o| o.condition_refs.len() as u64)
            .sum();
        refs * width
    }
}

/// Omission counts for one round-1 pass or one cycle of a later round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageStat {
    pub round: u32,
    pub cycle: u32,
    pub entering: usize,
    pub omitted: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CompressionTrace {
    pub stages: Vec<StageStat>,
}

pub fn compress(g: &KnowledgeGraph, pg: &ProbabilityGraph, max_rounds: u32) -> CompressedMessage {
    compress_traced(g, pg, max_rounds).0
}

/// Like [`compress`], also reporting per-stage omission counts.
pub fn compress_traced(
    g: &KnowledgeGraph,
    pg: &ProbabilityGraph,
    max_rounds: u32,
) -> (CompressedMessage, CompressionTrace) {
    let triples = g.triples();
    let m = triples.len();
    let quads: Vec<Option<&Quadruple>> = triples
        .iter()
        .map(|t| {
            pg.quadruple(t.head, t.tail)
                .filter(|q| q.entry(t.relation).is_some())
        })
        .collect();

    let mut is_omitted = vec![false; m];
    let mut omitted: Vec<OmittedEntry> = Vec::new();
    let mut supports: Vec<&SampleSet> = Vec::new();
    let mut stages = Vec::new();

    let mut round1 = 0;
    for (j, t) in triples.iter().enumerate() {
        let Some(q) = quads[j] else { continue };
        if q.strict_argmax_under(None) == Some(t.relation) {
            is_omitted[j] = true;
            omitted.push(OmittedEntry {
                pos: j,
                head: t.head,
                tail: t.tail,
                round: 1,
                condition_refs: Vec::new(),
            });
            supports.extend(pg.support(t));
            round1 += 1;
        }
    }
    stages.push(StageStat {
        round: 1,
        cycle: 1,
        entering: m,
        omitted: round1,
    });

    for round in 2..=max_rounds {
        let dim = (round - 1) as usize;
        let mut cycle = 0;
        loop {
            cycle += 1;
            let available = omitted.len();
            let pending: Vec<usize> = (0..m).filter(|&j| !is_omitted[j]).collect();
            let mut newly = 0;
            if available >= dim {
                for &j in &pending {
                    let Some(q) = quads[j] else { continue };
                    let t = triples[j];
                    if let Some(refs) = first_enabling_conditions(q, t, &supports[..available], dim)
                    {
                        is_omitted[j] = true;
                        omitted.push(OmittedEntry {
                            pos: j,
                            head: t.head,
                            tail: t.tail,
                            round,
                            condition_refs: refs,
                        });
                        supports.extend(pg.support(&t));
                        newly += 1;
                    }
                }
            }
            stages.push(StageStat {
                round,
                cycle,
                entering: pending.len(),
                omitted: newly,
            });
            if newly == 0 {
                break;
            }
        }
    }

    let kept = (0..m)
        .filter(|&j| !is_omitted[j])
        .map(|j| KeptTriple {
            pos: j,
            triple: triples[j],
        })
        .collect();
    (
        CompressedMessage {
            total_triples: m,
            kept,
            omitted,
        },
        CompressionTrace { stages },
    )
}

/// First `dim`-subset of `supports` (lexicographic order) under which the
/// triple's relation is the strict argmax.
fn first_enabling_conditions(
    q: &Quadruple,
    t: Triple,
    supports: &[&SampleSet],
    dim: usize,
) -> Option<Vec<usize>> {
    fn search(
        q: &Quadruple,
        t: Triple,
        supports: &[&SampleSet],
        dim: usize,
        start: usize,
        prefix: &mut Vec<usize>,
        acc: Option<&SampleSet>,
    ) -> bool {
        if prefix.len() == dim {
            return q.strict_argmax_under(acc) == Some(t.relation);
        }
        let remaining = dim - prefix.len();
        for i in start..=supports.len() - remaining {
            let next = match acc {
                None => supports[i].clone(),
                Some(a) => a.intersect(supports[i]),
            };
            // Nothing left of the pair: every extension is undefined.
            if q.union().intersection_len(&next) == 0 {
                continue;
            }
            prefix.push(i);
            if search(q, t, supports, dim, i + 1, prefix, Some(&next)) {
                return true;
            }
            prefix.pop();
        }
        false
    }
    let mut prefix = Vec::with_capacity(dim);
    search(q, t, supports, dim, 0, &mut prefix, None).then_some(prefix)
}

pub fn decompress(
    msg: &CompressedMessage,
    pg: &ProbabilityGraph,
) -> Result<KnowledgeGraph, CodecError> {
    let m = msg.total_triples;
    if msg.kept.len() + msg.omitted.len() != m {
        return Err(corrupt(format!(
            "{} kept + {} omitted != {} total",
            msg.kept.len(),
            msg.omitted.len(),
            m
        )));
    }
    let mut slots: Vec<Option<Triple>> = vec![None; m];
    let mut place = |pos: usize, t: Triple| -> Result<(), CodecError> {
        match slots.get_mut(pos) {
            Some(slot @ None) => {
                *slot = Some(t);
                Ok(())
            }
            Some(Some(_)) => Err(corrupt(format!("position {pos} used twice"))),
            None => Err(corrupt(format!("position {pos} out of range"))),
        }
    };
    for k in &msg.kept {
        place(k.pos, k.triple)?;
    }

    let mut restored: Vec<Triple> = Vec::with_capacity(msg.omitted.len());
    for (i, e) in msg.omitted.iter().enumerate() {
        check_refs(i, e)?;
        let q = pg
            .quadruple(e.head, e.tail)
            .ok_or_else(|| corrupt(format!("entry {i}: pair not in knowledge base")))?;
        let mut cond: Option<SampleSet> = None;
        for &r in &e.condition_refs {
            let s = pg.support(&restored[r]).ok_or_else(|| {
                corrupt(format!("entry {i}: condition {r} not in knowledge base"))
            })?;
            cond = Some(match cond {
                None => s.clone(),
                Some(c) => c.intersect(s),
            });
        }
        let relation = q
            .strict_argmax_under(cond.as_ref())
            .ok_or_else(|| corrupt(format!("entry {i}: no strict argmax relation")))?;
        let t = Triple::new(e.head, relation, e.tail);
        place(e.pos, t)?;
        restored.push(t);
    }

    let triples: Vec<Triple> = slots
        .into_iter()
        .map(|s| s.expect("all slots filled"))
        .collect();
    let g = KnowledgeGraph::new(triples);
    if g.len() != m {
        return Err(corrupt("restored graph repeats a triple"));
    }
    Ok(g)
}

fn check_refs(i: usize, e: &OmittedEntry) -> Result<(), CodecError> {
    if e.round == 0 {
        return Err(corrupt(format!("entry {i}: round 0")));
    }
    if e.condition_refs.len() != (e.round - 1) as usize {
        return Err(corrupt(format!(
            "entry {i}: round {} needs {} conditions, got {}",
            e.round,
            e.round - 1,
            e.condition_refs.len()
        )));
    }
    if !e.condition_refs.windows(2).all(|w| w[0] < w[1]) {
        return Err(corrupt(format!("entry {i}: conditions not increasing")));
    }
    if e.condition_refs.last().is_some_and(|&r| r >= i) {
        return Err(corrupt(format!("entry {i}: condition refers forward")));
    }
    Ok(())
}

/// Per-stage omission ratios `q_1..q_N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmissionProfile {
    ratios: Vec<f64>,
}

impl OmissionProfile {
    pub fn new(ratios: Vec<f64>) -> Result<Self, CodecError> {
        if ratios.is_empty() {
            return Err(CodecError::InvalidProfile("no ratios".into()));
        }
        if let Some(bad) = ratios.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(CodecError::InvalidProfile(format!(
                "ratio {bad} outside [0, 1]"
            )));
        }
        Ok(Self { ratios })
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    /// Profile keeping only the round-1 ratio.
    pub fn first_round(&self) -> Self {
        Self {
            ratios: vec![self.ratios[0]],
        }
    }
}

/// Compresses every corpus graph and aggregates stage ratios: `q_1` is
/// round-1 omissions over all triples, `q_n` (n ≥ 2) is omissions in cycle
/// `n - 1` of round 2 over triples still kept entering that cycle. Graphs
/// whose round 2 stopped earlier contribute their remaining triples with no
/// omissions. Only rounds 1 and 2 are profiled.
pub fn measure_omission_profile(
    corpus: &SampleDataset,
    pg: &ProbabilityGraph,
    max_rounds: u32,
) -> Result<OmissionProfile, CodecError> {
    if max_rounds == 0 {
        return Err(CodecError::ZeroRounds);
    }
    if corpus.is_empty() {
        return Err(CodecError::EmptyCorpus);
    }
    let rounds = max_rounds.min(2);
    let mut total = 0usize;
    let mut first = 0usize;
    let mut cycles: Vec<Vec<(usize, usize)>> = Vec::with_capacity(corpus.len());
    for g in corpus.samples() {
        let (_, trace) = compress_traced(g, pg, rounds);
        total += g.len();
        let mut per_graph = Vec::new();
        for s in &trace.stages {
            match s.round {
                1 => first += s.omitted,
                _ => per_graph.push((s.entering, s.omitted)),
            }
        }
        cycles.push(per_graph);
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let mut ratios = vec![ratio(first, total)];
    let depth = cycles.iter().map(Vec::len).max().unwrap_or(0);
    for c in 0..depth {
        let (mut entering, mut omitted) = (0, 0);
        for per_graph in &cycles {
            match per_graph.get(c) {
                Some(&(e, o)) => {
                    entering += e;
                    omitted += o;
                }
                None => {
                    if let Some(&(e, o)) = per_graph.last() {
                        entering += e - o;
                    }
                }
            }
        }
        ratios.push(ratio(omitted, entering));
    }
    OmissionProfile::new(ratios)
}

#[derive(Serialize, Deserialize)]
struct MessageFile {
    total_triples: usize,
    kept: Vec<(usize, String, String, String)>,
    omitted: Vec<OmittedFileEntry>,
}

#[derive(Serialize, Deserialize)]
struct OmittedFileEntry {
    pos: usize,
    head: String,
    tail: String,
    round: u32,
    conditions: Vec<usize>,
}

pub fn write_message(msg: &CompressedMessage, vocab: &Vocabulary) -> Result<Vec<u8>, CodecError> {
    let enc = |e: crate::kg::KgError| CodecError::Encoding(e.to_string());
    let kept = msg
        .kept
        .iter()
        .map(|k| {
            let [h, r, t] = vocab.resolve_triple(&k.triple).map_err(enc)?;
            Ok((k.pos, h.to_owned(), r.to_owned(), t.to_owned()))
        })
        .collect::<Result<_, CodecError>>()?;
    let omitted = msg
        .omitted
        .iter()
        .map(|o| {
            Ok(OmittedFileEntry {
                pos: o.pos,
                head: vocab.entities.resolve(o.head).map_err(enc)?.to_owned(),
                tail: vocab.entities.resolve(o.tail).map_err(enc)?.to_owned(),
                round: o.round,
                conditions: o.condition_refs.clone(),
            })
        })
        .collect::<Result<_, CodecError>>()?;
    let file = MessageFile {
        total_triples: msg.total_triples,
        kept,
        omitted,
    };
    let mut bytes = serde_json::to_vec(&file).map_err(|e| CodecError::Encoding(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Reads a message file, interning names into `vocab` (normally a clone of
/// the probability graph's vocabulary).
pub fn read_message(bytes: &[u8], vocab: &mut Vocabulary) -> Result<CompressedMessage, CodecError> {
    let file: MessageFile =
        serde_json::from_slice(bytes).map_err(|e| CodecError::Encoding(e.to_string()))?;
    let kept = file
        .kept
        .iter()
        .map(|(pos, h, r, t)| KeptTriple {
            pos: *pos,
            triple: vocab.intern_triple(h, r, t),
        })
        .collect();
    let omitted = file
        .omitted
        .into_iter()
        .map(|o| OmittedEntry {
            pos: o.pos,
            head: vocab.entities.intern(&o.head),
            tail: vocab.entities.intern(&o.tail),
            round: o.round,
            condition_refs: o.conditions,
        })
        .collect();
    Ok(CompressedMessage {
        total_triples: file.total_triples,
        kept,
        omitted,
    })
}
