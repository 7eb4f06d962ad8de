//! Synthetic sample corpora with controllable omission ratios.
//!
//! Samples come in blocks of `I = relations_per_pair` consecutive samples,
//! one per topic `0..I`. All samples of a block carry the same `(head, tail)`
//! pairs. Each pair is either *settled* (always the same relation) or
//! *unsettled* (relation given by a fixed per-pair permutation of the topic),
//! so an unsettled pair sees every relation equally often and round 1 can
//! never single one out. Whether a pair is settled is decided by a fixed
//! per-pair draw `u < skew`, which makes round-1 omissions monotone in
//! `skew`.
//!
//! A block is *marked* with probability `coherence`: each of its samples then
//! also carries a topic marker `(topic{z}, marks, anchor)`. Markers are
//! always omitted in round 1 and their support pins the topic, which lets
//! round 2 omit every unsettled triple of that sample. The round-2 ratio is
//! therefore close to `coherence`.
//!
//! When `num_samples` is not a multiple of `I`, the last block is partial and
//! the exact ties between unsettled relations no longer hold everywhere.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{measure_omission_profile, CodecError, OmissionProfile};
use crate::kg::{KnowledgeGraph, SampleDataset, Vocabulary};
use crate::prob_graph::build_probability_graph;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("generator config: {0}")]
    Config(String),
    #[error("calibration did not reach q = {target:?} (got {reached:?})")]
    Calibration { target: Vec<f64>, reached: Vec<f64> },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub num_samples: u32,
    pub num_pairs: u32,
    pub relations_per_pair: u32,
    /// Share of pairs tied to a single dominant relation, in `[0, 1)`.
    pub skew: f64,
    pub triples_per_sample: u32,
    pub seed: u64,
    /// Share of blocks carrying topic markers, in `[0, 1]`.
    #[serde(default)]
    pub coherence: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_samples: 32,
            num_pairs: 400,
            relations_per_pair: 4,
            skew: 0.5,
            triples_per_sample: 100,
            seed: 1,
            coherence: 0.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::Config(m));
        if self.num_samples == 0 {
            return bad("num_samples must be positive".into());
        }
        if self.relations_per_pair == 0 {
            return bad("relations_per_pair must be positive".into());
        }
        if self.triples_per_sample > self.num_pairs {
            return bad(format!(
                "triples_per_sample {} exceeds num_pairs {}",
                self.triples_per_sample, self.num_pairs
            ));
        }
        if !(0.0..1.0).contains(&self.skew) {
            return bad(format!("skew {} outside [0, 1)", self.skew));
        }
        if !(0.0..=1.0).contains(&self.coherence) {
            return bad(format!("coherence {} outside [0, 1]", self.coherence));
        }
        Ok(())
    }
}

const PAIR_STREAM: u64 = 0;
const BLOCK_STREAM_BASE: u64 = 1;

struct PairPlan {
    settled: bool,
    dominant: u32,
    by_topic: Vec<u32>,
}

fn plan_pairs(cfg: &GeneratorConfig) -> Vec<PairPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(PAIR_STREAM);
    let i = cfg.relations_per_pair;
    (0..cfg.num_pairs)
        .map(|_| {
            let u: f64 = rng.gen();
            let dominant = rng.gen_range(0..i);
            let mut by_topic: Vec<u32> = (0..i).collect();
            by_topic.shuffle(&mut rng);
            PairPlan {
                settled: u < cfg.skew,
                dominant,
                by_topic,
            }
        })
        .collect()
}

pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<SampleDataset, GenError> {
    cfg.validate()?;
    let plans = plan_pairs(cfg);
    let i = cfg.relations_per_pair;
    let m = cfg.triples_per_sample as usize;
    let mut vocab = Vocabulary::default();
    let mut samples = Vec::with_capacity(cfg.num_samples as usize);
    let blocks = cfg.num_samples.div_ceil(i);
    for b in 0..blocks {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(BLOCK_STREAM_BASE + b as u64);
        let marked = rng.gen::<f64>() < cfg.coherence && m > 0;
        let mut pairs = index::sample(&mut rng, cfg.num_pairs as usize, m).into_vec();
        if marked {
            pairs.pop();
        }
        let first = b * i;
        for topic in 0..i.min(cfg.num_samples - first) {
            let mut triples = Vec::with_capacity(m);
            for &p in &pairs {
                let plan = &plans[p];
                let r = if plan.settled {
                    plan.dominant
                } else {
                    plan.by_topic[topic as usize]
                };
                triples.push((format!("h{p}"), format!("r{r}"), format!("t{p}")));
            }
            if marked {
                triples.push((format!("topic{topic}"), "marks".into(), "anchor".into()));
            }
            triples.shuffle(&mut rng);
            let ids = triples.iter().map(|(h, r, t)| vocab.intern_triple(h, r, t));
            let sample_id = u64::from(first + topic) + 1;
            samples.push(KnowledgeGraph::new(ids.collect::<Vec<_>>()).with_source(sample_id));
        }
    }
    Ok(SampleDataset::new(samples, vocab))
}

/// Rounds-1-and-2 profile of a generated corpus against its own probability
/// graph.
pub fn measure_generated(cfg: &GeneratorConfig) -> Result<OmissionProfile, GenError> {
    let ds = generate_corpus(cfg)?;
    let pg = build_probability_graph(&ds);
    Ok(measure_omission_profile(&ds, &pg, 2)?)
}

/// Adjusts `skew` and `coherence` until the measured `(q1, q2)` is within
/// `tol` of `target`. Alternates a bisection on `coherence` (drives `q2`)
/// with one on `skew` (drives `q1`).
pub fn calibrate(
    base: &GeneratorConfig,
    target: [f64; 2],
    tol: f64,
) -> Result<(GeneratorConfig, OmissionProfile), GenError> {
    let mut cfg = base.clone();
    let q_at = |c: &GeneratorConfig| -> Result<[f64; 2], GenError> {
        let prof = measure_generated(c)?;
        let r = prof.ratios();
        Ok([r[0], r.get(1).copied().unwrap_or(0.0)])
    };
    let mut reached = q_at(&cfg)?;
    let close = |q: [f64; 2]| (q[0] - target[0]).abs() <= tol && (q[1] - target[1]).abs() <= tol;
    for _ in 0..8 {
        if close(reached) {
            break;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..20 {
            cfg.coherence = 0.5 * (lo + hi);
            reached = q_at(&cfg)?;
            if (reached[1] - target[1]).abs() <= tol / 2.0 {
                break;
            }
            if reached[1] < target[1] {
                lo = cfg.coherence
            } else {
                hi = cfg.coherence
            }
        }
        let (mut lo, mut hi) = (0.0, 1.0 - 1e-9);
        for _ in 0..20 {
            cfg.skew = 0.5 * (lo + hi);
            reached = q_at(&cfg)?;
            if (reached[0] - target[0]).abs() <= tol / 2.0 {
                break;
            }
            if reached[0] < target[0] {
                lo = cfg.skew
            } else {
                hi = cfg.skew
            }
        }
    }
    let prof = measure_generated(&cfg)?;
    let r = prof.ratios();
    let got = [r[0], r.get(1).copied().unwrap_or(0.0)];
    if close(got) {
        Ok((cfg, prof))
    } else {
        Err(GenError::Calibration {
            target: target.to_vec(),
            reached: got.to_vec(),
        })
    }
}
