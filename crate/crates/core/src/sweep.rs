//! One-parameter sweeps over the optimizer and its baselines, written as CSV.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{measure_omission_profile, CodecError, OmissionProfile};
use crate::cost_model::SystemParams;
use crate::kg::{parse_dataset, KgError};
use crate::optimizer::{self, Mode, OptimizeError, Solution};
use crate::prob_graph::build_probability_graph;

pub const CSV_HEADER: [&str; 10] = [
    "axis",
    "method",
    "total_energy_j",
    "comm_energy_j",
    "comp_energy_j",
    "power_w",
    "omitted_E",
    "comm_latency_s",
    "comp_latency_s",
    "feasible",
];

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    Invalid(String),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    TotalTriples,
    BandwidthHz,
    LatencyLimitS,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Jccpg,
    Simplified,
    Traditional,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Jccpg => "jccpg",
            Method::Simplified => "simplified",
            Method::Traditional => "traditional",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProfileSource {
    Ratios(OmissionProfile),
    /// Sample dataset whose own probability graph gives the profile.
    Corpus(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub methods: Vec<Method>,
    pub params: SystemParams,
    pub profile: ProfileSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis: f64,
    pub method: Method,
    /// `None` when no power/omission pair satisfies the constraints.
    pub solution: Option<Solution>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: &str| Err(SweepError::Invalid(m.into()));
        if self.values.is_empty() {
            return bad("no axis values");
        }
        if self
            .values
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return bad("axis values must be strictly increasing");
        }
        if self.methods.is_empty() {
            return bad("no methods");
        }
        if self.axis == Axis::TotalTriples
            && self
                .values
                .iter()
                .any(|v| *v < 0.0 || v.fract() != 0.0 || *v > u32::MAX as f64)
        {
            return bad("total_triples values must be non-negative integers");
        }
        Ok(())
    }

    fn params_at(&self, value: f64) -> SystemParams {
        let mut p = self.params.clone();
        match self.axis {
            Axis::TotalTriples => p.total_triples = value as u64,
            Axis::BandwidthHz => p.bandwidth_hz = value,
            Axis::LatencyLimitS => p.latency_limit_s = value,
        }
        p
    }
}

pub fn resolve_profile(source: &ProfileSource) -> Result<OmissionProfile, SweepError> {
    match source {
        ProfileSource::Ratios(q) => Ok(q.clone()),
        ProfileSource::Corpus(path) => {
            let file = std::fs::File::open(path)?;
            let ds = parse_dataset(std::io::BufReader::new(file))?;
            let pg = build_probability_graph(&ds);
            Ok(measure_omission_profile(&ds, &pg, 2)?)
        }
    }
}

/// Rows ordered by axis value, then by method in the order
/// jccpg, simplified, traditional.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, SweepError> {
    spec.validate()?;
    let q = resolve_profile(&spec.profile)?;
    let mut methods = spec.methods.clone();
    methods.sort();
    methods.dedup();
    let points: Vec<(f64, Method)> = spec
        .values
        .iter()
        .flat_map(|&v| methods.iter().map(move |&m| (v, m)))
        .collect();
    points
        .par_iter()
        .map(|&(value, method)| {
            let params = spec.params_at(value);
            let result = match method {
                Method::Jccpg => optimizer::optimize(&params, &q, Mode::Strict),
                Method::Simplified => optimizer::baseline_simplified(&params, &q, Mode::Strict),
                Method::Traditional => optimizer::baseline_traditional(&params),
            };
            let solution = match result {
                Ok(s) => Some(s),
                Err(OptimizeError::Infeasible) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(SweepRow {
                axis: value,
                method,
                solution,
            })
        })
        .collect()
}

pub fn write_csv(rows: &[SweepRow], out: impl Write) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        let axis = row.axis.to_string();
        let method = row.method.name();
        match &row.solution {
            Some(s) => w.write_record([
                axis,
                method.to_string(),
                s.total_energy_j.to_string(),
                s.comm_energy_j.to_string(),
                s.comp_energy_j.to_string(),
                s.power_w.to_string(),
                s.omitted.to_string(),
                s.comm_latency_s.to_string(),
                s.comp_latency_s.to_string(),
                s.feasible.to_string(),
            ])?,
            None => {
                let mut rec = vec![axis, method.to_string()];
                rec.extend(std::iter::repeat_n(String::new(), 7));
                rec.push("false".into());
                w.write_record(rec)?
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Built-in sweeps over the three axes with default parameters and
/// `q = (0.5, 0.5)`. Names: `fig6` (M), `fig7` (B), `fig8` (T).
pub fn preset(name: &str) -> Option<SweepSpec> {
    let (axis, values) = match name {
        "fig6" => (
            Axis::TotalTriples,
            (1..=6).map(|k| 50.0 * k as f64).collect(),
        ),
        "fig7" => (
            Axis::BandwidthHz,
            (1..=10).map(|k| 2e6 * k as f64).collect(),
        ),
        "fig8" => (
            Axis::LatencyLimitS,
            vec![
                1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 0.1, 0.2, 0.5, 1.0,
            ],
        ),
        _ => return None,
    };
    Some(SweepSpec {
        axis,
        values,
        methods: vec![Method::Jccpg, Method::Simplified, Method::Traditional],
        params: SystemParams::default(),
        profile: ProfileSource::Ratios(OmissionProfile::new(vec![0.5, 0.5]).expect("valid")),
    })
}

pub const PRESETS: [&str; 3] = ["fig6", "fig7", "fig8"];
