//! Size, latency and energy model of one compressed transmission.
//!
//! With `M` triples of which `E` travel without their relation:
//!
//! - payload `R(3M - E)` bits, sent at `B log2(1 + p h / σ²)` bits/s;
//! - communication latency `t1 = R(3M - E) / rate`, energy `e1 = t1 p`;
//! - computation load `l(E)` comparisons, latency `t2 = τ1 l(E) / f`,
//!   energy `e2 = τ1 τ2 l(E) f²`.
//!
//! `l(E)` is piecewise linear over the stage capacities `E_1..E_N` derived
//! from an [`OmissionProfile`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::OmissionProfile;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("insufficient omission capacity: E = {requested} exceeds {capacity}")]
    InsufficientCapacity { requested: f64, capacity: f64 },
    #[error("zero rate: transmit power is zero but the payload is not empty")]
    ZeroRate,
    #[error("config: {0}")]
    Config(String),
}

/// Channel, compute and latency parameters. All SI units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub bandwidth_hz: f64,
    pub max_power_w: f64,
    pub channel_gain: f64,
    pub noise_power_w: f64,
    pub latency_limit_s: f64,
    pub cpu_hz: f64,
    /// Cycles per comparison.
    pub tau1: f64,
    /// Effective switched-capacitance coefficient.
    pub tau2: f64,
    pub bits_per_symbol: f64,
    pub total_triples: u64,
}

impl Default for SystemParams {
    /// 10 MHz, 30 dBm, h = 1e-9, M = 100, T = 1 ms, f = 1 GHz; σ² = 1e-13 W,
    /// R = 32, τ1 = 1 and τ2 = 1e-28 are design defaults.
    fn default() -> Self {
        Self {
            bandwidth_hz: 10e6,
            max_power_w: 1.0,
            channel_gain: 1e-9,
            noise_power_w: 1e-13,
            latency_limit_s: 1e-3,
            cpu_hz: 1e9,
            tau1: 1.0,
            tau2: 1e-28,
            bits_per_symbol: 32.0,
            total_triples: 100,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<(), CostError> {
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("max_power_w", self.max_power_w),
            ("channel_gain", self.channel_gain),
            ("noise_power_w", self.noise_power_w),
            ("latency_limit_s", self.latency_limit_s),
            ("cpu_hz", self.cpu_hz),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("bits_per_symbol", self.bits_per_symbol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CostError::InvalidParams(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// `h / σ²`.
    pub fn gain_to_noise(&self) -> f64 {
        self.channel_gain / self.noise_power_w
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Per-stage omission capacities `E_1..E_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageCounts {
    capacities: Vec<f64>,
}

impl StageCounts {
    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn total(&self) -> f64 {
        self.capacities.iter().sum()
    }
}

/// `E_1 = M q_1`, `E_n = (M - Σ_{k<n} E_k) q_n`. Real valued.
pub fn stage_capacities(total_triples: f64, q: &OmissionProfile) -> StageCounts {
    let mut remaining = total_triples;
    let capacities = q
        .ratios()
        .iter()
        .map(|&qn| {
            let e = remaining * qn;
            remaining -= e;
            e
        })
        .collect();
    StageCounts { capacities }
}

/// The piecewise-linear computation load `l(E)`.
///
/// Segment 1 costs `1/q_1` per omission. Segment `n ≥ 2` starts from the full
/// cost of the earlier segments and costs `E_{n-1}/q_n` per omission. A stage
/// with `q_n = 0` ends the profile: the cycle that omits nothing terminates
/// the round, so later stages count as exhausted.
#[derive(Clone, Debug)]
pub struct ComputationLoad {
    ratios: Vec<f64>,
    caps: Vec<f64>,
    /// `E_1 / q_1`, i.e. `M`.
    first_pass: f64,
}

impl ComputationLoad {
    pub fn new(total_triples: f64, q: &OmissionProfile) -> Self {
        let live = q.ratios().iter().take_while(|&&qn| qn > 0.0).count();
        let ratios = q.ratios()[..live].to_vec();
        let caps = stage_capacities(total_triples, q).capacities[..live].to_vec();
        let first_pass = match ratios.first() {
            Some(&q1) => caps[0] / q1,
            None => total_triples,
        };
        Self {
            ratios,
            caps,
            first_pass,
        }
    }

    /// Number of live stages.
    pub fn stages(&self) -> usize {
        self.ratios.len()
    }

    /// `Σ E_n` over live stages.
    pub fn capacity(&self) -> f64 {
        self.caps.iter().sum()
    }

    /// Cumulative segment ends `E_1, E_1 + E_2, ...`.
    pub fn boundaries(&self) -> Vec<f64> {
        self.caps
            .iter()
            .scan(0.0, |acc, e| {
                *acc += e;
                Some(*acc)
            })
            .collect()
    }

    /// Evaluates the expression of branch `n` (1-based) at `e`, regardless of
    /// whether `e` lies in that branch's interval.
    pub fn branch(&self, n: usize, e: f64) -> f64 {
        assert!(n >= 1 && n <= self.stages(), "branch {n} out of range");
        if n == 1 {
            return e / self.ratios[0];
        }
        let mut value = self.first_pass;
        let mut omitted_before = 0.0;
        for k in 0..n - 2 {
            omitted_before += self.caps[k];
            value += (self.first_pass - omitted_before) * self.caps[k];
        }
        let start: f64 = self.caps[..n - 1].iter().sum();
        value + (e - start) * self.caps[n - 2] / self.ratios[n - 1]
    }

    pub fn eval(&self, e: f64) -> Result<f64, CostError> {
        let capacity = self.capacity();
        let tol = 1e-9 * capacity.max(1.0);
        if e < 0.0 || e > capacity + tol || e.is_nan() {
            return Err(CostError::InsufficientCapacity {
                requested: e,
                capacity,
            });
        }
        let last = self.caps.iter().rposition(|&c| c > 0.0);
        if e == 0.0 || last.is_none() {
            return Ok(0.0);
        }
        let mut end = 0.0;
        for (i, &cap) in self.caps.iter().enumerate() {
            end += cap;
            if cap > 0.0 && (e <= end || Some(i) == last) {
                return Ok(self.branch(i + 1, e));
            }
        }
        unreachable!("e within capacity always lands in a segment")
    }
}

pub fn computation_load(total_triples: f64, q: &OmissionProfile, e: f64) -> Result<f64, CostError> {
    ComputationLoad::new(total_triples, q).eval(e)
}

/// `R(3M - E)`.
pub fn message_bits(total_triples: f64, omitted: f64, bits_per_symbol: f64) -> f64 {
    bits_per_symbol * (3.0 * total_triples - omitted)
}

/// `B log2(1 + p h / σ²)`.
pub fn transmission_rate(params: &SystemParams, power_w: f64) -> f64 {
    params.bandwidth_hz * (power_w * params.gain_to_noise()).ln_1p() / std::f64::consts::LN_2
}

pub fn comm_latency(params: &SystemParams, power_w: f64, omitted: f64) -> Result<f64, CostError> {
    let bits = message_bits(params.total_triples as f64, omitted, params.bits_per_symbol);
    if bits <= 0.0 {
        return Ok(0.0);
    }
    let rate = transmission_rate(params, power_w);
    if rate <= 0.0 {
        return Err(CostError::ZeroRate);
    }
    Ok(bits / rate)
}

pub fn comp_latency(
    params: &SystemParams,
    q: &OmissionProfile,
    omitted: f64,
) -> Result<f64, CostError> {
    let load = computation_load(params.total_triples as f64, q, omitted)?;
    Ok(params.tau1 * load / params.cpu_hz)
}

pub fn comm_energy(params: &SystemParams, power_w: f64, omitted: f64) -> Result<f64, CostError> {
    Ok(comm_latency(params, power_w, omitted)? * power_w)
}

pub fn comp_energy(
    params: &SystemParams,
    q: &OmissionProfile,
    omitted: f64,
) -> Result<f64, CostError> {
    let load = computation_load(params.total_triples as f64, q, omitted)?;
    Ok(comp_energy_for_load(params, load))
}

pub(crate) fn comp_energy_for_load(params: &SystemParams, load: f64) -> f64 {
    params.tau1 * params.tau2 * load * params.cpu_hz * params.cpu_hz
}

pub fn total_energy(
    params: &SystemParams,
    q: &OmissionProfile,
    power_w: f64,
    omitted: f64,
) -> Result<f64, CostError> {
    Ok(comm_energy(params, power_w, omitted)? + comp_energy(params, q, omitted)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    bandwidth_hz: Option<f64>,
    max_power_w: Option<f64>,
    channel_gain: Option<f64>,
    noise_power_w: Option<f64>,
    latency_limit_s: Option<f64>,
    cpu_hz: Option<f64>,
    tau1: Option<f64>,
    tau2: Option<f64>,
    bits_per_symbol: Option<f64>,
    total_triples: Option<u64>,
    q_ratios: Option<Vec<f64>>,
}

/// Reads a TOML parameter file. Missing keys keep their defaults.
pub fn parse_params_config(
    text: &str,
) -> Result<(SystemParams, Option<OmissionProfile>), CostError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CostError::Config(e.to_string()))?;
    params_from_table(table)
}

pub fn params_from_table(
    table: toml::Table,
) -> Result<(SystemParams, Option<OmissionProfile>), CostError> {
    let file: ConfigFile = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CostError::Config(e.to_string()))?;
    let d = SystemParams::default();
    let params = SystemParams {
        bandwidth_hz: file.bandwidth_hz.unwrap_or(d.bandwidth_hz),
        max_power_w: file.max_power_w.unwrap_or(d.max_power_w),
        channel_gain: file.channel_gain.unwrap_or(d.channel_gain),
        noise_power_w: file.noise_power_w.unwrap_or(d.noise_power_w),
        latency_limit_s: file.latency_limit_s.unwrap_or(d.latency_limit_s),
        cpu_hz: file.cpu_hz.unwrap_or(d.cpu_hz),
        tau1: file.tau1.unwrap_or(d.tau1),
        tau2: file.tau2.unwrap_or(d.tau2),
        bits_per_symbol: file.bits_per_symbol.unwrap_or(d.bits_per_symbol),
        total_triples: file.total_triples.unwrap_or(d.total_triples),
    };
    params.validate()?;
    let q = file
        .q_ratios
        .map(|r| OmissionProfile::new(r).map_err(|e| CostError::Config(e.to_string())))
        .transpose()?;
    Ok((params, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(r: &[f64]) -> OmissionProfile {
        OmissionProfile::new(r.to_vec()).unwrap()
    }

    #[test]
    fn stage_capacities_follow_recursion() {
        assert_eq!(
            stage_capacities(100.0, &q(&[0.5, 0.5])).capacities(),
            &[50.0, 25.0]
        );
        assert_eq!(stage_capacities(100.0, &q(&[0.0, 0.0, 0.0])).total(), 0.0);
        assert_eq!(stage_capacities(100.0, &q(&[1.0])).capacities(), &[100.0]);
    }

    #[test]
    fn load_hand_values() {
        let l = ComputationLoad::new(100.0, &q(&[0.5, 0.5]));
        assert_eq!(l.eval(0.0).unwrap(), 0.0);
        assert_eq!(l.eval(50.0).unwrap(), 100.0);
        assert_eq!(l.eval(60.0).unwrap(), 1100.0);
        assert_eq!(l.eval(75.0).unwrap(), 2600.0);
        assert_eq!(l.branch(1, 50.0), l.branch(2, 50.0));
        assert!(matches!(
            l.eval(76.0),
            Err(CostError::InsufficientCapacity { .. })
        ));
        assert!(l.eval(-1.0).is_err());
    }

    #[test]
    fn third_branch_matches_written_form() {
        // q = (0.5, 0.5, 0.5): E = (50, 25, 12.5)
        let l = ComputationLoad::new(100.0, &q(&[0.5, 0.5, 0.5]));
        let e = 80.0;
        let expected = 100.0 + (100.0 - 50.0) * 50.0 + (e - 25.0 - 50.0) * 25.0 / 0.5;
        assert_eq!(l.eval(e).unwrap(), expected);
        assert_eq!(l.branch(2, 75.0), l.branch(3, 75.0));
    }

    #[test]
    fn zero_stage_ends_the_profile() {
        let l = ComputationLoad::new(100.0, &q(&[0.5, 0.0, 0.5]));
        assert_eq!(l.stages(), 1);
        assert_eq!(l.capacity(), 50.0);
        let none = ComputationLoad::new(100.0, &q(&[0.0, 0.5]));
        assert_eq!(none.capacity(), 0.0);
        assert_eq!(none.eval(0.0).unwrap(), 0.0);
        assert!(none.eval(1.0).is_err());
    }

    #[test]
    fn message_bits_values() {
        assert_eq!(message_bits(0.0, 0.0, 32.0), 0.0);
        assert_eq!(message_bits(100.0, 0.0, 32.0), 9600.0);
        assert_eq!(message_bits(100.0, 100.0, 32.0), 6400.0);
    }

    #[test]
    fn rate_values() {
        let p = SystemParams::default();
        assert_eq!(transmission_rate(&p, 0.0), 0.0);
        // p h / σ² = 1
        assert_eq!(transmission_rate(&p, 1e-4), p.bandwidth_hz);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn rate_matches_high_precision_values() {
        // log2(1 + x) evaluated with 50-digit arithmetic.
        let cases = [
            (1e-9, 1.4426950401676158874e-9),
            (0.37, 0.45417589318580202006),
            (3.1e-2, 0.044044332706021332649),
            (12.5, 3.7548875021634685444),
            (4.0e3, 11.966144913345601885),
        ];
        let params = SystemParams {
            bandwidth_hz: 1.0,
            ..SystemParams::default()
        };
        for (x, want) in cases {
            let got = transmission_rate(&params, x / params.gain_to_noise());
            assert!(
                ((got - want) / want).abs() < 1e-13,
                "x={x}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn energy_edge_cases() {
        let params = SystemParams::default();
        let prof = q(&[0.5, 0.5]);
        let e0 = total_energy(&params, &prof, 1e-4, 0.0).unwrap();
        let t1 = comm_latency(&params, 1e-4, 0.0).unwrap();
        assert_eq!(comp_energy(&params, &prof, 0.0).unwrap(), 0.0);
        assert_eq!(e0, t1 * 1e-4);
        // p h/σ² = 1: rate = B, so t1 = bits / B
        assert!((t1 - 9600.0 / 1e7).abs() < 1e-18);
        assert_eq!(
            total_energy(&params, &prof, 0.0, 0.0),
            Err(CostError::ZeroRate)
        );
        let empty = SystemParams {
            total_triples: 0,
            ..params.clone()
        };
        assert_eq!(comm_energy(&empty, 0.0, 0.0).unwrap(), 0.0);
        let e = total_energy(&params, &prof, 0.3, 60.0).unwrap();
        let parts = comm_latency(&params, 0.3, 60.0).unwrap() * 0.3
            + params.tau1 * params.tau2 * 1100.0 * params.cpu_hz.powi(2);
        assert!(((e - parts) / parts).abs() < 1e-15);
        assert_eq!(
            comp_latency(&params, &prof, 60.0).unwrap(),
            1100.0 / params.cpu_hz
        );
    }

    #[test]
    fn config_parsing() {
        let (p, prof) =
            parse_params_config("bandwidth_hz = 2e6\ntotal_triples = 40\nq_ratios = [0.4, 0.25]\n")
                .unwrap();
        assert_eq!(p.bandwidth_hz, 2e6);
        assert_eq!(p.total_triples, 40);
        assert_eq!(p.cpu_hz, 1e9);
        assert_eq!(prof.unwrap().ratios(), &[0.4, 0.25]);
        assert!(parse_params_config("bogus = 1\n").is_err());
        assert!(parse_params_config("bandwidth_hz = -1.0\n").is_err());
        assert!(parse_params_config("q_ratios = [2.0]\n").is_err());
        assert_eq!(parse_params_config("").unwrap().0, SystemParams::default());
    }

    #[test]
    fn dbm_conversion() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((watts_to_dbm(1e-3)).abs() < 1e-12);
    }

    fn profile_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0], 1..=5)
    }

    proptest! {
        #[test]
        fn load_is_continuous_and_non_decreasing(ratios in profile_strategy(), m in 0u32..400) {
            let l = ComputationLoad::new(m as f64, &q(&ratios));
            let bounds = l.boundaries();
            for n in 1..l.stages() {
                let b = bounds[n - 1];
                let (lo, hi) = (l.branch(n, b), l.branch(n + 1, b));
                prop_assert!((lo - hi).abs() <= 1e-9 * lo.abs().max(1.0), "{} vs {} at {}", lo, hi, b);
            }
            let top = l.capacity().floor() as u32;
            let mut prev: f64 = 0.0;
            for e in 0..=top {
                let v = l.eval(e as f64).unwrap();
                prop_assert!(v >= prev - 1e-9 * prev.max(1.0));
                prev = v;
            }
        }

        #[test]
        fn load_has_no_curvature_inside_segments(ratios in profile_strategy(), m in 10u32..400) {
            let l = ComputationLoad::new(m as f64, &q(&ratios));
            let mut start = 0.0;
            for (n, end) in l.boundaries().into_iter().enumerate() {
                if end - start > 2.0 {
                    let a = start + 0.25 * (end - start);
                    let h = 0.25 * (end - start);
                    let second = l.eval(a + h).unwrap() * 2.0 - l.eval(a).unwrap() - l.eval(a + 2.0 * h).unwrap();
                    let scale = l.eval(end).unwrap().max(1.0);
                    prop_assert!(second.abs() <= 1e-9 * scale, "segment {} curvature {}", n + 1, second);
                }
                start = end;
            }
        }

        #[test]
        fn comm_latency_decreases_in_power_and_omissions(
            p in 1e-6f64..1.0, dp in 1e-3f64..1.0, e in 0u32..99,
        ) {
            let params = SystemParams::default();
            let t = comm_latency(&params, p, e as f64).unwrap();
            prop_assert!(comm_latency(&params, p * (1.0 + dp), e as f64).unwrap() < t);
            prop_assert!(comm_latency(&params, p, e as f64 + 1.0).unwrap() < t);
        }

        #[test]
        fn comp_energy_non_decreasing(ratios in profile_strategy(), e in 0u32..100) {
            let params = SystemParams::default();
            let prof = q(&ratios);
            let cap = ComputationLoad::new(100.0, &prof).capacity().floor() as u32;
            prop_assume!(e < cap);
            let a = comp_energy(&params, &prof, e as f64).unwrap();
            let b = comp_energy(&params, &prof, e as f64 + 1.0).unwrap();
            prop_assert!(b >= a);
        }

        #[test]
        fn total_energy_increases_with_power(e in 0u32..50, lo in -8.0f64..-1.0) {
            let params = SystemParams::default();
            let prof = q(&[0.5, 0.5]);
            let grid: Vec<f64> = (0..60).map(|i| 10f64.powf(lo + i as f64 * (-lo) / 59.0)).collect();
            let values: Vec<f64> = grid.iter().map(|&p| total_energy(&params, &prof, p, e as f64).unwrap()).collect();
            for w in values.windows(2) {
                prop_assert!(w[1] > w[0]);
            }
        }
    }
}
