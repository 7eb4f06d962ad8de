//! Joint choice of transmit power `p` and omission count `E`.
//!
//! For a fixed `E` the energy `t1(p) p + e2(E)` is increasing in `p`, so the
//! best power is the smallest one meeting the latency budget:
//!
//! ```text
//! p(E) = (2^{R(3M - E) / (B (T - τ1 l(E) / f))} - 1) σ² / h
//! ```
//!
//! [`optimize`] walks `E = 0, 1, ...` until the computation alone uses up the
//! budget and keeps the cheapest `(p(E), E)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::OmissionProfile;
use crate::cost_model::{self, comp_energy_for_load, ComputationLoad, CostError, SystemParams};

#[derive(Debug, Error, PartialEq)]
pub enum OptimizeError {
    #[error("infeasible instance: no omission count meets the latency and power limits")]
    Infeasible,
    #[error("computation exceeds latency budget at E = {omitted}")]
    ComputationExceedsBudget { omitted: u64 },
    #[error("power grid needs at least 1000 points, got {0}")]
    GridTooSmall(usize),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// How an `E` whose required power exceeds `p_max` is handled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Skip it.
    #[default]
    Strict,
    /// Evaluate it at `p_max` and flag the solution as clamped, even though
    /// the latency budget is then exceeded.
    PaperLiteral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub power_w: f64,
    pub omitted: u64,
    pub comm_energy_j: f64,
    pub comp_energy_j: f64,
    pub total_energy_j: f64,
    pub comm_latency_s: f64,
    pub comp_latency_s: f64,
    pub feasible: bool,
    pub clamped_at_pmax: bool,
}

/// Shared evaluation state for one `(params, q)` instance.
struct Instance<'a> {
    params: &'a SystemParams,
    load: ComputationLoad,
    /// `T f / τ1`.
    budget: f64,
    /// `min(M, ⌊Σ E_n⌋)`.
    max_omissions: u64,
}

impl<'a> Instance<'a> {
    fn new(params: &'a SystemParams, q: &OmissionProfile) -> Result<Self, CostError> {
        params.validate()?;
        let load = ComputationLoad::new(params.total_triples as f64, q);
        let capacity = (load.capacity() + 1e-9 * load.capacity().max(1.0)).floor() as u64;
        Ok(Self {
            params,
            budget: params.latency_limit_s * params.cpu_hz / params.tau1,
            max_omissions: capacity.min(params.total_triples),
            load,
        })
    }

    fn load_at(&self, e: u64) -> f64 {
        self.load
            .eval(e as f64)
            .expect("E within max_omissions is within capacity")
    }

    /// Closed-form power given the load at `e`.
    fn power_for(&self, e: u64, load: f64) -> Result<f64, OptimizeError> {
        let p = self.params;
        let remaining = p.latency_limit_s - p.tau1 * load / p.cpu_hz;
        if load >= self.budget || remaining <= 0.0 {
            return Err(OptimizeError::ComputationExceedsBudget { omitted: e });
        }
        let bits = cost_model::message_bits(p.total_triples as f64, e as f64, p.bits_per_symbol);
        let exponent = bits / (p.bandwidth_hz * remaining);
        Ok((exponent * std::f64::consts::LN_2).exp_m1() / p.gain_to_noise())
    }

    fn solution(
        &self,
        power: f64,
        e: u64,
        load: f64,
        clamped: bool,
    ) -> Result<Solution, CostError> {
        let p = self.params;
        let comm_latency = cost_model::comm_latency(p, power, e as f64)?;
        let comp_latency = p.tau1 * load / p.cpu_hz;
        let comm_energy = comm_latency * power;
        let comp_energy = comp_energy_for_load(p, load);
        let slack = 1e-12 * p.latency_limit_s.max(1.0);
        let feasible = comm_latency + comp_latency <= p.latency_limit_s + slack
            && power <= p.max_power_w
            && (power > 0.0 || comm_latency == 0.0);
        Ok(Solution {
            power_w: power,
            omitted: e,
            comm_energy_j: comm_energy,
            comp_energy_j: comp_energy,
            total_energy_j: comm_energy + comp_energy,
            comm_latency_s: comm_latency,
            comp_latency_s: comp_latency,
            feasible,
            clamped_at_pmax: clamped,
        })
    }
}

/// Largest integer `E ≤ min(M, ⌊Σ E_n⌋)` with `l(E) < T f / τ1`.
pub fn max_feasible_omissions(
    params: &SystemParams,
    q: &OmissionProfile,
) -> Result<u64, OptimizeError> {
    let inst = Instance::new(params, q)?;
    let mut best = 0;
    for e in 0..=inst.max_omissions {
        if inst.load_at(e) >= inst.budget {
            break;
        }
        best = e;
    }
    Ok(best)
}

/// Power at which `t1 + t2 = T` exactly for this `E`. May exceed `p_max`.
pub fn min_feasible_power(
    params: &SystemParams,
    q: &OmissionProfile,
    omitted: u64,
) -> Result<f64, OptimizeError> {
    let inst = Instance::new(params, q)?;
    let load = inst
        .load
        .eval(omitted as f64)
        .map_err(OptimizeError::Cost)?;
    inst.power_for(omitted, load)
}

pub fn optimize(
    params: &SystemParams,
    q: &OmissionProfile,
    mode: Mode,
) -> Result<Solution, OptimizeError> {
    optimize_counted(params, q, mode).map(|(s, _)| s)
}

/// [`optimize`] plus the number of `l(E)` evaluations it made.
pub fn optimize_counted(
    params: &SystemParams,
    q: &OmissionProfile,
    mode: Mode,
) -> Result<(Solution, usize), OptimizeError> {
    let inst = Instance::new(params, q)?;
    let mut evaluations = 0;
    let mut best: Option<Solution> = None;
    for e in 0..=params.total_triples {
        if e > inst.max_omissions {
            break;
        }
        let load = inst.load_at(e);
        evaluations += 1;
        if load >= inst.budget {
            break;
        }
        let Ok(power) = inst.power_for(e, load) else {
            break;
        };
        let candidate = if power > params.max_power_w {
            match mode {
                Mode::Strict => continue,
                Mode::PaperLiteral => inst.solution(params.max_power_w, e, load, true)?,
            }
        } else {
            inst.solution(power, e, load, false)?
        };
        // strict improvement only: on equal energy the smaller E stays
        if best
            .as_ref()
            .is_none_or(|b| candidate.total_energy_j < b.total_energy_j)
        {
            best = Some(candidate);
        }
    }
    best.map(|s| (s, evaluations))
        .ok_or(OptimizeError::Infeasible)
}

/// Exhaustive reference solver: every admissible integer `E` and a
/// log-spaced grid of powers from the latency-limited minimum (located by
/// bisection) up to `p_max`, keeping only points that meet the latency
/// budget.
pub fn optimize_bruteforce(
    params: &SystemParams,
    q: &OmissionProfile,
    grid_size: usize,
) -> Result<Solution, OptimizeError> {
    if grid_size < 1000 {
        return Err(OptimizeError::GridTooSmall(grid_size));
    }
    let inst = Instance::new(params, q)?;
    let limit = params.latency_limit_s;
    let slack = 1e-12 * limit.max(1.0);
    let results: Vec<Option<Solution>> = (0..=inst.max_omissions)
        .into_par_iter()
        .map(|e| -> Result<Option<Solution>, OptimizeError> {
            let load = inst.load_at(e);
            let comp_latency = params.tau1 * load / params.cpu_hz;
            if comp_latency >= limit {
                return Ok(None);
            }
            let latency = |p: f64| {
                cost_model::comm_latency(params, p, e as f64)
                    .map(|t| t + comp_latency)
                    .unwrap_or(f64::INFINITY)
            };
            if latency(params.max_power_w) > limit + slack {
                return Ok(None);
            }
            let lo = bisect_min_power(&latency, limit, params.max_power_w);
            let hi = params.max_power_w;
            let mut best: Option<Solution> = None;
            let points = if lo <= 0.0 || lo >= hi { 1 } else { grid_size };
            for i in 0..points {
                let p = if points == 1 {
                    lo.max(0.0)
                } else {
                    lo * (hi / lo).powf(i as f64 / (points - 1) as f64)
                };
                if latency(p) > limit + slack {
                    continue;
                }
                let s = inst.solution(p, e, load, false)?;
                if best
                    .as_ref()
                    .is_none_or(|b| s.total_energy_j < b.total_energy_j)
                {
                    best = Some(s);
                }
            }
            Ok(best)
        })
        .collect::<Result<_, _>>()?;
    results
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<Solution>, s| match acc {
            Some(b) if b.total_energy_j <= s.total_energy_j => Some(b),
            _ => Some(s),
        })
        .ok_or(OptimizeError::Infeasible)
}

/// Smallest power in `[0, p_max]` meeting the latency limit, returned from
/// the feasible side.
fn bisect_min_power(latency: &impl Fn(f64) -> f64, limit: f64, p_max: f64) -> f64 {
    if latency(0.0) <= limit {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, p_max);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if latency(mid) <= limit {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Sends all `3M` symbols with no computation, at the power that uses the
/// whole latency budget. The power limit is ignored; `feasible` reports
/// whether the result happens to respect it.
pub fn baseline_traditional(params: &SystemParams) -> Result<Solution, OptimizeError> {
    let q = OmissionProfile::new(vec![0.0]).expect("valid");
    let inst = Instance::new(params, &q)?;
    let power = inst.power_for(0, 0.0)?;
    Ok(inst.solution(power, 0, 0.0, false)?)
}

/// [`optimize`] restricted to round-1 omissions: `E ≤ ⌊E_1⌋`, `l(E) = E/q_1`.
pub fn baseline_simplified(
    params: &SystemParams,
    q: &OmissionProfile,
    mode: Mode,
) -> Result<Solution, OptimizeError> {
    optimize(params, &q.first_round(), mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(r: &[f64]) -> OmissionProfile {
        OmissionProfile::new(r.to_vec()).unwrap()
    }

    #[test]
    fn omission_bound_hand_values() {
        let params = SystemParams::default();
        assert_eq!(
            max_feasible_omissions(&params, &q(&[0.5, 0.5])).unwrap(),
            75
        );
        // budget T f / τ1 = 1e6 is far above l(75) = 2600
        let tight = SystemParams {
            latency_limit_s: 1e-15,
            ..params.clone()
        };
        assert_eq!(max_feasible_omissions(&tight, &q(&[0.5, 0.5])).unwrap(), 0);
        // l(E) = 2E < 50  =>  E ≤ 24
        let mid = SystemParams {
            latency_limit_s: 50e-9,
            ..params
        };
        assert_eq!(max_feasible_omissions(&mid, &q(&[0.5, 0.5])).unwrap(), 24);
    }

    #[test]
    fn closed_form_power_hand_value() {
        // R(3M - E) = 32 * 312.5 would not be integral; use R = 100, M = 100 → 3e4 bits
        // and B T = 3e4 so the exponent is 1.
        let params = SystemParams {
            bits_per_symbol: 100.0,
            bandwidth_hz: 3e7,
            ..SystemParams::default()
        };
        let p = min_feasible_power(&params, &q(&[0.0]), 0).unwrap();
        assert!((p - 1e-4).abs() < 1e-18, "{p}");

        let empty = SystemParams {
            total_triples: 0,
            ..SystemParams::default()
        };
        assert_eq!(min_feasible_power(&empty, &q(&[0.5]), 0).unwrap(), 0.0);
    }

    #[test]
    fn budget_violation_is_reported() {
        let params = SystemParams {
            latency_limit_s: 50e-9,
            ..SystemParams::default()
        };
        assert_eq!(
            min_feasible_power(&params, &q(&[0.5, 0.5]), 25),
            Err(OptimizeError::ComputationExceedsBudget { omitted: 25 })
        );
    }

    #[test]
    fn no_capacity_means_no_omission() {
        let params = SystemParams::default();
        let s = optimize(&params, &q(&[0.0, 0.0]), Mode::Strict).unwrap();
        assert_eq!(s.omitted, 0);
        assert_eq!(
            s.power_w,
            min_feasible_power(&params, &q(&[0.0]), 0).unwrap()
        );
        assert!(s.feasible && !s.clamped_at_pmax);
        let brute = optimize_bruteforce(&params, &q(&[0.0]), 1000).unwrap();
        assert_eq!(brute.omitted, 0);
        assert!((brute.total_energy_j - s.total_energy_j).abs() <= 1e-9 * s.total_energy_j);
    }

    #[test]
    fn heavy_computation_cost_disables_omission() {
        let params = SystemParams {
            tau2: 1e-10,
            ..SystemParams::default()
        };
        let s = optimize(&params, &q(&[0.9, 0.9]), Mode::Strict).unwrap();
        assert_eq!(s.omitted, 0);
    }

    #[test]
    fn power_cap_strict_versus_literal() {
        // Traditional needs ~p_max·1e6; nothing is reachable under 1 µW.
        let params = SystemParams {
            max_power_w: 1e-6,
            ..SystemParams::default()
        };
        let prof = q(&[0.5, 0.5]);
        assert_eq!(
            optimize(&params, &prof, Mode::Strict),
            Err(OptimizeError::Infeasible)
        );
        let lit = optimize(&params, &prof, Mode::PaperLiteral).unwrap();
        assert!(lit.clamped_at_pmax && !lit.feasible);
        assert_eq!(lit.power_w, 1e-6);
        assert!(lit.comm_latency_s + lit.comp_latency_s > params.latency_limit_s);
        assert_eq!(
            optimize_bruteforce(&params, &prof, 1000),
            Err(OptimizeError::Infeasible)
        );
    }

    #[test]
    fn strict_solution_is_feasible_and_tight() {
        let params = SystemParams::default();
        let s = optimize(&params, &q(&[0.5, 0.5]), Mode::Strict).unwrap();
        assert!(s.feasible);
        let total = s.comm_latency_s + s.comp_latency_s;
        assert!((total - params.latency_limit_s).abs() <= 1e-9 * params.latency_limit_s);
        assert!(s.omitted <= 75);
    }

    #[test]
    fn traditional_uses_whole_budget() {
        let params = SystemParams::default();
        let s = baseline_traditional(&params).unwrap();
        assert_eq!(s.omitted, 0);
        assert_eq!(s.comp_energy_j, 0.0);
        assert!((s.comm_latency_s - params.latency_limit_s).abs() < 1e-15);
        assert!(
            (s.total_energy_j - s.power_w * params.latency_limit_s).abs()
                <= 1e-12 * s.total_energy_j
        );
        // bisection oracle on t1(p) = T
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let t1 = 9600.0 / (params.bandwidth_hz * (1.0 + mid * 1e4).log2());
            if t1 > params.latency_limit_s {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((s.power_w - hi).abs() <= 1e-9 * hi);
    }

    #[test]
    fn traditional_ignores_power_cap() {
        let params = SystemParams {
            max_power_w: 1e-6,
            ..SystemParams::default()
        };
        let s = baseline_traditional(&params).unwrap();
        assert!(s.power_w > params.max_power_w);
        assert!(!s.feasible);
    }

    #[test]
    fn simplified_stays_in_round_one() {
        let params = SystemParams {
            bandwidth_hz: 2e6,
            ..SystemParams::default()
        };
        let prof = q(&[0.5, 0.5]);
        let simple = baseline_simplified(&params, &prof, Mode::Strict).unwrap();
        let full = optimize(&params, &prof, Mode::Strict).unwrap();
        assert!(simple.omitted <= 50);
        assert!(full.total_energy_j <= simple.total_energy_j);
        assert!(full.omitted > 50, "small bandwidth should pull in round 2");

        let none = baseline_simplified(&params, &q(&[0.0, 0.7]), Mode::Strict).unwrap();
        let trad = baseline_traditional(&params).unwrap();
        assert_eq!(none.omitted, 0);
        assert!((none.total_energy_j - trad.total_energy_j).abs() <= 1e-12 * trad.total_energy_j);
    }

    #[test]
    fn literal_scan_oracle() {
        // q = (0.5, 0.5), M = 100: l(E) = 2E up to 50, then 100 + 100 (E - 50) up to 75
        for b in [2e6, 3e6, 5e6, 1e7] {
            let params = SystemParams {
                bandwidth_hz: b,
                tau2: 1e-27,
                ..SystemParams::default()
            };
            let mut best = (f64::INFINITY, 0u64);
            for e in 0..=75u64 {
                let l = if e <= 50 {
                    2.0 * e as f64
                } else {
                    100.0 + 100.0 * (e as f64 - 50.0)
                };
                let t2 = l / 1e9;
                let bits = 32.0 * (300.0 - e as f64);
                let p = (2f64.powf(bits / (b * (1e-3 - t2))) - 1.0) * 1e-13 / 1e-9;
                if p > 1.0 {
                    continue;
                }
                let energy = p * (1e-3 - t2) + 1e-27 * l * 1e18;
                if energy < best.0 {
                    best = (energy, e);
                }
            }
            let s = optimize(&params, &q(&[0.5, 0.5]), Mode::Strict).unwrap();
            assert_eq!(s.omitted, best.1, "B = {b}");
            assert!((s.total_energy_j - best.0).abs() <= 1e-9 * best.0);
        }
    }

    #[test]
    fn evaluation_count_is_linear() {
        let params = SystemParams::default();
        let (_, n) = optimize_counted(&params, &q(&[0.5, 0.5]), Mode::Strict).unwrap();
        assert!(n <= 76);
    }

    #[test]
    fn grid_must_be_large_enough() {
        assert_eq!(
            optimize_bruteforce(&SystemParams::default(), &q(&[0.5]), 10),
            Err(OptimizeError::GridTooSmall(10))
        );
    }

    #[test]
    fn solution_json_field_names() {
        let s = optimize(&SystemParams::default(), &q(&[0.5]), Mode::Strict).unwrap();
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        for key in [
            "power_w",
            "omitted",
            "comm_energy_j",
            "comp_energy_j",
            "total_energy_j",
            "comm_latency_s",
            "comp_latency_s",
            "feasible",
            "clamped_at_pmax",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
