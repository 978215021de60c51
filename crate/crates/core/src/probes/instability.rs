use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweep::check_directions;
use super::{LabeledDirection, ProbeError};
use crate::linalg::distance;
use crate::model::{EmbeddingPoint, LstOutput, RepresentationMap};
use crate::numerics::{ulp_spacing, PrecisionMode};

/// Summary statistics of the finite-difference instability sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstabilitySummary {
    pub mean_inst: f64,
    pub median_inst: f64,
    pub max_drift: f64,
    pub mean_margin: f64,
    pub min_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstabilityReport {
    pub summary: InstabilitySummary,
    /// `I_i = ‖m_i − m_{i−1}‖ / (ε_i − ε_{i−1})` for `i = 1..T`.
    pub instabilities: Vec<f64>,
    /// `‖m_i − m_0‖` for every point, starting with zero.
    pub drifts: Vec<f64>,
    pub margins: Vec<f64>,
}

/// Evaluates the instability statistic on already-computed states.
pub fn instability_from_states(
    eps: &[f64],
    states: &[Vec<f64>],
    margins: &[f64],
) -> Result<InstabilityReport, ProbeError> {
    if eps.len() < 2 || states.len() != eps.len() || margins.len() != eps.len() {
        return Err(ProbeError::InvalidConfig(
            "instability needs T ≥ 2 points with one state and margin each".into(),
        ));
    }
    if eps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ProbeError::InvalidConfig("ε sequence must be strictly increasing".into()));
    }
    let instabilities: Vec<f64> = (1..eps.len())
        .map(|i| distance(&states[i], &states[i - 1]) / (eps[i] - eps[i - 1]))
        .collect();
    let drifts: Vec<f64> = states.iter().map(|s| distance(s, &states[0])).collect();
    let n = instabilities.len() as f64;
    let summary = InstabilitySummary {
        mean_inst: instabilities.iter().sum::<f64>() / n,
        median_inst: median(&instabilities),
        max_drift: drifts.iter().copied().fold(0.0, f64::max),
        mean_margin: margins.iter().sum::<f64>() / margins.len() as f64,
        min_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
    };
    Ok(InstabilityReport {
        summary,
        instabilities,
        drifts,
        margins: margins.to_vec(),
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn evaluate_along<M: RepresentationMap>(
    model: &M,
    point: &EmbeddingPoint,
    direction: &LabeledDirection,
    coefs: &[f64],
) -> Result<Vec<LstOutput>, ProbeError> {
    coefs
        .par_iter()
        .map(|&c| Ok(model.evaluate(point, &[(c, &direction.v)])?))
        .collect()
}

/// `m_i = M(x + ε_i v)` along the sequence, summarised.
pub fn instability_sweep<M: RepresentationMap>(
    model: &M,
    point: &EmbeddingPoint,
    direction: &LabeledDirection,
    eps_sequence: &[f64],
) -> Result<InstabilityReport, ProbeError> {
    check_directions(std::slice::from_ref(direction), model.width())?;
    if eps_sequence.len() < 2 {
        return Err(ProbeError::InvalidConfig("ε sequence needs at least two points".into()));
    }
    let outs = evaluate_along(model, point, direction, eps_sequence)?;
    let states: Vec<Vec<f64>> = outs.iter().map(|o| o.m.clone()).collect();
    let margins: Vec<f64> = outs.iter().map(|o| o.margin).collect();
    instability_from_states(eps_sequence, &states, &margins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaircaseStep {
    pub index: usize,
    pub s: f64,
    /// `‖m_i − m_{i−1}‖`
    pub step_norm: f64,
    /// `‖m_i − m_0‖`
    pub cumulative: f64,
    /// The state changed bitwise relative to the previous point.
    pub jump: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Staircase {
    pub steps: Vec<StaircaseStep>,
    pub stalls: usize,
    pub jumps: usize,
}

impl Staircase {
    pub fn stall_fraction(&self) -> f64 {
        self.stalls as f64 / self.steps.len() as f64
    }
}

/// Walks `s_i = start_s + i·delta` for `i = 0..=n_steps` and splits the
/// consecutive steps into stalls (bitwise-equal state) and jumps.
///
/// `delta` must be below one FP32 ULP of the RMS magnitude of the perturbed
/// embedding slice, so that a single step cannot move a typical coordinate.
pub fn micro_continuity<M: RepresentationMap>(
    model: &M,
    point: &EmbeddingPoint,
    direction: &LabeledDirection,
    start_s: f64,
    n_steps: usize,
    delta: f64,
) -> Result<Staircase, ProbeError> {
    check_directions(std::slice::from_ref(direction), model.width())?;
    let slice = point.perturbed_slice();
    let rms = (slice.iter().map(|v| v * v).sum::<f64>() / slice.len() as f64).sqrt();
    let typical = if rms > 0.0 { rms } else { 1.0 };
    let ulp = ulp_spacing(typical, PrecisionMode::Fp32).expect("finite magnitude");
    if !(delta > 0.0 && delta < ulp) {
        return Err(ProbeError::InvalidConfig(format!(
            "delta {delta:e} must lie in (0, {ulp:e}), one FP32 ULP of the embedding scale"
        )));
    }
    if n_steps == 0 {
        return Err(ProbeError::InvalidConfig("n_steps must be positive".into()));
    }
    let coefs: Vec<f64> = (0..=n_steps).map(|i| start_s + i as f64 * delta).collect();
    let outs = evaluate_along(model, point, direction, &coefs)?;
    let mut steps = Vec::with_capacity(n_steps);
    let mut stalls = 0;
    for i in 1..outs.len() {
        let jump = !outs[i].same_representation(&outs[i - 1]);
        if !jump {
            stalls += 1;
        }
        steps.push(StaircaseStep {
            index: i,
            s: coefs[i],
            step_norm: distance(&outs[i].m, &outs[i - 1].m),
            cumulative: distance(&outs[i].m, &outs[0].m),
            jump,
        });
    }
    Ok(Staircase {
        jumps: n_steps - stalls,
        stalls,
        steps,
    })
}
