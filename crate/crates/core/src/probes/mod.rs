//! Measurement procedures: finite-ε sweeps, plateau statistics, decision
//! maps and ULP-exact boundary searches.

mod boundary;
mod decision;
mod instability;
mod sweep;

pub use boundary::{
    angular_boundary, search_boundary, spectrum_boundary, AngularRecord, BoundaryConfig,
    BoundaryResult, BoundaryStatus, SpectrumBoundaryRecord,
};
pub use decision::{
    decision_map, find_near_tie, grid_metrics, DecisionMap, MapAxes, NearTieConfig, Winner,
};
pub use instability::{
    instability_from_states, instability_sweep, micro_continuity, InstabilityReport,
    InstabilitySummary, Staircase, StaircaseStep,
};
pub use sweep::{
    directional_sweep, layerwise_gain, noise_averaged_kappa, LayerGainRecord, LayerGainTable,
    NoiseConfig, SweepConfig, SweepRecord,
};

use serde::{Deserialize, Serialize};

use crate::model::{LstOutput, ModelError};
use crate::spectrum::SpectrumResult;

/// Unit-norm tolerance for probe directions.
pub const UNIT_NORM_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("invalid probe configuration: {0}")]
    InvalidConfig(String),
    #[error("direction `{label}` is not unit-norm (‖v‖ = {norm})")]
    NotUnitNorm { label: String, norm: f64 },
    #[error("non-finite output at the base point")]
    NonFiniteBase,
    #[error("no near-tie reachable: {0}")]
    NoNearTie(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ProbeError {
    /// True for failures caused by NaN or infinity rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ProbeError::NonFiniteBase | ProbeError::Model(ModelError::NonFinite { .. })
        )
    }
}

/// A probe direction with the name it carries into output tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDirection {
    pub label: String,
    pub v: Vec<f64>,
}

impl LabeledDirection {
    pub fn new(label: impl Into<String>, v: Vec<f64>) -> Result<Self, ProbeError> {
        let label = label.into();
        let norm = crate::linalg::norm2(&v);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(ProbeError::NotUnitNorm { label, norm });
        }
        Ok(Self { label, v })
    }

    /// Scales `v` to unit norm first.
    pub fn normalized(label: impl Into<String>, v: &[f64]) -> Result<Self, ProbeError> {
        let label = label.into();
        let unit = crate::linalg::normalized(v).ok_or_else(|| ProbeError::NotUnitNorm {
            label: label.clone(),
            norm: 0.0,
        })?;
        Ok(Self { label, v: unit })
    }

    /// Right singular vector `k` (0-based), labelled `v{k+1}`.
    pub fn singular(spectrum: &SpectrumResult, k: usize) -> Self {
        Self {
            label: format!("v{}", k + 1),
            v: spectrum.v[k].clone(),
        }
    }

    /// Coordinate axis `i` (0-based), labelled `e{i+1}`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Self {
            label: format!("e{}", i + 1),
            v,
        }
    }

    /// Uniformly random unit vector drawn from `seed`.
    pub fn random(dim: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            if let Some(unit) = crate::linalg::normalized(&v) {
                return Self {
                    label: format!("rand{seed}"),
                    v: unit,
                };
            }
        }
    }
}

/// `n` log-spaced magnitudes from `lo` to `hi` inclusive, strictly increasing.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2, "log_grid needs 0 < lo < hi and n ≥ 2");
    let (l, h) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(l + (h - l) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Default ε grid: 120 points over `[1e-14, 1e-1]`.
pub fn default_eps_grid() -> Vec<f64> {
    log_grid(1e-14, 1e-1, 120)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Constant,
    Chaotic,
    SignalDominated,
    Unclassified,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Constant => "constant",
            Regime::Chaotic => "chaotic",
            Regime::SignalDominated => "signal_dominated",
            Regime::Unclassified => "unclassified",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Decision rule for [`Regime`], relative to the reference spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeThresholds {
    /// Chaotic iff `d_eff > c_chaos · σ₁`.
    pub c_chaos: f64,
    /// Signal band lower edge is `σ_d · signal_low`.
    pub signal_low: f64,
    /// Signal band upper edge is `σ₁ · signal_high`.
    pub signal_high: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            c_chaos: 10.0,
            signal_low: 0.1,
            signal_high: 10.0,
        }
    }
}

impl RegimeThresholds {
    pub fn classify(&self, d_eff: f64, bitwise_constant: bool, sigma_max: f64, sigma_min: f64) -> Regime {
        if bitwise_constant {
            Regime::Constant
        } else if d_eff > self.c_chaos * sigma_max {
            Regime::Chaotic
        } else if d_eff >= sigma_min * self.signal_low && d_eff <= sigma_max * self.signal_high {
            Regime::SignalDominated
        } else {
            Regime::Unclassified
        }
    }
}

/// Drops runs shorter than `min_run` and unclassified points, then merges
/// neighbouring runs with the same label.
pub fn smooth_regimes(seq: &[Regime], min_run: usize) -> Vec<Regime> {
    let mut runs: Vec<(Regime, usize)> = Vec::new();
    for &r in seq {
        match runs.last_mut() {
            Some((last, n)) if *last == r => *n += 1,
            _ => runs.push((r, 1)),
        }
    }
    let mut out: Vec<Regime> = Vec::new();
    for (r, n) in runs {
        if n < min_run || r == Regime::Unclassified {
            continue;
        }
        if out.last() != Some(&r) {
            out.push(r);
        }
    }
    out
}

/// True iff the smoothed sequence reads constant, then chaotic, then
/// signal-dominated, each part possibly empty.
pub fn is_ordered_trichotomy(seq: &[Regime], min_run: usize) -> bool {
    let rank = |r: &Regime| match r {
        Regime::Constant => 0,
        Regime::Chaotic => 1,
        _ => 2,
    };
    smooth_regimes(seq, min_run)
        .windows(2)
        .all(|w| rank(&w[0]) < rank(&w[1]))
}

/// Euclidean distance between two hidden states, in `f64`.
pub fn state_distance(a: &LstOutput, b: &LstOutput) -> f64 {
    crate::linalg::distance(&a.m, &b.m)
}

/// Spearman rank correlation; tied values share their average rank.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut vx, mut vy) = (0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Mean and sample (n − 1) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Regime::*;

    #[test]
    fn classifier_follows_thresholds() {
        let t = RegimeThresholds::default();
        assert_eq!(t.classify(0.0, true, 10.0, 1.0), Constant);
        assert_eq!(t.classify(101.0, false, 10.0, 1.0), Chaotic);
        assert_eq!(t.classify(100.0, false, 10.0, 1.0), SignalDominated);
        assert_eq!(t.classify(0.1, false, 10.0, 1.0), SignalDominated);
        assert_eq!(t.classify(0.05, false, 10.0, 1.0), Unclassified);
    }

    #[test]
    fn hysteresis_drops_flickers() {
        let seq = [Constant, Constant, Chaotic, Constant, Chaotic, Chaotic, SignalDominated, SignalDominated];
        assert_eq!(smooth_regimes(&seq, 2), vec![Constant, Chaotic, SignalDominated]);
        assert!(is_ordered_trichotomy(&seq, 2));
        let bad = [Chaotic, Chaotic, Constant, Constant];
        assert!(!is_ordered_trichotomy(&bad, 2));
        assert!(is_ordered_trichotomy(&[], 2));
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn grid_is_increasing_with_exact_ends() {
        let g = default_eps_grid();
        assert_eq!(g.len(), 120);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!((g[0] - 1e-14).abs() < 1e-28 && (g[119] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn directions_must_be_unit() {
        assert!(LabeledDirection::new("x", vec![1.0, 1.0]).is_err());
        let d = LabeledDirection::normalized("x", &[3.0, 4.0]).unwrap();
        assert_eq!(d.v, vec![0.6, 0.8]);
        let r = LabeledDirection::random(16, 3);
        assert!((crate::linalg::norm2(&r.v) - 1.0).abs() < 1e-12);
    }
}
