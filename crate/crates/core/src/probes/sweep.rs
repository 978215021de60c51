use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{state_distance, LabeledDirection, ProbeError, Regime, RegimeThresholds};
use crate::linalg::distance;
use crate::model::{EmbeddingPoint, LstOutput, RepresentationMap};
use crate::numerics::PrecisionMode;
use crate::spectrum::SpectrumResult;

#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Strictly increasing, positive.
    pub eps_grid: Vec<f64>,
    pub directions: Vec<LabeledDirection>,
    pub precision: PrecisionMode,
    pub base_point: EmbeddingPoint,
    pub thresholds: RegimeThresholds,
}

impl SweepConfig {
    pub fn validate(&self, width: usize) -> Result<(), ProbeError> {
        if self.eps_grid.is_empty() {
            return Err(ProbeError::InvalidConfig("empty ε grid".into()));
        }
        if self.eps_grid[0] <= 0.0 || self.eps_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ProbeError::InvalidConfig(
                "ε grid must be positive and strictly increasing".into(),
            ));
        }
        check_directions(&self.directions, width)
    }
}

pub(crate) fn check_directions(dirs: &[LabeledDirection], width: usize) -> Result<(), ProbeError> {
    for d in dirs {
        if d.v.len() != width {
            return Err(ProbeError::InvalidConfig(format!(
                "direction `{}` has length {}, expected {width}",
                d.label,
                d.v.len()
            )));
        }
        LabeledDirection::new(d.label.clone(), d.v.clone())?;
    }
    Ok(())
}

/// One `(ε, v) ↦ D(ε, v)` measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub direction_index: usize,
    pub eps_index: usize,
    pub eps: f64,
    pub direction_label: String,
    pub d_eff: f64,
    pub bitwise_constant: bool,
    pub regime: Regime,
    /// The perturbed forward pass produced NaN or infinity.
    pub flagged: bool,
}

pub(crate) fn base_output<M: RepresentationMap>(
    map: &M,
    point: &EmbeddingPoint,
) -> Result<LstOutput, ProbeError> {
    match map.evaluate(point, &[]) {
        Ok(out) => Ok(out),
        Err(crate::model::ModelError::NonFinite { .. }) => Err(ProbeError::NonFiniteBase),
        Err(e) => Err(e.into()),
    }
}

/// `D(ε, v) = ‖M(x + εv) − M(x)‖₂ / ε` over the grid, forwards in the
/// configured precision and the difference in `f64`.
///
/// Records come back ordered by direction, then by ε.
pub fn directional_sweep<M: RepresentationMap>(
    model: &M,
    spectrum: &SpectrumResult,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRecord>, ProbeError> {
    let map = model.with_precision(cfg.precision);
    cfg.validate(map.width())?;
    let base = base_output(&map, &cfg.base_point)?;
    let (s_max, s_min) = (spectrum.sigma_max(), spectrum.sigma_min());
    let n_eps = cfg.eps_grid.len();
    let records = (0..cfg.directions.len() * n_eps)
        .into_par_iter()
        .map(|idx| {
            let (di, ei) = (idx / n_eps, idx % n_eps);
            let dir = &cfg.directions[di];
            let eps = cfg.eps_grid[ei];
            let mut rec = SweepRecord {
                direction_index: di,
                eps_index: ei,
                eps,
                direction_label: dir.label.clone(),
                d_eff: f64::NAN,
                bitwise_constant: false,
                regime: Regime::Unclassified,
                flagged: true,
            };
            match map.evaluate(&cfg.base_point, &[(eps, &dir.v)]) {
                Ok(out) => {
                    rec.bitwise_constant = out.same_representation(&base);
                    rec.d_eff = if rec.bitwise_constant {
                        0.0
                    } else {
                        state_distance(&out, &base) / eps
                    };
                    rec.regime =
                        cfg.thresholds
                            .classify(rec.d_eff, rec.bitwise_constant, s_max, s_min);
                    rec.flagged = false;
                }
                Err(crate::model::ModelError::NonFinite { .. }) => {}
                Err(e) => return Err(e.into()),
            }
            Ok(rec)
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    Ok(records)
}

/// Per-tap gains `‖tap_ℓ(x + εv) − tap_ℓ(x)‖ / ε`, one column per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGainTable {
    pub eps: f64,
    pub labels: Vec<String>,
    /// `gains[layer][direction]`
    pub gains: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGainRecord {
    pub layer: usize,
    pub direction_label: String,
    pub eps: f64,
    pub gain: f64,
}

impl LayerGainTable {
    pub fn records(&self) -> Vec<LayerGainRecord> {
        let mut out = Vec::new();
        for (layer, row) in self.gains.iter().enumerate() {
            for (label, &gain) in self.labels.iter().zip(row) {
                out.push(LayerGainRecord {
                    layer,
                    direction_label: label.clone(),
                    eps: self.eps,
                    gain,
                });
            }
        }
        out
    }

    /// Gains at the last tap.
    pub fn final_layer(&self) -> &[f64] {
        self.gains.last().map_or(&[], Vec::as_slice)
    }
}

pub fn layerwise_gain<M: RepresentationMap>(
    model: &M,
    point: &EmbeddingPoint,
    eps: f64,
    directions: &[LabeledDirection],
) -> Result<LayerGainTable, ProbeError> {
    if !(eps > 0.0) {
        return Err(ProbeError::InvalidConfig("ε must be positive".into()));
    }
    check_directions(directions, model.width())?;
    let base = model.taps(point, &[])?;
    let columns = directions
        .par_iter()
        .map(|d| {
            let taps = model.taps(point, &[(eps, &d.v)])?;
            Ok(taps
                .iter()
                .zip(&base)
                .map(|(t, b)| distance(t, b) / eps)
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    let gains = (0..base.len())
        .map(|layer| columns.iter().map(|c| c[layer]).collect())
        .collect();
    Ok(LayerGainTable {
        eps,
        labels: directions.iter().map(|d| d.label.clone()).collect(),
        gains,
    })
}

/// Noise draws for [`noise_averaged_kappa`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub n_samples: usize,
    /// Offsets `c_j` are uniform on `[-noise_mag, noise_mag)` along the probe direction.
    pub noise_mag: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            n_samples: 1,
            noise_mag: 1e-9,
            seed: 0,
        }
    }
}

/// `‖(1/n) Σ M(x₀ + εv + c_j v) − (1/n) Σ M(x₀ + c_j v)‖ / ε`.
///
/// Means are accumulated in `f64`. Zero offsets are skipped rather than
/// applied, so one noiseless sample reproduces the plain `D(ε, v)` bitwise.
pub fn noise_averaged_kappa<M: RepresentationMap>(
    model: &M,
    x0: &EmbeddingPoint,
    direction: &LabeledDirection,
    eps: f64,
    noise: &NoiseConfig,
) -> Result<f64, ProbeError> {
    if noise.n_samples == 0 {
        return Err(ProbeError::InvalidConfig("n_samples must be at least 1".into()));
    }
    if !(eps > 0.0) || !(noise.noise_mag >= 0.0) {
        return Err(ProbeError::InvalidConfig("ε must be positive and noise_mag non-negative".into()));
    }
    check_directions(std::slice::from_ref(direction), model.width())?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let offsets: Vec<f64> = (0..noise.n_samples)
        .map(|_| {
            if noise.noise_mag == 0.0 {
                0.0
            } else {
                noise.noise_mag * rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    let v = direction.v.as_slice();
    let pairs = offsets
        .par_iter()
        .map(|&c| {
            let (moved, anchor) = if c == 0.0 {
                (model.evaluate(x0, &[(eps, v)])?, model.evaluate(x0, &[])?)
            } else {
                (
                    model.evaluate(x0, &[(eps, v), (c, v)])?,
                    model.evaluate(x0, &[(c, v)])?,
                )
            };
            Ok((moved.m, anchor.m))
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    let d = pairs[0].0.len();
    let n = noise.n_samples as f64;
    let mut moved = vec![0.0; d];
    let mut anchor = vec![0.0; d];
    for (m, a) in &pairs {
        for i in 0..d {
            moved[i] += m[i];
            anchor[i] += a[i];
        }
    }
    for i in 0..d {
        moved[i] /= n;
        anchor[i] /= n;
    }
    Ok(distance(&moved, &anchor) / eps)
}
