use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweep::{base_output, check_directions};
use super::{LabeledDirection, ProbeError};
use crate::linalg::dot;
use crate::model::{EmbeddingPoint, LstOutput, ModelError, RepresentationMap};
use crate::numerics::{Direction, Scalar};
use crate::spectrum::SpectrumResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryConfig {
    /// Starting magnitude of the exponential search.
    pub s_init: f64,
    /// Largest magnitude tried before reporting the direction as unbounded.
    pub s_cap: f64,
    pub max_bisections: usize,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            s_init: 1e-14,
            s_cap: 1.0,
            max_bisections: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryStatus {
    /// `s_max` keeps `M` bitwise and its FP32 successor does not.
    Found,
    /// `M` never changed up to the cap.
    UnboundedAtCap,
    /// Even the smallest positive magnitude changes `M`.
    NoStableMagnitude,
    /// A forward pass overflowed during the search.
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryResult {
    pub direction_label: String,
    /// Largest FP32 magnitude with `M(x₀ + s·δ)` bitwise equal to `M(x₀)`.
    pub s_max: f64,
    /// `M` changes at the FP32 successor of `s_max`.
    pub s_next_flips: bool,
    pub search_evals: usize,
    pub status: BoundaryStatus,
}

struct Search<'a, M> {
    model: &'a M,
    x0: &'a EmbeddingPoint,
    dir: &'a [f64],
    base: &'a LstOutput,
    evals: usize,
}

impl<M: RepresentationMap> Search<'_, M> {
    fn changed(&mut self, s: f32) -> Result<bool, ModelError> {
        self.evals += 1;
        let out = self.model.evaluate(self.x0, &[(s as f64, self.dir)])?;
        Ok(!out.same_representation(self.base))
    }
}

/// Exponential search, bisection, then FP32 ULP refinement for the largest
/// magnitude along `dir` that leaves `M` bitwise unchanged.
///
/// Magnitudes live on the FP32 lattice. On `Found`, `s_max` and its FP32
/// successor bracket the first observed change exactly.
pub fn search_boundary<M: RepresentationMap>(
    model: &M,
    x0: &EmbeddingPoint,
    dir: &LabeledDirection,
    base: &LstOutput,
    cfg: &BoundaryConfig,
) -> BoundaryResult {
    let mut search = Search {
        model,
        x0,
        dir: &dir.v,
        base,
        evals: 0,
    };
    let outcome = run_search(&mut search, cfg);
    let (s_max, s_next_flips, status) = match outcome {
        Ok(found) => found,
        Err(_) => (0.0, false, BoundaryStatus::NonFinite),
    };
    BoundaryResult {
        direction_label: dir.label.clone(),
        s_max,
        s_next_flips,
        search_evals: search.evals,
        status,
    }
}

fn run_search<M: RepresentationMap>(
    search: &mut Search<'_, M>,
    cfg: &BoundaryConfig,
) -> Result<(f64, bool, BoundaryStatus), ModelError> {
    let cap = cfg.s_cap as f32;
    let mut lo = cfg.s_init as f32;
    let mut hi;
    if search.changed(lo)? {
        hi = lo;
        loop {
            lo = hi / 2.0;
            if lo == 0.0 {
                return Ok((0.0, false, BoundaryStatus::NoStableMagnitude));
            }
            if !search.changed(lo)? {
                break;
            }
            hi = lo;
        }
    } else {
        loop {
            let next = lo * 2.0;
            if next >= cap {
                if search.changed(cap)? {
                    hi = cap;
                    break;
                }
                return Ok((cap as f64, false, BoundaryStatus::UnboundedAtCap));
            }
            if search.changed(next)? {
                hi = next;
                break;
            }
            lo = next;
        }
    }
    // invariant from here on: M unchanged at lo, changed at hi
    for _ in 0..cfg.max_bisections {
        let mid = (0.5 * (lo as f64 + hi as f64)) as f32;
        if mid <= lo || mid >= hi {
            break;
        }
        if search.changed(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    loop {
        let next = lo.next_toward(Direction::TowardPosInf);
        if next >= hi {
            break;
        }
        if search.changed(next)? {
            hi = next;
        } else {
            lo = next;
        }
    }
    Ok((lo as f64, true, BoundaryStatus::Found))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularRecord {
    pub angle_index: usize,
    pub theta: f64,
    pub result: BoundaryResult,
}

/// Boundary search along `cos θ · a + sin θ · b` for `θ = 2πk/n`.
pub fn angular_boundary<M: RepresentationMap>(
    model: &M,
    x0: &EmbeddingPoint,
    dir_a: &LabeledDirection,
    dir_b: &LabeledDirection,
    n_angles: usize,
    cfg: &BoundaryConfig,
) -> Result<Vec<AngularRecord>, ProbeError> {
    check_directions(&[dir_a.clone(), dir_b.clone()], model.width())?;
    let overlap = dot(&dir_a.v, &dir_b.v);
    if overlap.abs() > super::UNIT_NORM_TOL {
        return Err(ProbeError::InvalidConfig(format!(
            "`{}` and `{}` are not orthogonal (dot = {overlap:e})",
            dir_a.label, dir_b.label
        )));
    }
    if n_angles == 0 {
        return Err(ProbeError::InvalidConfig("n_angles must be positive".into()));
    }
    let base = base_output(model, x0)?;
    Ok((0..n_angles)
        .into_par_iter()
        .map(|k| {
            let theta = std::f64::consts::TAU * k as f64 / n_angles as f64;
            let (c, s) = (theta.cos(), theta.sin());
            let v = dir_a.v.iter().zip(&dir_b.v).map(|(a, b)| c * a + s * b).collect();
            let dir = LabeledDirection {
                label: format!("theta{k}"),
                v,
            };
            AngularRecord {
                angle_index: k,
                theta,
                result: search_boundary(model, x0, &dir, &base, cfg),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBoundaryRecord {
    pub k: usize,
    pub sigma: f64,
    pub result: BoundaryResult,
}

/// Boundary search along every right singular vector of the spectrum.
pub fn spectrum_boundary<M: RepresentationMap>(
    model: &M,
    x0: &EmbeddingPoint,
    spectrum: &SpectrumResult,
    cfg: &BoundaryConfig,
) -> Result<Vec<SpectrumBoundaryRecord>, ProbeError> {
    let base = base_output(model, x0)?;
    let dirs: Vec<LabeledDirection> = (0..spectrum.len())
        .map(|k| LabeledDirection::singular(spectrum, k))
        .collect();
    check_directions(&dirs, model.width())?;
    Ok(dirs
        .par_iter()
        .enumerate()
        .map(|(k, dir)| SpectrumBoundaryRecord {
            k,
            sigma: spectrum.sigma[k],
            result: search_boundary(model, x0, dir, &base, cfg),
        })
        .collect())
}
