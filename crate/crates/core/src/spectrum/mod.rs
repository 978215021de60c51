//! Reference Jacobian spectra: central differences in `f64` and a Jacobi SVD.

mod cache;
mod svd;

pub use cache::{cache_file_name, read_spectrum, write_spectrum, SpectrumCache};
pub use svd::{svd, Svd, SWEEP_BUDGET};

use rayon::prelude::*;

use crate::linalg::Matrix;
use crate::model::{EmbeddingPoint, LinearOracle, ModelError, RepresentationMap};
use crate::numerics::PrecisionMode;

/// Relative step used when the caller does not pick one.
pub const DEFAULT_FD_SCALE: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum SpectrumError {
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("non-finite value in Jacobian{}", .column.map(|c| format!(" column {c}")).unwrap_or_default())]
    NonFinite { column: Option<usize> },
    #[error("SVD did not converge after {sweeps} sweeps (relative off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("malformed spectrum file: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Singular triplets of `J = ∂M/∂x` at a base point, plus how they were obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    /// Descending.
    pub sigma: Vec<f64>,
    /// Left singular vectors, one per entry of `sigma`.
    pub u: Vec<Vec<f64>>,
    /// Right singular vectors: the probe directions in embedding space.
    pub v: Vec<Vec<f64>>,
    pub base_point: EmbeddingPoint,
    pub fd_step: f64,
}

impl SpectrumResult {
    pub fn from_svd(decomp: &Svd<f64>, base_point: EmbeddingPoint, fd_step: f64) -> Self {
        let k = decomp.sigma.len();
        Self {
            sigma: decomp.sigma.clone(),
            u: (0..k).map(|c| decomp.u.column(c)).collect(),
            v: (0..k).map(|c| decomp.v.column(c)).collect(),
            base_point,
            fd_step,
        }
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma[0]
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma[self.sigma.len() - 1]
    }

    pub fn condition_number(&self) -> f64 {
        self.sigma_max() / self.sigma_min()
    }

    /// `U diag(σ) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix<f64> {
        let rows = self.u.first().map_or(0, Vec::len);
        let cols = self.v.first().map_or(0, Vec::len);
        Matrix::from_fn(rows, cols, |r, c| {
            (0..self.sigma.len())
                .map(|k| self.u[k][r] * self.sigma[k] * self.v[k][c])
                .sum()
        })
    }

    /// Indices spread evenly over the spectrum, always including the first and last.
    pub fn spread_indices(&self, count: usize) -> Vec<usize> {
        let n = self.len();
        if count <= 1 || n <= 1 {
            return vec![0];
        }
        let mut out: Vec<usize> = (0..count)
            .map(|i| ((i * (n - 1)) as f64 / (count - 1) as f64).round() as usize)
            .collect();
        out.dedup();
        out
    }
}

/// Default step `1e-5 · max(1, ‖x‖∞)`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    DEFAULT_FD_SCALE * x.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

/// Central-difference Jacobian of `f` at `x`, one column per input coordinate.
///
/// Columns are evaluated in parallel and assembled by index.
pub fn fd_jacobian<F>(f: F, x: &[f64], step: f64) -> Result<Matrix<f64>, SpectrumError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, ModelError> + Sync,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(SpectrumError::InvalidStep(step));
    }
    let columns = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut probe = x.to_vec();
            probe[i] = x[i] + step;
            let plus = f(&probe)?;
            probe[i] = x[i] - step;
            let minus = f(&probe)?;
            let col: Vec<f64> = plus
                .iter()
                .zip(&minus)
                .map(|(p, m)| (p - m) / (2.0 * step))
                .collect();
            if col.iter().all(|v| v.is_finite()) {
                Ok(col)
            } else {
                Err(SpectrumError::NonFinite { column: Some(i) })
            }
        })
        .collect::<Result<Vec<_>, SpectrumError>>()?;
    Ok(Matrix::from_columns(&columns))
}

/// Jacobian of `M` with respect to the perturbed embedding slice, always in `f64`.
pub fn map_jacobian<M: RepresentationMap>(
    map: &M,
    point: &EmbeddingPoint,
    step: f64,
) -> Result<Matrix<f64>, SpectrumError> {
    let reference = map.with_precision(PrecisionMode::Fp64);
    let base = point.perturbed_slice().to_vec();
    fd_jacobian(
        |slice| {
            let delta: Vec<f64> = slice.iter().zip(&base).map(|(s, b)| s - b).collect();
            Ok(reference.evaluate(point, &[(1.0, &delta)])?.m)
        },
        &base,
        step,
    )
}

/// FD Jacobian followed by SVD. `step = None` picks [`default_fd_step`].
pub fn compute_spectrum<M: RepresentationMap>(
    map: &M,
    point: &EmbeddingPoint,
    step: Option<f64>,
) -> Result<SpectrumResult, SpectrumError> {
    let step = step.unwrap_or_else(|| default_fd_step(point.perturbed_slice()));
    let j = map_jacobian(map, point, step)?;
    let decomp = svd(&j)?;
    Ok(SpectrumResult::from_svd(&decomp, point.clone(), step))
}

/// The oracle's spectrum read off its construction, with no differencing.
pub fn oracle_spectrum(oracle: &LinearOracle, base: EmbeddingPoint) -> SpectrumResult {
    let d = oracle.dim();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| oracle.sigma()[b].total_cmp(&oracle.sigma()[a]));
    let mut u: Vec<Vec<f64>> = order.iter().map(|&k| oracle.left_factor().column(k)).collect();
    let mut v: Vec<Vec<f64>> = order.iter().map(|&k| oracle.right_factor().column(k)).collect();
    for (uk, vk) in u.iter_mut().zip(v.iter_mut()) {
        let lead = vk
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > vk[best].abs() { i } else { best });
        if vk[lead] < 0.0 {
            uk.iter_mut().for_each(|x| *x = -*x);
            vk.iter_mut().for_each(|x| *x = -*x);
        }
    }
    SpectrumResult {
        sigma: order.iter().map(|&k| oracle.sigma()[k]).collect(),
        u,
        v,
        base_point: base,
        fd_step: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::log_spaced_sigma;

    #[test]
    fn step_must_be_positive() {
        let r = fd_jacobian(|x| Ok(x.to_vec()), &[1.0], 0.0);
        assert!(matches!(r, Err(SpectrumError::InvalidStep(_))));
    }

    #[test]
    fn oracle_jacobian_matches_matrix() {
        let o = LinearOracle::seeded(log_spaced_sigma(8, 0.1, 10.0), 3);
        for step in [1e-6, 1e-4, 1e-3] {
            let j = map_jacobian(&o, &o.origin(), step).unwrap();
            let err = j.sub(o.matrix()).frobenius_norm() / o.matrix().frobenius_norm();
            assert!(err < 1e-9, "{step}: {err}");
        }
    }

    #[test]
    fn oracle_spectrum_is_descending_and_signed() {
        let o = LinearOracle::seeded(vec![1.0, 5.0, 3.0], 1);
        let s = oracle_spectrum(&o, o.origin());
        assert_eq!(s.sigma, vec![5.0, 3.0, 1.0]);
        let err = s.reconstruct().sub(o.matrix()).frobenius_norm();
        assert!(err < 1e-13);
        assert_eq!(s.spread_indices(3), vec![0, 1, 2]);
    }
}
