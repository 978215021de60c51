use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingPoint, LstOutput, ModelError, RepresentationMap};
use crate::linalg::{random_orthogonal, Matrix};
use crate::numerics::{dispatch, PrecisionMode, Reducer, ReductionOrder, Scalar};

/// Affine map `x ↦ A x + b` with `A = U Σ Vᵀ` built from known factors.
///
/// Its Jacobian is `A` everywhere, so every probe has a closed-form answer
/// against it. The offset `b` defaults to zero; a nonzero offset gives the
/// output a fixed magnitude, and therefore a fixed rounding grid, which is
/// what the boundary searches measure against.
#[derive(Debug, Clone)]
pub struct LinearOracle {
    a: Matrix<f64>,
    u: Matrix<f64>,
    sigma: Vec<f64>,
    v: Matrix<f64>,
    offset: Option<Vec<f64>>,
    readout: Option<Matrix<f64>>,
    precision: PrecisionMode,
    reduction: ReductionOrder,
}

/// `n` values from `hi` down to `lo`, evenly spaced in log scale.
pub fn log_spaced_sigma(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (l, h) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(h - (h - l) * i as f64 / (n - 1) as f64))
        .collect()
}

impl LinearOracle {
    pub fn from_factors(
        u: Matrix<f64>,
        sigma: Vec<f64>,
        v: Matrix<f64>,
    ) -> Result<Self, ModelError> {
        let d = sigma.len();
        if u.rows() != d || u.cols() != d || v.rows() != d || v.cols() != d {
            return Err(ModelError::InvalidConfig(format!(
                "factors must be {d}×{d}"
            )));
        }
        let scaled = Matrix::from_fn(d, d, |r, c| u[(r, c)] * sigma[c]);
        let a = scaled.matmul(&v.transpose());
        Ok(Self {
            a,
            u,
            sigma,
            v,
            offset: None,
            readout: None,
            precision: PrecisionMode::Fp64,
            reduction: ReductionOrder::Sequential,
        })
    }

    /// Random orthogonal `U` and `V` drawn from `seed`.
    pub fn seeded(sigma: Vec<f64>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = sigma.len();
        let u = random_orthogonal(d, &mut rng);
        let v = random_orthogonal(d, &mut rng);
        Self::from_factors(u, sigma, v).expect("square factors")
    }

    /// `A = diag(sigma)` with identity singular factors.
    pub fn diagonal(sigma: Vec<f64>) -> Self {
        let d = sigma.len();
        Self::from_factors(Matrix::identity(d), sigma, Matrix::identity(d)).expect("square")
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Self {
        assert_eq!(offset.len(), self.dim(), "offset length");
        self.offset = Some(offset);
        self
    }

    /// Adds a readout head whose rows play the role of unembedding rows.
    pub fn with_readout(mut self, readout: Matrix<f64>) -> Self {
        assert_eq!(readout.cols(), self.dim(), "readout width");
        self.readout = Some(readout);
        self
    }

    pub fn with_reduction(mut self, reduction: ReductionOrder) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn matrix(&self) -> &Matrix<f64> {
        &self.a
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn left_factor(&self) -> &Matrix<f64> {
        &self.u
    }

    pub fn right_factor(&self) -> &Matrix<f64> {
        &self.v
    }

    pub fn readout(&self) -> Option<&Matrix<f64>> {
        self.readout.as_ref()
    }

    /// A single-token point holding `x`.
    pub fn point(&self, x: Vec<f64>) -> EmbeddingPoint {
        let d = x.len();
        EmbeddingPoint::new(x, 1, d).expect("length matches")
    }

    pub fn origin(&self) -> EmbeddingPoint {
        EmbeddingPoint::zeros(1, self.dim())
    }

    /// `A x (+ b)` under the oracle's precision and reduction order.
    pub fn oracle_forward(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::ShapeMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        dispatch!(self.precision, S => {
            let xs: Vec<S> = x.iter().map(|&v| S::round_from(v)).collect();
            Ok(self.apply::<S>(&xs).into_iter().map(Scalar::widen).collect())
        })
    }

    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut red = Reducer::new(self.reduction);
        let mut y = product(&self.a, x, &mut red);
        if let Some(b) = &self.offset {
            for (yi, &bi) in y.iter_mut().zip(b) {
                *yi = *yi + S::round_from(bi);
            }
        }
        y
    }

    fn run<S: Scalar>(
        &self,
        point: &EmbeddingPoint,
        terms: &[(f64, &[f64])],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), ModelError> {
        if point.x.len() != self.dim() || point.seq_len != 1 {
            return Err(ModelError::ShapeMismatch {
                expected: self.dim(),
                got: point.x.len(),
            });
        }
        let x = point.realize::<S>(terms)?;
        let y = self.apply::<S>(&x);
        let logits = match &self.readout {
            Some(w) => product(w, &y, &mut Reducer::new(self.reduction)),
            None => y.clone(),
        };
        let widen = |v: &[S]| v.iter().map(|s| s.widen()).collect::<Vec<f64>>();
        let (x, y, logits) = (widen(&x), widen(&y), widen(&logits));
        if y.iter().chain(&logits).any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { stage: "oracle" });
        }
        Ok((x, y, logits))
    }
}

fn product<S: Scalar>(m: &Matrix<f64>, x: &[S], red: &mut Reducer<S>) -> Vec<S> {
    let mut row = vec![S::zero(); m.cols()];
    (0..m.rows())
        .map(|r| {
            for (dst, &w) in row.iter_mut().zip(m.row(r)) {
                *dst = S::round_from(w);
            }
            red.dot(&row, x)
        })
        .collect()
}

impl RepresentationMap for LinearOracle {
    fn width(&self) -> usize {
        self.dim()
    }

    fn precision(&self) -> PrecisionMode {
        self.precision
    }

    fn with_precision(&self, precision: PrecisionMode) -> Self {
        let mut out = self.clone();
        out.precision = precision;
        out
    }

    fn evaluate(
        &self,
        point: &EmbeddingPoint,
        terms: &[(f64, &[f64])],
    ) -> Result<LstOutput, ModelError> {
        let (_, y, logits) = dispatch!(self.precision, S => self.run::<S>(point, terms))?;
        Ok(LstOutput::from_parts(y, logits))
    }

    /// Two taps: the perturbed input and the output.
    fn taps(
        &self,
        point: &EmbeddingPoint,
        terms: &[(f64, &[f64])],
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let (x, y, _) = dispatch!(self.precision, S => self.run::<S>(point, terms))?;
        Ok(vec![x, y])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{distance, norm2};

    #[test]
    fn identity_and_diagonal() {
        let id = LinearOracle::diagonal(vec![1.0; 3]);
        assert_eq!(id.oracle_forward(&[0.5, -2.0, 3.0]).unwrap(), vec![0.5, -2.0, 3.0]);
        let d = LinearOracle::diagonal(vec![3.0, 2.0, 1.0]);
        assert_eq!(d.oracle_forward(&[0.0, 1.0, 0.0]).unwrap(), vec![0.0, 2.0, 0.0]);
        assert!(d.oracle_forward(&[1.0]).is_err());
    }

    #[test]
    fn singular_vectors_map_to_scaled_left_vectors() {
        let sigma = log_spaced_sigma(16, 1e-2, 1e2);
        let o = LinearOracle::seeded(sigma.clone(), 5);
        for k in 0..16 {
            let y = o.oracle_forward(&o.right_factor().column(k)).unwrap();
            let want: Vec<f64> = o.left_factor().column(k).iter().map(|u| u * sigma[k]).collect();
            assert!(distance(&y, &want) <= 1e-12 * sigma[0]);
            assert!((norm2(&y) - sigma[k]).abs() <= 1e-12 * sigma[0], "{k}");
        }
    }

    #[test]
    fn log_spacing_endpoints() {
        let s = log_spaced_sigma(64, 1e-3, 1e3);
        assert!((s[0] - 1e3).abs() < 1e-9);
        assert!((s[63] - 1e-3).abs() < 1e-15);
        assert!(s.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn offset_and_readout_shape_output() {
        let o = LinearOracle::diagonal(vec![2.0, 1.0])
            .with_offset(vec![1.0, 1.0])
            .with_readout(Matrix::from_row_major(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let out = o.evaluate(&o.point(vec![1.0, 0.0]), &[]).unwrap();
        assert_eq!(out.m, vec![3.0, 1.0]);
        assert_eq!((out.argmax_token, out.margin), (0, 2.0));
        let taps = o.taps(&o.point(vec![1.0, 0.0]), &[]).unwrap();
        assert_eq!(taps.len(), 2);
    }
}
