use num_traits::Float;

use super::SpectrumError;
use crate::linalg::{dot, norm2, Matrix};

/// Sweeps allowed before the iteration is declared stuck.
pub const SWEEP_BUDGET: usize = 60;

/// Thin SVD `J = U diag(sigma) Vᵀ` with `sigma` descending.
///
/// `u` is `rows × k` and `v` is `cols × k` with `k = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub sigma: Vec<T>,
    pub u: Matrix<T>,
    pub v: Matrix<T>,
    pub sweeps: usize,
}

impl<T: Float> Svd<T> {
    pub fn reconstruct(&self) -> Matrix<T> {
        let scaled = Matrix::from_fn(self.u.rows(), self.u.cols(), |r, c| {
            self.u[(r, c)] * self.sigma[c]
        });
        scaled.matmul(&self.v.transpose())
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Column pairs are visited in fixed cyclic order and rotated until every
/// pair is orthogonal to working precision, so the result is deterministic.
/// Each `v` column is signed so its largest-magnitude entry is positive.
pub fn svd<T: Float>(j: &Matrix<T>) -> Result<Svd<T>, SpectrumError> {
    if !j.is_finite() {
        return Err(SpectrumError::NonFinite { column: None });
    }
    if j.rows() < j.cols() {
        let t = svd(&j.transpose())?;
        let mut out = Svd {
            sigma: t.sigma,
            u: t.v,
            v: t.u,
            sweeps: t.sweeps,
        };
        fix_signs(&mut out);
        return Ok(out);
    }
    let (m, n) = (j.rows(), j.cols());
    // columns of the working matrix, rotated in place
    let mut a: Vec<Vec<T>> = (0..n).map(|c| j.column(c)).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|c| (0..n).map(|r| if r == c { T::one() } else { T::zero() }).collect())
        .collect();
    let eps = T::epsilon();
    let total = j.frobenius_norm();
    let floor = total * total * eps * eps;
    let mut sweeps = 0;
    loop {
        if sweeps == SWEEP_BUDGET {
            return Err(SpectrumError::NoConvergence {
                sweeps,
                residual: off_diagonal(&a).to_f64().unwrap_or(f64::NAN)
                    / total.to_f64().unwrap_or(1.0).powi(2),
            });
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma.abs() <= floor {
                    continue;
                }
                rotated = true;
                let two = T::one() + T::one();
                let zeta = (beta - alpha) / (two * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<T> = a.iter().map(|c| norm2(c)).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).expect("finite norms"));
    let sigma: Vec<T> = order.iter().map(|&k| norms[k]).collect();
    let mut u_cols: Vec<Option<Vec<T>>> = order
        .iter()
        .map(|&k| {
            let s = norms[k];
            (s > T::zero()).then(|| a[k].iter().map(|&x| x / s).collect())
        })
        .collect();
    complete_basis(&mut u_cols, m);
    let u_cols: Vec<Vec<T>> = u_cols.into_iter().map(|c| c.expect("completed")).collect();
    let v_cols: Vec<Vec<T>> = order.iter().map(|&k| v[k].clone()).collect();
    let mut out = Svd {
        sigma,
        u: Matrix::from_columns(&u_cols),
        v: Matrix::from_columns(&v_cols),
        sweeps,
    };
    fix_signs(&mut out);
    Ok(out)
}

fn rotate<T: Float>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn off_diagonal<T: Float>(a: &[Vec<T>]) -> T {
    let mut acc = T::zero();
    for p in 0..a.len() {
        for q in p + 1..a.len() {
            let g = dot(&a[p], &a[q]);
            acc = acc + g * g;
        }
    }
    acc.sqrt()
}

/// Fills missing left vectors (zero singular values) with unit vectors
/// orthogonal to everything already present.
fn complete_basis<T: Float>(cols: &mut [Option<Vec<T>>], m: usize) {
    for k in 0..cols.len() {
        if cols[k].is_some() {
            continue;
        }
        let mut best: Option<(T, Vec<T>)> = None;
        for e in 0..m {
            let mut w: Vec<T> = (0..m).map(|r| if r == e { T::one() } else { T::zero() }).collect();
            for _ in 0..2 {
                for q in cols.iter().flatten() {
                    let p = dot(&w, q);
                    for (wi, &qi) in w.iter_mut().zip(q) {
                        *wi = *wi - p * qi;
                    }
                }
            }
            let n = norm2(&w);
            if best.as_ref().is_none_or(|(b, _)| n > *b) {
                best = Some((n, w));
            }
        }
        let (n, w) = best.expect("m > 0");
        cols[k] = Some(w.into_iter().map(|x| x / n).collect());
    }
}

fn fix_signs<T: Float>(out: &mut Svd<T>) {
    for k in 0..out.sigma.len() {
        let col = out.v.column(k);
        let lead = col
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > col[best].abs() { i } else { best });
        if col[lead] < T::zero() {
            let flipped: Vec<T> = col.iter().map(|&x| -x).collect();
            out.v.set_column(k, &flipped);
            let u: Vec<T> = out.u.column(k).iter().map(|&x| -x).collect();
            out.u.set_column(k, &u);
        }
    }
}
