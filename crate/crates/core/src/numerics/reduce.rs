use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dispatch, NumericsError, PrecisionMode, ReductionOrder, Scalar};

/// Seeded Fisher-Yates shuffle of `0..len`.
///
/// The permutation depends only on `(len, seed)`, so every reduction of a
/// given length under one seed visits its operands in the same order.
pub fn permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Sums `values` in the given order; every partial sum rounds into `S`.
pub fn reduce<S: Scalar>(values: &[S], order: ReductionOrder) -> Result<S, NumericsError> {
    if values.is_empty() {
        return Err(NumericsError::EmptyInput);
    }
    Ok(match order {
        ReductionOrder::Sequential => sequential(values.iter().copied()),
        ReductionOrder::Pairwise => pairwise(values),
        ReductionOrder::Permuted { seed } => {
            let perm = permutation(values.len(), seed);
            sequential(perm.iter().map(|&i| values[i]))
        }
    })
}

/// Products `a[i] * b[i]` rounded into `S`, then reduced with [`reduce`].
pub fn dot<S: Scalar>(a: &[S], b: &[S], order: ReductionOrder) -> Result<S, NumericsError> {
    if a.len() != b.len() {
        return Err(NumericsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let products: Vec<S> = a.iter().zip(b).map(|(&x, &y)| x * y).collect();
    reduce(&products, order)
}

/// [`reduce`] on `f64` inputs, which are first rounded into `mode`.
pub fn reduce_in(
    values: &[f64],
    order: ReductionOrder,
    mode: PrecisionMode,
) -> Result<f64, NumericsError> {
    dispatch!(mode, S => {
        let v: Vec<S> = values.iter().map(|&x| S::round_from(x)).collect();
        reduce(&v, order).map(Scalar::widen)
    })
}

/// [`dot`] on `f64` inputs, which are first rounded into `mode`.
pub fn dot_in(
    a: &[f64],
    b: &[f64],
    order: ReductionOrder,
    mode: PrecisionMode,
) -> Result<f64, NumericsError> {
    dispatch!(mode, S => {
        let a: Vec<S> = a.iter().map(|&x| S::round_from(x)).collect();
        let b: Vec<S> = b.iter().map(|&x| S::round_from(x)).collect();
        dot(&a, &b, order).map(Scalar::widen)
    })
}

fn sequential<S: Scalar>(mut it: impl Iterator<Item = S>) -> S {
    let first = it.next().expect("non-empty");
    it.fold(first, |acc, x| acc + x)
}

fn pairwise<S: Scalar>(v: &[S]) -> S {
    if v.len() == 1 {
        return v[0];
    }
    let mid = v.len() / 2;
    pairwise(&v[..mid]) + pairwise(&v[mid..])
}

/// Allocation-free repeated reductions for hot loops.
///
/// Produces results bitwise identical to [`reduce`] and [`dot`] under the same
/// order, but reuses its scratch space and caches permutations by length.
/// Callers guarantee non-empty, equal-length inputs.
#[derive(Debug, Clone)]
pub struct Reducer<S> {
    order: ReductionOrder,
    scratch: Vec<S>,
    perms: HashMap<usize, Vec<usize>>,
}

impl<S: Scalar> Reducer<S> {
    pub fn new(order: ReductionOrder) -> Self {
        Self {
            order,
            scratch: Vec::new(),
            perms: HashMap::new(),
        }
    }

    pub fn order(&self) -> ReductionOrder {
        self.order
    }

    #[inline]
    pub fn dot(&mut self, a: &[S], b: &[S]) -> S {
        debug_assert_eq!(a.len(), b.len());
        debug_assert!(!a.is_empty());
        match self.order {
            ReductionOrder::Sequential => {
                let mut acc = a[0] * b[0];
                for i in 1..a.len() {
                    acc = acc + a[i] * b[i];
                }
                acc
            }
            ReductionOrder::Pairwise => {
                self.scratch.clear();
                self.scratch.extend(a.iter().zip(b).map(|(&x, &y)| x * y));
                pairwise(&self.scratch)
            }
            ReductionOrder::Permuted { seed } => {
                let perm = self
                    .perms
                    .entry(a.len())
                    .or_insert_with(|| permutation(a.len(), seed));
                let mut acc = a[perm[0]] * b[perm[0]];
                for &i in &perm[1..] {
                    acc = acc + a[i] * b[i];
                }
                acc
            }
        }
    }

    /// Dot product of `a` with the strided sequence `b[offset + k * stride]`.
    pub fn dot_strided(&mut self, a: &[S], b: &[S], offset: usize, stride: usize) -> S {
        self.scratch.clear();
        self.scratch
            .extend((0..a.len()).map(|k| b[offset + k * stride]));
        let gathered = std::mem::take(&mut self.scratch);
        let r = self.dot(a, &gathered);
        self.scratch = gathered;
        r
    }

    #[inline]
    pub fn sum(&mut self, v: &[S]) -> S {
        debug_assert!(!v.is_empty());
        match self.order {
            ReductionOrder::Sequential => sequential(v.iter().copied()),
            ReductionOrder::Pairwise => pairwise(v),
            ReductionOrder::Permuted { seed } => {
                let perm = self
                    .perms
                    .entry(v.len())
                    .or_insert_with(|| permutation(v.len(), seed));
                sequential(perm.iter().map(|&i| v[i]))
            }
        }
    }
}
