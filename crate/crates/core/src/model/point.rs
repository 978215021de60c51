use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numerics::Scalar;

/// Default standard deviation of seeded embedding entries.
pub const DEFAULT_EMBEDDING_SCALE: f64 = 0.02;

/// How seeded embedding entries are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointInit {
    /// Normal with standard deviation `scale`.
    #[default]
    Gaussian,
    /// Magnitude uniform on `[scale, 2·scale)` with a random sign. With a
    /// power-of-two `scale` every entry shares one binade, hence one ULP.
    Binade,
}

/// Which token positions a perturbation is added to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbSite {
    Last,
    Position(usize),
    /// The same perturbation slice is added at every position.
    All,
}

/// A full input embedding sequence, flattened row-major as `seq_len × d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPoint {
    pub x: Vec<f64>,
    pub seq_len: usize,
    pub d_model: usize,
    pub site: PerturbSite,
}

impl EmbeddingPoint {
    pub fn new(x: Vec<f64>, seq_len: usize, d_model: usize) -> Result<Self, ModelError> {
        if x.len() != seq_len * d_model {
            return Err(ModelError::ShapeMismatch {
                expected: seq_len * d_model,
                got: x.len(),
            });
        }
        Ok(Self {
            x,
            seq_len,
            d_model,
            site: PerturbSite::Last,
        })
    }

    pub fn zeros(seq_len: usize, d_model: usize) -> Self {
        Self {
            x: vec![0.0; seq_len * d_model],
            seq_len,
            d_model,
            site: PerturbSite::Last,
        }
    }

    /// Gaussian entries with standard deviation `scale`, drawn from `seed`.
    pub fn seeded(seq_len: usize, d_model: usize, seed: u64, scale: f64) -> Self {
        Self::seeded_with(seq_len, d_model, seed, scale, PointInit::Gaussian)
    }

    pub fn seeded_with(
        seq_len: usize,
        d_model: usize,
        seed: u64,
        scale: f64,
        init: PointInit,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = seq_len * d_model;
        let x = match init {
            PointInit::Gaussian => {
                let normal = Normal::new(0.0, scale).expect("finite scale");
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            }
            PointInit::Binade => (0..n)
                .map(|_| {
                    let magnitude = scale * (1.0 + rng.random::<f64>());
                    if rng.random::<bool>() {
                        magnitude
                    } else {
                        -magnitude
                    }
                })
                .collect(),
        };
        Self {
            x,
            seq_len,
            d_model,
            site: PerturbSite::Last,
        }
    }

    pub fn with_site(mut self, site: PerturbSite) -> Self {
        self.site = site;
        self
    }

    /// Token positions that perturbations are added to.
    pub fn sites(&self) -> Vec<usize> {
        match self.site {
            PerturbSite::Last => vec![self.seq_len - 1],
            PerturbSite::Position(p) => vec![p],
            PerturbSite::All => (0..self.seq_len).collect(),
        }
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.x[pos * self.d_model..(pos + 1) * self.d_model]
    }

    /// The embedding slice at the first perturbed position.
    pub fn perturbed_slice(&self) -> &[f64] {
        self.row(self.sites()[0])
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.x.len() != self.seq_len * self.d_model {
            return Err(ModelError::ShapeMismatch {
                expected: self.seq_len * self.d_model,
                got: self.x.len(),
            });
        }
        let out_of_range = match self.site {
            PerturbSite::Position(p) => p >= self.seq_len,
            _ => false,
        };
        if out_of_range || self.seq_len == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "perturbation site {:?} outside sequence of length {}",
                self.site, self.seq_len
            )));
        }
        Ok(())
    }

    /// Moves the point by `coef * dir` at its perturbation sites, in `f64`.
    pub fn shifted(&self, coef: f64, dir: &[f64]) -> EmbeddingPoint {
        let mut out = self.clone();
        for pos in self.sites() {
            for (xi, &vi) in out.x[pos * self.d_model..(pos + 1) * self.d_model]
                .iter_mut()
                .zip(dir)
            {
                *xi += coef * vi;
            }
        }
        out
    }

    /// FNV-1a over the shape, site and value bits. Stable across runs and platforms.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |word: u64| {
            for b in word.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.seq_len as u64);
        feed(self.d_model as u64);
        feed(match self.site {
            PerturbSite::Last => u64::MAX,
            PerturbSite::All => u64::MAX - 1,
            PerturbSite::Position(p) => p as u64,
        });
        for v in &self.x {
            feed(v.to_bits());
        }
        h
    }

    /// Rounds the point into `S` and applies the perturbation terms in order.
    ///
    /// Each term adds `coef * dir` at every perturbation site; the product and
    /// the sum both round into `S`, as they would in a low-precision program.
    pub(crate) fn realize<S: Scalar>(&self, terms: &[(f64, &[f64])]) -> Result<Vec<S>, ModelError> {
        let mut x: Vec<S> = self.x.iter().map(|&v| S::round_from(v)).collect();
        if terms.is_empty() {
            return Ok(x);
        }
        let d = self.d_model;
        for &(_, dir) in terms {
            if dir.len() != d {
                return Err(ModelError::ShapeMismatch {
                    expected: d,
                    got: dir.len(),
                });
            }
        }
        for pos in self.sites() {
            let row = &mut x[pos * d..(pos + 1) * d];
            for &(coef, dir) in terms {
                let c = S::round_from(coef);
                for (xi, &vi) in row.iter_mut().zip(dir) {
                    *xi = *xi + c * S::round_from(vi);
                }
            }
        }
        Ok(x)
    }
}

/// Output of one forward pass: the last hidden state and its readout.
#[derive(Debug, Clone, PartialEq)]
pub struct LstOutput {
    /// Final hidden state at the readout position, widened exactly to `f64`.
    pub m: Vec<f64>,
    pub logits: Vec<f64>,
    /// Largest minus second-largest logit.
    pub margin: f64,
    /// Index of the largest logit; the lowest index wins ties.
    pub argmax_token: usize,
}

impl LstOutput {
    pub fn from_parts(m: Vec<f64>, logits: Vec<f64>) -> Self {
        let (first, second) = top_two(&logits);
        let margin = match second {
            Some(s) => logits[first] - logits[s],
            None => 0.0,
        };
        Self {
            m,
            logits,
            margin,
            argmax_token: first,
        }
    }

    /// True iff the hidden states are bitwise identical.
    pub fn same_representation(&self, other: &LstOutput) -> bool {
        self.m.len() == other.m.len()
            && self.m.iter().zip(&other.m).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().chain(&self.logits).all(|v| v.is_finite())
    }
}

/// Indices of the largest and second-largest values. Ties go to the lower index.
pub fn top_two(values: &[f64]) -> (usize, Option<usize>) {
    let mut first = 0;
    let mut second: Option<usize> = None;
    for i in 1..values.len() {
        if values[i] > values[first] {
            second = Some(first);
            first = i;
        } else if second.is_none_or(|s| values[i] > values[s]) {
            second = Some(i);
        }
    }
    (first, second)
}
