use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numerics::{PrecisionMode, ReductionOrder};

/// Shape, seed and arithmetic settings of a [`ToyModel`](super::ToyModel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "defaults::d_model")]
    pub d_model: usize,
    #[serde(default = "defaults::n_layers")]
    pub n_layers: usize,
    #[serde(default = "defaults::n_heads")]
    pub n_heads: usize,
    #[serde(default = "defaults::d_ff")]
    pub d_ff: usize,
    #[serde(default = "defaults::vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "defaults::seq_len")]
    pub seq_len: usize,
    /// Required in config files; every other field has a default.
    pub seed: u64,
    #[serde(default = "defaults::precision")]
    pub precision: PrecisionMode,
    #[serde(default = "defaults::reduction")]
    pub reduction: ReductionOrder,
}

mod defaults {
    use super::*;

    pub fn d_model() -> usize {
        ModelConfig::default().d_model
    }
    pub fn n_layers() -> usize {
        ModelConfig::default().n_layers
    }
    pub fn n_heads() -> usize {
        ModelConfig::default().n_heads
    }
    pub fn d_ff() -> usize {
        ModelConfig::default().d_ff
    }
    pub fn vocab_size() -> usize {
        ModelConfig::default().vocab_size
    }
    pub fn seq_len() -> usize {
        ModelConfig::default().seq_len
    }
    pub fn precision() -> PrecisionMode {
        ModelConfig::default().precision
    }
    pub fn reduction() -> ReductionOrder {
        ModelConfig::default().reduction
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 8,
            n_heads: 4,
            d_ff: 256,
            vocab_size: 256,
            seq_len: 8,
            seed: 0,
            precision: PrecisionMode::Fp32,
            reduction: ReductionOrder::Sequential,
        }
    }
}

impl ModelConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Hash of everything that determines the weights and the `Fp64` map:
    /// shape, seed and reduction order. The working precision is left out.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let (tag, perm) = match self.reduction {
            ReductionOrder::Sequential => (0, 0),
            ReductionOrder::Pairwise => (1, 0),
            ReductionOrder::Permuted { seed } => (2, seed),
        };
        let words = [
            self.d_model as u64,
            self.n_layers as u64,
            self.n_heads as u64,
            self.d_ff as u64,
            self.vocab_size as u64,
            self.seq_len as u64,
            self.seed,
            tag,
            perm,
        ];
        for w in words {
            for b in w.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("seq_len", self.seq_len),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 2 {
            return Err(ModelError::InvalidConfig(
                "vocab_size must be at least 2 for a logit margin".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.head_dim(), 16);
    }

    #[test]
    fn heads_must_divide_width() {
        let c = ModelConfig {
            n_heads: 5,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(ModelError::InvalidConfig(m)) if m.contains("divisible")));
    }

    #[test]
    fn zero_sizes_rejected() {
        let c = ModelConfig {
            seq_len: 0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
