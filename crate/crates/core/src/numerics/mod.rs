//! Bit-exact floating-point substrate.
//!
//! Every probe in this crate runs its arithmetic inside one of three lattices
//! ([`PrecisionMode`]). The [`Scalar`] trait ties a Rust float type to its
//! lattice so the model code can be written once and instantiated for
//! `f64`, `f32` and emulated bfloat16. Runtime-selected entry points
//! (`*_in` functions) dispatch on a [`PrecisionMode`] value.

mod lattice;
mod reduce;
mod scalar;

pub use lattice::{nextafter, round_f64_to_bf16, round_to_bf16, ulp_spacing, UlpProbe};
pub use reduce::{dot, dot_in, permutation, reduce, reduce_in, Reducer};
pub use scalar::Scalar;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Which floating-point lattice arithmetic rounds into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrecisionMode {
    /// bfloat16 emulated on top of `f32`, rounded after every operation.
    #[serde(rename = "bf16")]
    Bf16Emulated,
    #[serde(rename = "fp32")]
    Fp32,
    #[serde(rename = "fp64")]
    Fp64,
}

impl PrecisionMode {
    pub const ALL: [PrecisionMode; 3] = [
        PrecisionMode::Bf16Emulated,
        PrecisionMode::Fp32,
        PrecisionMode::Fp64,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrecisionMode::Bf16Emulated => "bf16",
            PrecisionMode::Fp32 => "fp32",
            PrecisionMode::Fp64 => "fp64",
        }
    }

    /// Explicit significand bits, not counting the implicit leading one.
    pub fn mantissa_bits(self) -> u32 {
        match self {
            PrecisionMode::Bf16Emulated => 7,
            PrecisionMode::Fp32 => 23,
            PrecisionMode::Fp64 => 52,
        }
    }

    /// Rounds `x` into this lattice and widens it back, exactly.
    pub fn round(self, x: f64) -> f64 {
        dispatch!(self, S => S::round_from(x).widen())
    }

    pub fn is_representable(self, x: f64) -> bool {
        x.is_nan() || self.round(x).to_bits() == x.to_bits()
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrecisionMode {
    type Err = NumericsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bf16" | "bfloat16" => Ok(PrecisionMode::Bf16Emulated),
            "fp32" | "f32" | "float32" => Ok(PrecisionMode::Fp32),
            "fp64" | "f64" | "float64" => Ok(PrecisionMode::Fp64),
            other => Err(NumericsError::UnknownPrecision(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    TowardPosInf,
    TowardNegInf,
}

/// Order in which a sum is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionOrder {
    Sequential,
    Pairwise,
    /// Sequential accumulation over a seeded Fisher-Yates shuffle of the indices.
    Permuted { seed: u64 },
}

impl fmt::Display for ReductionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReductionOrder::Sequential => f.write_str("sequential"),
            ReductionOrder::Pairwise => f.write_str("pairwise"),
            ReductionOrder::Permuted { seed } => write!(f, "permuted:{seed}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("cannot reduce an empty sequence")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("{value:e} is not finite")]
    NotFinite { value: f64 },
    #[error("{value:e} is not representable in {mode}")]
    NotRepresentable { value: f64, mode: PrecisionMode },
    #[error("stepping {value:e} in {mode} overflows to infinity")]
    Overflow { value: f64, mode: PrecisionMode },
    #[error("unknown precision `{0}` (expected bf16, fp32 or fp64)")]
    UnknownPrecision(String),
}

/// Runs `$body` with `$s` bound to the scalar type of `$mode`.
macro_rules! dispatch {
    ($mode:expr, $s:ident => $body:expr) => {
        match $mode {
            $crate::numerics::PrecisionMode::Bf16Emulated => {
                type $s = ::half::bf16;
                $body
            }
            $crate::numerics::PrecisionMode::Fp32 => {
                type $s = f32;
                $body
            }
            $crate::numerics::PrecisionMode::Fp64 => {
                type $s = f64;
                $body
            }
        }
    };
}
pub(crate) use dispatch;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_names_round_trip() {
        for mode in PrecisionMode::ALL {
            assert_eq!(mode.name().parse::<PrecisionMode>().unwrap(), mode);
        }
        assert!("fp16".parse::<PrecisionMode>().is_err());
    }

    #[test]
    fn round_is_idempotent() {
        for mode in PrecisionMode::ALL {
            let r = mode.round(0.1);
            assert_eq!(mode.round(r), r);
            assert!(mode.is_representable(r));
        }
        assert!(!PrecisionMode::Fp32.is_representable(0.1));
        assert_eq!(PrecisionMode::Bf16Emulated.round(1.0 + 1.0 / 512.0), 1.0);
    }
}
