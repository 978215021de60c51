use std::fmt::Debug;

use half::bf16;
use num_traits::{Float, Zero};

use super::lattice::round_f64_to_bf16;
use super::{Direction, PrecisionMode};

/// A float type bound to one [`PrecisionMode`] lattice.
///
/// Arithmetic on the type itself must round into the lattice after every
/// operation. For `f32`/`f64` that is native IEEE behaviour; for [`bf16`] each
/// operation is carried out in `f32` and rounded back with ties-to-even, which
/// is correctly rounded because `f32` carries more than twice the bits of
/// bfloat16 plus two.
pub trait Scalar: Float + Debug + Default + Send + Sync + 'static {
    const PRECISION: PrecisionMode;

    /// Nearest lattice value to `x`, ties to even.
    fn round_from(x: f64) -> Self;

    /// Exact conversion to `f64`.
    fn widen(self) -> f64;

    fn to_bits_u64(self) -> u64;

    /// Adjacent lattice value in `dir`. Infinities saturate and NaN is returned unchanged.
    fn next_toward(self, dir: Direction) -> Self;
}

macro_rules! step_bits {
    ($x:expr, $dir:expr, $bits:ty, $from:expr, $to:expr) => {{
        let x = $x;
        if x.is_nan() {
            x
        } else if x == Self::zero() {
            let tiny = $from(1 as $bits);
            match $dir {
                Direction::TowardPosInf => tiny,
                Direction::TowardNegInf => -tiny,
            }
        } else if x.is_infinite() && ((x > Self::zero()) == ($dir == Direction::TowardPosInf)) {
            x
        } else {
            let bits: $bits = $to(x);
            let away_from_zero = (x > Self::zero()) == ($dir == Direction::TowardPosInf);
            $from(if away_from_zero { bits + 1 } else { bits - 1 })
        }
    }};
}

impl Scalar for f64 {
    const PRECISION: PrecisionMode = PrecisionMode::Fp64;

    #[inline]
    fn round_from(x: f64) -> Self {
        x
    }

    #[inline]
    fn widen(self) -> f64 {
        self
    }

    #[inline]
    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }

    fn next_toward(self, dir: Direction) -> Self {
        step_bits!(self, dir, u64, f64::from_bits, f64::to_bits)
    }
}

impl Scalar for f32 {
    const PRECISION: PrecisionMode = PrecisionMode::Fp32;

    #[inline]
    fn round_from(x: f64) -> Self {
        // `as` rounds to nearest, ties to even.
        x as f32
    }

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }

    #[inline]
    fn to_bits_u64(self) -> u64 {
        self.to_bits() as u64
    }

    fn next_toward(self, dir: Direction) -> Self {
        step_bits!(self, dir, u32, f32::from_bits, f32::to_bits)
    }
}

impl Scalar for bf16 {
    const PRECISION: PrecisionMode = PrecisionMode::Bf16Emulated;

    #[inline]
    fn round_from(x: f64) -> Self {
        bf16::from_bits((round_f64_to_bf16(x).to_bits() >> 16) as u16)
    }

    #[inline]
    fn widen(self) -> f64 {
        self.to_f32() as f64
    }

    #[inline]
    fn to_bits_u64(self) -> u64 {
        self.to_bits() as u64
    }

    fn next_toward(self, dir: Direction) -> Self {
        step_bits!(self, dir, u16, bf16::from_bits, bf16::to_bits)
    }
}
