use super::{dispatch, Direction, NumericsError, PrecisionMode, Scalar};

/// Rounds an `f32` to the nearest bfloat16 value, ties to even.
///
/// The result is returned as an `f32` whose low 16 bits are zero. NaN inputs
/// come back as a quiet NaN with the same sign; infinities pass through, and
/// finite values above the bfloat16 range round to infinity.
pub fn round_to_bf16(x: f32) -> f32 {
    let bits = x.to_bits();
    if x.is_nan() {
        return f32::from_bits((bits | 0x0040_0000) & 0xFFFF_0000);
    }
    let lsb = (bits >> 16) & 1;
    f32::from_bits(bits.wrapping_add(0x7FFF + lsb) & 0xFFFF_0000)
}

/// Rounds an `f64` straight to bfloat16 without the double-rounding hazard of
/// going through a round-to-nearest `f32` first.
///
/// The intermediate `f32` is produced with round-to-odd, which keeps enough
/// information for the second rounding to be correct.
pub fn round_f64_to_bf16(x: f64) -> f32 {
    if x.is_nan() {
        return round_to_bf16(x as f32);
    }
    let mut f = x as f32;
    if f.is_infinite() && x.is_finite() {
        f = f32::MAX.copysign(f);
    } else if (f as f64).abs() > x.abs() {
        let toward_zero = if f > 0.0 {
            Direction::TowardNegInf
        } else {
            Direction::TowardPosInf
        };
        f = f.next_toward(toward_zero);
    }
    if (f as f64) != x {
        f = f32::from_bits(f.to_bits() | 1);
    }
    round_to_bf16(f)
}

impl Direction {
    pub fn flip(self) -> Direction {
        match self {
            Direction::TowardPosInf => Direction::TowardNegInf,
            Direction::TowardNegInf => Direction::TowardPosInf,
        }
    }
}

/// Adjacent representable value of `x` in the lattice of `mode`.
///
/// `x` must be finite and already representable in `mode`. Stepping past the
/// largest finite value is reported as [`NumericsError::Overflow`].
pub fn nextafter(x: f64, dir: Direction, mode: PrecisionMode) -> Result<f64, NumericsError> {
    if !x.is_finite() {
        return Err(NumericsError::NotFinite { value: x });
    }
    if !mode.is_representable(x) {
        return Err(NumericsError::NotRepresentable { value: x, mode });
    }
    let next = dispatch!(mode, S => S::round_from(x).next_toward(dir).widen());
    if next.is_infinite() {
        return Err(NumericsError::Overflow { value: x, mode });
    }
    Ok(next)
}

/// Distance from `|x|` to the next larger representable magnitude.
///
/// `x` is first rounded into the lattice of `mode`.
pub fn ulp_spacing(x: f64, mode: PrecisionMode) -> Result<f64, NumericsError> {
    if !x.is_finite() {
        return Err(NumericsError::NotFinite { value: x });
    }
    let a = mode.round(x).abs();
    let up = nextafter(a, Direction::TowardPosInf, mode)?;
    Ok(up - a)
}

/// A value and a stepping direction in some lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UlpProbe {
    pub value: f64,
    pub direction: Direction,
}

impl UlpProbe {
    pub fn new(value: f64, direction: Direction) -> Self {
        Self { value, direction }
    }

    /// Moves one lattice point and returns the probe at the new value.
    pub fn step(self, mode: PrecisionMode) -> Result<UlpProbe, NumericsError> {
        Ok(UlpProbe {
            value: nextafter(self.value, self.direction, mode)?,
            direction: self.direction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PrecisionMode::*;

    const UP: Direction = Direction::TowardPosInf;
    const DOWN: Direction = Direction::TowardNegInf;

    #[test]
    fn bf16_examples() {
        assert_eq!(round_to_bf16(1.0), 1.0);
        assert_eq!(round_to_bf16(f32::from_bits(0x3F80_0001)), 1.0);
        assert_eq!(round_to_bf16(f32::from_bits(0x3F80_8000)), 1.0);
        // tie with odd kept mantissa rounds up
        assert_eq!(round_to_bf16(f32::from_bits(0x3F81_8000)).to_bits(), 0x3F82_0000);
        assert_eq!(round_to_bf16(f32::INFINITY), f32::INFINITY);
        assert_eq!(round_to_bf16(f32::NEG_INFINITY), f32::NEG_INFINITY);
        assert_eq!(round_to_bf16(f32::MAX), f32::INFINITY);
        let nan = round_to_bf16(f32::from_bits(0x7F80_0001));
        assert!(nan.is_nan());
        assert_eq!(nan.to_bits() & 0xFFFF, 0);
        assert_ne!(nan.to_bits() & 0x0040_0000, 0);
    }

    #[test]
    fn bf16_from_f64_avoids_double_rounding() {
        // 1 + 2^-8 + 2^-40 lies just above a bf16 tie; f32 rounding alone would
        // land exactly on the tie and then round down to even.
        let x = 1.0 + 2f64.powi(-8) + 2f64.powi(-40);
        assert_eq!((x as f32).to_bits(), 0x3F80_8000);
        assert_eq!(round_f64_to_bf16(x).to_bits(), 0x3F81_0000);
        assert_eq!(round_f64_to_bf16(1e300), f32::INFINITY);
        assert_eq!(round_f64_to_bf16(-1e300), f32::NEG_INFINITY);
        assert_eq!(round_f64_to_bf16(1e-300), 0.0);
    }

    #[test]
    fn nextafter_examples() {
        assert_eq!(nextafter(1.0, UP, Fp32).unwrap(), 1.0 + 2f64.powi(-23));
        assert_eq!(nextafter(0.0, UP, Fp32).unwrap(), 2f64.powi(-149));
        assert_eq!(nextafter(-1.0, UP, Fp32).unwrap(), -(1.0 - 2f64.powi(-24)));
        assert_eq!(nextafter(1.0, UP, Bf16Emulated).unwrap(), 1.0 + 2f64.powi(-7));
        assert_eq!(nextafter(1.0, DOWN, Fp64).unwrap(), 1.0 - 2f64.powi(-53));
    }

    #[test]
    fn nextafter_flags_overflow_and_bad_input() {
        assert!(matches!(
            nextafter(f32::MAX as f64, UP, Fp32),
            Err(NumericsError::Overflow { .. })
        ));
        assert!(matches!(
            nextafter(f64::MAX, UP, Fp64),
            Err(NumericsError::Overflow { .. })
        ));
        assert!(matches!(
            nextafter(f64::INFINITY, DOWN, Fp64),
            Err(NumericsError::NotFinite { .. })
        ));
        assert!(matches!(
            nextafter(0.1, UP, Fp32),
            Err(NumericsError::NotRepresentable { .. })
        ));
    }

    #[test]
    fn ulp_spacing_examples() {
        assert_eq!(ulp_spacing(1.0, Fp32).unwrap(), 2f64.powi(-23));
        assert_eq!(ulp_spacing(2.0, Fp32).unwrap(), 2f64.powi(-22));
        assert_eq!(ulp_spacing(-2.0, Fp32).unwrap(), 2f64.powi(-22));
        assert_eq!(ulp_spacing(1.0, Bf16Emulated).unwrap(), 2f64.powi(-7));
        assert_eq!(ulp_spacing(0.0, Fp64).unwrap(), f64::from_bits(1));
    }

    #[test]
    fn bf16_ulp_agrees_with_rounding_scan() {
        // The first f32 above 1.0 that survives round_to_bf16 unchanged is 1 + ulp.
        let mut bits = 1.0f32.to_bits() + 1;
        while round_to_bf16(f32::from_bits(bits)) != f32::from_bits(bits) {
            bits += 1;
        }
        let scanned = f32::from_bits(bits) as f64 - 1.0;
        assert_eq!(scanned, ulp_spacing(1.0, Bf16Emulated).unwrap());
    }

    #[test]
    fn probe_steps_and_returns() {
        let p = UlpProbe::new(3.0, UP).step(Fp32).unwrap();
        assert!(p.value > 3.0);
        let back = UlpProbe::new(p.value, DOWN).step(Fp32).unwrap();
        assert_eq!(back.value, 3.0);
    }
}
