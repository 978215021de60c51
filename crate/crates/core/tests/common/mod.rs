//! Exact-arithmetic oracles shared by the integration tests.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub fn pow2(e: i64) -> BigRational {
    if e >= 0 {
        BigRational::from_integer(BigInt::one() << (e as usize))
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << ((-e) as usize))
    }
}

/// Exact value of a finite `f64`.
pub fn exact(x: f64) -> BigRational {
    assert!(x.is_finite());
    if x == 0.0 {
        return BigRational::zero();
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1 } else { 1 };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, e) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    };
    BigRational::from_integer(BigInt::from(sign) * BigInt::from(mant)) * pow2(e)
}

/// Binary floating-point format: `precision` significant bits, smallest
/// normal exponent `emin`, largest exponent `emax`.
#[derive(Clone, Copy)]
pub struct Format {
    pub precision: i64,
    pub emin: i64,
    pub emax: i64,
}

pub const BF16: Format = Format { precision: 8, emin: -126, emax: 127 };
pub const FP32: Format = Format { precision: 24, emin: -126, emax: 127 };

fn floor_log2(v: &BigRational) -> i64 {
    let mut e = v.numer().bits() as i64 - v.denom().bits() as i64;
    while pow2(e) > *v {
        e -= 1;
    }
    while pow2(e + 1) <= *v {
        e += 1;
    }
    e
}

/// Round-to-nearest, ties-to-even into `fmt`. `None` means overflow to ±∞.
pub fn round_exact(v: &BigRational, fmt: Format) -> Option<BigRational> {
    if v.is_zero() {
        return Some(BigRational::zero());
    }
    let mag = v.abs();
    let e = floor_log2(&mag).max(fmt.emin);
    let quantum = pow2(e - (fmt.precision - 1));
    let scaled = &mag / &quantum;
    let floor = scaled.floor();
    let rem = &scaled - &floor;
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let mut n = floor.to_integer();
    let odd = (&n % BigInt::from(2)) == BigInt::one();
    if rem > half || (rem == half && odd) {
        n += 1;
    }
    let rounded = BigRational::from_integer(n) * quantum;
    // the largest finite value is (2 - 2^(1-p)) · 2^emax
    let max = (pow2(1) - pow2(1 - fmt.precision)) * pow2(fmt.emax);
    if rounded > max {
        return None;
    }
    Some(if v.is_negative() { -rounded } else { rounded })
}

pub fn to_f64(v: &BigRational) -> f64 {
    // exact for every value the oracles produce
    let n = v.numer().to_f64().unwrap();
    let d = v.denom().to_f64().unwrap();
    if d.is_finite() && n.is_finite() {
        n / d
    } else {
        // tiny subnormals: scale through powers of two
        let shift = v.denom().bits() as i64 - 1000;
        (v * pow2(shift)).to_f64().unwrap() * 2f64.powi(-(shift as i32))
    }
}

/// Reference BF16 rounding of an `f32`, total over all inputs.
pub fn bf16_oracle(x: f32) -> f32 {
    if x.is_nan() || x.is_infinite() {
        return x;
    }
    match round_exact(&exact(x as f64), BF16) {
        Some(r) => {
            let v = to_f64(&r) as f32;
            // keep the sign of zero
            if v == 0.0 { 0.0f32.copysign(x) } else { v }
        }
        None => f32::INFINITY.copysign(x),
    }
}

/// Sequential sum with every partial sum rounded into `fmt`, exactly.
pub fn sequential_sum_oracle(values: &[f64], fmt: Format) -> f64 {
    let mut acc = round_exact(&exact(values[0]), fmt).unwrap();
    for &v in &values[1..] {
        let x = round_exact(&exact(v), fmt).unwrap();
        acc = round_exact(&(acc + x), fmt).unwrap();
    }
    to_f64(&acc)
}

/// FP32 successor toward +∞ computed on the sign-magnitude integer encoding.
pub fn f32_next_up_by_bits(x: f32) -> f32 {
    let bits = x.to_bits();
    let negative = bits >> 31 == 1;
    let magnitude = bits & 0x7fff_ffff;
    if magnitude == 0 {
        return f32::from_bits(1);
    }
    if negative {
        f32::from_bits((1 << 31) | (magnitude - 1))
    } else {
        f32::from_bits(magnitude + 1)
    }
}

/// BF16 rounding of an `f32` on big integers: `x = M·2^E` exactly and the
/// result keeps 8 significant bits (fewer below the normal range).
pub fn bf16_oracle_int(x: f32) -> f32 {
    if !x.is_finite() {
        return x;
    }
    let bits = x.to_bits();
    let negative = bits >> 31 == 1;
    let exp = ((bits >> 23) & 0xff) as i64;
    let frac = (bits & 0x7f_ffff) as u64;
    if exp == 0 && frac == 0 {
        return x;
    }
    let (m, e) = if exp == 0 { (frac, -149) } else { (frac | 1 << 23, exp - 150) };
    let m = BigInt::from(m);
    let top = m.bits() as i64 - 1 + e;
    let q = top.max(-126) - 7;
    let (n, q) = if e >= q {
        (m, e)
    } else {
        let shift = (q - e) as usize;
        let n = &m >> shift;
        let rem = &m - (&n << shift);
        let half = BigInt::one() << (shift - 1);
        let n = if rem > half || (rem == half && n.bit(0)) { n + 1 } else { n };
        (n, q)
    };
    if n.bits() as i64 + q > 128 {
        return f32::INFINITY.copysign(x);
    }
    let v = (n.to_f64().unwrap() * 2f64.powi(q as i32)) as f32;
    if negative { -v } else { v }
}
