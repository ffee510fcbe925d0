//! Exact rational helpers shared by the LP and polytope machinery.
//!
//! All optimization code works over `BigRational` so that pivoting and
//! vertex enumeration are exact and deterministic. Quantities that are
//! irrational in the inputs (logarithms of relation sizes) are rationalized
//! once, up front, as dyadic fractions with denominator 2^48; every
//! downstream identity is then exact over the rationalized values, and the
//! rationalization error is orders of magnitude below every tolerance used
//! in tests.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rat = BigRational;

/// Bits of precision used when rationalizing logarithms.
pub const DYADIC_BITS: u32 = 48;

pub fn rat_int(n: i64) -> Rat {
    BigRational::from_integer(BigInt::from(n))
}

pub fn rat(num: i64, den: i64) -> Rat {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_from_u64(n: u64) -> Rat {
    BigRational::from_integer(BigInt::from(n))
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Out-of-range BigRational: fall back to a quotient of rounded parts.
        let n = r.numer().to_f64().unwrap_or(f64::MAX);
        let d = r.denom().to_f64().unwrap_or(f64::MAX);
        n / d
    })
}

/// Renders `3` or `-5/7`; the form used in JSON reports.
pub fn rat_to_string(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `3`, `-5/7`, or surrounding whitespace thereof.
pub fn parse_rat(s: &str) -> Result<Rat> {
    let t = s.trim();
    let mk_err = || Error::InvalidArgument(format!("cannot parse rational from {t:?}"));
    match t.split_once('/') {
        Some((num, den)) => {
            let n: BigInt = num.trim().parse().map_err(|_| mk_err())?;
            let d: BigInt = den.trim().parse().map_err(|_| mk_err())?;
            if d.is_zero() {
                return Err(Error::InvalidArgument(format!("zero denominator in {t:?}")));
            }
            Ok(BigRational::new(n, d))
        }
        None => {
            let n: BigInt = t.parse().map_err(|_| mk_err())?;
            Ok(BigRational::from_integer(n))
        }
    }
}

fn dyadic_from_f64(v: f64, round_up: bool) -> Rat {
    let scale = (1u64 << DYADIC_BITS) as f64;
    let scaled = v * scale;
    let rounded = if round_up {
        scaled.ceil()
    } else {
        scaled.round()
    };
    BigRational::new(
        BigInt::from(rounded as i128),
        BigInt::from(1i128 << DYADIC_BITS),
    )
}

/// log_base(value) as a dyadic rational with 2^-48 granularity.
///
/// `value` must be positive and `base` > 1.
pub fn dyadic_log(value: f64, base: u64) -> Result<Rat> {
    if !(value > 0.0) || value.is_infinite() {
        return Err(Error::InvalidArgument(format!(
            "logarithm of non-positive or non-finite value {value}"
        )));
    }
    if base < 2 {
        return Err(Error::InvalidArgument(format!(
            "logarithm base {base} must be at least 2"
        )));
    }
    Ok(dyadic_from_f64(value.log2() / (base as f64).log2(), false))
}

/// Same as [`dyadic_log`] but rounded up, for quantities that appear on the
/// tight side of a budget constraint.
pub fn dyadic_log_ceil(value: f64, base: u64) -> Result<Rat> {
    if !(value > 0.0) || value.is_infinite() {
        return Err(Error::InvalidArgument(format!(
            "logarithm of non-positive or non-finite value {value}"
        )));
    }
    if base < 2 {
        return Err(Error::InvalidArgument(format!(
            "logarithm base {base} must be at least 2"
        )));
    }
    Ok(dyadic_from_f64(value.log2() / (base as f64).log2(), true))
}

/// Componentwise domination: `a <= b` everywhere and `a != b`.
pub fn dominated_by(a: &[Rat], b: &[Rat]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).all(|(x, y)| x <= y) && a != b
}

/// Total order on rational vectors used everywhere a deterministic
/// canonical ordering is required (witness selection, vertex lists).
pub fn lex_cmp(a: &[Rat], b: &[Rat]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

pub fn rat_is_nonneg(r: &Rat) -> bool {
    !r.is_negative()
}
