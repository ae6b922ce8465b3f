//! Rational number text encoding.
//!
//! Rationals travel as `"p/q"` strings in lowest terms with the sign on the
//! numerator; integers are written without a denominator. Parsing also
//! accepts plain decimals such as `"0.5"` or `"-1.25e-3"`, which are converted
//! exactly.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Longest accepted numeric literal, in bytes, and longest `p/q` form of any
/// parsed value. Keeps hostile inputs from allocating unbounded integers.
pub const MAX_LITERAL_LEN: usize = 4096;

/// Largest accepted decimal exponent magnitude.
const MAX_EXPONENT: u32 = 4096;

fn parse_err(input: &str, reason: impl Into<String>) -> Error {
    Error::Parse {
        what: "rational",
        input: input.chars().take(64).collect(),
        reason: reason.into(),
    }
}

fn parse_int(input: &str, digits: &str) -> Result<BigInt> {
    let body = digits
        .strip_prefix('-')
        .or_else(|| digits.strip_prefix('+'))
        .unwrap_or(digits);
    if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit()) {
        return Err(parse_err(input, "expected decimal digits"));
    }
    digits
        .parse::<BigInt>()
        .map_err(|e| parse_err(input, e.to_string()))
}

/// Parses `"p/q"`, `"p"` or a decimal literal into an exact rational.
pub fn parse_rational(input: &str) -> Result<BigRational> {
    let s = input.trim();
    if s.is_empty() {
        return Err(parse_err(input, "empty string"));
    }
    if s.len() > MAX_LITERAL_LEN {
        return Err(parse_err(input, "literal too long"));
    }
    if let Some((num, den)) = s.split_once('/') {
        let num = parse_int(input, num.trim())?;
        let den = den.trim();
        if den.starts_with(['-', '+']) {
            return Err(parse_err(input, "sign belongs on the numerator"));
        }
        let den = parse_int(input, den)?;
        if den.is_zero() {
            return Err(parse_err(input, "zero denominator"));
        }
        return Ok(BigRational::new(num, den));
    }
    if s.contains(['.', 'e', 'E']) {
        let x = parse_decimal(input, s)?;
        // An exponent can push the value past what its own `p/q` form may hold.
        if format_rational(&x).len() > MAX_LITERAL_LEN {
            return Err(parse_err(input, "value too long"));
        }
        return Ok(x);
    }
    Ok(BigRational::from_integer(parse_int(input, s)?))
}

fn parse_decimal(input: &str, s: &str) -> Result<BigRational> {
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], Some(&s[i + 1..])),
        None => (s, None),
    };
    let (negative, mantissa) = match mantissa.as_bytes().first() {
        Some(b'-') => (true, &mantissa[1..]),
        Some(b'+') => (false, &mantissa[1..]),
        _ => (false, mantissa),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(parse_err(input, "missing digits"));
    }
    if !int_part
        .bytes()
        .chain(frac_part.bytes())
        .all(|b| b.is_ascii_digit())
    {
        return Err(parse_err(input, "invalid decimal digits"));
    }
    let digits = format!("{int_part}{frac_part}");
    let mut value = BigRational::from_integer(
        digits
            .parse::<BigInt>()
            .map_err(|e| parse_err(input, e.to_string()))?,
    );
    let mut exp: i64 = -(frac_part.len() as i64);
    if let Some(e) = exponent {
        let e: i64 = e
            .parse()
            .map_err(|_| parse_err(input, "invalid exponent"))?;
        if e.unsigned_abs() > u64::from(MAX_EXPONENT) {
            return Err(parse_err(input, "exponent out of range"));
        }
        exp += e;
    }
    let scale = num_traits::pow(BigInt::from(10u8), exp.unsigned_abs() as usize);
    if exp >= 0 {
        value *= BigRational::from_integer(scale);
    } else {
        value /= BigRational::from_integer(scale);
    }
    Ok(if negative { -value } else { value })
}

/// Formats a rational as `"p/q"` in lowest terms, or `"p"` for integers.
pub fn format_rational(x: &BigRational) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Nearest `f64`, saturating to ±infinity and flushing to zero outside the
/// exponent range.
pub fn to_f64(x: &BigRational) -> f64 {
    if let Some(v) = x.to_f64() {
        if v.is_finite() && (v != 0.0 || x.is_zero()) {
            return v;
        }
    }
    // Operands whose numerator or denominator overflow f64 on their own.
    let sign = if x.is_negative() { -1.0 } else { 1.0 };
    let shift = x.numer().bits() as i64 - x.denom().bits() as i64;
    if shift > 1025 {
        return sign * f64::INFINITY;
    }
    if shift < -1080 {
        return sign * 0.0;
    }
    let m = scaled_mantissa(x, shift).abs();
    let half = (shift / 2) as i32;
    sign * m * 2f64.powi(half) * 2f64.powi(shift as i32 - half)
}

/// `x / 2^shift` as an `f64`; lies in `[1/2, 2)` in magnitude when `shift`
/// is the bit-length difference of numerator and denominator.
fn scaled_mantissa(x: &BigRational, shift: i64) -> f64 {
    let scaled = if shift >= 0 {
        BigRational::new(x.numer().clone(), x.denom() << shift as usize)
    } else {
        BigRational::new(x.numer() << (-shift) as usize, x.denom().clone())
    };
    scaled.to_f64().unwrap_or(1.0)
}

/// Natural logarithm of a positive rational, accurate for operands far
/// outside the `f64` range.
pub fn ln(x: &BigRational) -> f64 {
    debug_assert!(x.is_positive());
    let shift = x.numer().bits() as i64 - x.denom().bits() as i64;
    scaled_mantissa(x, shift).ln() + shift as f64 * std::f64::consts::LN_2
}

/// Shortest round-trip decimal for a float.
pub fn format_f64(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{x:?}")
}

/// `serde` adapter encoding a rational as its `"p/q"` string.
pub mod serde_rational {
    use super::*;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &BigRational, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BigRational, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s).map_err(serde::de::Error::custom)
    }
}

/// `serde` adapter for an optional rational; `None` encodes as `"inf"`.
pub mod serde_rational_or_inf {
    use super::*;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        x: &Option<BigRational>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match x {
            Some(v) => s.serialize_str(&format_rational(v)),
            None => s.serialize_str("inf"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Option<BigRational>, D::Error> {
        let s = String::deserialize(d)?;
        if s == "inf" {
            return Ok(None);
        }
        parse_rational(&s)
            .map(Some)
            .map_err(serde::de::Error::custom)
    }
}

/// Serializes a float as a JSON number, or as `"inf"`/`"-inf"`.
pub fn serialize_f64<S: serde::Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_str(&format_f64(*x))
    }
}

/// Serializes a slice of rationals as `"p/q"` strings.
pub fn serialize_rationals<S: serde::Serializer>(
    xs: &[BigRational],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(xs.iter().map(format_rational))
}

/// Small-integer rational literal.
pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}
