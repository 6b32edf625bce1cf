//! Unsigned fixed-point values of arbitrary width.
//!
//! A [`FixedValue`] is a raw magnitude together with an explicit format
//! (`int_bits` integer bits, `frac_bits` fraction bits). Its numeric value is
//! `magnitude * 2^-frac_bits`. Multiplication is exact and widens the format;
//! precision is only ever lost through [`FixedValue::truncate`] or
//! [`FixedValue::round_nearest`].

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Exact rational number, always in lowest terms with a positive denominator.
pub type Rational = BigRational;

/// How `2 - x` is formed from a fraction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ComplementMode {
    /// Bitwise complement plus one ulp: exactly `2 - x`.
    #[default]
    Exact,
    /// Bitwise complement only: `2 - x - ulp`.
    Ones,
}

impl fmt::Display for ComplementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComplementMode::Exact => f.write_str("exact"),
            ComplementMode::Ones => f.write_str("ones"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FixedValue {
    magnitude: BigUint,
    int_bits: u32,
    frac_bits: u32,
}

fn pow2(bits: u32) -> BigUint {
    BigUint::one() << bits as usize
}

impl FixedValue {
    /// Builds a value from its raw bit pattern.
    pub fn from_bits(magnitude: impl Into<BigUint>, int_bits: u32, frac_bits: u32) -> Result<Self> {
        let magnitude = magnitude.into();
        if int_bits == 0 {
            return Err(Error::Argument("a fixed-point format needs at least one integer bit".into()));
        }
        let available = int_bits as u64 + frac_bits as u64;
        if magnitude.bits() > available {
            return Err(Error::Overflow { needed: magnitude.bits(), available });
        }
        Ok(FixedValue { magnitude, int_bits, frac_bits })
    }

    pub fn zero(int_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::from_bits(BigUint::zero(), int_bits, frac_bits)
    }

    /// Rounds a non-negative rational to the nearest value with `frac_bits`
    /// fraction bits, ties toward +inf.
    pub fn from_rational_nearest(value: &Rational, int_bits: u32, frac_bits: u32) -> Result<Self> {
        if value.is_negative() {
            return Err(Error::Domain(format!("{value} is negative")));
        }
        let scaled = value * Rational::from_integer(BigInt::from(pow2(frac_bits)));
        // floor(x + 1/2)
        let num: BigInt = scaled.numer() * 2 + scaled.denom();
        let den = scaled.denom() * 2;
        let rounded = num.div_floor(&den);
        let magnitude = rounded
            .to_biguint()
            .ok_or_else(|| Error::Domain(format!("{value} is negative")))?;
        Self::from_bits(magnitude, int_bits, frac_bits)
    }

    /// The exact value if it has a finite binary expansion of at most
    /// `frac_bits` fraction bits.
    pub fn from_rational_exact(value: &Rational, int_bits: u32, frac_bits: u32) -> Result<Self> {
        let fixed = Self::from_rational_nearest(value, int_bits, frac_bits)?;
        if &fixed.to_rational() != value {
            return Err(Error::Domain(format!("{value} is not representable with {frac_bits} fraction bits")));
        }
        Ok(fixed)
    }

    pub fn magnitude(&self) -> &BigUint {
        &self.magnitude
    }

    pub fn int_bits(&self) -> u32 {
        self.int_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn width(&self) -> u64 {
        self.int_bits as u64 + self.frac_bits as u64
    }

    pub fn is_zero(&self) -> bool {
        self.magnitude.is_zero()
    }

    /// One unit in the last place of this format.
    pub fn ulp(&self) -> Rational {
        Rational::new(BigInt::one(), BigInt::from(pow2(self.frac_bits)))
    }

    pub fn to_rational(&self) -> Rational {
        Rational::new(BigInt::from(self.magnitude.clone()), BigInt::from(pow2(self.frac_bits)))
    }

    /// Lossy conversion for reporting.
    pub fn to_f64(&self) -> f64 {
        rational_to_f64(&self.to_rational())
    }

    /// Exact product. The result carries `a.frac + b.frac` fraction bits and
    /// `a.int + b.int` integer bits, which always holds the full product.
    pub fn mul_exact(&self, other: &FixedValue) -> FixedValue {
        FixedValue {
            magnitude: &self.magnitude * &other.magnitude,
            int_bits: self.int_bits + other.int_bits,
            frac_bits: self.frac_bits + other.frac_bits,
        }
    }

    /// Drops fraction bits (round toward zero).
    pub fn truncate(&self, frac_bits: u32) -> Result<FixedValue> {
        if frac_bits > self.frac_bits {
            return Err(Error::Argument(format!(
                "cannot truncate {} fraction bits to {frac_bits}",
                self.frac_bits
            )));
        }
        Ok(FixedValue {
            magnitude: &self.magnitude >> (self.frac_bits - frac_bits) as usize,
            int_bits: self.int_bits,
            frac_bits,
        })
    }

    /// Rounds to `frac_bits` fraction bits, ties toward +inf. A carry out of
    /// the top integer bit widens the integer field by one.
    pub fn round_nearest(&self, frac_bits: u32) -> Result<FixedValue> {
        if frac_bits > self.frac_bits {
            return Err(Error::Argument(format!(
                "cannot round {} fraction bits to {frac_bits}",
                self.frac_bits
            )));
        }
        let drop = self.frac_bits - frac_bits;
        if drop == 0 {
            return Ok(self.clone());
        }
        let half = pow2(drop - 1);
        let magnitude = (&self.magnitude + half) >> drop as usize;
        let mut int_bits = self.int_bits;
        if magnitude.bits() > int_bits as u64 + frac_bits as u64 {
            int_bits += 1;
        }
        Ok(FixedValue { magnitude, int_bits, frac_bits })
    }

    /// `2 - x` (exact) or `2 - x - ulp` (ones), in the same format.
    pub fn twos_complement(&self, mode: ComplementMode) -> Result<FixedValue> {
        let two = pow2(self.frac_bits + 1);
        if self.magnitude.is_zero() {
            return Err(Error::Domain("complement of zero is 2, which needs a wider integer field".into()));
        }
        if self.magnitude >= two {
            return Err(Error::Domain(format!("complement operand {} is not below 2", self.decimal_string())));
        }
        let magnitude = match mode {
            ComplementMode::Exact => two - &self.magnitude,
            ComplementMode::Ones => two - &self.magnitude - 1u32,
        };
        Ok(FixedValue { magnitude, int_bits: self.int_bits, frac_bits: self.frac_bits })
    }

    /// Appends zero fraction bits without changing the value.
    pub fn zero_extend(&self, target_frac_bits: u32) -> Result<FixedValue> {
        if target_frac_bits < self.frac_bits {
            return Err(Error::Argument(format!(
                "cannot extend {} fraction bits down to {target_frac_bits}",
                self.frac_bits
            )));
        }
        Ok(FixedValue {
            magnitude: &self.magnitude << (target_frac_bits - self.frac_bits) as usize,
            int_bits: self.int_bits,
            frac_bits: target_frac_bits,
        })
    }

    /// Re-declares the integer field width; fails if the value does not fit.
    pub fn with_int_bits(&self, int_bits: u32) -> Result<FixedValue> {
        Self::from_bits(self.magnitude.clone(), int_bits, self.frac_bits)
    }

    /// Binary rendering `i.ffff` using the full declared width.
    pub fn binary_string(&self) -> String {
        let digits = self.magnitude.to_str_radix(2);
        let width = self.width() as usize;
        let padded = format!("{digits:0>width$}");
        let (int, frac) = padded.split_at(self.int_bits as usize);
        if frac.is_empty() {
            int.to_string()
        } else {
            format!("{int}.{frac}")
        }
    }

    /// Exact decimal rendering; every fixed-point value has one.
    pub fn decimal_string(&self) -> String {
        let f = self.frac_bits as usize;
        let int = &self.magnitude >> f;
        let frac = &self.magnitude - (&int << f);
        if frac.is_zero() {
            return int.to_string();
        }
        // frac / 2^f == frac * 5^f / 10^f
        let digits = (frac * BigUint::from(5u32).pow(self.frac_bits)).to_string();
        let padded = format!("{digits:0>f$}");
        format!("{int}.{}", padded.trim_end_matches('0'))
    }
}

impl PartialEq for FixedValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for FixedValue {}

impl PartialOrd for FixedValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FixedValue {
    fn cmp(&self, other: &Self) -> Ordering {
        let f = self.frac_bits.max(other.frac_bits);
        let a = &self.magnitude << (f - self.frac_bits) as usize;
        let b = &other.magnitude << (f - other.frac_bits) as usize;
        a.cmp(&b)
    }
}

impl Hash for FixedValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        // Normalise away trailing zero fraction bits so equal values hash equally.
        let tz = self.magnitude.trailing_zeros().unwrap_or(0).min(self.frac_bits as u64);
        (&self.magnitude >> tz as usize).hash(state);
        (self.frac_bits as u64 - tz).hash(state);
    }
}

impl fmt::Display for FixedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.binary_string(), self.decimal_string())
    }
}

#[derive(Serialize)]
struct FixedValueRepr {
    magnitude: String,
    int_bits: u32,
    frac_bits: u32,
    bits: String,
    decimal: String,
}

impl Serialize for FixedValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        FixedValueRepr {
            magnitude: self.magnitude.to_string(),
            int_bits: self.int_bits,
            frac_bits: self.frac_bits,
            bits: self.binary_string(),
            decimal: self.decimal_string(),
        }
        .serialize(serializer)
    }
}

/// Parses `"1.01b"` (binary) or `"1.25"` (decimal). Binary input keeps its
/// written width. Decimal input uses the fewest fraction bits that represent
/// it exactly, or `fallback_frac_bits` with round-to-nearest when it has no
/// finite binary expansion within that width. Returns the value and whether
/// it was rounded.
pub fn parse_value(text: &str, fallback_frac_bits: u32) -> Result<(FixedValue, bool)> {
    let text = text.trim();
    if let Some(bits) = text.strip_suffix('b') {
        return parse_binary(bits).map(|v| (v, false));
    }
    let exact = parse_decimal(text)?;
    let int_bits = (exact.to_integer().to_biguint().map(|i| i.bits()).unwrap_or(0) as u32).max(1);
    if is_dyadic(&exact) {
        let frac_bits = exact.denom().bits().saturating_sub(1) as u32;
        return FixedValue::from_rational_exact(&exact, int_bits, frac_bits).map(|v| (v, false));
    }
    // Rounding up may carry into one more integer bit.
    let rounded = FixedValue::from_rational_nearest(&exact, int_bits + 1, fallback_frac_bits)?;
    let rounded = rounded.with_int_bits(int_bits).unwrap_or(rounded);
    Ok((rounded, true))
}

fn parse_binary(text: &str) -> Result<FixedValue> {
    let (int, frac) = text.split_once('.').unwrap_or((text, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(Error::Parse(format!("empty binary literal '{text}b'")));
    }
    let digits: String = format!("{int}{frac}");
    if !digits.chars().all(|c| c == '0' || c == '1') {
        return Err(Error::Parse(format!("'{text}b' is not a binary literal")));
    }
    let magnitude = if digits.is_empty() {
        BigUint::zero()
    } else {
        BigUint::parse_bytes(digits.as_bytes(), 2).ok_or_else(|| Error::Parse(format!("'{text}b'")))?
    };
    FixedValue::from_bits(magnitude, (int.len() as u32).max(1), frac.len() as u32)
}

fn parse_decimal(text: &str) -> Result<Rational> {
    let bad = || Error::Parse(format!("'{text}' is not a non-negative decimal number"));
    let (int, frac) = text.split_once('.').unwrap_or((text, ""));
    if (int.is_empty() && frac.is_empty())
        || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let numer = BigInt::parse_bytes(digits.as_bytes(), 10).ok_or_else(bad)?;
    let denom = BigInt::from(10u32).pow(frac.len() as u32);
    Ok(Rational::new(numer, denom))
}

impl FromStr for FixedValue {
    type Err = Error;

    /// Exact parse; rejects decimals without a finite binary expansion.
    fn from_str(s: &str) -> Result<Self> {
        let exact = parse_value(s, 0)?;
        match exact {
            (v, false) => Ok(v),
            (_, true) => Err(Error::Domain(format!("'{s}' has no exact binary fixed-point form"))),
        }
    }
}

/// True when the denominator is a power of two.
pub fn is_dyadic(value: &Rational) -> bool {
    let d = value.denom();
    d.is_positive() && (d & (d - BigInt::one())).is_zero()
}

/// Exact signed decimal for a rational with a power-of-two denominator.
pub fn dyadic_decimal(value: &Rational) -> Option<String> {
    if !is_dyadic(value) {
        return None;
    }
    let frac_bits = value.denom().bits().saturating_sub(1) as u32;
    let magnitude = value.numer().abs().to_biguint()?;
    let int_bits = (magnitude.bits() as u32).saturating_sub(frac_bits).max(1);
    let text = FixedValue::from_bits(magnitude, int_bits, frac_bits).ok()?.decimal_string();
    Some(if value.is_negative() { format!("-{text}") } else { text })
}

/// Nearest-ish f64; handles magnitudes far below f64's normal range by
/// scaling through the bit lengths instead of converting numerator and
/// denominator separately.
pub fn rational_to_f64(value: &Rational) -> f64 {
    if value.is_zero() {
        return 0.0;
    }
    let num = value.numer().abs();
    let den = value.denom().clone();
    let shift = num.bits() as i64 - den.bits() as i64;
    // Bring the ratio into [0.5, 2) with 64 bits of quotient precision.
    let (n, d) = if shift >= 0 { (num << 64usize, den << shift as usize) } else { (num << (64 + (-shift)) as usize, den) };
    let q = n / d;
    let mantissa = q.to_f64().unwrap_or(f64::NAN);
    let scaled = mantissa * 2f64.powi(-64) * 2f64.powi(shift.clamp(-1100, 1100) as i32);
    if value.is_negative() {
        -scaled
    } else {
        scaled
    }
}
