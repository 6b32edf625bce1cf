//! Reciprocal seed ROM.
//!
//! The table is indexed by the top `p` fraction bits of a denominator in
//! `[1, 2)` and returns a `p + 2` bit approximation (1 integer bit, `p + 1`
//! fraction bits) of its reciprocal: the reciprocal of the midpoint of the
//! indexed interval, rounded to nearest.

use std::fmt::Write as _;
use std::path::Path;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, ToPrimitive};

use crate::error::{Error, Result};
use crate::fixedpoint::{FixedValue, Rational};

pub const MIN_P: u32 = 1;
pub const MAX_P: u32 = 20;

/// Tag written into table files for the construction rule.
pub const RULE_TAG: &str = "midpoint-round-nearest";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReciprocalTable {
    p: u32,
    entries: Vec<FixedValue>,
    max_seed_error: Option<Rational>,
}

impl ReciprocalTable {
    /// Builds the `2^p`-entry table.
    pub fn build(p: u32) -> Result<Self> {
        if !(MIN_P..=MAX_P).contains(&p) {
            return Err(Error::Argument(format!("table index width p={p} outside {MIN_P}..={MAX_P}")));
        }
        let out_frac = p + 1;
        let one = 1u64 << out_frac;
        // 1/M_j with M_j = (2^(p+1) + 2j + 1) / 2^(p+1); scaled by 2^(p+1)
        // the entry is round(2^(2p+2) / (2^(p+1) + 2j + 1)).
        let num = 1u64 << (2 * p + 2);
        let entries = (0..1u64 << p)
            .map(|j| {
                let den = one + 2 * j + 1;
                let rounded = (2 * num + den) / (2 * den);
                FixedValue::from_bits(rounded.min(one), 1, out_frac)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ReciprocalTable { p, entries, max_seed_error: None })
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn entries(&self) -> &[FixedValue] {
        &self.entries
    }

    /// Filled in by [`ReciprocalTable::verify`].
    pub fn max_seed_error(&self) -> Option<&Rational> {
        self.max_seed_error.as_ref()
    }

    /// Index of `d` in the table: its top `p` fraction bits.
    pub fn index_of(&self, d: &FixedValue) -> Result<usize> {
        let one = FixedValue::from_bits(1u32, 1, 0)?;
        let two = FixedValue::from_bits(2u32, 2, 0)?;
        if *d < one || *d >= two {
            return Err(Error::Domain(format!("table lookup needs 1 <= d < 2, got {}", d.decimal_string())));
        }
        let d = if d.frac_bits() < self.p { d.zero_extend(self.p)? } else { d.clone() };
        let top = d.magnitude() >> (d.frac_bits() - self.p) as usize;
        let mask = (BigUint::one() << self.p as usize) - 1u32;
        Ok((top & mask).to_usize().expect("index below 2^20"))
    }

    /// The seed `K_1` for denominator `d`.
    pub fn lookup(&self, d: &FixedValue) -> Result<&FixedValue> {
        Ok(&self.entries[self.index_of(d)?])
    }

    /// Exhaustively measures the seed error. For every index `j` the error
    /// `|1 - D * entry[j]|` is linear in `D`, so its supremum over the
    /// interval is attained at one of the two endpoints
    /// `1 + j * 2^-p` and `1 + (j + 1) * 2^-p`. The maximum over all
    /// intervals bounds the seed error for a denominator of any width.
    pub fn verify(&mut self) -> Rational {
        let p = self.p;
        // D = (2^p + t) / 2^p and K = m / 2^(p+1): scale |1 - D*K| by 2^(2p+1).
        let scale = 1i128 << (2 * p + 1);
        let mut worst = 0i128;
        for (j, entry) in self.entries.iter().enumerate() {
            let m = entry.magnitude().to_i128().expect("entry fits in p+2 bits");
            for t in [j as i128, j as i128 + 1] {
                let err = (scale - ((1i128 << p) + t) * m).abs();
                worst = worst.max(err);
            }
        }
        let err = Rational::new(BigInt::from(worst), BigInt::from(scale));
        self.max_seed_error = Some(err.clone());
        err
    }

    /// Table file: two header lines (`p=<p>`, `rule=<tag>`) followed by one
    /// binary entry per line.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        writeln!(out, "p={}", self.p).unwrap();
        writeln!(out, "rule={RULE_TAG}").unwrap();
        for entry in &self.entries {
            writeln!(out, "{}", entry.binary_string()).unwrap();
        }
        out
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    /// Parses a table file and checks it against a fresh build.
    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let p = lines
            .next()
            .and_then(|l| l.strip_prefix("p="))
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| Error::Parse("table header must start with 'p=<width>'".into()))?;
        match lines.next().and_then(|l| l.strip_prefix("rule=")) {
            Some(tag) if tag.trim() == RULE_TAG => {}
            other => {
                return Err(Error::Parse(format!("unknown table rule {:?}", other.unwrap_or("<missing>"))));
            }
        }
        let entries = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (int, frac) = l
                    .trim()
                    .split_once('.')
                    .ok_or_else(|| Error::Parse(format!("entry '{l}' is not i.fff binary")))?;
                if int.len() != 1 || frac.len() != p as usize + 1 {
                    return Err(Error::Parse(format!("entry '{l}' is not 1+{} bits wide", p + 1)));
                }
                let magnitude = BigUint::parse_bytes(format!("{int}{frac}").as_bytes(), 2)
                    .ok_or_else(|| Error::Parse(format!("entry '{l}' is not binary")))?;
                FixedValue::from_bits(magnitude, 1, p + 1)
            })
            .collect::<Result<Vec<_>>>()?;
        if entries.len() != 1 << p {
            return Err(Error::Parse(format!("expected {} entries, found {}", 1u64 << p, entries.len())));
        }
        Ok(ReciprocalTable { p, entries, max_seed_error: None })
    }
}

/// Free-function spelling of [`ReciprocalTable::build`].
pub fn build_table(p: u32) -> Result<ReciprocalTable> {
    ReciprocalTable::build(p)
}

/// Free-function spelling of [`ReciprocalTable::verify`].
pub fn verify_table(table: &mut ReciprocalTable) -> Rational {
    table.verify()
}
