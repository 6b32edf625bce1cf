//! The Goldschmidt iteration.
//!
//! Step 1 multiplies numerator and denominator by the ROM seed `K_1`:
//! `q_1 = N * K_1`, `r_1 = D * K_1`. Each Step 2 round forms
//! `K_{i+1} = 2 - r_i` and multiplies both running products by it, driving
//! `r_i` toward 1 and `q_i` toward `N / D`.

use std::fmt::Write as _;

use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixedpoint::{rational_to_f64, ComplementMode, FixedValue, Rational};
use crate::recip_table::ReciprocalTable;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DivisionProblem {
    n: FixedValue,
    d: FixedValue,
}

impl DivisionProblem {
    /// Both operands must be normalised significands in `[1, 2)`.
    pub fn new(n: FixedValue, d: FixedValue) -> Result<Self> {
        for (name, v) in [("numerator", &n), ("denominator", &d)] {
            let r = v.to_rational();
            if r < Rational::one() || r >= Rational::from_integer(2.into()) {
                return Err(Error::Domain(format!("{name} {} is outside [1, 2)", v.decimal_string())));
            }
        }
        Ok(DivisionProblem { n, d })
    }

    pub fn n(&self) -> &FixedValue {
        &self.n
    }

    pub fn d(&self) -> &FixedValue {
        &self.d
    }

    pub fn exact_quotient(&self) -> Rational {
        self.n.to_rational() / self.d.to_rational()
    }
}

/// Fraction bits kept after each multiply.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Precision {
    /// Keep every product bit.
    #[default]
    Exact,
    /// Truncate each product to this many fraction bits.
    Truncate(u32),
}

impl Precision {
    pub fn apply(self, value: FixedValue) -> Result<FixedValue> {
        match self {
            Precision::Exact => Ok(value),
            Precision::Truncate(bits) if bits < value.frac_bits() => value.truncate(bits),
            Precision::Truncate(bits) => value.zero_extend(bits),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::Exact => f.write_str("exact"),
            Precision::Truncate(bits) => write!(f, "{bits}"),
        }
    }
}

impl Serialize for Precision {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Precision::Exact => s.serialize_str("exact"),
            Precision::Truncate(bits) => s.serialize_u32(*bits),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GoldschmidtConfig {
    /// Table index width.
    pub p: u32,
    /// Number of Step 2 rounds; the result is `q_{iterations+1}`.
    pub iterations: u32,
    pub mult_frac_bits: Precision,
    pub complement_mode: ComplementMode,
}

impl Default for GoldschmidtConfig {
    fn default() -> Self {
        GoldschmidtConfig {
            p: 8,
            iterations: 3,
            mult_frac_bits: Precision::Exact,
            complement_mode: ComplementMode::Exact,
        }
    }
}

impl GoldschmidtConfig {
    pub fn validate(&self) -> Result<()> {
        if let Precision::Truncate(bits) = self.mult_frac_bits {
            if bits < self.p + 1 {
                return Err(Error::Argument(format!(
                    "multiplier keeps {bits} fraction bits, fewer than the {} the seed carries",
                    self.p + 1
                )));
            }
        }
        Ok(())
    }
}

/// One multiplier pass: exact product, then the configured truncation, then
/// narrowing to the register's integer width.
pub fn multiply(a: &FixedValue, b: &FixedValue, precision: Precision, int_bits: u32) -> Result<FixedValue> {
    precision.apply(a.mul_exact(b))?.with_int_bits(int_bits)
}

/// Integer bits of the `r` register: every `r_i` lies in `(0, 2)`.
pub const R_INT_BITS: u32 = 1;
/// Integer bits of the `q` register: every `q_i` lies in `(0, 2Q)` with `Q < 2`.
pub const Q_INT_BITS: u32 = 2;

#[derive(Clone, Debug)]
pub struct IterationTrace {
    pub problem: DivisionProblem,
    pub config: GoldschmidtConfig,
    /// `K_1 ... K_{iterations+1}`
    pub k: Vec<FixedValue>,
    /// `q_1 ... q_{iterations+1}`
    pub q: Vec<FixedValue>,
    /// `r_1 ... r_{iterations+1}`. The last entry is diagnostic only; the
    /// hardware never forms it.
    pub r: Vec<FixedValue>,
    pub exact_quotient: Rational,
}

impl IterationTrace {
    pub fn final_quotient(&self) -> &FixedValue {
        self.q.last().expect("trace always holds q_1")
    }

    pub fn steps(&self) -> usize {
        self.q.len()
    }

    /// `|Q - q_i| / Q` for 1-based `i`.
    pub fn relative_error(&self, i: usize) -> Result<Rational> {
        relative_error(self, i)
    }

    /// One line per step with binary and decimal forms of `K_i`, `q_i`, `r_i`
    /// and the running relative error.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "N = {}", self.problem.n).unwrap();
        writeln!(out, "D = {}", self.problem.d).unwrap();
        writeln!(out, "Q = {} (~{:.17})", self.exact_quotient, rational_to_f64(&self.exact_quotient)).unwrap();
        for i in 1..=self.steps() {
            let err = self.relative_error(i).expect("index in range");
            writeln!(
                out,
                "i={i} K={} q={} r={} rel_err={}",
                self.k[i - 1],
                self.q[i - 1],
                self.r[i - 1],
                format_error(&err)
            )
            .unwrap();
        }
        out
    }
}

/// `1.234e-5 (2^-16.3)`, or `0` for an exact result.
pub fn format_error(err: &Rational) -> String {
    if err.is_zero() {
        return "0".to_string();
    }
    let f = rational_to_f64(err);
    format!("{f:.6e} (2^{:.2})", f.log2())
}

/// Runs the iteration with the seed taken from `table`.
pub fn run_division(
    problem: &DivisionProblem,
    config: &GoldschmidtConfig,
    table: &ReciprocalTable,
) -> Result<IterationTrace> {
    if table.p() != config.p {
        return Err(Error::Argument(format!(
            "table has p={} but the configuration asks for p={}",
            table.p(),
            config.p
        )));
    }
    let d = if problem.d.frac_bits() < config.p { problem.d.zero_extend(config.p)? } else { problem.d.clone() };
    let seed = table.lookup(&d)?.clone();
    run_division_with_seed(problem, config, &seed)
}

/// Runs the iteration from a caller-supplied `K_1`, bypassing the table.
pub fn run_division_with_seed(
    problem: &DivisionProblem,
    config: &GoldschmidtConfig,
    seed: &FixedValue,
) -> Result<IterationTrace> {
    config.validate()?;
    let prec = config.mult_frac_bits;
    let steps = config.iterations as usize + 1;
    let mut k = Vec::with_capacity(steps);
    let mut q = Vec::with_capacity(steps);
    let mut r = Vec::with_capacity(steps);

    k.push(seed.clone());
    q.push(multiply(&problem.n, seed, prec, Q_INT_BITS)?);
    r.push(multiply(&problem.d, seed, prec, R_INT_BITS)?);
    for i in 1..steps {
        let ki = r[i - 1].twos_complement(config.complement_mode)?;
        q.push(multiply(&q[i - 1], &ki, prec, Q_INT_BITS)?);
        r.push(multiply(&r[i - 1], &ki, prec, R_INT_BITS)?);
        k.push(ki);
    }
    Ok(IterationTrace {
        problem: problem.clone(),
        config: *config,
        k,
        q,
        r,
        exact_quotient: problem.exact_quotient(),
    })
}

pub fn relative_error(trace: &IterationTrace, i: usize) -> Result<Rational> {
    if i == 0 || i > trace.steps() {
        return Err(Error::Argument(format!("step {i} outside 1..={}", trace.steps())));
    }
    let q = &trace.exact_quotient;
    Ok((q - trace.q[i - 1].to_rational()).abs() / q)
}

/// Smallest `m` with `p * 2^m >= target_fraction_bits`: the number of
/// Step 2 rounds after which a `2^-p` seed error has squared down to the
/// target under exact arithmetic.
pub fn required_iterations(p: u32, target_fraction_bits: u32) -> u32 {
    assert!(p >= 1, "p must be positive");
    let mut m = 0;
    let mut bits = p as u64;
    while bits < target_fraction_bits as u64 {
        bits *= 2;
        m += 1;
    }
    m
}
