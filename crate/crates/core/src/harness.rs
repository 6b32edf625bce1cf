//! Command-line front end (`gsdiv`).
//!
//! Exit codes: 0 success, 1 usage error, 2 domain or verification failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigUint;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::datapath::{self, DataflowGraph, Topology, TimingParams};
use crate::error::Error;
use crate::fixedpoint::{dyadic_decimal, parse_value, rational_to_f64, ComplementMode, FixedValue, Rational};
use crate::goldschmidt::{
    format_error, run_division, run_division_with_seed, DivisionProblem, GoldschmidtConfig, IterationTrace, Precision,
};
use crate::recip_table::ReciprocalTable;

/// Seed for sampled sweeps (p > 8).
pub const SWEEP_SEED: u64 = 0x5EED_601D;
/// Largest p swept exhaustively.
pub const EXHAUSTIVE_SWEEP_MAX_P: u32 = 8;
/// Largest p accepted by `table --verify`.
pub const VERIFY_MAX_P: u32 = 16;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gsdiv", version, about = "Goldschmidt division: seed tables, traces, sweeps and datapath models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (and optionally verify) the reciprocal seed table.
    Table(TableArgs),
    /// Run one division and print its trace.
    Divide(DivideArgs),
    /// Divide every pair on a grid and compare against the exact quotient.
    Sweep(SweepArgs),
    /// Schedule one datapath and print its cycle table.
    Simulate(SimulateArgs),
    /// Compare the original and feedback datapaths.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long)]
    pub p: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub verify: bool,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    if s.eq_ignore_ascii_case("exact") {
        return Ok(Precision::Exact);
    }
    s.parse::<u32>()
        .map(Precision::Truncate)
        .map_err(|_| format!("'{s}' is neither 'exact' nor a bit count"))
}

#[derive(Debug, Args)]
pub struct IterationArgs {
    #[arg(long, default_value_t = 8)]
    pub p: u32,
    #[arg(long, default_value_t = 3)]
    pub iters: u32,
    /// Fraction bits kept after each multiply, or `exact`.
    #[arg(long, value_parser = parse_precision, default_value = "exact")]
    pub mult_bits: Precision,
    #[arg(long, value_enum, default_value = "exact")]
    pub complement: ComplementMode,
}

impl IterationArgs {
    fn config(&self) -> GoldschmidtConfig {
        GoldschmidtConfig {
            p: self.p,
            iterations: self.iters,
            mult_frac_bits: self.mult_bits,
            complement_mode: self.complement,
        }
    }
}

#[derive(Debug, Args)]
pub struct DivideArgs {
    /// Numerator in [1, 2): decimal (`1.25`) or binary (`1.01b`).
    #[arg(long)]
    pub n: String,
    /// Denominator in [1, 2).
    #[arg(long)]
    pub d: String,
    #[command(flatten)]
    pub iteration: IterationArgs,
    /// Use this K_1 instead of the table entry.
    #[arg(long)]
    pub seed: Option<String>,
    /// Fraction bits for decimal inputs without an exact binary form.
    #[arg(long, default_value_t = 32)]
    pub in_bits: u32,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub iteration: IterationArgs,
    /// Pairs drawn when p is too large for the full grid.
    #[arg(long, default_value_t = 4096)]
    pub samples: usize,
    /// Count pairs whose relative error exceeds 2^-target_bits
    /// (default p * 2^iters).
    #[arg(long)]
    pub target_bits: Option<u32>,
    /// Write the per-pair CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct TimingArgs {
    #[arg(long, default_value_t = 4)]
    pub mult_latency: u32,
    #[arg(long, default_value_t = 1)]
    pub mult_ii: u32,
    #[arg(long, default_value_t = 1)]
    pub rom_latency: u32,
    #[arg(long, default_value_t = 0)]
    pub complement_latency: u32,
    #[arg(long, default_value_t = 1)]
    pub logic_latency: u32,
    /// Logic-block counter preset in cycles (default (iters - 1) * mult latency).
    #[arg(long)]
    pub counter_preset: Option<u32>,
}

impl TimingArgs {
    fn timing(&self) -> TimingParams {
        TimingParams {
            mult_latency: self.mult_latency,
            mult_initiation_interval: self.mult_ii,
            rom_latency: self.rom_latency,
            complement_latency: self.complement_latency,
            logic_block_latency: self.logic_latency,
            counter_preset: self.counter_preset,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub topology: Topology,
    #[arg(long, default_value_t = 3)]
    pub iters: u32,
    #[command(flatten)]
    pub timing: TimingArgs,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, default_value_t = 3)]
    pub iters: u32,
    #[command(flatten)]
    pub timing: TimingArgs,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

/// A failed command: its exit code and message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }

    fn failed(message: impl Into<String>) -> Self {
        Failure { code: EXIT_FAILURE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Argument(_) | Error::Parse(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

/// Entry point for the binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Parses `args` (including the program name) and runs the command, writing
/// results to `out` and errors to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return if e.use_stderr() {
                let _ = write!(err, "{e}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{e}");
                EXIT_OK
            };
        }
    };
    let result = match &cli.command {
        Command::Table(a) => cmd_table(a, out),
        Command::Divide(a) => cmd_divide(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Compare(a) => cmd_compare(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> CmdResult {
    out.write_all(text.as_bytes()).map_err(|e| Failure::failed(format!("write failed: {e}")))
}

fn emit_json(out: &mut dyn Write, value: &impl Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::failed(e.to_string()))?;
    emit(out, &format!("{text}\n"))
}

fn reject_format(format: Format, allowed: &[Format], cmd: &str) -> CmdResult {
    if allowed.contains(&format) {
        Ok(())
    } else {
        Err(Failure::usage(format!("{cmd} does not support --format {format:?}").to_lowercase()))
    }
}

// ---------------------------------------------------------------------------
// table

pub fn cmd_table(args: &TableArgs, out: &mut dyn Write) -> CmdResult {
    reject_format(args.format, &[Format::Text, Format::Json], "table")?;
    if args.verify && args.p > VERIFY_MAX_P {
        return Err(Failure::usage(format!("--verify supports p up to {VERIFY_MAX_P}, got {}", args.p)));
    }
    let mut table = ReciprocalTable::build(args.p).map_err(|e| Failure::usage(format!("--p: {e}")))?;
    let mut text = String::new();
    if args.verify && args.p < 2 {
        writeln!(
            text,
            "warning: p={} is below the supported range (p >= 2); the table has two entries and its seed error bound is only 2^-1",
            args.p
        )
        .unwrap();
    }
    let verdict = args.verify.then(|| {
        let err = table.verify();
        let bound = Rational::new(One::one(), num_bigint::BigInt::one() << args.p as usize);
        (err.clone() <= bound, err, bound)
    });
    match &args.out {
        Some(path) => {
            table
                .write_file(path)
                .map_err(|e| Failure::failed(format!("cannot write {}: {e}", path.display())))?;
            writeln!(text, "wrote {} entries to {}", table.entries().len(), path.display()).unwrap();
        }
        None if args.format == Format::Text => text.push_str(&table.to_file_string()),
        None => {}
    }
    if let Some((ok, err, bound)) = &verdict {
        writeln!(
            text,
            "max_seed_error = {err} = {} (bound {bound}): {}",
            format_error(err),
            if *ok { "ok" } else { "EXCEEDS BOUND" }
        )
        .unwrap();
    }
    if args.format == Format::Json {
        let value = json!({
            "p": table.p(),
            "rule": crate::recip_table::RULE_TAG,
            "entries": table.entries().iter().map(|e| e.binary_string()).collect::<Vec<_>>(),
            "max_seed_error": verdict.as_ref().map(|v| v.1.to_string()),
            "within_bound": verdict.as_ref().map(|v| v.0),
        });
        emit_json(out, &value)?;
    } else {
        emit(out, &text)?;
    }
    match verdict {
        Some((false, err, bound)) => Err(Failure::failed(format!("seed error {err} exceeds {bound}"))),
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// divide

fn parse_operand(flag: &str, text: &str, in_bits: u32) -> Result<(FixedValue, bool), Failure> {
    parse_value(text, in_bits).map_err(|e| Failure::usage(format!("{flag} '{text}': {e}")))
}

#[derive(Serialize)]
struct TraceJson<'a> {
    problem: ProblemJson<'a>,
    config: &'a GoldschmidtConfig,
    k: &'a [FixedValue],
    q: &'a [FixedValue],
    r: &'a [FixedValue],
    exact_quotient: String,
    relative_error: Vec<f64>,
    rounded_inputs: Vec<&'a str>,
}

#[derive(Serialize)]
struct ProblemJson<'a> {
    n: &'a FixedValue,
    d: &'a FixedValue,
}

pub fn cmd_divide(args: &DivideArgs, out: &mut dyn Write) -> CmdResult {
    reject_format(args.format, &[Format::Text, Format::Json], "divide")?;
    let (n, n_rounded) = parse_operand("--n", &args.n, args.in_bits)?;
    let (d, d_rounded) = parse_operand("--d", &args.d, args.in_bits)?;
    let problem = DivisionProblem::new(n, d).map_err(|e| Failure::failed(e.to_string()))?;
    let config = args.iteration.config();
    let trace = match &args.seed {
        Some(s) => {
            let (seed, _) = parse_operand("--seed", s, args.in_bits)?;
            run_division_with_seed(&problem, &config, &seed)?
        }
        None => {
            let table = ReciprocalTable::build(config.p).map_err(|e| Failure::usage(format!("--p: {e}")))?;
            run_division(&problem, &config, &table)?
        }
    };
    let rounded: Vec<&str> = [("n", n_rounded), ("d", d_rounded)]
        .into_iter()
        .filter_map(|(name, r)| r.then_some(name))
        .collect();
    match args.format {
        Format::Json => emit_json(out, &trace_json(&trace, rounded)),
        _ => {
            let mut text = String::new();
            for name in &rounded {
                writeln!(text, "note: --{name} rounded to nearest with {} fraction bits", args.in_bits).unwrap();
            }
            writeln!(
                text,
                "p={} iterations={} mult_bits={} complement={}",
                config.p, config.iterations, config.mult_frac_bits, config.complement_mode
            )
            .unwrap();
            text.push_str(&trace.render_text());
            writeln!(text, "result: q_{} = {}", trace.steps(), trace.final_quotient()).unwrap();
            emit(out, &text)
        }
    }
}

fn trace_json<'a>(trace: &'a IterationTrace, rounded: Vec<&'a str>) -> TraceJson<'a> {
    TraceJson {
        problem: ProblemJson { n: trace.problem.n(), d: trace.problem.d() },
        config: &trace.config,
        k: &trace.k,
        q: &trace.q,
        r: &trace.r,
        exact_quotient: trace.exact_quotient.to_string(),
        relative_error: (1..=trace.steps())
            .map(|i| rational_to_f64(&trace.relative_error(i).expect("in range")))
            .collect(),
        rounded_inputs: rounded,
    }
}

// ---------------------------------------------------------------------------
// sweep

pub const SWEEP_CSV_HEADER: &str = "n_bits,d_bits,n_dec,d_dec,q_final_dec,rel_error,one_minus_r";

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub n: FixedValue,
    pub d: FixedValue,
    pub q_final: FixedValue,
    pub r_final: FixedValue,
    pub rel_error: Rational,
    /// `q_i * D == r_i * N` for every step (checked in exact mode only).
    pub cross_ratio_ok: Option<bool>,
}

impl SweepRow {
    pub fn one_minus_r(&self) -> Rational {
        Rational::one() - self.r_final.to_rational()
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.17e},{}",
            self.n.binary_string(),
            self.d.binary_string(),
            self.n.decimal_string(),
            self.d.decimal_string(),
            self.q_final.decimal_string(),
            rational_to_f64(&self.rel_error),
            dyadic_decimal(&self.one_minus_r()).expect("dyadic")
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub config: GoldschmidtConfig,
    pub exhaustive: bool,
    pub seed: Option<u64>,
    pub pairs: usize,
    pub worst_rel_error: f64,
    pub worst_rel_error_exact: String,
    pub mean_rel_error: f64,
    pub target_bits: u32,
    pub exceeding_target: usize,
    pub max_abs_one_minus_r: f64,
    pub max_abs_one_minus_r_exact: String,
    /// `None` outside exact mode.
    pub cross_ratio_failures: Option<usize>,
}

/// Operand pairs for a sweep: the full grid of p-fraction-bit values for
/// small p, otherwise `samples` pairs stratified over the table index of D
/// (N uniform), drawn from [`SWEEP_SEED`].
pub fn sweep_pairs(p: u32, samples: usize) -> Vec<(FixedValue, FixedValue)> {
    let value = |frac: u64| FixedValue::from_bits(BigUint::from((1u64 << p) + frac), 1, p).expect("fits");
    if p <= EXHAUSTIVE_SWEEP_MAX_P {
        let side = 1u64 << p;
        return (0..side)
            .flat_map(|a| (0..side).map(move |b| (a, b)))
            .map(|(a, b)| (value(a), value(b)))
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SWEEP_SEED);
    let span = 1u64 << p;
    (0..samples as u64)
        .map(|k| {
            let lo = k * span / samples as u64;
            let hi = ((k + 1) * span / samples as u64).max(lo + 1);
            let d = rng.gen_range(lo..hi);
            let n = rng.gen_range(0..span);
            (value(n), value(d))
        })
        .collect()
}

pub fn run_sweep(
    config: &GoldschmidtConfig,
    samples: usize,
    target_bits: Option<u32>,
) -> crate::error::Result<(SweepResult, Vec<SweepRow>)> {
    config.validate()?;
    let table = ReciprocalTable::build(config.p)?;
    let pairs = sweep_pairs(config.p, samples);
    let exact = config.mult_frac_bits == Precision::Exact;
    let rows = pairs
        .into_par_iter()
        .map(|(n, d)| {
            let problem = DivisionProblem::new(n.clone(), d.clone())?;
            let trace = run_division(&problem, config, &table)?;
            let rel_error = trace.relative_error(trace.steps())?;
            let cross_ratio_ok = exact.then(|| {
                let (nr, dr) = (n.to_rational(), d.to_rational());
                trace.q.iter().zip(&trace.r).all(|(q, r)| q.to_rational() * &dr == r.to_rational() * &nr)
            });
            Ok(SweepRow {
                n,
                d,
                q_final: trace.final_quotient().clone(),
                r_final: trace.r.last().expect("r_1").clone(),
                rel_error,
                cross_ratio_ok,
            })
        })
        .collect::<crate::error::Result<Vec<_>>>()?;

    let target_bits = target_bits.unwrap_or_else(|| {
        (config.p as u64)
            .saturating_mul(1u64 << config.iterations.min(32))
            .min(1 << 20) as u32
    });
    let target = Rational::new(One::one(), num_bigint::BigInt::one() << target_bits as usize);
    let worst = rows.iter().map(|r| &r.rel_error).max().cloned().unwrap_or_else(Rational::zero);
    let max_r = rows.iter().map(|r| r.one_minus_r().abs()).max().unwrap_or_else(Rational::zero);
    let mean = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| rational_to_f64(&r.rel_error)).sum::<f64>() / rows.len() as f64
    };
    let result = SweepResult {
        config: *config,
        exhaustive: config.p <= EXHAUSTIVE_SWEEP_MAX_P,
        seed: (config.p > EXHAUSTIVE_SWEEP_MAX_P).then_some(SWEEP_SEED),
        pairs: rows.len(),
        worst_rel_error: rational_to_f64(&worst),
        worst_rel_error_exact: worst.to_string(),
        mean_rel_error: mean,
        target_bits,
        exceeding_target: rows.iter().filter(|r| r.rel_error > target).count(),
        max_abs_one_minus_r: rational_to_f64(&max_r),
        max_abs_one_minus_r_exact: max_r.to_string(),
        cross_ratio_failures: exact.then(|| rows.iter().filter(|r| r.cross_ratio_ok == Some(false)).count()),
    };
    Ok((result, rows))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 64);
    out.push_str(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> CmdResult {
    let config = args.iteration.config();
    let (result, rows) = run_sweep(&config, args.samples, args.target_bits)?;
    let csv = sweep_csv(&rows);
    if let Some(path) = &args.out {
        std::fs::write(path, &csv).map_err(|e| Failure::failed(format!("cannot write {}: {e}", path.display())))?;
    }
    match args.format {
        Format::Csv => emit(out, &csv)?,
        Format::Json => emit_json(out, &result)?,
        Format::Text => {
            let mut text = String::new();
            writeln!(
                text,
                "p={} iterations={} mult_bits={} complement={} pairs={} ({})",
                config.p,
                config.iterations,
                config.mult_frac_bits,
                config.complement_mode,
                result.pairs,
                if result.exhaustive { "exhaustive".to_string() } else { format!("sampled, seed {SWEEP_SEED:#x}") }
            )
            .unwrap();
            writeln!(text, "worst_rel_error = {:e} ({})", result.worst_rel_error, result.worst_rel_error_exact).unwrap();
            writeln!(text, "mean_rel_error = {:e}", result.mean_rel_error).unwrap();
            writeln!(text, "exceeding 2^-{} = {}", result.target_bits, result.exceeding_target).unwrap();
            writeln!(text, "max |1 - r_final| = {:e}", result.max_abs_one_minus_r).unwrap();
            if let Some(f) = result.cross_ratio_failures {
                writeln!(text, "cross-ratio failures = {f}").unwrap();
            }
            emit(out, &text)?;
        }
    }
    match result.cross_ratio_failures {
        Some(f) if f > 0 => Err(Failure::failed(format!("{f} rows fail q*D = r*N"))),
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// simulate / compare

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> CmdResult {
    let dag = DataflowGraph::build(args.iters)?;
    let spec = datapath::build_topology(args.topology, args.iters, args.timing.timing())?;
    let report = datapath::schedule(&dag, &spec)?;
    match args.format {
        Format::Text => emit(out, &report.render_text()),
        Format::Csv => emit(out, &report.to_csv()),
        Format::Json => emit_json(out, &report),
    }
}

pub fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> CmdResult {
    reject_format(args.format, &[Format::Text, Format::Json], "compare")?;
    let report = datapath::compare(args.iters, args.timing.timing())?;
    match args.format {
        Format::Json => emit_json(out, &report),
        _ => emit(out, &report.render_text()),
    }
}
