//! Command implementations behind the `gradshift` binary.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregateOptions, Rule, Triple};
use crate::decode::{
    decode_with, serve_forecaster, DecodePolicy, DecodeStatus, Forecaster, RemoteForecaster, SamplerConfig,
    SessionOptions, TraceFile, DEFAULT_MAX_NEW_TOKENS, DEFAULT_TEMPERATURE,
};
use crate::error::{Error, Result};
use crate::evalkit::{jailbreak_tax, write_tax_csv, TaxInputs, TaxRow};
use crate::geometry::{Distribution, Generator};
use crate::theoremlab::{self, Evaluation, SuiteConfig, Verdict};

pub const FLOOR_ENV: &str = "GRADSHIFT_FLOOR";
pub const TIMEOUT_ENV: &str = "GRADSHIFT_TIMEOUT_SECS";

#[derive(Debug, Parser)]
#[command(name = "gradshift", version, about = "Gradient-shift forecast aggregation toolkit")]
pub struct Cli {
    /// RNG seed; each command has a fixed default.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate newline-delimited {"id", "p_t", "p_h", "p_th"} records.
    Aggregate(AggregateArgs),
    /// Sample a sequence from three forecaster sources.
    Decode(DecodeArgs),
    /// Check the expected-improvement bound on random adversaries.
    Verify(VerifyArgs),
    /// Jailbreak tax 1 - (correct / success) / bench.
    Jtax(JtaxArgs),
    /// Serve a trace file over the forecaster protocol.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Input file, or - for stdin.
    #[arg(long, short, default_value = "-")]
    pub input: PathBuf,
    /// Output file, or - for stdout.
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    /// add | mult | hybrid | power:beta=X | generic:g=NAME[,beta=X] | w2s:alpha=X[,k=N|inf]
    #[arg(long, short)]
    pub rule: Rule,
    /// Probability floor for ratio rules; 0 disables it.
    #[arg(long, env = FLOOR_ENV, default_value_t = crate::TOLERANCES.probability_floor)]
    pub floor: f64,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// file:PATH, tcp:HOST:PORT or "stdio:PROGRAM ARGS..."
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub helper: String,
    #[arg(long)]
    pub predictor: String,
    #[arg(long, short, default_value = "hybrid")]
    pub rule: Rule,
    /// Aggregate only the first K steps (overrides a w2s k).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_NEW_TOKENS)]
    pub max_new_tokens: usize,
    /// Vocabulary size, required when no source is a file.
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Per-request timeout for remote sources.
    #[arg(long, env = TIMEOUT_ENV, default_value_t = 30)]
    pub timeout_secs: u64,
    /// Write the per-step log as JSON lines.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Query the three sources concurrently.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// negentropy | quadratic | power; repeatable. Default: all three.
    #[arg(long = "generator", short)]
    pub generators: Vec<String>,
    /// Exponent for the power generator.
    #[arg(long, default_value_t = 1.5)]
    pub beta: f64,
    /// "generic" runs the rule matched to each generator; otherwise a rule spec.
    #[arg(long, short, default_value = "generic")]
    pub rule: String,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 5])]
    pub dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.05, 0.1])]
    pub spreads: Vec<f64>,
    /// Random (helper, predictor) pairs per cell.
    #[arg(long, default_value_t = 20)]
    pub pairs: usize,
    /// Monte Carlo draws per cell; exact evaluation when omitted.
    #[arg(long)]
    pub trials: Option<usize>,
    /// CSV report path.
    #[arg(long)]
    pub report: Option<PathBuf>,

    /// Search binary adversaries for the hybrid rule instead.
    #[arg(long)]
    pub binary_hybrid: bool,
    /// Helper forecast for --binary-hybrid, e.g. 0.5,0.5. Random pairs when omitted.
    #[arg(long, value_delimiter = ',')]
    pub helper: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub predictor: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.02)]
    pub grid_step: f64,
    /// Largest adversary support (2 or 3).
    #[arg(long, default_value_t = 3)]
    pub atoms: usize,
}

#[derive(Debug, Args)]
pub struct JtaxArgs {
    pub correct: f64,
    pub success: f64,
    pub bench: f64,
    /// Append a row to this CSV report.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    pub method: String,
    #[arg(long, default_value = "-")]
    pub dataset: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Listen on this address instead of stdin/stdout.
    #[arg(long)]
    pub listen: Option<String>,
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<ExitCode> {
    match cli.command {
        Command::Aggregate(a) => cmd_aggregate(&a, stdout, stderr),
        Command::Decode(a) => cmd_decode(&a, cli.seed, stdout),
        Command::Verify(a) => cmd_verify(&a, cli.seed, stdout),
        Command::Jtax(a) => cmd_jtax(&a, stdout),
        Command::Serve(a) => cmd_serve(&a, stderr),
    }
}

fn status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub id: String,
    pub p_t: Vec<f64>,
    pub p_h: Vec<f64>,
    pub p_th: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedRecord {
    pub id: String,
    pub p_new: Vec<f64>,
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    if path == Path::new("-") {
        Ok(Box::new(BufReader::new(io::stdin())))
    } else {
        Ok(Box::new(BufReader::new(File::open(path)?)))
    }
}

fn open_output<'a>(path: &Path, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    if path == Path::new("-") {
        Ok(Box::new(stdout))
    } else {
        Ok(Box::new(BufWriter::new(File::create(path)?)))
    }
}

/// Aggregates a record stream. Bad lines are reported and skipped.
///
/// Returns the number of failed lines.
pub fn aggregate_stream(
    rule: &Rule,
    opts: AggregateOptions,
    input: impl BufRead,
    mut output: impl Write,
    errors: &mut dyn Write,
) -> Result<usize> {
    rule.validate()?;
    let mut failed = 0;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let result = serde_json::from_str::<BatchRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|rec| {
                let t = Triple::from_vecs(rec.p_t, rec.p_h, rec.p_th).map_err(|e| e.to_string())?;
                let p = rule.apply_with(&t, opts).map_err(|e| e.to_string())?;
                Ok(AggregatedRecord {
                    id: rec.id,
                    p_new: p.into_vec(),
                })
            });
        match result {
            Ok(rec) => {
                serde_json::to_writer(&mut output, &rec).map_err(|e| Error::Internal(e.to_string()))?;
                output.write_all(b"\n")?;
            }
            Err(reason) => {
                failed += 1;
                writeln!(errors, "line {}: {reason}", n + 1)?;
            }
        }
    }
    output.flush()?;
    Ok(failed)
}

pub fn cmd_aggregate(args: &AggregateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<ExitCode> {
    if !(args.floor >= 0.0 && args.floor < 1.0) {
        return Err(Error::InvalidArgument(format!("floor {} outside [0, 1)", args.floor)));
    }
    let opts = AggregateOptions {
        floor: (args.floor > 0.0).then_some(args.floor),
    };
    let input = open_input(&args.input)?;
    let output = open_output(&args.output, stdout)?;
    let failed = aggregate_stream(&args.rule, opts, input, output, stderr)?;
    Ok(status(failed == 0))
}

/// A parsed `--target`/`--helper`/`--predictor` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    File(PathBuf),
    Tcp(String),
    Stdio(Vec<String>),
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| Error::InvalidArgument(format!("source {s:?}: {reason}"));
        let (scheme, rest) = s.split_once(':').ok_or_else(|| bad("expected file:, tcp: or stdio: prefix"))?;
        if rest.is_empty() {
            return Err(bad("empty location"));
        }
        match scheme {
            "file" => Ok(Source::File(rest.into())),
            "tcp" => Ok(Source::Tcp(rest.into())),
            "stdio" => {
                let argv: Vec<String> = rest.split_whitespace().map(String::from).collect();
                if argv.is_empty() {
                    Err(bad("empty command"))
                } else {
                    Ok(Source::Stdio(argv))
                }
            }
            other => Err(bad(&format!("unknown scheme {other:?}"))),
        }
    }
}

impl Source {
    pub fn open(&self, vocab: usize, timeout: Duration) -> Result<Box<dyn Forecaster>> {
        Ok(match self {
            Source::File(p) => Box::new(TraceFile::open(p)?),
            Source::Tcp(addr) => Box::new(RemoteForecaster::connect(addr.as_str(), vocab, timeout)?),
            Source::Stdio(argv) => Box::new(RemoteForecaster::spawn(&argv[0], &argv[1..], vocab, timeout)?),
        })
    }
}

#[derive(Debug, Serialize)]
struct DecodeSummary<'a> {
    tokens: &'a [usize],
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<String>,
}

pub fn cmd_decode(args: &DecodeArgs, seed: Option<u64>, stdout: &mut dyn Write) -> Result<ExitCode> {
    let sources = [&args.target, &args.helper, &args.predictor]
        .map(|s| s.parse::<Source>());
    let [target, helper, predictor] = sources;
    let (target, helper, predictor) = (target?, helper?, predictor?);

    let mut files = Vec::new();
    for s in [&target, &helper, &predictor] {
        if let Source::File(p) = s {
            files.push(TraceFile::open(p)?.vocab_size());
        }
    }
    let vocab = match (args.vocab, files.first()) {
        (Some(v), _) => v,
        (None, Some(&v)) => v,
        (None, None) => {
            return Err(Error::InvalidArgument("--vocab is required when every source is remote".into()))
        }
    };
    let timeout = Duration::from_secs(args.timeout_secs);
    let mut t = target.open(vocab, timeout)?;
    let mut h = helper.open(vocab, timeout)?;
    let mut p = predictor.open(vocab, timeout)?;

    let mut policy = DecodePolicy::from_rule(args.rule);
    if args.k.is_some() {
        policy.k_cutoff = args.k;
    }
    let cfg = SamplerConfig {
        temperature: args.temperature,
        top_k: args.top_k,
        top_p: args.top_p,
        max_new_tokens: args.max_new_tokens,
        seed: seed.unwrap_or(crate::decode::DEFAULT_SEED),
    };
    let out = decode_with(
        &mut *t,
        &mut *h,
        &mut *p,
        &policy,
        &cfg,
        SessionOptions {
            parallel_queries: args.parallel,
        },
    )?;

    if let Some(path) = &args.log {
        let mut w = BufWriter::new(File::create(path)?);
        for rec in &out.log {
            serde_json::to_writer(&mut w, rec).map_err(|e| Error::Internal(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }

    let (name, detail) = match &out.status {
        DecodeStatus::Eot => ("eot", None),
        DecodeStatus::LengthCap => ("length-cap", None),
        s @ DecodeStatus::Truncated { .. } => ("truncated", Some(s.to_string())),
        s @ DecodeStatus::Aborted { .. } => ("aborted", Some(s.to_string())),
    };
    let summary = DecodeSummary {
        tokens: &out.tokens,
        status: name,
        detail,
    };
    serde_json::to_writer(&mut *stdout, &summary).map_err(|e| Error::Internal(e.to_string()))?;
    writeln!(stdout)?;
    Ok(status(matches!(out.status, DecodeStatus::Eot | DecodeStatus::LengthCap)))
}

pub fn parse_generator(name: &str, beta: f64) -> Result<Generator> {
    match name {
        "negentropy" => Ok(Generator::NegEntropy),
        "quadratic" => Ok(Generator::Quadratic),
        "power" => Generator::power(beta),
        other => Err(Error::InvalidArgument(format!(
            "unknown generator {other:?} (negentropy | quadratic | power)"
        ))),
    }
}

pub fn cmd_verify(args: &VerifyArgs, seed: Option<u64>, stdout: &mut dyn Write) -> Result<ExitCode> {
    let seed = seed.unwrap_or(theoremlab::DEFAULT_SEED);
    if args.binary_hybrid {
        return verify_binary_hybrid(args, seed, stdout);
    }
    let generators = if args.generators.is_empty() {
        vec![Generator::NegEntropy, Generator::Quadratic, Generator::power(args.beta)?]
    } else {
        args.generators
            .iter()
            .map(|g| parse_generator(g, args.beta))
            .collect::<Result<_>>()?
    };
    let rule = match args.rule.as_str() {
        "generic" => None,
        spec => Some(spec.parse::<Rule>()?),
    };
    let mode = match args.trials {
        None => Evaluation::Exact,
        Some(trials) => Evaluation::MonteCarlo { trials },
    };
    let cfg = SuiteConfig {
        generators,
        rule,
        dims: args.dims.clone(),
        spreads: args.spreads.clone(),
        pairs: args.pairs,
        mode,
        seed,
    };
    let rows = theoremlab::run_suite(&cfg)?;
    if let Some(path) = &args.report {
        theoremlab::write_suite_csv(&rows, BufWriter::new(File::create(path)?))?;
    }

    let gating: Vec<_> = rows.iter().filter(|r| r.gating).collect();
    let failures = gating.iter().filter(|r| r.verdict == Verdict::Fail).count();
    let worst = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    writeln!(
        stdout,
        "cells={} gating={} failures={} worst_margin={:.3e}",
        rows.len(),
        gating.len(),
        failures,
        worst
    )?;
    for r in gating.iter().filter(|r| r.verdict == Verdict::Fail) {
        writeln!(
            stdout,
            "FAIL {} {} d={} spread={} seed={} margin={:.3e}",
            r.generator, r.rule, r.d, r.spread, r.seed, r.margin
        )?;
    }
    Ok(status(failures == 0))
}

const BINARY_TOL: f64 = 1e-6;

fn verify_binary_hybrid(args: &VerifyArgs, seed: u64, stdout: &mut dyn Write) -> Result<ExitCode> {
    let pairs = match (&args.helper, &args.predictor) {
        (Some(h), Some(p)) => vec![(Distribution::new(h.clone())?, Distribution::new(p.clone())?)],
        (None, None) => (0..args.pairs as u64)
            .map(|i| {
                let mut rng = theoremlab::lab_rng(seed, i);
                Ok((
                    theoremlab::random_interior(2, &mut rng)?,
                    theoremlab::random_interior(2, &mut rng)?,
                ))
            })
            .collect::<Result<_>>()?,
        _ => {
            return Err(Error::InvalidArgument(
                "--helper and --predictor must be given together".into(),
            ))
        }
    };
    let mut all_pass = true;
    for (h, p) in &pairs {
        let w = theoremlab::binary_hybrid_worst_case(h, p, args.atoms, args.grid_step)?;
        let pass = w.margin() >= -BINARY_TOL;
        all_pass &= pass;
        let witness: Vec<String> = w
            .witness
            .iter()
            .map(|m| format!("({:.4},{:.4},{:.4})", m.location, m.outcome_zero, m.outcome_one))
            .collect();
        writeln!(
            stdout,
            "helper={h} predictor={p} minimum={:.6} kl={:.6} margin={:.3e} verdict={} witness={}",
            w.minimum,
            w.kl,
            w.margin(),
            if pass { "pass" } else { "fail" },
            witness.join(";")
        )?;
    }
    Ok(status(all_pass))
}

/// Four-decimal rendering without a negative zero.
pub fn format_tax(x: f64) -> String {
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

pub fn cmd_jtax(args: &JtaxArgs, stdout: &mut dyn Write) -> Result<ExitCode> {
    let inputs = TaxInputs::new(args.correct, args.success, args.bench)?;
    let tax = jailbreak_tax(&inputs);
    writeln!(stdout, "{}", format_tax(tax))?;
    if let Some(path) = &args.csv {
        let row = TaxRow {
            method: args.method.clone(),
            dataset: args.dataset.clone(),
            correct: args.correct,
            success: args.success,
            jtax: format_tax(tax).parse().expect("formatted float"),
        };
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            write_tax_csv(&[row], file)?;
        } else {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            w.serialize(row).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
            w.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_serve(args: &ServeArgs, stderr: &mut dyn Write) -> Result<ExitCode> {
    let trace = TraceFile::open(&args.trace)?;
    match &args.listen {
        None => {
            let mut t = trace;
            serve_forecaster(&mut t, io::stdin().lock(), io::stdout().lock())?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr)?;
            writeln!(stderr, "listening on {}", listener.local_addr()?)?;
            for conn in listener.incoming() {
                let conn = conn?;
                let mut t = trace.clone();
                let reader = BufReader::new(conn.try_clone()?);
                if let Err(e) = serve_forecaster(&mut t, reader, conn) {
                    writeln!(stderr, "connection ended: {e}")?;
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
