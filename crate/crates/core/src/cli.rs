//! Command-line front end. Every subcommand prints one JSON document on
//! stdout; diagnostics go to stderr.
//!
//! Exit codes: 0 on success, 2 for usage and configuration errors, 3 for
//! numeric or infeasible requests.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::experiments::{convergence_report, run_sweep, SweepConfig};
use crate::mc::{self, Method, DEFAULT_SEED};
use crate::normal::normal_tail;
use crate::oracle;
use crate::theory::{self, SequenceSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "mdlab",
    version,
    about = "Tail ratios of the maximum of self-normalized sums"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Theory functionals and regime flags for an iid sequence.
    Theory(TheoryArgs),
    /// Exact probabilities (lattice DP or full enumeration).
    Enumerate(InstanceArgs),
    /// Monte Carlo estimates.
    Simulate(SimulateArgs),
    /// Run or resume a sweep from a JSON config.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct InstanceArgs {
    /// Distribution: short form (`rademacher`, `two_point:2,1`,
    /// `uniform`, `exponential:1`, `student_t:5`) or a JSON object.
    #[arg(long)]
    dist: DistributionSpec,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    x: f64,
}

#[derive(Debug, Args)]
struct TheoryArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Constant in the Δ regime check.
    #[arg(long, default_value_t = 1.0)]
    a_const: f64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    /// Defaults to a fixed constant, never to entropy.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// `naive` or `tilted`.
    #[arg(long, default_value = "naive")]
    method: Method,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
}

fn sequence(a: &InstanceArgs) -> Result<SequenceSpec> {
    SequenceSpec::iid(a.dist, a.n)
}

fn ratios(p_max: f64, p_sum: f64, x: f64) -> Result<(f64, f64, f64)> {
    let tail = normal_tail(x)?;
    Ok((tail, p_max / tail, p_sum / tail))
}

fn theory_cmd(a: &TheoryArgs) -> Result<Value> {
    let x = a.instance.x;
    let seq = sequence(&a.instance)?;
    let q = theory::compute_quantities_with(&seq, x, a.r, a.delta, a.a_const)?;
    let ad2 = theory::check_ad2(&seq, a.r, a.delta, a.tau)?;
    let a2 = theory::check_a2(&seq, x, a.delta)?;
    let envelope = if x >= 2.0 {
        Some(theory::envelope_prop2(x, q.delta_nx, a.delta)?)
    } else {
        None
    };
    let mut out = json!({
        "dist": a.instance.dist,
        "n": a.instance.n,
        "x": x,
        "r": a.r,
        "delta": a.delta,
        "tau": a.tau,
        "a_const": a.a_const,
    });
    merge(&mut out, serde_json::to_value(&q)?);
    merge(
        &mut out,
        json!({ "ad2": ad2, "a2": a2, "envelope": envelope }),
    );
    Ok(out)
}

fn merge(into: &mut Value, from: Value) {
    if let (Value::Object(a), Value::Object(b)) = (into, from) {
        a.extend(b);
    }
}

fn enumerate_cmd(a: &InstanceArgs) -> Result<Value> {
    let r = oracle::exact(&sequence(a)?, a.x)?;
    let (tail, ratio_max, ratio_sum) = ratios(r.p_max, r.p_sum, a.x)?;
    let mut out = serde_json::to_value(r)?;
    merge(
        &mut out,
        json!({ "dist": a.dist, "tail": tail, "ratio_max": ratio_max, "ratio_sum": ratio_sum }),
    );
    Ok(out)
}

fn simulate_cmd(a: &SimulateArgs) -> Result<Value> {
    let i = &a.instance;
    if a.workers == 0 {
        return Err(Error::Config("workers must be >= 1".into()));
    }
    let sim = mc::Simulation::new(&sequence(i)?, i.x, a.samples, a.seed, a.method)?;
    let (max, sum) = sim.run(a.workers)?;
    let (tail, ratio_max, ratio_sum) = ratios(max.p_hat, sum.p_hat, i.x)?;
    Ok(json!({
        "dist": i.dist,
        "n": i.n,
        "x": i.x,
        "max": max,
        "sum": sum,
        "tilt": sim.plan(),
        "tail": tail,
        "ratio_max": ratio_max,
        "ratio_sum": ratio_sum,
    }))
}

fn sweep_cmd(a: &SweepArgs) -> Result<Value> {
    let mut cfg = SweepConfig::load(&a.config)?;
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    let outcome = run_sweep(&cfg)?;
    let report = match convergence_report(&outcome.rows, &cfg.x_rule, cfg.r, cfg.delta) {
        Ok(r) => Some(r),
        Err(Error::InsufficientRows(_)) => None,
        Err(e) => return Err(e),
    };
    let mut out = serde_json::to_value(&outcome)?;
    merge(
        &mut out,
        json!({ "rows": outcome.rows.len(), "report": report }),
    );
    Ok(out)
}

fn dispatch(cli: &Cli) -> Result<Value> {
    match &cli.command {
        Command::Theory(a) => theory_cmd(a),
        Command::Enumerate(a) => enumerate_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, v: &T) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut *out, v)?;
    writeln!(out)
}

/// Parses `argv` (including the program name), runs the command and
/// returns the exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(v) => match emit(stdout, &v) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(stderr, "error: {e}");
                EXIT_NUMERIC
            }
        },
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_NUMERIC
            }
        }
    }
}
