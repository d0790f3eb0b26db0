use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Engine, McSettings, SweepConfig};
use crate::distributions::MomentQuery;
use crate::error::{Error, Result};
use crate::mc::{self, Method, TailEstimate};
use crate::normal::normal_tail;
use crate::oracle::{self, ExactResult, MAX_LATTICE_N, OUTCOME_BUDGET};
use crate::theory::{self, SequenceSpec};
use crate::DistributionSpec;

pub const CSV_HEADER: &str =
    "n,x,p_max,p_sum,tail,ratio_max,ratio_sum,ci_low,ci_high,probe,delta_nx,dnr,n0,epsilon,method,samples,seed";
const COLUMNS: usize = 17;
const Z95: f64 = 1.959_963_984_540_054;

/// One `(n, x)` point of a sweep. `ci_*` bound `ratio_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub n: u64,
    pub x: f64,
    pub p_max: f64,
    pub p_sum: f64,
    pub tail: f64,
    pub ratio_max: f64,
    pub ratio_sum: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub probe: f64,
    /// Theory columns are empty at `x = 0`.
    pub delta_nx: Option<f64>,
    pub dnr: Option<f64>,
    pub n0: Option<u64>,
    pub epsilon: Option<f64>,
    /// `lattice_dp`, `enumeration`, `naive` or `tilted`.
    pub method: String,
    /// Empty for oracle rows.
    pub samples: Option<u64>,
    pub seed: Option<u64>,
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_f(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Config(format!("bad number {s:?} in CSV")))
}

fn parse_u(s: &str) -> Result<u64> {
    s.parse()
        .map_err(|_| Error::Config(format!("bad integer {s:?} in CSV")))
}

fn parse_opt<T>(s: &str, f: impl Fn(&str) -> Result<T>) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        f(s).map(Some)
    }
}

impl RatioRow {
    pub fn to_csv_line(&self) -> String {
        [
            self.n.to_string(),
            fmt_f(self.x),
            fmt_f(self.p_max),
            fmt_f(self.p_sum),
            fmt_f(self.tail),
            fmt_f(self.ratio_max),
            fmt_f(self.ratio_sum),
            fmt_f(self.ci_low),
            fmt_f(self.ci_high),
            fmt_f(self.probe),
            fmt_opt(self.delta_nx.map(fmt_f)),
            fmt_opt(self.dnr.map(fmt_f)),
            fmt_opt(self.n0),
            fmt_opt(self.epsilon.map(fmt_f)),
            self.method.clone(),
            fmt_opt(self.samples),
            fmt_opt(self.seed),
        ]
        .join(",")
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != COLUMNS {
            return Err(Error::Config(format!(
                "CSV row has {} fields, want {COLUMNS}",
                f.len()
            )));
        }
        Ok(Self {
            n: parse_u(f[0])?,
            x: parse_f(f[1])?,
            p_max: parse_f(f[2])?,
            p_sum: parse_f(f[3])?,
            tail: parse_f(f[4])?,
            ratio_max: parse_f(f[5])?,
            ratio_sum: parse_f(f[6])?,
            ci_low: parse_f(f[7])?,
            ci_high: parse_f(f[8])?,
            probe: parse_f(f[9])?,
            delta_nx: parse_opt(f[10], parse_f)?,
            dnr: parse_opt(f[11], parse_f)?,
            n0: parse_opt(f[12], parse_u)?,
            epsilon: parse_opt(f[13], parse_f)?,
            method: f[14].to_string(),
            samples: parse_opt(f[15], parse_u)?,
            seed: parse_opt(f[16], parse_u)?,
        })
    }
}

/// Reads every row of a sweep CSV.
pub fn read_csv(path: &Path) -> Result<Vec<RatioRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Config(format!(
            "{} does not start with the sweep header",
            path.display()
        )));
    }
    lines.map(RatioRow::from_csv_line).collect()
}

/// `(ratio_max − 2) (E X²)^{3/2} / ((1 + x³) E|X|³)`.
pub fn conjecture_probe(dist: &DistributionSpec, x: f64, ratio_max: f64) -> Result<f64> {
    let m2 = dist.variance();
    let m3 = dist.moment(MomentQuery::raw(3.0))?;
    Ok((ratio_max - 2.0) * m2.powf(1.5) / ((1.0 + x * x * x) * m3))
}

/// Per-row seed, a hash of the sweep seed and the row index.
pub fn row_seed(seed: u64, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(b"mdlab-row");
    h.update(seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn oracle_applies(seq: &SequenceSpec) -> bool {
    match (&seq.dist, seq.dist.atoms()) {
        (DistributionSpec::Rademacher { .. }, _) if seq.is_iid() && seq.n <= MAX_LATTICE_N => true,
        (_, Some(atoms)) => (atoms.len() as f64).powf(seq.n as f64) <= OUTCOME_BUDGET,
        _ => false,
    }
}

/// Wilson interval for a binomial proportion.
fn wilson(p: f64, n: f64) -> (f64, f64) {
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // the interval always contains p; keep that true after rounding
    ((center - half).clamp(0.0, p), (center + half).clamp(p, 1.0))
}

enum Probabilities {
    Exact(ExactResult),
    Mc(Box<(TailEstimate, TailEstimate)>, u64),
}

/// Computes row `index` of the sweep at `(n, x)`.
pub fn compute_row(cfg: &SweepConfig, index: usize, n: u64, x: f64) -> Result<RatioRow> {
    let seq = SequenceSpec::iid(cfg.dist, n)?;
    let run_mc = |s: McSettings| -> Result<Probabilities> {
        let seed = row_seed(cfg.seed, index);
        let (m, su) = mc::simulate(&seq, x, s.samples, seed, s.method, 1)?;
        Ok(Probabilities::Mc(Box::new((m, su)), seed))
    };
    let probs = match cfg.engine {
        Engine::Mc(s) => run_mc(s)?,
        Engine::OraclePreferred { fallback } => {
            if oracle_applies(&seq) {
                Probabilities::Exact(oracle::exact(&seq, x)?)
            } else if let Some(s) = fallback {
                run_mc(s)?
            } else {
                return Err(Error::OutcomeBudget {
                    outcomes: seq
                        .dist
                        .atoms()
                        .map_or(f64::INFINITY, |a| (a.len() as f64).powf(n as f64)),
                    budget: OUTCOME_BUDGET,
                });
            }
        }
    };
    let tail = normal_tail(x)?;
    let (p_max, p_sum, p_lo, p_hi, method, samples, seed) = match &probs {
        Probabilities::Exact(r) => (
            r.p_max,
            r.p_sum,
            r.p_max,
            r.p_max,
            r.method.as_str().to_string(),
            None,
            None,
        ),
        Probabilities::Mc(pair, seed) => {
            let (m, s) = &**pair;
            let (lo, hi) = match m.method {
                Method::Naive => wilson(m.p_hat, m.n_samples as f64),
                Method::Tilted => (
                    (m.p_hat - Z95 * m.stderr).max(0.0),
                    m.p_hat + Z95 * m.stderr,
                ),
            };
            (
                m.p_hat,
                s.p_hat,
                lo,
                hi,
                m.method.as_str().to_string(),
                Some(m.n_samples),
                Some(*seed),
            )
        }
    };
    let ratio_max = p_max / tail;
    let ratio_sum = p_sum / tail;
    let theory = if x > 0.0 {
        Some(theory::compute_quantities_with(
            &seq,
            x,
            cfg.r,
            cfg.delta,
            cfg.a_const,
        )?)
    } else {
        None
    };
    let row = RatioRow {
        n,
        x,
        p_max,
        p_sum,
        tail,
        ratio_max,
        ratio_sum,
        ci_low: p_lo / tail,
        ci_high: p_hi / tail,
        probe: conjecture_probe(&cfg.dist, x, ratio_max)?,
        delta_nx: theory.as_ref().map(|q| q.delta_nx),
        dnr: theory.as_ref().map(|q| q.dnr),
        n0: theory.as_ref().map(|q| q.n0),
        epsilon: theory.as_ref().map(|q| q.epsilon),
        method,
        samples,
        seed,
    };
    spot_check(&row, theory.as_ref(), x, cfg.delta)?;
    Ok(row)
}

fn spot_check(
    row: &RatioRow,
    q: Option<&theory::TheoryQuantities>,
    x: f64,
    delta: f64,
) -> Result<()> {
    let fail = |what: &str| {
        Err(Error::Numeric(format!(
            "row n={} x={}: {what}",
            row.n, row.x
        )))
    };
    if row.ratio_max < row.ratio_sum {
        return fail("ratio_max < ratio_sum");
    }
    if !(row.ci_low <= row.ratio_max && row.ratio_max <= row.ci_high) {
        return fail("ratio_max outside its interval");
    }
    if let Some(q) = q {
        let g = theory::gamma(delta);
        let floor = (g * x.powf(-0.5)).max(g * x.powf(-delta / 10.0));
        if !(q.delta_nx >= 0.0 && q.dnr > 0.0 && q.epsilon >= floor && q.n0 <= row.n) {
            return fail("theory quantities out of range");
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub rows: usize,
    pub columns: String,
    pub config: SweepConfig,
}

impl Manifest {
    pub fn for_config(cfg: &SweepConfig) -> Self {
        let mut config = cfg.clone();
        config.workers = 1;
        config.output = cfg
            .output
            .file_name()
            .map(PathBuf::from)
            .unwrap_or_default();
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            rows: cfg.grid().len(),
            columns: CSV_HEADER.to_string(),
            config,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutcome {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    /// Rows already on disk when the run started.
    pub resumed_from: usize,
    pub written: usize,
    pub complete: bool,
    #[serde(skip)]
    pub rows: Vec<RatioRow>,
}

/// Restores the CSV to its last complete line and returns the number of
/// data rows it holds, checking them against the grid.
fn prepare_csv(cfg: &SweepConfig, grid: &[(u64, f64, usize)]) -> Result<usize> {
    let path = &cfg.output;
    let mut bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep != bytes.len() {
        bytes.truncate(keep);
        OpenOptions::new()
            .write(true)
            .open(path)?
            .set_len(keep as u64)?;
    }
    if bytes.is_empty() {
        let mut f = File::create(path)?;
        writeln!(f, "{CSV_HEADER}")?;
        return Ok(0);
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Config(format!(
            "{} has an unexpected header",
            path.display()
        )));
    }
    let mut done = 0;
    for line in lines {
        let row = RatioRow::from_csv_line(line)?;
        match grid.get(done) {
            Some(&(n, x, _)) if n == row.n && fmt_f(x) == fmt_f(row.x) => done += 1,
            _ => {
                return Err(Error::Config(format!(
                    "{} row {} does not belong to this sweep",
                    path.display(),
                    done + 1
                )))
            }
        }
    }
    Ok(done)
}

/// Runs (or resumes) a sweep to completion.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutcome> {
    run_sweep_limited(cfg, None)
}

/// Like [`run_sweep`] but stops after at most `max_new_rows` new rows.
pub fn run_sweep_limited(cfg: &SweepConfig, max_new_rows: Option<usize>) -> Result<SweepOutcome> {
    cfg.validate()?;
    let grid = cfg.grid();
    let manifest = Manifest::for_config(cfg);
    let manifest_path = cfg.manifest_path();
    if let Some(dir) = cfg.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    match fs::read_to_string(&manifest_path) {
        Ok(text) => {
            let old: Manifest = serde_json::from_str(&text)?;
            if old.config_hash != manifest.config_hash {
                return Err(Error::Config(format!(
                    "{} was produced by a different config (hash {}); refusing to resume",
                    cfg.output.display(),
                    old.config_hash
                )));
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            if cfg.output.exists() {
                return Err(Error::Config(format!(
                    "{} exists without a manifest; refusing to overwrite",
                    cfg.output.display()
                )));
            }
        }
        Err(e) => return Err(e.into()),
    }
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    let done = prepare_csv(cfg, &grid)?;
    let end = max_new_rows.map_or(grid.len(), |k| (done + k).min(grid.len()));
    let mut out = OpenOptions::new().append(true).open(&cfg.output)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
    let mut written = 0;
    let mut next = done;
    while next < end {
        let wave = next..(next + cfg.workers).min(end);
        let results: Vec<Result<RatioRow>> = pool.install(|| {
            wave.clone()
                .into_par_iter()
                .map(|i| compute_row(cfg, i, grid[i].0, grid[i].1))
                .collect()
        });
        for row in results {
            let row = row?;
            writeln!(out, "{}", row.to_csv_line())?;
            out.flush()?;
            written += 1;
        }
        next = wave.end;
    }
    drop(out);
    let rows = read_csv(&cfg.output)?;
    Ok(SweepOutcome {
        csv: cfg.output.clone(),
        manifest: manifest_path,
        resumed_from: done,
        written,
        complete: rows.len() == grid.len(),
        rows,
    })
}
