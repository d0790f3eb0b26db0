use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::mc::{Method, DEFAULT_SEED, MIN_SAMPLES};

/// How the `x` values of a sweep are chosen at each `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum XRule {
    /// The same `x` values at every `n`.
    Explicit { values: Vec<f64> },
    /// `x = c n^{1/6}` for each `c`.
    NSixth { c: Vec<f64> },
    /// `x = c n^{r/(4+2r)}` for each `c`, with the sweep's `r`.
    NPower { c: Vec<f64> },
}

impl XRule {
    /// Values of `x` at `n`, one per group.
    pub fn xs(&self, n: u64, r: f64) -> Vec<f64> {
        let n = n as f64;
        match self {
            Self::Explicit { values } => values.clone(),
            Self::NSixth { c } => c.iter().map(|c| c * n.powf(1.0 / 6.0)).collect(),
            Self::NPower { c } => c.iter().map(|c| c * n.powf(r / (4.0 + 2.0 * r))).collect(),
        }
    }

    /// Label of the group a value at position `i` belongs to.
    pub fn group_label(&self, i: usize) -> String {
        match self {
            Self::Explicit { values } => format!("x={}", values[i]),
            Self::NSixth { c } => format!("x={}*n^(1/6)", c[i]),
            Self::NPower { c } => format!("x={}*n^(r/(4+2r))", c[i]),
        }
    }

    pub fn groups(&self) -> usize {
        match self {
            Self::Explicit { values } => values.len(),
            Self::NSixth { c } | Self::NPower { c } => c.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.groups() == 0 {
            return Err(Error::Config("x_rule needs at least one value".into()));
        }
        match self {
            Self::Explicit { values } => {
                if let Some(bad) = values.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
                    return Err(Error::Config(format!(
                        "x values must be finite and >= 0, got {bad}"
                    )));
                }
            }
            Self::NSixth { c } | Self::NPower { c } => {
                if let Some(bad) = c.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
                    return Err(Error::Config(format!("c must be positive, got {bad}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    pub method: Method,
    pub samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Engine {
    /// Exact oracle where it applies; otherwise `fallback`, or an error.
    OraclePreferred {
        #[serde(default)]
        fallback: Option<McSettings>,
    },
    Mc(McSettings),
}

fn one() -> f64 {
    1.0
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_workers() -> usize {
    1
}

fn dist_literal<'de, D: Deserializer<'de>>(
    d: D,
) -> std::result::Result<DistributionSpec, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Literal {
        Short(String),
        Full(DistributionSpec),
    }
    match Literal::deserialize(d)? {
        Literal::Short(s) => s.parse().map_err(serde::de::Error::custom),
        Literal::Full(spec) => Ok(spec),
    }
}

/// A sweep over an `(n, x)` grid, read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Short form (`"rademacher"`) or a full JSON object.
    #[serde(deserialize_with = "dist_literal")]
    pub dist: DistributionSpec,
    pub n_grid: Vec<u64>,
    pub x_rule: XRule,
    #[serde(default = "one")]
    pub r: f64,
    #[serde(default = "one")]
    pub delta: f64,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default = "one")]
    pub a_const: f64,
    pub engine: Engine,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// CSV path; the manifest is written beside it.
    pub output: PathBuf,
    /// Rows computed concurrently. Does not affect the output.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("bad sweep config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.dist.validate()?;
        if self.n_grid.is_empty() {
            return Err(Error::Config("n_grid is empty".into()));
        }
        if self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "n_grid must be positive and strictly increasing".into(),
            ));
        }
        self.x_rule.validate()?;
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::Config(format!(
                "r must lie in (0, 1], got {}",
                self.r
            )));
        }
        for (name, v) in [
            ("delta", self.delta),
            ("tau", self.tau),
            ("a_const", self.a_const),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let mc = match self.engine {
            Engine::Mc(s) => Some(s),
            Engine::OraclePreferred { fallback } => fallback,
        };
        if let Some(s) = mc {
            if s.samples < MIN_SAMPLES {
                return Err(Error::Config(format!(
                    "samples must be >= {MIN_SAMPLES}, got {}",
                    s.samples
                )));
            }
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical config, ignoring `workers` and `output`,
    /// which do not influence the rows.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.workers = 1;
        canon.output = PathBuf::new();
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output.with_extension("manifest.json")
    }

    /// `(n, x, group)` for every row, in row order.
    pub fn grid(&self) -> Vec<(u64, f64, usize)> {
        self.n_grid
            .iter()
            .flat_map(|&n| {
                self.x_rule
                    .xs(n, self.r)
                    .into_iter()
                    .enumerate()
                    .map(move |(g, x)| (n, x, g))
            })
            .collect()
    }
}
