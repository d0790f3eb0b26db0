//! Monte Carlo estimation of the max- and sum-event probabilities.
//!
//! Paths are generated in fixed-size chunks. Chunk `c` draws from a ChaCha8
//! stream keyed by `(seed, c)`, and the step index is the position within
//! that stream, so every path is a pure function of `(seed, chunk, path)`.
//! Per-chunk weight sums are accumulated exactly, which makes pooling
//! associative and commutative bit-for-bit: any grouping of chunks over any
//! number of workers rounds to the same estimate.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distributions::{Sampler, TiltedLaw};
use crate::error::{Error, Result};
use crate::exact_sum::ExactSum;
use crate::oracle::event_slack;
use crate::theory::{self, SequenceSpec};

/// Paths per chunk.
pub const CHUNK_SIZE: u64 = 1 << 16;
/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 20_160_901;
/// Smallest accepted sample count.
pub const MIN_SAMPLES: u64 = 1_000;
const TILT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    Tilted,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::Tilted => "tilted",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Self::Naive),
            "tilted" => Ok(Self::Tilted),
            _ => Err(Error::Config(format!(
                "unknown method {s:?} (naive|tilted)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Max,
    Sum,
}

/// A tail-probability estimate with its sufficient statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub p_hat: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub method: Method,
    pub seed: u64,
    pub event: Event,
    #[serde(skip)]
    sum_w: ExactSum,
    #[serde(skip)]
    sum_w2: ExactSum,
    #[serde(skip)]
    instance: u64,
}

impl TailEstimate {
    /// The identity for [`TailEstimate::merge`].
    pub fn empty(method: Method, event: Event, seed: u64, instance: u64) -> Self {
        Self {
            p_hat: 0.0,
            stderr: 0.0,
            n_samples: 0,
            method,
            seed,
            event,
            sum_w: ExactSum::new(),
            sum_w2: ExactSum::new(),
            instance,
        }
    }

    /// Fingerprint of the `(sequence, x)` instance the estimate belongs to.
    pub fn instance(&self) -> u64 {
        self.instance
    }

    fn record(&mut self, weight: f64) {
        self.sum_w.add(weight);
        self.sum_w2.add(weight * weight);
    }

    fn finish(mut self) -> Self {
        let n = self.n_samples as f64;
        if self.n_samples == 0 {
            self.p_hat = 0.0;
            self.stderr = 0.0;
            return self;
        }
        let p = self.sum_w.value() / n;
        let var = match self.method {
            Method::Naive => p * (1.0 - p),
            Method::Tilted if self.n_samples > 1 => {
                ((self.sum_w2.value() - n * p * p) / (n - 1.0)).max(0.0)
            }
            Method::Tilted => 0.0,
        };
        self.p_hat = p;
        self.stderr = (var.max(0.0) / n).sqrt();
        self
    }

    /// Pools two estimates of the same event on the same instance.
    pub fn merge(&self, other: &TailEstimate) -> Result<TailEstimate> {
        if self.method != other.method || self.event != other.event {
            return Err(Error::MergeMismatch(format!(
                "{:?}/{:?} vs {:?}/{:?}",
                self.method, self.event, other.method, other.event
            )));
        }
        if self.instance != other.instance {
            return Err(Error::MergeMismatch(
                "estimates belong to different instances".into(),
            ));
        }
        let seed = match (self.n_samples, other.n_samples) {
            (_, 0) => self.seed,
            (0, _) => other.seed,
            _ => self.seed.min(other.seed),
        };
        let mut out = self.clone();
        out.seed = seed;
        out.n_samples += other.n_samples;
        out.sum_w.absorb(&other.sum_w);
        out.sum_w2.absorb(&other.sum_w2);
        Ok(out.finish())
    }
}

/// Exponential change of measure aimed at the terminal sum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TiltPlan {
    pub theta: f64,
    /// `(1/n) Σ_j log E e^{θ X_j}`
    pub step_log_mgf: f64,
    pub total_log_mgf: f64,
    /// `x B_n / n`
    pub drift: f64,
}

/// Solves `Σ_j E_θ X_j = x B_n` for `θ >= 0` by bisection.
pub fn choose_tilt(seq: &SequenceSpec, x: f64) -> Result<TiltPlan> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "x must be finite and >= 0, got {x}"
        )));
    }
    let Some((_, hi)) = seq.dist.support() else {
        return Err(Error::TiltUnsupported(seq.dist.to_string()));
    };
    let bn = theory::bn2(seq)?.sqrt();
    if x > bn {
        return Err(Error::InvalidParameter(format!(
            "x = {x} exceeds B_n = {bn}"
        )));
    }
    let n = seq.n as f64;
    let drift = x * bn / n;
    let sigmas = distinct_sigmas(seq);
    let mean_at = |theta: f64| -> Result<f64> {
        let mut m = 0.0;
        for &(s, count) in &sigmas {
            m += count as f64 * s * seq.dist.tilted_mean(s * theta)?;
        }
        Ok(m / n)
    };
    let sup = sigmas.iter().map(|&(s, c)| c as f64 * s * hi).sum::<f64>() / n;
    if drift >= sup {
        return Err(Error::DriftOutsideHull {
            drift,
            lo: -sup,
            hi: sup,
        });
    }
    let theta = if drift == 0.0 {
        0.0
    } else {
        let smax = sigmas.iter().map(|&(s, _)| s).fold(0.0, f64::max);
        let mut upper = 1.0 / smax;
        while mean_at(upper)? < drift {
            upper *= 2.0;
            if !upper.is_finite() {
                return Err(Error::Numeric("tilt bracket diverged".into()));
            }
        }
        let mut lower = 0.0;
        for _ in 0..400 {
            let mid = 0.5 * (lower + upper);
            if mid <= lower || mid >= upper {
                break;
            }
            if mean_at(mid)? < drift {
                lower = mid;
            } else {
                upper = mid;
            }
        }
        let pick = if (mean_at(lower)? - drift).abs() <= (mean_at(upper)? - drift).abs() {
            lower
        } else {
            upper
        };
        let miss = (mean_at(pick)? - drift).abs();
        if miss > TILT_TOL {
            return Err(Error::Numeric(format!(
                "tilt root-finding missed by {miss:e}"
            )));
        }
        pick
    };
    let mut total = 0.0;
    for &(s, count) in &sigmas {
        total += count as f64 * seq.dist.log_mgf(s * theta)?;
    }
    Ok(TiltPlan {
        theta,
        step_log_mgf: total / n,
        total_log_mgf: total,
        drift,
    })
}

/// `(σ, multiplicity)` over the schedule, in first-seen order.
fn distinct_sigmas(seq: &SequenceSpec) -> Vec<(f64, u64)> {
    if seq.is_iid() {
        return vec![(seq.scale, seq.n)];
    }
    let mut out: Vec<(f64, u64)> = Vec::new();
    let mut index: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
    for j in 1..=seq.n {
        let s = seq.sigma(j);
        match index.get(&s.to_bits()) {
            Some(&i) => out[i].1 += 1,
            None => {
                index.insert(s.to_bits(), out.len());
                out.push((s, 1));
            }
        }
    }
    out
}

fn instance_fingerprint(seq: &SequenceSpec, x: f64) -> u64 {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(seq).expect("sequence serializes"));
    h.update(x.to_bits().to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

enum Steps {
    Naive { sampler: Sampler, sigmas: Vec<f64> },
    Tilted { laws: Vec<(f64, TiltedLaw)> },
}

/// A configured Monte Carlo run.
pub struct Simulation {
    x: f64,
    n: u64,
    n_samples: u64,
    seed: u64,
    method: Method,
    instance: u64,
    steps: Steps,
    plan: Option<TiltPlan>,
}

impl Simulation {
    pub fn new(
        seq: &SequenceSpec,
        x: f64,
        n_samples: u64,
        seed: u64,
        method: Method,
    ) -> Result<Self> {
        seq.validate()?;
        if n_samples < MIN_SAMPLES {
            return Err(Error::InvalidParameter(format!(
                "need at least {MIN_SAMPLES} samples, got {n_samples}"
            )));
        }
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "x must be finite and >= 0, got {x}"
            )));
        }
        if seq.n > theory::MAX_MATERIALIZED_N {
            return Err(Error::InvalidParameter(format!(
                "n = {} too long to simulate",
                seq.n
            )));
        }
        let sigmas: Vec<f64> = (1..=seq.n).map(|j| seq.sigma(j)).collect();
        let (steps, plan) = match method {
            Method::Naive => (
                Steps::Naive {
                    sampler: seq.dist.sampler(),
                    sigmas,
                },
                None,
            ),
            Method::Tilted => {
                let plan = choose_tilt(seq, x)?;
                let laws = sigmas
                    .iter()
                    .map(|&s| Ok((s, seq.dist.tilt(s * plan.theta)?.0)))
                    .collect::<Result<Vec<_>>>()?;
                (Steps::Tilted { laws }, Some(plan))
            }
        };
        Ok(Self {
            x,
            n: seq.n,
            n_samples,
            seed,
            method,
            instance: instance_fingerprint(seq, x),
            steps,
            plan,
        })
    }

    pub fn plan(&self) -> Option<&TiltPlan> {
        self.plan.as_ref()
    }

    pub fn chunk_count(&self) -> u64 {
        self.n_samples.div_ceil(CHUNK_SIZE)
    }

    fn empty_pair(&self) -> (TailEstimate, TailEstimate) {
        (
            TailEstimate::empty(self.method, Event::Max, self.seed, self.instance),
            TailEstimate::empty(self.method, Event::Sum, self.seed, self.instance),
        )
    }

    /// Runs one chunk; the last chunk may be partial.
    pub fn run_chunk(&self, chunk: u64) -> (TailEstimate, TailEstimate) {
        let start = chunk * CHUNK_SIZE;
        let paths = CHUNK_SIZE.min(self.n_samples.saturating_sub(start));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(chunk);
        let (mut est_max, mut est_sum) = self.empty_pair();
        est_max.n_samples = paths;
        est_sum.n_samples = paths;
        let (theta, log_mgf) = self
            .plan
            .as_ref()
            .map_or((0.0, 0.0), |p| (p.theta, p.total_log_mgf));
        for _ in 0..paths {
            let (mut s, mut v2, mut top) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
            match &self.steps {
                Steps::Naive { sampler, sigmas } => {
                    for &sigma in sigmas {
                        let step = sigma * sampler.sample(&mut rng);
                        s += step;
                        v2 += step * step;
                        top = top.max(s);
                    }
                }
                Steps::Tilted { laws } => {
                    for (sigma, law) in laws {
                        let step = sigma * law.sample(&mut rng);
                        s += step;
                        v2 += step * step;
                        top = top.max(s);
                    }
                }
            }
            let v = v2.sqrt();
            let barrier = self.x * v;
            let slack = event_slack(barrier, v);
            let hit_max = top >= barrier - slack;
            let hit_sum = s >= barrier - slack;
            if !hit_max {
                continue;
            }
            let w = match self.method {
                Method::Naive => 1.0,
                Method::Tilted => (log_mgf - theta * s).exp(),
            };
            est_max.record(w);
            if hit_sum {
                est_sum.record(w);
            }
        }
        (est_max.finish(), est_sum.finish())
    }

    /// Runs chunks `range` on up to `workers` threads and pools them in
    /// ascending chunk order.
    pub fn run_range(
        &self,
        range: Range<u64>,
        workers: usize,
    ) -> Result<(TailEstimate, TailEstimate)> {
        let parts: Vec<(TailEstimate, TailEstimate)> = if workers <= 1 {
            range.map(|c| self.run_chunk(c)).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
            pool.install(|| range.into_par_iter().map(|c| self.run_chunk(c)).collect())
        };
        let (mut acc_max, mut acc_sum) = self.empty_pair();
        for (m, s) in &parts {
            acc_max = acc_max.merge(m)?;
            acc_sum = acc_sum.merge(s)?;
        }
        Ok((acc_max, acc_sum))
    }

    pub fn run(&self, workers: usize) -> Result<(TailEstimate, TailEstimate)> {
        self.run_range(0..self.chunk_count(), workers)
    }

    pub fn n(&self) -> u64 {
        self.n
    }
}

/// Estimates both events on shared paths.
pub fn simulate(
    seq: &SequenceSpec,
    x: f64,
    n_samples: u64,
    seed: u64,
    method: Method,
    workers: usize,
) -> Result<(TailEstimate, TailEstimate)> {
    Simulation::new(seq, x, n_samples, seed, method)?.run(workers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::DistributionSpec;

    fn rad(n: u64) -> SequenceSpec {
        SequenceSpec::iid(DistributionSpec::Rademacher { scale: 1.0 }, n).unwrap()
    }

    #[test]
    fn rademacher_tilt_is_atanh() {
        for (n, x) in [(64u64, 2.0), (256, 2.5), (16, 1.0), (100, 0.3)] {
            let plan = choose_tilt(&rad(n), x).unwrap();
            let want = (x / (n as f64).sqrt()).atanh();
            assert!((plan.theta - want).abs() < 1e-12, "n={n} x={x}");
            assert!((plan.drift - x / (n as f64).sqrt()).abs() < 1e-15);
        }
        assert_eq!(choose_tilt(&rad(10), 0.0).unwrap().theta, 0.0);
    }

    #[test]
    fn tilt_hits_drift_for_uniform() {
        let seq = SequenceSpec::iid(
            DistributionSpec::Uniform {
                half_width: 3f64.sqrt(),
            },
            100,
        )
        .unwrap();
        // x / sqrt(n) = 0.3
        let plan = choose_tilt(&seq, 3.0).unwrap();
        let m = seq.dist.tilted_mean(plan.theta).unwrap();
        assert!((m - 0.3).abs() <= 1e-10);
    }

    #[test]
    fn tilt_errors() {
        let ex =
            SequenceSpec::iid(DistributionSpec::CenteredExponential { rate: 1.0 }, 10).unwrap();
        assert!(matches!(
            choose_tilt(&ex, 1.0),
            Err(Error::TiltUnsupported(_))
        ));
        // x = sqrt(n) puts the drift on the support edge
        assert!(matches!(
            choose_tilt(&rad(16), 4.0),
            Err(Error::DriftOutsideHull { .. })
        ));
        assert!(matches!(
            Simulation::new(&ex, 1.0, 10_000, 1, Method::Tilted),
            Err(Error::TiltUnsupported(_))
        ));
    }

    #[test]
    fn sample_count_precondition() {
        assert!(simulate(&rad(4), 1.0, 999, 1, Method::Naive, 1).is_err());
        assert!(simulate(&rad(4), 1.0, 0, 1, Method::Naive, 1).is_err());
    }

    #[test]
    fn naive_estimate_matches_enumeration() {
        let (m, s) = simulate(&rad(4), 1.0, 1_000_000, 5, Method::Naive, 4).unwrap();
        assert!((m.p_hat - 0.375).abs() < 4.0 * m.stderr, "{m:?}");
        assert!((s.p_hat - 0.3125).abs() < 4.0 * s.stderr, "{s:?}");
        let want_se = (m.p_hat * (1.0 - m.p_hat) / 1e6).sqrt();
        assert_eq!(m.stderr, want_se);
    }

    #[test]
    fn zero_level_max_at_least_half() {
        for d in [
            DistributionSpec::Rademacher { scale: 1.0 },
            DistributionSpec::Uniform { half_width: 1.0 },
            DistributionSpec::StudentT { nu: 5.0 },
        ] {
            let seq = SequenceSpec::iid(d, 30).unwrap();
            let (m, s) = simulate(&seq, 0.0, 20_000, 9, Method::Naive, 1).unwrap();
            assert!(m.p_hat >= 0.5, "{d}: {}", m.p_hat);
            assert!(s.p_hat <= m.p_hat);
        }
    }

    #[test]
    fn chunk_halves_merge_bit_identically() {
        for method in [Method::Naive, Method::Tilted] {
            let sim = Simulation::new(&rad(32), 2.0, 5 * CHUNK_SIZE + 123, 77, method).unwrap();
            let whole = sim.run(1).unwrap();
            let k = sim.chunk_count();
            let a = sim.run_range(0..k / 2, 1).unwrap();
            let b = sim.run_range(k / 2..k, 3).unwrap();
            let ab = a.0.merge(&b.0).unwrap();
            let ba = b.0.merge(&a.0).unwrap();
            assert_eq!(ab, whole.0);
            assert_eq!(ba, whole.0);
            assert_eq!(a.1.merge(&b.1).unwrap(), whole.1);
            assert_eq!(ab.p_hat.to_bits(), whole.0.p_hat.to_bits());
        }
    }

    #[test]
    fn merge_identity_and_mismatch() {
        let sim = Simulation::new(&rad(8), 1.0, 4_000, 3, Method::Naive).unwrap();
        let (m, s) = sim.run(1).unwrap();
        let e = TailEstimate::empty(Method::Naive, Event::Max, 3, m.instance());
        assert_eq!(m.merge(&e).unwrap(), m);
        assert_eq!(e.merge(&m).unwrap(), m);
        assert!(matches!(m.merge(&s), Err(Error::MergeMismatch(_))));
        let other = Simulation::new(&rad(9), 1.0, 4_000, 3, Method::Naive)
            .unwrap()
            .run(1)
            .unwrap();
        assert!(m.merge(&other.0).is_err());
    }

    #[test]
    fn tilted_weights_nest_events() {
        let (m, s) = simulate(&rad(64), 2.0, 50_000, 1, Method::Tilted, 2).unwrap();
        assert!(s.p_hat <= m.p_hat);
        assert!(m.stderr > 0.0);
    }
}
