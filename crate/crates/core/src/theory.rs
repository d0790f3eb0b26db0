//! Explicit functionals and proof constants for a sequence of independent
//! increments at a given deviation level `x`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionSpec, MomentQuery};
use crate::error::{Error, Result};

/// Largest `n` for which per-index work (blocks, per-index schedules) is
/// materialized.
pub const MAX_MATERIALIZED_N: u64 = 100_000_000;

/// How the per-index scales `σ_j` are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Iid,
    /// Explicit `σ_1, ..., σ_n`.
    PerIndex(Vec<f64>),
}

/// `X_j = scale · σ_j · Y_j` with `Y_j` iid from `dist`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub n: u64,
    pub dist: DistributionSpec,
    #[serde(default = "one")]
    pub scale: f64,
    pub schedule: Schedule,
}

fn one() -> f64 {
    1.0
}

impl SequenceSpec {
    pub fn iid(dist: DistributionSpec, n: u64) -> Result<Self> {
        let s = Self {
            n,
            dist,
            scale: 1.0,
            schedule: Schedule::Iid,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn scaled(dist: DistributionSpec, scales: Vec<f64>) -> Result<Self> {
        let s = Self {
            n: scales.len() as u64,
            dist,
            scale: 1.0,
            schedule: Schedule::PerIndex(scales),
        };
        s.validate()?;
        Ok(s)
    }

    /// The sequence `{c X_j}`.
    pub fn rescaled(&self, c: f64) -> Result<Self> {
        let mut s = self.clone();
        s.scale *= c;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.dist.validate()?;
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be >= 1".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if let Schedule::PerIndex(s) = &self.schedule {
            if s.len() as u64 != self.n {
                return Err(Error::InvalidParameter(format!(
                    "schedule has {} scales but n = {}",
                    s.len(),
                    self.n
                )));
            }
            if let Some(bad) = s.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter(format!(
                    "all σ_j must be positive, got {bad}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_iid(&self) -> bool {
        matches!(self.schedule, Schedule::Iid)
    }

    /// Total scale of `X_j` (1-based `j`).
    pub fn sigma(&self, j: u64) -> f64 {
        match &self.schedule {
            Schedule::Iid => self.scale,
            Schedule::PerIndex(s) => self.scale * s[(j - 1) as usize],
        }
    }

    /// Truncated moment of `X_j = σ Y`: `σ^p E|Y|^p 1{|Y| ≶ c/σ}`.
    pub fn moment_at_scale(&self, sigma: f64, q: MomentQuery) -> Result<f64> {
        let inner = MomentQuery {
            cutoff: q.cutoff / sigma,
            ..q
        };
        Ok(sigma.powf(q.order) * self.dist.moment(inner)?)
    }

    /// `Σ_j f(σ_j)`, evaluating `f` once per distinct scale.
    fn total<F: Fn(f64) -> Result<f64>>(&self, f: F) -> Result<f64> {
        match &self.schedule {
            Schedule::Iid => Ok(self.n as f64 * f(self.scale)?),
            Schedule::PerIndex(_) => Ok(self.per_index(f)?.iter().sum()),
        }
    }

    /// `[f(σ_1), ..., f(σ_n)]` with a cache over distinct scales.
    fn per_index<F: Fn(f64) -> Result<f64>>(&self, f: F) -> Result<Vec<f64>> {
        if self.n > MAX_MATERIALIZED_N {
            return Err(Error::InvalidParameter(format!(
                "n = {} too large to materialize per-index values",
                self.n
            )));
        }
        let mut cache: HashMap<u64, f64> = HashMap::new();
        (1..=self.n)
            .map(|j| {
                let s = self.sigma(j);
                if let Some(v) = cache.get(&s.to_bits()) {
                    return Ok(*v);
                }
                let v = f(s)?;
                cache.insert(s.to_bits(), v);
                Ok(v)
            })
            .collect()
    }

    fn second_moment(&self, sigma: f64) -> f64 {
        sigma * sigma * self.dist.variance()
    }

    /// `max_j E X_j^2`.
    fn max_second_moment(&self) -> f64 {
        match &self.schedule {
            Schedule::Iid => self.second_moment(self.scale),
            Schedule::PerIndex(s) => {
                let m = s.iter().cloned().fold(0.0, f64::max);
                self.second_moment(self.scale * m)
            }
        }
    }
}

/// Functionals of `(sequence, x, r, δ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryQuantities {
    /// `B_n^2 = Σ E X_j^2`
    pub bn2: f64,
    /// `L_{n,r} = Σ E|X_j|^{2+r}`
    pub lnr: f64,
    /// `d_{n,r} = B_n / L_{n,r}^{1/(2+r)}`
    pub dnr: f64,
    pub delta_nx: f64,
    /// 0 when no index qualifies.
    pub n0: u64,
    pub gamma: f64,
    pub epsilon: f64,
    pub m: u64,
    pub a0_ok: bool,
    pub bor_ok: bool,
    pub range_ok: bool,
    /// `x / d_{n,r}`; the little-o part of the admissible range is left to
    /// the reader.
    pub x_over_dnr: f64,
    pub n0_applicable: bool,
}

fn check_x(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "x must be positive and finite, got {x}"
        )))
    }
}

fn check_r_delta(r: f64, delta: f64) -> Result<()> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "r must lie in (0, 1], got {r}"
        )));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "delta must be positive, got {delta}"
        )));
    }
    Ok(())
}

/// `B_n^2`.
pub fn bn2(seq: &SequenceSpec) -> Result<f64> {
    seq.total(|s| Ok(seq.second_moment(s)))
}

/// `L_{n,r}`.
pub fn lnr(seq: &SequenceSpec, r: f64) -> Result<f64> {
    seq.total(|s| seq.moment_at_scale(s, MomentQuery::raw(2.0 + r)))
}

/// `d_{n,r}`.
pub fn dnr(seq: &SequenceSpec, r: f64) -> Result<f64> {
    Ok(bn2(seq)?.sqrt() / lnr(seq, r)?.powf(1.0 / (2.0 + r)))
}

/// `Δ_{n,x}`: truncated-above second moments plus truncated-below third
/// moments at level `B_n / x`.
pub fn delta_nx(seq: &SequenceSpec, x: f64) -> Result<f64> {
    check_x(x)?;
    let b = bn2(seq)?.sqrt();
    let t = b / x;
    let above = seq.total(|s| seq.moment_at_scale(s, MomentQuery::above(2.0, t)))?;
    let below = seq.total(|s| seq.moment_at_scale(s, MomentQuery::below(3.0, t)))?;
    let xb = x / b;
    Ok(xb * xb * above + xb * xb * xb * below)
}

/// `192 B_n^2 log(x ∨ e) / x^2`.
pub fn n0_threshold(bn2: f64, x: f64) -> f64 {
    192.0 * bn2 * x.ln().max(1.0) / (x * x)
}

/// `n₀`: the largest `k` whose tail variance `Σ_{j>=k} E X_j^2` reaches the
/// threshold (ties qualify), or 0 when no `k` does.
pub fn n0(seq: &SequenceSpec, x: f64) -> Result<u64> {
    check_x(x)?;
    let thr = n0_threshold(bn2(seq)?, x);
    match &seq.schedule {
        Schedule::Iid => {
            let v = seq.second_moment(seq.scale);
            let n = seq.n;
            let tail = |k: u64| (n - k + 1) as f64 * v;
            let guess = (n as f64 + 1.0 - thr / v).floor();
            if guess < 1.0 {
                return Ok(if tail(1) >= thr { 1 } else { 0 });
            }
            let mut k = (guess as u64).min(n);
            while k >= 1 && tail(k) < thr {
                k -= 1;
            }
            while k >= 1 && k < n && tail(k + 1) >= thr {
                k += 1;
            }
            Ok(k)
        }
        Schedule::PerIndex(_) => {
            let v = seq.per_index(|s| Ok(seq.second_moment(s)))?;
            let mut tail = 0.0;
            for k in (1..=v.len()).rev() {
                tail += v[k - 1];
                if tail >= thr {
                    return Ok(k as u64);
                }
            }
            Ok(0)
        }
    }
}

/// `γ = min(δ, 1) / 72`.
pub fn gamma(delta: f64) -> f64 {
    delta.min(1.0) / 72.0
}

/// `ε = max(2 Δ^{2/9}, γ x^{-1/2}, γ x^{-δ/10})`.
pub fn epsilon(delta_nx: f64, x: f64, delta: f64) -> f64 {
    let g = gamma(delta);
    (2.0 * delta_nx.powf(2.0 / 9.0))
        .max(g * x.powf(-0.5))
        .max(g * x.powf(-delta / 10.0))
}

/// Everything at once. The unknown absolute constant in the `Δ` regime
/// check is taken as `a_const` (1 by default through
/// [`compute_quantities`]).
pub fn compute_quantities_with(
    seq: &SequenceSpec,
    x: f64,
    r: f64,
    delta: f64,
    a_const: f64,
) -> Result<TheoryQuantities> {
    check_x(x)?;
    check_r_delta(r, delta)?;
    if !(a_const > 0.0 && a_const.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "A must be positive, got {a_const}"
        )));
    }
    let bn2 = bn2(seq)?;
    let lnr = lnr(seq, r)?;
    let dnr = bn2.sqrt() / lnr.powf(1.0 / (2.0 + r));
    let delta_nx = delta_nx(seq, x)?;
    let n0 = n0(seq, x)?;
    let eps = epsilon(delta_nx, x, delta);
    Ok(TheoryQuantities {
        bn2,
        lnr,
        dnr,
        delta_nx,
        n0,
        gamma: gamma(delta),
        epsilon: eps,
        m: (x * x / 2.0).floor() as u64,
        a0_ok: delta_nx <= delta.powf(4.5).min(1.0) / a_const,
        bor_ok: eps <= (1.0 / 24.0f64).min(delta / 72.0),
        range_ok: x <= bn2.sqrt(),
        x_over_dnr: x / dnr,
        n0_applicable: n0 != 0,
    })
}

pub fn compute_quantities(
    seq: &SequenceSpec,
    x: f64,
    r: f64,
    delta: f64,
) -> Result<TheoryQuantities> {
    compute_quantities_with(seq, x, r, delta, 1.0)
}

/// Outcome of the tail moment-ratio condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ad2Check {
    pub holds: bool,
    /// Index `k` maximizing the tail ratio (smallest on ties).
    pub worst_k: u64,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; `<= 1` iff the condition holds.
    pub margin: f64,
}

/// `max_k Σ_{j>=k} E|X_j|^{2+r} / Σ_{j>=k} E X_j^2 <= τ L^{r/(2+r)} / d^δ`.
pub fn check_ad2(seq: &SequenceSpec, r: f64, delta: f64, tau: f64) -> Result<Ad2Check> {
    check_r_delta(r, delta)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let l = lnr(seq, r)?;
    let d = dnr(seq, r)?;
    let rhs = tau * l.powf(r / (2.0 + r)) / d.powf(delta);
    let (worst_k, lhs) = match &seq.schedule {
        Schedule::Iid => {
            let s = seq.scale;
            (
                1,
                seq.moment_at_scale(s, MomentQuery::raw(2.0 + r))? / seq.second_moment(s),
            )
        }
        Schedule::PerIndex(_) => {
            let hi = seq.per_index(|s| seq.moment_at_scale(s, MomentQuery::raw(2.0 + r)))?;
            let lo = seq.per_index(|s| Ok(seq.second_moment(s)))?;
            let (mut num, mut den) = (0.0, 0.0);
            let mut best = (seq.n, f64::NEG_INFINITY);
            for k in (1..=hi.len()).rev() {
                num += hi[k - 1];
                den += lo[k - 1];
                let ratio = num / den;
                if ratio >= best.1 {
                    best = (k as u64, ratio);
                }
            }
            best
        }
    };
    Ok(Ad2Check {
        holds: lhs <= rhs,
        worst_k,
        lhs,
        rhs,
        margin: lhs / rhs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum A2Status {
    Holds,
    Fails,
    /// `n₀ = 0` or `n₀ = n`; the condition is not defined.
    Inapplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A2Check {
    pub status: A2Status,
    pub n0: u64,
    /// Ratio over `j > n₀`. For `n₀ = 0` this is the ratio over all indices
    /// (reported for information); `None` when the range is empty.
    pub lhs: Option<f64>,
    pub rhs: f64,
}

/// Truncated third-to-second moment ratio over the indices after `n₀`
/// against `B_n / x^{1+δ}`.
pub fn check_a2(seq: &SequenceSpec, x: f64, delta: f64) -> Result<A2Check> {
    check_x(x)?;
    let n0 = n0(seq, x)?;
    let b = bn2(seq)?.sqrt();
    let rhs = b / x.powf(1.0 + delta);
    let t = b / x;
    let lhs = if n0 >= seq.n {
        None
    } else {
        let count = (seq.n - n0) as f64;
        let (num, den) = match &seq.schedule {
            Schedule::Iid => {
                let s = seq.scale;
                (
                    count * seq.moment_at_scale(s, MomentQuery::below(3.0, t))?,
                    count * seq.second_moment(s),
                )
            }
            Schedule::PerIndex(_) => {
                let hi = seq.per_index(|s| seq.moment_at_scale(s, MomentQuery::below(3.0, t)))?;
                let lo = seq.per_index(|s| Ok(seq.second_moment(s)))?;
                let start = n0 as usize;
                (hi[start..].iter().sum(), lo[start..].iter().sum())
            }
        };
        Some(num / den)
    };
    let status = match lhs {
        _ if n0 == 0 || n0 == seq.n => A2Status::Inapplicable,
        Some(l) if l <= rhs => A2Status::Holds,
        _ => A2Status::Fails,
    };
    Ok(A2Check {
        status,
        n0,
        lhs,
        rhs,
    })
}

/// Greedy block partition of `1..=n` by variance mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Blocks {
    /// Right ends `k_1 < ... < k_T = n`.
    pub ends: Vec<u64>,
    /// `ε^3 B_n^2 / (2 x^2)`.
    pub capacity: f64,
    /// Some single variance exceeds the capacity, so those blocks hold one
    /// element each.
    pub degenerate: bool,
    /// `x^2 max_k E X_k^2 <= ε^3 B_n^2 / 4`.
    pub premise_holds: bool,
    /// `4 x^2 / ε^3 + 1`.
    pub count_bound: f64,
}

impl Blocks {
    pub fn count(&self) -> u64 {
        self.ends.len() as u64
    }
}

/// Each block is extended while its variance mass stays within
/// `ε^3 B_n^2 / (2x^2)`; the last block is closed at `n`. When the premise
/// `x^2 max E X_k^2 <= ε^3 B_n^2/4` holds, the count bound
/// `T <= 4x^2/ε^3 + 1` is checked and a violation is reported as an error.
pub fn build_blocks(seq: &SequenceSpec, x: f64, eps: f64) -> Result<Blocks> {
    if !(x >= 2.0 && x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "block construction needs x >= 2, got {x}"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    if seq.n > MAX_MATERIALIZED_N {
        return Err(Error::InvalidParameter(format!(
            "n = {} too large for blocks",
            seq.n
        )));
    }
    let bn2 = bn2(seq)?;
    let eps3 = eps * eps * eps;
    let capacity = eps3 * bn2 / (2.0 * x * x);
    let max_var = seq.max_second_moment();
    let n = seq.n;
    let ends = match &seq.schedule {
        Schedule::Iid => {
            let v = seq.second_moment(seq.scale);
            let mut per = (capacity / v).floor().max(1.0) as u64;
            while per > 1 && per as f64 * v > capacity {
                per -= 1;
            }
            while ((per + 1) as f64) * v <= capacity && per < n {
                per += 1;
            }
            let per = per.min(n);
            let mut ends: Vec<u64> = (1..).map(|i| i * per).take_while(|&e| e < n).collect();
            ends.push(n);
            ends
        }
        Schedule::PerIndex(_) => {
            let v = seq.per_index(|s| Ok(seq.second_moment(s)))?;
            let mut ends = Vec::new();
            let mut k = 0usize;
            while k < v.len() {
                let mut mass = v[k];
                k += 1;
                while k < v.len() && mass + v[k] <= capacity {
                    mass += v[k];
                    k += 1;
                }
                ends.push(k as u64);
            }
            ends
        }
    };
    let premise_holds = x * x * max_var <= eps3 * bn2 / 4.0;
    let count_bound = 4.0 * x * x / eps3 + 1.0;
    let blocks = Blocks {
        ends,
        capacity,
        degenerate: max_var > capacity,
        premise_holds,
        count_bound,
    };
    if premise_holds && blocks.count() as f64 > count_bound {
        return Err(Error::Numeric(format!(
            "block count {} exceeds 4x^2/eps^3 + 1 = {count_bound}",
            blocks.count()
        )));
    }
    Ok(blocks)
}

/// Bracket `x^{-min(1/4, δ/20)} + Δ^{1/9}` of the ratio error; the constant
/// in front is left to the caller.
pub fn envelope_prop2(x: f64, delta_nx: f64, delta: f64) -> Result<f64> {
    if x.is_nan() || x < 2.0 {
        return Err(Error::InvalidParameter(format!(
            "envelope needs x >= 2, got {x}"
        )));
    }
    if delta_nx.is_nan() || delta_nx < 0.0 || delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidParameter(
            "envelope needs Δ >= 0 and δ > 0".into(),
        ));
    }
    Ok(x.powf(-(0.25f64).min(delta / 20.0)) + delta_nx.powf(1.0 / 9.0))
}

/// The three members of the truncation-mass chain
/// `Σ_k P(|X_k| >= εB_n/x) <= ε^{-3} Δ_{n,x} <= ε^{3/2}/16`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationChain {
    pub mass: f64,
    pub middle: f64,
    pub top: f64,
}

impl TruncationChain {
    pub fn holds(&self) -> bool {
        self.mass <= self.middle && self.middle <= self.top
    }
}

pub fn truncation_chain(
    seq: &SequenceSpec,
    x: f64,
    q: &TheoryQuantities,
) -> Result<TruncationChain> {
    check_x(x)?;
    let level = q.epsilon * q.bn2.sqrt() / x;
    let mass = seq.total(|s| Ok(seq.dist.abs_tail_prob(level / s)))?;
    Ok(TruncationChain {
        mass,
        middle: q.delta_nx / q.epsilon.powi(3),
        top: q.epsilon.powf(1.5) / 16.0,
    })
}
