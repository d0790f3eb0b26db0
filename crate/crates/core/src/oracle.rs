//! Exact tail probabilities of the max- and sum-events
//! `{max_{k<=n} S_k >= x V_n}` and `{S_n >= x V_n}`.
//!
//! Two independent routes: exhaustive enumeration of sign/atom paths for
//! any finitely supported sequence (path-dependent `V_n`), and an
//! absorbing-barrier dynamic program for Rademacher walks, where
//! `V_n = c√n` is deterministic and the event is a lattice barrier crossing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory::SequenceSpec;

/// Largest number of enumerated paths.
pub const OUTCOME_BUDGET: f64 = (1u64 << 24) as f64;
/// Largest walk length accepted by the lattice DP.
pub const MAX_LATTICE_N: u64 = 100_000;

// Relative slack under which a computed `S_k` counts as hitting `x V_n`.
const TIE_RTOL: f64 = 1e-12;
// Slack for deciding that `x√n` is a lattice point.
const LATTICE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactMethod {
    Enumeration,
    LatticeDp,
}

impl ExactMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Enumeration => "enumeration",
            Self::LatticeDp => "lattice_dp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactResult {
    pub p_max: f64,
    pub p_sum: f64,
    pub n: u64,
    pub x: f64,
    pub method: ExactMethod,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

fn check_x(x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "x must be finite and >= 0, got {x}"
        )))
    }
}

struct Walk<'a> {
    // (value, log probability) per step
    steps: Vec<Vec<(f64, f64)>>,
    x: f64,
    p_max: &'a mut Compensated,
    p_sum: &'a mut Compensated,
}

impl Walk<'_> {
    fn descend(&mut self, depth: usize, s: f64, v2: f64, max_s: f64, log_p: f64) {
        if depth == self.steps.len() {
            let v = v2.sqrt();
            let barrier = self.x * v;
            let slack = event_slack(barrier, v);
            let p = log_p.exp();
            if max_s >= barrier - slack {
                self.p_max.add(p);
            }
            if s >= barrier - slack {
                self.p_sum.add(p);
            }
            return;
        }
        for i in 0..self.steps[depth].len() {
            let (a, lp) = self.steps[depth][i];
            let s1 = s + a;
            self.descend(depth + 1, s1, v2 + a * a, max_s.max(s1), log_p + lp);
        }
    }
}

/// Slack under which a computed partial sum counts as reaching `barrier`.
pub(crate) fn event_slack(barrier: f64, v: f64) -> f64 {
    TIE_RTOL * (barrier + v)
}

/// Exact probabilities by summing over every path of a finitely supported
/// sequence. Path weights are carried as log-probabilities.
pub fn enumerate_exact(seq: &SequenceSpec, x: f64) -> Result<ExactResult> {
    check_x(x)?;
    seq.validate()?;
    let atoms = seq.dist.atoms().ok_or_else(|| {
        Error::InvalidParameter(format!("{} does not have finite support", seq.dist))
    })?;
    let outcomes = (atoms.len() as f64).powf(seq.n as f64);
    if outcomes > OUTCOME_BUDGET {
        return Err(Error::OutcomeBudget {
            outcomes,
            budget: OUTCOME_BUDGET,
        });
    }
    let steps = (1..=seq.n)
        .map(|j| {
            let s = seq.sigma(j);
            atoms.iter().map(|&(v, w)| (s * v, w.ln())).collect()
        })
        .collect();
    let (mut p_max, mut p_sum) = (Compensated::default(), Compensated::default());
    Walk {
        steps,
        x,
        p_max: &mut p_max,
        p_sum: &mut p_sum,
    }
    .descend(0, 0.0, 0.0, f64::NEG_INFINITY, 0.0);
    Ok(ExactResult {
        p_max: p_max.value().min(1.0),
        p_sum: p_sum.value().min(1.0),
        n: seq.n,
        x,
        method: ExactMethod::Enumeration,
    })
}

/// Smallest lattice point `>= x√n`, with `x√n` itself counted when it is an
/// integer up to rounding.
pub fn lattice_barrier(n: u64, x: f64) -> i64 {
    let t = x * (n as f64).sqrt();
    let r = t.round();
    if (t - r).abs() <= LATTICE_RTOL * t.max(1.0) {
        r as i64
    } else {
        t.ceil() as i64
    }
}

fn check_lattice(n: u64, x: f64, scale: f64) -> Result<()> {
    check_x(x)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    if n > MAX_LATTICE_N {
        return Err(Error::LatticeTooLarge {
            n,
            max: MAX_LATTICE_N,
        });
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scale must be positive, got {scale}"
        )));
    }
    Ok(())
}

/// Dense probability row over walk positions `-n..=n`.
struct Row {
    offset: i64,
    cur: Vec<f64>,
    next: Vec<f64>,
}

impl Row {
    fn new(n: u64) -> Self {
        let len = 2 * n as usize + 3;
        let mut cur = vec![0.0; len];
        let offset = n as i64 + 1;
        cur[offset as usize] = 1.0;
        Self {
            offset,
            cur,
            next: vec![0.0; len],
        }
    }

    #[inline]
    fn idx(&self, s: i64) -> usize {
        (s + self.offset) as usize
    }
}

/// `P(max_{1<=k<=n} S_k >= b)` for a simple symmetric walk, by propagating
/// the unabsorbed mass and absorbing at the barrier. States that can no
/// longer reach the barrier are dropped.
fn dp_max(n: u64, b: i64) -> f64 {
    let n_i = n as i64;
    if b > n_i {
        return 0.0;
    }
    let mut row = Row::new(n);
    let mut absorbed = Compensated::default();
    let (mut lo, mut hi) = (0i64, 0i64);
    for k in 1..=n_i {
        let rem = n_i - k;
        let (nlo, nhi) = (lo - 1, hi + 1);
        let (a, z) = (row.idx(nlo), row.idx(nhi));
        row.next[a..=z].iter_mut().for_each(|v| *v = 0.0);
        let mut s = lo;
        while s <= hi {
            let p = row.cur[row.idx(s)];
            if p != 0.0 {
                let half = 0.5 * p;
                if s + 1 >= b {
                    absorbed.add(half);
                } else {
                    let i = row.idx(s + 1);
                    row.next[i] += half;
                }
                if s - 1 + rem >= b {
                    let i = row.idx(s - 1);
                    row.next[i] += half;
                }
            }
            s += 2;
        }
        std::mem::swap(&mut row.cur, &mut row.next);
        lo = nlo.max(b - rem);
        if (lo - nlo) % 2 != 0 {
            lo += 1;
        }
        hi = nhi.min(b - 1);
        if (nhi - hi) % 2 != 0 {
            hi -= 1;
        }
        if lo > hi {
            break;
        }
    }
    absorbed.value().min(1.0)
}

/// `P(S_n >= b)` for a simple symmetric walk. Mass that is certain to end
/// at or above `b`, or that can no longer get there, leaves the row early.
fn dp_sum(n: u64, b: i64) -> f64 {
    let n_i = n as i64;
    if b > n_i {
        return 0.0;
    }
    if b <= -n_i {
        return 1.0;
    }
    let mut row = Row::new(n);
    let mut settled = Compensated::default();
    let (mut lo, mut hi) = (0i64, 0i64);
    for k in 1..=n_i {
        let rem = n_i - k;
        let (nlo, nhi) = (lo - 1, hi + 1);
        let (a, z) = (row.idx(nlo), row.idx(nhi));
        row.next[a..=z].iter_mut().for_each(|v| *v = 0.0);
        let mut s = lo;
        while s <= hi {
            let p = row.cur[row.idx(s)];
            if p != 0.0 {
                let half = 0.5 * p;
                for t in [s + 1, s - 1] {
                    if t - rem >= b {
                        settled.add(half);
                    } else if t + rem >= b {
                        let i = row.idx(t);
                        row.next[i] += half;
                    }
                }
            }
            s += 2;
        }
        std::mem::swap(&mut row.cur, &mut row.next);
        lo = nlo.max(b - rem);
        if (lo - nlo) % 2 != 0 {
            lo += 1;
        }
        hi = nhi.min(b + rem - 1);
        if (nhi - hi) % 2 != 0 {
            hi -= 1;
        }
        if lo > hi {
            break;
        }
    }
    settled.value().min(1.0)
}

/// Both events for `n` Rademacher(`scale`) steps. The scale cancels from
/// `S_k / V_n` and only enters through validation.
pub fn lattice_dp_max(n: u64, x: f64, scale: f64) -> Result<ExactResult> {
    check_lattice(n, x, scale)?;
    let b = lattice_barrier(n, x);
    Ok(ExactResult {
        p_max: dp_max(n, b),
        p_sum: dp_sum(n, b),
        n,
        x,
        method: ExactMethod::LatticeDp,
    })
}

/// `P(S_n >= x V_n)` for `n` Rademacher(`scale`) steps.
pub fn lattice_dp_sum(n: u64, x: f64, scale: f64) -> Result<f64> {
    check_lattice(n, x, scale)?;
    Ok(dp_sum(n, lattice_barrier(n, x)))
}

/// Lattice DP for constant-modulus sequences, enumeration for anything
/// else within budget.
pub fn exact(seq: &SequenceSpec, x: f64) -> Result<ExactResult> {
    use crate::distributions::DistributionSpec;
    match (&seq.dist, seq.is_iid()) {
        (DistributionSpec::Rademacher { scale }, true) if seq.n <= MAX_LATTICE_N => {
            lattice_dp_max(seq.n, x, scale * seq.scale)
        }
        _ => enumerate_exact(seq, x),
    }
}
