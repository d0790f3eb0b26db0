//! Centered increment laws.
//!
//! Each family is parameterized so that its mean is exactly zero. The module
//! provides sampling, raw and truncated absolute moments, absolute tail
//! probabilities and (for bounded families) exponential tilting.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quad;

/// A zero-mean increment law.
///
/// Config literals use an internal `family` tag, e.g.
/// `{"family":"rademacher","scale":1.0}`,
/// `{"family":"two_point","a":2.0,"b":1.0}`,
/// `{"family":"uniform","half_width":1.7320508075688772}`,
/// `{"family":"centered_exponential","rate":1.0}`,
/// `{"family":"student_t","nu":5.0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    /// `±scale` with probability 1/2 each.
    Rademacher { scale: f64 },
    /// Atoms `+a` and `-b`; `P(+a) = b/(a+b)` is forced by the zero mean.
    TwoPoint { a: f64, b: f64 },
    /// Uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
    /// `E - 1/rate` with `E ~ Exp(rate)`; support `[-1/rate, ∞)`.
    CenteredExponential { rate: f64 },
    /// Standard Student t with `nu > 3` degrees of freedom.
    StudentT { nu: f64 },
}

/// Which part of `E|X|^p` a [`MomentQuery`] asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `E|X|^p 1{|X| <= c}`
    Below,
    /// `E|X|^p 1{|X| > c}`
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentQuery {
    pub order: f64,
    pub cutoff: f64,
    pub side: Side,
}

impl MomentQuery {
    /// The untruncated moment `E|X|^p`.
    pub fn raw(order: f64) -> Self {
        Self {
            order,
            cutoff: f64::INFINITY,
            side: Side::Below,
        }
    }

    pub fn below(order: f64, cutoff: f64) -> Self {
        Self {
            order,
            cutoff,
            side: Side::Below,
        }
    }

    pub fn above(order: f64, cutoff: f64) -> Self {
        Self {
            order,
            cutoff,
            side: Side::Above,
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Rademacher { scale } => write!(f, "rademacher({scale})"),
            Self::TwoPoint { a, b } => write!(f, "two_point({a}, {b})"),
            Self::Uniform { half_width } => write!(f, "uniform({half_width})"),
            Self::CenteredExponential { rate } => write!(f, "centered_exponential({rate})"),
            Self::StudentT { nu } => write!(f, "student_t({nu})"),
        }
    }
}

/// Accepts either a JSON literal or the short form `family[:p1[,p2]]`,
/// e.g. `rademacher`, `rademacher:2`, `two_point:2,1`, `uniform` (unit
/// variance), `exponential:1`, `student_t:5`.
impl FromStr for DistributionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            let d: Self = serde_json::from_str(s)
                .map_err(|e| Error::Config(format!("bad distribution literal {s:?}: {e}")))?;
            d.validate()?;
            return Ok(d);
        }
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let params: Vec<f64> = match args {
            None => Vec::new(),
            Some(a) => a
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad distribution parameter {p:?}")))
                })
                .collect::<Result<_>>()?,
        };
        let arity = |want: usize| -> Result<()> {
            if params.len() == want {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{name} takes {want} parameter(s), got {}",
                    params.len()
                )))
            }
        };
        let d = match (name.to_ascii_lowercase().as_str(), params.len()) {
            ("rademacher", 0) => Self::Rademacher { scale: 1.0 },
            ("rademacher", _) => {
                arity(1)?;
                Self::Rademacher { scale: params[0] }
            }
            ("two_point" | "twopoint", _) => {
                arity(2)?;
                Self::TwoPoint {
                    a: params[0],
                    b: params[1],
                }
            }
            ("uniform", 0) => Self::Uniform {
                half_width: 3f64.sqrt(),
            },
            ("uniform", _) => {
                arity(1)?;
                Self::Uniform {
                    half_width: params[0],
                }
            }
            ("exponential" | "centered_exponential", 0) => Self::CenteredExponential { rate: 1.0 },
            ("exponential" | "centered_exponential", _) => {
                arity(1)?;
                Self::CenteredExponential { rate: params[0] }
            }
            ("student_t" | "t", _) => {
                arity(1)?;
                Self::StudentT { nu: params[0] }
            }
            _ => return Err(Error::Config(format!("unknown distribution {s:?}"))),
        };
        d.validate()?;
        Ok(d)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Rademacher { scale } => positive("scale", scale),
            Self::TwoPoint { a, b } => positive("a", a).and(positive("b", b)),
            Self::Uniform { half_width } => positive("half_width", half_width),
            Self::CenteredExponential { rate } => positive("rate", rate),
            Self::StudentT { nu } => {
                if nu > 3.0 && nu.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "student_t requires nu > 3, got {nu}"
                    )))
                }
            }
        }
    }

    /// Moments `E|X|^p` exist for `p` strictly below this bound.
    pub fn moment_bound(&self) -> f64 {
        match *self {
            Self::StudentT { nu } => nu,
            _ => f64::INFINITY,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.support().is_some()
    }

    /// Closed support interval for bounded families.
    pub fn support(&self) -> Option<(f64, f64)> {
        match *self {
            Self::Rademacher { scale } => Some((-scale, scale)),
            Self::TwoPoint { a, b } => Some((-b, a)),
            Self::Uniform { half_width } => Some((-half_width, half_width)),
            _ => None,
        }
    }

    /// `(value, probability)` pairs for finitely supported families.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            Self::Rademacher { scale } => Some(vec![(scale, 0.5), (-scale, 0.5)]),
            Self::TwoPoint { a, b } => Some(vec![(a, b / (a + b)), (-b, a / (a + b))]),
            _ => None,
        }
    }

    /// True when `|X|` is almost surely constant (so `V_n` is deterministic).
    pub fn has_constant_modulus(&self) -> bool {
        matches!(self, Self::Rademacher { .. })
    }

    /// `E X^2`.
    pub fn variance(&self) -> f64 {
        match *self {
            Self::Rademacher { scale } => scale * scale,
            Self::TwoPoint { a, b } => a * b,
            Self::Uniform { half_width } => half_width * half_width / 3.0,
            Self::CenteredExponential { rate } => 1.0 / (rate * rate),
            Self::StudentT { nu } => nu / (nu - 2.0),
        }
    }

    /// Truncated or raw absolute moment.
    ///
    /// Closed forms for the bounded families and the Student t (through the
    /// regularized incomplete beta function); adaptive quadrature for the
    /// centered exponential.
    pub fn moment(&self, q: MomentQuery) -> Result<f64> {
        let MomentQuery {
            order: p,
            cutoff: c,
            side,
        } = q;
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "moment order must be >= 1, got {p}"
            )));
        }
        if c.is_nan() || c < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "cutoff must be >= 0, got {c}"
            )));
        }
        if p >= self.moment_bound() {
            return Err(Error::InfiniteMoment {
                family: self.to_string(),
                order: p,
            });
        }
        let pick = |below: f64, above: f64| match side {
            Side::Below => below,
            Side::Above => above,
        };
        Ok(match *self {
            Self::Rademacher { scale } => {
                let m = scale.powf(p);
                if scale <= c {
                    pick(m, 0.0)
                } else {
                    pick(0.0, m)
                }
            }
            Self::TwoPoint { .. } => {
                let atoms = self.atoms().expect("two_point has atoms");
                let (mut below, mut above) = (0.0, 0.0);
                for (v, w) in atoms {
                    let m = w * v.abs().powf(p);
                    if v.abs() <= c {
                        below += m;
                    } else {
                        above += m;
                    }
                }
                pick(below, above)
            }
            Self::Uniform { half_width: h } => {
                let t = c.min(h);
                let below = t.powf(p + 1.0) / ((p + 1.0) * h);
                let above = (h.powf(p + 1.0) - t.powf(p + 1.0)) / ((p + 1.0) * h);
                pick(below, above)
            }
            Self::CenteredExponential { rate } => {
                // X = Z / rate with Z = E - 1, E ~ Exp(1)
                rate.powf(-p) * centered_exp_unit_moment(p, c * rate, side)?
            }
            Self::StudentT { nu } => {
                let full = student_t_abs_moment(nu, p);
                if c.is_infinite() {
                    return Ok(pick(full, 0.0));
                }
                let a = 0.5 * (p + 1.0);
                let b = 0.5 * (nu - p);
                let c2 = c * c;
                match side {
                    Side::Below => full * beta_reg(a, b, c2 / (nu + c2)),
                    Side::Above => full * beta_reg(b, a, nu / (nu + c2)),
                }
            }
        })
    }

    /// `P(|X| >= t)`.
    pub fn abs_tail_prob(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match *self {
            Self::Rademacher { scale } => {
                if scale >= t {
                    1.0
                } else {
                    0.0
                }
            }
            Self::TwoPoint { .. } => self
                .atoms()
                .expect("two_point has atoms")
                .into_iter()
                .filter(|(v, _)| v.abs() >= t)
                .map(|(_, w)| w)
                .sum(),
            Self::Uniform { half_width } => (1.0 - t / half_width).max(0.0),
            Self::CenteredExponential { rate } => {
                let s = t * rate;
                let upper = (-s - 1.0).exp();
                let lower = if s < 1.0 { -(-(1.0 - s)).exp_m1() } else { 0.0 };
                upper + lower
            }
            Self::StudentT { nu } => beta_reg(0.5 * nu, 0.5, nu / (nu + t * t)),
        }
    }

    /// Precomputes whatever a hot sampling loop needs.
    pub fn sampler(&self) -> Sampler {
        match *self {
            Self::Rademacher { scale } => Sampler::Rademacher(scale),
            Self::TwoPoint { a, b } => Sampler::TwoPoint {
                a,
                b,
                p_a: b / (a + b),
            },
            Self::Uniform { half_width } => Sampler::Uniform(half_width),
            Self::CenteredExponential { rate } => Sampler::CenteredExponential(rate),
            Self::StudentT { nu } => {
                Sampler::StudentT(rand_distr::StudentT::new(nu).expect("validated nu"))
            }
        }
    }

    /// One draw; advances `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sampler().sample(rng)
    }

    /// `log E exp(theta X)` for bounded families.
    pub fn log_mgf(&self, theta: f64) -> Result<f64> {
        Ok(match *self {
            Self::Rademacher { scale } => log_cosh(scale * theta),
            Self::TwoPoint { a, b } => {
                let (pa, pb) = (b / (a + b), a / (a + b));
                let (u, v) = (theta * a, -theta * b);
                let m = u.max(v);
                m + (pa * (u - m).exp() + pb * (v - m).exp()).ln()
            }
            Self::Uniform { half_width } => log_sinhc(theta * half_width),
            _ => return Err(Error::TiltUnsupported(self.to_string())),
        })
    }

    /// Mean of the tilted law `dP_theta ∝ e^{theta x} dP`, i.e. the
    /// derivative of [`Self::log_mgf`].
    pub fn tilted_mean(&self, theta: f64) -> Result<f64> {
        Ok(match *self {
            Self::Rademacher { scale } => scale * (scale * theta).tanh(),
            Self::TwoPoint { a, b } => {
                let q = tilted_two_point_prob(a, b, theta);
                a * q - b * (1.0 - q)
            }
            Self::Uniform { half_width } => half_width * langevin(theta * half_width),
            _ => return Err(Error::TiltUnsupported(self.to_string())),
        })
    }

    /// Exponentially tilted law and its log-normalizer.
    pub fn tilt(&self, theta: f64) -> Result<(TiltedLaw, f64)> {
        if !theta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tilt parameter must be finite, got {theta}"
            )));
        }
        let law = match *self {
            Self::Rademacher { scale } => TiltedLaw::TwoAtoms {
                up: scale,
                down: -scale,
                p_up: tilted_two_point_prob(scale, scale, theta),
            },
            Self::TwoPoint { a, b } => TiltedLaw::TwoAtoms {
                up: a,
                down: -b,
                p_up: tilted_two_point_prob(a, b, theta),
            },
            Self::Uniform { half_width } => TiltedLaw::ExponentialOnInterval { half_width, theta },
            _ => return Err(Error::TiltUnsupported(self.to_string())),
        };
        Ok((law, self.log_mgf(theta)?))
    }
}

/// `P_theta(+a)` for atoms `+a`, `-b` with zero mean.
fn tilted_two_point_prob(a: f64, b: f64, theta: f64) -> f64 {
    // odds = (b e^{theta a}) / (a e^{-theta b})
    let log_odds = (b / a).ln() + theta * (a + b);
    1.0 / (1.0 + (-log_odds).exp())
}

fn log_cosh(y: f64) -> f64 {
    let y = y.abs();
    y + (-2.0 * y).exp().ln_1p() - std::f64::consts::LN_2
}

/// `log(sinh(y) / y)`.
fn log_sinhc(y: f64) -> f64 {
    let y = y.abs();
    if y < 1e-3 {
        let y2 = y * y;
        y2 / 6.0 - y2 * y2 / 180.0 + y2 * y2 * y2 / 2835.0
    } else {
        y + (-(-2.0 * y).exp()).ln_1p() - std::f64::consts::LN_2 - y.ln()
    }
}

/// Langevin function `coth(y) - 1/y`.
fn langevin(y: f64) -> f64 {
    if y.abs() < 1e-3 {
        let y2 = y * y;
        y / 3.0 - y * y2 / 45.0 + 2.0 * y * y2 * y2 / 945.0
    } else {
        1.0 / y.tanh() - 1.0 / y
    }
}

/// `E|T|^p` for a standard t with `nu > p`.
fn student_t_abs_moment(nu: f64, p: f64) -> f64 {
    let log_m = 0.5 * p * nu.ln() + ln_gamma(0.5 * (p + 1.0)) + ln_gamma(0.5 * (nu - p))
        - 0.5 * std::f64::consts::PI.ln()
        - ln_gamma(0.5 * nu);
    log_m.exp()
}

/// Truncated `E|Z|^p` for `Z = E - 1`, density `e^{-z-1}` on `[-1, ∞)`.
fn centered_exp_unit_moment(p: f64, c: f64, side: Side) -> Result<f64> {
    let f = |z: f64| z.abs().powf(p) * (-z - 1.0).exp();
    match side {
        Side::Below => {
            let neg = quad::integrate(f, -c.min(1.0), 0.0)?;
            let pos = if c.is_infinite() {
                quad::integrate_to_infinity(f, 0.0)?
            } else {
                quad::integrate(f, 0.0, c)?
            };
            Ok(neg + pos)
        }
        Side::Above => {
            if c.is_infinite() {
                return Ok(0.0);
            }
            let pos = quad::integrate_to_infinity(f, c)?;
            let neg = if c < 1.0 {
                quad::integrate(f, -1.0, -c)?
            } else {
                0.0
            };
            Ok(pos + neg)
        }
    }
}

/// A sampling-ready form of a [`DistributionSpec`].
#[derive(Debug, Clone)]
pub enum Sampler {
    Rademacher(f64),
    TwoPoint { a: f64, b: f64, p_a: f64 },
    Uniform(f64),
    CenteredExponential(f64),
    StudentT(rand_distr::StudentT<f64>),
}

impl Sampler {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Rademacher(s) => {
                if rng.random::<bool>() {
                    *s
                } else {
                    -*s
                }
            }
            Self::TwoPoint { a, b, p_a } => {
                if rng.random::<f64>() < *p_a {
                    *a
                } else {
                    -*b
                }
            }
            Self::Uniform(h) => h * (2.0 * rng.random::<f64>() - 1.0),
            Self::CenteredExponential(rate) => (-(-rng.random::<f64>()).ln_1p() - 1.0) / rate,
            Self::StudentT(t) => t.sample(rng),
        }
    }
}

/// An exponentially tilted bounded law (no longer centered).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TiltedLaw {
    TwoAtoms {
        up: f64,
        down: f64,
        p_up: f64,
    },
    /// Density proportional to `e^{theta x}` on `[-half_width, half_width]`.
    ExponentialOnInterval {
        half_width: f64,
        theta: f64,
    },
}

impl TiltedLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            Self::TwoAtoms { up, down, p_up } => up * p_up + down * (1.0 - p_up),
            Self::ExponentialOnInterval { half_width, theta } => {
                half_width * langevin(theta * half_width)
            }
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::TwoAtoms { up, down, p_up } => {
                if rng.random::<f64>() < p_up {
                    up
                } else {
                    down
                }
            }
            Self::ExponentialOnInterval {
                half_width: h,
                theta,
            } => {
                let u: f64 = rng.random();
                if (theta * h).abs() < 1e-12 {
                    return h * (2.0 * u - 1.0);
                }
                // inverse CDF written so the exponential never overflows
                let x = if theta > 0.0 {
                    h + (u + (1.0 - u) * (-2.0 * theta * h).exp()).ln() / theta
                } else {
                    -h + (u + (1.0 - u) * (2.0 * theta * h).exp()).ln() / theta
                };
                x.clamp(-h, h)
            }
        }
    }
}
