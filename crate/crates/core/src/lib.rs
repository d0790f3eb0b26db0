//! Numerical laboratory for Cramér-type moderate deviations of the maximum
//! of self-normalized sums.
//!
//! The crate computes the explicit functionals that control the tail ratio
//! `P(max_{k<=n} S_k >= x V_n) / (1 - Φ(x))`, evaluates that ratio exactly on
//! lattice and small finite-support instances, estimates it by reproducible
//! (optionally exponentially tilted) Monte Carlo, and runs config-driven
//! sweeps that track its convergence to 2.

pub mod cli;
pub mod distributions;
pub mod error;
pub mod exact_sum;
pub mod experiments;
pub mod mc;
pub mod normal;
pub mod oracle;
pub mod quad;
pub mod theory;

pub use distributions::{DistributionSpec, MomentQuery, Side};
pub use error::{Error, Result};
pub use experiments::{RatioRow, SweepConfig};
pub use mc::{Method, TailEstimate};
pub use oracle::ExactResult;
pub use theory::{SequenceSpec, TheoryQuantities};
