//! Forecast aggregation by gradient shift.
//!
//! Three next-token forecasts are combined into one: a strong but distorted
//! *target*, a weak but calibrated *helper*, and a *predictor* that estimates
//! what the target says given the helper. The shift observed between helper
//! and predictor is applied to the target in the dual (gradient) space of a
//! proper loss and the result is projected back onto the simplex.
//!
//! Modules:
//!
//! - [`geometry`]: generators of proper losses, dual maps, Bregman divergences.
//! - [`projection`]: Bregman projections onto the probability simplex.
//! - [`aggregate`]: the gradient-shift rule and its additive, multiplicative,
//!   power, hybrid and weak-to-strong specialisations.
//! - [`decode`]: autoregressive sampling driven by three forecaster streams.
//! - [`theoremlab`]: closed-form and Monte Carlo checks of the improvement bound.
//! - [`evalkit`]: jailbreak tax and batch improvement summaries.
//! - [`cli`]: the command implementations behind the `gradshift` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod cli;
pub mod decode;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod projection;
pub mod theoremlab;

pub use aggregate::{Rule, Triple};
pub use error::{Error, Result, SimplexViolation};
pub use geometry::{Distribution, DualPoint, ExtendedPoint, Generator, Outcome};
pub use projection::ProjectionResult;

/// Numerical tolerances shared by every module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Allowed deviation of a distribution's total mass from 1.
    pub simplex_sum: f64,
    /// Round-trip accuracy of `inverse_gradient(gradient(p))`.
    pub round_trip: f64,
    /// Probability floor used by the aggregation rules.
    pub probability_floor: f64,
    /// Target accuracy of the power-family threshold search.
    pub bisection_sum: f64,
    pub bisection_max_iter: usize,
}

pub const TOLERANCES: Tolerances = Tolerances {
    simplex_sum: 1e-9,
    round_trip: 1e-12,
    probability_floor: 1e-12,
    bisection_sum: 1e-12,
    bisection_max_iter: 200,
};
