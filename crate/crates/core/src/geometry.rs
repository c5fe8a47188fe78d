//! Proper-loss generators and the geometry they induce.
//!
//! Every strictly proper loss comes from a strictly convex generator `G`
//! through the Savage representation
//!
//! ```text
//! S(q, y) = -G(q) + <grad G(q), q - e_y>
//! ```
//!
//! and the excess risk of forecasting `q` under truth `p` is the Bregman
//! divergence `D_G(p, q) = G(p) - G(q) - <grad G(q), p - q>`.
//!
//! Three separable generators are supported:
//!
//! | generator     | `G(p)`                         | `grad G(p)_i`              |
//! |---------------|--------------------------------|----------------------------|
//! | NegEntropy    | `sum p ln p`                   | `1 + ln p_i`               |
//! | Quadratic     | `sum p^2`                      | `2 p_i`                    |
//! | Power(beta)   | `sum p^beta / (beta (beta-1))` | `p_i^(beta-1) / (beta-1)`  |
//!
//! Geometry operations are strict: a zero probability handed to the
//! negative-entropy gradient is a domain error. Callers that want a floor
//! apply [`Distribution::floored`] first.

use std::fmt;
use std::ops::Deref;

use crate::error::{Error, Result, SimplexViolation};
use crate::TOLERANCES;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Validates `probs` against the simplex invariants.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_simplex(&probs, None)?;
        Ok(Self(probs))
    }

    /// Like [`Distribution::new`] but also pins the dimension.
    pub fn with_dim(probs: Vec<f64>, dim: usize) -> Result<Self> {
        check_simplex(&probs, Some(dim))?;
        Ok(Self(probs))
    }

    /// Divides non-negative weights by their total.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(if value.is_finite() {
                SimplexViolation::Negative { index, value }.into()
            } else {
                SimplexViolation::NonFinite { index, value }.into()
            });
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate("weights have no positive mass"));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(dim: usize) -> Result<Self> {
        Self::new(vec![1.0 / dim as f64; dim])
    }

    pub fn point_mass(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::OutcomeOutOfRange { index, dim });
        }
        let mut probs = vec![0.0; dim];
        probs[index] = 1.0;
        Self::new(probs)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Clamps entries below `floor` up to `floor` and renormalises.
    ///
    /// Returns an unchanged copy when no entry is below the floor.
    pub fn floored(&self, floor: f64) -> Distribution {
        if self.0.iter().all(|&p| p >= floor) {
            return self.clone();
        }
        let clamped: Vec<f64> = self.0.iter().map(|&p| p.max(floor)).collect();
        let total: f64 = clamped.iter().sum();
        Distribution(clamped.into_iter().map(|p| p / total).collect())
    }

    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }
}

impl Deref for Distribution {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p:.6}")?;
        }
        write!(f, ")")
    }
}

fn check_simplex(probs: &[f64], dim: Option<usize>) -> Result<(), SimplexViolation> {
    if let Some(expected) = dim {
        if probs.len() != expected {
            return Err(SimplexViolation::WrongLength {
                expected,
                actual: probs.len(),
            });
        }
    }
    if probs.len() < 2 {
        return Err(SimplexViolation::TooFewOutcomes(probs.len()));
    }
    for (index, &value) in probs.iter().enumerate() {
        if !value.is_finite() {
            return Err(SimplexViolation::NonFinite { index, value });
        }
        if value < 0.0 {
            return Err(SimplexViolation::Negative { index, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > TOLERANCES.simplex_sum {
        return Err(SimplexViolation::SumNotOne { sum });
    }
    Ok(())
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Coordinates in the gradient (dual) space. Unbounded but finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint(Vec<f64>);

impl DualPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = coords.iter().enumerate().find(|(_, z)| !z.is_finite()) {
            return Err(Error::NonFiniteDual { index, value });
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `self + plus - minus`, the shift applied by the aggregation rule.
    pub fn shifted(&self, plus: &DualPoint, minus: &DualPoint) -> Result<DualPoint> {
        if plus.dim() != self.dim() || minus.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: if plus.dim() != self.dim() {
                    plus.dim()
                } else {
                    minus.dim()
                },
            });
        }
        DualPoint::new(
            self.0
                .iter()
                .zip(&plus.0)
                .zip(&minus.0)
                .map(|((a, b), c)| a + b - c)
                .collect(),
        )
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for DualPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A primal point that may lie off the simplex (before projection).
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPoint(Vec<f64>);

impl ExtendedPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = coords.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(Error::Domain {
                generator: "extended point",
                index,
                value,
            });
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ExtendedPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Distribution> for ExtendedPoint {
    fn from(d: Distribution) -> Self {
        ExtendedPoint(d.0)
    }
}

/// Index of a realised outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Outcome(pub usize);

/// A generator of a strictly proper loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    NegEntropy,
    Quadratic,
    /// Exponent `beta` in `(1, 2]`.
    Power(f64),
}

impl Generator {
    /// Power generator with a validated exponent.
    pub fn power(beta: f64) -> Result<Self> {
        let g = Generator::Power(beta);
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Generator::Power(beta) if !(beta > 1.0 && beta <= 2.0) => Err(Error::InvalidBeta(beta)),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Generator::NegEntropy => "negentropy",
            Generator::Quadratic => "quadratic",
            Generator::Power(_) => "power",
        }
    }

    fn check_primal(&self, p: &[f64], strict: bool) -> Result<()> {
        if matches!(self, Generator::Quadratic) {
            if let Some((index, &value)) = p.iter().enumerate().find(|(_, x)| !x.is_finite()) {
                return Err(Error::Domain {
                    generator: self.name(),
                    index,
                    value,
                });
            }
            return Ok(());
        }
        for (index, &value) in p.iter().enumerate() {
            let bad = !value.is_finite() || value < 0.0 || (strict && value == 0.0);
            if bad {
                return Err(Error::Domain {
                    generator: self.name(),
                    index,
                    value,
                });
            }
        }
        Ok(())
    }

    /// `G(p)`, with `0 ln 0 = 0`.
    pub fn value(&self, p: &[f64]) -> Result<f64> {
        self.validate()?;
        self.check_primal(p, false)?;
        Ok(match *self {
            Generator::NegEntropy => p
                .iter()
                .map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 })
                .sum(),
            Generator::Quadratic => p.iter().map(|x| x * x).sum(),
            Generator::Power(beta) => {
                p.iter().map(|x| x.powf(beta)).sum::<f64>() / (beta * (beta - 1.0))
            }
        })
    }

    /// Componentwise `grad G(p)`.
    ///
    /// Negative entropy needs strictly positive entries; the power family
    /// accepts zeros (its gradient vanishes there).
    pub fn gradient(&self, p: &[f64]) -> Result<DualPoint> {
        self.validate()?;
        self.check_primal(p, matches!(self, Generator::NegEntropy))?;
        let coords = match *self {
            Generator::NegEntropy => p.iter().map(|x| 1.0 + x.ln()).collect(),
            Generator::Quadratic => p.iter().map(|x| 2.0 * x).collect(),
            Generator::Power(beta) => p
                .iter()
                .map(|x| x.powf(beta - 1.0) / (beta - 1.0))
                .collect(),
        };
        DualPoint::new(coords)
    }

    /// Pulls a dual point back to the primal side.
    ///
    /// For the power family negative dual coordinates map to zero; the
    /// gradient's range over the non-negative orthant stops at zero.
    pub fn inverse_gradient(&self, z: &DualPoint) -> Result<ExtendedPoint> {
        self.validate()?;
        let coords = match *self {
            Generator::NegEntropy => z.iter().map(|v| (v - 1.0).exp()).collect(),
            Generator::Quadratic => z.iter().map(|v| v / 2.0).collect(),
            Generator::Power(beta) => z
                .iter()
                .map(|v| ((beta - 1.0) * v.max(0.0)).powf(1.0 / (beta - 1.0)))
                .collect(),
        };
        ExtendedPoint::new(coords)
    }

    /// `D_G(p, q)`; `q` must lie where the gradient is defined.
    pub fn divergence(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        if p.len() != q.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                actual: q.len(),
            });
        }
        self.validate()?;
        self.check_primal(p, false)?;
        self.check_primal(q, matches!(self, Generator::NegEntropy))?;
        // Per-coordinate forms avoid cancellation between G(p) and G(q).
        let d = match *self {
            Generator::NegEntropy => p
                .iter()
                .zip(q)
                .map(|(&a, &b)| {
                    let plogp = if a > 0.0 { a * (a / b).ln() } else { 0.0 };
                    plogp - a + b
                })
                .sum(),
            Generator::Quadratic => p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(),
            Generator::Power(beta) => {
                let k = beta - 1.0;
                p.iter()
                    .zip(q)
                    .map(|(&a, &b)| {
                        (a.powf(beta) - b.powf(beta)) / (beta * k) - b.powf(k) * (a - b) / k
                    })
                    .sum()
            }
        };
        Ok(d)
    }

    /// Savage-representation loss of forecast `q` at outcome `y`.
    ///
    /// Accepts off-simplex points in the generator's domain. Under negative
    /// entropy a zero forecast on the realised outcome yields
    /// `f64::INFINITY`, not an error.
    pub fn loss(&self, q: &[f64], y: Outcome) -> Result<f64> {
        if y.0 >= q.len() {
            return Err(Error::OutcomeOutOfRange {
                index: y.0,
                dim: q.len(),
            });
        }
        self.validate()?;
        self.check_primal(q, false)?;
        let qy = q[y.0];
        Ok(match *self {
            Generator::NegEntropy => {
                if qy == 0.0 {
                    f64::INFINITY
                } else {
                    q.iter().sum::<f64>() - 1.0 - qy.ln()
                }
            }
            Generator::Quadratic => q.iter().map(|x| x * x).sum::<f64>() - 2.0 * qy,
            Generator::Power(beta) => {
                let k = beta - 1.0;
                q.iter().map(|x| x.powf(beta)).sum::<f64>() / beta - qy.powf(k) / k
            }
        })
    }

    /// `E_{Y ~ truth}[loss(q, Y)]`, skipping outcomes with zero probability.
    pub fn expected_loss(&self, q: &[f64], truth: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (y, &w) in truth.iter().enumerate() {
            if w > 0.0 {
                total += w * self.loss(q, Outcome(y))?;
            }
        }
        Ok(total)
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Power(beta) => write!(f, "power({beta})"),
            other => f.write_str(other.name()),
        }
    }
}
