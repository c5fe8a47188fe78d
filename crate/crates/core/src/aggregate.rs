//! Aggregation rules combining a target, a helper and a predictor forecast.
//!
//! The general rule shifts the target by the helper-minus-predictor gap in
//! the dual space of a generator and projects back onto the simplex:
//!
//! ```text
//! p_new = project( (grad G)^-1( grad G(p_t) + grad G(p_h) - grad G(p_t|h) ) )
//! ```
//!
//! Quadratic loss makes it additive, negative entropy multiplicative and the
//! power family interpolates between the two. The hybrid rule and the
//! weak-to-strong baseline are provided alongside.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{Distribution, Generator};
use crate::projection::{project_bregman, project_euclidean, project_power_dual, ProjectionResult};
use crate::TOLERANCES;

/// Target, helper and predictor forecasts over a shared outcome space.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    target: Distribution,
    helper: Distribution,
    predictor: Distribution,
}

impl Triple {
    pub fn new(target: Distribution, helper: Distribution, predictor: Distribution) -> Result<Self> {
        let d = target.dim();
        for other in [&helper, &predictor] {
            if other.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: other.dim(),
                });
            }
        }
        Ok(Self {
            target,
            helper,
            predictor,
        })
    }

    /// Convenience constructor from raw probability vectors.
    pub fn from_vecs(target: Vec<f64>, helper: Vec<f64>, predictor: Vec<f64>) -> Result<Self> {
        Self::new(
            Distribution::new(target)?,
            Distribution::new(helper)?,
            Distribution::new(predictor)?,
        )
    }

    pub fn target(&self) -> &Distribution {
        &self.target
    }

    pub fn helper(&self) -> &Distribution {
        &self.helper
    }

    pub fn predictor(&self) -> &Distribution {
        &self.predictor
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    fn floored(&self, floor: Option<f64>) -> Triple {
        match floor {
            Some(eps) => Triple {
                target: self.target.floored(eps),
                helper: self.helper.floored(eps),
                predictor: self.predictor.floored(eps),
            },
            None => self.clone(),
        }
    }
}

/// Probability floor applied by the rules that take logs or ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateOptions {
    pub floor: Option<f64>,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            floor: Some(TOLERANCES.probability_floor),
        }
    }
}

/// An aggregation rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    Generic(Generator),
    Additive,
    Multiplicative,
    Power(f64),
    Hybrid,
    /// `p_t (p_h / p_t|h)^alpha`, applied to the first `k` tokens when decoding.
    WeakToStrong { alpha: f64, k: Option<usize> },
}

impl Rule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Rule::Generic(g) => g.validate(),
            Rule::Power(beta) => Generator::Power(beta).validate(),
            Rule::WeakToStrong { alpha, .. } if !(alpha >= 1.0) || !alpha.is_finite() => {
                Err(Error::InvalidAlpha(alpha))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, t: &Triple) -> Result<Distribution> {
        self.apply_with(t, AggregateOptions::default())
    }

    /// Applies the rule. A zero shift (helper equal to predictor) returns
    /// the target, floored for the rules that floor their inputs.
    pub fn apply_with(&self, t: &Triple, opts: AggregateOptions) -> Result<Distribution> {
        self.validate()?;
        if t.helper() == t.predictor() {
            return Ok(if self.floors_inputs() {
                t.floored(opts.floor).target
            } else {
                t.target().clone()
            });
        }
        match *self {
            Rule::Generic(g) => gradient_shift_with(g, t, opts),
            Rule::Additive => additive_shift(t),
            Rule::Multiplicative => Ok(ratio_tilt(t, 1.0, opts)?.0),
            Rule::Power(beta) => power_shift(beta, t),
            Rule::Hybrid => hybrid_shift(t),
            Rule::WeakToStrong { alpha, .. } => Ok(ratio_tilt(t, alpha, opts)?.0),
        }
    }

    fn floors_inputs(&self) -> bool {
        matches!(
            self,
            Rule::Multiplicative | Rule::WeakToStrong { .. } | Rule::Generic(Generator::NegEntropy)
        )
    }

    /// The generator whose loss this rule is optimal for, if any.
    pub fn matched_generator(&self) -> Option<Generator> {
        match *self {
            Rule::Generic(g) => Some(g),
            Rule::Additive => Some(Generator::Quadratic),
            Rule::Multiplicative => Some(Generator::NegEntropy),
            Rule::Power(beta) => Some(Generator::Power(beta)),
            Rule::WeakToStrong { alpha: 1.0, .. } => Some(Generator::NegEntropy),
            Rule::Hybrid | Rule::WeakToStrong { .. } => None,
        }
    }

    /// Step cutoff carried by the rule (weak-to-strong only).
    pub fn token_cutoff(&self) -> Option<usize> {
        match *self {
            Rule::WeakToStrong { k, .. } => k,
            _ => None,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Rule::Additive => f.write_str("add"),
            Rule::Multiplicative => f.write_str("mult"),
            Rule::Hybrid => f.write_str("hybrid"),
            Rule::Power(beta) => write!(f, "power:beta={beta}"),
            Rule::Generic(Generator::Power(beta)) => write!(f, "generic:g=power,beta={beta}"),
            Rule::Generic(g) => write!(f, "generic:g={}", g.name()),
            Rule::WeakToStrong { alpha, k } => match k {
                Some(k) => write!(f, "w2s:alpha={alpha},k={k}"),
                None => write!(f, "w2s:alpha={alpha},k=inf"),
            },
        }
    }
}

/// Parses the rule mini-grammar:
///
/// ```text
/// add | mult | hybrid | power:beta=<x>
/// generic:g=<negentropy|quadratic|power>[,beta=<x>]
/// w2s[:alpha=<x>][,k=<n|inf>]
/// ```
impl FromStr for Rule {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let fail = |reason: &str| Error::RuleSpec {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        let (head, params) = match spec.trim().split_once(':') {
            Some((h, p)) => (h, p),
            None => (spec.trim(), ""),
        };
        let mut kv = Vec::new();
        for part in params.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| fail("parameters must be key=value"))?;
            kv.push((k.trim(), v.trim()));
        }
        let get = |key: &str| kv.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let allow = |keys: &[&str]| -> Result<()> {
            match kv.iter().find(|(k, _)| !keys.contains(k)) {
                Some((k, _)) => Err(fail(&format!("unknown parameter {k:?}"))),
                None => Ok(()),
            }
        };
        let number = |key: &str| -> Result<Option<f64>> {
            get(key)
                .map(|v| v.parse::<f64>().map_err(|_| fail(&format!("{key} is not a number"))))
                .transpose()
        };

        let rule = match head {
            "add" | "additive" => {
                allow(&[])?;
                Rule::Additive
            }
            "mult" | "multiplicative" => {
                allow(&[])?;
                Rule::Multiplicative
            }
            "hybrid" => {
                allow(&[])?;
                Rule::Hybrid
            }
            "power" => {
                allow(&["beta"])?;
                Rule::Power(number("beta")?.ok_or_else(|| fail("power needs beta"))?)
            }
            "generic" => {
                allow(&["g", "beta"])?;
                let g = match get("g").ok_or_else(|| fail("generic needs g"))? {
                    "negentropy" => Generator::NegEntropy,
                    "quadratic" => Generator::Quadratic,
                    "power" => Generator::Power(
                        number("beta")?.ok_or_else(|| fail("generic power needs beta"))?,
                    ),
                    other => return Err(fail(&format!("unknown generator {other:?}"))),
                };
                Rule::Generic(g)
            }
            "w2s" => {
                allow(&["alpha", "k"])?;
                let alpha = number("alpha")?.unwrap_or(1.0);
                let k = match get("k") {
                    None | Some("inf") => None,
                    Some(v) => Some(v.parse().map_err(|_| fail("k must be an integer or inf"))?),
                };
                Rule::WeakToStrong { alpha, k }
            }
            other => return Err(fail(&format!("unknown rule {other:?}"))),
        };
        rule.validate().map_err(|e| fail(&e.to_string()))?;
        Ok(rule)
    }
}

/// The general dual-space shift for generator `g`, with the default floor.
pub fn gradient_shift(g: Generator, t: &Triple) -> Result<Distribution> {
    gradient_shift_with(g, t, AggregateOptions::default())
}

pub fn gradient_shift_with(g: Generator, t: &Triple, opts: AggregateOptions) -> Result<Distribution> {
    g.validate()?;
    let t = match g {
        Generator::NegEntropy => t.floored(opts.floor),
        _ => t.clone(),
    };
    let shifted = g
        .gradient(t.target())?
        .shifted(&g.gradient(t.helper())?, &g.gradient(t.predictor())?)?;
    let projected = match g {
        // Projecting from the raw dual keeps coordinates that the
        // inverse-gradient clamp would flatten to zero.
        Generator::Power(beta) => project_power_dual(beta, &shifted)?,
        _ => project_bregman(g, &g.inverse_gradient(&shifted)?)?,
    };
    Ok(projected.point)
}

/// `(p_t + p_h - p_t|h - tau)_+`.
pub fn additive_shift(t: &Triple) -> Result<Distribution> {
    Ok(additive_shift_detailed(t)?.point)
}

/// Additive shift with its projection threshold.
pub fn additive_shift_detailed(t: &Triple) -> Result<ProjectionResult> {
    let residual: Vec<f64> = t
        .target()
        .iter()
        .zip(t.helper().iter())
        .zip(t.predictor().iter())
        .map(|((a, b), c)| a + b - c)
        .collect();
    project_euclidean(&residual)
}

/// `p_t p_h / p_t|h`, renormalised.
pub fn multiplicative_shift(t: &Triple) -> Result<Distribution> {
    Ok(ratio_tilt(t, 1.0, AggregateOptions::default())?.0)
}

/// Multiplicative shift and its normaliser `Z`.
pub fn multiplicative_shift_detailed(t: &Triple, opts: AggregateOptions) -> Result<(Distribution, f64)> {
    ratio_tilt(t, 1.0, opts)
}

/// `p_t (p_h / p_t|h)^alpha`, renormalised.
pub fn weak_to_strong(alpha: f64, t: &Triple) -> Result<Distribution> {
    weak_to_strong_with(alpha, t, AggregateOptions::default())
}

pub fn weak_to_strong_with(alpha: f64, t: &Triple, opts: AggregateOptions) -> Result<Distribution> {
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(Error::InvalidAlpha(alpha));
    }
    Ok(ratio_tilt(t, alpha, opts)?.0)
}

fn ratio_tilt(t: &Triple, alpha: f64, opts: AggregateOptions) -> Result<(Distribution, f64)> {
    let t = t.floored(opts.floor);
    let mut weights = Vec::with_capacity(t.dim());
    for ((&pt, &ph), &pth) in t.target().iter().zip(t.helper().iter()).zip(t.predictor().iter()) {
        let w = if pth > 0.0 {
            let ratio = ph / pth;
            // Exactly the multiplicative rule at alpha = 1.
            if alpha == 1.0 {
                pt * ratio
            } else {
                pt * ratio.powf(alpha)
            }
        } else if ph == 0.0 {
            // 0/0 with the floor disabled: no evidence either way.
            pt
        } else {
            return Err(Error::Domain {
                generator: "multiplicative",
                index: weights.len(),
                value: pth,
            });
        };
        weights.push(w);
    }
    let z: f64 = weights.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Degenerate("multiplicative rule has no positive mass"));
    }
    let probs = weights.into_iter().map(|w| w / z).collect();
    Ok((Distribution::new(probs)?, z))
}

/// Power-space shift `(p_t^k + p_h^k - p_t|h^k - tau)_+^(1/k)`, `k = beta - 1`.
pub fn power_shift(beta: f64, t: &Triple) -> Result<Distribution> {
    Ok(power_shift_detailed(beta, t)?.point)
}

pub fn power_shift_detailed(beta: f64, t: &Triple) -> Result<ProjectionResult> {
    let g = Generator::power(beta)?;
    let shifted = g
        .gradient(t.target())?
        .shifted(&g.gradient(t.helper())?, &g.gradient(t.predictor())?)?;
    project_power_dual(beta, &shifted)
}

/// Hybrid rule output with its additive-branch scale.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutput {
    pub dist: Distribution,
    pub epsilon: f64,
    /// `1 - sum_S p_t p_h / p_t|h - sum_A p_t`.
    pub mass_deficit: f64,
}

/// Geometric scaling where the helper is below the predictor, an
/// `epsilon`-scaled additive residual elsewhere.
pub fn hybrid_shift(t: &Triple) -> Result<Distribution> {
    Ok(hybrid_shift_detailed(t)?.dist)
}

pub fn hybrid_shift_detailed(t: &Triple) -> Result<HybridOutput> {
    let (pt, ph, pth) = (t.target(), t.helper(), t.predictor());
    let d = t.dim();
    let mut out = vec![0.0; d];
    let mut suppressed_mass = 0.0;
    let mut passthrough_mass = 0.0;
    let mut positive_gap = 0.0;
    for y in 0..d {
        if ph[y] < pth[y] {
            // pth > ph >= 0, so the ratio is always defined.
            out[y] = pt[y] * ph[y] / pth[y];
            suppressed_mass += out[y];
        } else {
            passthrough_mass += pt[y];
            positive_gap += ph[y] - pth[y];
        }
    }
    let mass_deficit = 1.0 - suppressed_mass - passthrough_mass;
    let epsilon = if positive_gap > 0.0 {
        (mass_deficit / positive_gap).max(0.0)
    } else {
        0.0
    };
    for y in 0..d {
        if ph[y] >= pth[y] {
            out[y] = pt[y] + epsilon * (ph[y] - pth[y]);
        }
    }
    Ok(HybridOutput {
        dist: Distribution::new(out)?,
        epsilon,
        mass_deficit,
    })
}
