//! Bregman projections onto the probability simplex.
//!
//! `project(x) = argmin_{q in simplex} D_G(q, x)`. The KKT conditions give
//! `grad G(q_i) = grad G(x_i) - tau` on the support and `q_i = 0` where the
//! shifted dual coordinate falls below the generator's boundary value:
//!
//! - quadratic: `q_i = (x_i - tau)_+`, tau found by sorting;
//! - negative entropy: `q = x / sum(x)` (the boundary is never active);
//! - power: `q_i = ((beta - 1) (d_i - tau)_+)^(1/(beta-1))` with `d = grad G(x)`,
//!   tau found by bisection.

use crate::error::{Error, Result};
use crate::geometry::{max_abs_diff, Distribution, DualPoint, ExtendedPoint, Generator};
use crate::TOLERANCES;

/// Outcome of a projection: the point, its KKT multiplier and support size.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub point: Distribution,
    /// Threshold subtracted in the dual (for negative entropy, `ln sum(x)`).
    pub threshold: f64,
    pub support_size: usize,
}

fn support(p: &[f64]) -> usize {
    p.iter().filter(|&&x| x > 0.0).count()
}

/// Euclidean projection by the sort-and-threshold rule.
pub fn project_euclidean(v: &[f64]) -> Result<ProjectionResult> {
    if v.len() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            actual: v.len(),
        });
    }
    let v = ExtendedPoint::new(v.to_vec())?;
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            threshold = candidate;
        } else {
            break;
        }
    }
    let point: Vec<f64> = v.iter().map(|x| (x - threshold).max(0.0)).collect();
    let support_size = support(&point);
    Ok(ProjectionResult {
        point: Distribution::new(point)?,
        threshold,
        support_size,
    })
}

/// Bregman projection for any supported generator.
pub fn project_bregman(g: Generator, x: &[f64]) -> Result<ProjectionResult> {
    g.validate()?;
    match g {
        Generator::Quadratic => project_euclidean(x),
        Generator::NegEntropy => {
            for (index, &value) in x.iter().enumerate() {
                if !value.is_finite() || value < 0.0 {
                    return Err(Error::Domain {
                        generator: g.name(),
                        index,
                        value,
                    });
                }
            }
            let total: f64 = x.iter().sum();
            if !(total > 0.0) {
                return Err(Error::Degenerate("negative-entropy projection of a zero vector"));
            }
            let point: Vec<f64> = x.iter().map(|v| v / total).collect();
            let support_size = support(&point);
            Ok(ProjectionResult {
                point: Distribution::new(point)?,
                threshold: total.ln(),
                support_size,
            })
        }
        Generator::Power(beta) => {
            let dual = g.gradient(x)?;
            project_power_dual(beta, &dual)
        }
    }
}

/// Projects straight from power-family dual coordinates.
///
/// Unlike going through [`Generator::inverse_gradient`], negative dual
/// coordinates keep their value here, so `(d_i - tau)_+` sees them.
pub fn project_power_dual(beta: f64, dual: &DualPoint) -> Result<ProjectionResult> {
    Generator::power(beta)?;
    let k = beta - 1.0;
    let mass_at = |tau: f64| -> f64 {
        dual.iter()
            .map(|d| (k * (d - tau).max(0.0)).powf(1.0 / k))
            .sum()
    };

    let top = dual.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bottom = dual.iter().copied().fold(f64::INFINITY, f64::min);
    // At tau = top - 1/k the largest coordinate alone carries unit mass.
    let mut lo = bottom.min(top - 1.0 / k) - 1.0;
    let mut hi = top;
    if !(mass_at(lo) > 1.0) || mass_at(hi) > 1.0 {
        return Err(Error::Internal(format!(
            "power threshold not bracketed on [{lo}, {hi}]"
        )));
    }

    let mut tau = 0.5 * (lo + hi);
    let mut converged = false;
    for _ in 0..TOLERANCES.bisection_max_iter {
        tau = 0.5 * (lo + hi);
        let mass = mass_at(tau);
        if (mass - 1.0).abs() <= TOLERANCES.bisection_sum {
            converged = true;
            break;
        }
        if tau <= lo || tau >= hi {
            // Bracket collapsed to adjacent floats.
            converged = (mass - 1.0).abs() <= TOLERANCES.simplex_sum;
            break;
        }
        if mass > 1.0 {
            lo = tau;
        } else {
            hi = tau;
        }
    }
    if !converged {
        return Err(Error::Internal(format!(
            "power threshold search did not converge (beta = {beta}, tau = {tau})"
        )));
    }

    let raw: Vec<f64> = dual
        .iter()
        .map(|d| (k * (d - tau).max(0.0)).powf(1.0 / k))
        .collect();
    let total: f64 = raw.iter().sum();
    let point: Vec<f64> = raw.into_iter().map(|p| p / total).collect();
    let support_size = support(&point);
    Ok(ProjectionResult {
        point: Distribution::new(point)?,
        threshold: tau,
        support_size,
    })
}

/// Exhaustive minimisation of `D_G(q, x)` over a simplex grid.
///
/// Test oracle; refuses `d > 4` and steps outside `(0, 0.1]`.
pub fn brute_force_projection(g: Generator, x: &[f64], grid_step: f64) -> Result<Distribution> {
    let d = x.len();
    if !(2..=4).contains(&d) {
        return Err(Error::InvalidArgument(format!(
            "brute-force projection supports 2 <= d <= 4, got {d}"
        )));
    }
    if !(grid_step > 0.0 && grid_step <= 0.1) {
        return Err(Error::InvalidArgument(format!(
            "grid step must lie in (0, 0.1], got {grid_step}"
        )));
    }
    let n = (1.0 / grid_step).round() as usize;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut counts = vec![0usize; d];
    enumerate_compositions(n, 0, &mut counts, &mut |c| {
        let q: Vec<f64> = c.iter().map(|&k| k as f64 / n as f64).collect();
        if let Ok(div) = g.divergence(&q, x) {
            if best.as_ref().is_none_or(|(b, _)| div < *b) {
                best = Some((div, q));
            }
        }
    });
    let (_, q) = best.ok_or(Error::Degenerate("no finite grid point"))?;
    Distribution::new(q)
}

fn enumerate_compositions(
    remaining: usize,
    pos: usize,
    counts: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if pos + 1 == counts.len() {
        counts[pos] = remaining;
        visit(counts);
        return;
    }
    for k in 0..=remaining {
        counts[pos] = k;
        enumerate_compositions(remaining - k, pos + 1, counts, visit);
    }
}

/// L-infinity distance between a projection and an oracle answer.
pub fn projection_gap(a: &ProjectionResult, oracle: &Distribution) -> f64 {
    max_abs_diff(&a.point, oracle)
}
