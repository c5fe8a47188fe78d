//! Numerical checks of the improvement guarantee.
//!
//! Fix a helper forecast `p_h` and a predictor forecast `p_t|h`. An adversary
//! picks any joint law of the target forecast `P` and the outcome `Y` with
//! `E[P] = p_t|h` and `E[e_Y] = p_h`. For the gradient-shift rule built from
//! generator `G` the expected loss reduction over the target is at least
//! `D_G(p_h, p_t|h)`, and the degenerate adversary (`P = p_t|h` surely)
//! attains it.
//!
//! Adversaries here are finite, so expectations are exact sums over
//! atoms x outcomes. Monte Carlo evaluation exists to exercise the estimator.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use crate::aggregate::{hybrid_shift, AggregateOptions, Rule, Triple};
use crate::error::{Error, Result};
use crate::geometry::{Distribution, ExtendedPoint, Generator, Outcome};

/// Generator used by every randomised routine in the lab.
pub type LabRng = Xoshiro256PlusPlus;

const MOMENT_TOL: f64 = 1e-10;
/// Exact-mode verdict slack.
pub const EXACT_SLACK: f64 = 1e-9;
/// Monte Carlo verdict: `margin >= -MC_SIGMAS * stderr - MC_SLACK`.
pub const MC_SIGMAS: f64 = 3.0;
pub const MC_SLACK: f64 = 1e-6;
pub const MIN_MC_TRIALS: usize = 10_000;
const MAX_REJECTION_RATE: f64 = 0.01;

/// RNG for replicate `stream` of a run seeded with `seed`.
///
/// Streams are independent of evaluation order.
pub fn lab_rng(seed: u64, stream: u64) -> LabRng {
    LabRng::seed_from_u64(derive_seed(seed, stream))
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Uniform draw from the open simplex (flat Dirichlet).
pub fn random_interior(dim: usize, rng: &mut LabRng) -> Result<Distribution> {
    let w: Vec<f64> = (0..dim)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln() + f64::MIN_POSITIVE)
        .collect();
    Distribution::normalized(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub weight: f64,
    /// Target forecast at this atom.
    pub forecast: Distribution,
    /// Law of the outcome given this atom.
    pub outcome: Distribution,
}

/// A finite joint law of (target forecast, outcome) with pinned first moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryInstance {
    atoms: Vec<Atom>,
    helper: Distribution,
    predictor: Distribution,
}

impl AdversaryInstance {
    /// Checks weights and both moment constraints.
    pub fn new(atoms: Vec<Atom>, helper: Distribution, predictor: Distribution) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("adversary needs at least one atom".into()));
        }
        let d = helper.dim();
        if predictor.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: predictor.dim(),
            });
        }
        for a in &atoms {
            if !(a.weight > 0.0) {
                return Err(Error::InvalidArgument(format!("atom weight {} not positive", a.weight)));
            }
            for dist in [&a.forecast, &a.outcome] {
                if dist.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: dist.dim(),
                    });
                }
            }
        }
        let adv = Self {
            atoms,
            helper,
            predictor,
        };
        let total: f64 = adv.atoms.iter().map(|a| a.weight).sum();
        let (pe, ye) = adv.moment_errors();
        if (total - 1.0).abs() > MOMENT_TOL || pe > MOMENT_TOL || ye > MOMENT_TOL {
            return Err(Error::InvalidArgument(format!(
                "moment constraints violated: weights {total}, forecast {pe:e}, outcome {ye:e}"
            )));
        }
        Ok(adv)
    }

    /// The single-atom law `P = p_t|h`, `Y ~ p_h`.
    pub fn degenerate(helper: &Distribution, predictor: &Distribution) -> Result<Self> {
        Self::new(
            vec![Atom {
                weight: 1.0,
                forecast: predictor.clone(),
                outcome: helper.clone(),
            }],
            helper.clone(),
            predictor.clone(),
        )
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn helper(&self) -> &Distribution {
        &self.helper
    }

    pub fn predictor(&self) -> &Distribution {
        &self.predictor
    }

    /// L-infinity errors of `E[P] - p_t|h` and `E[e_Y] - p_h`.
    pub fn moment_errors(&self) -> (f64, f64) {
        let d = self.helper.dim();
        let mut mp = vec![0.0; d];
        let mut my = vec![0.0; d];
        for a in &self.atoms {
            for i in 0..d {
                mp[i] += a.weight * a.forecast[i];
                my[i] += a.weight * a.outcome[i];
            }
        }
        let err = |m: &[f64], target: &[f64]| {
            m.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        (err(&mp, &self.predictor), err(&my, &self.helper))
    }
}

/// Symmetric two-atom adversary around `(p_t|h, p_h)`.
///
/// Construction, in RNG order:
/// 1. draw `u_i = 2U - 1` for every coordinate, then `v_i = 2U - 1`
///    (`U` uniform on `[0, 1)` from the top 53 bits of a 64-bit output);
/// 2. centre each vector to sum zero and divide by its largest magnitude;
/// 3. `s_u = min(spread, 0.5 * min_i p_t|h_i / |u_i|)`, likewise `s_v` with `p_h`;
/// 4. atoms `(1/2, p_t|h + s_u u, p_h + s_v v)` and `(1/2, p_t|h - s_u u, p_h - s_v v)`.
///
/// The halving in step 3 keeps every atom strictly inside the simplex.
/// When both scales are zero the result collapses to the single atom
/// `(1, p_t|h, p_h)`.
pub fn make_adversary(
    helper: &Distribution,
    predictor: &Distribution,
    spread: f64,
    rng: &mut LabRng,
) -> Result<AdversaryInstance> {
    if !(0.0..=1.0).contains(&spread) {
        return Err(Error::InvalidArgument(format!("spread {spread} outside [0, 1]")));
    }
    let d = helper.dim();
    if predictor.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: predictor.dim(),
        });
    }
    let mut draw = || -> Vec<f64> { (0..d).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect() };
    let u = tangent_direction(draw());
    let v = tangent_direction(draw());
    let scale = |dir: &[f64], base: &[f64]| -> f64 {
        let room = dir
            .iter()
            .zip(base)
            .filter(|(x, _)| **x != 0.0)
            .map(|(x, b)| b / x.abs())
            .fold(f64::INFINITY, f64::min);
        spread.min(0.5 * room)
    };
    let su = scale(&u, predictor);
    let sv = scale(&v, helper);
    if su == 0.0 && sv == 0.0 {
        return AdversaryInstance::degenerate(helper, predictor);
    }
    let shift = |base: &[f64], dir: &[f64], s: f64| -> Result<Distribution> {
        Distribution::new(base.iter().zip(dir).map(|(b, x)| b + s * x).collect())
    };
    let atoms = vec![
        Atom {
            weight: 0.5,
            forecast: shift(predictor, &u, su)?,
            outcome: shift(helper, &v, sv)?,
        },
        Atom {
            weight: 0.5,
            forecast: shift(predictor, &u, -su)?,
            outcome: shift(helper, &v, -sv)?,
        },
    ];
    AdversaryInstance::new(atoms, helper.clone(), predictor.clone())
}

fn tangent_direction(mut x: Vec<f64>) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evaluation {
    /// Exact sum over atoms and outcomes.
    Exact,
    MonteCarlo { trials: usize },
}

/// Expected improvement of a rule against its theoretical floor.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub estimate: f64,
    pub stderr: f64,
    /// `D_G(p_h, p_t|h)`.
    pub bound: f64,
    pub margin: f64,
    /// Draws (Monte Carlo) or atom-outcome cells (exact).
    pub trials: usize,
    /// Draws or cells dropped for infinite losses.
    pub rejected: usize,
    pub verdict: Verdict,
}

/// Per-draw improvement `loss(P, y) - loss(f(P), y)`.
fn gain(g: Generator, forecast: &[f64], aggregated: &[f64], y: usize) -> Result<Option<f64>> {
    let x = g.loss(forecast, Outcome(y))? - g.loss(aggregated, Outcome(y))?;
    Ok(x.is_finite().then_some(x))
}

/// Exact expected improvement of an arbitrary aggregator over a finite law.
///
/// The aggregator may return off-simplex points; losses use the Savage form.
/// Returns `(improvement, rejected_mass)` where infinite-loss cells are
/// excluded from the average.
pub fn closed_form_improvement<F>(g: Generator, adv: &AdversaryInstance, mut aggregator: F) -> Result<(f64, f64, usize)>
where
    F: FnMut(&Distribution) -> Result<Vec<f64>>,
{
    let mut total = 0.0;
    let mut accepted_mass = 0.0;
    let mut rejected_mass = 0.0;
    let mut rejected = 0;
    for atom in &adv.atoms {
        let aggregated = aggregator(&atom.forecast)?;
        for (y, &cy) in atom.outcome.iter().enumerate() {
            let mass = atom.weight * cy;
            if mass == 0.0 {
                continue;
            }
            match gain(g, &atom.forecast, &aggregated, y)? {
                Some(x) => {
                    total += mass * x;
                    accepted_mass += mass;
                }
                None => {
                    rejected_mass += mass;
                    rejected += 1;
                }
            }
        }
    }
    let estimate = if rejected_mass > 0.0 && accepted_mass > 0.0 {
        total / accepted_mass
    } else {
        total
    };
    Ok((estimate, rejected_mass, rejected))
}

fn rule_aggregator<'a>(
    rule: &'a Rule,
    adv: &'a AdversaryInstance,
    opts: AggregateOptions,
) -> impl FnMut(&Distribution) -> Result<Vec<f64>> + 'a {
    move |p: &Distribution| {
        let t = Triple::new(p.clone(), adv.helper.clone(), adv.predictor.clone())?;
        Ok(rule.apply_with(&t, opts)?.into_vec())
    }
}

/// Expected improvement of `rule` under loss `g` against adversary `adv`.
pub fn expected_improvement(
    g: Generator,
    rule: &Rule,
    adv: &AdversaryInstance,
    mode: Evaluation,
    rng: &mut LabRng,
) -> Result<VerificationReport> {
    let opts = AggregateOptions::default();
    let bound = g.divergence(&adv.helper, &adv.predictor)?;
    match mode {
        Evaluation::Exact => {
            let (estimate, rejected_mass, rejected) =
                closed_form_improvement(g, adv, rule_aggregator(rule, adv, opts))?;
            let cells = adv.atoms.len() * adv.helper.dim();
            let margin = estimate - bound;
            let pass = margin >= -EXACT_SLACK && rejected_mass <= MAX_REJECTION_RATE;
            Ok(VerificationReport {
                estimate,
                stderr: 0.0,
                bound,
                margin,
                trials: cells,
                rejected,
                verdict: if pass { Verdict::Pass } else { Verdict::Fail },
            })
        }
        Evaluation::MonteCarlo { trials } => {
            if trials < MIN_MC_TRIALS {
                return Err(Error::InvalidArgument(format!(
                    "Monte Carlo needs at least {MIN_MC_TRIALS} trials, got {trials}"
                )));
            }
            let mut agg = rule_aggregator(rule, adv, opts);
            let outputs: Vec<Vec<f64>> = adv
                .atoms
                .iter()
                .map(|a| agg(&a.forecast))
                .collect::<Result<_>>()?;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut accepted = 0usize;
            let mut rejected = 0usize;
            for _ in 0..trials {
                let i = sample_index(adv.atoms.iter().map(|a| a.weight), rng.gen());
                let atom = &adv.atoms[i];
                let y = sample_index(atom.outcome.iter().copied(), rng.gen());
                match gain(g, &atom.forecast, &outputs[i], y)? {
                    Some(x) => {
                        sum += x;
                        sum_sq += x * x;
                        accepted += 1;
                    }
                    None => rejected += 1,
                }
            }
            let n = accepted.max(1) as f64;
            let estimate = sum / n;
            let var = if accepted > 1 {
                ((sum_sq - n * estimate * estimate) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            let stderr = (var / n).sqrt();
            let margin = estimate - bound;
            let pass = margin >= -MC_SIGMAS * stderr - MC_SLACK
                && (rejected as f64) <= MAX_REJECTION_RATE * trials as f64;
            Ok(VerificationReport {
                estimate,
                stderr,
                bound,
                margin,
                trials,
                rejected,
                verdict: if pass { Verdict::Pass } else { Verdict::Fail },
            })
        }
    }
}

/// Index drawn from non-negative `weights` with uniform `u` in `[0, 1)`.
fn sample_index(weights: impl Iterator<Item = f64> + Clone, u: f64) -> usize {
    let total: f64 = weights.clone().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

/// `|improvement - D_G(p_h, p_t|h)|` for the generic rule on the degenerate adversary.
pub fn tightness_check(g: Generator, helper: &Distribution, predictor: &Distribution) -> Result<f64> {
    let adv = AdversaryInstance::degenerate(helper, predictor)?;
    let mut rng = lab_rng(0, 0);
    let report = expected_improvement(g, &Rule::Generic(g), &adv, Evaluation::Exact, &mut rng)?;
    Ok((report.estimate - report.bound).abs())
}

/// The shift before projection: `(grad G)^-1(grad G(p) + grad G(helper) - grad G(predictor))`.
pub fn unprojected_shift(
    g: Generator,
    p: &[f64],
    helper: &[f64],
    predictor: &[f64],
) -> Result<ExtendedPoint> {
    let z = g.gradient(p)?.shifted(&g.gradient(helper)?, &g.gradient(predictor)?)?;
    g.inverse_gradient(&z)
}

/// Guarantee when the helper and predictor only approximate the true moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBound {
    /// `D_G(y, p) - D_G(y, y_out)`.
    pub bound: f64,
    /// `D_G(y, y_out)`.
    pub residual: f64,
    /// Shifted true mean, off the simplex in general.
    pub y_out: ExtendedPoint,
    /// Set when a power-family dual coordinate went negative and was clamped.
    pub clamped: bool,
}

pub fn residual_bound(
    g: Generator,
    true_p: &Distribution,
    true_y: &Distribution,
    proxy_p: &Distribution,
    proxy_y: &Distribution,
) -> Result<ResidualBound> {
    let z = g
        .gradient(true_p)?
        .shifted(&g.gradient(proxy_y)?, &g.gradient(proxy_p)?)?;
    let clamped = matches!(g, Generator::Power(_)) && z.iter().any(|&v| v < 0.0);
    let y_out = g.inverse_gradient(&z)?;
    let residual = g.divergence(true_y, &y_out)?;
    Ok(ResidualBound {
        bound: g.divergence(true_y, true_p)? - residual,
        residual,
        y_out,
        clamped,
    })
}

/// Mass placed at one binary atom location by a worst-case adversary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMass {
    /// First coordinate of the target forecast.
    pub location: f64,
    /// `Pr(P = location, Y = 0)`.
    pub outcome_zero: f64,
    /// `Pr(P = location, Y = 1)`.
    pub outcome_one: f64,
}

/// Result of the binary hybrid worst-case search.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryWorstCase {
    /// Smallest expected log-loss improvement found.
    pub minimum: f64,
    /// `KL(p_h, p_t|h)`.
    pub kl: f64,
    /// Adversary attaining `minimum`, one entry per location.
    pub witness: Vec<BinaryMass>,
    pub vertices_checked: usize,
}

impl BinaryWorstCase {
    pub fn margin(&self) -> f64 {
        self.minimum - self.kl
    }
}

/// Worst-case log-loss improvement of the hybrid rule over binary adversaries.
///
/// Atom locations `P = (a, 1 - a)` range over the grid `a = k * grid_step`
/// (endpoints excluded) plus `a = p_t|h[0]`. For fixed locations the
/// improvement is linear in the joint masses `m_j = Pr(atom j, Y = 0)` and
/// `n_j = Pr(atom j, Y = 1)`, and the moment constraints are three linear
/// equalities, so the minimum over weights and conditionals sits at a basic
/// solution with at most three non-zero masses. Every such basis is solved
/// exactly; `atoms = 2` keeps only bases touching at most two locations.
pub fn binary_hybrid_worst_case(
    helper: &Distribution,
    predictor: &Distribution,
    atoms: usize,
    grid_step: f64,
) -> Result<BinaryWorstCase> {
    if helper.dim() != 2 || predictor.dim() != 2 {
        return Err(Error::InvalidArgument("binary search needs d = 2".into()));
    }
    if !(2..=3).contains(&atoms) {
        return Err(Error::InvalidArgument(format!("atoms must be 2 or 3, got {atoms}")));
    }
    if !(grid_step > 0.0 && grid_step <= 0.02) {
        return Err(Error::InvalidArgument(format!("grid step {grid_step} outside (0, 0.02]")));
    }
    let g = Generator::NegEntropy;
    let kl = g.divergence(helper, predictor)?;

    let n = (1.0 / grid_step).round() as usize;
    let mut locations: Vec<f64> = (1..n).map(|k| k as f64 / n as f64).collect();
    if !locations.iter().any(|&a| a == predictor[0]) {
        locations.push(predictor[0]);
    }

    // Column (1, a, 1) for m_j, (1, a, 0) for n_j; cost = per-outcome gain.
    struct Column {
        loc: usize,
        a: f64,
        y0: f64,
        cost: f64,
    }
    let mut columns = Vec::with_capacity(2 * locations.len());
    for (j, &a) in locations.iter().enumerate() {
        let p = Distribution::new(vec![a, 1.0 - a])?;
        let t = Triple::new(p.clone(), helper.clone(), predictor.clone())?;
        let f = hybrid_shift(&t)?;
        for y in 0..2 {
            let cost = gain(g, &p, &f, y)?.unwrap_or(f64::INFINITY);
            columns.push(Column {
                loc: j,
                a,
                y0: if y == 0 { 1.0 } else { 0.0 },
                cost,
            });
        }
    }

    let rhs = [1.0, predictor[0], helper[0]];
    let mut minimum = f64::INFINITY;
    let mut best = [(0usize, 0.0); 3];
    let mut checked = 0usize;
    let m = columns.len();
    for i in 0..m {
        for j in (i + 1)..m {
            for k in (j + 1)..m {
                let basis = [&columns[i], &columns[j], &columns[k]];
                if atoms == 2 {
                    let mut locs = [basis[0].loc, basis[1].loc, basis[2].loc];
                    locs.sort_unstable();
                    if locs[0] != locs[1] && locs[1] != locs[2] {
                        continue;
                    }
                }
                let cols = basis.map(|c| [1.0, c.a, c.y0]);
                let Some(x) = solve3(cols, rhs) else { continue };
                if x.iter().any(|&v| v < -1e-12) {
                    continue;
                }
                checked += 1;
                let value: f64 = x
                    .iter()
                    .zip(basis)
                    .filter(|(xv, _)| **xv > 1e-15)
                    .map(|(xv, c)| xv * c.cost)
                    .sum();
                if value < minimum {
                    minimum = value;
                    best = [(i, x[0]), (j, x[1]), (k, x[2])];
                }
            }
        }
    }

    let mut witness: Vec<BinaryMass> = Vec::new();
    for (col, mass) in best {
        let mass = mass.max(0.0);
        if mass <= 1e-15 || minimum.is_infinite() {
            continue;
        }
        let c = &columns[col];
        let entry = match witness.iter_mut().find(|w| w.location == c.a) {
            Some(e) => e,
            None => {
                witness.push(BinaryMass {
                    location: c.a,
                    outcome_zero: 0.0,
                    outcome_one: 0.0,
                });
                witness.last_mut().unwrap()
            }
        };
        if c.y0 == 1.0 {
            entry.outcome_zero += mass;
        } else {
            entry.outcome_one += mass;
        }
    }
    witness.sort_by(|a, b| a.location.total_cmp(&b.location));
    Ok(BinaryWorstCase {
        minimum,
        kl,
        witness,
        vertices_checked: checked,
    })
}

/// Solves `sum_c x_c * col_c = rhs` for three columns by Cramer's rule.
fn solve3(cols: [[f64; 3]; 3], rhs: [f64; 3]) -> Option<[f64; 3]> {
    let det = |a: [f64; 3], b: [f64; 3], c: [f64; 3]| {
        a[0] * (b[1] * c[2] - b[2] * c[1]) - b[0] * (a[1] * c[2] - a[2] * c[1])
            + c[0] * (a[1] * b[2] - a[2] * b[1])
    };
    let d = det(cols[0], cols[1], cols[2]);
    if d.abs() < 1e-12 {
        return None;
    }
    Some([
        det(rhs, cols[1], cols[2]) / d,
        det(cols[0], rhs, cols[2]) / d,
        det(cols[0], cols[1], rhs) / d,
    ])
}

/// One grid cell of a verification run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteRow {
    pub generator: String,
    pub rule: String,
    pub d: usize,
    pub spread: f64,
    pub seed: u64,
    pub estimate: f64,
    pub stderr: f64,
    pub bound: f64,
    pub margin: f64,
    pub verdict: Verdict,
    /// Whether the rule is optimal for this loss, i.e. the verdict gates.
    #[serde(skip)]
    pub gating: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub generators: Vec<Generator>,
    /// `None` runs the generic rule matched to each generator.
    pub rule: Option<Rule>,
    pub dims: Vec<usize>,
    pub spreads: Vec<f64>,
    pub pairs: usize,
    pub mode: Evaluation,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            generators: vec![Generator::NegEntropy, Generator::Quadratic, Generator::Power(1.5)],
            rule: None,
            dims: vec![2, 3, 5],
            spreads: vec![0.0, 0.05, 0.1],
            pairs: 20,
            mode: Evaluation::Exact,
            seed: DEFAULT_SEED,
        }
    }
}

pub const DEFAULT_SEED: u64 = 20_260_118;

/// Whether a rule's verdict under loss `g` is expected to pass.
pub fn is_gating(g: Generator, rule: &Rule, d: usize) -> bool {
    match rule {
        Rule::Hybrid => g == Generator::NegEntropy && d == 2,
        _ => rule.matched_generator() == Some(g),
    }
}

/// Runs every (generator, d, spread, pair) cell.
///
/// Cell `i` (in generator, d, spread, pair order) draws its pair and its
/// adversary from `lab_rng(seed, i)`.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &g in &cfg.generators {
        g.validate()?;
        let rule = cfg.rule.unwrap_or(Rule::Generic(g));
        for &d in &cfg.dims {
            for &spread in &cfg.spreads {
                for _ in 0..cfg.pairs {
                    let seed = derive_seed(cfg.seed, cell);
                    let mut rng = LabRng::seed_from_u64(seed);
                    cell += 1;
                    let helper = random_interior(d, &mut rng)?;
                    let predictor = random_interior(d, &mut rng)?;
                    let adv = make_adversary(&helper, &predictor, spread, &mut rng)?;
                    let report = expected_improvement(g, &rule, &adv, cfg.mode, &mut rng)?;
                    rows.push(SuiteRow {
                        generator: g.to_string(),
                        rule: rule.to_string(),
                        d,
                        spread,
                        seed,
                        estimate: report.estimate,
                        stderr: report.stderr,
                        bound: report.bound,
                        margin: report.margin,
                        verdict: report.verdict,
                        gating: is_gating(g, &rule, d),
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_suite_csv<W: Write>(rows: &[SuiteRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(())
}
