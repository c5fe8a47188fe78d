//! Temperature, top-k and nucleus sampling over a next-token distribution.
//!
//! The session RNG is xoshiro256++ seeded through SplitMix64. A uniform draw
//! takes the top 53 bits of one 64-bit output and scales by `2^-53`, so any
//! implementation of those two generators reproduces a session.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::geometry::Distribution;

pub type SessionRng = Xoshiro256PlusPlus;

pub const DEFAULT_TEMPERATURE: f64 = 0.6;
pub const DEFAULT_MAX_NEW_TOKENS: usize = 1000;
pub const DEFAULT_SEED: u64 = 0x5EED;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_k: Option<usize>,
    /// Nucleus mass in `(0, 1]`.
    pub top_p: Option<f64>,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            top_k: None,
            top_p: None,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            seed: DEFAULT_SEED,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        if self.top_k == Some(0) {
            return Err(Error::InvalidArgument("top_k must be at least 1".into()));
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidArgument(format!("top_p must lie in (0, 1], got {p}")));
            }
        }
        Ok(())
    }

    pub fn rng(&self) -> SessionRng {
        SessionRng::seed_from_u64(self.seed)
    }
}

/// The distribution actually sampled: `p^(1/T)` renormalised, then truncated.
pub fn reshape(dist: &Distribution, cfg: &SamplerConfig) -> Vec<f64> {
    let peak = dist.iter().copied().fold(0.0, f64::max);
    let inv_t = 1.0 / cfg.temperature;
    let mut w: Vec<f64> = dist
        .iter()
        .map(|&p| if p > 0.0 { ((p.ln() - peak.ln()) * inv_t).exp() } else { 0.0 })
        .collect();

    if cfg.top_k.is_some() || cfg.top_p.is_some() {
        // Descending by weight, ties by index.
        let mut order: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
        order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
        let mut keep = order.len();
        if let Some(k) = cfg.top_k {
            keep = keep.min(k);
        }
        if let Some(top_p) = cfg.top_p {
            let total: f64 = w.iter().sum();
            let mut acc = 0.0;
            for (rank, &i) in order.iter().enumerate().take(keep) {
                acc += w[i] / total;
                if acc >= top_p {
                    keep = rank + 1;
                    break;
                }
            }
        }
        for &i in &order[keep..] {
            w[i] = 0.0;
        }
    }

    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Draws one token. Deterministic given `(dist, cfg, rng state)`.
pub fn sample_token(dist: &Distribution, cfg: &SamplerConfig, rng: &mut SessionRng) -> usize {
    let weights = reshape(dist, cfg);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
