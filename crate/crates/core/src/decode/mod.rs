//! Autoregressive generation steered by three forecaster streams.
//!
//! Each step queries the target, helper and predictor for the next token,
//! aggregates the three distributions with the session's rule, applies the
//! sampler's temperature and truncation to the result and draws a token.
//! Generation stops at the end token or at `max_new_tokens`.

mod forecaster;
mod protocol;
mod sampler;

use std::fmt;
use std::thread;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::aggregate::{Rule, Triple};
use crate::error::{Error, Result};
use crate::geometry::Distribution;

pub use forecaster::{Forecaster, SyntheticMarkov, TraceFile, TraceHeader, TraceRecord};
pub use protocol::{
    serve_forecaster, ErrorReply, Hello, HelloReply, RemoteForecaster, Request, StepReply, DEFAULT_TIMEOUT,
};
pub use sampler::{
    reshape, sample_token, SamplerConfig, SessionRng, DEFAULT_MAX_NEW_TOKENS, DEFAULT_SEED, DEFAULT_TEMPERATURE,
};

/// Which rule to apply, and for how many leading steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodePolicy {
    pub rule: Rule,
    /// Steps `0..k` are aggregated; later steps use the target alone.
    pub k_cutoff: Option<usize>,
}

impl DecodePolicy {
    /// Uses the rule's own cutoff (weak-to-strong `k`), if any.
    pub fn from_rule(rule: Rule) -> Self {
        Self {
            rule,
            k_cutoff: rule.token_cutoff(),
        }
    }

    pub fn target_only() -> Self {
        Self {
            rule: Rule::Multiplicative,
            k_cutoff: Some(0),
        }
    }

    pub fn applies_at(&self, step_index: usize) -> bool {
        self.k_cutoff.is_none_or(|k| step_index < k)
    }
}

/// One aggregation step: the rule's output when the policy is active, else the target.
pub fn step(policy: &DecodePolicy, step_index: usize, t: &Triple) -> Result<Distribution> {
    if policy.applies_at(step_index) {
        policy.rule.apply(t)
    } else {
        Ok(t.target().clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum DecodeStatus {
    /// The end token was drawn. It is not part of the output.
    Eot,
    /// `max_new_tokens` tokens were emitted without an end token.
    LengthCap,
    /// A trace ran out before the end token.
    Truncated { step: usize },
    /// A forecaster failed; the partial sequence is kept.
    Aborted { step: usize, reason: String },
}

impl DecodeStatus {
    pub fn is_complete(&self) -> bool {
        matches!(self, DecodeStatus::Eot)
    }
}

impl fmt::Display for DecodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeStatus::Eot => f.write_str("eot"),
            DecodeStatus::LengthCap => f.write_str("length_cap"),
            DecodeStatus::Truncated { step } => write!(f, "truncated at step {step}"),
            DecodeStatus::Aborted { step, reason } => write!(f, "aborted at step {step}: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub token: usize,
    pub rule_applied: bool,
    pub rule: String,
    /// Hex SHA-256 prefix of the sampled-from distribution (little-endian f64s).
    pub dist_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecodeOutcome {
    pub tokens: Vec<usize>,
    pub status: DecodeStatus,
    pub log: Vec<StepRecord>,
}

pub fn distribution_hash(p: &[f64]) -> String {
    let mut h = Sha256::new();
    for x in p {
        h.update(x.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Session-wide options that do not affect the output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionOptions {
    /// Query the three forecasters on separate threads.
    pub parallel_queries: bool,
}

pub fn decode(
    target: &mut dyn Forecaster,
    helper: &mut dyn Forecaster,
    predictor: &mut dyn Forecaster,
    policy: &DecodePolicy,
    cfg: &SamplerConfig,
) -> Result<DecodeOutcome> {
    decode_with(target, helper, predictor, policy, cfg, SessionOptions::default())
}

/// Runs one session.
///
/// Setup problems (vocabulary mismatch, invalid rule or sampler settings)
/// are errors. Failures during generation end the session with a
/// `Truncated` or `Aborted` status and keep the tokens drawn so far.
/// Helper and predictor are only queried at steps where the rule applies.
pub fn decode_with(
    target: &mut dyn Forecaster,
    helper: &mut dyn Forecaster,
    predictor: &mut dyn Forecaster,
    policy: &DecodePolicy,
    cfg: &SamplerConfig,
    opts: SessionOptions,
) -> Result<DecodeOutcome> {
    cfg.validate()?;
    policy.rule.validate()?;
    let vocab = target.vocab_size();
    let eot = target.eot();
    for f in [&*helper, &*predictor] {
        if f.vocab_size() != vocab {
            return Err(Error::DimensionMismatch {
                expected: vocab,
                actual: f.vocab_size(),
            });
        }
        if f.eot() != eot {
            return Err(Error::InvalidArgument(format!(
                "forecasters disagree on the end token ({eot} vs {})",
                f.eot()
            )));
        }
    }

    let mut rng = cfg.rng();
    let mut tokens = Vec::new();
    let mut log = Vec::new();
    let rule_name = policy.rule.to_string();

    for step_index in 0..cfg.max_new_tokens {
        let active = policy.applies_at(step_index);
        let queried = if active {
            query_all(target, helper, predictor, step_index, &tokens, opts.parallel_queries)
                .and_then(|(t, h, p)| step(policy, step_index, &Triple::new(t, h, p)?))
        } else {
            target.next_distribution(step_index, &tokens).and_then(|d| {
                if d.dim() == vocab {
                    Ok(d)
                } else {
                    Err(Error::DimensionMismatch {
                        expected: vocab,
                        actual: d.dim(),
                    })
                }
            })
        };
        let dist = match queried {
            Ok(d) => d,
            Err(Error::TraceExhausted { .. }) => {
                return Ok(DecodeOutcome {
                    tokens,
                    status: DecodeStatus::Truncated { step: step_index },
                    log,
                })
            }
            Err(e) => {
                return Ok(DecodeOutcome {
                    tokens,
                    status: DecodeStatus::Aborted {
                        step: step_index,
                        reason: e.to_string(),
                    },
                    log,
                })
            }
        };
        let token = sample_token(&dist, cfg, &mut rng);
        log.push(StepRecord {
            step: step_index,
            token,
            rule_applied: active,
            rule: if active { rule_name.clone() } else { "target".into() },
            dist_hash: distribution_hash(&dist),
        });
        if token == eot {
            return Ok(DecodeOutcome {
                tokens,
                status: DecodeStatus::Eot,
                log,
            });
        }
        tokens.push(token);
    }
    Ok(DecodeOutcome {
        tokens,
        status: DecodeStatus::LengthCap,
        log,
    })
}

type Queried = (Distribution, Distribution, Distribution);

fn query_all(
    target: &mut dyn Forecaster,
    helper: &mut dyn Forecaster,
    predictor: &mut dyn Forecaster,
    step_index: usize,
    ctx: &[usize],
    parallel: bool,
) -> Result<Queried> {
    if !parallel {
        return Ok((
            target.next_distribution(step_index, ctx)?,
            helper.next_distribution(step_index, ctx)?,
            predictor.next_distribution(step_index, ctx)?,
        ));
    }
    thread::scope(|s| {
        let h = s.spawn(|| helper.next_distribution(step_index, ctx));
        let p = s.spawn(|| predictor.next_distribution(step_index, ctx));
        let t = target.next_distribution(step_index, ctx);
        let h = h.join().unwrap_or_else(|_| Err(Error::Internal("helper query panicked".into())));
        let p = p.join().unwrap_or_else(|_| Err(Error::Internal("predictor query panicked".into())));
        Ok((t?, h?, p?))
    })
}
