use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Distribution;

/// A next-token predictor.
///
/// `ctx` holds the tokens generated so far in this session; any prompt is
/// already loaded into the forecaster.
pub trait Forecaster: Send {
    fn vocab_size(&self) -> usize;
    fn eot(&self) -> usize;
    fn next_distribution(&mut self, step: usize, ctx: &[usize]) -> Result<Distribution>;
}

impl<F: Forecaster + ?Sized> Forecaster for Box<F> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn eot(&self) -> usize {
        (**self).eot()
    }

    fn next_distribution(&mut self, step: usize, ctx: &[usize]) -> Result<Distribution> {
        (**self).next_distribution(step, ctx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub vocab: usize,
    pub eot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub p: Vec<f64>,
}

/// Replays recorded per-step distributions by step index.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    header: TraceHeader,
    steps: Vec<Distribution>,
}

impl TraceFile {
    pub fn new(vocab: usize, eot: usize, steps: Vec<Distribution>) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::InvalidArgument(format!("vocab must be at least 2, got {vocab}")));
        }
        if eot >= vocab {
            return Err(Error::OutcomeOutOfRange { index: eot, dim: vocab });
        }
        for s in &steps {
            if s.dim() != vocab {
                return Err(Error::DimensionMismatch {
                    expected: vocab,
                    actual: s.dim(),
                });
            }
        }
        Ok(Self {
            header: TraceHeader { vocab, eot },
            steps,
        })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::Forecaster {
            name: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_reader(file)
    }

    /// Parses a header line followed by one `{"step", "p"}` line per step.
    /// Blank lines are skipped; steps must be numbered 0, 1, 2, ...
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(reader)
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let bad = |line: usize, reason: String| Error::Forecaster {
            name: "trace".into(),
            reason: format!("line {}: {reason}", line + 1),
        };
        let (n, first) = lines
            .next()
            .ok_or_else(|| bad(0, "missing header".into()))?;
        let header: TraceHeader =
            serde_json::from_str(&first?).map_err(|e| bad(n, format!("header: {e}")))?;
        let mut steps = Vec::new();
        for (n, line) in lines {
            let rec: TraceRecord = serde_json::from_str(&line?).map_err(|e| bad(n, e.to_string()))?;
            if rec.step != steps.len() {
                return Err(bad(n, format!("expected step {}, found {}", steps.len(), rec.step)));
            }
            let d = Distribution::with_dim(rec.p, header.vocab).map_err(|e| bad(n, e.to_string()))?;
            steps.push(d);
        }
        Self::new(header.vocab, header.eot, steps)
    }

    pub fn write_to(&self, mut out: impl std::io::Write) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(out)?;
        for (step, d) in self.steps.iter().enumerate() {
            let rec = TraceRecord {
                step,
                p: d.to_vec(),
            };
            serde_json::to_writer(&mut out, &rec).map_err(|e| Error::Internal(e.to_string()))?;
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[Distribution] {
        &self.steps
    }
}

impl Forecaster for TraceFile {
    fn vocab_size(&self) -> usize {
        self.header.vocab
    }

    fn eot(&self) -> usize {
        self.header.eot
    }

    fn next_distribution(&mut self, step: usize, _ctx: &[usize]) -> Result<Distribution> {
        self.steps
            .get(step)
            .cloned()
            .ok_or(Error::TraceExhausted {
                steps: self.steps.len(),
            })
    }
}

/// Order-1 Markov chain over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarkov {
    eot: usize,
    initial: Distribution,
    /// `transitions[a]` is the next-token law after token `a`.
    transitions: Vec<Distribution>,
}

impl SyntheticMarkov {
    pub fn new(eot: usize, initial: Distribution, transitions: Vec<Distribution>) -> Result<Self> {
        let d = initial.dim();
        if transitions.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: transitions.len(),
            });
        }
        if let Some(row) = transitions.iter().find(|r| r.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: row.dim(),
            });
        }
        if eot >= d {
            return Err(Error::OutcomeOutOfRange { index: eot, dim: d });
        }
        Ok(Self {
            eot,
            initial,
            transitions,
        })
    }

    /// Random chain whose rows put mass `eot_mass` on the end token.
    pub fn random(vocab: usize, eot: usize, eot_mass: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&eot_mass) {
            return Err(Error::InvalidArgument(format!("eot mass {eot_mass} outside [0, 1)")));
        }
        if vocab < 2 {
            return Err(Error::InvalidArgument(format!("vocab must be at least 2, got {vocab}")));
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut row = || -> Result<Distribution> {
            let mut w: Vec<f64> = (0..vocab).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            w[eot] = 0.0;
            let rest: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x *= (1.0 - eot_mass) / rest);
            w[eot] = eot_mass;
            Distribution::normalized(w)
        };
        let initial = row()?;
        let transitions = (0..vocab).map(|_| row()).collect::<Result<_>>()?;
        Self::new(eot, initial, transitions)
    }

    /// The trace this chain would produce along a fixed token path.
    pub fn trace_along(&self, path: &[usize]) -> Result<TraceFile> {
        let mut steps = Vec::with_capacity(path.len() + 1);
        steps.push(self.initial.clone());
        for &tok in path {
            let row = self.transitions.get(tok).ok_or(Error::OutcomeOutOfRange {
                index: tok,
                dim: self.initial.dim(),
            })?;
            steps.push(row.clone());
        }
        TraceFile::new(self.initial.dim(), self.eot, steps)
    }
}

impl Forecaster for SyntheticMarkov {
    fn vocab_size(&self) -> usize {
        self.initial.dim()
    }

    fn eot(&self) -> usize {
        self.eot
    }

    fn next_distribution(&mut self, _step: usize, ctx: &[usize]) -> Result<Distribution> {
        match ctx.last() {
            None => Ok(self.initial.clone()),
            Some(&tok) => self
                .transitions
                .get(tok)
                .cloned()
                .ok_or(Error::OutcomeOutOfRange {
                    index: tok,
                    dim: self.initial.dim(),
                }),
        }
    }
}
