//! Newline-delimited JSON protocol for out-of-process forecasters.
//!
//! ```text
//! -> {"hello": {"vocab_expected": 32000}}
//! <- {"vocab": 32000, "eot": 2}
//! -> {"ctx": [17, 4051]}
//! <- {"p": [...]}
//! ```
//!
//! The same exchange runs over a TCP connection or a child process's
//! standard streams. A server may answer a request with `{"error": "..."}`.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::forecaster::Forecaster;
use crate::error::{Error, Result};
use crate::geometry::Distribution;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub vocab_expected: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Request {
    Hello { hello: Hello },
    Step { ctx: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelloReply {
    pub vocab: usize,
    pub eot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReply {
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
}

/// Forecaster reached over the wire protocol.
pub struct RemoteForecaster {
    name: String,
    vocab: usize,
    eot: usize,
    timeout: Duration,
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
}

impl std::fmt::Debug for RemoteForecaster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteForecaster")
            .field("name", &self.name)
            .field("vocab", &self.vocab)
            .field("eot", &self.eot)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

impl RemoteForecaster {
    pub fn connect(addr: impl ToSocketAddrs + std::fmt::Display, vocab_expected: usize, timeout: Duration) -> Result<Self> {
        let name = format!("tcp:{addr}");
        let stream = TcpStream::connect(&addr).map_err(|e| Error::Forecaster {
            name: name.clone(),
            reason: e.to_string(),
        })?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Self::handshake(name, Box::new(stream), reader, None, vocab_expected, timeout)
    }

    /// Spawns `program args...` and talks to it over its stdin and stdout.
    pub fn spawn(program: &str, args: &[String], vocab_expected: usize, timeout: Duration) -> Result<Self> {
        let name = format!("stdio:{program}");
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Forecaster {
                name: name.clone(),
                reason: e.to_string(),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(name, Box::new(stdin), stdout, Some(child), vocab_expected, timeout)
    }

    /// Runs the handshake over an arbitrary byte channel.
    pub fn from_channel(
        name: impl Into<String>,
        writer: impl Write + Send + 'static,
        reader: impl Read + Send + 'static,
        vocab_expected: usize,
        timeout: Duration,
    ) -> Result<Self> {
        Self::handshake(name.into(), Box::new(writer), reader, None, vocab_expected, timeout)
    }

    fn handshake(
        name: String,
        writer: Box<dyn Write + Send>,
        reader: impl Read + Send + 'static,
        child: Option<Child>,
        vocab_expected: usize,
        timeout: Duration,
    ) -> Result<Self> {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut remote = Self {
            name,
            vocab: vocab_expected,
            eot: 0,
            timeout,
            writer,
            lines: rx,
            child,
        };
        remote.send(&Request::Hello {
            hello: Hello { vocab_expected },
        })?;
        let reply: HelloReply = remote.receive("handshake reply {\"vocab\", \"eot\"}")?;
        if reply.vocab != vocab_expected {
            return Err(Error::Protocol(format!(
                "{}: vocab {} does not match expected {vocab_expected}",
                remote.name, reply.vocab
            )));
        }
        if reply.eot >= reply.vocab {
            return Err(Error::Protocol(format!(
                "{}: eot {} outside vocab {}",
                remote.name, reply.eot, reply.vocab
            )));
        }
        remote.eot = reply.eot;
        Ok(remote)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn send(&mut self, req: &Request) -> Result<()> {
        let mut line = serde_json::to_string(req).map_err(|e| Error::Internal(e.to_string()))?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    fn receive<T: serde::de::DeserializeOwned>(&mut self, expecting: &str) -> Result<T> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Protocol(format!("{}: connection closed", self.name)))
            }
        };
        if let Ok(ErrorReply { error }) = serde_json::from_str(&line) {
            return Err(Error::Forecaster {
                name: self.name.clone(),
                reason: error,
            });
        }
        serde_json::from_str(&line)
            .map_err(|e| Error::Protocol(format!("{}: expected {expecting}: {e}", self.name)))
    }
}

impl Forecaster for RemoteForecaster {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn eot(&self) -> usize {
        self.eot
    }

    fn next_distribution(&mut self, _step: usize, ctx: &[usize]) -> Result<Distribution> {
        self.send(&Request::Step { ctx: ctx.to_vec() })?;
        let reply: StepReply = self.receive("step reply {\"p\"}")?;
        Distribution::with_dim(reply.p, self.vocab)
            .map_err(|e| Error::Protocol(format!("{}: p violates {e}", self.name)))
    }
}

impl Drop for RemoteForecaster {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Answers protocol requests from `input` with `forecaster` until EOF.
///
/// Step requests are numbered in arrival order. Forecaster failures are
/// sent back as `{"error": ...}` and the session continues.
pub fn serve_forecaster<F: Forecaster + ?Sized>(
    forecaster: &mut F,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<()> {
    let mut step = 0usize;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(Request::Hello { .. }) => serde_json::to_string(&HelloReply {
                vocab: forecaster.vocab_size(),
                eot: forecaster.eot(),
            }),
            Ok(Request::Step { ctx }) => {
                let result = forecaster.next_distribution(step, &ctx);
                step += 1;
                match result {
                    Ok(p) => serde_json::to_string(&StepReply { p: p.into_vec() }),
                    Err(e) => serde_json::to_string(&ErrorReply { error: e.to_string() }),
                }
            }
            Err(e) => serde_json::to_string(&ErrorReply {
                error: format!("malformed request: {e}"),
            }),
        }
        .map_err(|e| Error::Internal(e.to_string()))?;
        output.write_all(reply.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
