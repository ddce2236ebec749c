//! Newline-delimited JSON protocol for driving an environment that lives in
//! another process (a real VOS backend, or a [`SimEnv`] behind a pipe).
//!
//! ```text
//! {"cmd":"reset","config":{...}}          -> {"state":{...}}
//! {"cmd":"step","action":k}               -> {"state":{...},"done":b}
//! {"cmd":"observe","mode":"oracle"|"wild"} -> {"quality":[...]}
//! any failure                             -> {"error":"..."}
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Environment, ObservationMode, SimEnv};
use crate::episode::{AgentState, EpisodeConfig, FrameIndex, QualityVector};
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
pub enum Request {
    Reset { config: EpisodeConfig },
    Step { action: usize },
    Observe { mode: ObservationMode },
}

#[derive(Debug, Serialize, Deserialize)]
struct StateReply {
    state: AgentState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    done: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QualityReply {
    quality: QualityVector,
}

#[derive(Debug, Serialize, Deserialize)]
struct ErrorReply {
    error: String,
}

enum Incoming {
    Line(String),
    Closed,
    Failed(String),
}

/// Client side of the protocol; implements [`Environment`].
pub struct ExternalEnv {
    writer: Box<dyn Write + Send>,
    lines: Receiver<Incoming>,
    timeout: Duration,
    child: Option<Child>,
}

impl ExternalEnv {
    pub fn new<R, W>(reader: R, writer: W, timeout: Duration) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let mut line = String::new();
                let msg = match reader.read_line(&mut line) {
                    Ok(0) => Incoming::Closed,
                    Ok(_) => Incoming::Line(line),
                    Err(e) => Incoming::Failed(e.to_string()),
                };
                let stop = !matches!(msg, Incoming::Line(_));
                if tx.send(msg).is_err() || stop {
                    break;
                }
            }
        });
        ExternalEnv {
            writer: Box::new(writer),
            lines: rx,
            timeout,
            child: None,
        }
    }

    /// Spawns `command` and speaks the protocol over its stdin/stdout.
    pub fn spawn(mut command: Command, timeout: Duration) -> Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Transport(format!("failed to spawn backend: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut env = ExternalEnv::new(stdout, stdin, timeout);
        env.child = Some(child);
        Ok(env)
    }

    /// A [`SimEnv`] served on a background thread over an in-process socket pair.
    #[cfg(unix)]
    pub fn loopback(timeout: Duration) -> Result<Self> {
        use std::os::unix::net::UnixStream;
        let (client, server) =
            UnixStream::pair().map_err(|e| Error::Transport(e.to_string()))?;
        let server_read = server
            .try_clone()
            .map_err(|e| Error::Transport(e.to_string()))?;
        thread::spawn(move || {
            let _ = serve_sim_env(BufReader::new(server_read), server);
        });
        let client_read = client
            .try_clone()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(ExternalEnv::new(client_read, client, timeout))
    }

    fn call(&mut self, request: &Request) -> Result<Value> {
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Transport(format!("write failed: {e}")))?;
        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(Incoming::Line(l)) => l,
            Ok(Incoming::Closed) | Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Transport("backend closed the stream".into()))
            }
            Ok(Incoming::Failed(e)) => return Err(Error::Transport(e)),
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::Transport(format!(
                    "no reply within {:?}",
                    self.timeout
                )))
            }
        };
        let trimmed = reply.trim_end_matches(['\r', '\n']);
        let value: Value = serde_json::from_str(trimmed).map_err(|e| Error::Protocol {
            line: trimmed.to_string(),
            message: e.to_string(),
        })?;
        if let Some(msg) = value.get("error") {
            return Err(Error::Remote(
                msg.as_str().map(str::to_string).unwrap_or_else(|| msg.to_string()),
            ));
        }
        Ok(value)
    }

    fn decode<T: for<'de> Deserialize<'de>>(value: Value) -> Result<T> {
        let line = value.to_string();
        serde_json::from_value(value).map_err(|e| Error::Protocol {
            line,
            message: e.to_string(),
        })
    }
}

impl Environment for ExternalEnv {
    fn reset(&mut self, config: &EpisodeConfig) -> Result<AgentState> {
        let v = self.call(&Request::Reset {
            config: config.clone(),
        })?;
        Ok(Self::decode::<StateReply>(v)?.state)
    }

    fn step(&mut self, action: FrameIndex) -> Result<(AgentState, bool)> {
        let v = self.call(&Request::Step { action: action.0 })?;
        let reply: StateReply = Self::decode(v)?;
        let done = reply.done.ok_or_else(|| Error::Protocol {
            line: String::new(),
            message: "step reply lacks \"done\"".into(),
        })?;
        Ok((reply.state, done))
    }

    fn observe(&mut self, mode: ObservationMode) -> Result<QualityVector> {
        let v = self.call(&Request::Observe { mode })?;
        Ok(Self::decode::<QualityReply>(v)?.quality)
    }
}

impl Drop for ExternalEnv {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn handle(env: &mut Option<SimEnv>, line: &str) -> Result<String> {
    let request: Request = serde_json::from_str(line).map_err(|e| Error::Protocol {
        line: line.to_string(),
        message: e.to_string(),
    })?;
    let no_episode = || Error::State("no episode: send reset first".into());
    let reply = match request {
        Request::Reset { config } => {
            let sim = SimEnv::new(config)?;
            let state = sim.state();
            *env = Some(sim);
            serde_json::to_string(&StateReply { state, done: None })?
        }
        Request::Step { action } => {
            let sim = env.as_mut().ok_or_else(no_episode)?;
            let (state, done) = sim.step(FrameIndex(action))?;
            serde_json::to_string(&StateReply {
                state,
                done: Some(done),
            })?
        }
        Request::Observe { mode } => {
            let sim = env.as_ref().ok_or_else(no_episode)?;
            serde_json::to_string(&QualityReply {
                quality: sim.observe_quality(mode),
            })?
        }
    };
    Ok(reply)
}

/// Serves a [`SimEnv`] over the protocol until the input stream ends.
/// Request failures are answered with an error record; the loop continues.
pub fn serve_sim_env<R: BufRead, W: Write>(reader: R, mut writer: W) -> Result<()> {
    let mut env: Option<SimEnv> = None;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::Transport(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle(&mut env, &line).unwrap_or_else(|e| {
            serde_json::to_string(&ErrorReply {
                error: e.to_string(),
            })
            .expect("string serializes")
        });
        writeln!(writer, "{reply}")
            .and_then(|_| writer.flush())
            .map_err(|e| Error::Transport(e.to_string()))?;
    }
    Ok(())
}
