//! Approximators living in another process, spoken to over line-delimited
//! JSON on the child's stdin/stdout.
//!
//! ```text
//! -> {"type":"hello","version":1,"latent_dim":d,"obs_dim":m}
//! <- {"type":"ready","version":1}
//! -> {"type":"approximate","y":[...],"seed":u64}
//! <- {"type":"theta","value":[...]}
//! -> {"type":"bye"}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use gibbs_diag_core::{Approximator, Error};
use rand::RngCore;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Message {
    Hello {
        version: u32,
        latent_dim: usize,
        obs_dim: usize,
    },
    Ready {
        version: u32,
    },
    Approximate {
        y: Vec<f64>,
        seed: u64,
    },
    Theta {
        value: Vec<f64>,
    },
    Bye,
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages serialize");
        s.push('\n');
        s
    }
}

fn backend(msg: impl Into<String>) -> Error {
    Error::Backend(msg.into())
}

/// One subprocess serving one chain.
#[derive(Debug)]
pub struct ExternalApproximator {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    latent_dim: usize,
    obs_dim: usize,
    timeout: Duration,
}

impl ExternalApproximator {
    /// Starts `command` through `sh -c` and performs the handshake.
    pub fn spawn(
        command: &str,
        latent_dim: usize,
        obs_dim: usize,
        timeout: Duration,
    ) -> Result<Self, Error> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| backend(format!("cannot start `{command}`: {e}")))?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        // Blocking reads happen here so requests can time out.
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut me = Self {
            child,
            stdin,
            lines: rx,
            latent_dim,
            obs_dim,
            timeout,
        };
        me.send(&Message::Hello {
            version: PROTOCOL_VERSION,
            latent_dim,
            obs_dim,
        })?;
        match me.receive()? {
            Message::Ready { version } if version == PROTOCOL_VERSION => Ok(me),
            Message::Ready { version } => Err(backend(format!(
                "backend speaks protocol version {version}, expected {PROTOCOL_VERSION}"
            ))),
            other => Err(backend(format!("expected ready, got {other:?}"))),
        }
    }

    fn send(&mut self, msg: &Message) -> Result<(), Error> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| backend("backend stdin closed"))?;
        stdin
            .write_all(msg.to_line().as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| backend(format!("write to backend failed: {e}")))
    }

    fn receive(&mut self) -> Result<Message, Error> {
        loop {
            let line = match self.lines.recv_timeout(self.timeout) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(backend(format!("read from backend failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(backend(format!(
                        "backend timed out after {:?}",
                        self.timeout
                    )))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    let status = self.child.try_wait().ok().flatten();
                    return Err(backend(match status {
                        Some(s) => format!("backend exited ({s})"),
                        None => "backend closed its output".to_string(),
                    }));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return serde_json::from_str(&line)
                .map_err(|e| backend(format!("malformed reply `{line}`: {e}")));
        }
    }

    fn request(&mut self, y: &[f64], seed: u64) -> Result<Vec<f64>, Error> {
        self.send(&Message::Approximate {
            y: y.to_vec(),
            seed,
        })?;
        match self.receive()? {
            Message::Theta { value } => {
                if value.len() != self.latent_dim {
                    return Err(Error::DimensionMismatch {
                        what: "backend θ",
                        expected: self.latent_dim,
                        found: value.len(),
                    });
                }
                if value.iter().any(|v| !v.is_finite()) {
                    return Err(backend("backend returned a non-finite θ"));
                }
                Ok(value)
            }
            other => Err(backend(format!("expected theta, got {other:?}"))),
        }
    }

    /// Sends `bye` and waits briefly for the child; kills it otherwise.
    pub fn shutdown(mut self) {
        self.close();
    }

    fn close(&mut self) {
        if self.stdin.is_some() {
            let _ = self.send(&Message::Bye);
            self.stdin = None;
        }
        for _ in 0..50 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ExternalApproximator {
    fn drop(&mut self) {
        self.close();
    }
}

impl Approximator for ExternalApproximator {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn observation_dim(&self) -> usize {
        self.obs_dim
    }

    fn sample(
        &mut self,
        y: &[f64],
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<f64>>, Error> {
        if y.len() != self.obs_dim {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: self.obs_dim,
                found: y.len(),
            });
        }
        (0..count)
            .map(|_| self.request(y, rng.next_u64()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format() {
        let hello = Message::Hello {
            version: 1,
            latent_dim: 2,
            obs_dim: 3,
        };
        assert_eq!(
            hello.to_line(),
            "{\"type\":\"hello\",\"version\":1,\"latent_dim\":2,\"obs_dim\":3}\n"
        );
        assert_eq!(Message::Bye.to_line(), "{\"type\":\"bye\"}\n");
        let theta: Message = serde_json::from_str(r#"{"type":"theta","value":[1.5]}"#).unwrap();
        assert_eq!(theta, Message::Theta { value: vec![1.5] });
        assert!(serde_json::from_str::<Message>(r#"{"type":"status"}"#).is_err());
        assert!(
            serde_json::from_str::<Message>(r#"{"type":"ready","version":1,"extra":0}"#).is_err()
        );
    }

    #[test]
    fn handshake_failures() {
        let t = Duration::from_secs(5);
        let wrong_version =
            ExternalApproximator::spawn(r#"read l; echo '{"type":"ready","version":2}'"#, 1, 1, t);
        assert!(matches!(wrong_version, Err(Error::Backend(m)) if m.contains("version 2")));
        let garbage = ExternalApproximator::spawn("read l; echo hi", 1, 1, t);
        assert!(matches!(garbage, Err(Error::Backend(m)) if m.contains("malformed")));
        let silent = ExternalApproximator::spawn("sleep 5", 1, 1, Duration::from_millis(200));
        assert!(matches!(silent, Err(Error::Backend(m)) if m.contains("timed out")));
        let gone = ExternalApproximator::spawn("exit 0", 1, 1, t);
        assert!(matches!(gone, Err(Error::Backend(_))));
    }
}
