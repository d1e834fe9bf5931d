//! Client for out-of-process predictors.
//!
//! One JSON request per line, one JSON response per line, over a child
//! process's stdio or a TCP connection:
//!
//! ```text
//! -> {"v":1,"dt":0.25,"horizon":8,"samples":20,"tracks":[[[x,y],...],...]}
//! <- {"v":1,"preds":[[[[x,y],...],...],...]}
//! ```
//!
//! `preds` is indexed pedestrian, sample, step. A reply that does not
//! arrive within the timeout fails with [`PredictError::Timeout`]; the
//! connection is unusable afterwards since the late reply would otherwise
//! be read as the answer to the next request.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use crowdnav_core::predict::{ObservedTracks, PredictError, PredictionSet, Predictor};
use crowdnav_core::Vec2;
use serde::{Deserialize, Serialize};

use crate::config::ExternalPredictorConfig;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub v: u32,
    pub dt: f64,
    pub horizon: usize,
    pub samples: usize,
    pub tracks: Vec<Vec<Vec2>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub v: u32,
    pub preds: Vec<Vec<Vec<Vec2>>>,
}

impl Request {
    pub fn new(tracks: &ObservedTracks, horizon: usize, samples: usize) -> Self {
        Request { v: PROTOCOL_VERSION, dt: tracks.dt(), horizon, samples, tracks: tracks.tracks().to_vec() }
    }
}

/// Checks a decoded response against its request and builds the set.
pub fn decode_response(line: &str, req: &Request) -> Result<PredictionSet, PredictError> {
    let resp: Response = serde_json::from_str(line.trim_end())
        .map_err(|e| PredictError::Malformed(format!("bad response: {e}")))?;
    if resp.v != PROTOCOL_VERSION {
        return Err(PredictError::Malformed(format!("protocol version {} not supported", resp.v)));
    }
    if resp.preds.len() != req.tracks.len() {
        return Err(PredictError::Shape {
            expected: format!("{} pedestrians", req.tracks.len()),
            got: format!("{} pedestrians", resp.preds.len()),
        });
    }
    PredictionSet::from_nested(req.dt, req.samples, req.horizon, &resp.preds)
}

enum Link {
    Child(Child),
    /// Kept to close the socket under the reader thread.
    Tcp(TcpStream),
}

/// Predictor served by another process.
pub struct ExternalPredictor {
    link: Link,
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    samples: usize,
    timeout: Duration,
    broken: Option<String>,
}

fn spawn_reader<R: Read + Send + 'static>(reader: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

impl ExternalPredictor {
    /// Starts `command` and talks to it over stdin/stdout.
    pub fn spawn(command: &[String], samples: usize, timeout: Duration) -> Result<Self, PredictError> {
        let (program, args) = command.split_first().ok_or_else(|| PredictError::Transport("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| PredictError::Transport(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(ExternalPredictor {
            link: Link::Child(child),
            writer: Box::new(stdin),
            lines: spawn_reader(stdout),
            samples,
            timeout,
            broken: None,
        })
    }

    /// Connects to a TCP server at `address`.
    pub fn connect(address: &str, samples: usize, timeout: Duration) -> Result<Self, PredictError> {
        let stream =
            TcpStream::connect(address).map_err(|e| PredictError::Transport(format!("cannot connect to {address}: {e}")))?;
        let reader = stream.try_clone().map_err(|e| PredictError::Transport(e.to_string()))?;
        let handle = stream.try_clone().map_err(|e| PredictError::Transport(e.to_string()))?;
        Ok(ExternalPredictor {
            link: Link::Tcp(handle),
            writer: Box::new(stream),
            lines: spawn_reader(reader),
            samples,
            timeout,
            broken: None,
        })
    }

    pub fn from_config(cfg: &ExternalPredictorConfig, samples: usize) -> Result<Self, PredictError> {
        if !cfg.command.is_empty() {
            ExternalPredictor::spawn(&cfg.command, samples, cfg.timeout())
        } else if let Some(addr) = &cfg.address {
            ExternalPredictor::connect(addr, samples, cfg.timeout())
        } else {
            Err(PredictError::Transport("external predictor needs a command or an address".into()))
        }
    }

    fn exchange(&mut self, req: &Request) -> Result<String, PredictError> {
        if let Some(why) = &self.broken {
            return Err(PredictError::Transport(format!("connection unusable: {why}")));
        }
        let mut line = serde_json::to_string(req).expect("request serialises");
        line.push('\n');
        let sent = self.writer.write_all(line.as_bytes()).and_then(|_| self.writer.flush());
        if let Err(e) = sent {
            self.broken = Some(e.to_string());
            return Err(PredictError::Transport(format!("send failed: {e}")));
        }
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(e)) => {
                self.broken = Some(e.to_string());
                Err(PredictError::Transport(format!("receive failed: {e}")))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.broken = Some("timed out".into());
                Err(PredictError::Timeout)
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = Some("closed".into());
                Err(PredictError::Transport("predictor closed the connection".into()))
            }
        }
    }
}

impl Predictor for ExternalPredictor {
    fn predict(&mut self, tracks: &ObservedTracks, horizon: usize, _seed: u64) -> Result<PredictionSet, PredictError> {
        let req = Request::new(tracks, horizon, self.samples);
        let reply = self.exchange(&req)?;
        decode_response(&reply, &req)
    }
}

impl Drop for ExternalPredictor {
    fn drop(&mut self) {
        match &mut self.link {
            Link::Child(child) => {
                let _ = child.kill();
                let _ = child.wait();
            }
            Link::Tcp(stream) => {
                let _ = stream.shutdown(std::net::Shutdown::Both);
            }
        }
    }
}

/// Options of the reference server.
#[derive(Clone, Debug, Default)]
pub struct ServeOptions {
    /// Sleep before every reply.
    pub delay: Duration,
    /// Reply with this many samples regardless of the request.
    pub force_samples: Option<usize>,
}

/// Answers requests with constant-velocity predictions, replicated to the
/// requested sample count. Returns when `input` closes.
pub fn serve_cvm<R: BufRead, W: Write>(input: R, mut output: W, opts: &ServeOptions) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = serde_json::from_str(&line).map_err(std::io::Error::other)?;
        let tracks = ObservedTracks::new(req.dt, req.tracks.clone()).map_err(std::io::Error::other)?;
        let cvm = crowdnav_core::predict::predict_cvm(&tracks, req.horizon);
        let samples = opts.force_samples.unwrap_or(req.samples);
        let preds: Vec<Vec<Vec<Vec2>>> = (0..tracks.num_pedestrians())
            .map(|i| (0..samples).map(|_| cvm.trajectory(i, 0).to_vec()).collect())
            .collect();
        if !opts.delay.is_zero() {
            std::thread::sleep(opts.delay);
        }
        let mut out = serde_json::to_string(&Response { v: PROTOCOL_VERSION, preds }).map_err(std::io::Error::other)?;
        out.push('\n');
        output.write_all(out.as_bytes())?;
        output.flush()?;
    }
    Ok(())
}
