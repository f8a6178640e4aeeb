//! Client side of the newline-delimited JSON adapter protocol.
//!
//! Requests carry an integer `id`; responses may come back in any order and
//! are matched by id. A session owns one child process and restarts it once
//! after a protocol fault. A second fault is fatal.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::detect::{ChuteDetector, DetectError, Detection, DetectionClass};
use crate::frame::Frame;
use crate::geometry::RotatedBox;
use crate::slump::{ClassDistribution, ClipClassifier, ClipWindow, SlumpError, NUM_BINS};

/// Most stderr bytes kept from an adapter.
const STDERR_TAIL: usize = 16 * 1024;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("adapter closed its output")]
    Closed,
    #[error("malformed response line: {0}")]
    Malformed(String),
    #[error("response for unknown request id {0}")]
    UnexpectedId(u64),
    #[error("adapter reported an error for request {id}: {message}")]
    Remote { id: u64, message: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
#[error("{message}{}", stderr_suffix(.stderr))]
pub struct AdapterError {
    pub message: String,
    pub stderr: String,
}

fn stderr_suffix(s: &str) -> String {
    if s.trim().is_empty() {
        String::new()
    } else {
        format!("; adapter stderr: {}", s.trim_end())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Ping,
    Detect { width: u32, height: u32, pixels: Vec<u8> },
    Classify { width: u32, height: u32, frames: Vec<Vec<u8>> },
}

#[derive(Serialize)]
struct PingWire {
    id: u64,
    op: &'static str,
}

#[derive(Serialize)]
struct DetectWire<'a> {
    id: u64,
    op: &'static str,
    width: u32,
    height: u32,
    pixels_b64: &'a str,
}

#[derive(Serialize)]
struct ClassifyWire<'a> {
    id: u64,
    op: &'static str,
    n: usize,
    width: u32,
    height: u32,
    frames_b64: &'a [String],
}

/// Encodes a request as one JSON line without the trailing newline.
pub fn encode_request(id: u64, req: &Request) -> String {
    let out = match req {
        Request::Ping => serde_json::to_string(&PingWire { id, op: "ping" }),
        Request::Detect { width, height, pixels } => {
            let b64 = B64.encode(pixels);
            serde_json::to_string(&DetectWire { id, op: "detect", width: *width, height: *height, pixels_b64: &b64 })
        }
        Request::Classify { width, height, frames } => {
            let encoded: Vec<String> = frames.iter().map(|f| B64.encode(f)).collect();
            serde_json::to_string(&ClassifyWire {
                id,
                op: "classify",
                n: frames.len(),
                width: *width,
                height: *height,
                frames_b64: &encoded,
            })
        }
    };
    out.expect("requests always serialize")
}

/// A detection as it appears on the wire; `frame` is optional there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireDetection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<u64>,
    pub cls: DetectionClass,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta_deg: f64,
    pub conf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectResponse {
    pub id: u64,
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyResponse {
    pub id: u64,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PingResponse {
    pub id: u64,
    pub ready: bool,
    pub window: usize,
}

/// Request/response matching over any line-oriented byte streams.
pub struct ProtocolClient<R, W> {
    reader: R,
    writer: W,
    next_id: u64,
    window: usize,
    in_flight: BTreeSet<u64>,
    stash: HashMap<u64, Value>,
}

impl<R: BufRead, W: Write> ProtocolClient<R, W> {
    /// `window` bounds the requests in flight; ids start at 1.
    pub fn new(reader: R, writer: W, window: usize) -> Self {
        Self { reader, writer, next_id: 1, window: window.max(1), in_flight: BTreeSet::new(), stash: HashMap::new() }
    }

    pub fn writer(&self) -> &W {
        &self.writer
    }

    pub fn submit(&mut self, req: &Request) -> Result<u64, ProtocolError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = encode_request(id, req);
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        self.in_flight.insert(id);
        Ok(id)
    }

    fn read_one(&mut self) -> Result<(), ProtocolError> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(ProtocolError::Closed);
        }
        let value: Value = serde_json::from_str(line.trim_end()).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let id = value
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| ProtocolError::Malformed("missing integer id".into()))?;
        if !self.in_flight.remove(&id) {
            return Err(ProtocolError::UnexpectedId(id));
        }
        if let Some(err) = value.get("error") {
            let message = err.as_str().map(str::to_string).unwrap_or_else(|| err.to_string());
            return Err(ProtocolError::Remote { id, message });
        }
        self.stash.insert(id, value);
        Ok(())
    }

    /// Waits for the response to `id`, stashing others that arrive first.
    pub fn receive(&mut self, id: u64) -> Result<Value, ProtocolError> {
        loop {
            if let Some(v) = self.stash.remove(&id) {
                return Ok(v);
            }
            if !self.in_flight.contains(&id) {
                return Err(ProtocolError::UnexpectedId(id));
            }
            self.read_one()?;
        }
    }

    /// Sends all requests, keeping at most `window` in flight, and returns
    /// the responses in request order.
    pub fn call_many(&mut self, reqs: &[Request]) -> Result<Vec<Value>, ProtocolError> {
        let mut ids = Vec::with_capacity(reqs.len());
        let mut out = Vec::with_capacity(reqs.len());
        let mut next_wait = 0;
        for req in reqs {
            if self.in_flight.len() >= self.window {
                out.push(self.receive(ids[next_wait])?);
                next_wait += 1;
            }
            ids.push(self.submit(req)?);
        }
        for &id in &ids[next_wait..] {
            out.push(self.receive(id)?);
        }
        Ok(out)
    }

    pub fn call(&mut self, req: &Request) -> Result<Value, ProtocolError> {
        Ok(self.call_many(std::slice::from_ref(req))?.remove(0))
    }
}

struct AdapterProcess {
    child: Child,
    client: ProtocolClient<BufReader<ChildStdout>, ChildStdin>,
    stderr: Arc<Mutex<Vec<u8>>>,
    drain: Option<JoinHandle<()>>,
}

impl AdapterProcess {
    fn spawn(command: &[String], window: usize) -> io::Result<Self> {
        let (prog, args) = command
            .split_first()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty adapter command"))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        let mut err_pipe = child.stderr.take().expect("piped");
        let stderr = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&stderr);
        let drain = std::thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = err_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut s = sink.lock().expect("stderr buffer");
                s.extend_from_slice(&buf[..n]);
                if s.len() > STDERR_TAIL {
                    let cut = s.len() - STDERR_TAIL;
                    s.drain(..cut);
                }
            }
        });
        Ok(Self {
            child,
            client: ProtocolClient::new(BufReader::new(stdout), stdin, window),
            stderr,
            drain: Some(drain),
        })
    }

    /// Kills the child and returns whatever it wrote to stderr.
    fn shutdown(mut self) -> String {
        let _ = self.child.kill();
        let _ = self.child.wait();
        if let Some(h) = self.drain.take() {
            let _ = h.join();
        }
        let bytes = self.stderr.lock().map(|b| b.clone()).unwrap_or_default();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

impl Drop for AdapterProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A child-process adapter with the one-restart policy.
pub struct AdapterSession {
    command: Vec<String>,
    window: usize,
    process: Option<AdapterProcess>,
    restarts_left: u32,
    faults: Vec<String>,
}

impl AdapterSession {
    pub fn new(command: Vec<String>, window: usize) -> Self {
        Self { command, window, process: None, restarts_left: 1, faults: Vec::new() }
    }

    fn ensure_started(&mut self) -> Result<&mut AdapterProcess, AdapterError> {
        if self.process.is_none() {
            let p = AdapterProcess::spawn(&self.command, self.window).map_err(|e| AdapterError {
                message: format!("cannot start adapter {:?}: {e}", self.command),
                stderr: String::new(),
            })?;
            self.process = Some(p);
        }
        Ok(self.process.as_mut().expect("just started"))
    }

    pub fn call_many(&mut self, reqs: &[Request]) -> Result<Vec<Value>, AdapterError> {
        loop {
            let result = self.ensure_started()?.client.call_many(reqs);
            match result {
                Ok(v) => return Ok(v),
                Err(e) => {
                    let stderr = self.process.take().map(AdapterProcess::shutdown).unwrap_or_default();
                    if self.restarts_left == 0 {
                        return Err(AdapterError { message: e.to_string(), stderr });
                    }
                    self.restarts_left -= 1;
                    self.faults.push(format!("{e}; restarting adapter{}", stderr_suffix(&stderr)));
                }
            }
        }
    }

    pub fn take_faults(&mut self) -> Vec<String> {
        std::mem::take(&mut self.faults)
    }
}

fn decode<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, String> {
    serde_json::from_value(v).map_err(|e| format!("bad response: {e}"))
}

/// Converts a wire detection to a pipeline detection on `frame_index`.
pub fn wire_to_detection(d: &WireDetection, frame_index: u64) -> Result<Detection, String> {
    let bbox = RotatedBox::new(d.cx, d.cy, d.w, d.h, d.theta_deg).map_err(|e| e.to_string())?;
    if !(0.0..=1.0).contains(&d.conf) {
        return Err(format!("confidence {} outside [0, 1]", d.conf));
    }
    Ok(Detection { bbox, cls: d.cls, confidence: d.conf, frame_index })
}

/// Normalizes adapter probabilities into a distribution.
pub fn probs_to_distribution(p: &[f64]) -> Result<ClassDistribution, String> {
    if p.len() != NUM_BINS {
        return Err(format!("expected {NUM_BINS} probabilities, got {}", p.len()));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err("probabilities must be finite and non-negative".into());
    }
    let sum: f64 = p.iter().sum();
    if sum <= 0.0 {
        return Err("probabilities sum to zero".into());
    }
    let normalized: Vec<f64> = p.iter().map(|x| x / sum).collect();
    ClassDistribution::from_slice(&normalized).map_err(|e| e.to_string())
}

pub struct AdapterDetector {
    session: AdapterSession,
}

impl AdapterDetector {
    pub fn new(session: AdapterSession) -> Self {
        Self { session }
    }
}

impl ChuteDetector for AdapterDetector {
    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, DetectError> {
        let req = Request::Detect { width: frame.width(), height: frame.height(), pixels: frame.to_u8() };
        let v = self.session.call_many(&[req]).map_err(|e| DetectError::Adapter(e.to_string()))?;
        let resp: DetectResponse =
            decode(v.into_iter().next().expect("one response")).map_err(DetectError::Adapter)?;
        resp.detections
            .iter()
            .map(|d| wire_to_detection(d, frame.index()).map_err(DetectError::Adapter))
            .collect()
    }

    fn take_faults(&mut self) -> Vec<String> {
        self.session.take_faults()
    }
}

pub struct AdapterClassifier {
    session: AdapterSession,
}

impl AdapterClassifier {
    pub fn new(session: AdapterSession) -> Self {
        Self { session }
    }
}

fn clip_request(clip: &ClipWindow) -> Request {
    let (width, height) = clip.frames.first().map(|f| (f.width(), f.height())).unwrap_or((0, 0));
    Request::Classify { width, height, frames: clip.frames.iter().map(Frame::to_u8).collect() }
}

impl ClipClassifier for AdapterClassifier {
    fn classify(&mut self, clip: &ClipWindow) -> Result<ClassDistribution, SlumpError> {
        Ok(self.classify_batch(std::slice::from_ref(clip))?.remove(0))
    }

    fn classify_batch(&mut self, clips: &[ClipWindow]) -> Result<Vec<ClassDistribution>, SlumpError> {
        let reqs: Vec<Request> = clips.iter().map(clip_request).collect();
        let values = self.session.call_many(&reqs).map_err(|e| SlumpError::Adapter(e.to_string()))?;
        values
            .into_iter()
            .map(|v| {
                let r: ClassifyResponse = decode(v).map_err(SlumpError::Adapter)?;
                probs_to_distribution(&r.probs).map_err(SlumpError::Adapter)
            })
            .collect()
    }

    fn take_faults(&mut self) -> Vec<String> {
        self.session.take_faults()
    }
}
