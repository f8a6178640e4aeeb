//! JSON Lines event log.
//!
//! Every line is one object whose first keys are `seq`, `type` and `frame`.
//! Reading back rejects unknown fields.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::detect::{DetectionRecord, Side};
use crate::geometry::{RotatedBox, UprightRect};
use crate::optflow::FlowStatus;
use crate::slump::{SlumpBin, VerdictStatus, NUM_BINS};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: seq {seq} does not follow {prev}")]
    Sequence { line: usize, seq: u64, prev: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    Detections {
        frame: u64,
        detections: Vec<DetectionRecord>,
    },
    RoiLocked {
        frame: u64,
        side: Side,
        #[serde(rename = "box")]
        bbox: RotatedBox,
        crop: UprightRect,
        contributing: u32,
        /// Signed distance of the seed point to the tracked edge.
        d_seed: f64,
    },
    FlowSample {
        frame: u64,
        side: Side,
        status: Option<FlowStatus>,
        u: f64,
        v: f64,
        x: f64,
        y: f64,
        d: f64,
        reseeded: bool,
    },
    Drop {
        frame: u64,
        side: Side,
        d_t: f64,
        d_prev: f64,
        x: f64,
        y: f64,
    },
    Prediction {
        frame: u64,
        side: Side,
        clip: u32,
        start_frame: u64,
        probs: [f64; NUM_BINS],
        predicted: SlumpBin,
    },
    Verdict {
        frame: u64,
        side: Side,
        status: VerdictStatus,
        predicted: SlumpBin,
        ordered: SlumpBin,
        votes: [u32; NUM_BINS],
        t_drop: u64,
        clips: u32,
    },
    AdapterFault {
        frame: u64,
        role: String,
        message: String,
    },
}

impl EventKind {
    pub fn frame(&self) -> u64 {
        match self {
            EventKind::Detections { frame, .. }
            | EventKind::RoiLocked { frame, .. }
            | EventKind::FlowSample { frame, .. }
            | EventKind::Drop { frame, .. }
            | EventKind::Prediction { frame, .. }
            | EventKind::Verdict { frame, .. }
            | EventKind::AdapterFault { frame, .. } => *frame,
        }
    }

    pub fn side(&self) -> Option<Side> {
        match self {
            EventKind::RoiLocked { side, .. }
            | EventKind::FlowSample { side, .. }
            | EventKind::Drop { side, .. }
            | EventKind::Prediction { side, .. }
            | EventKind::Verdict { side, .. } => Some(*side),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            EventKind::Detections { .. } => "detections",
            EventKind::RoiLocked { .. } => "roi_locked",
            EventKind::FlowSample { .. } => "flow_sample",
            EventKind::Drop { .. } => "drop",
            EventKind::Prediction { .. } => "prediction",
            EventKind::Verdict { .. } => "verdict",
            EventKind::AdapterFault { .. } => "adapter_fault",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineEvent {
    pub seq: u64,
    pub kind: EventKind,
}

impl PipelineEvent {
    pub fn to_json(&self) -> String {
        let body = serde_json::to_value(&self.kind).expect("events always serialize");
        let Value::Object(fields) = body else {
            unreachable!("internally tagged enums serialize to objects");
        };
        let mut obj = Map::with_capacity(fields.len() + 1);
        obj.insert("seq".into(), Value::from(self.seq));
        obj.extend(fields);
        Value::Object(obj).to_string()
    }

    pub fn from_json(line: &str) -> Result<Self, String> {
        let mut obj: Map<String, Value> = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let seq = obj.remove("seq").and_then(|v| v.as_u64()).ok_or("missing or invalid seq")?;
        let kind = serde_json::from_value(Value::Object(obj)).map_err(|e| e.to_string())?;
        Ok(Self { seq, kind })
    }
}

/// Assigns sequence numbers and writes one flushed line per event.
pub struct EventLog<W: Write> {
    out: W,
    next_seq: u64,
    kept: Vec<PipelineEvent>,
    keep: bool,
}

impl<W: Write> EventLog<W> {
    pub fn new(out: W) -> Self {
        Self { out, next_seq: 0, kept: Vec::new(), keep: true }
    }

    /// Stop retaining written events in memory.
    pub fn discard_history(mut self) -> Self {
        self.keep = false;
        self
    }

    pub fn emit(&mut self, kind: EventKind) -> io::Result<()> {
        let ev = PipelineEvent { seq: self.next_seq, kind };
        self.next_seq += 1;
        self.out.write_all(ev.to_json().as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        if self.keep {
            self.kept.push(ev);
        }
        Ok(())
    }

    pub fn events(&self) -> &[PipelineEvent] {
        &self.kept
    }

    pub fn into_parts(self) -> (W, Vec<PipelineEvent>) {
        (self.out, self.kept)
    }
}

/// Parses a log, checking that `seq` strictly increases.
pub fn read_log(reader: impl BufRead) -> Result<Vec<PipelineEvent>, LogError> {
    let mut out: Vec<PipelineEvent> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = PipelineEvent::from_json(&line).map_err(|msg| LogError::Parse { line: i + 1, msg })?;
        if let Some(prev) = out.last() {
            if ev.seq <= prev.seq {
                return Err(LogError::Sequence { line: i + 1, seq: ev.seq, prev: prev.seq });
            }
        }
        out.push(ev);
    }
    Ok(out)
}
