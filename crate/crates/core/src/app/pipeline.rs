//! The three-stage run: lock chutes, watch for the drop, classify the pour.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::Path;
use std::sync::mpsc::sync_channel;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::detect::{
    crop_chute, ChuteDetector, DetectError, DetectionClass, DetectionRecord, FileDetector, OracleDetector, RoiLock,
    RoiStabilizer, Side,
};
use crate::frame::{Frame, FrameError};
use crate::placement::{edge_for, DropEvent, PlacementError, PlacementTracker};
use crate::sim::{truth as scene_truth, SceneSpec, SceneTruth};
use crate::slump::{
    majority_vote, verdict, ClassDistribution, ClipClassifier, ClipWindow, SlumpError, SlumpOrder, StubClassifier,
    Verdict, VerdictStatus,
};

use super::adapter::{AdapterClassifier, AdapterDetector, AdapterSession};
use super::config::{ConfigError, PipelineConfig};
use super::events::{EventKind, EventLog, PipelineEvent};
use super::io::{read_frames, FrameStream, InputError};

pub const EXIT_ACCEPTABLE: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ABNORMAL: i32 = 3;
pub const EXIT_UNRESOLVED: i32 = 4;

/// Frames buffered between the reader thread and the tracker.
pub const INGEST_DEPTH: usize = 4;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("adapter error: {0}")]
    Adapter(String),
    #[error("cannot write event log: {0}")]
    Log(#[from] io::Error),
    #[error(transparent)]
    Detect(DetectError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Slump(SlumpError),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => EXIT_USAGE,
            _ => EXIT_INPUT,
        }
    }
}

impl From<DetectError> for AppError {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::Adapter(m) => AppError::Adapter(m),
            other => AppError::Detect(other),
        }
    }
}

impl From<SlumpError> for AppError {
    fn from(e: SlumpError) -> Self {
        match e {
            SlumpError::Adapter(m) => AppError::Adapter(m),
            other => AppError::Slump(other),
        }
    }
}

impl From<FrameError> for AppError {
    fn from(e: FrameError) -> Self {
        AppError::Input(InputError::Frame(e))
    }
}

/// Left/right halves of a side-by-side stereo frame.
pub fn stereo_split(frame: &Frame) -> Result<(Frame, Frame), FrameError> {
    frame.split_halves()
}

/// Reads a truth file, or derives truth from a scene spec.
pub fn load_truth(path: &Path) -> Result<SceneTruth, InputError> {
    let text = std::fs::read_to_string(path)?;
    match serde_json::from_str::<SceneTruth>(&text) {
        Ok(t) => Ok(t),
        Err(truth_err) => match serde_json::from_str::<SceneSpec>(&text) {
            Ok(spec) => Ok(scene_truth(&spec)),
            Err(_) => Err(InputError::SceneJson(truth_err)),
        },
    }
}

pub fn build_detector(cfg: &PipelineConfig) -> Result<Box<dyn ChuteDetector>, AppError> {
    let d = &cfg.detector;
    if let Some(p) = &d.oracle {
        return Ok(Box::new(OracleDetector::new(load_truth(p)?)));
    }
    if let Some(p) = &d.file {
        return Ok(Box::new(FileDetector::open(p).map_err(|e| match e {
            DetectError::Io(io) => AppError::Input(InputError::Io(io)),
            other => AppError::Detect(other),
        })?));
    }
    if let Some(cmd) = &d.adapter {
        return Ok(Box::new(AdapterDetector::new(AdapterSession::new(cmd.clone(), cfg.adapter_window))));
    }
    Err(ConfigError::Invalid("no detector configured".into()).into())
}

pub fn build_classifier(cfg: &PipelineConfig) -> Result<Box<dyn ClipClassifier>, AppError> {
    let c = &cfg.classifier;
    if let Some(bin) = c.stub_bin {
        return Ok(Box::new(StubClassifier::fixed(bin)));
    }
    if let Some(p) = &c.stub_probs {
        let dist = ClassDistribution::from_slice(p).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        return Ok(Box::new(StubClassifier::new(dist)));
    }
    if let Some(p) = &c.truth {
        let t = load_truth(p)?;
        let bin = t
            .slump_bin
            .ok_or_else(|| ConfigError::Invalid(format!("{} carries no slump bin", p.display())))?;
        return Ok(Box::new(StubClassifier::fixed(bin)));
    }
    if let Some(cmd) = &c.adapter {
        return Ok(Box::new(AdapterClassifier::new(AdapterSession::new(cmd.clone(), cfg.adapter_window))));
    }
    Err(ConfigError::Invalid("no classifier configured".into()).into())
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub frames: u64,
    pub locks: Vec<RoiLock>,
    pub drops: Vec<DropEvent>,
    pub verdicts: Vec<(Side, Verdict)>,
    pub events: Vec<PipelineEvent>,
    /// Per-frame processing time, excluding ingestion and detector/classifier calls.
    pub frame_overhead: Vec<Duration>,
}

impl RunOutcome {
    pub fn median_overhead(&self) -> Option<Duration> {
        let mut v = self.frame_overhead.clone();
        if v.is_empty() {
            return None;
        }
        v.sort();
        Some(v[v.len() / 2])
    }
}

/// Clip collection for one side after its drop.
struct ClipState {
    lock: RoiLock,
    t_drop: u64,
    buffer: Vec<Frame>,
    dists: Vec<ClassDistribution>,
    verdict: Option<Verdict>,
}

impl ClipState {
    fn clip_start(&self, i: usize, hop: usize) -> u64 {
        self.t_drop + (i * hop) as u64
    }
}

struct Stages<'a, W: Write> {
    cfg: &'a PipelineConfig,
    order: SlumpOrder,
    log: EventLog<W>,
    roi: Option<RoiStabilizer>,
    tracker: PlacementTracker,
    clips: [Option<ClipState>; 2],
    locks: Vec<RoiLock>,
    drops: Vec<DropEvent>,
    excluded: Duration,
}

impl<W: Write> Stages<'_, W> {
    fn faults(&mut self, frame: u64, role: &str, notes: Vec<String>) -> io::Result<()> {
        for message in notes {
            self.log.emit(EventKind::AdapterFault { frame, role: role.into(), message })?;
        }
        Ok(())
    }

    fn fatal_adapter(&mut self, frame: u64, role: &str, err: AppError) -> AppError {
        if let AppError::Adapter(m) = &err {
            let _ = self.log.emit(EventKind::AdapterFault { frame, role: role.into(), message: m.clone() });
        }
        err
    }

    fn detect_and_lock(&mut self, frame: &Frame, detector: &mut dyn ChuteDetector) -> Result<(), AppError> {
        let t = frame.index();
        let Some(roi) = self.roi.as_ref() else {
            return Ok(());
        };
        if roi.all_locked() {
            return Ok(());
        }
        let started = Instant::now();
        let result = detector.detect(frame);
        self.excluded += started.elapsed();
        let notes = detector.take_faults();
        self.faults(t, "detector", notes)?;
        let dets = result.map_err(|e| self.fatal_adapter(t, "detector", e.into()))?;
        self.log.emit(EventKind::Detections {
            frame: t,
            detections: dets.iter().map(DetectionRecord::from_detection).collect(),
        })?;
        let roi = self.roi.as_mut().expect("checked above");
        for lock in roi.roi_step(t, &dets) {
            self.tracker.arm(lock, t);
            let d_seed = edge_for(&lock, self.cfg.placement.offset).side_distance(lock.bbox.center());
            self.log.emit(EventKind::RoiLocked {
                frame: t,
                side: lock.side,
                bbox: lock.bbox,
                crop: lock.crop,
                contributing: lock.contributing,
                d_seed,
            })?;
            self.locks.push(lock);
        }
        Ok(())
    }

    fn track(&mut self, prev: &Frame, curr: &Frame) -> Result<(), AppError> {
        for s in self.tracker.step(prev, curr)? {
            let flow = s.flow.map(|f| f.flow).unwrap_or_default();
            self.log.emit(EventKind::FlowSample {
                frame: s.frame,
                side: s.side,
                status: s.flow.map(|f| f.status),
                u: flow.u,
                v: flow.v,
                x: s.point.x,
                y: s.point.y,
                d: s.d,
                reseeded: s.reseeded,
            })?;
            if let Some(e) = s.event {
                self.log.emit(EventKind::Drop {
                    frame: e.frame,
                    side: e.side,
                    d_t: e.d_t,
                    d_prev: e.d_prev,
                    x: e.point.x,
                    y: e.point.y,
                })?;
                self.drops.push(e);
                let lock = *self.locks.iter().find(|l| l.side == e.side).expect("drops come from locked sides");
                self.clips[e.side.slot()] =
                    Some(ClipState { lock, t_drop: e.frame, buffer: Vec::new(), dists: Vec::new(), verdict: None });
            }
        }
        Ok(())
    }

    /// Buffers crops of dropped sides and classifies every clip that becomes complete.
    fn collect_clips(&mut self, frame: &Frame, classifier: &mut dyn ClipClassifier) -> Result<(), AppError> {
        let p = self.cfg.slump;
        let t = frame.index();
        for side in Side::BOTH {
            let Some(state) = self.clips[side.slot()].as_mut() else {
                continue;
            };
            if state.verdict.is_some() || state.dists.len() >= p.clips {
                continue;
            }
            state.buffer.push(crop_chute(frame, &state.lock)?);
            let i = state.dists.len();
            let start = state.clip_start(i, p.hop);
            if t != start + ((p.clip_frames - 1) * p.stride) as u64 {
                continue;
            }
            let clip = extract_from(&state.buffer, side, start, p.clip_frames, p.stride)?;
            let started = Instant::now();
            let result = classifier.classify(&clip);
            self.excluded += started.elapsed();
            let notes = classifier.take_faults();
            self.faults(t, "classifier", notes)?;
            let dist = result.map_err(|e| self.fatal_adapter(t, "classifier", e.into()))?;
            let state = self.clips[side.slot()].as_mut().expect("present");
            state.dists.push(dist);
            self.log.emit(EventKind::Prediction {
                frame: t,
                side,
                clip: i as u32,
                start_frame: start,
                probs: *dist.probs(),
                predicted: dist.argmax(),
            })?;
            if state.dists.len() == p.clips {
                self.decide(side, t)?;
            }
        }
        Ok(())
    }

    fn decide(&mut self, side: Side, frame: u64) -> io::Result<()> {
        let order = self.order;
        let state = self.clips[side.slot()].as_mut().expect("present");
        let vote = majority_vote(&state.dists);
        let v = verdict(vote.winner, order, state.t_drop, vote.votes);
        state.verdict = Some(v);
        state.buffer.clear();
        self.log.emit(EventKind::Verdict {
            frame,
            side,
            status: v.status,
            predicted: v.predicted,
            ordered: order.ordered_bin,
            votes: v.votes,
            t_drop: v.t_drop,
            clips: state.dists.len() as u32,
        })
    }

    /// At end of stream, vote over whatever complete clips exist.
    fn finish(&mut self, last_frame: u64) -> io::Result<()> {
        for side in Side::BOTH {
            let pending = matches!(&self.clips[side.slot()], Some(s) if s.verdict.is_none() && !s.dists.is_empty());
            if pending {
                self.decide(side, last_frame)?;
            }
        }
        Ok(())
    }

    fn exit_code(&self) -> i32 {
        let verdicts: Vec<&Verdict> = self.clips.iter().flatten().filter_map(|c| c.verdict.as_ref()).collect();
        if verdicts.iter().any(|v| v.status == VerdictStatus::Abnormal) {
            return EXIT_ABNORMAL;
        }
        let all_locked = self.roi.as_ref().is_some_and(|r| r.all_locked());
        let unresolved_drop = self.clips.iter().flatten().any(|c| c.verdict.is_none());
        if !all_locked || verdicts.is_empty() || unresolved_drop {
            return EXIT_UNRESOLVED;
        }
        EXIT_ACCEPTABLE
    }
}

fn extract_from(buffer: &[Frame], side: Side, start: u64, count: usize, stride: usize) -> Result<ClipWindow, SlumpError> {
    crate::slump::extract_clip(buffer, side, start, count, stride)
}

/// Runs the pipeline over an already opened frame stream.
pub fn run_stream<W: Write>(
    cfg: &PipelineConfig,
    frames: FrameStream,
    detector: &mut dyn ChuteDetector,
    classifier: &mut dyn ClipClassifier,
    out: W,
) -> Result<RunOutcome, AppError> {
    let order = SlumpOrder {
        ordered_bin: cfg.slump.ordered_bin.ok_or_else(|| ConfigError::Invalid("slump.ordered_bin is required".into()))?,
    };
    let (tx, rx) = sync_channel::<Result<Frame, InputError>>(INGEST_DEPTH);
    let reader = std::thread::spawn(move || {
        for item in frames {
            let stop = item.is_err();
            if tx.send(item).is_err() || stop {
                break;
            }
        }
    });

    let mut st = Stages {
        cfg,
        order,
        log: EventLog::new(out),
        roi: None,
        tracker: PlacementTracker::new(cfg.placement, cfg.flow),
        clips: [None, None],
        locks: Vec::new(),
        drops: Vec::new(),
        excluded: Duration::ZERO,
    };
    let mut overhead = Vec::new();
    let mut prev: Option<Frame> = None;
    let mut count = 0u64;
    let mut failure = None;

    for item in rx.iter() {
        let raw = match item {
            Ok(f) => f,
            Err(e) => {
                failure = Some(AppError::Input(e));
                break;
            }
        };
        let started = Instant::now();
        st.excluded = Duration::ZERO;
        let step = (|| -> Result<Frame, AppError> {
            let frame = if cfg.stereo_split {
                let (l, r) = stereo_split(&raw)?;
                match cfg.stereo_view {
                    Side::Left => l,
                    Side::Right => r,
                }
            } else {
                raw
            };
            if st.roi.is_none() {
                st.roi = Some(RoiStabilizer::new(cfg.roi, frame.width(), frame.height()));
            }
            if let Some(p) = &prev {
                st.track(p, &frame)?;
            }
            st.detect_and_lock(&frame, detector)?;
            st.collect_clips(&frame, classifier)?;
            Ok(frame)
        })();
        match step {
            Ok(frame) => {
                overhead.push(started.elapsed().saturating_sub(st.excluded));
                count += 1;
                prev = Some(frame);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    drop(rx);
    let _ = reader.join();
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(p) = &prev {
        st.finish(p.index())?;
    }

    let exit_code = st.exit_code();
    let verdicts = Side::BOTH
        .into_iter()
        .filter_map(|s| st.clips[s.slot()].as_ref().and_then(|c| c.verdict).map(|v| (s, v)))
        .collect();
    let (_, events) = st.log.into_parts();
    Ok(RunOutcome {
        exit_code,
        frames: count,
        locks: st.locks,
        drops: st.drops,
        verdicts,
        events,
        frame_overhead: overhead,
    })
}

/// Opens everything named by `cfg` and runs the pipeline, logging to `out`.
pub fn run_pipeline<W: Write>(cfg: &PipelineConfig, out: W) -> Result<RunOutcome, AppError> {
    cfg.validate()?;
    let input = cfg.input.as_deref().expect("validated");
    let frames = read_frames(input, cfg.input_format()?)?;
    let mut detector = build_detector(cfg)?;
    let mut classifier = build_classifier(cfg)?;
    run_stream(cfg, frames, detector.as_mut(), classifier.as_mut(), out)
}

/// Runs with the log going to `cfg.output`, or stdout when unset.
pub fn run_to_configured_output(cfg: &PipelineConfig) -> Result<RunOutcome, AppError> {
    match &cfg.output {
        Some(p) => run_pipeline(cfg, io::BufWriter::new(File::create(p)?)),
        None => run_pipeline(cfg, io::stdout().lock()),
    }
}

/// Reads an event log from disk.
pub fn load_log(path: &Path) -> Result<Vec<PipelineEvent>, AppError> {
    let f = File::open(path).map_err(InputError::Io)?;
    super::events::read_log(BufReader::new(f)).map_err(|e| AppError::Input(InputError::Format { offset: 0, msg: e.to_string() }))
}

/// Chute-class detections from a log's `detections` events.
pub fn logged_chutes(events: &[PipelineEvent]) -> Vec<DetectionRecord> {
    events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Detections { detections, .. } => Some(detections.iter().filter(|d| d.cls == DetectionClass::Chute)),
            _ => None,
        })
        .flatten()
        .cloned()
        .collect()
}
