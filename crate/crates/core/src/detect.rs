//! Chute detection: the detector interface, left/right assignment, and the
//! stabilizer that locks a region of interest after a run of consistent
//! detections.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Frame, FrameError};
use crate::geometry::{enclosing_upright, rotated_iou, GeometryError, RotatedBox, UprightRect};
use crate::sim::SceneTruth;

/// Minimum `|cx_a - cx_b|` (pixels) for two chutes to be told apart.
pub const MIN_SIDE_SEPARATION: f64 = 5.0;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("no chute detections in frame")]
    NoChute,
    #[error("chute centers {0:.1} and {1:.1} are too close to assign sides")]
    AmbiguousSides(f64, f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("detections file line {line}: {msg}")]
    File { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("detector adapter failed: {0}")]
    Adapter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn slot(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionClass {
    Chute,
    #[serde(rename = "urchute")]
    URChute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: RotatedBox,
    pub cls: DetectionClass,
    pub confidence: f64,
    pub frame_index: u64,
}

/// Flat wire/file form of a detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame: u64,
    pub cls: DetectionClass,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta_deg: f64,
    pub conf: f64,
}

impl DetectionRecord {
    pub fn from_detection(d: &Detection) -> Self {
        Self {
            frame: d.frame_index,
            cls: d.cls,
            cx: d.bbox.cx,
            cy: d.bbox.cy,
            w: d.bbox.w,
            h: d.bbox.h,
            theta_deg: d.bbox.theta_deg,
            conf: d.confidence,
        }
    }

    pub fn to_detection(&self) -> Result<Detection, DetectError> {
        if !(0.0..=1.0).contains(&self.conf) {
            return Err(DetectError::File { line: 0, msg: format!("confidence {} outside [0, 1]", self.conf) });
        }
        Ok(Detection {
            bbox: RotatedBox::new(self.cx, self.cy, self.w, self.h, self.theta_deg)?,
            cls: self.cls,
            confidence: self.conf,
            frame_index: self.frame,
        })
    }
}

/// Anything that can find chutes in a frame.
pub trait ChuteDetector {
    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, DetectError>;

    /// Recoverable faults seen since the last call, such as adapter restarts.
    fn take_faults(&mut self) -> Vec<String> {
        Vec::new()
    }
}

/// Reads the simulator's ground truth; checks plumbing, not learning.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    truth: SceneTruth,
    confidence: f64,
}

impl OracleDetector {
    pub fn new(truth: SceneTruth) -> Self {
        Self { truth, confidence: 0.99 }
    }
}

impl ChuteDetector for OracleDetector {
    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, DetectError> {
        if frame.index() >= self.truth.duration {
            return Ok(Vec::new());
        }
        let mut out = Vec::with_capacity(4);
        for (chute, upright) in [
            (self.truth.left_box, self.truth.left_urchute),
            (self.truth.right_box, self.truth.right_urchute),
        ] {
            out.push(Detection {
                bbox: chute,
                cls: DetectionClass::Chute,
                confidence: self.confidence,
                frame_index: frame.index(),
            });
            out.push(Detection {
                bbox: upright,
                cls: DetectionClass::URChute,
                confidence: self.confidence,
                frame_index: frame.index(),
            });
        }
        Ok(out)
    }
}

/// Replays a JSON Lines file of precomputed detections.
#[derive(Debug, Clone, Default)]
pub struct FileDetector {
    by_frame: BTreeMap<u64, Vec<Detection>>,
}

impl FileDetector {
    pub fn from_reader(reader: impl BufRead) -> Result<Self, DetectError> {
        let mut by_frame: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
        let mut last = 0u64;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DetectionRecord = serde_json::from_str(&line)
                .map_err(|e| DetectError::File { line: i + 1, msg: e.to_string() })?;
            if rec.frame < last {
                return Err(DetectError::File {
                    line: i + 1,
                    msg: format!("frame {} after frame {last}", rec.frame),
                });
            }
            last = rec.frame;
            let det = rec.to_detection().map_err(|e| DetectError::File { line: i + 1, msg: e.to_string() })?;
            by_frame.entry(rec.frame).or_default().push(det);
        }
        Ok(Self { by_frame })
    }

    pub fn open(path: &Path) -> Result<Self, DetectError> {
        let f = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(f))
    }
}

impl ChuteDetector for FileDetector {
    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, DetectError> {
        Ok(self.by_frame.get(&frame.index()).cloned().unwrap_or_default())
    }
}

/// Chute detections of one frame keyed by side.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SideAssignment {
    pub left: Option<Detection>,
    pub right: Option<Detection>,
}

impl SideAssignment {
    pub fn get(&self, side: Side) -> Option<&Detection> {
        match side {
            Side::Left => self.left.as_ref(),
            Side::Right => self.right.as_ref(),
        }
    }
}

/// Smaller `cx` is left. A lone chute goes by the frame midline. With more
/// than two chutes the two most confident are kept.
pub fn assign_sides(dets: &[Detection], frame_w: u32) -> Result<SideAssignment, DetectError> {
    let mut chutes: Vec<&Detection> = dets.iter().filter(|d| d.cls == DetectionClass::Chute).collect();
    if chutes.is_empty() {
        return Err(DetectError::NoChute);
    }
    if chutes.len() > 2 {
        chutes.sort_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then(a.bbox.cx.total_cmp(&b.bbox.cx))
                .then(a.bbox.cy.total_cmp(&b.bbox.cy))
        });
        chutes.truncate(2);
    }
    if chutes.len() == 1 {
        let d = *chutes[0];
        return Ok(if d.bbox.cx < frame_w as f64 / 2.0 {
            SideAssignment { left: Some(d), right: None }
        } else {
            SideAssignment { left: None, right: Some(d) }
        });
    }
    let (a, b) = (*chutes[0], *chutes[1]);
    if (a.bbox.cx - b.bbox.cx).abs() < MIN_SIDE_SEPARATION {
        return Err(DetectError::AmbiguousSides(a.bbox.cx.min(b.bbox.cx), a.bbox.cx.max(b.bbox.cx)));
    }
    let (l, r) = if a.bbox.cx < b.bbox.cx { (a, b) } else { (b, a) };
    Ok(SideAssignment { left: Some(l), right: Some(r) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiConfig {
    /// Rotated IoU with the run's mean box needed to extend a run.
    pub tau_same: f64,
    /// A side locks once its run is longer than this many frames.
    pub lock_threshold: u32,
    /// Detections below this confidence are dropped.
    pub min_confidence: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self { tau_same: 0.9, lock_threshold: 8, min_confidence: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiLock {
    pub side: Side,
    #[serde(rename = "box")]
    pub bbox: RotatedBox,
    pub crop: UprightRect,
    pub locked_at: u64,
    pub contributing: u32,
}

/// Arithmetic mean of center and size, axial circular mean of the angle.
///
/// Means are accumulated as deviations from the first box so a run of
/// identical boxes reproduces that box exactly.
pub fn mean_box(boxes: &[RotatedBox]) -> Option<RotatedBox> {
    let first = *boxes.first()?;
    let n = boxes.len() as f64;
    let mean_of = |f: fn(&RotatedBox) -> f64| first_plus_mean_dev(f(&first), boxes.iter().map(f), n);
    let (mut s, mut c) = (0.0, 0.0);
    for b in boxes {
        let phi = 2.0 * (b.theta_deg - first.theta_deg).to_radians();
        s += phi.sin();
        c += phi.cos();
    }
    let theta = first.theta_deg + s.atan2(c).to_degrees() / 2.0;
    RotatedBox::new(
        mean_of(|b| b.cx),
        mean_of(|b| b.cy),
        mean_of(|b| b.w),
        mean_of(|b| b.h),
        theta,
    )
    .ok()
}

fn first_plus_mean_dev(first: f64, values: impl Iterator<Item = f64>, n: f64) -> f64 {
    first + values.map(|v| v - first).sum::<f64>() / n
}

#[derive(Debug, Clone, Default)]
struct SideRun {
    start_frame: u64,
    chutes: Vec<RotatedBox>,
    uprights: Vec<RotatedBox>,
}

impl SideRun {
    fn reset(&mut self) {
        self.chutes.clear();
        self.uprights.clear();
    }
}

/// Counters for stabilizer behaviour that does not surface as a lock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RoiDiagnostics {
    pub resets: u32,
    pub ambiguous_frames: u32,
    pub empty_frames: u32,
    pub dropped_low_confidence: u32,
}

/// Per-stream stabilizer state. Feed frames in order through [`Self::roi_step`].
#[derive(Debug, Clone)]
pub struct RoiStabilizer {
    cfg: RoiConfig,
    frame_w: u32,
    frame_h: u32,
    runs: [SideRun; 2],
    locks: [Option<RoiLock>; 2],
    diagnostics: RoiDiagnostics,
}

impl RoiStabilizer {
    pub fn new(cfg: RoiConfig, frame_w: u32, frame_h: u32) -> Self {
        Self {
            cfg,
            frame_w,
            frame_h,
            runs: Default::default(),
            locks: [None, None],
            diagnostics: RoiDiagnostics::default(),
        }
    }

    pub fn lock(&self, side: Side) -> Option<&RoiLock> {
        self.locks[side.slot()].as_ref()
    }

    pub fn all_locked(&self) -> bool {
        self.locks.iter().all(Option::is_some)
    }

    pub fn diagnostics(&self) -> RoiDiagnostics {
        self.diagnostics
    }

    /// Current run length for a side.
    pub fn run_length(&self, side: Side) -> usize {
        self.runs[side.slot()].chutes.len()
    }

    /// Consumes one frame's detections and returns any locks formed on it.
    /// Locked sides ignore further input.
    pub fn roi_step(&mut self, frame_index: u64, dets: &[Detection]) -> Vec<RoiLock> {
        let kept: Vec<Detection> = dets
            .iter()
            .filter(|d| {
                let ok = d.confidence >= self.cfg.min_confidence;
                if !ok {
                    self.diagnostics.dropped_low_confidence += 1;
                }
                ok
            })
            .copied()
            .collect();

        let assignment = match assign_sides(&kept, self.frame_w) {
            Ok(a) => a,
            Err(e) => {
                if matches!(e, DetectError::AmbiguousSides(..)) {
                    self.diagnostics.ambiguous_frames += 1;
                } else {
                    self.diagnostics.empty_frames += 1;
                }
                for side in Side::BOTH {
                    self.break_run(side);
                }
                return Vec::new();
            }
        };

        let uprights: Vec<RotatedBox> = kept
            .iter()
            .filter(|d| d.cls == DetectionClass::URChute)
            .map(|d| d.bbox)
            .collect();

        let mut locked = Vec::new();
        for side in Side::BOTH {
            if self.locks[side.slot()].is_some() {
                continue;
            }
            let Some(det) = assignment.get(side) else {
                self.break_run(side);
                continue;
            };
            let chute = det.bbox;
            let paired = uprights
                .iter()
                .map(|u| (rotated_iou(&chute, u), *u))
                .filter(|(iou, _)| *iou > 0.0)
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, u)| u);

            let run = &mut self.runs[side.slot()];
            let extends = match mean_box(&run.chutes) {
                Some(mean) => rotated_iou(&chute, &mean) >= self.cfg.tau_same,
                None => false,
            };
            if !extends {
                if !run.chutes.is_empty() {
                    self.diagnostics.resets += 1;
                }
                run.reset();
                run.start_frame = frame_index;
            }
            run.chutes.push(chute);
            if let Some(u) = paired {
                run.uprights.push(u);
            }

            if run.chutes.len() > self.cfg.lock_threshold as usize {
                let bbox = mean_box(&run.chutes).expect("run is non-empty");
                let region = mean_box(&run.uprights).unwrap_or(bbox);
                let crop = enclosing_upright(&region, self.frame_w, self.frame_h)
                    .or_else(|_| enclosing_upright(&bbox, self.frame_w, self.frame_h));
                match crop {
                    Ok(crop) => {
                        let lock = RoiLock {
                            side,
                            bbox,
                            crop,
                            locked_at: frame_index,
                            contributing: run.chutes.len() as u32,
                        };
                        self.locks[side.slot()] = Some(lock);
                        locked.push(lock);
                    }
                    Err(_) => {
                        self.diagnostics.resets += 1;
                        run.reset();
                    }
                }
            }
        }
        locked
    }

    fn break_run(&mut self, side: Side) {
        if self.locks[side.slot()].is_none() && !self.runs[side.slot()].chutes.is_empty() {
            self.diagnostics.resets += 1;
            self.runs[side.slot()].reset();
        }
    }
}

/// Cuts the locked crop rectangle out of a frame.
pub fn crop_chute(frame: &Frame, lock: &RoiLock) -> Result<Frame, DetectError> {
    Ok(frame.crop(&lock.crop)?)
}
