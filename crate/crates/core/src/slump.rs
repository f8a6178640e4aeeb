//! Slump-range taxonomy, clip extraction, majority voting over clip
//! predictions, the accept/abnormal verdict, and soft-label scoring utilities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::Side;
use crate::frame::Frame;

pub const NUM_BINS: usize = 5;

/// Clamp applied to predicted probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlumpError {
    #[error("clip needs frame {needed} but only {available} frames are available from the start")]
    InsufficientFrames { needed: u64, available: usize },
    #[error("invalid clip parameters: {0}")]
    InvalidClip(String),
    #[error("invalid class distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid soft label: {0}")]
    InvalidLabel(String),
    #[error("unknown slump bin {0:?}")]
    UnknownBin(String),
    #[error("classifier adapter failed: {0}")]
    Adapter(String),
}

/// Five slump intervals in millimetres, half-open `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SlumpBin {
    #[serde(rename = "under150")]
    Under150,
    #[serde(rename = "150-180")]
    S150to180,
    #[serde(rename = "180-210")]
    S180to210,
    #[serde(rename = "210-240")]
    S210to240,
    #[serde(rename = "over240")]
    Over240,
}

impl SlumpBin {
    pub const ALL: [SlumpBin; NUM_BINS] =
        [Self::Under150, Self::S150to180, Self::S180to210, Self::S210to240, Self::Over240];

    /// Interior boundaries in mm.
    pub const BOUNDARIES: [f64; 4] = [150.0, 180.0, 210.0, 240.0];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// `[lo, hi)` in mm; the outer bins are unbounded.
    pub fn interval(self) -> (f64, f64) {
        let i = self.index();
        let lo = if i == 0 { f64::NEG_INFINITY } else { Self::BOUNDARIES[i - 1] };
        let hi = if i == NUM_BINS - 1 { f64::INFINITY } else { Self::BOUNDARIES[i] };
        (lo, hi)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Under150 => "under150",
            Self::S150to180 => "150-180",
            Self::S180to210 => "180-210",
            Self::S210to240 => "210-240",
            Self::Over240 => "over240",
        }
    }

    /// Column heading used in the location table.
    pub fn heading(self) -> &'static str {
        match self {
            Self::Under150 => "Under 150",
            Self::S150to180 => "150~180",
            Self::S180to210 => "180~210",
            Self::S210to240 => "210~240",
            Self::Over240 => "Over 240",
        }
    }
}

impl fmt::Display for SlumpBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SlumpBin {
    type Err = SlumpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| SlumpError::UnknownBin(s.to_string()))
    }
}

pub fn bin_of(slump_mm: f64) -> SlumpBin {
    let i = SlumpBin::BOUNDARIES.iter().take_while(|&&b| slump_mm >= b).count();
    SlumpBin::ALL[i]
}

/// `count` cropped frames of one side sampled every `stride` frames from `start_frame`.
#[derive(Debug, Clone)]
pub struct ClipWindow {
    pub side: Side,
    pub start_frame: u64,
    pub frames: Vec<Frame>,
    pub count: usize,
    pub stride: usize,
}

/// Extracts the clip starting at frame `start`. `video` may begin at any frame
/// index; frames are located by their `index()`.
pub fn extract_clip(video: &[Frame], side: Side, start: u64, count: usize, stride: usize) -> Result<ClipWindow, SlumpError> {
    if count == 0 || stride == 0 {
        return Err(SlumpError::InvalidClip(format!("count = {count}, stride = {stride}")));
    }
    let first = video.first().map(|f| f.index()).unwrap_or(0);
    if start < first {
        return Err(SlumpError::InvalidClip(format!("start {start} precedes first buffered frame {first}")));
    }
    let last_needed = start + ((count - 1) * stride) as u64;
    let base = (start - first) as usize;
    let mut frames = Vec::with_capacity(count);
    for k in 0..count {
        let pos = base + k * stride;
        match video.get(pos) {
            Some(f) if f.index() == start + (k * stride) as u64 => frames.push(f.clone()),
            Some(f) => {
                return Err(SlumpError::InvalidClip(format!(
                    "frame at position {pos} has index {} (expected {})",
                    f.index(),
                    start + (k * stride) as u64
                )))
            }
            None => {
                return Err(SlumpError::InsufficientFrames {
                    needed: last_needed,
                    available: video.len().saturating_sub(base),
                })
            }
        }
    }
    Ok(ClipWindow { side, start_frame: start, frames, count, stride })
}

/// Probabilities over the five bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    p: [f64; NUM_BINS],
}

impl ClassDistribution {
    pub fn new(p: [f64; NUM_BINS]) -> Result<Self, SlumpError> {
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SlumpError::InvalidDistribution(format!("negative or non-finite entry in {p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(SlumpError::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { p })
    }

    pub fn from_slice(p: &[f64]) -> Result<Self, SlumpError> {
        let arr: [f64; NUM_BINS] = p
            .try_into()
            .map_err(|_| SlumpError::InvalidDistribution(format!("expected {NUM_BINS} entries, got {}", p.len())))?;
        Self::new(arr)
    }

    pub fn one_hot(bin: SlumpBin) -> Self {
        let mut p = [0.0; NUM_BINS];
        p[bin.index()] = 1.0;
        Self { p }
    }

    pub fn probs(&self) -> &[f64; NUM_BINS] {
        &self.p
    }

    /// First index of the maximum.
    pub fn argmax(&self) -> SlumpBin {
        let mut best = 0;
        for i in 1..NUM_BINS {
            if self.p[i] > self.p[best] {
                best = i;
            }
        }
        SlumpBin::ALL[best]
    }
}

/// Target weights produced by smoothing and mixing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    y: [f64; NUM_BINS],
}

impl SoftLabel {
    pub fn new(y: [f64; NUM_BINS]) -> Result<Self, SlumpError> {
        if y.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SlumpError::InvalidLabel(format!("negative or non-finite entry in {y:?}")));
        }
        let sum: f64 = y.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SlumpError::InvalidLabel(format!("entries sum to {sum}")));
        }
        Ok(Self { y })
    }

    pub fn weights(&self) -> &[f64; NUM_BINS] {
        &self.y
    }
}

/// Something that turns a clip into a distribution over bins.
pub trait ClipClassifier {
    fn classify(&mut self, clip: &ClipWindow) -> Result<ClassDistribution, SlumpError>;

    /// Classifies several clips; adapters that accept concurrent requests
    /// override this. Results come back in input order.
    fn classify_batch(&mut self, clips: &[ClipWindow]) -> Result<Vec<ClassDistribution>, SlumpError> {
        clips.iter().map(|c| self.classify(c)).collect()
    }

    /// Recoverable faults seen since the last call, such as adapter restarts.
    fn take_faults(&mut self) -> Vec<String> {
        Vec::new()
    }
}

/// Returns a fixed distribution for every clip.
#[derive(Debug, Clone)]
pub struct StubClassifier {
    dist: ClassDistribution,
}

impl StubClassifier {
    pub fn new(dist: ClassDistribution) -> Self {
        Self { dist }
    }

    pub fn fixed(bin: SlumpBin) -> Self {
        Self::new(ClassDistribution::one_hot(bin))
    }
}

impl ClipClassifier for StubClassifier {
    fn classify(&mut self, _clip: &ClipWindow) -> Result<ClassDistribution, SlumpError> {
        Ok(self.dist)
    }
}

pub fn classify(handle: &mut dyn ClipClassifier, clip: &ClipWindow) -> Result<ClassDistribution, SlumpError> {
    handle.classify(clip)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub winner: SlumpBin,
    pub votes: [u32; NUM_BINS],
}

/// One vote per distribution for its argmax. Ties go to the larger summed
/// probability mass, then to the lower bin index.
///
/// # Panics
/// If `dists` is empty.
pub fn majority_vote(dists: &[ClassDistribution]) -> VoteOutcome {
    assert!(!dists.is_empty(), "majority vote needs at least one distribution");
    let mut votes = [0u32; NUM_BINS];
    let mut mass = [0.0f64; NUM_BINS];
    for d in dists {
        votes[d.argmax().index()] += 1;
        for (m, p) in mass.iter_mut().zip(d.probs()) {
            *m += p;
        }
    }
    let top = *votes.iter().max().unwrap();
    let mut winner: Option<usize> = None;
    for i in 0..NUM_BINS {
        if votes[i] != top {
            continue;
        }
        winner = match winner {
            Some(w) if mass[w] >= mass[i] => Some(w),
            _ => Some(i),
        };
    }
    VoteOutcome { winner: SlumpBin::ALL[winner.unwrap()], votes }
}

/// The slump range ordered for the site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlumpOrder {
    pub ordered_bin: SlumpBin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Acceptable,
    Abnormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub predicted: SlumpBin,
    pub order: SlumpOrder,
    pub status: VerdictStatus,
    pub votes: [u32; NUM_BINS],
    pub t_drop: u64,
}

pub fn verdict(predicted: SlumpBin, order: SlumpOrder, t_drop: u64, votes: [u32; NUM_BINS]) -> Verdict {
    let status = if predicted == order.ordered_bin {
        VerdictStatus::Acceptable
    } else {
        VerdictStatus::Abnormal
    };
    Verdict { predicted, order, status, votes, t_drop }
}

/// Label smoothing: `1 - f + f/C` on the true class, `f/C` elsewhere.
pub fn smooth_label(cls: usize, factor: f64) -> Result<SoftLabel, SlumpError> {
    if cls >= NUM_BINS {
        return Err(SlumpError::InvalidLabel(format!("class {cls} out of range")));
    }
    if !(0.0..1.0).contains(&factor) {
        return Err(SlumpError::InvalidLabel(format!("smoothing factor {factor} outside [0, 1)")));
    }
    let off = factor / NUM_BINS as f64;
    let mut y = [off; NUM_BINS];
    y[cls] = 1.0 - factor + off;
    Ok(SoftLabel { y })
}

/// `lambda * a + (1 - lambda) * b`.
pub fn mix_labels(a: &SoftLabel, b: &SoftLabel, lambda_mix: f64) -> Result<SoftLabel, SlumpError> {
    if !(0.0..=1.0).contains(&lambda_mix) {
        return Err(SlumpError::InvalidLabel(format!("mixing weight {lambda_mix} outside [0, 1]")));
    }
    let mut y = [0.0; NUM_BINS];
    for (i, v) in y.iter_mut().enumerate() {
        *v = lambda_mix * a.y[i] + (1.0 - lambda_mix) * b.y[i];
    }
    Ok(SoftLabel { y })
}

/// `-lambda_cls * sum(y_i * ln p_i)` with `p_i` clamped at [`PROB_FLOOR`].
pub fn soft_cross_entropy(y: &SoftLabel, p: &ClassDistribution, lambda_cls: f64) -> f64 {
    let s: f64 = y
        .y
        .iter()
        .zip(p.probs())
        .filter(|(yi, _)| **yi > 0.0)
        .map(|(yi, pi)| yi * pi.max(PROB_FLOOR).ln())
        .sum();
    -lambda_cls * s
}
