//! Pipeline configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{RoiConfig, Side};
use crate::optflow::FlowConfig;
use crate::placement::PlacementConfig;
use crate::slump::SlumpBin;

use super::io::InputFormat;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSource {
    /// Truth file (or scene spec) for the simulator-backed detector.
    pub oracle: Option<PathBuf>,
    /// Precomputed detections, JSON Lines.
    pub file: Option<PathBuf>,
    /// Adapter command line: program followed by arguments.
    pub adapter: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSource {
    /// Always predict this bin.
    pub stub_bin: Option<SlumpBin>,
    /// Always return this distribution.
    pub stub_probs: Option<Vec<f64>>,
    /// Predict the bin recorded in this truth file (or scene spec).
    pub truth: Option<PathBuf>,
    pub adapter: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlumpParams {
    /// Frames per clip.
    pub clip_frames: usize,
    /// Frame step within a clip.
    pub stride: usize,
    /// Clips per verdict.
    pub clips: usize,
    /// Frame offset between consecutive clip starts.
    pub hop: usize,
    pub ordered_bin: Option<SlumpBin>,
}

impl Default for SlumpParams {
    fn default() -> Self {
        Self { clip_frames: 16, stride: 2, clips: 5, hop: 8, ordered_bin: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    /// Inferred from the input extension when absent.
    pub format: Option<InputFormat>,
    pub stereo_split: bool,
    /// Which half of a split stereo frame is monitored.
    pub stereo_view: Side,
    /// Event log path; stdout when absent.
    pub output: Option<PathBuf>,
    /// Maximum adapter requests in flight.
    pub adapter_window: usize,
    pub detector: DetectorSource,
    pub classifier: ClassifierSource,
    pub flow: FlowConfig,
    pub roi: RoiConfig,
    pub placement: PlacementConfig,
    pub slump: SlumpParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            format: None,
            stereo_split: false,
            stereo_view: Side::Left,
            output: None,
            adapter_window: 4,
            detector: DetectorSource::default(),
            classifier: ClassifierSource::default(),
            flow: FlowConfig::default(),
            roi: RoiConfig::default(),
            placement: PlacementConfig::default(),
            slump: SlumpParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config file. Relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_relative(dir);
        }
        Ok(cfg)
    }

    fn resolve_relative(&mut self, dir: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p.as_mut() {
                if inner.is_relative() {
                    *inner = dir.join(&*inner);
                }
            }
        };
        fix(&mut self.input);
        fix(&mut self.output);
        fix(&mut self.detector.oracle);
        fix(&mut self.detector.file);
        fix(&mut self.classifier.truth);
    }

    pub fn input_format(&self) -> Result<InputFormat, ConfigError> {
        if let Some(f) = self.format {
            return Ok(f);
        }
        let input = self.input.as_deref().ok_or_else(|| ConfigError::Invalid("no input given".into()))?;
        InputFormat::from_path(input)
            .ok_or_else(|| ConfigError::Invalid(format!("cannot infer the format of {}", input.display())))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.input.is_none() {
            return invalid("no input given");
        }
        self.input_format()?;
        let d = &self.detector;
        if [d.oracle.is_some(), d.file.is_some(), d.adapter.is_some()].iter().filter(|&&b| b).count() != 1 {
            return invalid("exactly one of detector.oracle, detector.file, detector.adapter is required");
        }
        let c = &self.classifier;
        let sources = [c.stub_bin.is_some(), c.stub_probs.is_some(), c.truth.is_some(), c.adapter.is_some()];
        if sources.iter().filter(|&&b| b).count() != 1 {
            return invalid(
                "exactly one of classifier.stub_bin, classifier.stub_probs, classifier.truth, classifier.adapter is required",
            );
        }
        for cmd in [&d.adapter, &c.adapter].into_iter().flatten() {
            if cmd.is_empty() {
                return invalid("adapter command is empty");
            }
        }
        if self.adapter_window == 0 {
            return invalid("adapter_window must be at least 1");
        }
        if self.slump.ordered_bin.is_none() {
            return invalid("slump.ordered_bin is required");
        }
        if self.slump.clip_frames == 0 || self.slump.stride == 0 || self.slump.clips == 0 || self.slump.hop == 0 {
            return invalid("slump.clip_frames, slump.stride, slump.clips and slump.hop must be positive");
        }
        if !(1..=64).contains(&self.flow.half_window) {
            return invalid("flow.half_window must be in 1..=64");
        }
        if !(self.roi.tau_same > 0.0 && self.roi.tau_same <= 1.0) {
            return invalid("roi.tau_same must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.roi.min_confidence) {
            return invalid("roi.min_confidence must be in [0, 1]");
        }
        if !(self.placement.min_motion >= 0.0 && self.placement.min_motion.is_finite()) {
            return invalid("placement.min_motion must be a non-negative number");
        }
        Ok(())
    }
}
