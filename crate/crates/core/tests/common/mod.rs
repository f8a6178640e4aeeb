#![allow(dead_code)]

pub mod oracles;

use std::io;

use pourwatch::app::config::PipelineConfig;
use pourwatch::app::eval::timing_window;
use pourwatch::app::io::SceneSource;
use pourwatch::app::{run_stream, RunOutcome};
use pourwatch::detect::{OracleDetector, Side};
use pourwatch::frame::Frame;
use pourwatch::sim::{truth, GranularTexture, SceneSpec, SceneTruth};
use pourwatch::slump::{SlumpBin, StubClassifier};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pipeline config for simulator runs with the default stage parameters.
pub fn sim_config(ordered: SlumpBin) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.slump.ordered_bin = Some(ordered);
    cfg
}

/// Runs the full pipeline in-process on a rendered scene with the oracle
/// detector and a classifier that always answers `predicted`.
pub fn run_scene_with(spec: &SceneSpec, cfg: &PipelineConfig, predicted: SlumpBin, log: impl io::Write) -> RunOutcome {
    let frames = Box::new(SceneSource::new(spec.clone()).expect("valid scene"));
    let mut detector = OracleDetector::new(truth(spec));
    let mut classifier = StubClassifier::fixed(predicted);
    run_stream(cfg, frames, &mut detector, &mut classifier, log).expect("pipeline run")
}

pub fn run_scene(spec: &SceneSpec) -> RunOutcome {
    let bin = spec.slump_bin.unwrap_or(SlumpBin::Under150);
    run_scene_with(spec, &sim_config(bin), bin, io::sink())
}

/// Side and timing outcome of one simulated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCheck {
    pub expected: Option<Side>,
    pub detected: Vec<(Side, u64)>,
    pub side_ok: bool,
    /// `None` when no timing window applies.
    pub window: Option<(u64, u64)>,
    pub timing_ok: bool,
}

pub fn check_scene(spec: &SceneSpec, out: &RunOutcome) -> SceneCheck {
    let t: SceneTruth = truth(spec);
    let expected = t.pouring_side();
    let detected: Vec<(Side, u64)> = out.drops.iter().map(|d| (d.side, d.frame)).collect();
    let side_ok = match expected {
        None => detected.is_empty(),
        Some(s) => !detected.is_empty() && detected.iter().all(|(d, _)| *d == s),
    };
    let mut window = None;
    let mut timing_ok = true;
    if let Some(side) = expected {
        let lock = out.locks.iter().find(|l| l.side == side);
        if let (Some(lock), Some(&(_, frame))) = (lock, detected.iter().find(|(s, _)| *s == side)) {
            let cfg = sim_config(SlumpBin::Under150);
            let d_seed = pourwatch::placement::edge_for(lock, cfg.placement.offset).side_distance(lock.bbox.center());
            let w = timing_window(t.start(side).unwrap(), d_seed, t.speed(side).unwrap());
            timing_ok = (w.0..=w.1).contains(&frame);
            window = Some(w);
        } else {
            timing_ok = false;
        }
    }
    SceneCheck { expected, detected, side_ok, window, timing_ok }
}

/// Seeded noise texture frame translated by an integer shift.
pub fn noise_frame(w: u32, h: u32, seed: u64, dx: i32, dy: i32, index: u64) -> Frame {
    GranularTexture::new(seed, 4.0).render_shifted(w, h, dx as f64, dy as f64, 0.9, index)
}
