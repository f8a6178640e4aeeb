//! Scores event logs against scene truth.

use crate::detect::{DetectionClass, Side};
use crate::metrics::{
    accuracy_f1, location_grid, map_50_95, precision, EvalReport, LocationResult, ScoredBox, TruthBox,
    PRECISION_CONF,
};
use crate::sim::SceneTruth;
use crate::slump::SlumpBin;

use super::events::{EventKind, PipelineEvent};

/// IoU threshold used for the reported precision.
pub const PRECISION_IOU: f64 = 0.5;

/// What one run decided, pulled out of its log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub first_drop: Option<(Side, u64)>,
    pub d_seed: [Option<f64>; 2],
    pub verdicts: Vec<(Side, SlumpBin)>,
}

pub fn summarize(events: &[PipelineEvent]) -> RunSummary {
    let mut s = RunSummary::default();
    for e in events {
        match &e.kind {
            EventKind::RoiLocked { side, d_seed, .. } => s.d_seed[side.slot()] = Some(*d_seed),
            EventKind::Drop { side, frame, .. } if s.first_drop.is_none() => s.first_drop = Some((*side, *frame)),
            EventKind::Verdict { side, predicted, .. } => s.verdicts.push((*side, *predicted)),
            _ => {}
        }
    }
    s
}

/// Inclusive frame window in which a drop counts as on time.
pub fn timing_window(start: u64, d_seed: f64, speed: f64) -> (u64, u64) {
    (start, start + (d_seed.abs() / speed).ceil() as u64 + 2)
}

/// Scores any number of (log, truth) pairs together.
pub fn evaluate(runs: &[(Vec<PipelineEvent>, SceneTruth)]) -> EvalReport {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut pred_bins = Vec::new();
    let mut true_bins = Vec::new();
    let mut locations = Vec::new();
    let mut timing_errors = 0;

    for (k, (events, truth)) in runs.iter().enumerate() {
        // Keep frames of different scenes apart.
        let key = |frame: u64| ((k as u64) << 32) | frame;
        for e in events {
            if let EventKind::Detections { frame, detections } = &e.kind {
                for d in detections.iter().filter(|d| d.cls == DetectionClass::Chute) {
                    if let Ok(det) = d.to_detection() {
                        preds.push(ScoredBox { frame: key(*frame), bbox: det.bbox, confidence: det.confidence });
                    }
                }
                if *frame < truth.duration {
                    for b in [truth.left_box, truth.right_box] {
                        gts.push(TruthBox { frame: key(*frame), bbox: b });
                    }
                }
            }
        }

        let summary = summarize(events);
        let true_side = truth.pouring_side();
        if let Some(side) = true_side {
            if let (Some(bin), Some((_, predicted))) =
                (truth.slump_bin, summary.verdicts.iter().find(|(s, _)| *s == side))
            {
                pred_bins.push(*predicted);
                true_bins.push(bin);
            }
            if let (Some((dside, frame)), Some(start), Some(speed), Some(d_seed)) =
                (summary.first_drop, truth.start(side), truth.speed(side), summary.d_seed[side.slot()])
            {
                let (lo, hi) = timing_window(start, d_seed, speed);
                if dside == side && !(lo..=hi).contains(&frame) {
                    timing_errors += 1;
                }
            }
        }
        if let Some(bin) = truth.slump_bin {
            locations.push(LocationResult { bin, true_side, detected: summary.first_drop.map(|(s, _)| s) });
        }
    }

    let grid = location_grid(&locations);
    let (accuracy, f1_macro) = match accuracy_f1(&pred_bins, &true_bins) {
        Ok((a, f)) => (Some(a), Some(f)),
        Err(_) => (None, None),
    };
    EvalReport {
        scenes: runs.len(),
        map_50_95: map_50_95(&preds, &gts).ok(),
        precision: precision(&preds, &gts, PRECISION_IOU, PRECISION_CONF).ok(),
        accuracy,
        f1_macro,
        location_table: grid.fractions(),
        location_counts: grid,
        timing_errors,
    }
}
