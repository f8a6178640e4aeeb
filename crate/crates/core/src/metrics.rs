//! Detection, classification and placement-location scoring.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::Side;
use crate::geometry::{rotated_iou, RotatedBox};
use crate::slump::{SlumpBin, NUM_BINS};

/// Number of recall sample points in interpolated AP.
pub const RECALL_POINTS: usize = 101;

/// Default confidence floor for [`precision`].
pub const PRECISION_CONF: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no ground truth boxes")]
    NoGroundTruth,
    #[error("no predictions at or above confidence {0}")]
    NoPredictions(f64),
    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("nothing to score")]
    Empty,
}

/// A predicted box on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub frame: u64,
    pub bbox: RotatedBox,
    pub confidence: f64,
}

/// A ground-truth box on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    pub frame: u64,
    pub bbox: RotatedBox,
}

/// Greedy matching outcome for predictions sorted by descending confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Indices into the input predictions, in the order they were matched.
    pub order: Vec<usize>,
    /// Whether each prediction (in `order`) is a true positive.
    pub tp: Vec<bool>,
}

/// Greedy confidence-ordered matching.
///
/// Each prediction takes the unmatched truth on its frame with the highest
/// IoU; it is a true positive when that IoU is at least `iou_t`. Ties in
/// confidence keep input order, ties in IoU go to the earlier truth.
pub fn greedy_match(preds: &[ScoredBox], gts: &[TruthBox], iou_t: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let mut taken = vec![false; gts.len()];
    let mut tp = Vec::with_capacity(preds.len());
    for &pi in &order {
        let p = &preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] || g.frame != p.frame {
                continue;
            }
            let iou = rotated_iou(&p.bbox, &g.bbox);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, iou)) if iou >= iou_t => {
                taken[gi] = true;
                tp.push(true);
            }
            _ => tp.push(false),
        }
    }
    MatchResult { order, tp }
}

/// 101-point interpolated area under the precision/recall curve.
pub fn ap_from_matches(tp: &[bool], num_gt: usize) -> f64 {
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let (mut t, mut f) = (0usize, 0usize);
    for &hit in tp {
        if hit {
            t += 1;
        } else {
            f += 1;
        }
        recall.push(t as f64 / num_gt as f64);
        precision.push(t as f64 / (t + f) as f64);
    }
    // Monotone envelope from the right.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for i in 0..RECALL_POINTS {
        let r = i as f64 / (RECALL_POINTS - 1) as f64;
        while k < recall.len() && recall[k] < r {
            k += 1;
        }
        if k < recall.len() {
            sum += precision[k];
        }
    }
    sum / RECALL_POINTS as f64
}

pub fn average_precision(preds: &[ScoredBox], gts: &[TruthBox], iou_t: f64) -> Result<f64, MetricsError> {
    if gts.is_empty() {
        return Err(MetricsError::NoGroundTruth);
    }
    let m = greedy_match(preds, gts, iou_t);
    Ok(ap_from_matches(&m.tp, gts.len()))
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Mean AP over [`coco_thresholds`].
pub fn map_50_95(preds: &[ScoredBox], gts: &[TruthBox]) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    for t in coco_thresholds() {
        sum += average_precision(preds, gts, t)?;
    }
    Ok(sum / 10.0)
}

/// `TP / (TP + FP)` over predictions with confidence at least `conf_t`.
pub fn precision(preds: &[ScoredBox], gts: &[TruthBox], iou_t: f64, conf_t: f64) -> Result<f64, MetricsError> {
    let kept: Vec<ScoredBox> = preds.iter().filter(|p| p.confidence >= conf_t).copied().collect();
    if kept.is_empty() {
        return Err(MetricsError::NoPredictions(conf_t));
    }
    let m = greedy_match(&kept, gts, iou_t);
    let tp = m.tp.iter().filter(|&&b| b).count();
    Ok(tp as f64 / kept.len() as f64)
}

/// Accuracy and macro F1 over the bins that occur in `truth`.
pub fn accuracy_f1(pred: &[SlumpBin], truth: &[SlumpBin]) -> Result<(f64, f64), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut tp = [0usize; NUM_BINS];
    let mut predicted = [0usize; NUM_BINS];
    let mut support = [0usize; NUM_BINS];
    for (p, t) in pred.iter().zip(truth) {
        predicted[p.index()] += 1;
        support[t.index()] += 1;
        if p == t {
            tp[p.index()] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let accuracy = correct as f64 / pred.len() as f64;
    let mut f1_sum = 0.0;
    let mut classes = 0;
    for c in 0..NUM_BINS {
        if support[c] == 0 {
            continue;
        }
        classes += 1;
        let r = tp[c] as f64 / support[c] as f64;
        let p = if predicted[c] == 0 { 0.0 } else { tp[c] as f64 / predicted[c] as f64 };
        if p + r > 0.0 {
            f1_sum += 2.0 * p * r / (p + r);
        }
    }
    Ok((accuracy, f1_sum / classes as f64))
}

/// One scene's placement outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationResult {
    pub bin: SlumpBin,
    pub true_side: Option<Side>,
    pub detected: Option<Side>,
}

impl LocationResult {
    pub fn correct(&self) -> bool {
        self.true_side == self.detected
    }
}

/// Tally of correct over total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: u32,
    pub total: u32,
}

impl Tally {
    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += ok as u32;
    }

    fn merge(&mut self, other: Tally) {
        self.total += other.total;
        self.correct += other.correct;
    }

    /// `None` for an empty tally.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

pub const LOCATION_ROWS: [&str; 3] = ["Left", "Right", "None"];

fn row_of(side: Option<Side>) -> usize {
    match side {
        Some(Side::Left) => 0,
        Some(Side::Right) => 1,
        None => 2,
    }
}

/// Accuracy by true side (rows Left, Right, None) and slump bin.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LocationGrid {
    pub cells: [[Tally; NUM_BINS]; 3],
}

impl LocationGrid {
    pub fn cell(&self, row: usize, bin: SlumpBin) -> Option<f64> {
        self.cells[row][bin.index()].accuracy()
    }

    /// Pooled over the bins of one row.
    pub fn row_average(&self, row: usize) -> Option<f64> {
        let mut t = Tally::default();
        self.cells[row].iter().for_each(|c| t.merge(*c));
        t.accuracy()
    }

    /// Pooled over the rows of one column.
    pub fn column_average(&self, bin: SlumpBin) -> Option<f64> {
        let mut t = Tally::default();
        self.cells.iter().for_each(|r| t.merge(r[bin.index()]));
        t.accuracy()
    }

    pub fn overall(&self) -> Option<f64> {
        let mut t = Tally::default();
        self.cells.iter().flatten().for_each(|c| t.merge(*c));
        t.accuracy()
    }

    /// Accuracies as fractions, `None` for empty cells.
    pub fn fractions(&self) -> [[Option<f64>; NUM_BINS]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.cells[r][c].accuracy()))
    }

    /// Aligned text table in percent, with an Avg column and row.
    pub fn to_table(&self) -> String {
        fn pct(v: Option<f64>) -> String {
            v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into())
        }
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "");
        for b in SlumpBin::ALL {
            let _ = write!(out, "{:>10}", b.heading());
        }
        let _ = writeln!(out, "{:>10}", "Avg");
        for (r, name) in LOCATION_ROWS.iter().enumerate() {
            let _ = write!(out, "{name:<8}");
            for b in SlumpBin::ALL {
                let _ = write!(out, "{:>10}", pct(self.cell(r, b)));
            }
            let _ = writeln!(out, "{:>10}", pct(self.row_average(r)));
        }
        let _ = write!(out, "{:<8}", "Avg");
        for b in SlumpBin::ALL {
            let _ = write!(out, "{:>10}", pct(self.column_average(b)));
        }
        let _ = writeln!(out, "{:>10}", pct(self.overall()));
        out
    }
}

pub fn location_grid(results: &[LocationResult]) -> LocationGrid {
    let mut g = LocationGrid::default();
    for r in results {
        g.cells[row_of(r.true_side)][r.bin.index()].add(r.correct());
    }
    g
}

/// Summary written by the `eval` subcommand. Metrics that cannot be computed
/// from the supplied logs are left out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: usize,
    pub map_50_95: Option<f64>,
    pub precision: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1_macro: Option<f64>,
    pub location_table: [[Option<f64>; NUM_BINS]; 3],
    pub location_counts: LocationGrid,
    /// Pour-scene drops whose frame fell outside the scene's timing window.
    pub timing_errors: usize,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        fn num(v: Option<f64>) -> String {
            v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
        }
        let mut out = String::new();
        let _ = writeln!(out, "scenes      {}", self.scenes);
        let _ = writeln!(out, "mAP50-95    {}", num(self.map_50_95));
        let _ = writeln!(out, "precision   {}", num(self.precision));
        let _ = writeln!(out, "accuracy    {}", num(self.accuracy));
        let _ = writeln!(out, "macro F1    {}", num(self.f1_macro));
        let _ = writeln!(out, "timing err  {}", self.timing_errors);
        out.push('\n');
        out.push_str(&self.location_counts.to_table());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(cx: f64) -> RotatedBox {
        RotatedBox::new(cx, 50.0, 20.0, 10.0, 0.0).unwrap()
    }

    fn pred(cx: f64, conf: f64) -> ScoredBox {
        ScoredBox { frame: 0, bbox: bx(cx), confidence: conf }
    }

    fn gt(cx: f64) -> TruthBox {
        TruthBox { frame: 0, bbox: bx(cx) }
    }

    #[test]
    fn perfect_and_disjoint() {
        for t in coco_thresholds() {
            assert_eq!(average_precision(&[pred(10.0, 0.9)], &[gt(10.0)], t).unwrap(), 1.0);
            assert_eq!(average_precision(&[pred(500.0, 0.9)], &[gt(10.0)], t).unwrap(), 0.0);
        }
        assert_eq!(map_50_95(&[pred(10.0, 0.9)], &[gt(10.0)]).unwrap(), 1.0);
        assert_eq!(map_50_95(&[], &[gt(10.0)]).unwrap(), 0.0);
        assert_eq!(average_precision(&[pred(1.0, 0.5)], &[], 0.5), Err(MetricsError::NoGroundTruth));
    }

    #[test]
    fn tp_fp_tp() {
        let preds = [pred(10.0, 0.9), pred(300.0, 0.8), pred(100.0, 0.7)];
        let gts = [gt(10.0), gt(100.0)];
        let m = greedy_match(&preds, &gts, 0.5);
        assert_eq!(m.tp, vec![true, false, true]);
        // Recall 0..=0.5 at precision 1 (51 points), 0.51..=1 at 2/3 (50 points).
        let expected = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((average_precision(&preds, &gts, 0.5).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn iou_of_exactly_060() {
        // Shift of 5 on a width-20 box: overlap 15, union 25.
        let preds = [pred(15.0, 0.9)];
        let gts = [gt(10.0)];
        assert_eq!(rotated_iou(&preds[0].bbox, &gts[0].bbox), 0.6);
        assert!((map_50_95(&preds, &gts).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn precision_examples() {
        let gts = [gt(10.0), gt(100.0)];
        assert_eq!(precision(&[pred(10.0, 0.9), pred(100.0, 0.8)], &gts, 0.5, 0.25).unwrap(), 1.0);
        assert_eq!(precision(&[pred(10.0, 0.9), pred(400.0, 0.8)], &gts, 0.5, 0.25).unwrap(), 0.5);
        assert_eq!(precision(&[pred(10.0, 0.1)], &gts, 0.5, 0.25), Err(MetricsError::NoPredictions(0.25)));
    }

    #[test]
    fn frames_do_not_cross_match() {
        let p = ScoredBox { frame: 1, bbox: bx(10.0), confidence: 0.9 };
        assert_eq!(average_precision(&[p], &[gt(10.0)], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_and_f1() {
        use SlumpBin::*;
        let same = [Under150, Over240, S180to210];
        assert_eq!(accuracy_f1(&same, &same).unwrap(), (1.0, 1.0));
        assert_eq!(accuracy_f1(&[Under150, Under150], &[Under150, S150to180]).unwrap().0, 0.5);
        assert_eq!(accuracy_f1(&[Under150], &[]), Err(MetricsError::LengthMismatch(1, 0)));
    }

    #[test]
    fn grid_cells_and_marginals() {
        let mut rs = Vec::new();
        for i in 0..10 {
            rs.push(LocationResult {
                bin: SlumpBin::Under150,
                true_side: Some(Side::Right),
                detected: if i == 0 { None } else { Some(Side::Right) },
            });
        }
        rs.push(LocationResult { bin: SlumpBin::Over240, true_side: None, detected: None });
        let g = location_grid(&rs);
        assert_eq!(g.cell(1, SlumpBin::Under150), Some(0.9));
        assert_eq!(g.cell(2, SlumpBin::Over240), Some(1.0));
        assert_eq!(g.cell(0, SlumpBin::Under150), None);
        assert_eq!(g.overall(), Some(10.0 / 11.0));
        let table = g.to_table();
        assert!(table.contains("90.00"));
        assert_eq!(table.lines().count(), 5);
    }
}
