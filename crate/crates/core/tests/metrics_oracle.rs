mod common;

use common::oracles::{brute_force_tp, interpolated_ap};
use pourwatch::geometry::{rotated_iou, RotatedBox};
use pourwatch::metrics::{
    accuracy_f1, average_precision, coco_thresholds, map_50_95, precision, ScoredBox, TruthBox, PRECISION_CONF,
};
use pourwatch::slump::SlumpBin;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_box(rng: &mut ChaCha8Rng) -> RotatedBox {
    RotatedBox::new(
        rng.gen_range(20.0..80.0),
        rng.gen_range(20.0..80.0),
        rng.gen_range(10.0..40.0),
        rng.gen_range(10.0..40.0),
        rng.gen_range(0.0..180.0),
    )
    .unwrap()
}

fn perturbed(rng: &mut ChaCha8Rng, b: &RotatedBox) -> RotatedBox {
    let s = rng.gen_range(0.0..6.0);
    RotatedBox::new(
        b.cx + rng.gen_range(-s..=s),
        b.cy + rng.gen_range(-s..=s),
        b.w * rng.gen_range(0.85..1.15),
        b.h * rng.gen_range(0.85..1.15),
        b.theta_deg + rng.gen_range(-8.0..8.0),
    )
    .unwrap()
}

/// At most 6 predictions and 4 truths over two frames; confidences on a
/// coarse grid so ties occur.
fn instance(rng: &mut ChaCha8Rng) -> (Vec<ScoredBox>, Vec<TruthBox>) {
    let gts: Vec<TruthBox> =
        (0..rng.gen_range(1..=4)).map(|_| TruthBox { frame: rng.gen_range(0..2), bbox: random_box(rng) }).collect();
    let preds = (0..rng.gen_range(0..=6))
        .map(|_| {
            let (frame, bbox) = if rng.gen_bool(0.7) {
                let g = gts.choose(rng).unwrap();
                (g.frame, perturbed(rng, &g.bbox))
            } else {
                (rng.gen_range(0..2), random_box(rng))
            };
            ScoredBox { frame, bbox, confidence: rng.gen_range(0..=10) as f64 / 10.0 }
        })
        .collect();
    (preds, gts)
}

fn oracle_map(preds: &[ScoredBox], gts: &[TruthBox]) -> f64 {
    let mut sum = 0.0;
    for t in coco_thresholds() {
        let ranked = brute_force_tp(preds, gts, t, |p, g| rotated_iou(&preds[p].bbox, &gts[g].bbox));
        sum += interpolated_ap(&ranked, gts.len());
    }
    sum / 10.0
}

#[test]
fn map_matches_exhaustive_oracle() {
    let mut rng = common::rng(41);
    let mut nontrivial = 0;
    for i in 0..500 {
        let (preds, gts) = instance(&mut rng);
        let got = map_50_95(&preds, &gts).unwrap();
        let want = oracle_map(&preds, &gts);
        assert_eq!(got.to_bits(), want.to_bits(), "instance {i}: {got} vs {want}");
        nontrivial += (got > 0.0 && got < 1.0) as usize;
    }
    assert!(nontrivial > 100, "{nontrivial}");
}

#[test]
fn ap_survives_order_preserving_rescaling() {
    let mut rng = common::rng(42);
    for _ in 0..500 {
        let (preds, gts) = instance(&mut rng);
        let rescaled: Vec<ScoredBox> =
            preds.iter().map(|p| ScoredBox { confidence: 0.3 * p.confidence.powi(3) + 0.01, ..*p }).collect();
        assert_eq!(map_50_95(&preds, &gts).unwrap(), map_50_95(&rescaled, &gts).unwrap());
        for t in [0.5, 0.75] {
            assert_eq!(average_precision(&preds, &gts, t).unwrap(), average_precision(&rescaled, &gts, t).unwrap());
        }
    }
}

#[test]
fn precision_bounds_and_perfect_case() {
    let mut rng = common::rng(43);
    for _ in 0..500 {
        let (preds, gts) = instance(&mut rng);
        if let Ok(p) = precision(&preds, &gts, 0.5, PRECISION_CONF) {
            assert!((0.0..=1.0).contains(&p));
        }
        let exact: Vec<ScoredBox> =
            gts.iter().map(|g| ScoredBox { frame: g.frame, bbox: g.bbox, confidence: 0.9 }).collect();
        assert_eq!(precision(&exact, &gts, 0.5, PRECISION_CONF).unwrap(), 1.0);
        assert_eq!(map_50_95(&exact, &gts).unwrap(), 1.0);
    }
}

#[test]
fn accuracy_ignores_joint_permutation() {
    let mut rng = common::rng(44);
    for _ in 0..500 {
        let n = rng.gen_range(1..30);
        let mut pairs: Vec<(SlumpBin, SlumpBin)> = (0..n)
            .map(|_| (SlumpBin::ALL[rng.gen_range(0..5)], SlumpBin::ALL[rng.gen_range(0..5)]))
            .collect();
        let (p, t): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let base = accuracy_f1(&p, &t).unwrap();
        pairs.shuffle(&mut rng);
        let (p, t): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let again = accuracy_f1(&p, &t).unwrap();
        assert_eq!(base.0, again.0);
        assert!((base.1 - again.1).abs() <= 1e-12);
    }
}

#[test]
fn six_sample_f1() {
    use SlumpBin::*;
    let truth = [Under150, Under150, S150to180, S150to180, S180to210, S180to210];
    let pred = [Under150, S150to180, S150to180, S150to180, S180to210, Under150];
    let (acc, f1) = accuracy_f1(&pred, &truth).unwrap();
    assert!((acc - 4.0 / 6.0).abs() < 1e-12);
    // Per-class F1 0.5, 0.8 and 2/3; bins without support are left out.
    assert!((f1 - (0.5 + 0.8 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
}
