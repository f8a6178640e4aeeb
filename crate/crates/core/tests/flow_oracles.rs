mod common;

use common::noise_frame;
use pourwatch::detect::Side;
use pourwatch::frame::Frame;
use pourwatch::geometry::Point2;
use pourwatch::optflow::{lk_flow, temporal_gradient, FlowConfig};
use pourwatch::sim::{grid_scene, render, GridConfig, PourSide};
use pourwatch::slump::SlumpBin;
use rand::Rng;

const SIZE: u32 = 96;

fn interior_points() -> [Point2; 3] {
    [Point2::new(48.0, 48.0), Point2::new(30.0, 60.0), Point2::new(64.0, 35.0)]
}

#[test]
fn integer_shifts_are_recovered() {
    let cfg = FlowConfig::default();
    for seed in 0..20u64 {
        let prev = noise_frame(SIZE, SIZE, seed, 0, 0, 0);
        for dx in -2..=2 {
            for dy in -2..=2 {
                let curr = noise_frame(SIZE, SIZE, seed, dx, dy, 1);
                for p in interior_points() {
                    let r = lk_flow(&prev, &curr, p, &cfg).unwrap();
                    assert!(r.is_ok(), "seed {seed} shift ({dx},{dy}) lost at {p:?}");
                    let err = (r.flow.u - dx as f64).abs().max((r.flow.v - dy as f64).abs());
                    assert!(err <= 0.2, "seed {seed} shift ({dx},{dy}) at {p:?}: {:?}", r.flow);
                }
            }
        }
    }
}

#[test]
fn flow_is_bit_identical_across_calls() {
    let cfg = FlowConfig::default();
    let prev = noise_frame(SIZE, SIZE, 3, 0, 0, 0);
    let curr = noise_frame(SIZE, SIZE, 3, 1, -2, 1);
    let a = lk_flow(&prev, &curr, Point2::new(47.3, 51.8), &cfg).unwrap();
    let b = lk_flow(&prev.clone(), &curr.clone(), Point2::new(47.3, 51.8), &cfg).unwrap();
    assert_eq!(a.flow.u.to_bits(), b.flow.u.to_bits());
    assert_eq!(a.flow.v.to_bits(), b.flow.v.to_bits());
    assert_eq!(a.eig_min.to_bits(), b.eig_min.to_bits());
}

fn scaled(f: &Frame, k: f32) -> Frame {
    Frame::new(f.width(), f.height(), f.index(), f.luma().iter().map(|v| v * k).collect()).unwrap()
}

#[test]
fn doubling_contrast_leaves_flow_unchanged() {
    let cfg = FlowConfig::default();
    let mut rng = common::rng(21);
    for seed in 0..10u64 {
        // Values in [0, 0.5] so the doubled frame stays within [0, 1].
        let prev = scaled(&noise_frame(SIZE, SIZE, seed, 0, 0, 0), 0.5);
        let curr = scaled(&noise_frame(SIZE, SIZE, seed, rng.gen_range(-2..=2), rng.gen_range(-2..=2), 1), 0.5);
        let p = Point2::new(rng.gen_range(35.0..60.0), rng.gen_range(35.0..60.0));
        let base = lk_flow(&prev, &curr, p, &cfg).unwrap();
        let double = lk_flow(&scaled(&prev, 2.0), &scaled(&curr, 2.0), p, &cfg).unwrap();
        assert!((base.flow.u - double.flow.u).abs() <= 1e-9);
        assert!((base.flow.v - double.flow.v).abs() <= 1e-9);
    }
}

/// Normalized cross-correlation of `b` shifted by `(sx, sy)` against `a` over
/// the patch `[x0, x0 + w) x [y0, y0 + h)`.
fn ncc(a: &Frame, b: &Frame, x0: u32, y0: u32, w: u32, h: u32, sx: i32, sy: i32) -> f64 {
    let mut pa = Vec::new();
    let mut pb = Vec::new();
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            pa.push(a.get(x, y) as f64);
            pb.push(b.get((x as i32 + sx) as u32, (y as i32 + sy) as u32) as f64);
        }
    }
    let n = pa.len() as f64;
    let (ma, mb) = (pa.iter().sum::<f64>() / n, pb.iter().sum::<f64>() / n);
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in pa.iter().zip(&pb) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    num / (va * vb).sqrt()
}

fn parabola_peak(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom == 0.0 {
        0.0
    } else {
        0.5 * (left - right) / denom
    }
}

/// Displacement of the pattern from `a` to `b` by exhaustive integer search
/// plus a parabolic fit on each axis.
fn correlate(a: &Frame, b: &Frame, x0: u32, y0: u32, w: u32, h: u32) -> (f64, f64) {
    let r = 6;
    let mut best = (0, 0, f64::NEG_INFINITY);
    for sy in -r..=r {
        for sx in -r..=r {
            let c = ncc(a, b, x0, y0, w, h, sx, sy);
            if c > best.2 {
                best = (sx, sy, c);
            }
        }
    }
    let (sx, sy, c) = best;
    let fx = parabola_peak(ncc(a, b, x0, y0, w, h, sx - 1, sy), c, ncc(a, b, x0, y0, w, h, sx + 1, sy));
    let fy = parabola_peak(ncc(a, b, x0, y0, w, h, sx, sy - 1), c, ncc(a, b, x0, y0, w, h, sx, sy + 1));
    (sx as f64 + fx, sy as f64 + fy)
}

#[test]
fn simulator_shift_matches_spec_speed() {
    let cfg = GridConfig::default();
    for (k, bin) in SlumpBin::ALL.into_iter().enumerate() {
        let spec = grid_scene(&cfg, PourSide::Left, bin, k as u64);
        let pour = spec.pour(Side::Left).unwrap();
        let chute = spec.chute(Side::Left);
        let (nx, ny) = chute.downhill_axis();
        let t = pour.start_frame + 10;
        let a = render(&spec, t);
        let b = render(&spec, t + 1);
        // A patch well inside the chute, clear of the outflow.
        let (pw, ph) = (40u32, 24u32);
        let x0 = (chute.cx - pw as f64 / 2.0 - 8.0 * nx).round() as u32;
        let y0 = (chute.cy - ph as f64 / 2.0 - 8.0 * ny).round() as u32;
        let (u, v) = correlate(&a, &b, x0, y0, pw, ph);
        let (eu, ev) = (pour.flow_speed * nx, pour.flow_speed * ny);
        assert!(
            (u - eu).abs() <= 0.25 && (v - ev).abs() <= 0.25,
            "{bin:?}: measured ({u:.3}, {v:.3}) expected ({eu:.3}, {ev:.3})"
        );
    }
}

#[test]
fn static_scene_has_zero_temporal_gradient() {
    let cfg = GridConfig::default();
    for seed in 0..3 {
        let spec = grid_scene(&cfg, PourSide::None, SlumpBin::S180to210, seed);
        let mut prev = render(&spec, 0);
        for t in 1..spec.duration.min(40) {
            let curr = render(&spec, t);
            let g = temporal_gradient(&prev, &curr).unwrap();
            for y in 0..curr.height() {
                for x in 0..curr.width() {
                    assert_eq!(g.get(x, y), 0.0);
                }
            }
            prev = curr;
        }
    }
}

#[test]
fn render_is_bit_identical() {
    let spec = grid_scene(&GridConfig::default(), PourSide::Right, SlumpBin::Over240, 4);
    for t in [0, 45, 90, 149] {
        assert_eq!(render(&spec, t).luma(), render(&spec.clone(), t).luma());
    }
}
