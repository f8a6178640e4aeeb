#![allow(dead_code)]

//! Reference implementations that share no code with the library.

use pourwatch::geometry::{Point2, RotatedBox};
use pourwatch::metrics::{ScoredBox, TruthBox};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Endpoints of a box's bottom edge built directly from trigonometry.
pub fn edge_endpoints(b: &RotatedBox, offset: bool) -> (Point2, Point2) {
    let t = b.theta_deg.to_radians();
    let (ux, uy) = (t.cos(), t.sin());
    // Normal to the width axis, flipped to point down the image.
    let (mut nx, mut ny) = (-uy, ux);
    if ny < 0.0 || (ny == 0.0 && nx < 0.0) {
        nx = -nx;
        ny = -ny;
    }
    let k = if offset { b.h / 2.0 } else { 0.0 };
    let (mx, my) = (b.cx + k * nx, b.cy + k * ny);
    let hw = b.w / 2.0;
    (Point2::new(mx + hw * ux, my + hw * uy), Point2::new(mx - hw * ux, my - hw * uy))
}

/// Side of `p` relative to the directed segment `a -> b` (z of the cross product).
pub fn segment_side(a: Point2, b: Point2, p: Point2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Whether the step `prev -> curr` ends on the other side of (or on) the line.
pub fn crosses_segment_line(a: Point2, b: Point2, prev: Point2, curr: Point2) -> bool {
    segment_side(a, b, prev) * segment_side(a, b, curr) <= 0.0
}

/// Membership by projection onto the box axes.
pub fn inside(b: &RotatedBox, p: Point2) -> bool {
    let t = b.theta_deg.to_radians();
    let (dx, dy) = (p.x - b.cx, p.y - b.cy);
    let along = dx * t.cos() + dy * t.sin();
    let across = -dx * t.sin() + dy * t.cos();
    along.abs() <= b.w / 2.0 && across.abs() <= b.h / 2.0
}

fn extent(b: &RotatedBox) -> (f64, f64) {
    let t = b.theta_deg.to_radians();
    let ex = (b.w * t.cos()).abs() / 2.0 + (b.h * t.sin()).abs() / 2.0;
    let ey = (b.w * t.sin()).abs() / 2.0 + (b.h * t.cos()).abs() / 2.0;
    (ex, ey)
}

/// Monte-Carlo IoU over the joint bounding rectangle of both boxes.
pub fn monte_carlo_iou(a: &RotatedBox, b: &RotatedBox, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let (ax, ay) = extent(a);
    let (bx, by) = extent(b);
    let x0 = (a.cx - ax).min(b.cx - bx);
    let x1 = (a.cx + ax).max(b.cx + bx);
    let y0 = (a.cy - ay).min(b.cy - by);
    let y1 = (a.cy + ay).max(b.cy + by);
    let (mut both, mut either) = (0u64, 0u64);
    for _ in 0..samples {
        let p = Point2::new(rng.gen_range(x0..x1), rng.gen_range(y0..y1));
        let (ia, ib) = (inside(a, p), inside(b, p));
        both += (ia && ib) as u64;
        either += (ia || ib) as u64;
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// One random crossing-geometry case.
#[derive(Debug, Clone, Copy)]
pub struct CrossingCase {
    pub bx: RotatedBox,
    pub offset: bool,
    pub prev: Point2,
    pub curr: Point2,
}

/// Boxes with uniformly random angle (plus a slice close to vertical) and a
/// two-point trajectory straddling the bottom-edge line about half the time.
pub fn crossing_case(rng: &mut ChaCha8Rng) -> CrossingCase {
    let theta = if rng.gen_bool(0.02) {
        90.0 + rng.gen_range(-0.5..0.5)
    } else {
        rng.gen_range(0.0..180.0)
    };
    let bx = RotatedBox::new(
        rng.gen_range(0.0..1920.0),
        rng.gen_range(0.0..1080.0),
        rng.gen_range(20.0..400.0),
        rng.gen_range(20.0..300.0),
        theta,
    )
    .unwrap();
    let offset = rng.gen_bool(0.5);
    let (a, b) = edge_endpoints(&bx, offset);
    let (ux, uy) = ((b.x - a.x) / bx.w, (b.y - a.y) / bx.w);
    let (nx, ny) = (-uy, ux);
    let mid = Point2::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
    let s = rng.gen_range(-bx.w..bx.w);
    let q = Point2::new(mid.x + s * ux, mid.y + s * uy);
    let at = |along: f64, across: f64| Point2::new(q.x + along * ux + across * nx, q.y + along * uy + across * ny);
    let prev = at(0.0, rng.gen_range(-20.0..20.0));
    let curr = at(rng.gen_range(-3.0..3.0), rng.gen_range(-20.0..20.0));
    CrossingCase { bx, offset, prev, curr }
}

/// True-positive flags in confidence rank order, found by enumerating every injective
/// assignment of ranked predictions to truths (or to nothing) and keeping the
/// one in which each prediction holds the best truth still free at its turn.
pub fn brute_force_tp(preds: &[ScoredBox], gts: &[TruthBox], iou_t: f64, iou: impl Fn(usize, usize) -> f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].confidence.partial_cmp(&preds[i].confidence).unwrap().then(i.cmp(&j)));

    // Enumerate every assignment: entry k is the truth used by the k-th ranked
    // prediction, or None.
    let mut best: Option<Vec<Option<usize>>> = None;
    let mut current = vec![None; order.len()];
    enumerate(0, &order, preds, gts, iou_t, &iou, &mut current, &mut best);
    let assignment = best.expect("exactly one assignment is greedy");
    assignment.iter().map(Option::is_some).collect()
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    k: usize,
    order: &[usize],
    preds: &[ScoredBox],
    gts: &[TruthBox],
    iou_t: f64,
    iou: &impl Fn(usize, usize) -> f64,
    current: &mut Vec<Option<usize>>,
    best: &mut Option<Vec<Option<usize>>>,
) {
    if k == order.len() {
        if consistent(order, preds, gts, iou_t, iou, current) {
            *best = Some(current.clone());
        }
        return;
    }
    for choice in std::iter::once(None).chain((0..gts.len()).map(Some)) {
        if let Some(g) = choice {
            if current[..k].contains(&Some(g)) {
                continue;
            }
        }
        current[k] = choice;
        enumerate(k + 1, order, preds, gts, iou_t, iou, current, best);
    }
    current[k] = None;
}

/// An assignment is the greedy one when every ranked prediction took the best
/// truth still free at its turn (same frame, IoU at threshold, lowest index on
/// ties), or nothing if no such truth existed.
fn consistent(
    order: &[usize],
    preds: &[ScoredBox],
    gts: &[TruthBox],
    iou_t: f64,
    iou: &impl Fn(usize, usize) -> f64,
    assignment: &[Option<usize>],
) -> bool {
    for (rank, &p) in order.iter().enumerate() {
        let taken: Vec<usize> = assignment[..rank].iter().flatten().copied().collect();
        let mut want: Option<(usize, f64)> = None;
        for g in 0..gts.len() {
            if taken.contains(&g) || gts[g].frame != preds[p].frame {
                continue;
            }
            let v = iou(p, g);
            if v >= iou_t && want.map_or(true, |(_, bv)| v > bv) {
                want = Some((g, v));
            }
        }
        if assignment[rank] != want.map(|(g, _)| g) {
            return false;
        }
    }
    true
}

/// 101-point interpolated AP from ranked TP flags, written from the textbook
/// definition: max precision at recall at least r, averaged over r in 0..=1.
pub fn interpolated_ap(ranked_tp: &[bool], num_gt: usize) -> f64 {
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (i, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        points.push((tp as f64 / num_gt as f64, tp as f64 / (i + 1) as f64));
    }
    let mut total = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let p = points.iter().filter(|(rc, _)| *rc >= r).map(|(_, p)| *p).fold(0.0, f64::max);
        total += p;
    }
    total / 101.0
}
