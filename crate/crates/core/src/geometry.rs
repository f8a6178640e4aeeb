//! Rotated-box geometry: bottom-edge construction, signed distances, the
//! crossing predicate, corners, rotated IoU and upright crop rectangles.
//!
//! Conventions used throughout the crate:
//!
//! * Image coordinates, `y` grows downward.
//! * `theta_deg` is the angle of the box's width axis measured from the image
//!   `x` axis, normalized to `[0, 180)`. The width axis is `(cos θ, sin θ)` and
//!   the height axis is `(-sin θ, cos θ)`, both taken literally in image
//!   coordinates.
//! * `w` is the extent along the width axis, `h` along the height axis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Constant added to the slope denominator of the bottom-edge line.
pub const SLOPE_EPSILON: f64 = 1e-6;

/// Below this `|x2 - x1|` the slope/intercept form is considered degenerate and
/// [`EdgeLine::side_distance`] falls back to a cross-product side test.
pub const NEAR_VERTICAL_DX: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid rotated box: {0}")]
    InvalidBox(String),
    #[error("crop rectangle is empty after clamping to a {frame_w}x{frame_h} frame")]
    EmptyCrop { frame_w: u32, frame_h: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// A rotated rectangle `(cx, cy, w, h, θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta_deg: f64,
}

impl RotatedBox {
    /// Builds a box, normalizing `theta_deg` into `[0, 180)`.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta_deg: f64) -> Result<Self, GeometryError> {
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::InvalidBox(format!("non-finite center ({cx}, {cy})")));
        }
        if !(w.is_finite() && w > 0.0 && h.is_finite() && h > 0.0) {
            return Err(GeometryError::InvalidBox(format!("non-positive size {w}x{h}")));
        }
        if !theta_deg.is_finite() {
            return Err(GeometryError::InvalidBox(format!("non-finite angle {theta_deg}")));
        }
        Ok(Self { cx, cy, w, h, theta_deg: normalize_theta(theta_deg) })
    }

    /// Checks the invariants of a box that was built field by field (e.g. deserialized).
    pub fn validated(self) -> Result<Self, GeometryError> {
        Self::new(self.cx, self.cy, self.w, self.h, self.theta_deg)
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Unit vector along the width axis.
    pub fn width_axis(&self) -> (f64, f64) {
        let t = deg_to_rad(self.theta_deg);
        (t.cos(), t.sin())
    }

    /// Unit vector along the height axis, oriented so it points down the image
    /// (non-negative `y` component). Concrete flows along this direction and
    /// leaves the chute through the bottom edge.
    pub fn downhill_axis(&self) -> (f64, f64) {
        let (c, s) = self.width_axis();
        let (nx, ny) = (-s, c);
        if ny < 0.0 || (ny == 0.0 && nx < 0.0) {
            (-nx, -ny)
        } else {
            (nx, ny)
        }
    }
}

/// Maps any finite angle into `[0, 180)`.
pub fn normalize_theta(theta_deg: f64) -> f64 {
    let t = theta_deg.rem_euclid(180.0);
    // rem_euclid can round up to exactly 180.0 for tiny negative inputs.
    if t >= 180.0 {
        0.0
    } else {
        t
    }
}

pub fn deg_to_rad(theta_deg: f64) -> f64 {
    theta_deg * std::f64::consts::PI / 180.0
}

/// The bottom-edge line `y = m x + b` together with the endpoints it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeLine {
    pub m: f64,
    pub b: f64,
    pub p1: Point2,
    pub p2: Point2,
}

impl EdgeLine {
    /// Line through `p1` and `p2` with the epsilon-guarded slope.
    pub fn through(p1: Point2, p2: Point2) -> Self {
        let m = (p2.y - p1.y) / (p2.x - p1.x + SLOPE_EPSILON);
        let b = p1.y - m * p1.x;
        Self { m, b, p1, p2 }
    }

    pub fn is_near_vertical(&self) -> bool {
        (self.p2.x - self.p1.x).abs() < NEAR_VERTICAL_DX
    }

    /// Signed vertical distance where it is well conditioned, otherwise the
    /// perpendicular cross-product distance.
    ///
    /// On non-degenerate lines the sign always equals that of
    /// [`signed_distance`]. On near-vertical lines the endpoints are ordered so
    /// that `x2 >= x1` (ties broken by `y2 > y1`) and the sign is that of
    /// `(p2 - p1) x (p - p1)`.
    pub fn side_distance(&self, p: Point2) -> f64 {
        if !self.is_near_vertical() {
            return signed_distance(p, self);
        }
        let (a, b) = if self.p2.x > self.p1.x || (self.p2.x == self.p1.x && self.p2.y >= self.p1.y) {
            (self.p1, self.p2)
        } else {
            (self.p2, self.p1)
        };
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len = dx.hypot(dy);
        (dx * (p.y - a.y) - dy * (p.x - a.x)) / len
    }
}

/// Bottom edge of a box exactly as constructed from its center and width axis.
pub fn bottom_edge(bx: &RotatedBox) -> EdgeLine {
    bottom_edge_with_offset(bx, false)
}

/// Bottom edge, optionally shifted by `h/2` along the downhill axis so that it
/// coincides with the lower side of the rectangle instead of passing through
/// the center.
pub fn bottom_edge_with_offset(bx: &RotatedBox, offset_half_height: bool) -> EdgeLine {
    let (c, s) = bx.width_axis();
    let half = bx.w / 2.0;
    let (ox, oy) = if offset_half_height {
        let (nx, ny) = bx.downhill_axis();
        (nx * bx.h / 2.0, ny * bx.h / 2.0)
    } else {
        (0.0, 0.0)
    };
    let p1 = Point2::new(bx.cx + ox + half * c, bx.cy + oy + half * s);
    let p2 = Point2::new(bx.cx + ox - half * c, bx.cy + oy - half * s);
    EdgeLine::through(p1, p2)
}

/// `p.y - (m p.x + b)`: positive below the line, negative above it.
pub fn signed_distance(p: Point2, line: &EdgeLine) -> f64 {
    p.y - (line.m * p.x + line.b)
}

/// The crossing predicate: the two distances differ in sign or one is zero.
pub fn crossed(d_t: f64, d_prev: f64) -> bool {
    d_t * d_prev <= 0.0
}

/// The four vertices, counter-clockwise in a y-up frame (positive shoelace area
/// in image coordinates).
pub fn corners(bx: &RotatedBox) -> [Point2; 4] {
    let (c, s) = bx.width_axis();
    let (hw, hh) = (bx.w / 2.0, bx.h / 2.0);
    let (ux, uy) = (c * hw, s * hw);
    let (vx, vy) = (-s * hh, c * hh);
    let pts = [
        Point2::new(bx.cx - ux - vx, bx.cy - uy - vy),
        Point2::new(bx.cx + ux - vx, bx.cy + uy - vy),
        Point2::new(bx.cx + ux + vx, bx.cy + uy + vy),
        Point2::new(bx.cx - ux + vx, bx.cy - uy + vy),
    ];
    if signed_area(&pts) < 0.0 {
        [pts[0], pts[3], pts[2], pts[1]]
    } else {
        pts
    }
}

/// Shoelace formula.
pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Sutherland-Hodgman clip of `subject` against a convex, positively oriented `clip`.
fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut output: Vec<Point2> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, a, b));
            }
        }
    }
    output
}

fn intersect(p: Point2, q: Point2, a: Point2, b: Point2) -> Point2 {
    let cp = cross(a, b, p);
    let cq = cross(a, b, q);
    let t = cp / (cp - cq);
    Point2::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Area of the intersection of two rotated boxes.
pub fn intersection_area(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let pa = corners(a);
    let pb = corners(b);
    signed_area(&clip_convex(&pa, &pb)).max(0.0)
}

/// Intersection over union of two rotated boxes via exact convex clipping.
pub fn rotated_iou(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Axis-aligned pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UprightRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl UprightRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }
}

/// Unclamped axis-aligned bounds `(min_x, min_y, max_x, max_y)` of the box corners.
pub fn corner_bounds(bx: &RotatedBox) -> (f64, f64, f64, f64) {
    corners(bx).iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
    )
}

/// Upright rectangle enclosing the rotated box: floor on minima, ceil on
/// maxima, then clamped to the frame.
pub fn enclosing_upright(bx: &RotatedBox, frame_w: u32, frame_h: u32) -> Result<UprightRect, GeometryError> {
    let (min_x, min_y, max_x, max_y) = corner_bounds(bx);
    let clamp = |v: f64, hi: u32| v.max(0.0).min(hi as f64) as u32;
    let rect = UprightRect {
        x0: clamp(min_x.floor(), frame_w),
        y0: clamp(min_y.floor(), frame_h),
        x1: clamp(max_x.ceil(), frame_w),
        y1: clamp(max_y.ceil(), frame_h),
    };
    if rect.x0 >= rect.x1 || rect.y0 >= rect.y1 {
        return Err(GeometryError::EmptyCrop { frame_w, frame_h });
    }
    Ok(rect)
}
