//! Sparse Lucas-Kanade optical flow.
//!
//! The brightness-constancy constraint `Ix u + Iy v + It = 0` is stacked over a
//! square window around the tracked point and solved in the least-squares
//! sense through the 2x2 normal equations. The solve is refined iteratively by
//! warping the window of the current frame with the running estimate, which
//! keeps shifts of a few pixels from being underestimated. An optional
//! coarse-to-fine pyramid extends the capture range.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Frame, Grid};
use crate::geometry::Point2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("frame dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("window of half-size {half_window} around ({x:.2}, {y:.2}) leaves the {width}x{height} frame")]
    OutOfBounds { x: f64, y: f64, half_window: u32, width: u32, height: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowVector {
    pub u: f64,
    pub v: f64,
}

impl FlowVector {
    pub fn magnitude(&self) -> f64 {
        self.u.hypot(self.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStatus {
    Ok,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowResult {
    pub status: FlowStatus,
    /// Only meaningful when `status` is `Ok`.
    pub flow: FlowVector,
    /// Mean `|Ix u + Iy v + It|` over the window with the unwarped `It`.
    pub residual: f64,
    /// Smallest eigenvalue of the structure tensor.
    pub eig_min: f64,
}

impl FlowResult {
    pub fn is_ok(&self) -> bool {
        self.status == FlowStatus::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub half_window: u32,
    pub max_iterations: u32,
    /// Refinement stops once the update norm drops below this (pixels).
    pub min_update: f64,
    /// Smallest acceptable structure-tensor eigenvalue.
    pub min_eigenvalue: f64,
    pub pyramid: bool,
    pub pyramid_levels: u32,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            half_window: 10,
            max_iterations: 10,
            min_update: 0.01,
            min_eigenvalue: 1e-4,
            pyramid: false,
            pyramid_levels: 3,
        }
    }
}

/// Central differences in the interior, one-sided differences on the border.
pub fn spatial_gradients(f: &Frame) -> (Grid, Grid) {
    let (w, h) = (f.width(), f.height());
    let mut gx = Grid::zeros(w, h);
    let mut gy = Grid::zeros(w, h);
    let at = |x: u32, y: u32| f.get(x, y) as f64;
    for y in 0..h {
        for x in 0..w {
            let dx = if w == 1 {
                0.0
            } else if x == 0 {
                at(1, y) - at(0, y)
            } else if x == w - 1 {
                at(x, y) - at(x - 1, y)
            } else {
                (at(x + 1, y) - at(x - 1, y)) / 2.0
            };
            let dy = if h == 1 {
                0.0
            } else if y == 0 {
                at(x, 1) - at(x, 0)
            } else if y == h - 1 {
                at(x, y) - at(x, y - 1)
            } else {
                (at(x, y + 1) - at(x, y - 1)) / 2.0
            };
            gx.set(x, y, dx);
            gy.set(x, y, dy);
        }
    }
    (gx, gy)
}

/// Per-pixel `I_curr - I_prev`.
pub fn temporal_gradient(prev: &Frame, curr: &Frame) -> Result<Grid, FlowError> {
    check_dims(prev, curr)?;
    let data = prev
        .luma()
        .iter()
        .zip(curr.luma())
        .map(|(&a, &b)| b as f64 - a as f64)
        .collect();
    Ok(Grid { width: prev.width(), height: prev.height(), data })
}

fn check_dims(a: &Frame, b: &Frame) -> Result<(), FlowError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(FlowError::DimensionMismatch {
            a: (a.width(), a.height()),
            b: (b.width(), b.height()),
        });
    }
    Ok(())
}

fn check_margin(f: &Frame, p: Point2, half_window: u32) -> Result<(), FlowError> {
    let margin = half_window as f64 + 1.0;
    let inside = p.is_finite()
        && p.x >= margin
        && p.y >= margin
        && p.x <= f.width() as f64 - 1.0 - margin
        && p.y <= f.height() as f64 - 1.0 - margin;
    if inside {
        Ok(())
    } else {
        Err(FlowError::OutOfBounds {
            x: p.x,
            y: p.y,
            half_window,
            width: f.width(),
            height: f.height(),
        })
    }
}

/// Smallest eigenvalue of the symmetric matrix `[a b; b c]`.
pub fn min_eigenvalue(a: f64, b: f64, c: f64) -> f64 {
    let mean = (a + c) / 2.0;
    let diff = (a - c) / 2.0;
    mean - diff.hypot(b)
}

/// Flow at `p` with the default iteration settings and the given window.
pub fn lk_flow_at(prev: &Frame, curr: &Frame, p: Point2, half_window: u32) -> Result<FlowResult, FlowError> {
    let cfg = FlowConfig { half_window, ..FlowConfig::default() };
    lk_flow(prev, curr, p, &cfg)
}

/// Flow at `p` under the full configuration, including the optional pyramid.
pub fn lk_flow(prev: &Frame, curr: &Frame, p: Point2, cfg: &FlowConfig) -> Result<FlowResult, FlowError> {
    check_dims(prev, curr)?;
    check_margin(prev, p, cfg.half_window)?;
    if cfg.pyramid && cfg.pyramid_levels > 1 {
        return Ok(pyramidal(prev, curr, p, cfg));
    }
    Ok(refine(prev, curr, p, FlowVector::default(), cfg, true))
}

/// Advances `p` by its flow. A lost point stays where it was.
pub fn track(prev: &Frame, curr: &Frame, p: Point2, cfg: &FlowConfig) -> Result<(FlowResult, Point2), FlowError> {
    let res = lk_flow(prev, curr, p, cfg)?;
    let next = match res.status {
        FlowStatus::Ok => Point2::new(p.x + res.flow.u, p.y + res.flow.v),
        FlowStatus::Lost => p,
    };
    Ok((res, next))
}

struct Template {
    gx: Vec<f64>,
    gy: Vec<f64>,
    values: Vec<f64>,
    offsets: Vec<(f64, f64)>,
    g_xx: f64,
    g_xy: f64,
    g_yy: f64,
}

fn template(prev: &Frame, p: Point2, half_window: u32) -> Template {
    let hw = half_window as i64;
    let n = ((2 * hw + 1) * (2 * hw + 1)) as usize;
    let mut t = Template {
        gx: Vec::with_capacity(n),
        gy: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        offsets: Vec::with_capacity(n),
        g_xx: 0.0,
        g_xy: 0.0,
        g_yy: 0.0,
    };
    for j in -hw..=hw {
        for i in -hw..=hw {
            let (x, y) = (p.x + i as f64, p.y + j as f64);
            let gx = (prev.sample(x + 1.0, y) - prev.sample(x - 1.0, y)) / 2.0;
            let gy = (prev.sample(x, y + 1.0) - prev.sample(x, y - 1.0)) / 2.0;
            t.g_xx += gx * gx;
            t.g_xy += gx * gy;
            t.g_yy += gy * gy;
            t.gx.push(gx);
            t.gy.push(gy);
            t.values.push(prev.sample(x, y));
            t.offsets.push((i as f64, j as f64));
        }
    }
    t
}

/// Iterative solve at one scale starting from `init`. `strict` enables the
/// eigenvalue and divergence checks that decide `Lost`.
fn refine(prev: &Frame, curr: &Frame, p: Point2, init: FlowVector, cfg: &FlowConfig, strict: bool) -> FlowResult {
    let t = template(prev, p, cfg.half_window);
    let eig_min = min_eigenvalue(t.g_xx, t.g_xy, t.g_yy);
    let det = t.g_xx * t.g_yy - t.g_xy * t.g_xy;
    let lost = |residual: f64| FlowResult {
        status: FlowStatus::Lost,
        flow: FlowVector::default(),
        residual,
        eig_min,
    };
    if !(eig_min >= cfg.min_eigenvalue) || det <= 0.0 {
        if strict {
            return lost(f64::NAN);
        }
        return FlowResult { status: FlowStatus::Ok, flow: init, residual: f64::NAN, eig_min };
    }

    let margin = cfg.half_window as f64 + 1.0;
    let (w, h) = (curr.width() as f64, curr.height() as f64);
    let mut d = init;
    let mut first_it: Option<Vec<f64>> = None;
    for _ in 0..cfg.max_iterations.max(1) {
        let (mut bx, mut by) = (0.0, 0.0);
        let mut its = Vec::with_capacity(if first_it.is_none() { t.values.len() } else { 0 });
        for k in 0..t.values.len() {
            let (ox, oy) = t.offsets[k];
            let it = curr.sample(p.x + ox + d.u, p.y + oy + d.v) - t.values[k];
            bx += t.gx[k] * it;
            by += t.gy[k] * it;
            if first_it.is_none() {
                its.push(it);
            }
        }
        if first_it.is_none() {
            first_it = Some(its);
        }
        // G [du dv]^T = -b
        let du = -(t.g_yy * bx - t.g_xy * by) / det;
        let dv = -(t.g_xx * by - t.g_xy * bx) / det;
        let step = du.hypot(dv);
        if !step.is_finite() {
            return lost(f64::NAN);
        }
        d.u += du;
        d.v += dv;
        if strict {
            let (nx, ny) = (p.x + d.u, p.y + d.v);
            let outside = nx < margin || ny < margin || nx > w - 1.0 - margin || ny > h - 1.0 - margin;
            if step > cfg.half_window as f64 || d.magnitude() > cfg.half_window as f64 || outside {
                return lost(f64::NAN);
            }
        }
        if step < cfg.min_update {
            break;
        }
    }

    let its = first_it.unwrap_or_default();
    let residual = its
        .iter()
        .enumerate()
        .map(|(k, it)| (t.gx[k] * d.u + t.gy[k] * d.v + it).abs())
        .sum::<f64>()
        / its.len().max(1) as f64;
    FlowResult { status: FlowStatus::Ok, flow: d, residual, eig_min }
}

fn pyramidal(prev: &Frame, curr: &Frame, p: Point2, cfg: &FlowConfig) -> FlowResult {
    let levels = cfg.pyramid_levels;
    let scale = 1u32 << (levels - 1);
    // Region large enough for the window plus the displacement the coarsest
    // level can absorb, mapped back to full resolution.
    let radius = ((cfg.half_window + 4) * 2 * scale) as f64;
    let x0 = (p.x - radius).floor().max(0.0) as u32;
    let y0 = (p.y - radius).floor().max(0.0) as u32;
    let x1 = ((p.x + radius).ceil() as u32 + 1).min(prev.width());
    let y1 = ((p.y + radius).ceil() as u32 + 1).min(prev.height());
    let rect = crate::geometry::UprightRect { x0, y0, x1, y1 };
    let (Ok(a), Ok(b)) = (prev.crop(&rect), curr.crop(&rect)) else {
        return refine(prev, curr, p, FlowVector::default(), cfg, true);
    };
    let pa = build_pyramid(a, levels);
    let pb = build_pyramid(b, levels);
    let local = Point2::new(p.x - x0 as f64, p.y - y0 as f64);

    let mut guess = FlowVector::default();
    for level in (1..levels as usize).rev() {
        let s = (1u32 << level) as f64;
        let pl = Point2::new(local.x / s, local.y / s);
        let r = refine(&pa[level], &pb[level], pl, guess, cfg, false);
        guess = FlowVector { u: r.flow.u * 2.0, v: r.flow.v * 2.0 };
    }
    // Level 0 runs on the full frames so bounds checks use real coordinates.
    let mut res = refine(prev, curr, p, guess, cfg, true);
    if res.status == FlowStatus::Lost {
        res.flow = FlowVector::default();
    }
    res
}

fn build_pyramid(base: Frame, levels: u32) -> Vec<Frame> {
    let mut out = vec![base];
    for _ in 1..levels {
        let next = downsample(out.last().unwrap());
        out.push(next);
    }
    out
}

/// 5-tap binomial blur followed by 2x decimation.
pub fn downsample(f: &Frame) -> Frame {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = (f.width() as i64, f.height() as i64);
    let luma = f.luma();
    let mut tmp = vec![0f32; luma.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in K.iter().enumerate() {
                let xx = (x + k as i64 - 2).clamp(0, w - 1);
                acc += wt * luma[(y * w + xx) as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let (nw, nh) = ((w + 1) / 2, (h + 1) / 2);
    let mut out = Vec::with_capacity((nw * nh) as usize);
    for y in 0..nh {
        for x in 0..nw {
            let (sx, sy) = (2 * x, 2 * y);
            let mut acc = 0.0;
            for (k, wt) in K.iter().enumerate() {
                let yy = (sy + k as i64 - 2).clamp(0, h - 1);
                acc += wt * tmp[(yy * w + sx) as usize];
            }
            out.push(acc);
        }
    }
    Frame::new(nw as u32, nh as u32, f.index(), out).expect("downsampled dimensions are positive")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_from(w: u32, h: u32, f: impl Fn(f64, f64) -> f64) -> Frame {
        let mut luma = Vec::new();
        for y in 0..h {
            for x in 0..w {
                luma.push(f(x as f64, y as f64) as f32);
            }
        }
        Frame::new(w, h, 0, luma).unwrap()
    }

    /// Smooth, textured test pattern independent of the simulator.
    fn pattern(x: f64, y: f64) -> f64 {
        0.5 + 0.2 * (x * 0.45).sin() * (y * 0.31).cos() + 0.15 * ((x + 2.0 * y) * 0.23).sin()
    }

    #[test]
    fn gradients_of_constant_are_zero() {
        let f = frame_from(8, 8, |_, _| 0.4);
        let (gx, gy) = spatial_gradients(&f);
        assert!(gx.data.iter().chain(&gy.data).all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_of_ramp() {
        let w = 16;
        let f = frame_from(w, 8, |x, _| x / w as f64);
        let (gx, gy) = spatial_gradients(&f);
        for y in 1..7 {
            for x in 1..w - 1 {
                assert!((gx.get(x, y) - 1.0 / w as f64).abs() < 1e-6);
                assert_eq!(gy.get(x, y), 0.0);
            }
        }
    }

    #[test]
    fn gradients_of_product() {
        // I = x*y/16 on a 5x5 grid: Ix = y/16, Iy = x/16.
        let f = frame_from(5, 5, |x, y| x * y / 16.0);
        let (gx, gy) = spatial_gradients(&f);
        for y in 1..4u32 {
            for x in 1..4u32 {
                assert!((gx.get(x, y) - y as f64 / 16.0).abs() < 1e-7);
                assert!((gy.get(x, y) - x as f64 / 16.0).abs() < 1e-7);
            }
        }
        // One-sided on the border: at x = 0, I(1,y) - I(0,y) = y/16.
        assert!((gx.get(0, 3) - 3.0 / 16.0).abs() < 1e-7);
    }

    #[test]
    fn gradients_of_sinusoid_within_ten_percent() {
        let period = 12.0;
        let k = 2.0 * std::f64::consts::PI / period;
        let f = frame_from(48, 48, |x, y| 0.5 + 0.3 * (k * x).sin() * (k * y).cos());
        let (gx, gy) = spatial_gradients(&f);
        let mut worst = 0.0f64;
        for y in 1..47u32 {
            for x in 1..47u32 {
                let (xf, yf) = (x as f64, y as f64);
                let ax = 0.3 * k * (k * xf).cos() * (k * yf).cos();
                let ay = -0.3 * k * (k * xf).sin() * (k * yf).sin();
                worst = worst.max((gx.get(x, y) - ax).abs()).max((gy.get(x, y) - ay).abs());
            }
        }
        // Relative to the peak analytic gradient 0.3 k.
        assert!(worst <= 0.1 * 0.3 * k, "worst {worst}");
    }

    #[test]
    fn temporal_gradient_cases() {
        let a = frame_from(6, 6, pattern);
        assert!(temporal_gradient(&a, &a).unwrap().data.iter().all(|&v| v == 0.0));
        let b = frame_from(6, 6, |x, y| pattern(x, y) + 0.1);
        assert!(temporal_gradient(&a, &b).unwrap().data.iter().all(|&v| (v - 0.1).abs() < 1e-6));
        let c = frame_from(7, 6, pattern);
        assert!(matches!(temporal_gradient(&a, &c), Err(FlowError::DimensionMismatch { .. })));
    }

    #[test]
    fn temporal_gradient_of_shifted_ramp() {
        let a = frame_from(16, 4, |x, _| x / 32.0);
        let b = frame_from(16, 4, |x, _| (x - 1.0) / 32.0);
        let it = temporal_gradient(&a, &b).unwrap();
        let (gx, _) = spatial_gradients(&a);
        for y in 0..4 {
            for x in 1..15 {
                assert!((it.get(x, y) + gx.get(x, y)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_motion_is_exact() {
        let a = frame_from(64, 64, pattern);
        let r = lk_flow_at(&a, &a, Point2::new(32.0, 32.0), 10).unwrap();
        assert!(r.is_ok());
        assert!(r.flow.u.abs() < 1e-6 && r.flow.v.abs() < 1e-6);
    }

    #[test]
    fn recovers_subpixel_shift_of_smooth_pattern() {
        let a = frame_from(64, 64, pattern);
        let b = frame_from(64, 64, |x, y| pattern(x - 0.6, y + 0.4));
        let r = lk_flow_at(&a, &b, Point2::new(32.0, 32.0), 10).unwrap();
        assert!((r.flow.u - 0.6).abs() < 0.05, "{:?}", r.flow);
        assert!((r.flow.v + 0.4).abs() < 0.05, "{:?}", r.flow);
    }

    #[test]
    fn flat_region_is_lost() {
        let a = frame_from(64, 64, |_, _| 0.5);
        let r = lk_flow_at(&a, &a, Point2::new(32.0, 32.0), 10).unwrap();
        assert_eq!(r.status, FlowStatus::Lost);
        let (_, p) = track(&a, &a, Point2::new(32.0, 32.0), &FlowConfig::default()).unwrap();
        assert_eq!(p, Point2::new(32.0, 32.0));
    }

    #[test]
    fn window_outside_frame_is_an_error() {
        let a = frame_from(64, 64, pattern);
        assert!(matches!(
            lk_flow_at(&a, &a, Point2::new(5.0, 32.0), 10),
            Err(FlowError::OutOfBounds { .. })
        ));
        assert!(lk_flow_at(&a, &a, Point2::new(11.0, 52.0), 10).is_ok());
    }

    #[test]
    fn eigenvalue_of_diagonal() {
        assert_eq!(min_eigenvalue(3.0, 0.0, 5.0), 3.0);
        assert!((min_eigenvalue(2.0, 1.0, 2.0) - 1.0).abs() < 1e-12);
    }

    /// Aperiodic field of Gaussian blobs.
    fn blobs(x: f64, y: f64) -> f64 {
        let mut v = 0.3;
        for k in 0..60u32 {
            let cx = ((k * 7919) % 131) as f64;
            let cy = ((k * 104_729) % 127) as f64;
            let s = 3.0 + (k % 4) as f64;
            let amp = if k % 2 == 0 { 0.25 } else { -0.15 };
            v += amp * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp();
        }
        v
    }

    #[test]
    fn pyramid_captures_larger_motion() {
        let a = frame_from(128, 128, blobs);
        let b = frame_from(128, 128, |x, y| blobs(x - 7.0, y - 3.0));
        let cfg = FlowConfig { pyramid: true, ..FlowConfig::default() };
        let r = lk_flow(&a, &b, Point2::new(64.0, 64.0), &cfg).unwrap();
        assert!(r.is_ok());
        assert!((r.flow.u - 7.0).abs() < 0.2 && (r.flow.v - 3.0).abs() < 0.2, "{:?}", r.flow);
    }

    #[test]
    fn downsample_halves_dimensions() {
        let a = frame_from(9, 6, |_, _| 0.25);
        let d = downsample(&a);
        assert_eq!((d.width(), d.height()), (5, 3));
        assert!(d.luma().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }
}
