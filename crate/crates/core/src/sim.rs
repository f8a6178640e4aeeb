//! Deterministic synthetic pour scenes.
//!
//! A scene is a static background with two rotated chutes. The chute interior
//! carries a granular value-noise texture expressed in chute-local
//! coordinates; once a side starts pouring, the texture slides down the
//! chute's downhill axis at the configured speed and a stream of the same
//! material appears below the bottom edge. Frames are quantized to 8 bits.
//!
//! Two artifacts can be switched on: a dark band drifting through the right
//! chute (a shadow cast from above) and a contrast multiplier that makes very
//! fluid concrete look smooth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::Side;
use crate::frame::Frame;
use crate::geometry::{corner_bounds, RotatedBox};
use crate::slump::SlumpBin;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pour {
    pub start_frame: u64,
    /// Pixels per frame along the downhill axis.
    pub flow_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureSpec {
    /// Granular contrast in `[0, 1]`.
    pub contrast: f64,
    pub seed: u64,
    /// Lattice spacing of the coarse noise octave, pixels.
    pub granule_px: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self { contrast: 0.5, seed: 0, granule_px: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowSpec {
    pub enabled: bool,
    pub onset_frame: u64,
    /// Pixels per frame along the right chute's downhill axis.
    pub drift: f64,
    /// Band thickness along the downhill axis, pixels.
    pub band_px: f64,
    /// Width of the linear ramps on either side of the band, pixels.
    pub soft_px: f64,
    /// Fractional darkening at the band core.
    pub depth: f64,
}

impl Default for ShadowSpec {
    fn default() -> Self {
        Self { enabled: false, onset_frame: 0, drift: 1.0, band_px: 24.0, soft_px: 12.0, depth: 0.6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactSpec {
    pub shadow: ShadowSpec,
    /// Multiplier on texture contrast; `1.0` leaves the texture unchanged.
    pub smooth_flow: f64,
}

impl Default for ArtifactSpec {
    fn default() -> Self {
        Self { shadow: ShadowSpec::default(), smooth_flow: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Photometric {
    pub brightness: f64,
    pub contrast_gain: f64,
    pub gamma: f64,
}

impl Default for Photometric {
    fn default() -> Self {
        Self { brightness: 0.0, contrast_gain: 1.0, gamma: 1.0 }
    }
}

impl Photometric {
    fn is_identity(&self) -> bool {
        self.brightness == 0.0 && self.contrast_gain == 1.0 && self.gamma == 1.0
    }

    fn apply(&self, v: f64) -> f64 {
        let v = ((v - 0.5) * self.contrast_gain + 0.5 + self.brightness).clamp(0.0, 1.0);
        if self.gamma == 1.0 {
            v
        } else {
            v.powf(self.gamma)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub frame_w: u32,
    pub frame_h: u32,
    pub left_box: RotatedBox,
    pub right_box: RotatedBox,
    #[serde(default)]
    pub left_pour: Option<Pour>,
    #[serde(default)]
    pub right_pour: Option<Pour>,
    #[serde(default)]
    pub texture: TextureSpec,
    #[serde(default)]
    pub artifacts: ArtifactSpec,
    #[serde(default)]
    pub photometric: Photometric,
    pub duration: u64,
    /// Label carried into the truth file for classifier harnesses.
    #[serde(default)]
    pub slump_bin: Option<SlumpBin>,
    /// Render both camera views side by side (twice the width).
    #[serde(default)]
    pub stereo: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    Invalid(String),
}

impl SceneSpec {
    pub fn pour(&self, side: Side) -> Option<Pour> {
        match side {
            Side::Left => self.left_pour,
            Side::Right => self.right_pour,
        }
    }

    pub fn chute(&self, side: Side) -> RotatedBox {
        match side {
            Side::Left => self.left_box,
            Side::Right => self.right_box,
        }
    }

    /// Width of the rendered frame, doubled in stereo mode.
    pub fn output_width(&self) -> u32 {
        if self.stereo {
            self.frame_w * 2
        } else {
            self.frame_w
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.frame_w == 0 || self.frame_h == 0 {
            return Err(SceneError::Invalid("frame dimensions must be positive".into()));
        }
        if self.duration == 0 {
            return Err(SceneError::Invalid("duration must be at least one frame".into()));
        }
        for side in Side::BOTH {
            let b = self.chute(side).validated().map_err(|e| SceneError::Invalid(e.to_string()))?;
            let (x0, y0, x1, y1) = corner_bounds(&b);
            if x0 < 0.0 || y0 < 0.0 || x1 > self.frame_w as f64 || y1 > self.frame_h as f64 {
                return Err(SceneError::Invalid(format!("{side} chute leaves the frame")));
            }
            if let Some(p) = self.pour(side) {
                if !(p.flow_speed > 0.0 && p.flow_speed.is_finite()) {
                    return Err(SceneError::Invalid(format!("{side} flow speed must be positive")));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.texture.contrast) || !(self.texture.granule_px > 0.0) {
            return Err(SceneError::Invalid("texture contrast or granule size out of range".into()));
        }
        Ok(())
    }
}

/// Ground truth for a scene, echoing its generative parameters. Chute boxes
/// are constant over the scene and given in single-view coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneTruth {
    pub frame_w: u32,
    pub frame_h: u32,
    pub duration: u64,
    pub stereo: bool,
    pub left_box: RotatedBox,
    pub right_box: RotatedBox,
    pub left_urchute: RotatedBox,
    pub right_urchute: RotatedBox,
    pub left_start: Option<u64>,
    pub right_start: Option<u64>,
    /// Flow speed of each pouring side, px/frame along its downhill axis.
    pub left_speed: Option<f64>,
    pub right_speed: Option<f64>,
    pub slump_bin: Option<SlumpBin>,
}

impl SceneTruth {
    pub fn start(&self, side: Side) -> Option<u64> {
        match side {
            Side::Left => self.left_start,
            Side::Right => self.right_start,
        }
    }

    pub fn chute(&self, side: Side) -> RotatedBox {
        match side {
            Side::Left => self.left_box,
            Side::Right => self.right_box,
        }
    }

    pub fn speed(&self, side: Side) -> Option<f64> {
        match side {
            Side::Left => self.left_speed,
            Side::Right => self.right_speed,
        }
    }

    /// The side that starts pouring first, if any.
    pub fn pouring_side(&self) -> Option<Side> {
        match (self.left_start, self.right_start) {
            (Some(l), Some(r)) => Some(if r < l { Side::Right } else { Side::Left }),
            (Some(_), None) => Some(Side::Left),
            (None, Some(_)) => Some(Side::Right),
            (None, None) => None,
        }
    }
}

/// Axis-aligned box enclosing a rotated one, as an upright detector would report it.
pub fn upright_of(b: &RotatedBox) -> RotatedBox {
    let (x0, y0, x1, y1) = corner_bounds(b);
    RotatedBox {
        cx: (x0 + x1) / 2.0,
        cy: (y0 + y1) / 2.0,
        w: x1 - x0,
        h: y1 - y0,
        theta_deg: 0.0,
    }
}

pub fn truth(spec: &SceneSpec) -> SceneTruth {
    SceneTruth {
        frame_w: spec.frame_w,
        frame_h: spec.frame_h,
        duration: spec.duration,
        stereo: spec.stereo,
        left_box: spec.left_box,
        right_box: spec.right_box,
        left_urchute: upright_of(&spec.left_box),
        right_urchute: upright_of(&spec.right_box),
        left_start: spec.left_pour.map(|p| p.start_frame),
        right_start: spec.right_pour.map(|p| p.start_frame),
        left_speed: spec.left_pour.map(|p| p.flow_speed),
        right_speed: spec.right_pour.map(|p| p.flow_speed),
        slump_bin: spec.slump_bin,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = splitmix64(
        seed ^ splitmix64((ix as u64).wrapping_mul(0x9E37_79B1)) ^ (iy as u64).wrapping_mul(0x85EB_CA77_C2B2_AE63),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (smooth(x - x0), smooth(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(ix, iy, seed);
    let b = lattice(ix + 1, iy, seed);
    let c = lattice(ix, iy + 1, seed);
    let d = lattice(ix + 1, iy + 1, seed);
    let top = a + (b - a) * fx;
    let bottom = c + (d - c) * fx;
    top + (bottom - top) * fy
}

/// Seeded granular texture with values in `[0, 1]`, defined on the whole plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GranularTexture {
    pub seed: u64,
    pub granule_px: f64,
}

impl GranularTexture {
    pub fn new(seed: u64, granule_px: f64) -> Self {
        Self { seed, granule_px }
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let coarse = value_noise(x / self.granule_px, y / self.granule_px, self.seed);
        let fine_px = self.granule_px * 0.6;
        let fine = value_noise(x / fine_px, y / fine_px, self.seed ^ 0xA5A5_A5A5);
        0.65 * coarse + 0.35 * fine
    }

    /// Renders an 8-bit `w x h` frame of the texture translated by `(dx, dy)`.
    pub fn render_shifted(&self, w: u32, h: u32, dx: f64, dy: f64, contrast: f64, index: u64) -> Frame {
        let mut bytes = Vec::with_capacity(w as usize * h as usize);
        for y in 0..h {
            for x in 0..w {
                let v = 0.5 + contrast * (self.sample(x as f64 - dx, y as f64 - dy) - 0.5);
                bytes.push(quantize(v));
            }
        }
        Frame::from_u8(w, h, index, &bytes).expect("dimensions match")
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

const CHUTE_BASE: f64 = 0.55;
const STREAM_WIDTH_FRACTION: f64 = 0.8;

fn background(y: u32, h: u32) -> f64 {
    0.25 + 0.1 * y as f64 / h as f64
}

struct ChuteLayer {
    bbox: RotatedBox,
    width_axis: (f64, f64),
    downhill: (f64, f64),
    /// Texture offset along the downhill axis at this frame.
    offset: f64,
    /// Stream length below the bottom edge at this frame.
    stream: f64,
    shadow: Option<(f64, ShadowSpec)>,
    seed: u64,
}

/// Renders frame `t` as 8-bit luma (single view, or both views in stereo mode).
pub fn render_u8(spec: &SceneSpec, t: u64) -> Vec<u8> {
    let (w, h) = (spec.frame_w, spec.frame_h);
    let texture = GranularTexture::new(spec.texture.seed, spec.texture.granule_px);
    let contrast = spec.texture.contrast * spec.artifacts.smooth_flow;

    let mut view = vec![0f64; w as usize * h as usize];
    for y in 0..h {
        let bg = background(y, h);
        view[y as usize * w as usize..(y as usize + 1) * w as usize].fill(bg);
    }

    for side in Side::BOTH {
        let bbox = spec.chute(side);
        let (offset, stream) = match spec.pour(side) {
            Some(p) if t >= p.start_frame => {
                let off = p.flow_speed * (t - p.start_frame) as f64;
                (off, off.min(bbox.h))
            }
            _ => (0.0, -1.0),
        };
        let shadow = match side {
            Side::Right if spec.artifacts.shadow.enabled => {
                let s = spec.artifacts.shadow;
                let travel = s.drift * t.saturating_sub(s.onset_frame) as f64;
                // Band starts just above the chute's top edge.
                let center = -bbox.h / 2.0 - s.band_px / 2.0 - s.soft_px + travel;
                Some((center, s))
            }
            _ => None,
        };
        let layer = ChuteLayer {
            bbox,
            width_axis: bbox.width_axis(),
            downhill: bbox.downhill_axis(),
            offset,
            stream,
            shadow,
            seed: side.slot() as u64,
        };
        draw_chute(&mut view, w, h, &layer, &texture, contrast);
    }

    let photometric = spec.photometric;
    let quantized: Vec<u8> = if photometric.is_identity() {
        view.iter().map(|&v| quantize(v)).collect()
    } else {
        view.iter().map(|&v| quantize(photometric.apply(v))).collect()
    };

    if !spec.stereo {
        return quantized;
    }
    let mut out = Vec::with_capacity(quantized.len() * 2);
    for row in quantized.chunks_exact(w as usize) {
        out.extend_from_slice(row);
        out.extend_from_slice(row);
    }
    out
}

fn draw_chute(view: &mut [f64], w: u32, h: u32, layer: &ChuteLayer, texture: &GranularTexture, contrast: f64) {
    let b = &layer.bbox;
    let (ux, uy) = layer.width_axis;
    let (nx, ny) = layer.downhill;
    let half_w = b.w / 2.0;
    let half_h = b.h / 2.0;
    let stream_half_w = half_w * STREAM_WIDTH_FRACTION;
    let reach = half_h + layer.stream.max(0.0);

    // Bounding region of the chute plus its stream.
    let extent = half_w.hypot(reach) + 2.0;
    let x0 = (b.cx - extent).floor().max(0.0) as u32;
    let y0 = (b.cy - extent).floor().max(0.0) as u32;
    let x1 = ((b.cx + extent).ceil() as u32).min(w);
    let y1 = ((b.cy + extent).ceil() as u32).min(h);

    // Separate texture per side; shift the seed so the sides differ.
    let tex = GranularTexture::new(texture.seed.wrapping_add(layer.seed.wrapping_mul(0x1000_0001)), texture.granule_px);
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 - b.cx, y as f64 - b.cy);
            let a = px * ux + py * uy;
            let d = px * nx + py * ny;
            let in_chute = a.abs() <= half_w && d.abs() <= half_h;
            let in_stream = layer.stream >= 0.0 && a.abs() <= stream_half_w && d > half_h && d <= reach;
            if !(in_chute || in_stream) {
                continue;
            }
            let g = tex.sample(a, d - layer.offset);
            let mut v = CHUTE_BASE + contrast * (g - 0.5);
            if in_chute {
                if let Some((center, s)) = layer.shadow {
                    v *= 1.0 - s.depth * band_profile(d - center, s.band_px / 2.0, s.soft_px);
                }
            }
            view[y as usize * w as usize + x as usize] = v;
        }
    }
}

fn band_profile(dist: f64, half: f64, soft: f64) -> f64 {
    let a = dist.abs();
    if a <= half {
        1.0
    } else if soft > 0.0 && a < half + soft {
        1.0 - (a - half) / soft
    } else {
        0.0
    }
}

/// Renders frame `t` as a [`Frame`] whose index is `t`.
pub fn render(spec: &SceneSpec, t: u64) -> Frame {
    let bytes = render_u8(spec, t);
    Frame::from_u8(spec.output_width(), spec.frame_h, t, &bytes).expect("rendered size matches spec")
}

/// Which chutes pour in a grid scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PourSide {
    Left,
    Right,
    None,
    Both,
}

impl PourSide {
    pub fn pours(self, side: Side) -> bool {
        matches!(
            (self, side),
            (PourSide::Left, Side::Left) | (PourSide::Right, Side::Right) | (PourSide::Both, _)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub sides: Vec<PourSide>,
    pub bins: Vec<SlumpBin>,
    pub seeds: Vec<u64>,
    pub frame_w: u32,
    pub frame_h: u32,
    pub duration: u64,
    /// Flow speed for the lowest and highest bins; intermediate bins are linear in the bin midpoint.
    pub speed_range: (f64, f64),
    pub contrast: f64,
    /// Contrast multiplier applied to the highest bin.
    pub smooth_flow: f64,
    pub shadow: bool,
    pub stereo: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            sides: vec![PourSide::Left, PourSide::Right, PourSide::None],
            bins: SlumpBin::ALL.to_vec(),
            seeds: (0..10).collect(),
            frame_w: 640,
            frame_h: 360,
            duration: 150,
            speed_range: (1.0, 3.5),
            contrast: 0.5,
            smooth_flow: 0.25,
            shadow: false,
            stereo: false,
        }
    }
}

/// Nominal mm midpoints of the bins, used to map bins to flow speeds.
fn bin_midpoint_mm(bin: SlumpBin) -> f64 {
    match bin {
        SlumpBin::Under150 => 135.0,
        SlumpBin::S150to180 => 165.0,
        SlumpBin::S180to210 => 195.0,
        SlumpBin::S210to240 => 225.0,
        SlumpBin::Over240 => 255.0,
    }
}

/// Linear map from bin midpoint to pixels per frame.
pub fn flow_speed_for(bin: SlumpBin, range: (f64, f64)) -> f64 {
    let lo = bin_midpoint_mm(SlumpBin::Under150);
    let hi = bin_midpoint_mm(SlumpBin::Over240);
    range.0 + (range.1 - range.0) * (bin_midpoint_mm(bin) - lo) / (hi - lo)
}

/// Deterministic jitter in `[-1, 1)` for a scene parameter.
fn jitter(seed: u64, salt: u64) -> f64 {
    let h = splitmix64(seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ salt);
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// One scene for the given side/bin/seed under a grid configuration.
pub fn grid_scene(cfg: &GridConfig, pour_side: PourSide, bin: SlumpBin, seed: u64) -> SceneSpec {
    let (fw, fh) = (cfg.frame_w as f64, cfg.frame_h as f64);
    let cw = 0.17 * fw;
    let ch = 0.2 * fh;
    let tilt = 12.0 + 4.0 * jitter(seed, 1);
    let left_box = RotatedBox::new(
        0.27 * fw + 0.02 * fw * jitter(seed, 2),
        0.4 * fh + 0.03 * fh * jitter(seed, 3),
        cw,
        ch,
        tilt,
    )
    .expect("grid chute is valid");
    let right_box = RotatedBox::new(
        0.73 * fw + 0.02 * fw * jitter(seed, 4),
        0.4 * fh + 0.03 * fh * jitter(seed, 5),
        cw,
        ch,
        180.0 - tilt - 2.0 * jitter(seed, 6),
    )
    .expect("grid chute is valid");
    let start = 30 + ((jitter(seed, 7) + 1.0) * 15.0) as u64;
    let speed = flow_speed_for(bin, cfg.speed_range);
    let pour = Pour { start_frame: start, flow_speed: speed };
    let mut shadow = ShadowSpec::default();
    if cfg.shadow {
        shadow.enabled = true;
        shadow.onset_frame = 20;
    }
    SceneSpec {
        frame_w: cfg.frame_w,
        frame_h: cfg.frame_h,
        left_box,
        right_box,
        left_pour: pour_side.pours(Side::Left).then_some(pour),
        right_pour: pour_side.pours(Side::Right).then_some(pour),
        texture: TextureSpec { contrast: cfg.contrast, seed: splitmix64(seed ^ 0x5EED), granule_px: 5.0 },
        artifacts: ArtifactSpec {
            shadow,
            smooth_flow: if bin == SlumpBin::Over240 { cfg.smooth_flow } else { 1.0 },
        },
        photometric: Photometric::default(),
        duration: cfg.duration,
        slump_bin: Some(bin),
        stereo: cfg.stereo,
    }
}

/// Cartesian product sides x bins x seeds in that nesting order.
pub fn scenario_grid(cfg: &GridConfig) -> Vec<SceneSpec> {
    let mut out = Vec::with_capacity(cfg.sides.len() * cfg.bins.len() * cfg.seeds.len());
    for &side in &cfg.sides {
        for &bin in &cfg.bins {
            for &seed in &cfg.seeds {
                out.push(grid_scene(cfg, side, bin, seed));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> SceneSpec {
        grid_scene(&GridConfig::default(), PourSide::Left, SlumpBin::S180to210, 3)
    }

    #[test]
    fn grid_size_and_order() {
        let cfg = GridConfig::default();
        let grid = scenario_grid(&cfg);
        assert_eq!(grid.len(), 150);
        assert_eq!(grid, scenario_grid(&cfg));
        for s in &grid {
            s.validate().unwrap();
        }
    }

    #[test]
    fn none_scenes_never_pour() {
        let cfg = GridConfig::default();
        for bin in SlumpBin::ALL {
            let s = grid_scene(&cfg, PourSide::None, bin, 1);
            assert!(s.left_pour.is_none() && s.right_pour.is_none());
        }
    }

    #[test]
    fn over240_gets_smooth_flow() {
        let cfg = GridConfig::default();
        let s = grid_scene(&cfg, PourSide::Left, SlumpBin::Over240, 1);
        assert_eq!(s.artifacts.smooth_flow, 0.25);
        let s = grid_scene(&cfg, PourSide::Left, SlumpBin::S210to240, 1);
        assert_eq!(s.artifacts.smooth_flow, 1.0);
    }

    #[test]
    fn speed_map_is_linear() {
        let r = (1.0, 3.5);
        assert_eq!(flow_speed_for(SlumpBin::Under150, r), 1.0);
        assert_eq!(flow_speed_for(SlumpBin::Over240, r), 3.5);
        assert!((flow_speed_for(SlumpBin::S180to210, r) - 2.25).abs() < 1e-12);
    }

    #[test]
    fn truth_echoes_spec() {
        let s = scene();
        let t = truth(&s);
        assert_eq!(t.left_box, s.left_box);
        assert_eq!(t.right_box, s.right_box);
        assert_eq!(t.left_start, Some(s.left_pour.unwrap().start_frame));
        assert_eq!(t.right_start, None);
        assert_eq!(t.pouring_side(), Some(Side::Left));
        let none = grid_scene(&GridConfig::default(), PourSide::None, SlumpBin::Under150, 0);
        let tn = truth(&none);
        assert!(tn.left_start.is_none() && tn.right_start.is_none());

        let mut custom = s.clone();
        custom.left_pour = Some(Pour { start_frame: 120, flow_speed: 2.0 });
        assert_eq!(truth(&custom).left_start, Some(120));
    }

    #[test]
    fn static_before_pour() {
        let s = scene();
        let start = s.left_pour.unwrap().start_frame;
        let a = render_u8(&s, 0);
        for t in [1, 5, start - 1, start] {
            assert_eq!(render_u8(&s, t), a, "frame {t}");
        }
        assert_ne!(render_u8(&s, start + 1), a);
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = scene();
        assert_eq!(render_u8(&s, 77), render_u8(&s, 77));
    }

    #[test]
    fn stereo_duplicates_the_view() {
        let mut s = scene();
        s.stereo = true;
        let f = render(&s, 40);
        assert_eq!(f.width(), 2 * s.frame_w);
        let (l, r) = f.split_halves().unwrap();
        assert_eq!(l.luma(), r.luma());
    }

    #[test]
    fn shadow_darkens_the_right_chute_after_onset() {
        let mut s = grid_scene(&GridConfig::default(), PourSide::None, SlumpBin::S150to180, 2);
        s.artifacts.shadow = ShadowSpec { enabled: true, onset_frame: 10, ..ShadowSpec::default() };
        let c = s.right_box.center();
        let at = |t: u64| render(&s, t).get(c.x as u32, c.y as u32);
        assert_eq!(at(0), at(10));
        // Band reaches the center after (h/2 + band/2 + soft) / drift frames.
        let arrive = 10 + ((s.right_box.h / 2.0 + 12.0 + 12.0) / 1.0).ceil() as u64;
        assert!(at(arrive) < at(0) * 0.6, "{} vs {}", at(arrive), at(0));
        let lc = s.left_box.center();
        assert_eq!(render(&s, 0).get(lc.x as u32, lc.y as u32), render(&s, arrive).get(lc.x as u32, lc.y as u32));
    }

    #[test]
    fn photometric_identity_and_gain() {
        let p = Photometric::default();
        assert_eq!(p.apply(0.3), 0.3);
        let g = Photometric { brightness: 0.1, contrast_gain: 2.0, gamma: 1.0 };
        assert!((g.apply(0.6) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn spec_json_roundtrip() {
        let s = scene();
        let text = serde_json::to_string(&s).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn texture_is_in_range() {
        let t = GranularTexture::new(9, 5.0);
        for i in 0..1000 {
            let v = t.sample(i as f64 * 0.37, i as f64 * 0.91);
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
