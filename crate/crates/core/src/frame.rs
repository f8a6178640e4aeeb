//! Single-channel luma frames.

use thiserror::Error;

use crate::geometry::UprightRect;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("frame dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("luma length {got} does not match {width}x{height}")]
    LengthMismatch { width: u32, height: u32, got: usize },
    #[error("rectangle {rect:?} is empty or exceeds a {width}x{height} frame")]
    BadRect { rect: UprightRect, width: u32, height: u32 },
    #[error("frame width {0} is odd and cannot be split into two views")]
    OddWidth(u32),
}

/// A grayscale frame with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: u32,
    height: u32,
    index: u64,
    luma: Vec<f32>,
}

impl Frame {
    pub fn new(width: u32, height: u32, index: u64, luma: Vec<f32>) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::EmptyDimensions { width, height });
        }
        if luma.len() != width as usize * height as usize {
            return Err(FrameError::LengthMismatch { width, height, got: luma.len() });
        }
        Ok(Self { width, height, index, luma })
    }

    /// Ingests 8-bit luma, scaling to `[0, 1]`.
    pub fn from_u8(width: u32, height: u32, index: u64, bytes: &[u8]) -> Result<Self, FrameError> {
        let luma = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(width, height, index, luma)
    }

    /// Ingests interleaved 8-bit RGB using Rec.601 luma weights.
    pub fn from_rgb8(width: u32, height: u32, index: u64, rgb: &[u8]) -> Result<Self, FrameError> {
        let expected = width as usize * height as usize * 3;
        if rgb.len() != expected {
            return Err(FrameError::LengthMismatch { width, height, got: rgb.len() / 3 });
        }
        let luma = rgb
            .chunks_exact(3)
            .map(|px| {
                let y = 0.299 * px[0] as f32 + 0.587 * px[1] as f32 + 0.114 * px[2] as f32;
                y / 255.0
            })
            .collect();
        Self::new(width, height, index, luma)
    }

    /// Quantizes back to 8-bit, rounding to nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.luma.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn with_index(mut self, index: u64) -> Self {
        self.index = index;
        self
    }

    pub fn luma(&self) -> &[f32] {
        &self.luma
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.luma[y as usize * self.width as usize + x as usize]
    }

    /// Bilinear sample with edge replication outside the frame.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let xi = x0 as usize;
        let yi = y0 as usize;
        let xj = (xi + 1).min(self.width as usize - 1);
        let yj = (yi + 1).min(self.height as usize - 1);
        let w = self.width as usize;
        let a = self.luma[yi * w + xi] as f64;
        let b = self.luma[yi * w + xj] as f64;
        let c = self.luma[yj * w + xi] as f64;
        let d = self.luma[yj * w + xj] as f64;
        let top = a + (b - a) * fx;
        let bottom = c + (d - c) * fx;
        top + (bottom - top) * fy
    }

    /// Copies out `rect`, keeping the frame index.
    pub fn crop(&self, rect: &UprightRect) -> Result<Frame, FrameError> {
        if rect.x0 >= rect.x1 || rect.y0 >= rect.y1 || rect.x1 > self.width || rect.y1 > self.height {
            return Err(FrameError::BadRect { rect: *rect, width: self.width, height: self.height });
        }
        let w = self.width as usize;
        let mut luma = Vec::with_capacity(rect.width() as usize * rect.height() as usize);
        for y in rect.y0..rect.y1 {
            let row = y as usize * w;
            luma.extend_from_slice(&self.luma[row + rect.x0 as usize..row + rect.x1 as usize]);
        }
        Frame::new(rect.width(), rect.height(), self.index, luma)
    }

    /// Splits a side-by-side frame into its left and right halves.
    pub fn split_halves(&self) -> Result<(Frame, Frame), FrameError> {
        if self.width % 2 != 0 {
            return Err(FrameError::OddWidth(self.width));
        }
        let half = self.width / 2;
        let left = self.crop(&UprightRect { x0: 0, y0: 0, x1: half, y1: self.height })?;
        let right = self.crop(&UprightRect { x0: half, y0: 0, x1: self.width, y1: self.height })?;
        Ok((left, right))
    }

    /// Joins two frames of equal height side by side.
    pub fn concat_horizontal(left: &Frame, right: &Frame) -> Result<Frame, FrameError> {
        if left.height != right.height {
            return Err(FrameError::LengthMismatch {
                width: right.width,
                height: left.height,
                got: right.luma.len(),
            });
        }
        let width = left.width + right.width;
        let mut luma = Vec::with_capacity(width as usize * left.height as usize);
        for y in 0..left.height as usize {
            let lw = left.width as usize;
            let rw = right.width as usize;
            luma.extend_from_slice(&left.luma[y * lw..(y + 1) * lw]);
            luma.extend_from_slice(&right.luma[y * rw..(y + 1) * rw]);
        }
        Frame::new(width, left.height, left.index, luma)
    }
}

/// Dense row-major `f64` grid, used for gradient images.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0.0; width as usize * height as usize] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }
}
