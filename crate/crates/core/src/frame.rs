//! Grayscale frames and the geometric operations augmentation needs.

use crate::error::{Error, Result};

/// Side length of every network input frame.
pub const FRAME_SIZE: usize = 64;

/// Row-major grayscale image with intensities in [0, 1]. Binary masks use the
/// same type with values in {0, 1}.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::shape(format!(
                "frame {width}x{height} cannot hold {} pixels",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("frame pixel {v} is not finite")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn require_size(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::shape(format!(
                "{what}: expected {width}x{height} frame, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Snaps every pixel to the nearest multiple of 1/255, the precision of an
    /// 8-bit PGM file.
    pub fn quantized(mut self) -> Self {
        for p in &mut self.pixels {
            *p = (p.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
        self
    }

    pub fn flipped_horizontally(&self) -> Frame {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width) {
            pixels.extend(row.iter().rev());
        }
        Frame {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Crops the `cw x ch` window at `(x0, y0)` and resamples it bilinearly to
    /// `out_w x out_h` (pixel-center alignment, edge clamping).
    pub fn crop_resize(
        &self,
        x0: usize,
        y0: usize,
        cw: usize,
        ch: usize,
        out_w: usize,
        out_h: usize,
    ) -> Result<Frame> {
        if cw == 0 || ch == 0 || x0 + cw > self.width || y0 + ch > self.height {
            return Err(Error::shape(format!(
                "crop {cw}x{ch} at ({x0},{y0}) outside {}x{} frame",
                self.width, self.height
            )));
        }
        let sx = cw as f32 / out_w as f32;
        let sy = ch as f32 / out_h as f32;
        let mut pixels = Vec::with_capacity(out_w * out_h);
        for oy in 0..out_h {
            let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (ch - 1) as f32);
            let y_lo = fy.floor() as usize;
            let y_hi = (y_lo + 1).min(ch - 1);
            let ty = fy - y_lo as f32;
            for ox in 0..out_w {
                let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (cw - 1) as f32);
                let x_lo = fx.floor() as usize;
                let x_hi = (x_lo + 1).min(cw - 1);
                let tx = fx - x_lo as f32;
                let at = |x: usize, y: usize| self.get(x0 + x, y0 + y);
                let top = at(x_lo, y_lo) * (1.0 - tx) + at(x_hi, y_lo) * tx;
                let bottom = at(x_lo, y_hi) * (1.0 - tx) + at(x_hi, y_hi) * tx;
                pixels.push(top * (1.0 - ty) + bottom * ty);
            }
        }
        Ok(Frame {
            width: out_w,
            height: out_h,
            pixels,
        })
    }
}
