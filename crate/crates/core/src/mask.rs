//! Per-pixel part confidence masks.

use crate::error::{ProfdError, Result};

/// Row-major `h × w × n` mask with the channel index fastest, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartMask {
    pub h: usize,
    pub w: usize,
    pub n: usize,
    pub data: Vec<f32>,
}

impl PartMask {
    pub fn zeros(h: usize, w: usize, n: usize) -> Self {
        PartMask {
            h,
            w,
            n,
            data: vec![0.0; h * w * n],
        }
    }

    pub fn new(h: usize, w: usize, n: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w * n {
            return Err(ProfdError::DimensionMismatch(format!(
                "mask buffer has {} values, expected {h}x{w}x{n}",
                data.len()
            )));
        }
        Ok(PartMask { h, w, n, data })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.w + x) * self.n + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.w + x) * self.n + c] = v;
    }

    /// Largest value in channel `c`.
    pub fn channel_max(&self, c: usize) -> f32 {
        self.data.iter().skip(c).step_by(self.n).cloned().fold(0.0, f32::max)
    }

    /// Bilinear resampling to `h × w` (pixel-centre aligned).
    pub fn resize_bilinear(&self, h: usize, w: usize) -> PartMask {
        if h == self.h && w == self.w {
            return self.clone();
        }
        let mut out = PartMask::zeros(h, w, self.n);
        let sy = self.h as f64 / h as f64;
        let sx = self.w as f64 / w as f64;
        for y in 0..h {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.h - 1);
            let ty = (fy - y0 as f64) as f32;
            for x in 0..w {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.w - 1);
                let tx = (fx - x0 as f64) as f32;
                for c in 0..self.n {
                    let top = self.get(y0, x0, c) * (1.0 - tx) + self.get(y0, x1, c) * tx;
                    let bot = self.get(y1, x0, c) * (1.0 - tx) + self.get(y1, x1, c) * tx;
                    out.set(y, x, c, top * (1.0 - ty) + bot * ty);
                }
            }
        }
        out
    }

    pub fn flip_horizontal(&mut self) {
        for y in 0..self.h {
            for x in 0..self.w / 2 {
                for c in 0..self.n {
                    let a = self.get(y, x, c);
                    let b = self.get(y, self.w - 1 - x, c);
                    self.set(y, x, c, b);
                    self.set(y, self.w - 1 - x, c, a);
                }
            }
        }
    }
}
