//! Dense pixel buffers. `Pixmap` is a row-major H×W×C array of `f64`;
//! `Mask` is a row-major H×W boolean selection.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pixmap {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Pixmap {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Pixmap {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn filled(h: usize, w: usize, c: usize, value: f64) -> Self {
        Pixmap {
            h,
            w,
            c,
            data: vec![value; h * w * c],
        }
    }

    pub fn from_data(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::shape(format!(
                "pixmap data length {} != {h}x{w}x{c}",
                data.len()
            )));
        }
        Ok(Pixmap { h, w, c, data })
    }

    /// Flat index of the first channel of pixel (y, x).
    #[inline]
    pub fn base(&self, y: usize, x: usize) -> usize {
        (y * self.w + x) * self.c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[self.base(y, x) + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f64) {
        let i = self.base(y, x) + ch;
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = self.base(y, x);
        &self.data[i..i + self.c]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let i = self.base(y, x);
        &mut self.data[i..i + self.c]
    }

    pub fn same_shape(&self, other: &Pixmap) -> bool {
        self.h == other.h && self.w == other.w && self.c == other.c
    }

    pub fn require_same_shape(&self, other: &Pixmap, context: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{context}: {}x{}x{} vs {}x{}x{}",
                self.h, self.w, self.c, other.h, other.w, other.c
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Pixmap {
        Pixmap {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Pixmap {
        self.map(|v| v * s)
    }

    pub fn max_abs_diff(&self, other: &Pixmap) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Mean absolute difference over every value (all pixels and channels).
    pub fn mean_abs_diff(&self, other: &Pixmap) -> Result<f64> {
        self.require_same_shape(other, "mean_abs_diff")?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, value: bool) -> Self {
        Mask {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn matches_image(&self, img: &Pixmap) -> bool {
        self.h == img.h && self.w == img.w
    }
}
