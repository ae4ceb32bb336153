use num_complex::Complex32;

use crate::error::{Error, Result};

/// Row-major 2-D field of real samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RealField {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl RealField {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::arg(format!(
                "field of {h}x{w} needs {} samples, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, value: f32) -> Self {
        Self {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.w + x] = v;
    }
}

/// Row-major 2-D field of complex samples (a compounded IQ frame).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    pub h: usize,
    pub w: usize,
    pub data: Vec<Complex32>,
}

impl ComplexField {
    pub fn new(h: usize, w: usize, data: Vec<Complex32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::arg(format!(
                "field of {h}x{w} needs {} samples, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(Self { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![Complex32::new(0.0, 0.0); h * w],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> Complex32 {
        self.data[y * self.w + x]
    }

    /// Envelope `|y|`.
    pub fn envelope(&self) -> RealField {
        RealField {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|z| z.norm()).collect(),
        }
    }
}
