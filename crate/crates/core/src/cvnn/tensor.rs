use num_complex::Complex32;

use crate::error::{Error, Result};

/// Dense complex tensor stored as interleaved `re, im` f32 pairs in
/// row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl ComplexTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; 2 * n],
        }
    }

    /// Wraps an interleaved buffer; `data.len()` must be twice the element count.
    pub fn from_interleaved(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != 2 * n {
            return Err(Error::arg(format!(
                "interleaved buffer of {} floats does not fit shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_complex(shape: &[usize], values: &[Complex32]) -> Result<Self> {
        let data = values.iter().flat_map(|z| [z.re, z.im]).collect();
        Self::from_interleaved(shape, data)
    }

    /// Real-valued tensor with zero imaginary parts.
    pub fn from_real(shape: &[usize], values: &[f32]) -> Result<Self> {
        let data = values.iter().flat_map(|&r| [r, 0.0]).collect();
        Self::from_interleaved(shape, data)
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![value, 0.0],
        }
    }

    pub fn full(shape: &[usize], value: Complex32) -> Self {
        let mut t = Self::zeros(shape);
        for pair in t.data.chunks_exact_mut(2) {
            pair[0] = value.re;
            pair[1] = value.im;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of complex elements.
    pub fn numel(&self) -> usize {
        self.data.len() / 2
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, flat: usize) -> Complex32 {
        Complex32::new(self.data[2 * flat], self.data[2 * flat + 1])
    }

    pub fn set(&mut self, flat: usize, z: Complex32) {
        self.data[2 * flat] = z.re;
        self.data[2 * flat + 1] = z.im;
    }

    pub fn at(&self, index: &[usize]) -> Complex32 {
        self.get(self.flat_index(index))
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                assert!(i < n, "index {i} out of bounds for extent {n}");
                acc * n + i
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = Complex32> + '_ {
        self.data
            .chunks_exact(2)
            .map(|p| Complex32::new(p[0], p[1]))
    }

    pub fn to_complex_vec(&self) -> Vec<Complex32> {
        self.iter().collect()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::arg(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what} contains NaN or infinity")))
        }
    }

    /// Interprets a `[C, H, W]` tensor and returns its extents.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::arg(format!(
                "expected a [C, H, W] tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Interleaved view of channel `c` of a `[C, ...]` tensor.
    pub fn channel(&self, c: usize) -> &[f32] {
        let per = 2 * self.numel() / self.shape[0];
        &self.data[c * per..(c + 1) * per]
    }

    pub fn add_assign(&mut self, other: &ComplexTensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: f32) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Sum of squared moduli accumulated in f64.
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }
}
