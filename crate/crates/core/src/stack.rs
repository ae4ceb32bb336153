use num_complex::Complex32;

use crate::cvnn::ComplexTensor;
use crate::error::{Error, Result};
use crate::field::ComplexField;

/// `N x H x W` complex IQ samples, one plane per sub-aperture.
///
/// `aperture_order[j]` names the acquisition aperture stored in plane `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ApertureStack {
    data: ComplexTensor,
    aperture_order: Vec<u32>,
}

impl ApertureStack {
    /// Stack in acquisition order.
    pub fn new(data: ComplexTensor) -> Result<Self> {
        let (n, _, _) = data.dims3()?;
        Self::with_order(data, (0..n as u32).collect())
    }

    pub fn with_order(data: ComplexTensor, aperture_order: Vec<u32>) -> Result<Self> {
        let (n, _, _) = data.dims3()?;
        validate_permutation(&aperture_order, n)?;
        Ok(Self {
            data,
            aperture_order,
        })
    }

    pub fn zeros(n: usize, h: usize, w: usize) -> Self {
        Self {
            data: ComplexTensor::zeros(&[n, h, w]),
            aperture_order: (0..n as u32).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn h(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn w(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &ComplexTensor {
        &self.data
    }

    pub fn tensor_mut(&mut self) -> &mut ComplexTensor {
        &mut self.data
    }

    pub fn into_tensor(self) -> ComplexTensor {
        self.data
    }

    pub fn aperture_order(&self) -> &[u32] {
        &self.aperture_order
    }

    /// Interleaved samples of plane `j`.
    pub fn plane(&self, j: usize) -> &[f32] {
        self.data.channel(j)
    }

    pub fn get(&self, j: usize, y: usize, x: usize) -> Complex32 {
        self.data.get((j * self.h() + y) * self.w() + x)
    }

    /// Plane `j` of the result is plane `perm[j]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let as_u32: Vec<u32> = perm.iter().map(|&p| p as u32).collect();
        validate_permutation(&as_u32, n)?;
        let per = 2 * self.h() * self.w();
        let mut data = Vec::with_capacity(self.data.data().len());
        for &p in perm {
            data.extend_from_slice(&self.data.data()[p * per..(p + 1) * per]);
        }
        Ok(Self {
            data: ComplexTensor::from_interleaved(self.data.shape(), data)?,
            aperture_order: perm.iter().map(|&p| self.aperture_order[p]).collect(),
        })
    }

    /// Coherent sum over the aperture axis.
    ///
    /// Per pixel the N terms are summed in f64 after sorting, so the result
    /// is bit-identical under any permutation of the planes.
    pub fn compound(&self) -> ComplexField {
        let (n, h, w) = (self.n(), self.h(), self.w());
        let d = self.data.data();
        let mut re = vec![0f32; n];
        let mut im = vec![0f32; n];
        let mut out = Vec::with_capacity(h * w);
        for px in 0..h * w {
            for j in 0..n {
                re[j] = d[2 * (j * h * w + px)];
                im[j] = d[2 * (j * h * w + px) + 1];
            }
            out.push(Complex32::new(sorted_sum(&mut re), sorted_sum(&mut im)));
        }
        ComplexField { h, w, data: out }
    }
}

fn sorted_sum(v: &mut [f32]) -> f32 {
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    v.iter().map(|&x| x as f64).sum::<f64>() as f32
}

pub(crate) fn validate_permutation(order: &[u32], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::arg(format!(
            "aperture order has {} entries for {n} apertures",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &o in order {
        let o = o as usize;
        if o >= n || seen[o] {
            return Err(Error::arg(format!("aperture order {order:?} is not a permutation")));
        }
        seen[o] = true;
    }
    Ok(())
}
