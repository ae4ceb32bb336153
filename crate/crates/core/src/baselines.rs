//! Classical comparison methods: coherence factor, phase coherence factor
//! and speckle reducing anisotropic diffusion.

use std::f64::consts::PI;

use num_complex::Complex32;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{ComplexField, RealField};
use crate::stack::ApertureStack;

/// Phase spread of a uniform distribution on (-pi, pi].
pub const PCF_SIGMA0: f64 = PI / 1.732_050_807_568_877_2;
pub const PCF_DEFAULT_GAMMA: f64 = 1.0;

/// Per-pixel weight in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceMap {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f32>,
}

impl CoherenceMap {
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.w + x]
    }

    /// `weight * y` per pixel.
    pub fn apply(&self, y: &ComplexField) -> Result<ComplexField> {
        if (y.h, y.w) != (self.h, self.w) {
            return Err(Error::arg(format!(
                "weight map is {}x{}, field is {}x{}",
                self.h, self.w, y.h, y.w
            )));
        }
        let data = y.data.iter().zip(&self.values).map(|(z, &c)| z * c).collect();
        ComplexField::new(y.h, y.w, data)
    }
}

fn check_apertures(x: &ApertureStack) -> Result<()> {
    if x.n() < 2 {
        return Err(Error::arg(format!(
            "coherence weighting needs at least 2 apertures, got {}",
            x.n()
        )));
    }
    Ok(())
}

fn pixel_samples(x: &ApertureStack, px: usize, buf: &mut Vec<Complex32>) {
    buf.clear();
    for j in 0..x.n() {
        let d = x.plane(j);
        buf.push(Complex32::new(d[2 * px], d[2 * px + 1]));
    }
}

fn weight_map(x: &ApertureStack, f: impl Fn(&[Complex32]) -> f64 + Sync) -> CoherenceMap {
    let (h, w) = (x.h(), x.w());
    let values = (0..h * w)
        .into_par_iter()
        .map_init(Vec::new, |buf, px| {
            pixel_samples(x, px, buf);
            f(buf).clamp(0.0, 1.0) as f32
        })
        .collect();
    CoherenceMap { h, w, values }
}

fn cf_pixel(s: &[Complex32]) -> f64 {
    let (mut re, mut im, mut energy) = (0f64, 0f64, 0f64);
    for z in s {
        re += z.re as f64;
        im += z.im as f64;
        energy += (z.re as f64).powi(2) + (z.im as f64).powi(2);
    }
    if energy == 0.0 {
        return 0.0;
    }
    (re * re + im * im) / (s.len() as f64 * energy)
}

/// `|sum x|^2 / (N sum |x|^2)` per pixel and the compound weighted by it.
/// Pixels with no energy get weight 0.
pub fn coherence_factor(x: &ApertureStack) -> Result<(CoherenceMap, ComplexField)> {
    check_apertures(x)?;
    let map = weight_map(x, cf_pixel);
    let y = map.apply(&x.compound())?;
    Ok((map, y))
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Phase spread of the nonzero samples, taken as the smaller of the spreads
/// of the phases and of the phases shifted by pi, so a cluster straddling
/// the +-pi cut is not mistaken for a wide one. `None` when every sample is
/// zero.
pub fn phase_spread(s: &[Complex32]) -> Option<f64> {
    let phases: Vec<f64> = s
        .iter()
        .filter(|z| z.re != 0.0 || z.im != 0.0)
        .map(|z| (z.im as f64).atan2(z.re as f64))
        .collect();
    if phases.is_empty() {
        return None;
    }
    let shifted: Vec<f64> = phases
        .iter()
        .map(|&p| if p > 0.0 { p - PI } else { p + PI })
        .collect();
    Some(population_std(&phases).min(population_std(&shifted)))
}

/// `max(0, 1 - gamma * sigma_phi / sigma0)` per pixel and the weighted compound.
pub fn phase_coherence_factor(x: &ApertureStack, gamma: f64) -> Result<(CoherenceMap, ComplexField)> {
    check_apertures(x)?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::arg(format!("PCF gamma must be positive, got {gamma}")));
    }
    let map = weight_map(x, |s| match phase_spread(s) {
        Some(sigma) => (1.0 - gamma * sigma / PCF_SIGMA0).max(0.0),
        None => 0.0,
    });
    let y = map.apply(&x.compound())?;
    Ok((map, y))
}

pub const SRAD_MAX_DT: f64 = 0.25;

/// Speckle reducing anisotropic diffusion of an envelope image.
///
/// Zero-flux borders. The speckle scale `q0^2` is the variance over squared
/// mean of the whole current image, re-estimated every iteration. A small
/// offset keeps the input strictly positive.
pub fn srad(envelope: &RealField, steps: usize, dt: f64) -> Result<RealField> {
    if !(dt > 0.0 && dt <= SRAD_MAX_DT) {
        return Err(Error::arg(format!("SRAD dt must lie in (0, {SRAD_MAX_DT}], got {dt}")));
    }
    if envelope.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::arg("SRAD needs a finite non-negative envelope"));
    }
    let (h, w) = (envelope.h, envelope.w);
    if steps == 0 || h * w == 0 {
        return Ok(envelope.clone());
    }
    let peak = envelope.data.iter().fold(0f32, |m, &v| m.max(v)) as f64;
    let eps = if peak > 0.0 { peak * 1e-6 } else { 1e-12 };
    let mut img: Vec<f64> = envelope.data.iter().map(|&v| v as f64 + eps).collect();
    let mut coef = vec![0f64; h * w];
    let idx = |y: usize, x: usize| y * w + x;

    for _ in 0..steps {
        let n = img.len() as f64;
        let mean = img.iter().sum::<f64>() / n;
        let var = img.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let q0sq = var / (mean * mean);

        coef.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, c) in row.iter_mut().enumerate() {
                let i = img[idx(y, x)];
                let up = img[idx(y.saturating_sub(1), x)];
                let down = img[idx((y + 1).min(h - 1), x)];
                let left = img[idx(y, x.saturating_sub(1))];
                let right = img[idx(y, (x + 1).min(w - 1))];
                let grad2 = ((down - i).powi(2) + (i - up).powi(2) + (right - i).powi(2) + (i - left).powi(2))
                    / (i * i);
                let lap = (up + down + left + right - 4.0 * i) / i;
                let num = 0.5 * grad2 - lap * lap / 16.0;
                let den = (1.0 + 0.25 * lap).powi(2);
                let qsq = (num / den).max(0.0);
                *c = if q0sq <= f64::EPSILON {
                    1.0
                } else {
                    (1.0 / (1.0 + (qsq - q0sq) / (q0sq * (1.0 + q0sq)))).clamp(0.0, 1.0)
                };
            }
        });

        let prev = img.clone();
        img.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, v) in row.iter_mut().enumerate() {
                let i = prev[idx(y, x)];
                let c = coef[idx(y, x)];
                let yd = (y + 1).min(h - 1);
                let xr = (x + 1).min(w - 1);
                let div = coef[idx(yd, x)] * (prev[idx(yd, x)] - i)
                    + c * (prev[idx(y.saturating_sub(1), x)] - i)
                    + coef[idx(y, xr)] * (prev[idx(y, xr)] - i)
                    + c * (prev[idx(y, x.saturating_sub(1))] - i);
                *v = i + dt / 4.0 * div;
            }
        });
    }
    RealField::new(h, w, img.into_iter().map(|v| v as f32).collect())
}
