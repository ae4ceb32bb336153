//! B-mode formation and image quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, RealField};
use crate::phantom::PhantomSpec;
use crate::stack::ApertureStack;

pub const DEFAULT_DYNAMIC_RANGE: f64 = 60.0;
pub const DEFAULT_GCNR_BINS: usize = 256;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Reported for identical images, where MSE is zero.
pub const PSNR_CAP_DB: f64 = 99.0;

pub fn compound(x: &ApertureStack) -> ComplexField {
    x.compound()
}

/// Log-compressed envelope in dB, 0 at the peak, clipped at `-dynamic_range`.
#[derive(Clone, Debug, PartialEq)]
pub struct BModeImage {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
    pub dynamic_range: f64,
}

pub fn bmode(y: &ComplexField, dynamic_range: f64) -> Result<BModeImage> {
    envelope_bmode(&y.envelope(), dynamic_range)
}

pub fn envelope_bmode(env: &RealField, dynamic_range: f64) -> Result<BModeImage> {
    if !(dynamic_range.is_finite() && dynamic_range > 0.0) {
        return Err(Error::arg(format!("dynamic range must be positive, got {dynamic_range}")));
    }
    let peak = env.data.iter().fold(0f32, |m, &v| m.max(v));
    if peak <= 0.0 || !peak.is_finite() {
        return Err(Error::arg("cannot log-compress an all-zero or non-finite field"));
    }
    let floor = -dynamic_range;
    let data = env
        .data
        .iter()
        .map(|&v| {
            let db = 20.0 * (v as f64 / peak as f64).log10();
            db.max(floor) as f32
        })
        .collect();
    Ok(BModeImage {
        h: env.h,
        w: env.w,
        data,
        dynamic_range,
    })
}

/// Region masks over an `h x w` image.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiSpec {
    pub h: usize,
    pub w: usize,
    pub signal: Vec<bool>,
    pub background: Vec<bool>,
    /// Region whose envelope spread is the SNR denominator.
    pub noise: Vec<bool>,
}

impl RoiSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.h * self.w;
        for (name, m) in [("signal", &self.signal), ("background", &self.background), ("noise", &self.noise)] {
            if m.len() != n {
                return Err(Error::arg(format!("{name} mask has {} entries, image has {n}", m.len())));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::arg(format!("{name} region is empty")));
            }
        }
        for i in 0..n {
            let count = self.signal[i] as u8 + self.background[i] as u8 + self.noise[i] as u8;
            if count > 1 {
                return Err(Error::arg(format!("regions overlap at pixel {i}")));
            }
        }
        Ok(())
    }

    fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        if (self.h, self.w) != (h, w) {
            return Err(Error::arg(format!(
                "regions are {}x{}, image is {h}x{w}",
                self.h, self.w
            )));
        }
        Ok(())
    }

    /// Default regions for a phantom: the inclusion eroded by a margin is
    /// the signal, a band around the dilated inclusion is the background,
    /// and the deepest rows clear of the inclusion are the noise region.
    /// Background and noise keep away from the lateral borders, where the
    /// shifted side-lobe replicas run out of support.
    pub fn for_phantom(spec: &PhantomSpec) -> Result<Self> {
        spec.validate()?;
        let (h, w) = (spec.height, spec.width);
        let side = spec
            .offsets()
            .iter()
            .fold(0f64, |m, o| m.max(o.abs()))
            .ceil() as usize
            + (3.0 * crate::phantom::lateral_sigma(spec.apertures)).ceil() as usize;
        let side = side.min(w / 4);
        let r = spec.inclusion_radius;
        let margin = (0.15 * r).round().max(2.0) as usize;
        let band = (0.5 * r).max(4.0);
        let strip = (h / 8).max(4).min(h);
        let inc = spec.inclusion_mask();
        let signal = erode(&inc, h, w, margin);
        let grown = dilate(&inc, h, w, margin);
        let (cy, cx) = spec.inclusion_center;
        let outer = r + margin as f64 + band;
        let mut background = vec![false; h * w];
        let mut noise = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if grown[i] || x < side || x >= w - side {
                    continue;
                }
                if y >= h - strip {
                    noise[i] = true;
                } else if (y as f64 - cy).hypot(x as f64 - cx) <= outer {
                    background[i] = true;
                }
            }
        }
        let roi = Self {
            h,
            w,
            signal,
            background,
            noise,
        };
        roi.validate()?;
        Ok(roi)
    }
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                v.push((dy, dx));
            }
        }
    }
    v
}

/// Pixels whose whole disk neighbourhood lies inside `mask` (outside counts as false).
fn erode(mask: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    let offs = disk_offsets(radius);
    let at = |y: isize, x: isize| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask[y as usize * w + x as usize];
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            mask[i] && offs.iter().all(|&(dy, dx)| at(y + dy, x + dx))
        })
        .collect()
}

fn dilate(mask: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    let offs = disk_offsets(radius);
    let at = |y: isize, x: isize| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask[y as usize * w + x as usize];
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            offs.iter().any(|&(dy, dx)| at(y + dy, x + dx))
        })
        .collect()
}

fn select<'a>(data: &'a [f32], mask: &'a [bool]) -> impl Iterator<Item = f64> + 'a {
    data.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v as f64)
}

fn mean_std(values: impl Iterator<Item = f64>) -> Result<(f64, f64)> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return Err(Error::arg("empty region"));
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    Ok((m, var.sqrt()))
}

/// `20 log10(mean envelope in the signal region / envelope std in the noise region)`.
pub fn snr(envelope: &RealField, roi: &RoiSpec) -> Result<f64> {
    roi.check_extent(envelope.h, envelope.w)?;
    let (ms, _) = mean_std(select(&envelope.data, &roi.signal))?;
    let (_, sn) = mean_std(select(&envelope.data, &roi.noise))?;
    if sn == 0.0 {
        return Err(Error::UndefinedMetric("SNR with zero noise spread".into()));
    }
    Ok(20.0 * (ms / sn).log10())
}

/// `|mu_s - mu_b| / sqrt(sigma_s^2 + sigma_b^2)` on the dB image.
pub fn cnr(img: &BModeImage, roi: &RoiSpec) -> Result<f64> {
    roi.check_extent(img.h, img.w)?;
    let (ms, ss) = mean_std(select(&img.data, &roi.signal))?;
    let (mb, sb) = mean_std(select(&img.data, &roi.background))?;
    let d = (ss * ss + sb * sb).sqrt();
    if d == 0.0 {
        return Err(Error::UndefinedMetric("CNR with zero spread in both regions".into()));
    }
    Ok((ms - mb).abs() / d)
}

/// One minus the overlap of the two regions' normalised histograms.
pub fn gcnr(img: &BModeImage, roi: &RoiSpec, bins: usize) -> Result<f64> {
    roi.check_extent(img.h, img.w)?;
    let s: Vec<f64> = select(&img.data, &roi.signal).collect();
    let b: Vec<f64> = select(&img.data, &roi.background).collect();
    gcnr_samples(&s, &b, bins)
}

/// gCNR of two sample sets over a shared `bins`-bin histogram.
pub fn gcnr_samples(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::arg(format!("gCNR needs at least 2 bins, got {bins}")));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("gCNR of an empty region"));
    }
    let (lo, hi) = a
        .iter()
        .chain(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::arg("gCNR of non-finite samples"));
    }
    let hist = |v: &[f64]| {
        let mut h = vec![0f64; bins];
        for &x in v {
            let k = if hi > lo {
                (((x - lo) / (hi - lo)) * bins as f64).floor() as usize
            } else {
                0
            };
            h[k.min(bins - 1)] += 1.0;
        }
        let n = v.len() as f64;
        h.iter_mut().for_each(|c| *c /= n);
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    let overlap: f64 = ha.iter().zip(&hb).map(|(p, q)| p.min(*q)).sum();
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

fn check_pair(a: &BModeImage, b: &BModeImage) -> Result<()> {
    if (a.h, a.w) != (b.h, b.w) {
        return Err(Error::arg(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    if a.dynamic_range != b.dynamic_range {
        return Err(Error::arg("images have different dynamic ranges"));
    }
    Ok(())
}

/// `10 log10(R^2 / MSE)` with `R` the dynamic range, capped at [`PSNR_CAP_DB`].
pub fn psnr(test: &BModeImage, reference: &BModeImage) -> Result<f64> {
    check_pair(test, reference)?;
    let mse = test
        .data
        .iter()
        .zip(&reference.data)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / test.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    let r = test.dynamic_range;
    Ok((10.0 * (r * r / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering; output is `(h - k + 1) x (w - k + 1)`.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|t| g[t] * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| g[t] * tmp[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM with a Gaussian window (sigma 1.5) of side `window`, over the
/// positions where the window fits inside the image.
pub fn ssim(test: &BModeImage, reference: &BModeImage, window: usize) -> Result<f64> {
    check_pair(test, reference)?;
    if window == 0 || window > test.h || window > test.w {
        return Err(Error::arg(format!(
            "SSIM window {window} does not fit a {}x{} image",
            test.h, test.w
        )));
    }
    let (h, w) = (test.h, test.w);
    let l = test.dynamic_range;
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let g = gaussian_window(window, SSIM_SIGMA);
    let a: Vec<f64> = test.data.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = reference.data.iter().map(|&v| v as f64).collect();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let ma = filter_valid(&a, h, w, &g);
    let mb = filter_valid(&b, h, w, &g);
    let saa = filter_valid(&prod(&a, &a), h, w, &g);
    let sbb = filter_valid(&prod(&b, &b), h, w, &g);
    let sab = filter_valid(&prod(&a, &b), h, w, &g);
    let mut total = 0.0;
    for i in 0..ma.len() {
        let (mx, my) = (ma[i], mb[i]);
        let vx = saa[i] - mx * mx;
        let vy = sbb[i] - my * my;
        let cxy = sab[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok((total / ma.len() as f64).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub snr_db: f64,
    pub cnr: f64,
    pub gcnr: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// All five metrics of `y`. PSNR and SSIM compare against `reference`.
pub fn evaluate(y: &ComplexField, reference: &ComplexField, roi: &RoiSpec, dynamic_range: f64) -> Result<MetricsReport> {
    evaluate_envelope(&y.envelope(), &reference.envelope(), roi, dynamic_range)
}

pub fn evaluate_envelope(
    env: &RealField,
    reference: &RealField,
    roi: &RoiSpec,
    dynamic_range: f64,
) -> Result<MetricsReport> {
    evaluate_envelope_with_bins(env, reference, roi, dynamic_range, DEFAULT_GCNR_BINS)
}

pub fn evaluate_envelope_with_bins(
    env: &RealField,
    reference: &RealField,
    roi: &RoiSpec,
    dynamic_range: f64,
    gcnr_bins: usize,
) -> Result<MetricsReport> {
    roi.validate()?;
    let img = envelope_bmode(env, dynamic_range)?;
    let ref_img = envelope_bmode(reference, dynamic_range)?;
    Ok(MetricsReport {
        snr_db: snr(env, roi)?,
        cnr: cnr(&img, roi)?,
        gcnr: gcnr(&img, roi, gcnr_bins)?,
        psnr_db: psnr(&img, &ref_img)?,
        ssim: ssim(&img, &ref_img, SSIM_WINDOW)?,
    })
}
