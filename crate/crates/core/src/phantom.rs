//! Analytic synthetic-aperture phantom.
//!
//! A smooth echogenicity map (background plus one circle or star inclusion)
//! is turned into per-aperture clean IQ planes by a separable point-spread
//! function, then corrupted with the composite model
//! `noisy = clean * speckle + sidelobes + electronic`.

use num_complex::Complex32;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cvnn::ComplexTensor;
use crate::error::{Error, Result};
use crate::field::{ComplexField, RealField};
use crate::stack::ApertureStack;

/// Normalized axial carrier frequency, cycles per pixel of depth.
pub const CARRIER_FREQ: f32 = 0.125;
/// Standard deviation of the axial pulse envelope in pixels.
pub const AXIAL_SIGMA: f32 = 1.5;
/// Lateral PSF standard deviation per aperture, in pixels. Splitting the
/// 64-element array into N sub-apertures shrinks each one by N, so the beam
/// widens proportionally.
pub const LATERAL_SIGMA_PER_APERTURE: f32 = 0.5;
/// Half-span of the per-aperture lateral phase slope, radians per pixel.
pub const STEERING_SLOPE: f32 = 0.004;
/// Inner/outer vertex radius ratio of the five-point star.
pub const STAR_INNER_RATIO: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Circle,
    Star,
}

impl Geometry {
    pub fn as_str(self) -> &'static str {
        match self {
            Geometry::Circle => "circle",
            Geometry::Star => "star",
        }
    }
}

impl std::str::FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(Geometry::Circle),
            "star" => Ok(Geometry::Star),
            other => Err(Error::arg(format!("unknown geometry {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub apertures: usize,
    pub geometry: Geometry,
    /// `(row, column)` of the inclusion centre in pixels.
    pub inclusion_center: (f64, f64),
    pub inclusion_radius: f64,
    /// Inclusion echogenicity relative to the unit background.
    pub inclusion_contrast: f64,
    /// Electronic SNR per aperture in dB; `inf` disables electronic noise.
    #[serde(with = "crate::serde_util::extended_f64")]
    pub snr_db: f64,
    pub speckle_sigma: f64,
    pub speckle_corr_len: f64,
    pub sidelobe_gain: f64,
    /// Lateral replica shift per aperture in pixels. Empty means defaults.
    #[serde(default)]
    pub sidelobe_offsets: Vec<f64>,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            apertures: 4,
            geometry: Geometry::Circle,
            inclusion_center: (64.0, 64.0),
            inclusion_radius: 28.0,
            inclusion_contrast: 3.0,
            snr_db: 10.0,
            speckle_sigma: 0.5,
            speckle_corr_len: 1.0,
            sidelobe_gain: 0.15,
            sidelobe_offsets: Vec::new(),
            seed: 0,
        }
    }
}

impl PhantomSpec {
    /// Scaled variant of the default spec for an `h x w` field: the inclusion
    /// stays centred and its radius scales with the smaller extent.
    pub fn sized(h: usize, w: usize) -> Self {
        let r = 28.0 * h.min(w) as f64 / 128.0;
        Self {
            height: h,
            width: w,
            inclusion_center: (h as f64 / 2.0, w as f64 / 2.0),
            inclusion_radius: r,
            ..Self::default()
        }
    }

    pub fn default_offsets(apertures: usize) -> Vec<f64> {
        (0..apertures).map(|n| 6.0 + 3.0 * n as f64).collect()
    }

    /// Side-lobe shifts with defaults filled in.
    pub fn offsets(&self) -> Vec<f64> {
        if self.sidelobe_offsets.is_empty() {
            Self::default_offsets(self.apertures)
        } else {
            self.sidelobe_offsets.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.apertures) {
            return Err(Error::arg(format!(
                "apertures must be in 2..=8, got {}",
                self.apertures
            )));
        }
        if self.height < 4 || self.width < 4 {
            return Err(Error::arg("phantom must be at least 4x4"));
        }
        let (cy, cx) = self.inclusion_center;
        let r = self.inclusion_radius;
        if !(r > 0.0)
            || cy - r < 0.0
            || cx - r < 0.0
            || cy + r > (self.height - 1) as f64
            || cx + r > (self.width - 1) as f64
        {
            return Err(Error::arg(format!(
                "inclusion at ({cy}, {cx}) radius {r} does not fit a {}x{} field",
                self.height, self.width
            )));
        }
        if !(self.inclusion_contrast >= 0.0) || !self.inclusion_contrast.is_finite() {
            return Err(Error::arg("inclusion_contrast must be finite and >= 0"));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::arg("snr_db must be a number or +inf"));
        }
        if !(self.speckle_sigma >= 0.0) || !self.speckle_sigma.is_finite() {
            return Err(Error::arg("speckle_sigma must be finite and >= 0"));
        }
        if !(self.speckle_corr_len >= 0.0) || !self.speckle_corr_len.is_finite() {
            return Err(Error::arg("speckle_corr_len must be finite and >= 0"));
        }
        if !(self.sidelobe_gain >= 0.0) || !self.sidelobe_gain.is_finite() {
            return Err(Error::arg("sidelobe_gain must be finite and >= 0"));
        }
        if !self.sidelobe_offsets.is_empty() && self.sidelobe_offsets.len() != self.apertures {
            return Err(Error::arg(format!(
                "sidelobe_offsets has {} entries for {} apertures",
                self.sidelobe_offsets.len(),
                self.apertures
            )));
        }
        if self.sidelobe_offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::arg("sidelobe_offsets must be finite"));
        }
        Ok(())
    }

    /// True for pixels inside the inclusion.
    pub fn inclusion_mask(&self) -> Vec<bool> {
        let (cy, cx) = self.inclusion_center;
        let r = self.inclusion_radius;
        let star = match self.geometry {
            Geometry::Star => Some(star_polygon(cy, cx, r)),
            Geometry::Circle => None,
        };
        let mut mask = vec![false; self.height * self.width];
        for y in 0..self.height {
            for x in 0..self.width {
                let (py, px) = (y as f64, x as f64);
                mask[y * self.width + x] = match &star {
                    None => (py - cy).powi(2) + (px - cx).powi(2) <= r * r,
                    Some(poly) => point_in_polygon(py, px, poly),
                };
            }
        }
        mask
    }
}

/// Vertices `(row, col)` of a five-point star with outer radius `r`, one tip
/// pointing toward shallower depth.
pub fn star_polygon(cy: f64, cx: f64, r: f64) -> Vec<(f64, f64)> {
    (0..10)
        .map(|k| {
            let radius = if k % 2 == 0 { r } else { r * STAR_INNER_RATIO };
            let angle = -std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::PI / 5.0;
            (cy + radius * angle.sin(), cx + radius * angle.cos())
        })
        .collect()
}

fn point_in_polygon(py: f64, px: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (yi, xi) = poly[i];
        let (yj, xj) = poly[j];
        if (yi > py) != (yj > py) {
            let x_cross = xi + (py - yi) * (xj - xi) / (yj - yi);
            if px < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Echogenicity map: 1.0 background, `inclusion_contrast` inside the inclusion.
pub fn make_echo_map(spec: &PhantomSpec) -> Result<RealField> {
    spec.validate()?;
    let contrast = spec.inclusion_contrast as f32;
    let data = spec
        .inclusion_mask()
        .into_iter()
        .map(|inside| if inside { contrast } else { 1.0 })
        .collect();
    RealField::new(spec.height, spec.width, data)
}

fn gaussian_taps(sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let half = (4.0 * sigma).ceil() as isize;
    (-half..=half)
        .map(|k| (-(k as f32).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Convolution along one axis with edge replication. `taps` has odd length
/// and is centred.
fn convolve_axis(
    src: &[Complex32],
    h: usize,
    w: usize,
    taps: &[Complex32],
    axial: bool,
) -> Vec<Complex32> {
    let half = (taps.len() / 2) as isize;
    let mut out = vec![Complex32::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = Complex32::new(0.0, 0.0);
            for (t, &k) in taps.iter().enumerate() {
                let off = t as isize - half;
                // y - off: taps[t] weights the sample `off` pixels behind
                let (sy, sx) = if axial {
                    ((y as isize - off).clamp(0, h as isize - 1) as usize, x)
                } else {
                    (y, (x as isize - off).clamp(0, w as isize - 1) as usize)
                };
                acc += k * src[sy * w + sx];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Lateral PSF standard deviation for an `apertures`-way split.
pub fn lateral_sigma(apertures: usize) -> f32 {
    LATERAL_SIGMA_PER_APERTURE * apertures as f32
}

/// Per-aperture lateral phase slope (radians per pixel).
pub fn steering_slope(aperture: usize, apertures: usize) -> f32 {
    if apertures < 2 {
        return 0.0;
    }
    STEERING_SLOPE * (2.0 * aperture as f32 / (apertures - 1) as f32 - 1.0)
}

/// Clean per-aperture planes: the echo map on an axial carrier, blurred by a
/// Gaussian-windowed axial pulse and a lateral Gaussian, each aperture with
/// its own small lateral phase slope.
pub fn synth_clean_stack(echo: &RealField, spec: &PhantomSpec) -> Result<ApertureStack> {
    spec.validate()?;
    if echo.h != spec.height || echo.w != spec.width {
        return Err(Error::arg("echo map extents differ from the phantom spec"));
    }
    let (h, w, n) = (echo.h, echo.w, spec.apertures);
    let two_pi = 2.0 * std::f32::consts::PI;

    let axial: Vec<Complex32> = {
        let env = gaussian_taps(AXIAL_SIGMA);
        let sum: f32 = env.iter().sum();
        let half = (env.len() / 2) as isize;
        env.iter()
            .enumerate()
            .map(|(t, &e)| {
                let k = (t as isize - half) as f32;
                Complex32::from_polar(e / sum, two_pi * CARRIER_FREQ * k)
            })
            .collect()
    };
    let lateral: Vec<Complex32> = {
        let env = gaussian_taps(lateral_sigma(n));
        let sum: f32 = env.iter().sum();
        env.iter().map(|&e| Complex32::new(e / sum, 0.0)).collect()
    };

    let mut data = Vec::with_capacity(2 * n * h * w);
    let xc = (w as f32 - 1.0) / 2.0;
    for a in 0..n {
        let slope = steering_slope(a, n);
        let modulated: Vec<Complex32> = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f32, (i % w) as f32);
                let phase = two_pi * CARRIER_FREQ * y + slope * (x - xc);
                Complex32::from_polar(echo.data[i], phase)
            })
            .collect();
        let blurred = convolve_axis(&modulated, h, w, &axial, true);
        let blurred = convolve_axis(&blurred, h, w, &lateral, false);
        data.extend(blurred.iter().flat_map(|z| [z.re, z.im]));
    }
    ApertureStack::new(ComplexTensor::from_interleaved(&[n, h, w], data)?)
}

/// Clean and noisy stacks together with every noise realization.
#[derive(Clone, Debug)]
pub struct GroundTruthBundle {
    pub spec: PhantomSpec,
    pub clean_stack: ApertureStack,
    pub noisy_stack: ApertureStack,
    pub clean_compound: ComplexField,
    /// Multiplicative speckle, `[N, H, W]`.
    pub speckle: ComplexTensor,
    /// Additive side-lobe replicas, `[N, H, W]`.
    pub sidelobes: ComplexTensor,
    /// Additive electronic noise, `[N, H, W]`.
    pub electronic: ComplexTensor,
}

/// The composite noise model applied to one sample.
#[inline]
pub fn compose(clean: Complex32, speckle: Complex32, sidelobe: Complex32, electronic: Complex32) -> Complex32 {
    clean * speckle + sidelobe + electronic
}

const STREAM_SPECKLE: u64 = 1;
const STREAM_ELECTRONIC: u64 = 2;

fn stream_rng(seed: u64, term: u64, aperture: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(term * 256 + aperture as u64);
    rng
}

fn complex_gaussian(rng: &mut ChaCha8Rng, variance: f64) -> Complex32 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex32::new((re * s) as f32, (im * s) as f32)
}

/// Unit-variance complex Gaussian field smoothed by a Gaussian kernel of
/// standard deviation `corr_len`. The field is drawn with a margin and
/// filtered in "valid" mode so statistics are uniform up to the borders.
fn speckle_field(rng: &mut ChaCha8Rng, h: usize, w: usize, corr_len: f32) -> Vec<Complex32> {
    let taps = gaussian_taps(corr_len);
    let norm = taps.iter().map(|t| t * t).sum::<f32>().sqrt();
    let taps: Vec<f32> = taps.iter().map(|t| t / norm).collect();
    let m = taps.len() / 2;
    let (hh, ww) = (h + 2 * m, w + 2 * m);
    let raw: Vec<Complex32> = (0..hh * ww).map(|_| complex_gaussian(rng, 1.0)).collect();
    // rows then columns, valid region only
    let mut tmp = vec![Complex32::new(0.0, 0.0); hh * w];
    for y in 0..hh {
        for x in 0..w {
            let mut acc = Complex32::new(0.0, 0.0);
            for (t, &k) in taps.iter().enumerate() {
                acc += raw[y * ww + x + t] * k;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![Complex32::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = Complex32::new(0.0, 0.0);
            for (t, &k) in taps.iter().enumerate() {
                acc += tmp[(y + t) * w + x] * k;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Lateral shift with linear interpolation; samples from outside are zero.
fn shift_lateral(plane: &[Complex32], h: usize, w: usize, offset: f64) -> Vec<Complex32> {
    let mut out = vec![Complex32::new(0.0, 0.0); h * w];
    let base = offset.floor();
    let frac = (offset - base) as f32;
    let base = base as isize;
    let sample = |y: usize, x: isize| -> Complex32 {
        if x < 0 || x >= w as isize {
            Complex32::new(0.0, 0.0)
        } else {
            plane[y * w + x as usize]
        }
    };
    for y in 0..h {
        for x in 0..w {
            // out(x) = plane(x - offset)
            let src = x as isize - base;
            out[y * w + x] = sample(y, src) * (1.0 - frac) + sample(y, src - 1) * frac;
        }
    }
    out
}

pub fn apply_noise_model(clean: &ApertureStack, spec: &PhantomSpec) -> Result<GroundTruthBundle> {
    spec.validate()?;
    let (n, h, w) = (clean.n(), clean.h(), clean.w());
    if n != spec.apertures || h != spec.height || w != spec.width {
        return Err(Error::arg("clean stack extents differ from the phantom spec"));
    }
    let offsets = spec.offsets();
    let mut speckle = Vec::with_capacity(n * h * w);
    let mut sidelobes = Vec::with_capacity(n * h * w);
    let mut electronic = Vec::with_capacity(n * h * w);
    let mut noisy = Vec::with_capacity(n * h * w);

    for a in 0..n {
        let plane: Vec<Complex32> = (0..h * w)
            .map(|i| clean.tensor().get(a * h * w + i))
            .collect();

        let sp: Vec<Complex32> = if spec.speckle_sigma == 0.0 {
            vec![Complex32::new(1.0, 0.0); h * w]
        } else {
            let mut rng = stream_rng(spec.seed, STREAM_SPECKLE, a);
            let sigma = spec.speckle_sigma as f32;
            speckle_field(&mut rng, h, w, spec.speckle_corr_len as f32)
                .into_iter()
                .map(|s| Complex32::new(1.0, 0.0) + s * sigma)
                .collect()
        };

        let sl: Vec<Complex32> = if spec.sidelobe_gain == 0.0 {
            vec![Complex32::new(0.0, 0.0); h * w]
        } else {
            let g = spec.sidelobe_gain as f32;
            let plus = shift_lateral(&plane, h, w, offsets[a]);
            let minus = shift_lateral(&plane, h, w, -offsets[a]);
            plus.iter().zip(&minus).map(|(p, m)| (p + m) * g).collect()
        };

        let el: Vec<Complex32> = if spec.snr_db == f64::INFINITY {
            vec![Complex32::new(0.0, 0.0); h * w]
        } else {
            let p_signal = plane
                .iter()
                .zip(&sp)
                .map(|(c, s)| (c * s).norm_sqr() as f64)
                .sum::<f64>()
                / (h * w) as f64;
            let variance = p_signal * 10f64.powf(-spec.snr_db / 10.0);
            let mut rng = stream_rng(spec.seed, STREAM_ELECTRONIC, a);
            (0..h * w).map(|_| complex_gaussian(&mut rng, variance)).collect()
        };

        for i in 0..h * w {
            noisy.push(compose(plane[i], sp[i], sl[i], el[i]));
        }
        speckle.extend(sp);
        sidelobes.extend(sl);
        electronic.extend(el);
    }

    let shape = [n, h, w];
    let noisy_stack = ApertureStack::new(ComplexTensor::from_complex(&shape, &noisy)?)?;
    let bundle = GroundTruthBundle {
        spec: spec.clone(),
        clean_compound: clean.compound(),
        clean_stack: clean.clone(),
        noisy_stack,
        speckle: ComplexTensor::from_complex(&shape, &speckle)?,
        sidelobes: ComplexTensor::from_complex(&shape, &sidelobes)?,
        electronic: ComplexTensor::from_complex(&shape, &electronic)?,
    };
    if !bundle.noisy_stack.tensor().is_finite() {
        return Err(Error::Numeric("noise model produced non-finite samples".into()));
    }
    Ok(bundle)
}

/// Echo map, clean stack and noise model in one deterministic call.
pub fn generate_dataset(spec: &PhantomSpec) -> Result<GroundTruthBundle> {
    let echo = make_echo_map(spec)?;
    let clean = synth_clean_stack(&echo, spec)?;
    apply_noise_model(&clean, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(geometry: Geometry) -> PhantomSpec {
        PhantomSpec {
            geometry,
            ..PhantomSpec::sized(64, 64)
        }
    }

    #[test]
    fn unit_contrast_is_uniform() {
        let spec = PhantomSpec {
            inclusion_contrast: 1.0,
            ..small(Geometry::Star)
        };
        let echo = make_echo_map(&spec).unwrap();
        assert!(echo.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn disk_pixel_count_matches_area() {
        for r in [20.0, 25.0, 31.5] {
            let spec = PhantomSpec {
                inclusion_radius: r,
                ..PhantomSpec::default()
            };
            let count = spec.inclusion_mask().iter().filter(|&&m| m).count() as f64;
            let area = std::f64::consts::PI * r * r;
            assert!((count - area).abs() / area < 0.02, "r={r}: {count} vs {area}");
        }
    }

    #[test]
    fn star_is_smaller_than_circle() {
        let circle = PhantomSpec::default().inclusion_mask();
        let star = PhantomSpec {
            geometry: Geometry::Star,
            ..PhantomSpec::default()
        }
        .inclusion_mask();
        let (c, s) = (
            circle.iter().filter(|&&m| m).count(),
            star.iter().filter(|&&m| m).count(),
        );
        assert!(s < c && s > 0);
        // the star lies inside the disk
        assert!(star.iter().zip(&circle).all(|(&s, &c)| !s || c));
    }

    #[test]
    fn inclusion_outside_field_rejected() {
        let spec = PhantomSpec {
            inclusion_center: (10.0, 64.0),
            ..PhantomSpec::default()
        };
        assert!(matches!(make_echo_map(&spec), Err(Error::Argument(_))));
    }

    #[test]
    fn negative_noise_parameters_rejected() {
        let spec = small(Geometry::Circle);
        let clean = synth_clean_stack(&make_echo_map(&spec).unwrap(), &spec).unwrap();
        let bad = PhantomSpec {
            sidelobe_gain: -0.1,
            ..spec.clone()
        };
        assert!(matches!(apply_noise_model(&clean, &bad), Err(Error::Argument(_))));
        let bad = PhantomSpec {
            speckle_sigma: -1.0,
            ..spec
        };
        assert!(matches!(apply_noise_model(&clean, &bad), Err(Error::Argument(_))));
    }

    #[test]
    fn zero_echo_gives_zero_stack() {
        let spec = small(Geometry::Circle);
        let echo = RealField::filled(64, 64, 0.0);
        let clean = synth_clean_stack(&echo, &spec).unwrap();
        assert!(clean.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_noiseless_case_is_exact() {
        let spec = PhantomSpec {
            speckle_sigma: 0.0,
            sidelobe_gain: 0.0,
            snr_db: f64::INFINITY,
            ..small(Geometry::Star)
        };
        let b = generate_dataset(&spec).unwrap();
        assert_eq!(b.noisy_stack, b.clean_stack);
    }

    #[test]
    fn zero_db_noise_matches_signal_power() {
        let spec = PhantomSpec {
            snr_db: 0.0,
            ..PhantomSpec::default()
        };
        let b = generate_dataset(&spec).unwrap();
        let (n, hw) = (spec.apertures, spec.height * spec.width);
        let mut ps = 0.0f64;
        let mut pe = 0.0f64;
        for i in 0..n * hw {
            ps += (b.clean_stack.tensor().get(i) * b.speckle.get(i)).norm_sqr() as f64;
            pe += b.electronic.get(i).norm_sqr() as f64;
        }
        assert!((pe / ps - 1.0).abs() < 0.02, "ratio {}", pe / ps);
    }
}
