//! Dual-head complex U-Net: anatomy encoder, noise encoder and a shared
//! decoder joined by summation skips.
//!
//! ```text
//! encoder level k:  h_k = crelu(conv3x3(pool2(h_{k-1})))    (no pool at k = 1)
//! decoder:          s_k = A_k + eta_k   (or A_k alone on the clean path)
//!                   d = crelu(conv3x3(up2(s_3)))   + s_2
//!                   d = crelu(conv3x3(up2(d)))     + s_1
//!                   out = conv1x1(d)                 -> N channels
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cvnn::{ComplexTensor, GradTape, NodeId};
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::stack::ApertureStack;

pub const LEVELS: usize = 3;
pub const DEFAULT_WIDTHS: [usize; LEVELS] = [16, 32, 64];
pub const KERNEL_SIZE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Anatomy,
    Noise,
}

/// All trainable tensors. Layout of `tensors`, as (kernel, bias) pairs:
/// anatomy levels 1..3, noise levels 1..3, decoder stages 1..3.
///
/// Inputs are divided by `input_scale` before the first layer and decoded
/// stacks multiplied by it, so the network itself sees unit-RMS data.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub apertures: usize,
    pub widths: [usize; LEVELS],
    pub input_scale: f32,
    pub tensors: Vec<ComplexTensor>,
}

/// Multi-scale complex feature maps, level k of shape `[N_k, H / 2^(k-1), W / 2^(k-1)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<ComplexTensor>,
}

impl FeaturePyramid {
    pub fn zeros_like(other: &FeaturePyramid) -> Self {
        Self {
            levels: other
                .levels
                .iter()
                .map(|l| ComplexTensor::zeros(l.shape()))
                .collect(),
        }
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.levels.iter().map(|l| l.shape().to_vec()).collect()
    }
}

fn layer_shapes(apertures: usize, widths: [usize; LEVELS]) -> Vec<(Vec<usize>, usize)> {
    let k = KERNEL_SIZE;
    let mut shapes = Vec::new();
    for _ in 0..2 {
        let mut cin = apertures;
        for &w in &widths {
            shapes.push((vec![w, cin, k, k], w));
            cin = w;
        }
    }
    shapes.push((vec![widths[1], widths[2], k, k], widths[1]));
    shapes.push((vec![widths[0], widths[1], k, k], widths[0]));
    shapes.push((vec![apertures, widths[0], 1, 1], apertures));
    shapes
}

/// Fan-in scaled uniform init: each real and imaginary part is drawn from
/// `U(-b, b)` with `b = sqrt(3 / fan_in)`, giving complex weight variance
/// `2 / fan_in`. Biases start at zero.
pub fn init_model(apertures: usize, seed: u64) -> Result<ModelParams> {
    init_model_with_widths(apertures, DEFAULT_WIDTHS, seed)
}

pub fn init_model_with_widths(apertures: usize, widths: [usize; LEVELS], seed: u64) -> Result<ModelParams> {
    if !(2..=8).contains(&apertures) {
        return Err(Error::arg(format!("apertures must be in 2..=8, got {apertures}")));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::arg("channel widths must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for (kshape, cout) in layer_shapes(apertures, widths) {
        let fan_in = (kshape[1] * kshape[2] * kshape[3]) as f32;
        let bound = (3.0 / fan_in).sqrt();
        let n: usize = kshape.iter().product();
        let data = (0..2 * n).map(|_| rng.random_range(-bound..bound)).collect();
        tensors.push(ComplexTensor::from_interleaved(&kshape, data)?);
        tensors.push(ComplexTensor::zeros(&[cout]));
    }
    Ok(ModelParams {
        apertures,
        widths,
        input_scale: 1.0,
        tensors,
    })
}

impl ModelParams {
    fn encoder_base(branch: Branch) -> usize {
        match branch {
            Branch::Anatomy => 0,
            Branch::Noise => 2 * LEVELS,
        }
    }

    const DECODER_BASE: usize = 4 * LEVELS;

    pub fn encoder_layer(&self, branch: Branch, level: usize) -> (&ComplexTensor, &ComplexTensor) {
        let i = Self::encoder_base(branch) + 2 * level;
        (&self.tensors[i], &self.tensors[i + 1])
    }

    pub fn decoder_layer(&self, stage: usize) -> (&ComplexTensor, &ComplexTensor) {
        let i = Self::DECODER_BASE + 2 * stage;
        (&self.tensors[i], &self.tensors[i + 1])
    }

    /// Number of complex parameters.
    pub fn complex_count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Number of real scalars (two per complex parameter).
    pub fn real_count(&self) -> usize {
        2 * self.complex_count()
    }

    /// Checks that `tensors` has the layout implied by `apertures` and `widths`.
    pub fn validate(&self) -> Result<()> {
        let shapes = layer_shapes(self.apertures, self.widths);
        if self.tensors.len() != 2 * shapes.len() {
            return Err(Error::arg(format!(
                "expected {} parameter tensors, got {}",
                2 * shapes.len(),
                self.tensors.len()
            )));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::arg(format!("input scale {} must be positive", self.input_scale)));
        }
        for (i, (k, b)) in shapes.iter().enumerate() {
            if self.tensors[2 * i].shape() != k.as_slice() || self.tensors[2 * i + 1].shape() != [*b] {
                return Err(Error::arg(format!("parameter tensor {} has the wrong shape", 2 * i)));
            }
        }
        Ok(())
    }

    /// Puts every tensor on the tape, as trainable leaves or constants.
    pub fn register(&self, tape: &mut GradTape, trainable: bool) -> ParamNodes {
        let ids = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        ParamNodes { ids }
    }

    /// `x / input_scale`.
    pub fn normalize_input(&self, x: &ComplexTensor) -> ComplexTensor {
        let mut t = x.clone();
        t.scale(1.0 / self.input_scale);
        t
    }

    fn rescale_output(&self, mut t: ComplexTensor) -> ComplexTensor {
        t.scale(self.input_scale);
        t
    }

    fn check_input(&self, x: &ComplexTensor) -> Result<()> {
        let (n, h, w) = x.dims3()?;
        if n != self.apertures {
            return Err(Error::arg(format!(
                "model expects {} apertures, input has {n}",
                self.apertures
            )));
        }
        let div = 1 << (LEVELS - 1);
        if h % div != 0 || w % div != 0 || h == 0 || w == 0 {
            return Err(Error::arg(format!(
                "input extents {h}x{w} must be positive multiples of {div}"
            )));
        }
        Ok(())
    }
}

/// Tape handles for a registered [`ModelParams`], same layout.
#[derive(Clone, Debug)]
pub struct ParamNodes {
    pub ids: Vec<NodeId>,
}

impl ParamNodes {
    fn encoder(&self, branch: Branch, level: usize) -> (NodeId, NodeId) {
        let i = ModelParams::encoder_base(branch) + 2 * level;
        (self.ids[i], self.ids[i + 1])
    }

    fn decoder(&self, stage: usize) -> (NodeId, NodeId) {
        let i = ModelParams::DECODER_BASE + 2 * stage;
        (self.ids[i], self.ids[i + 1])
    }
}

/// Records one encoder branch; returns the K pyramid level nodes.
pub fn encode_on_tape(
    tape: &mut GradTape,
    params: &ParamNodes,
    branch: Branch,
    input: NodeId,
) -> Result<Vec<NodeId>> {
    let mut h = input;
    let mut levels = Vec::with_capacity(LEVELS);
    for level in 0..LEVELS {
        if level > 0 {
            h = tape.maxpool2d(h, 2)?;
        }
        let (k, b) = params.encoder(branch, level);
        let c = tape.conv2d_same(h, k, Some(b))?;
        h = tape.crelu(c)?;
        levels.push(h);
    }
    Ok(levels)
}

/// Records the decoder. With `noise` the skips carry `A + eta`, without it
/// they carry `A` only.
pub fn decode_on_tape(
    tape: &mut GradTape,
    params: &ParamNodes,
    anatomy: &[NodeId],
    noise: Option<&[NodeId]>,
) -> Result<NodeId> {
    if anatomy.len() != LEVELS || noise.is_some_and(|n| n.len() != LEVELS) {
        return Err(Error::arg(format!("pyramids must have {LEVELS} levels")));
    }
    let mut skips = Vec::with_capacity(LEVELS);
    for k in 0..LEVELS {
        let s = match noise {
            Some(n) => {
                if tape.value(anatomy[k]).shape() != tape.value(n[k]).shape() {
                    return Err(Error::arg(format!("pyramid level {} is misaligned", k + 1)));
                }
                tape.add(anatomy[k], n[k])?
            }
            None => anatomy[k],
        };
        skips.push(s);
    }
    let mut d = skips[LEVELS - 1];
    for stage in 0..LEVELS - 1 {
        let (k, b) = params.decoder(stage);
        let u = tape.upsample2x(d)?;
        let c = tape.conv2d_same(u, k, Some(b))?;
        let a = tape.crelu(c)?;
        let skip = skips[LEVELS - 2 - stage];
        if tape.value(a).shape() != tape.value(skip).shape() {
            return Err(Error::arg("decoder stage does not match the skip connection"));
        }
        d = tape.add(a, skip)?;
    }
    let (k, b) = params.decoder(LEVELS - 1);
    tape.conv2d_same(d, k, Some(b))
}

fn check_pyramid(params: &ModelParams, p: &FeaturePyramid, h: usize, w: usize) -> Result<()> {
    if p.levels.len() != LEVELS {
        return Err(Error::arg(format!("pyramid must have {LEVELS} levels")));
    }
    for (k, l) in p.levels.iter().enumerate() {
        let want = [params.widths[k], h >> k, w >> k];
        if l.shape() != want {
            return Err(Error::arg(format!(
                "pyramid level {} has shape {:?}, expected {:?}",
                k + 1,
                l.shape(),
                want
            )));
        }
    }
    Ok(())
}

fn encode(params: &ModelParams, x: &ApertureStack, branch: Branch) -> Result<FeaturePyramid> {
    params.check_input(x.tensor())?;
    let mut tape = GradTape::new();
    let nodes = params.register(&mut tape, false);
    let input = tape.constant(params.normalize_input(x.tensor()));
    let levels = encode_on_tape(&mut tape, &nodes, branch, input)?;
    Ok(FeaturePyramid {
        levels: levels.iter().map(|&l| tape.value(l).clone()).collect(),
    })
}

pub fn encode_anatomy(params: &ModelParams, x: &ApertureStack) -> Result<FeaturePyramid> {
    encode(params, x, Branch::Anatomy)
}

pub fn encode_noise(params: &ModelParams, x: &ApertureStack) -> Result<FeaturePyramid> {
    encode(params, x, Branch::Noise)
}

/// Decodes pyramids into an `N x H x W` stack (identity aperture order),
/// rescaled by `input_scale`.
pub fn decode(
    params: &ModelParams,
    anatomy: &FeaturePyramid,
    noise: Option<&FeaturePyramid>,
) -> Result<ApertureStack> {
    let first = anatomy
        .levels
        .first()
        .ok_or_else(|| Error::arg("empty anatomy pyramid"))?;
    let (_, h, w) = first.dims3()?;
    check_pyramid(params, anatomy, h, w)?;
    if let Some(n) = noise {
        check_pyramid(params, n, h, w)?;
    }
    let mut tape = GradTape::new();
    let nodes = params.register(&mut tape, false);
    let a: Vec<NodeId> = anatomy.levels.iter().map(|l| tape.constant(l.clone())).collect();
    let n: Option<Vec<NodeId>> = noise.map(|p| p.levels.iter().map(|l| tape.constant(l.clone())).collect());
    let out = decode_on_tape(&mut tape, &nodes, &a, n.as_deref())?;
    ApertureStack::new(params.rescale_output(tape.value(out).clone()))
}

/// Noisy reconstruction from both feature spaces.
pub fn forward_noisy(params: &ModelParams, x: &ApertureStack) -> Result<ApertureStack> {
    params.check_input(x.tensor())?;
    let mut tape = GradTape::new();
    let nodes = params.register(&mut tape, false);
    let input = tape.constant(params.normalize_input(x.tensor()));
    let a = encode_on_tape(&mut tape, &nodes, Branch::Anatomy, input)?;
    let n = encode_on_tape(&mut tape, &nodes, Branch::Noise, input)?;
    let out = decode_on_tape(&mut tape, &nodes, &a, Some(&n))?;
    ApertureStack::with_order(params.rescale_output(tape.value(out).clone()), x.aperture_order().to_vec())
}

/// Clean stack decoded from the anatomy space alone, and its coherent sum.
pub fn infer_clean(params: &ModelParams, x: &ApertureStack) -> Result<(ApertureStack, ComplexField)> {
    params.check_input(x.tensor())?;
    let mut tape = GradTape::new();
    let nodes = params.register(&mut tape, false);
    let input = tape.constant(params.normalize_input(x.tensor()));
    let a = encode_on_tape(&mut tape, &nodes, Branch::Anatomy, input)?;
    let out = decode_on_tape(&mut tape, &nodes, &a, None)?;
    let stack = ApertureStack::with_order(params.rescale_output(tape.value(out).clone()), x.aperture_order().to_vec())?;
    stack.tensor().ensure_finite("clean estimate")?;
    let y = stack.compound();
    Ok((stack, y))
}
