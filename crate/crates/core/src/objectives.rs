//! Swap reconstruction loss and the pyramid self-contrastive loss.

use crate::cvnn::{ComplexTensor, CustomBackward, GradTape, NodeId};
use crate::error::{Error, Result};
use crate::model::FeaturePyramid;
use crate::stack::ApertureStack;

/// Unit-norm modulus embeddings of one pyramid level, one row per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingLevel {
    pub channels: usize,
    pub dim: usize,
    /// `channels * dim`, row-major.
    pub data: Vec<f32>,
    /// Channels whose modulus vector was all zero (stored as zeros).
    pub excluded: Vec<bool>,
}

impl EmbeddingLevel {
    pub fn vector(&self, c: usize) -> &[f32] {
        &self.data[c * self.dim..(c + 1) * self.dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingPyramid {
    pub levels: Vec<EmbeddingLevel>,
}

/// Per-level mean cosines, averaged over the channels that enter the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LevelCosines {
    pub anatomy: f64,
    pub noise: f64,
    /// Mean of Cos(A1, N1) and Cos(A2, N2).
    pub cross: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub swap: f64,
    pub con: f64,
    pub total: f64,
    pub per_level_cos: Vec<LevelCosines>,
}

fn modulus_and_norm(t: &[f32]) -> (Vec<f64>, f64) {
    let m: Vec<f64> = t
        .chunks_exact(2)
        .map(|z| (z[0] as f64).hypot(z[1] as f64))
        .collect();
    let n = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    (m, n)
}

fn embed_level(t: &ComplexTensor) -> Result<EmbeddingLevel> {
    let (channels, h, w) = t.dims3()?;
    let dim = h * w;
    let mut data = Vec::with_capacity(channels * dim);
    let mut excluded = Vec::with_capacity(channels);
    for c in 0..channels {
        let (m, n) = modulus_and_norm(t.channel(c));
        if n > 0.0 && n.is_finite() {
            data.extend(m.iter().map(|v| (v / n) as f32));
            excluded.push(false);
        } else {
            data.extend(std::iter::repeat_n(0.0, dim));
            excluded.push(true);
        }
    }
    Ok(EmbeddingLevel {
        channels,
        dim,
        data,
        excluded,
    })
}

/// Per level and channel: modulus, row-major flatten, L2 normalization.
pub fn flatten_normalize(p: &FeaturePyramid) -> Result<EmbeddingPyramid> {
    Ok(EmbeddingPyramid {
        levels: p.levels.iter().map(embed_level).collect::<Result<_>>()?,
    })
}

/// Dot product of two unit vectors. `None` when either is the zero vector.
pub fn channel_cosine(a: &[f32], b: &[f32]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().all(|&v| v == 0.0) || b.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    let d: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    Ok(Some(d.clamp(-1.0, 1.0)))
}

/// Mean per-channel cosine between two aligned embedding pyramids, over all
/// levels, skipping channels where either vector is zero.
pub fn mean_channel_cosine(a: &EmbeddingPyramid, b: &EmbeddingPyramid) -> Result<f64> {
    if a.levels.len() != b.levels.len() {
        return Err(Error::arg("embedding pyramids have different depths"));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (la, lb) in a.levels.iter().zip(&b.levels) {
        if la.channels != lb.channels {
            return Err(Error::arg("embedding levels have different channel counts"));
        }
        for c in 0..la.channels {
            if let Some(v) = channel_cosine(la.vector(c), lb.vector(c))? {
                sum += v;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Numeric("every channel embedding is zero".into()));
    }
    Ok(sum / count as f64)
}

/// One channel's cross-entropy term: `-log(e^pos / (e^pos + sum e^neg))`.
pub fn contrastive_term(pos: f64, negs: [f64; 3]) -> f64 {
    let m = negs.iter().fold(pos, |a, &b| a.max(b));
    let s = (pos - m).exp() + negs.iter().map(|n| (n - m).exp()).sum::<f64>();
    m + s.ln() - pos
}

/// Softmax weights `(p_pos - 1, p_n1, p_n2, p_n3)`: the term's derivatives
/// with respect to its four logits.
fn contrastive_term_grad(pos: f64, negs: [f64; 3]) -> [f64; 4] {
    let m = negs.iter().fold(pos, |a, &b| a.max(b));
    let e = [
        (pos - m).exp(),
        (negs[0] - m).exp(),
        (negs[1] - m).exp(),
        (negs[2] - m).exp(),
    ];
    let s: f64 = e.iter().sum();
    [e[0] / s - 1.0, e[1] / s, e[2] / s, e[3] / s]
}

struct ChannelCos {
    aa: f64,
    nn: f64,
    a1n1: f64,
    a2n2: f64,
}

fn level_channel_cosines(
    a1: &EmbeddingLevel,
    a2: &EmbeddingLevel,
    n1: &EmbeddingLevel,
    n2: &EmbeddingLevel,
) -> Result<Vec<Option<ChannelCos>>> {
    for other in [a2, n1, n2] {
        if other.channels != a1.channels || other.dim != a1.dim {
            return Err(Error::arg("embedding pyramids are not level/channel aligned"));
        }
    }
    (0..a1.channels)
        .map(|c| {
            let cos = |x: &EmbeddingLevel, y: &EmbeddingLevel| channel_cosine(x.vector(c), y.vector(c));
            Ok(match (cos(a1, a2)?, cos(n1, n2)?, cos(a1, n1)?, cos(a2, n2)?) {
                (Some(aa), Some(nn), Some(a1n1), Some(a2n2)) => Some(ChannelCos { aa, nn, a1n1, a2n2 }),
                _ => None,
            })
        })
        .collect()
}

fn check_aligned(pyrs: [&EmbeddingPyramid; 4]) -> Result<usize> {
    let k = pyrs[0].levels.len();
    if k == 0 || pyrs.iter().any(|p| p.levels.len() != k) {
        return Err(Error::arg("embedding pyramids must have the same nonzero number of levels"));
    }
    Ok(k)
}

/// Loss value and per-level diagnostics. A channel is skipped when any of
/// its four embeddings is the zero vector.
fn contrastive_with_cosines(
    a1: &EmbeddingPyramid,
    a2: &EmbeddingPyramid,
    n1: &EmbeddingPyramid,
    n2: &EmbeddingPyramid,
) -> Result<(f64, Vec<LevelCosines>)> {
    let k = check_aligned([a1, a2, n1, n2])?;
    let mut loss = 0.0;
    let mut diag = Vec::with_capacity(k);
    for l in 0..k {
        let cos = level_channel_cosines(&a1.levels[l], &a2.levels[l], &n1.levels[l], &n2.levels[l])?;
        let kept: Vec<&ChannelCos> = cos.iter().flatten().collect();
        if kept.is_empty() {
            return Err(Error::Numeric(format!(
                "every channel of pyramid level {} is a zero embedding",
                l + 1
            )));
        }
        let n = kept.len() as f64;
        let mut level = 0.0;
        let mut d = LevelCosines::default();
        for c in &kept {
            level += contrastive_term(c.aa, [c.nn, c.a1n1, c.a2n2]);
            d.anatomy += c.aa;
            d.noise += c.nn;
            d.cross += 0.5 * (c.a1n1 + c.a2n2);
        }
        loss += level / n;
        d.anatomy /= n;
        d.noise /= n;
        d.cross /= n;
        diag.push(d);
    }
    Ok((loss, diag))
}

pub fn contrastive_loss(
    a1: &EmbeddingPyramid,
    a2: &EmbeddingPyramid,
    n1: &EmbeddingPyramid,
    n2: &EmbeddingPyramid,
) -> Result<f64> {
    Ok(contrastive_with_cosines(a1, a2, n1, n2)?.0)
}

fn check_same_shape(a: &ComplexTensor, b: &ComplexTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::arg(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `mean(|p - t|^2 + (|p| - |t|)^2)` over all complex samples.
fn swap_term(p: &ComplexTensor, t: &ComplexTensor) -> Result<f64> {
    check_same_shape(p, t)?;
    if p.numel() == 0 {
        return Err(Error::arg("swap loss on empty tensors"));
    }
    let s: f64 = p
        .data()
        .chunks_exact(2)
        .zip(t.data().chunks_exact(2))
        .map(|(p, t)| {
            let (pr, pi, tr, ti) = (p[0] as f64, p[1] as f64, t[0] as f64, t[1] as f64);
            let coh = (pr - tr).powi(2) + (pi - ti).powi(2);
            let inc = pr.hypot(pi) - tr.hypot(ti);
            coh + inc * inc
        })
        .sum();
    Ok(s / p.numel() as f64)
}

/// Bidirectional swap loss: `term(x1_hat, x2) + term(x2_hat, x1)`.
pub fn swap_loss(
    x1_hat: &ApertureStack,
    x2: &ApertureStack,
    x2_hat: &ApertureStack,
    x1: &ApertureStack,
) -> Result<f64> {
    Ok(swap_term(x1_hat.tensor(), x2.tensor())? + swap_term(x2_hat.tensor(), x1.tensor())?)
}

/// Reconstructions and embeddings for both shuffles of one training step.
pub struct LossInputs<'a> {
    pub x1_hat: &'a ApertureStack,
    pub x2: &'a ApertureStack,
    pub x2_hat: &'a ApertureStack,
    pub x1: &'a ApertureStack,
    pub a1: &'a EmbeddingPyramid,
    pub a2: &'a EmbeddingPyramid,
    pub n1: &'a EmbeddingPyramid,
    pub n2: &'a EmbeddingPyramid,
}

/// `swap + con` with equal weights.
pub fn total_loss(inputs: &LossInputs) -> Result<LossBreakdown> {
    let swap = swap_loss(inputs.x1_hat, inputs.x2, inputs.x2_hat, inputs.x1)?;
    let (con, per_level_cos) = contrastive_with_cosines(inputs.a1, inputs.a2, inputs.n1, inputs.n2)?;
    Ok(LossBreakdown {
        swap,
        con,
        total: swap + con,
        per_level_cos,
    })
}

struct SwapTermRule;

fn swap_term_grad(p: &ComplexTensor, t: &ComplexTensor, scale: f64) -> ComplexTensor {
    let s = 2.0 * scale / p.numel() as f64;
    let data = p
        .data()
        .chunks_exact(2)
        .zip(t.data().chunks_exact(2))
        .flat_map(|(p, t)| {
            let (pr, pi, tr, ti) = (p[0] as f64, p[1] as f64, t[0] as f64, t[1] as f64);
            let pm = pr.hypot(pi);
            let inc = pm - tr.hypot(ti);
            let (ur, ui) = if pm > 0.0 { (pr / pm, pi / pm) } else { (0.0, 0.0) };
            [
                (s * ((pr - tr) + inc * ur)) as f32,
                (s * ((pi - ti) + inc * ui)) as f32,
            ]
        })
        .collect();
    ComplexTensor::from_interleaved(p.shape(), data).expect("shape preserved")
}

impl CustomBackward for SwapTermRule {
    fn backward(&self, inputs: &[&ComplexTensor], grad_out: &ComplexTensor) -> Result<Vec<Option<ComplexTensor>>> {
        let g = grad_out.data()[0] as f64;
        // The term is symmetric in its two arguments.
        Ok(vec![
            Some(swap_term_grad(inputs[0], inputs[1], g)),
            Some(swap_term_grad(inputs[1], inputs[0], g)),
        ])
    }
}

/// Records `mean(|p - t|^2 + (|p| - |t|)^2)` on the tape; also returns the
/// value in f64.
pub fn swap_term_on_tape(tape: &mut GradTape, pred: NodeId, target: NodeId) -> Result<(NodeId, f64)> {
    let v = swap_term(tape.value(pred), tape.value(target))?;
    let id = tape.custom(vec![pred, target], ComplexTensor::scalar(v as f32), Box::new(SwapTermRule))?;
    Ok((id, v))
}

struct ContrastiveRule;

struct RawLevel {
    unit: EmbeddingLevel,
    moduli: Vec<f64>,
    norms: Vec<f64>,
}

fn raw_level(t: &ComplexTensor) -> Result<RawLevel> {
    let (channels, _, _) = t.dims3()?;
    let mut moduli = Vec::with_capacity(t.numel());
    let mut norms = Vec::with_capacity(channels);
    for c in 0..channels {
        let (m, n) = modulus_and_norm(t.channel(c));
        moduli.extend(m);
        norms.push(n);
    }
    Ok(RawLevel {
        unit: embed_level(t)?,
        moduli,
        norms,
    })
}

/// Pulls a gradient on the unit vector `u = m / |m|` back to the complex
/// features `z`, through the normalization and the modulus.
fn unit_to_feature_grad(raw: &RawLevel, z: &ComplexTensor, c: usize, gu: &[f64], out: &mut [f32]) {
    let dim = raw.unit.dim;
    let u = raw.unit.vector(c);
    let n = raw.norms[c];
    let gu_dot_u: f64 = gu.iter().zip(u).map(|(g, &u)| g * u as f64).sum();
    let zc = z.channel(c);
    let m = &raw.moduli[c * dim..(c + 1) * dim];
    let oc = &mut out[2 * c * dim..2 * (c + 1) * dim];
    for i in 0..dim {
        let gm = (gu[i] - gu_dot_u * u[i] as f64) / n;
        if m[i] > 0.0 {
            oc[2 * i] += (gm * zc[2 * i] as f64 / m[i]) as f32;
            oc[2 * i + 1] += (gm * zc[2 * i + 1] as f64 / m[i]) as f32;
        }
    }
}

impl CustomBackward for ContrastiveRule {
    fn backward(&self, inputs: &[&ComplexTensor], grad_out: &ComplexTensor) -> Result<Vec<Option<ComplexTensor>>> {
        let g = grad_out.data()[0] as f64;
        let mut out = Vec::with_capacity(inputs.len());
        for quad in inputs.chunks_exact(4) {
            let raws: Vec<RawLevel> = quad.iter().map(|t| raw_level(t)).collect::<Result<_>>()?;
            let cos = level_channel_cosines(&raws[0].unit, &raws[1].unit, &raws[2].unit, &raws[3].unit)?;
            let kept = cos.iter().flatten().count();
            let mut grads: Vec<Vec<f32>> = quad.iter().map(|t| vec![0f32; 2 * t.numel()]).collect();
            if kept > 0 {
                let s = g / kept as f64;
                let dim = raws[0].unit.dim;
                let mut gu = vec![0f64; dim];
                for (c, cc) in cos.iter().enumerate() {
                    let Some(cc) = cc else { continue };
                    let w = contrastive_term_grad(cc.aa, [cc.nn, cc.a1n1, cc.a2n2]).map(|v| v * s);
                    // (target, [(weight, partner)]) for A1, A2, N1, N2.
                    let pairs: [(usize, [(f64, usize); 2]); 4] = [
                        (0, [(w[0], 1), (w[2], 2)]),
                        (1, [(w[0], 0), (w[3], 3)]),
                        (2, [(w[1], 3), (w[2], 0)]),
                        (3, [(w[1], 2), (w[3], 1)]),
                    ];
                    for (target, terms) in pairs {
                        gu.iter_mut().for_each(|v| *v = 0.0);
                        for (wt, partner) in terms {
                            for (acc, &p) in gu.iter_mut().zip(raws[partner].unit.vector(c)) {
                                *acc += wt * p as f64;
                            }
                        }
                        unit_to_feature_grad(&raws[target], quad[target], c, &gu, &mut grads[target]);
                    }
                }
            }
            for (t, gd) in quad.iter().zip(grads) {
                out.push(Some(ComplexTensor::from_interleaved(t.shape(), gd)?));
            }
        }
        Ok(out)
    }
}

/// Records the contrastive loss over raw feature pyramids. Returns the loss
/// node together with its per-level cosine diagnostics.
pub fn contrastive_on_tape(
    tape: &mut GradTape,
    a1: &[NodeId],
    a2: &[NodeId],
    n1: &[NodeId],
    n2: &[NodeId],
) -> Result<(NodeId, f64, Vec<LevelCosines>)> {
    let k = a1.len();
    if k == 0 || a2.len() != k || n1.len() != k || n2.len() != k {
        return Err(Error::arg("feature pyramids must have the same nonzero number of levels"));
    }
    let embed = |tape: &GradTape, ids: &[NodeId]| -> Result<EmbeddingPyramid> {
        Ok(EmbeddingPyramid {
            levels: ids.iter().map(|&i| embed_level(tape.value(i))).collect::<Result<_>>()?,
        })
    };
    let (loss, diag) = contrastive_with_cosines(&embed(tape, a1)?, &embed(tape, a2)?, &embed(tape, n1)?, &embed(tape, n2)?)?;
    let mut inputs = Vec::with_capacity(4 * k);
    for l in 0..k {
        inputs.extend([a1[l], a2[l], n1[l], n2[l]]);
    }
    let id = tape.custom(inputs, ComplexTensor::scalar(loss as f32), Box::new(ContrastiveRule))?;
    Ok((id, loss, diag))
}
