#![allow(dead_code)]

use a2a_core::cvnn::{ComplexTensor, CustomBackward, GradTape, NodeId};
use a2a_core::model::{self, Branch, ModelParams};
use a2a_core::objectives::{self, LossInputs};
use a2a_core::{ApertureStack, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_REL_TOL: f64 = 1e-3;

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> ComplexTensor {
    let n: usize = shape.iter().product();
    let data = (0..2 * n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    ComplexTensor::from_interleaved(shape, data).unwrap()
}

fn dot(a: &ComplexTensor, b: &ComplexTensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn rms(t: &ComplexTensor) -> f64 {
    (t.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / t.data().len() as f64).sqrt()
}

/// `sum(re(conj(c) * y))`, a fixed linear readout that turns any tensor
/// into a real scalar.
struct Readout(ComplexTensor);

impl CustomBackward for Readout {
    fn backward(&self, _: &[&ComplexTensor], g: &ComplexTensor) -> Result<Vec<Option<ComplexTensor>>> {
        let mut c = self.0.clone();
        c.scale(g.data()[0]);
        Ok(vec![Some(c)])
    }
}

pub fn readout_value(c: &ComplexTensor, y: &ComplexTensor) -> f64 {
    dot(c, y)
}

pub fn readout(tape: &mut GradTape, y: NodeId, c: &ComplexTensor) -> NodeId {
    let v = readout_value(c, tape.value(y));
    tape.custom(vec![y], ComplexTensor::scalar(v as f32), Box::new(Readout(c.clone())))
        .unwrap()
}

#[derive(Debug)]
pub struct GradCheck {
    pub name: String,
    /// Central difference quotient of the independent value path, with
    /// located jumps removed.
    pub numeric: f64,
    /// Mean of the analytic directional derivative over the same interval.
    pub analytic: f64,
    /// Analytic directional derivative at the unperturbed point.
    pub at_center: f64,
    /// Half-width of the interval, relative to the leaf scale.
    pub rel_step: f64,
    /// Jumps of the value located inside the interval.
    pub jumps: usize,
    pub probes: usize,
}

impl GradCheck {
    pub fn rel_err(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

const MIN_REL_STEP: f64 = 3e-2;
const MAX_REL_STEP: f64 = 0.3;
const NOISE_MARGIN: f64 = 50.0;
/// Observed rounding in the value is about one ulp.
const JUMP_ULPS: f64 = 16.0;
const MAX_DEPTH: u32 = 16;

#[derive(Clone, Copy)]
struct Sample {
    t: f64,
    /// directional derivative
    g: f64,
    /// value from the taped forward pass
    f: f64,
}

struct Quadrature<'a> {
    probe: &'a dyn Fn(f64) -> Sample,
    eps_per_unit: f64,
    jump_floor: f64,
    nodes: Vec<Sample>,
    probes: usize,
}

impl Quadrature<'_> {
    /// Adaptive trapezoid. Bisects where the derivative varies (CReLU
    /// switches) and where the value disagrees with the integrated
    /// derivative by more than rounding. A discontinuity keeps that
    /// disagreement at every scale and is driven down to the depth limit; a
    /// wrong derivative loses it in proportion to the width and is not.
    fn integrate(&mut self, a: Sample, b: Sample, depth: u32) -> f64 {
        let m = (self.probe)(0.5 * (a.t + b.t));
        self.probes += 1;
        let w = b.t - a.t;
        let coarse = 0.5 * w * (a.g + b.g);
        let fine = 0.25 * w * (a.g + 2.0 * m.g + b.g);
        let smooth = (coarse - fine).abs() <= self.eps_per_unit * w;
        let continuous = (b.f - a.f - fine).abs() <= self.jump_floor;
        if depth == 0 || (smooth && continuous) {
            self.nodes.push(a);
            self.nodes.push(m);
            return fine;
        }
        self.integrate(a, m, depth - 1) + self.integrate(m, b, depth - 1)
    }
}

/// Central differences of `value` along a random direction on each leaf in
/// turn, checked against the analytic derivative from `analytic`.
///
/// The graphs are only piecewise smooth. CReLU makes the derivative jump,
/// so the difference quotient over `[-h, h]` is compared with the analytic
/// derivative averaged over that same interval, which it equals exactly up
/// to rounding. Magnitude max-pool makes the value itself jump where the
/// argmax switches; each switch is pinned to a subinterval at the depth
/// limit and its jump is taken out of the difference.
pub fn directional_checks(
    name: &str,
    leaves: &[ComplexTensor],
    seed: u64,
    analytic: impl Fn(&[ComplexTensor]) -> (f64, Vec<ComplexTensor>),
    value: impl Fn(&[ComplexTensor]) -> f64,
) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, leaf) in leaves.iter().enumerate() {
        let dir = random_tensor(leaf.shape(), &mut rng);
        let shifted = |t: f64| {
            let mut ls = leaves.to_vec();
            for (p, d) in ls[i].data_mut().iter_mut().zip(dir.data()) {
                *p = (*p as f64 + t * *d as f64) as f32;
            }
            ls
        };
        let probe = |t: f64| {
            let (f, g) = analytic(&shifted(t));
            Sample { t, g: dot(&g[i], &dir), f }
        };
        let center = probe(0.0);
        // Rounding in the value is a few ulps of its magnitude. The step is
        // wide enough for that to stay far below the tolerance.
        let ulp = f64::from(f32::EPSILON) * center.f.abs().max(1e-30);
        let unit = rms(leaf).max(0.1) / rms(&dir);
        let h = (NOISE_MARGIN * ulp / (GRAD_REL_TOL * center.g.abs().max(1e-30))).clamp(MIN_REL_STEP * unit, MAX_REL_STEP * unit);
        let (lo, hi) = (probe(-h), probe(h));
        // The error budget scales with the mean being measured. Switches
        // can make it much smaller than the derivative at the center.
        let mut scale = center.g.abs();
        let mut probes = 0;
        let (mut q, integral) = loop {
            let mut q = Quadrature {
                probe: &probe,
                eps_per_unit: 0.1 * GRAD_REL_TOL * scale,
                jump_floor: JUMP_ULPS * ulp,
                nodes: Vec::new(),
                probes: 0,
            };
            let integral = q.integrate(lo, center, MAX_DEPTH) + q.integrate(center, hi, MAX_DEPTH);
            probes += q.probes;
            let mean = (integral / (2.0 * h)).abs();
            if mean >= 0.5 * scale {
                break (q, integral);
            }
            scale = mean;
        };
        q.nodes.push(hi);
        q.nodes.sort_by(|a, b| a.t.total_cmp(&b.t));
        q.nodes.dedup_by(|a, b| a.t == b.t);

        let narrow = 2.0 * h / f64::from(1u32 << (MAX_DEPTH - 1));
        let jumps: Vec<f64> = q
            .nodes
            .windows(2)
            .filter(|w| w[1].t - w[0].t <= narrow)
            .map(|w| w[1].f - w[0].f - 0.5 * (w[1].t - w[0].t) * (w[0].g + w[1].g))
            .filter(|m| m.abs() > q.jump_floor)
            .collect();
        let numeric = (value(&shifted(h)) - value(&shifted(-h)) - jumps.iter().sum::<f64>()) / (2.0 * h);
        out.push(GradCheck {
            name: format!("{name}[{i}]"),
            numeric,
            analytic: integral / (2.0 * h),
            at_center: center.g,
            rel_step: h / unit,
            jumps: jumps.len(),
            probes,
        });
    }
    out
}

fn grads_of(tape: &GradTape, loss: NodeId, ids: &[NodeId]) -> Vec<ComplexTensor> {
    let mut g = tape.backward(loss).unwrap();
    ids.iter()
        .map(|&id| g.take(id).unwrap_or_else(|| ComplexTensor::zeros(tape.value(id).shape())))
        .collect()
}

/// Checks for one op: `build` records the op over leaf nodes and returns the
/// output node; the scalar is a fixed random readout of that output.
fn op_checks(
    name: &str,
    leaves: Vec<ComplexTensor>,
    seed: u64,
    build: impl Fn(&mut GradTape, &[NodeId]) -> NodeId,
) -> Vec<GradCheck> {
    let c = {
        let mut t = GradTape::new();
        let ids: Vec<NodeId> = leaves.iter().map(|l| t.constant(l.clone())).collect();
        let y = build(&mut t, &ids);
        random_tensor(t.value(y).shape(), &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed))
    };
    let analytic = |ls: &[ComplexTensor]| {
        let mut tape = GradTape::new();
        let ids: Vec<NodeId> = ls.iter().map(|l| tape.param(l.clone())).collect();
        let y = build(&mut tape, &ids);
        let loss = readout(&mut tape, y, &c);
        (readout_value(&c, tape.value(y)), grads_of(&tape, loss, &ids))
    };
    directional_checks(name, &leaves, seed, analytic, |ls| {
        let mut t = GradTape::new();
        let ids: Vec<NodeId> = ls.iter().map(|l| t.constant(l.clone())).collect();
        let y = build(&mut t, &ids);
        readout_value(&c, t.value(y))
    })
}

pub fn conv_checks() -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let leaves = vec![
        random_tensor(&[3, 6, 7], &mut rng),
        random_tensor(&[4, 3, 3, 3], &mut rng),
        random_tensor(&[4], &mut rng),
    ];
    let mut out = op_checks("conv2d same", leaves.clone(), 2, |t, ids| {
        t.conv2d_same(ids[0], ids[1], Some(ids[2])).unwrap()
    });
    out.extend(op_checks("conv2d stride 2", leaves, 3, |t, ids| {
        t.conv2d(ids[0], ids[1], Some(ids[2]), 2, 0).unwrap()
    }));
    out
}

pub fn elementwise_checks() -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_tensor(&[2, 8, 8], &mut rng);
    let b = random_tensor(&[2, 8, 8], &mut rng);
    let mut out = op_checks("maxpool2d", vec![a.clone()], 5, |t, ids| t.maxpool2d(ids[0], 2).unwrap());
    out.extend(op_checks("crelu", vec![a.clone()], 6, |t, ids| t.crelu(ids[0]).unwrap()));
    out.extend(op_checks("upsample2x", vec![a.clone()], 7, |t, ids| t.upsample2x(ids[0]).unwrap()));
    out.extend(op_checks("add", vec![a.clone(), b.clone()], 8, |t, ids| t.add(ids[0], ids[1]).unwrap()));
    out.extend(op_checks("sum_re", vec![a.clone()], 9, |t, ids| t.sum_re(ids[0]).unwrap()));
    out.extend(op_checks("sum_sq", vec![a], 10, |t, ids| t.sum_sq(ids[0]).unwrap()));
    out
}

pub fn loss_checks() -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = random_tensor(&[3, 6, 6], &mut rng);
    let q = random_tensor(&[3, 6, 6], &mut rng);
    let swap_grad = |ls: &[ComplexTensor]| {
        let mut tape = GradTape::new();
        let ids = [tape.param(ls[0].clone()), tape.param(ls[1].clone())];
        let (loss, v) = objectives::swap_term_on_tape(&mut tape, ids[0], ids[1]).unwrap();
        (v, grads_of(&tape, loss, &ids))
    };
    let swap_value = |ls: &[ComplexTensor]| {
        let a = ApertureStack::new(ls[0].clone()).unwrap();
        let b = ApertureStack::new(ls[1].clone()).unwrap();
        // swap_loss sums two identical terms here
        objectives::swap_loss(&a, &b, &a, &b).unwrap() / 2.0
    };
    let mut out = directional_checks("swap term", &[p, q], 12, swap_grad, swap_value);

    let shapes = [[4, 8, 8], [6, 4, 4], [8, 2, 2]];
    let leaves: Vec<ComplexTensor> = (0..4)
        .flat_map(|_| shapes.iter().map(|s| random_tensor(s, &mut rng)).collect::<Vec<_>>())
        .collect();
    let con_grad = |ls: &[ComplexTensor]| {
        let mut tape = GradTape::new();
        let ids: Vec<NodeId> = ls.iter().map(|l| tape.param(l.clone())).collect();
        let (loss, v, _) =
            objectives::contrastive_on_tape(&mut tape, &ids[0..3], &ids[3..6], &ids[6..9], &ids[9..12]).unwrap();
        (v, grads_of(&tape, loss, &ids))
    };
    let con_value = |ls: &[ComplexTensor]| {
        let pyr = |r: std::ops::Range<usize>| {
            objectives::flatten_normalize(&model::FeaturePyramid { levels: ls[r].to_vec() }).unwrap()
        };
        objectives::contrastive_loss(&pyr(0..3), &pyr(3..6), &pyr(6..9), &pyr(9..12)).unwrap()
    };
    out.extend(directional_checks("contrastive", &leaves, 13, con_grad, con_value));
    out
}

pub fn small_model(apertures: usize, widths: [usize; 3], seed: u64) -> ModelParams {
    let mut p = model::init_model_with_widths(apertures, widths, seed).unwrap();
    // Nonzero biases so their gradients are exercised away from the origin.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for t in p.tensors.iter_mut().skip(1).step_by(2) {
        let r = random_tensor(t.shape(), &mut rng);
        for (v, d) in t.data_mut().iter_mut().zip(r.data()) {
            *v = 0.1 * d;
        }
    }
    p.input_scale = 0.7;
    p
}

fn random_stack(n: usize, h: usize, w: usize, seed: u64) -> ApertureStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ApertureStack::new(random_tensor(&[n, h, w], &mut rng)).unwrap()
}

fn with_tensors(params: &ModelParams, ls: &[ComplexTensor]) -> ModelParams {
    ModelParams {
        tensors: ls.to_vec(),
        ..params.clone()
    }
}

/// Every parameter tensor of the full noisy reconstruction, with the value
/// taken from the public `forward_noisy`.
pub fn forward_noisy_checks() -> Vec<GradCheck> {
    let params = small_model(4, [4, 6, 8], 21);
    let x = random_stack(4, 8, 8, 22);
    let c = random_tensor(&[4, 8, 8], &mut ChaCha8Rng::seed_from_u64(23));

    let analytic = |ls: &[ComplexTensor]| {
        let p = with_tensors(&params, ls);
        let mut tape = GradTape::new();
        let nodes = p.register(&mut tape, true);
        let input = tape.constant(p.normalize_input(x.tensor()));
        let a = model::encode_on_tape(&mut tape, &nodes, Branch::Anatomy, input).unwrap();
        let n = model::encode_on_tape(&mut tape, &nodes, Branch::Noise, input).unwrap();
        let y = model::decode_on_tape(&mut tape, &nodes, &a, Some(&n)).unwrap();
        // forward_noisy rescales the decoded stack by input_scale
        let mut cs = c.clone();
        cs.scale(p.input_scale);
        let loss = readout(&mut tape, y, &cs);
        (readout_value(&cs, tape.value(y)), grads_of(&tape, loss, &nodes.ids))
    };
    directional_checks("forward_noisy", &params.tensors, 24, analytic, |ls| {
        readout_value(&c, model::forward_noisy(&with_tensors(&params, ls), &x).unwrap().tensor())
    })
}

/// The training objective (both swap directions plus the contrastive term)
/// for a fixed shuffle pair.
pub fn training_loss_checks() -> Vec<GradCheck> {
    let params = small_model(3, [2, 3, 4], 31);
    let x1 = random_stack(3, 8, 8, 32);
    let x2 = x1.permuted(&[2, 0, 1]).unwrap();

    let analytic = |ls: &[ComplexTensor]| {
        let p = with_tensors(&params, ls);
        let mut tape = GradTape::new();
        let nodes = p.register(&mut tape, true);
        let in1 = tape.constant(p.normalize_input(x1.tensor()));
        let in2 = tape.constant(p.normalize_input(x2.tensor()));
        let a1 = model::encode_on_tape(&mut tape, &nodes, Branch::Anatomy, in1).unwrap();
        let n1 = model::encode_on_tape(&mut tape, &nodes, Branch::Noise, in1).unwrap();
        let a2 = model::encode_on_tape(&mut tape, &nodes, Branch::Anatomy, in2).unwrap();
        let n2 = model::encode_on_tape(&mut tape, &nodes, Branch::Noise, in2).unwrap();
        let o1 = model::decode_on_tape(&mut tape, &nodes, &a1, Some(&n1)).unwrap();
        let o2 = model::decode_on_tape(&mut tape, &nodes, &a2, Some(&n2)).unwrap();
        let (s1, v1) = objectives::swap_term_on_tape(&mut tape, o1, in2).unwrap();
        let (s2, v2) = objectives::swap_term_on_tape(&mut tape, o2, in1).unwrap();
        let swap = tape.add(s1, s2).unwrap();
        let (con, vc, _) = objectives::contrastive_on_tape(&mut tape, &a1, &a2, &n1, &n2).unwrap();
        let total = tape.add(swap, con).unwrap();
        (v1 + v2 + vc, grads_of(&tape, total, &nodes.ids))
    };

    let scaled = |s: &ApertureStack, k: f32| {
        let mut t = s.tensor().clone();
        t.scale(k);
        ApertureStack::new(t).unwrap()
    };
    let inv = 1.0 / params.input_scale;
    let (u1, u2) = (scaled(&x1, inv), scaled(&x2, inv));
    directional_checks("training loss", &params.tensors, 33, analytic, |ls| {
        let p = with_tensors(&params, ls);
        let embed = |f: fn(&ModelParams, &ApertureStack) -> Result<model::FeaturePyramid>, x: &ApertureStack| {
            objectives::flatten_normalize(&f(&p, x).unwrap()).unwrap()
        };
        let h1 = scaled(&model::forward_noisy(&p, &x1).unwrap(), inv);
        let h2 = scaled(&model::forward_noisy(&p, &x2).unwrap(), inv);
        let (ea1, ea2) = (embed(model::encode_anatomy, &x1), embed(model::encode_anatomy, &x2));
        let (en1, en2) = (embed(model::encode_noise, &x1), embed(model::encode_noise, &x2));
        objectives::total_loss(&LossInputs {
            x1_hat: &h1,
            x2: &u2,
            x2_hat: &h2,
            x1: &u1,
            a1: &ea1,
            a2: &ea2,
            n1: &en1,
            n2: &en2,
        })
        .unwrap()
        .total
    })
}

/// Every differentiable op and the full noisy reconstruction.
pub fn gradient_suite() -> Vec<GradCheck> {
    let mut all = conv_checks();
    all.extend(elementwise_checks());
    all.extend(loss_checks());
    all.extend(forward_noisy_checks());
    all
}
