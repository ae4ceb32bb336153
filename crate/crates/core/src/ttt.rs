//! Test-time training: per-frame optimisation from scratch on shuffled
//! aperture pairs, then clean inference on the original stack.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvnn::{AdamConfig, AdamState, ComplexTensor, GradTape};
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::model::{self, Branch, ModelParams};
use crate::objectives::{self, EmbeddingPyramid, LossBreakdown};
use crate::stack::ApertureStack;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TttConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_steps: usize,
    pub plateau_window: usize,
    /// `inf` stops as soon as the first window is full.
    #[serde(with = "crate::serde_util::extended_f64")]
    pub plateau_rel_tol: f64,
    pub seed: u64,
}

impl Default for TttConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-5,
            max_steps: 500,
            plateau_window: 50,
            plateau_rel_tol: 1e-3,
            seed: 0,
        }
    }
}

impl TttConfig {
    /// Defaults with `max_steps` raised to 2000 for frames of 512x512 and up.
    pub fn for_extent(h: usize, w: usize) -> Self {
        let mut c = Self::default();
        if h * w >= 512 * 512 {
            c.max_steps = 2000;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.plateau_window < 2 || self.max_steps < self.plateau_window {
            return Err(Error::Config(format!(
                "need max_steps >= plateau_window >= 2, got {} and {}",
                self.max_steps, self.plateau_window
            )));
        }
        if self.plateau_rel_tol.is_nan() || self.plateau_rel_tol < 0.0 {
            return Err(Error::Config("plateau_rel_tol must be non-negative".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr as f32,
            weight_decay: self.weight_decay as f32,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    MaxSteps,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Plateau => "plateau",
            StopReason::MaxSteps => "max_steps",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingTrace {
    pub steps: Vec<LossBreakdown>,
    /// `None` only while running or after an aborted run.
    pub stop_reason: Option<StopReason>,
}

impl TrainingTrace {
    pub fn steps_run(&self) -> usize {
        self.steps.len()
    }

    pub fn con_history(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.con).collect()
    }
}

/// Relative change of the contrastive loss across the last `window` steps:
/// the least-squares slope times `window`, over the window mean. `None`
/// until a full window exists.
pub fn plateau_change(history: &[f64], window: usize) -> Option<f64> {
    if window < 2 || history.len() < window {
        return None;
    }
    let tail = &history[history.len() - window..];
    let n = window as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = tail.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in tail.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (y - ym);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    Some((slope * n).abs() / ym.abs().max(f64::MIN_POSITIVE))
}

pub fn plateau_reached(history: &[f64], window: usize, tol: f64) -> bool {
    match plateau_change(history, window) {
        Some(_) if tol == f64::INFINITY => true,
        Some(c) => c < tol,
        None => false,
    }
}

fn random_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Two independently shuffled copies of `x` with distinct permutations.
pub fn shuffle_pair(x: &ApertureStack, rng: &mut ChaCha8Rng) -> Result<(ApertureStack, ApertureStack)> {
    let n = x.n();
    if n < 2 {
        return Err(Error::arg(format!("shuffling needs at least 2 apertures, got {n}")));
    }
    let p1 = random_permutation(n, rng);
    let mut p2 = random_permutation(n, rng);
    while p2 == p1 {
        p2 = random_permutation(n, rng);
    }
    Ok((x.permuted(&p1)?, x.permuted(&p2)?))
}

/// One optimisation step on a given shuffle pair. Losses are measured on
/// the stacks divided by `params.input_scale`.
pub fn train_step_on_pair(
    params: &mut ModelParams,
    adam: &mut AdamState,
    x1: &ApertureStack,
    x2: &ApertureStack,
    step: usize,
) -> Result<LossBreakdown> {
    let mut tape = GradTape::new();
    let nodes = params.register(&mut tape, true);
    let in1 = tape.constant(params.normalize_input(x1.tensor()));
    let in2 = tape.constant(params.normalize_input(x2.tensor()));
    let a1 = model::encode_on_tape(&mut tape, &nodes, Branch::Anatomy, in1)?;
    let n1 = model::encode_on_tape(&mut tape, &nodes, Branch::Noise, in1)?;
    let a2 = model::encode_on_tape(&mut tape, &nodes, Branch::Anatomy, in2)?;
    let n2 = model::encode_on_tape(&mut tape, &nodes, Branch::Noise, in2)?;
    let out1 = model::decode_on_tape(&mut tape, &nodes, &a1, Some(&n1))?;
    let out2 = model::decode_on_tape(&mut tape, &nodes, &a2, Some(&n2))?;
    let (s1, v1) = objectives::swap_term_on_tape(&mut tape, out1, in2)?;
    let (s2, v2) = objectives::swap_term_on_tape(&mut tape, out2, in1)?;
    let swap = tape.add(s1, s2)?;
    let (con, con_value, per_level_cos) = objectives::contrastive_on_tape(&mut tape, &a1, &a2, &n1, &n2)
        .map_err(|e| match e {
            Error::Numeric(detail) => Error::Diverged { step, detail },
            other => other,
        })?;
    let total = tape.add(swap, con)?;
    let breakdown = LossBreakdown {
        swap: v1 + v2,
        con: con_value,
        total: v1 + v2 + con_value,
        per_level_cos,
    };
    if !breakdown.total.is_finite() || !tape.value(total).is_finite() {
        return Err(Error::Diverged {
            step,
            detail: format!("non-finite loss (swap {}, con {})", breakdown.swap, breakdown.con),
        });
    }
    let mut grads = tape.backward(total)?;
    let grads: Vec<ComplexTensor> = nodes
        .ids
        .iter()
        .zip(&params.tensors)
        .map(|(&id, p)| grads.take(id).unwrap_or_else(|| ComplexTensor::zeros(p.shape())))
        .collect();
    adam.step(&mut params.tensors, &grads)?;
    if params.tensors.iter().any(|t| !t.is_finite()) {
        return Err(Error::Diverged {
            step,
            detail: "non-finite parameters after update".into(),
        });
    }
    Ok(breakdown)
}

/// Draws a shuffle pair from `rng` and takes one step.
pub fn train_step(
    params: &mut ModelParams,
    adam: &mut AdamState,
    x: &ApertureStack,
    rng: &mut ChaCha8Rng,
    step: usize,
) -> Result<LossBreakdown> {
    let (x1, x2) = shuffle_pair(x, rng)?;
    train_step_on_pair(params, adam, &x1, &x2, step)
}

/// Root mean square magnitude of the stack, or 1 for an all-zero stack.
pub fn rms_scale(x: &ApertureStack) -> f32 {
    let n = x.tensor().numel().max(1) as f64;
    let r = (x.tensor().norm_sqr() / n).sqrt();
    if r > 0.0 && r.is_finite() {
        r as f32
    } else {
        1.0
    }
}

fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Embeddings `[A1, A2, N1, N2]` of a fresh shuffle pair of `x` drawn from
/// `seed` (on a stream separate from training).
pub fn embedding_snapshot(params: &ModelParams, x: &ApertureStack, seed: u64) -> Result<[EmbeddingPyramid; 4]> {
    let mut rng = seeded_rng(seed, 2);
    let (x1, x2) = shuffle_pair(x, &mut rng)?;
    let embed = |s: &ApertureStack, branch: Branch| -> Result<EmbeddingPyramid> {
        let p = match branch {
            Branch::Anatomy => model::encode_anatomy(params, s)?,
            Branch::Noise => model::encode_noise(params, s)?,
        };
        objectives::flatten_normalize(&p)
    };
    Ok([
        embed(&x1, Branch::Anatomy)?,
        embed(&x2, Branch::Anatomy)?,
        embed(&x1, Branch::Noise)?,
        embed(&x2, Branch::Noise)?,
    ])
}

/// A fit in progress. The trace prefix survives an aborted step.
pub struct TttSession {
    config: TttConfig,
    x: ApertureStack,
    params: ModelParams,
    adam: AdamState,
    rng: ChaCha8Rng,
    trace: TrainingTrace,
}

impl TttSession {
    pub fn new(x: &ApertureStack, config: &TttConfig) -> Result<Self> {
        config.validate()?;
        x.tensor().ensure_finite("input stack")?;
        let mut params = model::init_model(x.n(), config.seed)?;
        params.input_scale = rms_scale(x);
        let adam = AdamState::new(config.adam(), &params.tensors);
        Ok(Self {
            config: config.clone(),
            x: x.clone(),
            params,
            adam,
            rng: seeded_rng(config.seed, 1),
            trace: TrainingTrace::default(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn trace(&self) -> &TrainingTrace {
        &self.trace
    }

    pub fn is_done(&self) -> bool {
        self.trace.stop_reason.is_some()
    }

    /// Runs one step and applies the stopping rule.
    pub fn step(&mut self) -> Result<&LossBreakdown> {
        if self.is_done() {
            return Err(Error::Contract("training already stopped".into()));
        }
        let index = self.trace.steps.len() + 1;
        let b = train_step(&mut self.params, &mut self.adam, &self.x, &mut self.rng, index)?;
        log::debug!("step {index}: swap {:.6} con {:.6}", b.swap, b.con);
        self.trace.steps.push(b);
        let history = self.trace.con_history();
        if plateau_reached(&history, self.config.plateau_window, self.config.plateau_rel_tol) {
            self.trace.stop_reason = Some(StopReason::Plateau);
        } else if index >= self.config.max_steps {
            self.trace.stop_reason = Some(StopReason::MaxSteps);
        }
        Ok(self.trace.steps.last().expect("just pushed"))
    }

    pub fn run(&mut self) -> Result<StopReason> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.trace.stop_reason.expect("loop exits when stopped"))
    }

    pub fn into_parts(self) -> (ModelParams, TrainingTrace) {
        (self.params, self.trace)
    }
}

pub fn fit(x: &ApertureStack, config: &TttConfig) -> Result<(ModelParams, TrainingTrace)> {
    let mut s = TttSession::new(x, config)?;
    s.run()?;
    Ok(s.into_parts())
}

/// Fit on `x`, then decode `x` from the anatomy space alone.
pub fn denoise(x: &ApertureStack, config: &TttConfig) -> Result<(ApertureStack, ComplexField, TrainingTrace)> {
    let (params, trace) = fit(x, config)?;
    let (stack, y) = model::infer_clean(&params, x)?;
    Ok((stack, y, trace))
}
