//! Eager forward/backward kernels for the complex layer set.
//!
//! Tensors are interleaved `re, im` f32. Convolutions run as one real GEMM
//! over a planar patch matrix: a complex kernel `A + iB` becomes the real
//! block matrix `[[A, -B], [B, A]]` acting on stacked real and imaginary
//! patches.
//!
//! Every kernel writes each output element from exactly one task in a fixed
//! order, so results do not depend on the rayon thread count.

use rayon::prelude::*;

use super::tensor::ComplexTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn padded_h(&self) -> usize {
        self.h + 2 * self.padding
    }

    pub fn padded_w(&self) -> usize {
        self.w + 2 * self.padding
    }

    pub fn out_h(&self) -> usize {
        (self.padded_h() - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.padded_w() - self.kw) / self.stride + 1
    }
}

pub fn conv_geometry(
    input: &ComplexTensor,
    kernel: &ComplexTensor,
    bias: Option<&ComplexTensor>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let (cin, h, w) = input.dims3()?;
    let (cout, kcin, kh, kw) = match *kernel.shape() {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(Error::arg(format!(
                "kernel must be [Cout, Cin, kh, kw], got {:?}",
                kernel.shape()
            )))
        }
    };
    if kcin != cin {
        return Err(Error::arg(format!(
            "kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::arg(format!("kernel extents must be odd, got {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(Error::arg("stride must be at least 1"));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::arg("kernel larger than padded input"));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::arg(format!(
                "bias must have shape [{cout}], got {:?}",
                b.shape()
            )));
        }
    }
    Ok(ConvGeometry {
        cin,
        cout,
        h,
        w,
        kh,
        kw,
        stride,
        padding,
    })
}

/// Column chunk used to split GEMMs across tasks. Fixed, so the
/// floating-point result never depends on the thread count.
const GEMM_CHUNK: usize = 1024;

#[derive(Clone, Copy)]
struct SendPtr(*mut f32);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

/// Row-major `C (m x n) = A (m x k) * B (k x n) + beta * C`, split over
/// column chunks of `C` (or row chunks when `split_rows`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
    split_rows: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let cp = SendPtr(c.as_mut_ptr());
    let (ap, bp) = (a.as_ptr() as usize, b.as_ptr() as usize);
    let run = |r0: usize, r1: usize, c0: usize, c1: usize| {
        let cp = cp;
        // SAFETY: chunks address disjoint blocks of `c`; `a` and `b` are only
        // read inside the bounds asserted above.
        unsafe {
            matrixmultiply::sgemm(
                r1 - r0,
                k,
                c1 - c0,
                1.0,
                (ap as *const f32).offset(r0 as isize * rsa),
                rsa,
                csa,
                (bp as *const f32).offset(c0 as isize * csb),
                rsb,
                csb,
                beta,
                cp.0.add(r0 * n + c0),
                n as isize,
                1,
            );
        }
    };
    if split_rows {
        let rows = 64;
        let chunks: Vec<usize> = (0..m).step_by(rows).collect();
        chunks.into_par_iter().for_each(|r0| run(r0, (r0 + rows).min(m), 0, n));
    } else {
        let chunks: Vec<usize> = (0..n).step_by(GEMM_CHUNK).collect();
        chunks.into_par_iter().for_each(|c0| run(0, m, c0, (c0 + GEMM_CHUNK).min(n)));
    }
}

/// Planar patch matrix `[2 * Kc, oh * ow]` with `Kc = cin * kh * kw`: rows
/// `0..Kc` hold real parts, rows `Kc..2Kc` imaginary parts. Out-of-bounds
/// taps are zero.
fn im2col(src: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    let kc = g.cin * g.kh * g.kw;
    let mut cols = vec![0f32; 2 * kc * n];
    let (re, im) = cols.split_at_mut(kc * n);
    re.par_chunks_mut(n)
        .zip(im.par_chunks_mut(n))
        .enumerate()
        .for_each(|(r, (dre, dim))| {
            let c = r / (g.kh * g.kw);
            let dy = (r / g.kw) % g.kh;
            let dx = r % g.kw;
            let plane = &src[2 * c * g.h * g.w..2 * (c + 1) * g.h * g.w];
            for oy in 0..oh {
                let y = (oy * g.stride + dy) as isize - g.padding as isize;
                if y < 0 || y >= g.h as isize {
                    continue;
                }
                let row = &plane[2 * y as usize * g.w..2 * (y as usize + 1) * g.w];
                for ox in 0..ow {
                    let x = (ox * g.stride + dx) as isize - g.padding as isize;
                    if x < 0 || x >= g.w as isize {
                        continue;
                    }
                    let x = x as usize;
                    dre[oy * ow + ox] = row[2 * x];
                    dim[oy * ow + ox] = row[2 * x + 1];
                }
            }
        });
    cols
}

/// Scatter-adds a planar patch-matrix gradient back onto the input layout.
fn col2im(dcols: &[f32], g: &ConvGeometry) -> ComplexTensor {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    let taps = g.kh * g.kw;
    let kc = g.cin * taps;
    let mut gi = ComplexTensor::zeros(&[g.cin, g.h, g.w]);
    gi.data_mut()
        .par_chunks_mut(2 * g.h * g.w)
        .enumerate()
        .for_each(|(c, dst)| {
            for t in 0..taps {
                let r = c * taps + t;
                let (dy, dx) = (t / g.kw, t % g.kw);
                let dre = &dcols[r * n..(r + 1) * n];
                let dim = &dcols[(kc + r) * n..(kc + r + 1) * n];
                for oy in 0..oh {
                    let y = (oy * g.stride + dy) as isize - g.padding as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let x = (ox * g.stride + dx) as isize - g.padding as isize;
                        if x < 0 || x >= g.w as isize {
                            continue;
                        }
                        let d = 2 * (y as usize * g.w + x as usize);
                        dst[d] += dre[oy * ow + ox];
                        dst[d + 1] += dim[oy * ow + ox];
                    }
                }
            }
        });
    gi
}

/// Real block form `[[A, -B], [B, A]]` of the kernel (`A + iB`), shape
/// `[2 * cout, 2 * Kc]`.
fn block_weights(kernel: &[f32], cout: usize, kc: usize) -> Vec<f32> {
    let w2 = 2 * kc;
    let mut m = vec![0f32; 2 * cout * w2];
    for o in 0..cout {
        for r in 0..kc {
            let (a, b) = (kernel[2 * (o * kc + r)], kernel[2 * (o * kc + r) + 1]);
            m[o * w2 + r] = a;
            m[o * w2 + kc + r] = -b;
            m[(cout + o) * w2 + r] = b;
            m[(cout + o) * w2 + kc + r] = a;
        }
    }
    m
}

/// Complex 2-D cross-correlation: `out[o] = bias[o] + sum_c kernel[o, c] * input[c]`.
pub fn conv2d_forward(
    input: &ComplexTensor,
    kernel: &ComplexTensor,
    bias: Option<&ComplexTensor>,
    stride: usize,
    padding: usize,
) -> Result<ComplexTensor> {
    let g = conv_geometry(input, kernel, bias, stride, padding)?;
    input.ensure_finite("conv2d input")?;
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    let kc = g.cin * g.kh * g.kw;
    let cols = im2col(input.data(), &g);
    let w = block_weights(kernel.data(), g.cout, kc);
    let mut planar = vec![0f32; 2 * g.cout * n];
    gemm(2 * g.cout, 2 * kc, n, &w, (2 * kc as isize, 1), &cols, (n as isize, 1), 0.0, &mut planar, false);

    let mut out = ComplexTensor::zeros(&[g.cout, oh, ow]);
    out.data_mut()
        .par_chunks_mut(2 * n)
        .enumerate()
        .for_each(|(o, dst)| {
            let z = bias.map(|b| b.get(o)).unwrap_or_default();
            let re = &planar[o * n..(o + 1) * n];
            let im = &planar[(g.cout + o) * n..(g.cout + o + 1) * n];
            for (p, pair) in dst.chunks_exact_mut(2).enumerate() {
                pair[0] = re[p] + z.re;
                pair[1] = im[p] + z.im;
            }
        });
    Ok(out)
}

pub struct ConvGrads {
    pub input: Option<ComplexTensor>,
    pub kernel: ComplexTensor,
    pub bias: Option<ComplexTensor>,
}

/// Gradients of a real loss through [`conv2d_forward`] in the paired-real
/// convention (`re` slot holds dL/d re, `im` slot holds dL/d im).
///
/// For `y = w x` this gives `dx = conj(w) dy` and `dw = sum conj(x) dy`.
pub fn conv2d_backward(
    input: &ComplexTensor,
    kernel: &ComplexTensor,
    has_bias: bool,
    stride: usize,
    padding: usize,
    grad_out: &ComplexTensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let g = conv_geometry(input, kernel, None, stride, padding)?;
    let (oh, ow) = (g.out_h(), g.out_w());
    if grad_out.shape() != [g.cout, oh, ow] {
        return Err(Error::arg("conv2d gradient shape mismatch"));
    }
    let n = oh * ow;
    let kc = g.cin * g.kh * g.kw;
    let gdata = grad_out.data();

    // Planar [G_re; G_im], shape [2 * cout, n].
    let mut g2 = vec![0f32; 2 * g.cout * n];
    {
        let (gre, gim) = g2.split_at_mut(g.cout * n);
        gre.par_chunks_mut(n)
            .zip(gim.par_chunks_mut(n))
            .enumerate()
            .for_each(|(o, (r, i))| {
                for (p, pair) in gdata[2 * o * n..2 * (o + 1) * n].chunks_exact(2).enumerate() {
                    r[p] = pair[0];
                    i[p] = pair[1];
                }
            });
    }

    // T = cols * [G_re; G_im]^T, shape [2Kc, 2 cout]; with P = T[.., re] and
    // Q = T[.., im]: dA = P_top + Q_bottom, dB = Q_top - P_bottom.
    let cols = im2col(input.data(), &g);
    let c2 = 2 * g.cout;
    let mut t = vec![0f32; 2 * kc * c2];
    gemm(2 * kc, n, c2, &cols, (n as isize, 1), &g2, (1, n as isize), 0.0, &mut t, true);
    let mut kgrad = ComplexTensor::zeros(kernel.shape());
    {
        let kd = kgrad.data_mut();
        for o in 0..g.cout {
            for r in 0..kc {
                let p_top = t[r * c2 + o];
                let q_top = t[r * c2 + g.cout + o];
                let p_bot = t[(kc + r) * c2 + o];
                let q_bot = t[(kc + r) * c2 + g.cout + o];
                kd[2 * (o * kc + r)] = p_top + q_bot;
                kd[2 * (o * kc + r) + 1] = q_top - p_bot;
            }
        }
    }

    let bias = has_bias.then(|| {
        let mut bg = ComplexTensor::zeros(&[g.cout]);
        for o in 0..g.cout {
            let re: f64 = g2[o * n..(o + 1) * n].iter().map(|&v| v as f64).sum();
            let im: f64 = g2[(g.cout + o) * n..(g.cout + o + 1) * n].iter().map(|&v| v as f64).sum();
            bg.data_mut()[2 * o] = re as f32;
            bg.data_mut()[2 * o + 1] = im as f32;
        }
        bg
    });

    let input_grad = need_input_grad.then(|| {
        // dcols = [[A^T, B^T], [-B^T, A^T]] * [G_re; G_im]: the transpose of
        // the forward block matrix.
        let w = block_weights(kernel.data(), g.cout, kc);
        let mut dcols = vec![0f32; 2 * kc * n];
        gemm(2 * kc, 2 * g.cout, n, &w, (1, 2 * kc as isize), &g2, (n as isize, 1), 0.0, &mut dcols, false);
        col2im(&dcols, &g)
    });

    Ok(ConvGrads {
        input: input_grad,
        kernel: kgrad,
        bias,
    })
}

/// Complex max-pooling by modulus. Returns the pooled tensor and, for every
/// output element, the flat complex index of the selected input element.
/// Ties keep the first element in row-major window order.
pub fn maxpool_forward(input: &ComplexTensor, window: usize) -> Result<(ComplexTensor, Vec<u32>)> {
    let (c, h, w) = input.dims3()?;
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::arg(format!(
            "pool window {window} does not divide spatial extents {h}x{w}"
        )));
    }
    input.ensure_finite("maxpool input")?;
    let (oh, ow) = (h / window, w / window);
    let mut out = ComplexTensor::zeros(&[c, oh, ow]);
    let mut argmax = vec![0u32; c * oh * ow];
    let src = input.data();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                let mut best_mag = f32::NEG_INFINITY;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = ch * h * w + (oy * window + dy) * w + ox * window + dx;
                        let (re, im) = (src[2 * idx], src[2 * idx + 1]);
                        let mag = re * re + im * im;
                        if mag > best_mag {
                            best_mag = mag;
                            best = idx;
                        }
                    }
                }
                let o = ch * oh * ow + oy * ow + ox;
                argmax[o] = best as u32;
                out.data_mut()[2 * o] = src[2 * best];
                out.data_mut()[2 * o + 1] = src[2 * best + 1];
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool_backward(input_shape: &[usize], argmax: &[u32], grad_out: &ComplexTensor) -> ComplexTensor {
    let mut gi = ComplexTensor::zeros(input_shape);
    let d = gi.data_mut();
    for (o, &src) in argmax.iter().enumerate() {
        let s = src as usize;
        d[2 * s] += grad_out.data()[2 * o];
        d[2 * s + 1] += grad_out.data()[2 * o + 1];
    }
    gi
}

/// Split ReLU: `max(0, re) + i max(0, im)`.
pub fn crelu_forward(input: &ComplexTensor) -> ComplexTensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = if *v > 0.0 { *v } else { 0.0 };
    }
    out
}

pub fn crelu_backward(input: &ComplexTensor, grad_out: &ComplexTensor) -> ComplexTensor {
    let mut gi = grad_out.clone();
    for (g, &x) in gi.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    gi
}

/// Nearest-neighbour 2x upsampling of a `[C, H, W]` tensor.
pub fn upsample2x_forward(input: &ComplexTensor) -> Result<ComplexTensor> {
    let (c, h, w) = input.dims3()?;
    let mut out = ComplexTensor::zeros(&[c, 2 * h, 2 * w]);
    let src = input.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let s = 2 * (ch * h * w + y * w + x);
                for dy in 0..2 {
                    let d = 2 * (ch * 4 * h * w + (2 * y + dy) * 2 * w + 2 * x);
                    dst[d] = src[s];
                    dst[d + 1] = src[s + 1];
                    dst[d + 2] = src[s];
                    dst[d + 3] = src[s + 1];
                }
            }
        }
    }
    Ok(out)
}

pub fn upsample2x_backward(input_shape: &[usize], grad_out: &ComplexTensor) -> ComplexTensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let mut gi = ComplexTensor::zeros(input_shape);
    let g = grad_out.data();
    let d = gi.data_mut();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let o = 2 * (ch * h * w + y * w + x);
                for dy in 0..2 {
                    let s = 2 * (ch * 4 * h * w + (2 * y + dy) * 2 * w + 2 * x);
                    d[o] += g[s] + g[s + 2];
                    d[o + 1] += g[s + 1] + g[s + 3];
                }
            }
        }
    }
    gi
}
