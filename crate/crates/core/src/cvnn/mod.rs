//! Complex-valued tensors, the small layer set the denoiser needs, a
//! gradient tape over them and an Adam optimizer.

mod adam;
pub mod kernels;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{CustomBackward, GradTape, Gradients, NodeId};
pub use tensor::ComplexTensor;

use crate::error::Result;

/// Complex 2-D convolution without bias.
pub fn cconv2d(
    input: &ComplexTensor,
    kernel: &ComplexTensor,
    stride: usize,
    padding: usize,
) -> Result<ComplexTensor> {
    kernels::conv2d_forward(input, kernel, None, stride, padding)
}

/// Modulus max-pooling over non-overlapping `window x window` tiles.
pub fn cmaxpool2d(input: &ComplexTensor, window: usize) -> Result<ComplexTensor> {
    kernels::maxpool_forward(input, window).map(|(t, _)| t)
}

/// Split ReLU applied to real and imaginary parts independently.
pub fn cactivation(input: &ComplexTensor) -> Result<ComplexTensor> {
    input.ensure_finite("activation input")?;
    Ok(kernels::crelu_forward(input))
}

pub fn cupsample2x(input: &ComplexTensor) -> Result<ComplexTensor> {
    kernels::upsample2x_forward(input)
}
