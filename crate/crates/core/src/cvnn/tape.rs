//! Reverse-mode differentiation over [`ComplexTensor`] values.
//!
//! Complex numbers are treated as pairs of independent reals. The gradient
//! stored for a node has the same shape as its value, with the `re` slot
//! holding dL/d(re) and the `im` slot holding dL/d(im). For a real loss this
//! equals twice the conjugate Wirtinger derivative.

use super::kernels;
use super::tensor::ComplexTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
pub trait CustomBackward: Send {
    /// Returns one optional gradient per input, in input order.
    fn backward(
        &self,
        inputs: &[&ComplexTensor],
        grad_out: &ComplexTensor,
    ) -> Result<Vec<Option<ComplexTensor>>>;
}

enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        input: NodeId,
        argmax: Vec<u32>,
    },
    CRelu {
        input: NodeId,
    },
    Upsample2x {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    SumRe {
        input: NodeId,
    },
    SumSq {
        input: NodeId,
    },
    Custom {
        inputs: Vec<NodeId>,
        rule: Box<dyn CustomBackward>,
    },
}

struct Node {
    op: Op,
    value: ComplexTensor,
    requires_grad: bool,
}

/// Records operations in execution order; node ids are topologically sorted
/// by construction since an op can only reference existing nodes.
#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradients indexed by node. Only nodes that influence the loss and lie
/// downstream of a parameter carry a value.
pub struct Gradients {
    grads: Vec<Option<ComplexTensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&ComplexTensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<ComplexTensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: ComplexTensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Contract(format!("node {} is not on this tape", id.0)))
        }
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Constant input; no gradient is propagated into it.
    pub fn constant(&mut self, value: ComplexTensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Trainable leaf; backward returns its gradient.
    pub fn param(&mut self, value: ComplexTensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn value(&self, id: NodeId) -> &ComplexTensor {
        &self.nodes[id.0].value
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        self.check(input)?;
        self.check(kernel)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let value = kernels::conv2d_forward(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            value,
            rg,
        ))
    }

    /// "Same" convolution with an odd square kernel and unit stride.
    pub fn conv2d_same(&mut self, input: NodeId, kernel: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let k = self.value(kernel).shape().get(2).copied().unwrap_or(1);
        self.conv2d(input, kernel, bias, 1, k / 2)
    }

    pub fn maxpool2d(&mut self, input: NodeId, window: usize) -> Result<NodeId> {
        self.check(input)?;
        let (value, argmax) = kernels::maxpool_forward(self.value(input), window)?;
        let rg = self.rg(&[input]);
        Ok(self.push(Op::MaxPool { input, argmax }, value, rg))
    }

    pub fn crelu(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let value = kernels::crelu_forward(self.value(input));
        let rg = self.rg(&[input]);
        Ok(self.push(Op::CRelu { input }, value, rg))
    }

    pub fn upsample2x(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let value = kernels::upsample2x_forward(self.value(input))?;
        let rg = self.rg(&[input]);
        Ok(self.push(Op::Upsample2x { input }, value, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::arg(format!(
                "add shape mismatch: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut value = va.clone();
        value.add_assign(vb);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add { a, b }, value, rg))
    }

    /// Real scalar `sum(re(x))`.
    pub fn sum_re(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let s: f64 = self
            .value(input)
            .data()
            .chunks_exact(2)
            .map(|p| p[0] as f64)
            .sum();
        let rg = self.rg(&[input]);
        Ok(self.push(Op::SumRe { input }, ComplexTensor::scalar(s as f32), rg))
    }

    /// Real scalar `sum(|x|^2)`.
    pub fn sum_sq(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let s = self.value(input).norm_sqr();
        let rg = self.rg(&[input]);
        Ok(self.push(Op::SumSq { input }, ComplexTensor::scalar(s as f32), rg))
    }

    /// Records an externally computed op with its own backward rule.
    pub fn custom(
        &mut self,
        inputs: Vec<NodeId>,
        value: ComplexTensor,
        rule: Box<dyn CustomBackward>,
    ) -> Result<NodeId> {
        for &i in &inputs {
            self.check(i)?;
        }
        let rg = self.rg(&inputs);
        Ok(self.push(Op::Custom { inputs, rule }, value, rg))
    }

    /// Reverse sweep from a real scalar node. Each node is visited once, in
    /// reverse recording order.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.check(loss)?;
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if lv.data()[1] != 0.0 {
            return Err(Error::Contract(
                "backward requires a real loss (nonzero imaginary part)".into(),
            ));
        }
        lv.ensure_finite("loss")?;

        let mut grads: Vec<Option<ComplexTensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ComplexTensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let need_in = self.nodes[input.0].requires_grad;
                    let cg = kernels::conv2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        bias.is_some(),
                        *stride,
                        *padding,
                        &g,
                        need_in,
                    )?;
                    if let Some(gi) = cg.input {
                        accumulate(&mut grads, &self.nodes, *input, gi);
                    }
                    accumulate(&mut grads, &self.nodes, *kernel, cg.kernel);
                    if let (Some(b), Some(gb)) = (bias, cg.bias) {
                        accumulate(&mut grads, &self.nodes, *b, gb);
                    }
                }
                Op::MaxPool { input, argmax } => {
                    let gi = kernels::maxpool_backward(self.value(*input).shape(), argmax, &g);
                    accumulate(&mut grads, &self.nodes, *input, gi);
                }
                Op::CRelu { input } => {
                    let gi = kernels::crelu_backward(self.value(*input), &g);
                    accumulate(&mut grads, &self.nodes, *input, gi);
                }
                Op::Upsample2x { input } => {
                    let gi = kernels::upsample2x_backward(self.value(*input).shape(), &g);
                    accumulate(&mut grads, &self.nodes, *input, gi);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, &self.nodes, *a, g.clone());
                    accumulate(&mut grads, &self.nodes, *b, g);
                }
                Op::SumRe { input } => {
                    let s = g.data()[0];
                    let x = self.value(*input);
                    let mut gi = ComplexTensor::zeros(x.shape());
                    for p in gi.data_mut().chunks_exact_mut(2) {
                        p[0] = s;
                    }
                    accumulate(&mut grads, &self.nodes, *input, gi);
                }
                Op::SumSq { input } => {
                    let s = g.data()[0];
                    let mut gi = self.value(*input).clone();
                    gi.scale(2.0 * s);
                    accumulate(&mut grads, &self.nodes, *input, gi);
                }
                Op::Custom { inputs, rule } => {
                    let vals: Vec<&ComplexTensor> = inputs.iter().map(|i| self.value(*i)).collect();
                    let gs = rule.backward(&vals, &g)?;
                    if gs.len() != inputs.len() {
                        return Err(Error::Contract(
                            "custom backward returned wrong number of gradients".into(),
                        ));
                    }
                    for (i, gi) in inputs.iter().zip(gs) {
                        if let Some(gi) = gi {
                            if gi.shape() != self.value(*i).shape() {
                                return Err(Error::Contract(
                                    "custom backward gradient shape mismatch".into(),
                                ));
                            }
                            accumulate(&mut grads, &self.nodes, *i, gi);
                        }
                    }
                }
            }
        }

        // Only parameter leaves keep their gradients.
        for (idx, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<ComplexTensor>], nodes: &[Node], id: NodeId, g: ComplexTensor) {
    if !nodes[id.0].requires_grad {
        return;
    }
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
