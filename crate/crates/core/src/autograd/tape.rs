//! Reverse-mode tape.
//!
//! Every op appends a node holding its output and enough context to run the
//! backward rule. [`Tape::backward`] walks the nodes in reverse insertion
//! order, which is a valid topological order because inputs always precede
//! their consumers.

use crate::autograd::ops::conv::{conv2d, conv2d_backward};
use crate::autograd::ops::dense::{
    add, cross_entropy_backward, linear, linear_backward, relu, relu_backward, smoothed_one_hot,
    soft_cross_entropy,
};
use crate::autograd::ops::norm::{
    batch_norm2d_backward, batch_norm2d_eval, batch_norm2d_train, BnMode, BnState, BN_EPS, BN_MOMENTUM,
};
use crate::autograd::ops::pool::{adaptive_avg_pool2d, adaptive_avg_pool2d_backward};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which running statistics a batch-norm node reads or updates.
pub enum BnStats<'a, T> {
    Train(&'a mut BnState<T>),
    Eval(&'a BnState<T>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Conv2d,
    BatchNorm,
    Relu,
    Add,
    AdaptiveAvgPool,
    Reshape,
    Linear,
    CrossEntropy,
}

/// Shapes seen by one recorded op, for tracing and auditing.
#[derive(Clone, Debug)]
pub struct OpRecord {
    pub kind: OpKind,
    pub inputs: Vec<Vec<usize>>,
    pub output: Vec<usize>,
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, stride: usize, padding: usize },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, mode: BnMode },
    Relu { input: Var },
    Add { a: Var, b: Var },
    AdaptiveAvgPool { input: Var, out_h: usize, out_w: usize },
    Reshape { input: Var },
    Linear { input: Var, weight: Var, bias: Var },
    CrossEntropy { logits: Var, probs: Vec<T>, targets: Vec<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Relu { .. } => OpKind::Relu,
            Op::Add { .. } => OpKind::Add,
            Op::AdaptiveAvgPool { .. } => OpKind::AdaptiveAvgPool,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Linear { .. } => OpKind::Linear,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, .. } => vec![input, weight],
            Op::BatchNorm { input, gamma, beta, .. } => vec![input, gamma, beta],
            Op::Relu { input } | Op::Reshape { input } | Op::AdaptiveAvgPool { input, .. } => vec![input],
            Op::Add { a, b } => vec![a, b],
            Op::Linear { input, weight, bias } => vec![input, weight, bias],
            Op::CrossEntropy { logits, .. } => vec![logits],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A leaf that collects gradients.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value.with_requires_grad(true), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.take_grad()
    }

    /// Every recorded op with its input/output shapes, in execution order.
    pub fn records(&self) -> Vec<OpRecord> {
        self.nodes
            .iter()
            .map(|n| OpRecord {
                kind: n.op.kind(),
                inputs: n.op.inputs().iter().map(|v| self.value(*v).shape().to_vec()).collect(),
                output: n.value.shape().to_vec(),
            })
            .collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires = value.requires_grad() || op.inputs().iter().any(|v| self.value(*v).requires_grad());
        self.nodes.push(Node {
            value: value.with_requires_grad(requires),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = conv2d(self.value(input), self.value(weight), stride, padding)?;
        Ok(self.push(out, Op::Conv2d { input, weight, stride, padding }))
    }

    pub fn batch_norm2d(&mut self, input: Var, gamma: Var, beta: Var, stats: BnStats<'_, T>) -> Result<Var> {
        let (x, g, b) = (self.value(input), self.value(gamma), self.value(beta));
        let (fwd, mode) = match stats {
            BnStats::Train(state) => (batch_norm2d_train(x, g, b, state, BN_EPS, BN_MOMENTUM)?, BnMode::Train),
            BnStats::Eval(state) => (batch_norm2d_eval(x, g, b, state, BN_EPS)?, BnMode::Eval),
        };
        Ok(self.push(
            fwd.output,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
                mode,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = relu(self.value(input));
        self.push(out, Op::Relu { input })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn adaptive_avg_pool2d(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = adaptive_avg_pool2d(self.value(input), out_h, out_w)?;
        Ok(self.push(out, Op::AdaptiveAvgPool { input, out_h, out_w }))
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let n = x.shape()[0];
        let out = x.reshape(vec![n, x.len() / n])?;
        Ok(self.push(out, Op::Reshape { input }))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = linear(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Linear { input, weight, bias }))
    }

    /// Mean cross entropy against probability rows (one-hot, smoothed or mixed).
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: Vec<T>) -> Result<Var> {
        let ce = soft_cross_entropy(self.value(logits), &targets)?;
        Ok(self.push(
            Tensor::scalar(ce.loss),
            Op::CrossEntropy {
                logits,
                probs: ce.probs,
                targets,
            },
        ))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], smoothing: f64) -> Result<Var> {
        let k = *self.value(logits).shape().last().unwrap_or(&0);
        let q = smoothed_one_hot(labels, k, smoothing)?;
        self.soft_cross_entropy(logits, q)
    }

    /// Backpropagates from a scalar root with seed gradient 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward() needs a scalar root; use backward_with"));
        }
        self.backward_with(root, vec![T::one()])
    }

    /// Backpropagates an explicit upstream gradient for `root`.
    pub fn backward_with(&mut self, root: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.value(root).len() {
            return Err(Error::shape("seed gradient must match the root's shape"));
        }
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
        self.nodes[root.0].value.set_grad(Some(seed));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            let Some(grad) = self.nodes[i].value.take_grad() else {
                continue;
            };
            self.propagate(i, &grad)?;
            self.nodes[i].value.set_grad(Some(grad));
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.value(v).requires_grad()
    }

    fn send(&mut self, v: Var, delta: &[T]) {
        if self.needs(v) {
            self.nodes[v.0].value.accumulate_grad(delta);
        }
    }

    fn propagate(&mut self, i: usize, grad: &[T]) -> Result<()> {
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let result = self.apply_rule(&op, grad);
        self.nodes[i].op = op;
        result
    }

    fn apply_rule(&mut self, op: &Op<T>, grad: &[T]) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, stride, padding } => {
                let g = conv2d_backward(
                    self.value(input),
                    self.value(weight),
                    grad,
                    stride,
                    padding,
                    self.needs(input),
                )?;
                if let Some(gi) = g.input {
                    self.send(input, &gi);
                }
                self.send(weight, &g.weight);
            }
            Op::BatchNorm { input, gamma, beta, ref xhat, ref inv_std, mode } => {
                let g = batch_norm2d_backward(
                    self.value(input).shape(),
                    self.value(gamma).data(),
                    xhat,
                    inv_std,
                    grad,
                    mode,
                );
                self.send(input, &g.input);
                self.send(gamma, &g.gamma);
                self.send(beta, &g.beta);
            }
            Op::Relu { input } => {
                let gi = relu_backward(self.value(input).data(), grad);
                self.send(input, &gi);
            }
            Op::Add { a, b } => {
                self.send(a, grad);
                self.send(b, grad);
            }
            Op::AdaptiveAvgPool { input, out_h, out_w } => {
                let gi = adaptive_avg_pool2d_backward(self.value(input).shape(), out_h, out_w, grad);
                self.send(input, &gi);
            }
            Op::Reshape { input } => self.send(input, grad),
            Op::Linear { input, weight, bias } => {
                let g = linear_backward(self.value(input), self.value(weight), grad);
                self.send(input, &g.input);
                self.send(weight, &g.weight);
                self.send(bias, &g.bias);
            }
            Op::CrossEntropy { logits, ref probs, ref targets } => {
                let n = self.value(logits).shape()[0];
                let gi = cross_entropy_backward(probs, targets, n, grad[0]);
                self.send(logits, &gi);
            }
        }
        Ok(())
    }
}
