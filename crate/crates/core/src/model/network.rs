//! Parameter storage and the forward pass on a [`Tape`].

use rand_distr::{Distribution, Normal};

use super::config::{BlockKind, ModelConfig};
use crate::autograd::{BnState, BnStats, Parameter, Sgd, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{stream, tags};
use crate::schedule::Resolution;
use crate::tensor::{Scalar, Tensor};

/// Indices of one convolution and the batch norm after it.
#[derive(Clone, Debug)]
pub(crate) struct ConvBn {
    pub name: String,
    pub weight: usize,
    pub gamma: usize,
    pub beta: usize,
    pub bn: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvBn {
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub shortcut: Option<ConvBn>,
    pub residual: bool,
}

/// The compiled layer graph.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub stem: ConvBn,
    pub blocks: Vec<Block>,
    pub fc_weight: usize,
    pub fc_bias: usize,
}

struct Builder<T> {
    params: Vec<Parameter<T>>,
    bn: Vec<BnState<T>>,
    rng: crate::rng::SplitMix64,
}

impl<T: Scalar> Builder<T> {
    /// He-normal with fan-in `fan_in`.
    fn he(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(normal.sample(&mut self.rng))).collect();
        self.push(name, Tensor::from_vec(shape, data).expect("shape matches"))
    }

    fn push(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    fn conv_bn(&mut self, name: String, cin: usize, cout: usize, kernel: usize, stride: usize) -> ConvBn {
        let weight = self.he(format!("{name}.conv.weight"), vec![cout, cin, kernel, kernel], cin * kernel * kernel);
        let gamma = self.push(format!("{name}.bn.gamma"), Tensor::full(vec![cout], T::one()));
        let beta = self.push(format!("{name}.bn.beta"), Tensor::zeros(vec![cout]));
        self.bn.push(BnState::new(cout));
        ConvBn {
            name,
            weight,
            gamma,
            beta,
            bn: self.bn.len() - 1,
            kernel,
            stride,
        }
    }
}

/// A resolution-agnostic classifier with its parameters and running
/// batch-norm statistics.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    pub params: Vec<Parameter<T>>,
    pub bn_states: Vec<BnState<T>>,
    pub(crate) layout: Layout,
}

/// Handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// Output of the last block, before pooling.
    pub features: Var,
    pub logits: Var,
    /// One leaf per parameter, in [`Model::params`] order.
    pub params: Vec<Var>,
}

enum BnAccess<'a, T> {
    Train(&'a mut [BnState<T>]),
    Eval(&'a [BnState<T>]),
}

impl<T> BnAccess<'_, T> {
    fn get(&mut self, i: usize) -> BnStats<'_, T> {
        match self {
            BnAccess::Train(s) => BnStats::Train(&mut s[i]),
            BnAccess::Eval(s) => BnStats::Eval(&s[i]),
        }
    }
}

impl<T: Scalar> Model<T> {
    /// Build with He-normal weights drawn from the `model/init` stream of `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            bn: Vec::new(),
            rng: stream(seed, tags::INIT, 0, 0),
        };
        let stem = b.conv_bn("stem".into(), config.in_channels, config.stem_channels, 3, 1);
        let mut blocks = Vec::new();
        let mut cin = config.stem_channels;
        for (si, stage) in config.stages.iter().enumerate() {
            for bi in 0..stage.blocks {
                let stride = if bi == 0 { stage.stride } else { 1 };
                let name = format!("stage{}.block{bi}", si + 1);
                let cout = stage.channels;
                let conv1 = b.conv_bn(format!("{name}.conv1"), cin, cout, 3, stride);
                let conv2 = b.conv_bn(format!("{name}.conv2"), cout, cout, 3, 1);
                let residual = config.block_kind == BlockKind::Residual;
                let shortcut = (residual && (stride != 1 || cin != cout))
                    .then(|| b.conv_bn(format!("{name}.shortcut"), cin, cout, 1, stride));
                blocks.push(Block {
                    conv1,
                    conv2,
                    shortcut,
                    residual,
                });
                cin = cout;
            }
        }
        let features = cin * config.pool_output.area();
        let fc_weight = b.he("fc.weight".into(), vec![config.class_count, features], features);
        let fc_bias = b.push("fc.bias".into(), Tensor::zeros(vec![config.class_count]));
        Ok(Model {
            config: config.clone(),
            params: b.params,
            bn_states: b.bn,
            layout: Layout {
                stem,
                blocks,
                fc_weight,
                fc_bias,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Forward in training mode: batch statistics, running stats updated.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, input: Tensor<T>) -> Result<ForwardVars> {
        let mut states = std::mem::take(&mut self.bn_states);
        let out = run(&self.config, &self.layout, &self.params, BnAccess::Train(&mut states), tape, input);
        self.bn_states = states;
        out
    }

    /// Forward in evaluation mode with running statistics.
    pub fn forward_eval(&self, tape: &mut Tape<T>, input: Tensor<T>) -> Result<ForwardVars> {
        run(&self.config, &self.layout, &self.params, BnAccess::Eval(&self.bn_states), tape, input)
    }

    /// Logits `[N, K]` in evaluation mode, no gradients kept.
    pub fn predict(&self, input: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.forward_eval_frozen(&mut tape, input)?;
        Ok(tape.value(vars.logits).clone())
    }

    /// Eval-mode forward with parameters entered as plain leaves.
    pub fn forward_eval_frozen(&self, tape: &mut Tape<T>, input: Tensor<T>) -> Result<ForwardVars> {
        run_with(&self.config, &self.layout, &self.params, BnAccess::Eval(&self.bn_states), tape, input, false)
    }

    /// One SGD step on `loss`, which must come from a forward on `tape`.
    pub fn apply_gradients(&mut self, tape: &mut Tape<T>, vars: &ForwardVars, loss: Var, sgd: &Sgd) -> Result<()> {
        self.accumulate_gradients(tape, vars, loss, T::one())?;
        self.step(sgd)
    }

    /// Backpropagate `weight * loss` and add the result to each parameter's
    /// gradient. Lets one update combine several forward passes.
    pub fn accumulate_gradients(&mut self, tape: &mut Tape<T>, vars: &ForwardVars, loss: Var, weight: T) -> Result<()> {
        tape.backward_with(loss, vec![weight])?;
        for (p, &v) in self.params.iter_mut().zip(&vars.params) {
            let g = tape
                .take_grad(v)
                .ok_or_else(|| Error::invalid(format!("no gradient reached `{}`", p.name)))?;
            p.value.accumulate_grad(&g);
        }
        Ok(())
    }

    pub fn step(&mut self, sgd: &Sgd) -> Result<()> {
        sgd.step(&mut self.params)
    }

    /// Named tensors for checkpoints: parameters, then running statistics.
    pub fn state_entries(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec(), p.value.data().to_vec()))
            .collect();
        for (i, conv) in self.conv_bns().into_iter().enumerate() {
            debug_assert_eq!(conv.bn, i);
            let st = &self.bn_states[conv.bn];
            out.push((format!("{}.bn.running_mean", conv.name), vec![st.running_mean.len()], st.running_mean.clone()));
            out.push((format!("{}.bn.running_var", conv.name), vec![st.running_var.len()], st.running_var.clone()));
        }
        out
    }

    /// Inverse of [`Model::state_entries`]; every entry must be present.
    pub fn load_entries(&mut self, entries: &[(String, Vec<usize>, Vec<T>)]) -> Result<()> {
        let find = |name: &str, shape: &[usize]| -> Result<Vec<T>> {
            let (_, s, d) = entries
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if s != shape {
                return Err(Error::Checkpoint(format!("`{name}` has shape {s:?}, expected {shape:?}")));
            }
            Ok(d.clone())
        };
        for p in &mut self.params {
            let data = find(&p.name, p.value.shape())?;
            p.value.data_mut().copy_from_slice(&data);
            p.momentum_buffer.iter_mut().for_each(|v| *v = T::zero());
        }
        for conv in self.conv_bns() {
            let st = &mut self.bn_states[conv.bn];
            let c = st.running_mean.len();
            st.running_mean = find(&format!("{}.bn.running_mean", conv.name), &[c])?;
            st.running_var = find(&format!("{}.bn.running_var", conv.name), &[c])?;
        }
        Ok(())
    }

    /// Every conv/BN pair in batch-norm index order.
    pub(crate) fn conv_bns(&self) -> Vec<ConvBn> {
        let mut all = vec![self.layout.stem.clone()];
        for b in &self.layout.blocks {
            all.push(b.conv1.clone());
            all.push(b.conv2.clone());
            if let Some(s) = &b.shortcut {
                all.push(s.clone());
            }
        }
        all.sort_by_key(|c| c.bn);
        all
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.cast()))
                .collect(),
            bn_states: self
                .bn_states
                .iter()
                .map(|s| BnState {
                    running_mean: s.running_mean.iter().map(|v| U::of(v.as_f64())).collect(),
                    running_var: s.running_var.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }
}

fn run<T: Scalar>(
    config: &ModelConfig,
    layout: &Layout,
    params: &[Parameter<T>],
    bn: BnAccess<'_, T>,
    tape: &mut Tape<T>,
    input: Tensor<T>,
) -> Result<ForwardVars> {
    run_with(config, layout, params, bn, tape, input, true)
}

fn run_with<T: Scalar>(
    config: &ModelConfig,
    layout: &Layout,
    params: &[Parameter<T>],
    mut bn: BnAccess<'_, T>,
    tape: &mut Tape<T>,
    input: Tensor<T>,
    track: bool,
) -> Result<ForwardVars> {
    let (_, c, h, w) = input.dims4()?;
    if c != config.in_channels {
        return Err(Error::shape(format!("model expects {} input channels, got {c}", config.in_channels)));
    }
    config.check_resolution(Resolution::new(h, w))?;
    let vars: Vec<Var> = params
        .iter()
        .map(|p| {
            if track {
                tape.param(p.value.clone())
            } else {
                tape.leaf(p.value.clone().with_requires_grad(false))
            }
        })
        .collect();
    let vars_ref = &vars;
    let mut conv_bn = |tape: &mut Tape<T>, x: Var, l: &ConvBn, relu: bool| -> Result<Var> {
        let vars = vars_ref;
        let y = tape.conv2d(x, vars[l.weight], l.stride, l.padding())?;
        let y = tape.batch_norm2d(y, vars[l.gamma], vars[l.beta], bn.get(l.bn))?;
        Ok(if relu { tape.relu(y) } else { y })
    };
    let x = tape.leaf(input);
    let mut x = conv_bn(tape, x, &layout.stem, true)?;
    for block in &layout.blocks {
        let y = conv_bn(tape, x, &block.conv1, true)?;
        let y = conv_bn(tape, y, &block.conv2, !block.residual)?;
        x = if block.residual {
            let skip = match &block.shortcut {
                Some(s) => conv_bn(tape, x, s, false)?,
                None => x,
            };
            let sum = tape.add(y, skip)?;
            tape.relu(sum)
        } else {
            y
        };
    }
    let features = x;
    let pooled = tape.adaptive_avg_pool2d(features, config.pool_output.height, config.pool_output.width)?;
    let flat = tape.flatten(pooled)?;
    let logits = tape.linear(flat, vars[layout.fc_weight], vars[layout.fc_bias])?;
    Ok(ForwardVars {
        features,
        logits,
        params: vars,
    })
}
