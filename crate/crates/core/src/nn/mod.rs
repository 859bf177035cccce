//! Network building blocks.
//!
//! Each layer holds [`ParamId`]s into a [`ParamStore`] and records its forward pass on a
//! [`Session`]. The free functions (`se_block`, `res2_conv`, `se_res2block`,
//! `attentive_stats_pool`) evaluate a single layer on plain tensors.

mod block;
mod pooling;
mod res2;
mod se;

pub use block::{se_res2block, BnParams, CentralConv, CentralParams, SeRes2Block, SeRes2BlockParams};
pub use pooling::{attention_weights, attentive_stats_pool, AttentionMode, AttentivePool, AttentiveStatsParams, POOL_EPS};
pub use res2::{res2_conv, Res2Config, Res2Conv};
pub use se::{se_block, SeBlock, SeParams};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::ops::BnMode;
use crate::params::{BnUpdate, Mode, ParamId, ParamKind, ParamStore, Session};
use crate::tensor::Tensor;

/// Uniform draw in `±sqrt(1 / fan_in)`.
pub(crate) fn init_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts(shape, data)
}

/// Same-padded dilated convolution; `kernel == 1` is a framewise dense layer.
#[derive(Clone, Debug)]
pub struct Conv1dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub dilation: usize,
}

impl Conv1dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        let fan_in = cin * kernel;
        let w = init_uniform(rng, vec![cout, cin, kernel], fan_in);
        let b = init_uniform(rng, vec![cout], fan_in);
        Self {
            weight: store.add(format!("{name}.weight"), ParamKind::Weight, w),
            bias: store.add(format!("{name}.bias"), ParamKind::Bias, b),
            dilation,
        }
    }

    /// Wraps existing weight `[Cout, Cin, K]` and bias `[Cout]` tensors.
    pub fn from_tensors(store: &mut ParamStore, name: &str, weight: Tensor, bias: Tensor, dilation: usize) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), ParamKind::Weight, weight),
            bias: store.add(format!("{name}.bias"), ParamKind::Bias, bias),
            dilation,
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.graph.conv1d(x, w, Some(b), self.dilation)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

/// Dense layer on `[B, F]` vectors.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl LinearLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fin: usize, fout: usize, bias: bool) -> Self {
        let w = init_uniform(rng, vec![fout, fin], fin);
        let weight = store.add(format!("{name}.weight"), ParamKind::Weight, w);
        let bias = bias.then(|| {
            let b = init_uniform(rng, vec![fout], fin);
            store.add(format!("{name}.bias"), ParamKind::Bias, b)
        });
        Self { weight, bias }
    }

    pub fn from_tensors(store: &mut ParamStore, name: &str, weight: Tensor, bias: Option<Tensor>) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), ParamKind::Weight, weight),
            bias: bias.map(|b| store.add(format!("{name}.bias"), ParamKind::Bias, b)),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.graph.linear(x, w, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Batch normalization with running statistics for eval mode.
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNormLayer {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self::from_tensors(
            store,
            name,
            BnParams {
                gamma: Tensor::ones(vec![channels]),
                beta: Tensor::zeros(vec![channels]),
                running_mean: Tensor::zeros(vec![channels]),
                running_var: Tensor::ones(vec![channels]),
            },
        )
    }

    pub fn from_tensors(store: &mut ParamStore, name: &str, p: BnParams) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), ParamKind::Gamma, p.gamma),
            beta: store.add(format!("{name}.beta"), ParamKind::Beta, p.beta),
            running_mean: store.add(format!("{name}.running_mean"), ParamKind::RunningMean, p.running_mean),
            running_var: store.add(format!("{name}.running_var"), ParamKind::RunningVar, p.running_var),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        match s.mode {
            Mode::Train => {
                let (y, stats) = s.graph.batchnorm(x, g, b, BnMode::Train)?;
                if let Some(stats) = stats {
                    s.record_bn(BnUpdate {
                        mean: self.running_mean,
                        var: self.running_var,
                        stats,
                    });
                }
                Ok(y)
            }
            Mode::Eval => {
                let store = s.store();
                let mode = BnMode::Eval {
                    mean: store.get(self.running_mean).data(),
                    var: store.get(self.running_var).data(),
                };
                Ok(s.graph.batchnorm(x, g, b, mode)?.0)
            }
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta, self.running_mean, self.running_var]
    }
}

/// Runs a single-layer forward pass on a `[C, T]` input as a batch of one.
pub(crate) fn eval_on_tensor(
    store: &ParamStore,
    mode: Mode,
    input: &Tensor,
    f: impl FnOnce(&mut Session<'_>, Var) -> Result<Var>,
) -> Result<Tensor> {
    let [c, t] = *input.shape() else {
        return Err(Error::shape("layer", "[C, T]", input.shape()));
    };
    let mut s = Session::new(store, mode, false);
    let x = s.graph.constant(input.clone().reshape(vec![1, c, t])?);
    let y = f(&mut s, x)?;
    let out = s.graph.value(y);
    let shape = out.shape()[1..].to_vec();
    out.clone().reshape(shape)
}
