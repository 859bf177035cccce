use rand_chacha::ChaCha8Rng;

use super::{eval_on_tensor, BatchNormLayer, Conv1dLayer, Res2Config, Res2Conv, SeBlock, SeParams};
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::params::{Mode, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

/// The dilated middle layer of a block: multi-scale, or one full-width convolution.
#[derive(Clone, Debug)]
pub enum CentralConv {
    Res2(Res2Conv),
    Plain(Conv1dLayer),
}

impl CentralConv {
    fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        match self {
            CentralConv::Res2(r) => r.forward(s, x),
            CentralConv::Plain(c) => c.forward(s, x),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            CentralConv::Res2(r) => r.params(),
            CentralConv::Plain(c) => c.params(),
        }
    }
}

/// `dense → relu → BN → central(k, d) → relu → BN → dense → relu → BN → SE`, plus a skip term.
#[derive(Clone, Debug)]
pub struct SeRes2Block {
    pub entry: Conv1dLayer,
    pub bn1: BatchNormLayer,
    pub central: CentralConv,
    pub bn2: BatchNormLayer,
    pub exit: Conv1dLayer,
    pub bn3: BatchNormLayer,
    pub se: Option<SeBlock>,
}

impl SeRes2Block {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        kernel: usize,
        dilation: usize,
        res2_scale: Option<usize>,
        se_bottleneck: Option<usize>,
    ) -> Result<Self> {
        let entry = Conv1dLayer::new(store, rng, &format!("{name}.entry"), channels, channels, 1, 1);
        let bn1 = BatchNormLayer::new(store, &format!("{name}.bn1"), channels);
        let central = match res2_scale {
            Some(scale) => CentralConv::Res2(Res2Conv::new(
                store,
                rng,
                &format!("{name}.res2"),
                Res2Config {
                    scale,
                    kernel,
                    dilation,
                    channels,
                },
            )?),
            None => CentralConv::Plain(Conv1dLayer::new(
                store,
                rng,
                &format!("{name}.conv"),
                channels,
                channels,
                kernel,
                dilation,
            )),
        };
        let bn2 = BatchNormLayer::new(store, &format!("{name}.bn2"), channels);
        let exit = Conv1dLayer::new(store, rng, &format!("{name}.exit"), channels, channels, 1, 1);
        let bn3 = BatchNormLayer::new(store, &format!("{name}.bn3"), channels);
        let se = se_bottleneck.map(|r| SeBlock::new(store, rng, &format!("{name}.se"), channels, r));
        Ok(Self {
            entry,
            bn1,
            central,
            bn2,
            exit,
            bn3,
            se,
        })
    }

    /// Block body only, without the skip term.
    pub fn body(&self, s: &mut Session<'_>, h: Var) -> Result<Var> {
        let x = self.entry.forward(s, h)?;
        let x = s.graph.relu(x);
        let x = self.bn1.forward(s, x)?;
        let x = self.central.forward(s, x)?;
        let x = s.graph.relu(x);
        let x = self.bn2.forward(s, x)?;
        let x = self.exit.forward(s, x)?;
        let x = s.graph.relu(x);
        let x = self.bn3.forward(s, x)?;
        match &self.se {
            Some(se) => se.forward(s, x),
            None => Ok(x),
        }
    }

    /// `body(h) + skip`; no skip term when `skip` is `None`.
    pub fn forward(&self, s: &mut Session<'_>, h: Var, skip: Option<Var>) -> Result<Var> {
        let y = self.body(s, h)?;
        match skip {
            Some(k) => s.graph.add(y, k),
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.entry.params();
        p.extend(self.bn1.params());
        p.extend(self.central.params());
        p.extend(self.bn2.params());
        p.extend(self.exit.params());
        p.extend(self.bn3.params());
        if let Some(se) = &self.se {
            p.extend(se.params());
        }
        p
    }
}

/// Affine and running-statistic tensors of one batch norm.
#[derive(Clone, Debug)]
pub struct BnParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BnParams {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(vec![channels]),
            beta: Tensor::zeros(vec![channels]),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::ones(vec![channels]),
        }
    }
}

#[derive(Clone, Debug)]
pub enum CentralParams {
    /// Kernels for groups `2..=scale`.
    Res2 { scale: usize, kernels: Vec<(Tensor, Tensor)> },
    Plain { weight: Tensor, bias: Tensor },
}

/// Explicit block parameters for [`se_res2block`]. Dense weights are `[C, C, 1]`.
#[derive(Clone, Debug)]
pub struct SeRes2BlockParams {
    pub kernel: usize,
    pub dilation: usize,
    pub entry: (Tensor, Tensor),
    pub bn1: BnParams,
    pub central: CentralParams,
    pub bn2: BnParams,
    pub exit: (Tensor, Tensor),
    pub bn3: BnParams,
    pub se: Option<SeParams>,
}

impl SeRes2Block {
    pub fn from_params(store: &mut ParamStore, name: &str, p: SeRes2BlockParams) -> Result<Self> {
        let channels = match *p.entry.0.shape() {
            [c, ci, 1] if c == ci => c,
            _ => return Err(Error::shape("se_res2block", "entry weight [C, C, 1]", p.entry.0.shape())),
        };
        let central = match p.central {
            CentralParams::Res2 { scale, kernels } => CentralConv::Res2(Res2Conv::from_kernels(
                store,
                &format!("{name}.res2"),
                Res2Config {
                    scale,
                    kernel: p.kernel,
                    dilation: p.dilation,
                    channels,
                },
                &kernels,
            )?),
            CentralParams::Plain { weight, bias } => {
                CentralConv::Plain(Conv1dLayer::from_tensors(store, &format!("{name}.conv"), weight, bias, p.dilation))
            }
        };
        Ok(Self {
            entry: Conv1dLayer::from_tensors(store, &format!("{name}.entry"), p.entry.0, p.entry.1, 1),
            bn1: BatchNormLayer::from_tensors(store, &format!("{name}.bn1"), p.bn1),
            central,
            bn2: BatchNormLayer::from_tensors(store, &format!("{name}.bn2"), p.bn2),
            exit: Conv1dLayer::from_tensors(store, &format!("{name}.exit"), p.exit.0, p.exit.1, 1),
            bn3: BatchNormLayer::from_tensors(store, &format!("{name}.bn3"), p.bn3),
            se: p
                .se
                .map(|se| SeBlock::from_params(store, &format!("{name}.se"), se))
                .transpose()?,
        })
    }
}

/// Evaluates one block on `h: [C, T]` with `skip` (defaults to `h`, the standard residual).
pub fn se_res2block(h: &Tensor, p: &SeRes2BlockParams, skip: Option<&Tensor>, mode: Mode) -> Result<Tensor> {
    if let Some(k) = skip {
        if k.shape() != h.shape() {
            return Err(Error::shape("se_res2block", format!("skip {:?}", h.shape()), k.shape()));
        }
    }
    let mut store = ParamStore::new();
    let block = SeRes2Block::from_params(&mut store, "block", p.clone())?;
    let skip = skip.unwrap_or(h).clone();
    eval_on_tensor(&store, mode, h, |s, x| {
        let shape = s.graph.shape(x).to_vec();
        let k = s.graph.constant(skip.reshape(shape)?);
        block.forward(s, x, Some(k))
    })
}
