use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{eval_on_tensor, Conv1dLayer};
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::params::{Mode, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

/// Multi-scale convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Res2Config {
    pub scale: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub channels: usize,
}

impl Res2Config {
    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 || self.channels % self.scale != 0 {
            return Err(Error::Config(format!(
                "res2: {} channels must split evenly into scale {} >= 2 groups",
                self.channels, self.scale
            )));
        }
        if self.kernel % 2 == 0 || self.dilation == 0 {
            return Err(Error::Config(format!(
                "res2: kernel {} must be odd and dilation {} positive",
                self.kernel, self.dilation
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.channels / self.scale
    }
}

/// Hierarchical group convolution: `y1 = x1`, `y2 = K2(x2)`, `yi = Ki(xi + y(i-1))`.
///
/// Group 1 carries no convolution, so there are `scale - 1` kernels.
#[derive(Clone, Debug)]
pub struct Res2Conv {
    pub cfg: Res2Config,
    pub convs: Vec<Conv1dLayer>,
}

impl Res2Conv {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: Res2Config) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.width();
        let convs = (1..cfg.scale)
            .map(|i| Conv1dLayer::new(store, rng, &format!("{name}.{i}"), w, w, cfg.kernel, cfg.dilation))
            .collect();
        Ok(Self { cfg, convs })
    }

    /// Uses the given `(weight [W, W, K], bias [W])` pairs for groups `2..=scale`.
    pub fn from_kernels(store: &mut ParamStore, name: &str, cfg: Res2Config, kernels: &[(Tensor, Tensor)]) -> Result<Self> {
        cfg.validate()?;
        if kernels.len() != cfg.scale - 1 {
            return Err(Error::InvalidArgument(format!(
                "res2 with scale {} needs {} kernels, got {}",
                cfg.scale,
                cfg.scale - 1,
                kernels.len()
            )));
        }
        let w = cfg.width();
        let mut convs = Vec::with_capacity(kernels.len());
        for (i, (kw, kb)) in kernels.iter().enumerate() {
            if kw.shape() != [w, w, cfg.kernel] || kb.shape() != [w] {
                return Err(Error::shape("res2_conv", format!("kernel [{w}, {w}, {}]", cfg.kernel), kw.shape()));
            }
            convs.push(Conv1dLayer::from_tensors(
                store,
                &format!("{name}.{}", i + 1),
                kw.clone(),
                kb.clone(),
                cfg.dilation,
            ));
        }
        Ok(Self { cfg, convs })
    }

    pub fn forward(&self, s: &mut Session<'_>, h: Var) -> Result<Var> {
        let channels = s.graph.shape(h)[1];
        if channels != self.cfg.channels {
            return Err(Error::shape("res2_conv", format!("{} channels", self.cfg.channels), s.graph.shape(h)));
        }
        let w = self.cfg.width();
        let mut outs = Vec::with_capacity(self.cfg.scale);
        outs.push(s.graph.slice(h, 0, w)?);
        for (i, conv) in self.convs.iter().enumerate() {
            let group = i + 1;
            let x = s.graph.slice(h, group * w, w)?;
            let input = if group == 1 { x } else { s.graph.add(x, outs[group - 1])? };
            outs.push(conv.forward(s, input)?);
        }
        s.graph.concat(&outs)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.convs.iter().flat_map(Conv1dLayer::params).collect()
    }
}

/// Applies the multi-scale convolution to `h: [C, T]`.
pub fn res2_conv(h: &Tensor, cfg: &Res2Config, kernels: &[(Tensor, Tensor)]) -> Result<Tensor> {
    let mut store = ParamStore::new();
    let layer = Res2Conv::from_kernels(&mut store, "res2", *cfg, kernels)?;
    eval_on_tensor(&store, Mode::Eval, h, |s, x| layer.forward(s, x))
}
