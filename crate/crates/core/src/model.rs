//! Full extractor topology, ablation variants and parameter accounting.
//!
//! ```text
//! features [80, T]
//!   → conv(k=5, d=1) → relu → BN                    stage 0
//!   → SE-Res2Block(k=3, d=2) … (k=3, d=4)           stages 1..=3
//!   → concat(stage 1..=3) → conv(k=1) → relu        [M, T]
//!   → attentive statistics pooling → BN             [2M]
//!   → dense → BN                                    embedding [E]
//!   → AAM head (training only)                      [S]
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::nn::{AttentionMode, AttentivePool, BatchNormLayer, Conv1dLayer, LinearLayer, SeRes2Block};
use crate::params::{Mode, ParamId, ParamKind, ParamStore, Session};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel: usize,
    pub dilation: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// Skip term is the sum of every earlier stage output, the stem included.
    Summed,
    /// Skip term is the block input.
    Standard,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub attention: AttentionMode,
    pub se_enabled: bool,
    pub res2_enabled: bool,
    pub mfa_enabled: bool,
    pub residuals: ResidualMode,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            attention: AttentionMode::ChannelContext,
            se_enabled: true,
            res2_enabled: true,
            mfa_enabled: true,
            residuals: ResidualMode::Summed,
        }
    }
}

/// The seven single-component ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationVariant {
    #[serde(rename = "A.1", alias = "A1")]
    A1,
    #[serde(rename = "A.2", alias = "A2")]
    A2,
    #[serde(rename = "B.1", alias = "B1")]
    B1,
    #[serde(rename = "B.2", alias = "B2")]
    B2,
    #[serde(rename = "C.1", alias = "C1")]
    C1,
    #[serde(rename = "C.2", alias = "C2")]
    C2,
    #[serde(rename = "C.3", alias = "C3")]
    C3,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 7] = [Self::A1, Self::A2, Self::B1, Self::B2, Self::C1, Self::C2, Self::C3];

    pub fn description(self) -> &'static str {
        match self {
            Self::A1 => "Attentive Statistics",
            Self::A2 => "Channel Att. w/o Context",
            Self::B1 => "No SE-Block",
            Self::B2 => "No Res2Net-Block",
            Self::C1 => "No MFA",
            Self::C2 => "No Res. Connections",
            Self::C3 => "No Sum Res. Connections",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::A1 => "A.1",
            Self::A2 => "A.2",
            Self::B1 => "B.1",
            Self::B2 => "B.2",
            Self::C1 => "C.1",
            Self::C2 => "C.2",
            Self::C3 => "C.3",
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| *c != '.').collect::<String>().to_ascii_uppercase();
        Self::ALL
            .into_iter()
            .find(|v| format!("{v:?}") == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Trunk channels `C`.
    pub channels: usize,
    pub input_dim: usize,
    pub res2_scale: usize,
    /// Bottleneck width of the SE blocks and the attention projection.
    pub bottleneck: usize,
    /// Output channels of the aggregation convolution.
    pub mfa_channels: usize,
    pub embed_dim: usize,
    pub stem: LayerSpec,
    pub blocks: Vec<LayerSpec>,
    pub ablation: AblationFlags,
}

impl ModelConfig {
    /// Published topology at trunk width 512 or 1024.
    pub fn paper(channels: usize) -> Self {
        Self {
            channels,
            input_dim: 80,
            res2_scale: 8,
            bottleneck: 128,
            mfa_channels: 1536,
            embed_dim: 192,
            stem: LayerSpec { kernel: 5, dilation: 1 },
            blocks: vec![
                LayerSpec { kernel: 3, dilation: 2 },
                LayerSpec { kernel: 3, dilation: 3 },
                LayerSpec { kernel: 3, dilation: 4 },
            ],
            ablation: AblationFlags::default(),
        }
    }

    /// Laptop-scale width used for synthetic-corpus runs.
    pub fn desk() -> Self {
        Self {
            channels: 64,
            bottleneck: 32,
            mfa_channels: 192,
            ..Self::paper(64)
        }
    }

    /// Smallest sensible instance, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            channels: 16,
            bottleneck: 8,
            mfa_channels: 48,
            embed_dim: 16,
            ..Self::paper(16)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if [self.channels, self.input_dim, self.bottleneck, self.mfa_channels, self.embed_dim].contains(&0) {
            return bad("all widths must be positive".into());
        }
        if self.res2_scale < 2 || self.channels % self.res2_scale != 0 {
            return bad(format!(
                "channels {} must be divisible by res2 scale {} (>= 2)",
                self.channels, self.res2_scale
            ));
        }
        if self.ablation.se_enabled && self.bottleneck >= self.channels {
            return bad(format!(
                "SE bottleneck {} must be narrower than channels {}",
                self.bottleneck, self.channels
            ));
        }
        if self.blocks.is_empty() {
            return bad("at least one SE-Res2Block is required".into());
        }
        let ladder = std::iter::once(&self.stem).chain(&self.blocks);
        let mut last = 0;
        for l in ladder {
            if l.kernel % 2 == 0 {
                return bad(format!("kernel size {} is even", l.kernel));
            }
            if l.dilation <= last {
                return bad("dilations must be strictly increasing along the ladder".into());
            }
            last = l.dilation;
        }
        Ok(())
    }

    /// Returns a copy with exactly one ablation applied.
    pub fn apply_ablation(&self, variant: AblationVariant) -> Self {
        let mut cfg = self.clone();
        let a = &mut cfg.ablation;
        match variant {
            AblationVariant::A1 => a.attention = AttentionMode::TemporalOnly,
            AblationVariant::A2 => a.attention = AttentionMode::ChannelNoContext,
            AblationVariant::B1 => a.se_enabled = false,
            AblationVariant::B2 => a.res2_enabled = false,
            AblationVariant::C1 => a.mfa_enabled = false,
            AblationVariant::C2 => a.residuals = ResidualMode::None,
            AblationVariant::C3 => a.residuals = ResidualMode::Standard,
        }
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamScope {
    /// Everything except the classification head.
    Extractor,
    Full,
}

/// Embedding-extractor network with its AAM classification head.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub num_speakers: usize,
    pub seed: u64,
    pub store: ParamStore,
    pub stem: Conv1dLayer,
    pub stem_bn: BatchNormLayer,
    pub blocks: Vec<SeRes2Block>,
    pub mfa: Conv1dLayer,
    pub pool: AttentivePool,
    pub pool_bn: BatchNormLayer,
    pub fc: LinearLayer,
    pub fc_bn: BatchNormLayer,
    /// Class weights `[S, E]`, no bias.
    pub head: ParamId,
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub embedding: Var,
    /// Cosines between normalized embeddings and class weights, `[B, S]`.
    pub cosines: Var,
}

/// Name prefix of the classification head parameters.
pub const HEAD_PREFIX: &str = "head.";

impl Model {
    /// Builds a model with deterministic initialization from `seed`.
    pub fn build(config: ModelConfig, num_speakers: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_speakers == 0 {
            return Err(Error::Config("num_speakers must be positive".into()));
        }
        let mut r = rng::stream(seed, "init");
        let mut store = ParamStore::new();
        let c = config.channels;
        let stem = Conv1dLayer::new(
            &mut store,
            &mut r,
            "stem.conv",
            config.input_dim,
            c,
            config.stem.kernel,
            config.stem.dilation,
        );
        let stem_bn = BatchNormLayer::new(&mut store, "stem.bn", c);
        let a = config.ablation;
        let blocks = config
            .blocks
            .iter()
            .enumerate()
            .map(|(i, l)| {
                SeRes2Block::new(
                    &mut store,
                    &mut r,
                    &format!("block{}", i + 1),
                    c,
                    l.kernel,
                    l.dilation,
                    a.res2_enabled.then_some(config.res2_scale),
                    a.se_enabled.then_some(config.bottleneck),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mfa_in = if a.mfa_enabled { c * config.blocks.len() } else { c };
        let mfa = Conv1dLayer::new(&mut store, &mut r, "mfa", mfa_in, config.mfa_channels, 1, 1);
        let pool = AttentivePool::new(&mut store, &mut r, "pool", config.mfa_channels, config.bottleneck, a.attention);
        let pool_bn = BatchNormLayer::new(&mut store, "pool_bn", 2 * config.mfa_channels);
        let fc = LinearLayer::new(&mut store, &mut r, "fc", 2 * config.mfa_channels, config.embed_dim, true);
        let fc_bn = BatchNormLayer::new(&mut store, "fc_bn", config.embed_dim);
        let head_w = crate::nn::init_uniform(&mut r, vec![num_speakers, config.embed_dim], config.embed_dim);
        let head = store.add(format!("{HEAD_PREFIX}weight"), ParamKind::Weight, head_w);
        Ok(Self {
            config,
            num_speakers,
            seed,
            store,
            stem,
            stem_bn,
            blocks,
            mfa,
            pool,
            pool_bn,
            fc,
            fc_bn,
            head,
        })
    }

    /// Records the extractor on `s` for features `[B, input_dim, T]`, returning embeddings `[B, E]`.
    pub fn embed_graph(&self, s: &mut Session<'_>, features: Var) -> Result<Var> {
        let shape = s.graph.shape(features);
        if shape.len() != 3 || shape[1] != self.config.input_dim {
            return Err(Error::shape(
                "model",
                format!("[B, {}, T]", self.config.input_dim),
                shape,
            ));
        }
        let x = self.stem.forward(s, features)?;
        let x = s.graph.relu(x);
        let stem = self.stem_bn.forward(s, x)?;

        let mut outputs = vec![stem];
        let mut input = stem;
        for block in &self.blocks {
            let skip = match self.config.ablation.residuals {
                ResidualMode::Summed => Some(s.graph.add_all(&outputs)?),
                ResidualMode::Standard => Some(input),
                ResidualMode::None => None,
            };
            input = block.forward(s, input, skip)?;
            outputs.push(input);
        }
        let aggregated = if self.config.ablation.mfa_enabled {
            s.graph.concat(&outputs[1..])?
        } else {
            input
        };
        let x = self.mfa.forward(s, aggregated)?;
        let x = s.graph.relu(x);
        let pooled = self.pool.forward(s, x)?;
        let pooled = self.pool_bn.forward(s, pooled)?;
        let e = self.fc.forward(s, pooled)?;
        self.fc_bn.forward(s, e)
    }

    /// Embeddings plus head cosines.
    pub fn forward_graph(&self, s: &mut Session<'_>, features: Var) -> Result<ForwardVars> {
        let embedding = self.embed_graph(s, features)?;
        let unit = s.graph.l2_normalize_rows(embedding)?;
        let w = s.param(self.head);
        let w = s.graph.l2_normalize_rows(w)?;
        let cosines = s.graph.linear(unit, w, None)?;
        Ok(ForwardVars { embedding, cosines })
    }

    /// Eval-mode embedding of one utterance `[input_dim, T]`.
    pub fn embed(&self, features: &Tensor) -> Result<Tensor> {
        let out = self.forward(features, Mode::Eval)?;
        Ok(out.embedding)
    }

    /// One utterance `[input_dim, T]` or a batch `[B, input_dim, T]`.
    ///
    /// Returns the embedding(s) and, in train mode, the scaled head logits
    /// `scale · cos θ_j` without margin.
    pub fn forward(&self, features: &Tensor, mode: Mode) -> Result<ModelOutput> {
        let single = features.rank() == 2;
        let batched = match *features.shape() {
            [d, t] => features.clone().reshape(vec![1, d, t])?,
            [_, _, _] => features.clone(),
            _ => return Err(Error::shape("model", "[80, T] or [B, 80, T]", features.shape())),
        };
        let mut s = Session::new(&self.store, mode, false);
        let x = s.graph.constant(batched);
        let unbatch = |t: &Tensor| -> Result<Tensor> {
            if single {
                t.clone().reshape(t.shape()[1..].to_vec())
            } else {
                Ok(t.clone())
            }
        };
        match mode {
            Mode::Eval => {
                let e = self.embed_graph(&mut s, x)?;
                Ok(ModelOutput {
                    embedding: unbatch(s.graph.value(e))?,
                    logits: None,
                })
            }
            Mode::Train => {
                let v = self.forward_graph(&mut s, x)?;
                let scale = crate::train::AamConfig::default().scale;
                Ok(ModelOutput {
                    embedding: unbatch(s.graph.value(v.embedding))?,
                    logits: Some(unbatch(&s.graph.value(v.cosines).scale(scale))?),
                })
            }
        }
    }

    /// Number of trainable scalars (weights, biases, gammas, betas).
    pub fn param_count(&self, scope: ParamScope) -> usize {
        self.store
            .iter()
            .filter(|(_, p)| p.kind.trainable())
            .filter(|(_, p)| scope == ParamScope::Full || !p.name.starts_with(HEAD_PREFIX))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    /// Trainable parameter count per layer (name minus its last component), in build order.
    pub fn param_table(&self, scope: ParamScope) -> Vec<(String, usize)> {
        let mut rows: Vec<(String, usize)> = Vec::new();
        for (_, p) in self.store.iter() {
            if !p.kind.trainable() || (scope == ParamScope::Extractor && p.name.starts_with(HEAD_PREFIX)) {
                continue;
            }
            let layer = p.name.rsplit_once('.').map_or(p.name.as_str(), |(l, _)| l).to_string();
            match rows.last_mut() {
                Some((name, n)) if *name == layer => *n += p.value.len(),
                _ => rows.push((layer, p.value.len())),
            }
        }
        rows
    }

    /// Parameter ids grouped by top-level component, for per-layer reports.
    pub fn components(&self) -> Vec<(String, Vec<ParamId>)> {
        let mut out = vec![(
            "stem".to_string(),
            [self.stem.params(), self.stem_bn.params()].concat(),
        )];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{}", i + 1), b.params()));
        }
        out.push(("mfa".into(), self.mfa.params()));
        out.push(("pool".into(), [self.pool.params(), self.pool_bn.params()].concat()));
        out.push(("fc".into(), [self.fc.params(), self.fc_bn.params()].concat()));
        out.push(("head".into(), vec![self.head]));
        out
    }
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub embedding: Tensor,
    pub logits: Option<Tensor>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_parse_in_both_spellings() {
        assert_eq!("B.2".parse::<AblationVariant>().unwrap(), AblationVariant::B2);
        assert_eq!("c3".parse::<AblationVariant>().unwrap(), AblationVariant::C3);
        assert!("D1".parse::<AblationVariant>().is_err());
    }

    #[test]
    fn each_ablation_changes_one_field_and_is_idempotent() {
        let base = ModelConfig::paper(512);
        for v in AblationVariant::ALL {
            let once = base.apply_ablation(v);
            assert_eq!(once.apply_ablation(v), once);
            let (a, b) = (base.ablation, once.ablation);
            let changed = [
                a.attention != b.attention,
                a.se_enabled != b.se_enabled,
                a.res2_enabled != b.res2_enabled,
                a.mfa_enabled != b.mfa_enabled,
                a.residuals != b.residuals,
            ];
            assert_eq!(changed.iter().filter(|c| **c).count(), 1, "{v}");
        }
        let b2 = base.apply_ablation(AblationVariant::B2);
        assert!(!b2.ablation.res2_enabled);
        assert_eq!(base.apply_ablation(AblationVariant::C3).ablation.residuals, ResidualMode::Standard);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ModelConfig::paper(512);
        c.channels = 500;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::paper(512);
        c.blocks[1].dilation = 2;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::paper(512);
        c.stem.kernel = 4;
        assert!(c.validate().is_err());
        assert!(Model::build(ModelConfig::tiny(), 0, 1).is_err());
    }

    #[test]
    fn paper_widths_land_on_published_counts() {
        let small = Model::build(ModelConfig::paper(512), 10, 0).unwrap();
        let n = small.param_count(ParamScope::Extractor) as f64;
        assert!((n / 6.2e6 - 1.0).abs() < 0.03, "{n}");
        assert_eq!(
            small.param_count(ParamScope::Full) - small.param_count(ParamScope::Extractor),
            192 * 10
        );
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::build(ModelConfig::tiny(), 3, 42).unwrap();
        let b = Model::build(ModelConfig::tiny(), 3, 42).unwrap();
        let c = Model::build(ModelConfig::tiny(), 3, 43).unwrap();
        assert_eq!(a.store, b.store);
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn table_rows_sum_to_total() {
        let m = Model::build(ModelConfig::desk(), 4, 0).unwrap();
        for scope in [ParamScope::Extractor, ParamScope::Full] {
            let total: usize = m.param_table(scope).iter().map(|(_, n)| n).sum();
            assert_eq!(total, m.param_count(scope));
        }
    }
}
