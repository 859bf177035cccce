use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{eval_on_tensor, Conv1dLayer};
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::params::{Mode, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

/// Variance floor applied before every square root in the pooling layer.
pub const POOL_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Per-channel scores from the frame concatenated with global mean and std.
    ChannelContext,
    /// Per-channel scores from the frame alone.
    ChannelNoContext,
    /// One score per frame shared by every channel.
    TemporalOnly,
}

impl AttentionMode {
    pub fn uses_context(self) -> bool {
        matches!(self, AttentionMode::ChannelContext)
    }

    /// Rows of the scoring projection `V`.
    pub fn score_rows(self, channels: usize) -> usize {
        match self {
            AttentionMode::TemporalOnly => 1,
            _ => channels,
        }
    }

    /// Columns of the attention projection `W`.
    pub fn attention_inputs(self, channels: usize) -> usize {
        if self.uses_context() {
            3 * channels
        } else {
            channels
        }
    }
}

/// Attentive statistics pooling `[B, C, T] -> [B, 2C]` (weighted mean, then weighted std).
///
/// `e[t, c] = v_c · relu(W ĥ_t + b) + k_c`, `α = softmax over t`,
/// `μ_c = Σ_t α h`, `σ_c = sqrt(max(Σ_t α h² − μ_c², ε))`, where `ĥ_t` is `h_t`
/// optionally concatenated with the unweighted mean and std of `h`.
#[derive(Clone, Debug)]
pub struct AttentivePool {
    pub mode: AttentionMode,
    pub channels: usize,
    /// `W [R, C_in, 1]`, `b [R]`
    pub attention: Conv1dLayer,
    /// `V [C or 1, R, 1]`, `k [C or 1]`
    pub score: Conv1dLayer,
}

/// Explicit pooling parameters for [`attentive_stats_pool`].
#[derive(Clone, Debug)]
pub struct AttentiveStatsParams {
    pub mode: AttentionMode,
    /// `[R, C_in]`
    pub w: Tensor,
    /// `[R]`
    pub b: Tensor,
    /// `[C, R]` (`[1, R]` for temporal-only attention); row `c` is `v_c`.
    pub v: Tensor,
    /// `[C]` (`[1]` for temporal-only attention).
    pub k: Tensor,
}

impl AttentiveStatsParams {
    /// Zero scoring parameters: attention is uniform over frames.
    pub fn uniform(mode: AttentionMode, channels: usize, bottleneck: usize) -> Self {
        let rows = mode.score_rows(channels);
        Self {
            mode,
            w: Tensor::zeros(vec![bottleneck, mode.attention_inputs(channels)]),
            b: Tensor::zeros(vec![bottleneck]),
            v: Tensor::zeros(vec![rows, bottleneck]),
            k: Tensor::zeros(vec![rows]),
        }
    }
}

impl AttentivePool {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        bottleneck: usize,
        mode: AttentionMode,
    ) -> Self {
        let cin = mode.attention_inputs(channels);
        Self {
            mode,
            channels,
            attention: Conv1dLayer::new(store, rng, &format!("{name}.attention"), cin, bottleneck, 1, 1),
            score: Conv1dLayer::new(store, rng, &format!("{name}.score"), bottleneck, mode.score_rows(channels), 1, 1),
        }
    }

    pub fn from_params(store: &mut ParamStore, name: &str, channels: usize, p: AttentiveStatsParams) -> Result<Self> {
        let rows = p.mode.score_rows(channels);
        let cin = p.mode.attention_inputs(channels);
        let [r, wc] = *p.w.shape() else {
            return Err(Error::shape("attentive_stats_pool", "W [R, C_in]", p.w.shape()));
        };
        if wc != cin || p.b.shape() != [r] || p.v.shape() != [rows, r] || p.k.shape() != [rows] {
            return Err(Error::shape(
                "attentive_stats_pool",
                format!("W [R, {cin}], b [R], V [{rows}, R], k [{rows}]"),
                p.v.shape(),
            ));
        }
        let w = p.w.reshape(vec![r, cin, 1])?;
        let v = p.v.reshape(vec![rows, r, 1])?;
        Ok(Self {
            mode: p.mode,
            channels,
            attention: Conv1dLayer::from_tensors(store, &format!("{name}.attention"), w, p.b, 1),
            score: Conv1dLayer::from_tensors(store, &format!("{name}.score"), v, p.k, 1),
        })
    }

    /// Unweighted per-channel mean and std over time, each `[B, C]`.
    fn global_stats(s: &mut Session<'_>, h: Var) -> Result<(Var, Var)> {
        let mean = s.graph.mean_time(h)?;
        let sq = s.graph.mul(h, h)?;
        let m2 = s.graph.mean_time(sq)?;
        let mean_sq = s.graph.mul(mean, mean)?;
        let var = s.graph.sub(m2, mean_sq)?;
        Ok((mean, s.graph.sqrt_clamp(var, POOL_EPS)))
    }

    /// Attention weights `α`, `[B, C, T]`, each channel row summing to one.
    pub fn weights(&self, s: &mut Session<'_>, h: Var) -> Result<Var> {
        let [_, c, t] = *s.graph.shape(h) else {
            return Err(Error::shape("attentive_stats_pool", "[B, C, T]", s.graph.shape(h)));
        };
        if c != self.channels {
            return Err(Error::shape("attentive_stats_pool", format!("{} channels", self.channels), s.graph.shape(h)));
        }
        let input = if self.mode.uses_context() {
            let (mean, std) = Self::global_stats(s, h)?;
            let mean_t = s.graph.broadcast_time(mean, t)?;
            let std_t = s.graph.broadcast_time(std, t)?;
            s.graph.concat(&[h, mean_t, std_t])?
        } else {
            h
        };
        let a = self.attention.forward(s, input)?;
        let a = s.graph.relu(a);
        let e = self.score.forward(s, a)?;
        let alpha = s.graph.softmax_time(e)?;
        match self.mode {
            AttentionMode::TemporalOnly => s.graph.repeat_channels(alpha, c),
            _ => Ok(alpha),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, h: Var) -> Result<Var> {
        let alpha = self.weights(s, h)?;
        let ah = s.graph.mul(alpha, h)?;
        let mean = s.graph.sum_time(ah)?;
        let ahh = s.graph.mul(ah, h)?;
        let m2 = s.graph.sum_time(ahh)?;
        let mean_sq = s.graph.mul(mean, mean)?;
        let var = s.graph.sub(m2, mean_sq)?;
        let std = s.graph.sqrt_clamp(var, POOL_EPS);
        s.graph.concat(&[mean, std])
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.attention.params(), self.score.params()].concat()
    }
}

fn pool_layer(h: &Tensor, p: &AttentiveStatsParams) -> Result<(ParamStore, AttentivePool)> {
    let [c, _] = *h.shape() else {
        return Err(Error::shape("attentive_stats_pool", "[C, T]", h.shape()));
    };
    let mut store = ParamStore::new();
    let layer = AttentivePool::from_params(&mut store, "pool", c, p.clone())?;
    Ok((store, layer))
}

/// Pools `h: [C, T]` into `concat(μ̃, σ̃)`, shape `[2C]`.
pub fn attentive_stats_pool(h: &Tensor, p: &AttentiveStatsParams) -> Result<Tensor> {
    let (store, layer) = pool_layer(h, p)?;
    eval_on_tensor(&store, Mode::Eval, h, |s, x| layer.forward(s, x))
}

/// Attention weights `α` for `h: [C, T]`, shape `[C, T]`.
pub fn attention_weights(h: &Tensor, p: &AttentiveStatsParams) -> Result<Tensor> {
    let (store, layer) = pool_layer(h, p)?;
    eval_on_tensor(&store, Mode::Eval, h, |s, x| layer.weights(s, x))
}
