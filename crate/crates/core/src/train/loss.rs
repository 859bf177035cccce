//! Additive angular margin softmax (AAM-softmax).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Distance from ±1 at which the cosine is clamped when differentiating `cos(θ + m)`.
pub const COS_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AamConfig {
    /// Additive angular margin in radians.
    pub margin: f64,
    /// Logit prescale.
    pub scale: f64,
}

impl Default for AamConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            scale: 30.0,
        }
    }
}

impl AamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin) || self.scale <= 0.0 {
            return Err(Error::Config(format!(
                "AAM margin must lie in [0, pi/2) and scale be positive, got m={} s={}",
                self.margin, self.scale
            )));
        }
        Ok(())
    }
}

pub(crate) struct AamRow {
    pub loss: f64,
    pub probs: Vec<f64>,
    /// d cos(θ_y + m) / d cos θ_y, evaluated at the clamped cosine.
    pub target_slope: f64,
}

/// Cross-entropy of one row of cosines with the margin on the target class.
pub(crate) fn aam_row(cos: &[f64], target: usize, margin: f64, scale: f64) -> AamRow {
    let raw = cos[target];
    let (sm, cm) = margin.sin_cos();
    let c = raw.clamp(-1.0, 1.0);
    let shifted = c * cm - (1.0 - c * c).max(0.0).sqrt() * sm;
    // The clamped cosine only enters the derivative, keeping it finite at ±1.
    let cg = raw.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP);
    let target_slope = cm + cg / (1.0 - cg * cg).sqrt() * sm;

    let logits: Vec<f64> = cos
        .iter()
        .enumerate()
        .map(|(j, &v)| scale * if j == target { shifted } else { v })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + denom.ln();
    let probs = logits.iter().map(|l| (l - log_z).exp()).collect();
    let ly = logits[target];
    let loss = if ly >= max {
        // log(1 + r) keeps precision when the loss is far below machine epsilon
        let r: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != target)
            .map(|(_, l)| (l - ly).exp())
            .sum();
        r.ln_1p()
    } else {
        log_z - ly
    };
    AamRow {
        loss,
        probs,
        target_slope,
    }
}

/// Loss of a single embedding against `[S, E]` class weights.
///
/// Both the embedding and each weight row are length-normalized first.
pub fn aam_softmax_loss(
    embedding: &Tensor,
    class_weights: &Tensor,
    label: usize,
    cfg: &AamConfig,
) -> Result<f64> {
    let [s, e] = *class_weights.shape() else {
        return Err(Error::shape("aam_softmax_loss", "weights [S, E]", class_weights.shape()));
    };
    if embedding.shape() != [e] {
        return Err(Error::shape("aam_softmax_loss", format!("embedding [{e}]"), embedding.shape()));
    }
    if label >= s {
        return Err(Error::InvalidArgument(format!("label {label} out of {s} classes")));
    }
    let en = embedding.l2_norm();
    if en == 0.0 {
        return Err(Error::ZeroNorm("aam_softmax_loss embedding"));
    }
    let mut cos = Vec::with_capacity(s);
    for j in 0..s {
        let w = class_weights.row(j);
        let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if wn == 0.0 {
            return Err(Error::ZeroNorm("aam_softmax_loss class weight"));
        }
        let dot: f64 = w.iter().zip(embedding.data()).map(|(a, b)| a * b).sum();
        cos.push(dot / (wn * en));
    }
    Ok(aam_row(&cos, label, cfg.margin, cfg.scale).loss)
}
