//! Per-layer finite-difference check of the full model's gradients.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::params::{Mode, ParamId, Session};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::AamConfig;

/// Pass threshold on the relative error.
pub const GRAD_TOL: f64 = 1e-4;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of [`relative_error`]. Gradients that are zero
/// analytically (biases feeding a train-mode batch norm) show central-difference
/// round-off near 1e-10, which this floor turns into an absolute comparison.
pub const ABS_FLOOR: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖, ‖n‖, ABS_FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(ABS_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub batch: usize,
    pub frames: usize,
    pub speakers: usize,
    /// Entries checked per tensor (all of them when the tensor is smaller).
    pub samples_per_tensor: usize,
    /// Multiplies analytic gradients by `1 + corrupt`; a negative control.
    pub corrupt: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            batch: 4,
            frames: 12,
            speakers: 3,
            samples_per_tensor: 12,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: String,
    pub tensors: usize,
    pub entries_checked: usize,
    /// Entries whose `±h` perturbation crossed a ReLU or variance-floor kink.
    pub entries_skipped: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub layers: Vec<LayerCheck>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }
}

struct Eval {
    value: f64,
    kinks: u64,
    grads: HashMap<ParamId, Tensor>,
}

fn loss(model: &Model, x: &Tensor, labels: &[usize], aam: &AamConfig, grads: bool) -> Result<Eval> {
    let mut s = Session::new(&model.store, Mode::Train, grads);
    let xv = s.graph.constant(x.clone());
    let out = model.forward_graph(&mut s, xv)?;
    let l = s.graph.aam_loss(out.cosines, labels, aam.margin, aam.scale)?;
    let value = s.graph.value(l).data()[0];
    let kinks = s.graph.kink_signature();
    let grads = if grads {
        let g = s.graph.backward(l)?;
        s.param_grads(&g).into_iter().collect()
    } else {
        HashMap::new()
    };
    Ok(Eval { value, kinks, grads })
}

/// Builds `config` with `speakers` classes, runs one train-mode AAM loss on a
/// random batch and compares every layer's gradient with central differences.
pub fn gradcheck(config: &ModelConfig, seed: u64, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut model = Model::build(config.clone(), opts.speakers, seed)?;
    let mut r = rng::stream(seed, "gradcheck");
    let shape = vec![opts.batch, config.input_dim, opts.frames];
    let n: usize = shape.iter().product();
    let x = Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(&mut r)).collect())?;
    let labels: Vec<usize> = (0..opts.batch).map(|i| i % opts.speakers).collect();
    let aam = AamConfig::default();
    let base = loss(&model, &x, &labels, &aam, true)?;
    let factor = 1.0 + opts.corrupt.unwrap_or(0.0);

    let mut layers = Vec::new();
    for (layer, ids) in model.components() {
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        let mut skipped = 0;
        let mut tensors = 0;
        for id in ids {
            let Some(grad) = base.grads.get(&id) else { continue };
            tensors += 1;
            let len = grad.len();
            // Candidates in random order; kinked entries are replaced by the next one.
            let order = sample(&mut r, len, len.min(4 * opts.samples_per_tensor)).into_vec();
            let mut a = Vec::with_capacity(opts.samples_per_tensor);
            let mut num = Vec::with_capacity(opts.samples_per_tensor);
            for k in order {
                if a.len() == opts.samples_per_tensor {
                    break;
                }
                let orig = model.store.get(id).data()[k];
                model.store.get_mut(id).data_mut()[k] = orig + FD_STEP;
                let lp = loss(&model, &x, &labels, &aam, false)?;
                model.store.get_mut(id).data_mut()[k] = orig - FD_STEP;
                let lm = loss(&model, &x, &labels, &aam, false)?;
                model.store.get_mut(id).data_mut()[k] = orig;
                if lp.kinks != base.kinks || lm.kinks != base.kinks {
                    skipped += 1;
                    continue;
                }
                num.push((lp.value - lm.value) / (2.0 * FD_STEP));
                a.push(grad.data()[k] * factor);
            }
            checked += a.len();
            worst = worst.max(relative_error(&a, &num));
        }
        layers.push(LayerCheck {
            layer,
            tensors,
            entries_checked: checked,
            entries_skipped: skipped,
            max_rel_error: worst,
            passed: worst < GRAD_TOL,
        });
    }
    let passed = layers.iter().all(|l| l.passed);
    Ok(GradcheckReport { layers, passed })
}
