//! Mini-batch training loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, cyclical_lr, AamConfig, AdamConfig, LrSchedule, OptimState};
use crate::error::{Error, Result};
use crate::features::{cms, random_crop, spec_augment, FeatureMatrix, SpecAugmentConfig};
use crate::model::{Model, HEAD_PREFIX};
use crate::params::{Mode, Session};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub aam: AamConfig,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    /// `None` disables masking.
    pub spec_augment: Option<SpecAugmentConfig>,
    /// Call the checkpoint hook every this many iterations (0 = never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            batch_size: 16,
            crop_frames: 200,
            aam: AamConfig::default(),
            adam: AdamConfig::default(),
            schedule: LrSchedule {
                cycle_len: 300,
                ..LrSchedule::default()
            },
            spec_augment: Some(SpecAugmentConfig::default()),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Desk budget: 300 iterations of batch 16, one full learning-rate triangle.
    pub fn desk() -> Self {
        Self::default()
    }

    /// Published recipe: batch 128, four 130k-iteration cycles.
    pub fn paper() -> Self {
        Self {
            iterations: 4 * 130_000,
            batch_size: 128,
            schedule: LrSchedule::default(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.crop_frames == 0 {
            return Err(Error::Config("batch_size and crop_frames must be positive".into()));
        }
        if !(self.schedule.lr_min >= 0.0 && self.schedule.lr_min <= self.schedule.lr_max) {
            return Err(Error::Config("need 0 <= lr_min <= lr_max".into()));
        }
        self.aam.validate()
    }
}

/// Utterance-level features with speaker labels in `0..num_speakers`.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub features: Vec<FeatureMatrix>,
    pub labels: Vec<usize>,
    pub num_speakers: usize,
}

impl TrainingSet {
    pub fn new(features: Vec<FeatureMatrix>, labels: Vec<usize>, num_speakers: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidArgument("training corpus is empty".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::InvalidArgument("one label per utterance required".into()));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_speakers) {
            return Err(Error::InvalidArgument(format!("label {l} out of range for {num_speakers} speakers")));
        }
        Ok(Self {
            features,
            labels,
            num_speakers,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Utterance indices per iteration: shuffled epochs, or sampling with
/// replacement when the batch is larger than the corpus.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: rng::stream(seed, "shuffle"),
            order: (0..n).collect(),
            cursor: n,
        }
    }

    fn next(&mut self, batch: usize) -> Vec<usize> {
        let n = self.order.len();
        if batch > n {
            return (0..batch).map(|_| self.rng.random_range(0..n)).collect();
        }
        if self.cursor + batch > n {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + batch].to_vec();
        self.cursor += batch;
        out
    }
}

/// One training batch `[B, D, crop]` with labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

/// Crop → mean subtraction → masking, each sample on its own derived generator.
pub fn make_batch(data: &TrainingSet, indices: &[usize], cfg: &TrainConfig, seed: u64, iteration: usize) -> Result<Batch> {
    let dims = data.features[indices[0]].dims();
    let samples: Vec<Vec<f64>> = indices
        .par_iter()
        .enumerate()
        .map(|(j, &u)| {
            let key = (iteration * cfg.batch_size + j) as u64;
            let mut r = ChaCha8Rng::seed_from_u64(rng::derive(seed, "crops", key));
            let f = random_crop(&data.features[u], cfg.crop_frames, &mut r)?;
            let f = cms(&f);
            let f = match &cfg.spec_augment {
                Some(sa) => spec_augment(&f, sa, &mut r),
                None => f,
            };
            if f.dims() != dims {
                return Err(Error::shape("fit", format!("[{dims}, T]"), f.values.shape()));
            }
            Ok(f.into_tensor().into_data())
        })
        .collect::<Result<_>>()?;
    let features = Tensor::new(vec![indices.len(), dims, cfg.crop_frames], samples.concat())?;
    Ok(Batch {
        features,
        labels: indices.iter().map(|&u| data.labels[u]).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    /// Batch accuracy of the margin-free cosine argmax.
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub trace: Vec<TraceRow>,
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// One forward/backward/update; returns the loss and batch accuracy.
pub fn train_step(model: &mut Model, batch: &Batch, cfg: &TrainConfig, state: &mut OptimState, lr: f64) -> Result<(f64, f64)> {
    let (loss, accuracy, grads, updates) = {
        let mut s = Session::new(&model.store, Mode::Train, true);
        let x = s.graph.constant(batch.features.clone());
        let out = model.forward_graph(&mut s, x)?;
        let loss = s.graph.aam_loss(out.cosines, &batch.labels, cfg.aam.margin, cfg.aam.scale)?;
        let g = s.graph.backward(loss)?;
        let cos = s.graph.value(out.cosines);
        let classes = cos.shape()[1];
        let hits = batch
            .labels
            .iter()
            .enumerate()
            .filter(|(i, &l)| argmax(&cos.data()[i * classes..(i + 1) * classes]) == l)
            .count();
        let grads: Vec<Tensor> = s.param_grads(&g).into_iter().map(|(_, t)| t).collect();
        (
            s.graph.value(loss).data()[0],
            hits as f64 / batch.labels.len() as f64,
            grads,
            s.take_bn_updates(),
        )
    };
    if !loss.is_finite() {
        return Err(Error::InvalidArgument(format!("training loss diverged ({loss})")));
    }
    model.store.apply_bn_updates(&updates);
    adam_step(&mut model.store, &grads, state, lr)?;
    Ok((loss, accuracy))
}

/// Trains `model` in place. `on_checkpoint(iteration, model)` runs every
/// `checkpoint_every` iterations and after the last one.
pub fn fit(
    model: &mut Model,
    data: &TrainingSet,
    cfg: &TrainConfig,
    seed: u64,
    mut on_checkpoint: impl FnMut(usize, &Model) -> Result<()>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if data.num_speakers != model.num_speakers {
        return Err(Error::Config(format!(
            "model head has {} classes, corpus has {} speakers",
            model.num_speakers, data.num_speakers
        )));
    }
    let mut state = OptimState::for_store(cfg.adam, &model.store, HEAD_PREFIX);
    let mut sampler = Sampler::new(data.len(), seed);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let lr = cyclical_lr(it as u64, &cfg.schedule);
        let batch = make_batch(data, &sampler.next(cfg.batch_size), cfg, seed, it)?;
        let (loss, accuracy) = train_step(model, &batch, cfg, &mut state, lr)?;
        trace.push(TraceRow {
            iteration: it,
            lr,
            loss,
            accuracy,
        });
        let done = it + 1;
        if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == cfg.iterations {
            on_checkpoint(done, model)?;
        }
    }
    Ok(FitOutcome { trace })
}

/// Eval-mode accuracy of the margin-free head on whole utterances (after mean subtraction).
pub fn classification_accuracy(model: &Model, data: &TrainingSet) -> Result<f64> {
    let w = model.store.get(model.head);
    let hits: Vec<bool> = data
        .features
        .par_iter()
        .zip(&data.labels)
        .map(|(f, &l)| {
            let e = model.embed(&cms(f).values)?;
            let e = crate::scoring::unit(e.data())?;
            let scores: Vec<f64> = (0..model.num_speakers)
                .map(|k| crate::scoring::cosine_score(&e, w.row(k)))
                .collect::<Result<_>>()?;
            Ok(argmax(&scores) == l)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut s = String::from("iteration,lr,loss,accuracy\n");
    for r in trace {
        writeln!(s, "{},{:e},{},{}", r.iteration, r.lr, r.loss, r.accuracy).expect("writing to a String");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn toy_set(speakers: usize, per: usize) -> TrainingSet {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for s in 0..speakers {
            for u in 0..per {
                let data = (0..80 * 30)
                    .map(|i| ((i / 30) as f64 * 0.3 * (s + 1) as f64).sin() + 0.01 * (u * i % 7) as f64)
                    .collect();
                feats.push(FeatureMatrix::new(Tensor::new(vec![80, 30], data).unwrap()).unwrap());
                labels.push(s);
            }
        }
        TrainingSet::new(feats, labels, speakers).unwrap()
    }

    fn tiny_cfg(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 4,
            crop_frames: 20,
            schedule: LrSchedule {
                lr_min: 1e-3,
                lr_max: 1e-2,
                cycle_len: 100,
                ..LrSchedule::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sampler_covers_each_epoch_and_oversamples() {
        let mut s = Sampler::new(6, 1);
        let mut seen: Vec<usize> = s.next(3).into_iter().chain(s.next(3)).collect();
        seen.sort();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        assert_eq!(s.next(10).len(), 10);
    }

    #[test]
    fn same_seed_same_trace() {
        let data = toy_set(2, 3);
        let run = || {
            let mut m = Model::build(ModelConfig::tiny(), 2, 0).unwrap();
            fit(&mut m, &data, &tiny_cfg(3), 9, |_, _| Ok(())).unwrap().trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_hook_fires_on_schedule() {
        let data = toy_set(2, 2);
        let mut m = Model::build(ModelConfig::tiny(), 2, 0).unwrap();
        let mut calls = Vec::new();
        let cfg = TrainConfig {
            checkpoint_every: 2,
            ..tiny_cfg(5)
        };
        fit(&mut m, &data, &cfg, 0, |i, _| {
            calls.push(i);
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, vec![2, 4, 5]);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(TrainingSet::new(vec![], vec![], 1).is_err());
        let data = toy_set(2, 1);
        let mut m = Model::build(ModelConfig::tiny(), 3, 0).unwrap();
        assert!(fit(&mut m, &data, &tiny_cfg(1), 0, |_, _| Ok(())).is_err());
    }
}
