use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Window of `length` frames starting at `offset`, wrapping around the end of `f`.
pub fn crop_at(f: &FeatureMatrix, length: usize, offset: usize) -> Result<FeatureMatrix> {
    let (d, t) = (f.dims(), f.frames());
    if length == 0 {
        return Err(Error::InvalidArgument("crop length must be positive".into()));
    }
    let mut out = Vec::with_capacity(d * length);
    for r in 0..d {
        let row = f.values.row(r);
        out.extend((0..length).map(|j| row[(offset + j) % t]));
    }
    FeatureMatrix::new(Tensor::new(vec![d, length], out)?)
}

/// Uniform crop; inputs shorter than `length` start at frame 0 and wrap.
pub fn random_crop<R: Rng + ?Sized>(f: &FeatureMatrix, length: usize, rng: &mut R) -> Result<FeatureMatrix> {
    let t = f.frames();
    let offset = if t > length { rng.random_range(0..=t - length) } else { 0 };
    crop_at(f, length, offset)
}

/// Subtracts each coefficient's mean over time.
pub fn cms(f: &FeatureMatrix) -> FeatureMatrix {
    let t = f.frames();
    let mut v = f.values.clone();
    for row in v.data_mut().chunks_mut(t) {
        let mean = row.iter().sum::<f64>() / t as f64;
        row.iter_mut().for_each(|x| *x -= mean);
    }
    FeatureMatrix { values: v }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecAugmentConfig {
    pub max_time_mask: usize,
    pub max_freq_mask: usize,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        Self {
            max_time_mask: 5,
            max_freq_mask: 10,
        }
    }
}

/// One time block and one coefficient block, each `(start, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Masks {
    pub time: (usize, usize),
    pub freq: (usize, usize),
}

pub fn draw_masks<R: Rng + ?Sized>(cfg: &SpecAugmentConfig, dims: usize, frames: usize, rng: &mut R) -> Masks {
    let mut block = |max: usize, extent: usize| {
        let w = rng.random_range(0..=max).min(extent);
        (rng.random_range(0..=extent - w), w)
    };
    let time = block(cfg.max_time_mask, frames);
    let freq = block(cfg.max_freq_mask, dims);
    Masks { time, freq }
}

/// Zeroes the masked cells; blocks running past the edge are truncated.
pub fn apply_masks(f: &FeatureMatrix, m: Masks) -> FeatureMatrix {
    let (d, t) = (f.dims(), f.frames());
    let mut v = f.values.clone();
    let data = v.data_mut();
    let (ts, tw) = m.time;
    let (fs, fw) = m.freq;
    for r in 0..d {
        let row = &mut data[r * t..(r + 1) * t];
        if r >= fs && r < fs + fw {
            row.fill(0.0);
        } else {
            row[ts.min(t)..(ts + tw).min(t)].fill(0.0);
        }
    }
    FeatureMatrix { values: v }
}

pub fn spec_augment<R: Rng + ?Sized>(f: &FeatureMatrix, cfg: &SpecAugmentConfig, rng: &mut R) -> FeatureMatrix {
    let m = draw_masks(cfg, f.dims(), f.frames(), rng);
    apply_masks(f, m)
}
