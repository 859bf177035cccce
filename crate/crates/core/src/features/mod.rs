//! Waveform IO, MFCC extraction and training-time feature transforms.

mod augment;
mod mfcc;

pub use augment::{apply_masks, cms, crop_at, draw_masks, random_crop, spec_augment, Masks, SpecAugmentConfig};
pub use mfcc::{Mfcc, MfccConfig};

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    /// Samples in `[-1, 1]`.
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::SampleRate(sample_rate));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("waveform contains non-finite samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads mono 16-bit PCM.
    pub fn read_wav(path: &Path) -> Result<Self> {
        let wav_err = |source| Error::Wav {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::format(
                path,
                format!(
                    "expected mono 16-bit PCM, got {} channel(s) of {}-bit {:?}",
                    spec.channels, spec.bits_per_sample, spec.sample_format
                ),
            ));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_err)?;
        Self::new(samples, spec.sample_rate)
    }

    /// Writes mono 16-bit PCM, saturating at full scale.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let wav_err = |source| Error::Wav {
            path: path.to_path_buf(),
            source,
        };
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
        for &s in &self.samples {
            // Same 1/32768 step as `read_wav`, so read-then-write is lossless.
            let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(q).map_err(wav_err)?;
        }
        w.finalize().map_err(wav_err)
    }
}

/// Feature matrix `[D, T]` (coefficients by frames).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Tensor,
}

impl FeatureMatrix {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::shape("features", "[D, T]", values.shape()));
        }
        Ok(Self { values })
    }

    pub fn dims(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }
}
