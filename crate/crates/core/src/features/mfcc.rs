use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub sample_rate: u32,
    /// Window length in samples (25 ms).
    pub window: usize,
    /// Frame shift in samples (10 ms).
    pub shift: usize,
    pub fft_size: usize,
    pub num_filters: usize,
    pub num_coeffs: usize,
    pub preemphasis: f64,
    pub low_hz: f64,
    pub high_hz: f64,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            window: 400,
            shift: 160,
            fft_size: 512,
            num_filters: 80,
            num_coeffs: 80,
            preemphasis: 0.97,
            low_hz: 0.0,
            high_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

pub(crate) fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

#[cfg(test)]
fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Reusable extractor: FFT plan, window, filterbank and DCT matrix.
pub struct Mfcc {
    cfg: MfccConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// `[num_filters][fft_size / 2 + 1]`
    filters: Vec<Vec<f64>>,
    /// `[num_coeffs][num_filters]`, orthonormal DCT-II rows.
    dct: Vec<Vec<f64>>,
}

impl Mfcc {
    pub fn new(cfg: MfccConfig) -> Result<Self> {
        if cfg.window == 0 || cfg.shift == 0 || cfg.fft_size < cfg.window {
            return Err(Error::Config("mfcc: need 0 < window <= fft_size and shift > 0".into()));
        }
        if cfg.num_coeffs > cfg.num_filters || cfg.num_filters == 0 {
            return Err(Error::Config("mfcc: need 0 < num_coeffs <= num_filters".into()));
        }
        let nyquist = cfg.sample_rate as f64 / 2.0;
        if !(0.0 <= cfg.low_hz && cfg.low_hz < cfg.high_hz && cfg.high_hz <= nyquist) {
            return Err(Error::Config("mfcc: filterbank band must lie within [0, nyquist]".into()));
        }
        let n = cfg.window;
        let window = (0..n)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            filters: mel_filterbank(&cfg),
            dct: dct_matrix(cfg.num_coeffs, cfg.num_filters),
            cfg,
            fft,
            window,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &[Vec<f64>] {
        &self.filters
    }

    /// Frames for `n` samples; partial trailing frames are dropped.
    pub fn num_frames(&self, n: usize) -> usize {
        if n < self.cfg.window {
            0
        } else {
            1 + (n - self.cfg.window) / self.cfg.shift
        }
    }

    fn check(&self, w: &Waveform) -> Result<usize> {
        if w.sample_rate != self.cfg.sample_rate {
            return Err(Error::SampleRate(w.sample_rate));
        }
        match self.num_frames(w.samples.len()) {
            0 => Err(Error::TooShort {
                samples: w.samples.len(),
                needed: self.cfg.window,
            }),
            t => Ok(t),
        }
    }

    /// Power spectrum of frame `i`, `fft_size / 2 + 1` bins.
    pub fn power_spectrum(&self, w: &Waveform, i: usize) -> Vec<f64> {
        let n = self.cfg.window;
        let frame = &w.samples[i * self.cfg.shift..i * self.cfg.shift + n];
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        let k = self.cfg.preemphasis;
        for j in 0..n {
            // Pre-emphasis inside the frame; the first sample is paired with itself.
            let prev = frame[j.saturating_sub(1)];
            buf[j].re = (frame[j] - k * prev) * self.window[j];
        }
        self.fft.process(&mut buf);
        buf[..self.cfg.fft_size / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    /// Log mel filterbank energies `[num_filters, T]`.
    pub fn log_mel(&self, w: &Waveform) -> Result<Tensor> {
        let t = self.check(w)?;
        let m = self.cfg.num_filters;
        let mut out = vec![0.0; m * t];
        for i in 0..t {
            let p = self.power_spectrum(w, i);
            for (f, filt) in self.filters.iter().enumerate() {
                let e: f64 = filt.iter().zip(&p).map(|(a, b)| a * b).sum();
                out[f * t + i] = e.max(self.cfg.log_floor).ln();
            }
        }
        Tensor::new(vec![m, t], out)
    }

    /// Cepstral coefficients `[num_coeffs, T]`.
    pub fn compute(&self, w: &Waveform) -> Result<FeatureMatrix> {
        let lm = self.log_mel(w)?;
        let (m, t) = (self.cfg.num_filters, lm.shape()[1]);
        let mut out = vec![0.0; self.cfg.num_coeffs * t];
        for (k, row) in self.dct.iter().enumerate() {
            let dst = &mut out[k * t..(k + 1) * t];
            for (f, &d) in row.iter().enumerate().take(m) {
                for (o, &x) in dst.iter_mut().zip(lm.row(f)) {
                    *o += d * x;
                }
            }
        }
        FeatureMatrix::new(Tensor::new(vec![self.cfg.num_coeffs, t], out)?)
    }
}

/// Triangular filters equally spaced on the HTK mel scale, evaluated at bin centers.
fn mel_filterbank(cfg: &MfccConfig) -> Vec<Vec<f64>> {
    let bins = cfg.fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.low_hz), hz_to_mel(cfg.high_hz));
    let step = (hi - lo) / (cfg.num_filters + 1) as f64;
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    (0..cfg.num_filters)
        .map(|f| {
            let (l, c, r) = (lo + f as f64 * step, lo + (f + 1) as f64 * step, lo + (f + 2) as f64 * step);
            (0..bins)
                .map(|b| {
                    let mel = hz_to_mel(b as f64 * bin_hz);
                    if mel <= l || mel >= r {
                        0.0
                    } else if mel <= c {
                        (mel - l) / (c - l)
                    } else {
                        (r - mel) / (r - c)
                    }
                })
                .collect()
        })
        .collect()
}

fn dct_matrix(coeffs: usize, n: usize) -> Vec<Vec<f64>> {
    (0..coeffs)
        .map(|k| {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n)
                .map(|i| s * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                .collect()
        })
        .collect()
}
