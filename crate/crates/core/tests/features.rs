mod common;

use std::f64::consts::PI;

use common::{rng, uniform};
use ecapa_core::features::{
    apply_masks, cms, crop_at, draw_masks, random_crop, spec_augment, FeatureMatrix, Masks, Mfcc, MfccConfig,
    SpecAugmentConfig, Waveform, SAMPLE_RATE,
};
use ecapa_core::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn tone(hz: f64, secs: f64, amp: f64, noise: f64, seed: u64) -> Waveform {
    let mut r = rng(seed);
    let n = (secs * SAMPLE_RATE as f64) as usize;
    let s = (0..n)
        .map(|i| amp * (2.0 * PI * hz * i as f64 / SAMPLE_RATE as f64).sin() + noise * r.random_range(-1.0..1.0))
        .collect();
    Waveform::new(s, SAMPLE_RATE).unwrap()
}

fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// Log mel energies by direct O(N²) DFT and explicitly built triangles.
fn log_mel_oracle(w: &Waveform) -> Vec<Vec<f64>> {
    let (win, shift, nfft, nf) = (400, 160, 512, 80);
    let frames = 1 + (w.samples.len() - win) / shift;
    let bins = nfft / 2 + 1;
    let top = hz_to_mel(8000.0);
    let edge = |i: usize| top * i as f64 / (nf + 1) as f64;
    let tri = |f: usize, hz: f64| {
        let (l, c, r, m) = (edge(f), edge(f + 1), edge(f + 2), hz_to_mel(hz));
        if m > l && m <= c {
            (m - l) / (c - l)
        } else if m > c && m < r {
            (r - m) / (r - c)
        } else {
            0.0
        }
    };
    let mut out = vec![vec![0.0; frames]; nf];
    for t in 0..frames {
        let x = &w.samples[t * shift..t * shift + win];
        let framed: Vec<f64> = (0..win)
            .map(|j| {
                let emph = x[j] - 0.97 * x[j.saturating_sub(1)];
                emph * (0.54 - 0.46 * (2.0 * PI * j as f64 / (win - 1) as f64).cos())
            })
            .collect();
        let power: Vec<f64> = (0..bins)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, v) in framed.iter().enumerate() {
                    let a = -2.0 * PI * (k * j) as f64 / nfft as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect();
        for (f, row) in out.iter_mut().enumerate() {
            let e: f64 = (0..bins).map(|k| tri(f, k as f64 * 16000.0 / nfft as f64) * power[k]).sum();
            row[t] = e.max(1e-10).ln();
        }
    }
    out
}

fn dct_oracle(lm: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = lm.len();
    (0..n)
        .map(|k| {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..lm[0].len())
                .map(|t| (0..n).map(|i| s * lm[i][t] * (PI * (k * (2 * i + 1)) as f64 / (2 * n) as f64).cos()).sum())
                .collect()
        })
        .collect()
}

#[test]
fn one_kilohertz_tone_matches_the_dft_oracle() {
    let w = tone(1000.0, 0.3, 0.5, 0.0, 0);
    let mfcc = Mfcc::new(MfccConfig::default()).unwrap();
    let lm = mfcc.log_mel(&w).unwrap();
    let want = log_mel_oracle(&w);
    for (f, row) in want.iter().enumerate() {
        for (t, v) in row.iter().enumerate() {
            assert!((lm.at(&[f, t]) - v).abs() <= 1e-8, "filter {f} frame {t}: {} vs {v}", lm.at(&[f, t]));
        }
    }
    let cc = mfcc.compute(&w).unwrap();
    for (k, row) in dct_oracle(&want).iter().enumerate() {
        for (t, v) in row.iter().enumerate() {
            assert!((cc.values.at(&[k, t]) - v).abs() <= 1e-8);
        }
    }
    // The loudest filter is the one whose passband holds 1 kHz.
    let top = hz_to_mel(8000.0);
    let loudest = (0..80).max_by(|&a, &b| want[a][0].partial_cmp(&want[b][0]).unwrap()).unwrap();
    let (lo, hi) = (top * loudest as f64 / 81.0, top * (loudest + 2) as f64 / 81.0);
    assert!(lo < hz_to_mel(1000.0) && hz_to_mel(1000.0) < hi, "filter {loudest}");
}

#[test]
fn framing_arithmetic() {
    let mfcc = Mfcc::new(MfccConfig::default()).unwrap();
    let two_secs = tone(300.0, 2.0, 0.3, 0.01, 1);
    let f = mfcc.compute(&two_secs).unwrap();
    assert_eq!((f.dims(), f.frames()), (80, 198));
    assert_eq!(mfcc.num_frames(400), 1);
    assert_eq!(mfcc.num_frames(559), 1);
    assert_eq!(mfcc.num_frames(560), 2);
    let short = Waveform::new(vec![0.1; 399], SAMPLE_RATE).unwrap();
    assert_eq!(mfcc.compute(&short).unwrap_err().kind(), "too_short");
    let other_rate = Waveform::new(vec![0.1; 800], 8000).unwrap();
    assert!(mfcc.compute(&other_rate).is_err());
}

#[test]
fn constant_waveform_vanishes_after_mean_subtraction() {
    let mfcc = Mfcc::new(MfccConfig::default()).unwrap();
    for level in [0.0, 0.25, -0.6] {
        let f = mfcc.compute(&Waveform::new(vec![level; 4000], SAMPLE_RATE).unwrap()).unwrap();
        let first: Vec<f64> = (0..80).map(|k| f.values.at(&[k, 0])).collect();
        for t in 1..f.frames() {
            assert!((0..80).all(|k| f.values.at(&[k, t]) == first[k]));
        }
        assert!(cms(&f).values.max_abs() <= 1e-9);
    }
}

#[test]
fn amplitude_only_moves_the_mean() {
    let mfcc = Mfcc::new(MfccConfig::default()).unwrap();
    let w = tone(440.0, 0.5, 0.3, 0.05, 2);
    let base = cms(&mfcc.compute(&w).unwrap());
    for alpha in [0.05, 0.5, 1.9] {
        let scaled = Waveform::new(w.samples.iter().map(|v| v * alpha).collect(), SAMPLE_RATE).unwrap();
        let f = cms(&mfcc.compute(&scaled).unwrap());
        for (a, b) in f.values.data().iter().zip(base.values.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn features_are_deterministic() {
    let mfcc = Mfcc::new(MfccConfig::default()).unwrap();
    let w = tone(700.0, 0.4, 0.4, 0.1, 3);
    assert_eq!(mfcc.compute(&w).unwrap(), mfcc.compute(&w.clone()).unwrap());
    assert_eq!(mfcc.compute(&w).unwrap(), Mfcc::new(MfccConfig::default()).unwrap().compute(&w).unwrap());
}

#[test]
fn wav_round_trip_is_exact_at_sixteen_bits() {
    let dir = tempfile::tempdir().unwrap();
    let w = tone(220.0, 0.1, 0.7, 0.1, 4);
    let p = dir.path().join("a.wav");
    w.write_wav(&p).unwrap();
    let back = Waveform::read_wav(&p).unwrap();
    assert_eq!(back.sample_rate, SAMPLE_RATE);
    for (a, b) in back.samples.iter().zip(&w.samples) {
        assert!((a - b).abs() <= 1.0 / 32768.0);
    }
    let again = dir.path().join("b.wav");
    back.write_wav(&again).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&again).unwrap());
}

fn ramp(d: usize, t: usize) -> FeatureMatrix {
    FeatureMatrix::new(Tensor::new(vec![d, t], (0..d * t).map(|i| i as f64 + 1.0).collect()).unwrap()).unwrap()
}

#[test]
fn crop_fixtures() {
    let mut r = rng(5);
    let f = ramp(3, 200);
    assert_eq!(random_crop(&f, 200, &mut r).unwrap(), f);

    let long = ramp(3, 300);
    let c = crop_at(&long, 200, 50).unwrap();
    for row in 0..3 {
        assert_eq!(c.values.row(row), &long.values.row(row)[50..250]);
    }

    let short = ramp(3, 120);
    let c = random_crop(&short, 200, &mut r).unwrap();
    for row in 0..3 {
        let src = short.values.row(row);
        assert_eq!(&c.values.row(row)[..120], src);
        assert_eq!(&c.values.row(row)[120..], &src[..80]);
    }
}

#[test]
fn crop_offsets_are_uniform() {
    let f = ramp(1, 210);
    let mut r = rng(6);
    let mut counts = [0usize; 11];
    for _ in 0..11_000 {
        let c = random_crop(&f, 200, &mut r).unwrap();
        counts[(c.values.row(0)[0] - 1.0) as usize] += 1;
    }
    // Each of the 11 offsets expects 1000 hits, σ ≈ 30.
    assert!(counts.iter().all(|&n| (850..=1150).contains(&n)), "{counts:?}");
}

#[test]
fn cms_fixture() {
    let f = FeatureMatrix::new(Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap()).unwrap();
    assert_eq!(cms(&f).values.data(), &[-1.0, 1.0]);
}

#[test]
fn forced_masks() {
    let f = ramp(80, 30);
    let none = Masks { time: (0, 0), freq: (0, 0) };
    assert_eq!(apply_masks(&f, none), f);
    let first_five = apply_masks(&f, Masks { time: (0, 5), freq: (0, 0) });
    for r in 0..80 {
        assert!(first_five.values.row(r)[..5].iter().all(|&v| v == 0.0));
        assert_eq!(&first_five.values.row(r)[5..], &f.values.row(r)[5..]);
    }
    // A block running past the edge is truncated.
    let edge = apply_masks(&f, Masks { time: (28, 5), freq: (78, 10) });
    let zeros = edge.values.data().iter().filter(|&&v| v == 0.0).count();
    assert_eq!(zeros, 2 * 78 + 2 * 30);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn cms_centers_rows_and_is_idempotent(seed in any::<u64>(), d in 1usize..10, t in 1usize..50, offset in -100.0f64..100.0) {
        let mut v = uniform(&mut rng(seed), &[d, t], -5.0, 5.0);
        v.data_mut().iter_mut().for_each(|x| *x += offset);
        let once = cms(&FeatureMatrix::new(v).unwrap());
        for r in 0..d {
            prop_assert!((once.values.row(r).iter().sum::<f64>() / t as f64).abs() < 1e-9);
        }
        let twice = cms(&once);
        for (a, b) in once.values.data().iter().zip(twice.values.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn spec_augment_only_touches_its_masks(seed in any::<u64>(), d in 1usize..90, t in 1usize..60) {
        let f = ramp(d, t);
        let cfg = SpecAugmentConfig::default();
        let out = spec_augment(&f, &cfg, &mut rng(seed));
        let m = draw_masks(&cfg, d, t, &mut rng(seed));
        let ((ts, tw), (fs, fw)) = (m.time, m.freq);
        prop_assert!(tw <= 5 && fw <= 10);
        prop_assert!(ts + tw <= t && fs + fw <= d);
        let mut masked = 0;
        for r in 0..d {
            for c in 0..t {
                let inside = (fs..fs + fw).contains(&r) || (ts..ts + tw).contains(&c);
                let v = out.values.at(&[r, c]);
                if inside {
                    prop_assert_eq!(v, 0.0);
                    masked += 1;
                } else {
                    prop_assert_eq!(v, f.values.at(&[r, c]));
                }
            }
        }
        // Counting oracle: time block plus frequency block minus their overlap.
        prop_assert_eq!(masked, tw * d + fw * t - tw * fw);
        prop_assert_eq!(out.values.data().iter().filter(|&&v| v == 0.0).count(), masked);
    }
}

#[test]
fn mask_widths_cover_the_whole_range() {
    let cfg = SpecAugmentConfig::default();
    let mut r = rng(7);
    let (mut tw, mut fw) = ([0usize; 6], [0usize; 11]);
    for _ in 0..5000 {
        let m = draw_masks(&cfg, 80, 200, &mut r);
        tw[m.time.1] += 1;
        fw[m.freq.1] += 1;
    }
    assert!(tw.iter().chain(&fw).all(|&n| n > 300), "{tw:?} {fw:?}");
}
