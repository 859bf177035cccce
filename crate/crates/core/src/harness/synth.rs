//! Tone-plus-tilt synthetic speakers.
//!
//! Each speaker is a harmonic source at a speaker-specific pitch, shaped by a
//! fixed set of formant resonances and a spectral tilt, with a syllable-rate
//! amplitude envelope. Utterances vary pitch, formants and phases slightly and
//! add white noise at a chosen SNR.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Waveform, SAMPLE_RATE};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCorpusSpec {
    /// Speakers in the training split.
    pub num_speakers: usize,
    /// Unseen speakers used only for verification trials.
    pub heldout_speakers: usize,
    pub utts_per_speaker: usize,
    pub utterance_secs: f64,
    pub snr_db: f64,
    /// Relative per-utterance jitter of pitch and formants.
    pub jitter: f64,
    /// Give speaker `.1` exactly the parameters of speaker `.0` (global indices).
    pub clone_speaker: Option<(usize, usize)>,
    pub seed: u64,
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        Self {
            num_speakers: 32,
            heldout_speakers: 8,
            utts_per_speaker: 20,
            utterance_secs: 3.0,
            snr_db: 20.0,
            jitter: 0.03,
            clone_speaker: None,
            seed: 0,
        }
    }
}

impl SynthCorpusSpec {
    pub fn total_speakers(&self) -> usize {
        self.num_speakers + self.heldout_speakers
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 || self.utts_per_speaker == 0 {
            return Err(Error::Config("synth: need at least one speaker and one utterance".into()));
        }
        if self.utterance_secs * SAMPLE_RATE as f64 <= 400.0 {
            return Err(Error::Config("synth: utterances must exceed one 25 ms window".into()));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::Config("synth: jitter must be in [0, 0.5)".into()));
        }
        if let Some((a, b)) = self.clone_speaker {
            if a.max(b) >= self.total_speakers() || a == b {
                return Err(Error::Config("synth: clone_speaker indices out of range".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerParams {
    pub f0_hz: f64,
    /// Formant centers and bandwidths in Hz.
    pub formants: Vec<(f64, f64)>,
    /// Spectral slope in dB per octave above f0.
    pub tilt_db_per_octave: f64,
    /// Envelope modulation rate in Hz.
    pub am_rate_hz: f64,
}

impl SpeakerParams {
    fn draw(r: &mut ChaCha8Rng) -> Self {
        let f0_hz = 80.0 * (2.0f64).powf(r.random_range(0.0..1.6));
        let formants = vec![
            (r.random_range(300.0..900.0), r.random_range(60.0..140.0)),
            (r.random_range(900.0..2400.0), r.random_range(80.0..180.0)),
            (r.random_range(2400.0..3600.0), r.random_range(120.0..260.0)),
            (r.random_range(3600.0..5000.0), r.random_range(150.0..350.0)),
        ];
        Self {
            f0_hz,
            formants,
            tilt_db_per_octave: r.random_range(-12.0..-3.0),
            am_rate_hz: r.random_range(2.5..6.0),
        }
    }

    fn harmonic_gain(&self, hz: f64, formants: &[(f64, f64)]) -> f64 {
        let tilt = 10f64.powf(self.tilt_db_per_octave * (hz / self.f0_hz).log2() / 20.0);
        let res: f64 = formants
            .iter()
            .map(|&(fc, bw)| 1.0 / (1.0 + ((hz - fc) / (0.5 * bw)).powi(2)))
            .sum();
        tilt * (0.05 + res)
    }

    /// Renders one utterance; `r` supplies the per-utterance variation.
    pub fn render(&self, spec: &SynthCorpusSpec, r: &mut ChaCha8Rng) -> Waveform {
        let n = (spec.utterance_secs * SAMPLE_RATE as f64).round() as usize;
        let sr = SAMPLE_RATE as f64;
        let jit = |r: &mut ChaCha8Rng| 1.0 + spec.jitter * r.random_range(-1.0..1.0);
        let f0 = self.f0_hz * jit(r);
        let formants: Vec<(f64, f64)> = self.formants.iter().map(|&(f, b)| (f * jit(r), b)).collect();
        let am_phase = r.random_range(0.0..2.0 * PI);
        let mut x = vec![0.0; n];
        let mut h = 1;
        while (h as f64) * f0 < 0.45 * sr {
            let hz = h as f64 * f0;
            let amp = self.harmonic_gain(hz, &formants);
            // Phasor recurrence instead of a sin call per sample.
            let w = 2.0 * PI * hz / sr;
            let (sw, cw) = w.sin_cos();
            let phase: f64 = r.random_range(0.0..2.0 * PI);
            let (mut s, mut c) = phase.sin_cos();
            for v in x.iter_mut() {
                *v += amp * s;
                let ns = s * cw + c * sw;
                c = c * cw - s * sw;
                s = ns;
            }
            h += 1;
        }
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / sr;
            *v *= 0.6 + 0.4 * (2.0 * PI * self.am_rate_hz * t + am_phase).sin();
        }
        let power = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let noise_std = (power / 10f64.powf(spec.snr_db / 10.0)).sqrt();
        let normal = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
        for v in x.iter_mut() {
            *v += normal.sample(r);
        }
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gain = if peak > 0.0 { 0.5 / peak } else { 1.0 };
        Waveform {
            samples: x.into_iter().map(|v| v * gain).collect(),
            sample_rate: SAMPLE_RATE,
        }
    }
}

/// Per-speaker parameters for every speaker, training speakers first.
pub fn speaker_params(spec: &SynthCorpusSpec) -> Vec<SpeakerParams> {
    let mut r = rng::stream(spec.seed, "corpus");
    let mut params: Vec<SpeakerParams> = (0..spec.total_speakers()).map(|_| SpeakerParams::draw(&mut r)).collect();
    if let Some((a, b)) = spec.clone_speaker {
        params[b] = params[a].clone();
    }
    params
}

/// One utterance entry of a list file: `utt_id speaker_id relative_path`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ListEntry {
    pub utt: String,
    pub speaker: String,
    pub path: PathBuf,
}

pub fn speaker_id(i: usize) -> String {
    format!("spk{i:03}")
}

pub fn utt_id(spk: usize, u: usize) -> String {
    format!("{}-{u:03}", speaker_id(spk))
}

pub fn write_list(path: &Path, entries: &[ListEntry]) -> Result<()> {
    let mut s = String::new();
    for e in entries {
        writeln!(s, "{} {} {}", e.utt, e.speaker, e.path.display()).expect("writing to a String");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a list file; relative paths are resolved against the list's directory.
pub fn read_list(path: &Path) -> Result<Vec<ListEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            [] => continue,
            [utt, spk, p] => out.push(ListEntry {
                utt: utt.to_string(),
                speaker: spk.to_string(),
                path: base.join(p),
            }),
            _ => return Err(Error::format(path, format!("line {}: expected `utt speaker path`", n + 1))),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub spec: SynthCorpusSpec,
    pub speakers: Vec<SpeakerParams>,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub target_trials: usize,
    pub nontarget_trials: usize,
}

pub const TRAIN_LIST: &str = "train.list";
pub const TEST_LIST: &str = "test.list";
pub const TRIALS: &str = "trials.txt";
pub const CORPUS_JSON: &str = "corpus.json";

/// Writes WAVs, `train.list`, `test.list`, `trials.txt` (all pairs of held-out
/// utterances) and `corpus.json` under `out`.
pub fn generate(spec: &SynthCorpusSpec, out: &Path) -> Result<SynthSummary> {
    spec.validate()?;
    let params = speaker_params(spec);
    let wav_dir = out.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let jobs: Vec<(usize, usize)> = (0..spec.total_speakers())
        .flat_map(|s| (0..spec.utts_per_speaker).map(move |u| (s, u)))
        .collect();
    use rayon::prelude::*;
    let entries: Vec<ListEntry> = jobs
        .par_iter()
        .map(|&(s, u)| {
            let mut r = ChaCha8Rng::seed_from_u64(rng::derive(spec.seed, "utterances", (s * spec.utts_per_speaker + u) as u64));
            let w = params[s].render(spec, &mut r);
            let rel = PathBuf::from("wav").join(format!("{}.wav", utt_id(s, u)));
            w.write_wav(&out.join(&rel))?;
            Ok(ListEntry {
                utt: utt_id(s, u),
                speaker: speaker_id(s),
                path: rel,
            })
        })
        .collect::<Result<_>>()?;
    let split = spec.num_speakers * spec.utts_per_speaker;
    let (train, test) = entries.split_at(split);
    write_list(&out.join(TRAIN_LIST), train)?;
    write_list(&out.join(TEST_LIST), test)?;

    let mut trials = String::new();
    let (mut targets, mut nontargets) = (0, 0);
    for i in 0..test.len() {
        for j in i + 1..test.len() {
            let same = test[i].speaker == test[j].speaker;
            if same {
                targets += 1;
            } else {
                nontargets += 1;
            }
            writeln!(trials, "{} {} {}", u8::from(same), test[i].utt, test[j].utt).expect("writing to a String");
        }
    }
    let tp = out.join(TRIALS);
    std::fs::write(&tp, trials).map_err(|e| Error::io(&tp, e))?;

    let summary = SynthSummary {
        spec: spec.clone(),
        speakers: params,
        train_utterances: train.len(),
        test_utterances: test.len(),
        target_trials: targets,
        nontarget_trials: nontargets,
    };
    let cp = out.join(CORPUS_JSON);
    std::fs::write(&cp, serde_json::to_string_pretty(&summary).expect("summary serializes")).map_err(|e| Error::io(&cp, e))?;
    Ok(summary)
}
