//! Python bindings: `import ecapa_tdnn`.

use std::path::PathBuf;

use ecapa_core::features::{cms, Mfcc, MfccConfig, Waveform};
use ecapa_core::harness::{ModelPreset, ModelSection, RunConfig};
use ecapa_core::scoring::{self, DcfConfig};
use ecapa_core::train::{self, AamConfig, CycleSpan, LrSchedule};
use ecapa_core::{archive, AblationVariant, ParamScope, Tensor};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(ecapa_tdnn, EcapaError, PyException, "Raised for any extractor error; `args[0]` is the error kind.");

fn err(e: ecapa_core::Error) -> PyErr {
    EcapaError::new_err((e.kind(), e.to_string()))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(err(ecapa_core::Error::InvalidArgument("ragged matrix".into())));
    }
    Tensor::new(vec![r, c], rows.into_iter().flatten().collect()).map_err(err)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let c = t.shape()[1];
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

fn preset(name: &str) -> PyResult<ModelPreset> {
    match name {
        "desk" => Ok(ModelPreset::Desk),
        "tiny" => Ok(ModelPreset::Tiny),
        "paper512" | "c512" => Ok(ModelPreset::Paper512),
        "paper1024" | "c1024" => Ok(ModelPreset::Paper1024),
        _ => Err(err(ecapa_core::Error::Config(format!("unknown preset {name:?}")))),
    }
}

fn scope(name: &str) -> PyResult<ParamScope> {
    match name {
        "extractor" => Ok(ParamScope::Extractor),
        "full" => Ok(ParamScope::Full),
        _ => Err(err(ecapa_core::Error::InvalidArgument(format!("scope must be \"extractor\" or \"full\", got {name:?}")))),
    }
}

/// Speaker-embedding extractor with its classification head.
#[pyclass(module = "ecapa_tdnn")]
struct Model {
    inner: ecapa_core::Model,
}

#[pymethods]
impl Model {
    /// `preset` is one of desk, tiny, paper512, paper1024; `ablation` a label such as "B.2".
    #[new]
    #[pyo3(signature = (preset="desk", channels=None, ablation=None, num_speakers=1, seed=0))]
    fn new(preset: &str, channels: Option<usize>, ablation: Option<&str>, num_speakers: usize, seed: u64) -> PyResult<Self> {
        let ablation = ablation.map(str::parse::<AblationVariant>).transpose().map_err(err)?;
        let run = RunConfig {
            model: ModelSection {
                preset: self::preset(preset)?,
                channels,
                ablation,
            },
            ..RunConfig::default()
        };
        let config = run.model_config().map_err(err)?;
        Ok(Self {
            inner: ecapa_core::Model::build(config, num_speakers, seed).map_err(err)?,
        })
    }

    /// Reads a checkpoint directory.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: archive::load_checkpoint(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        archive::save_checkpoint(&self.inner, &path, serde_json::Value::Null).map_err(err)
    }

    #[pyo3(signature = (scope="extractor"))]
    fn param_count(&self, scope: &str) -> PyResult<usize> {
        Ok(self.inner.param_count(self::scope(scope)?))
    }

    /// `[(layer, count)]`, rows summing to `param_count(scope)`.
    #[pyo3(signature = (scope="extractor"))]
    fn param_table(&self, scope: &str) -> PyResult<Vec<(String, usize)>> {
        Ok(self.inner.param_table(self::scope(scope)?))
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.config.embed_dim
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.config.channels
    }

    #[getter]
    fn num_speakers(&self) -> usize {
        self.inner.num_speakers
    }

    /// Eval-mode embedding of features shaped `[80][T]`.
    fn embed(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = matrix(features)?;
        Ok(self.inner.embed(&x).map_err(err)?.into_data())
    }

    /// MFCC, mean subtraction and embedding of a 16 kHz mono waveform.
    fn embed_waveform(&self, samples: Vec<f64>) -> PyResult<Vec<f64>> {
        let f = features_of(samples, true)?;
        Ok(self.inner.embed(&f).map_err(err)?.into_data())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(channels={}, embedding_dim={}, params={})",
            self.inner.config.channels,
            self.inner.config.embed_dim,
            self.inner.param_count(ParamScope::Extractor)
        )
    }
}

fn features_of(samples: Vec<f64>, normalize: bool) -> PyResult<Tensor> {
    let mfcc = Mfcc::new(MfccConfig::default()).map_err(err)?;
    let w = Waveform::new(samples, ecapa_core::features::SAMPLE_RATE).map_err(err)?;
    let f = mfcc.compute(&w).map_err(err)?;
    Ok(if normalize { cms(&f) } else { f }.values)
}

/// 80 MFCCs per 10 ms frame of a 16 kHz waveform, shaped `[80][T]`.
#[pyfunction]
#[pyo3(signature = (samples, mean_normalize=false))]
fn mfcc(samples: Vec<f64>, mean_normalize: bool) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&features_of(samples, mean_normalize)?))
}

#[pyfunction]
fn read_wav(path: PathBuf) -> PyResult<Vec<f64>> {
    Ok(Waveform::read_wav(&path).map_err(err)?.samples)
}

#[pyfunction]
fn cosine_score(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    scoring::cosine_score(&a, &b).map_err(err)
}

/// `(eer, threshold)`, the rate as a fraction.
#[pyfunction]
fn eer(targets: Vec<f64>, nontargets: Vec<f64>) -> PyResult<(f64, f64)> {
    let r = scoring::eer(&targets, &nontargets).map_err(err)?;
    Ok((r.eer, r.threshold))
}

/// `(min_dcf, threshold)`.
#[pyfunction]
#[pyo3(signature = (targets, nontargets, p_target=0.01, c_miss=1.0, c_fa=1.0))]
fn min_dcf(targets: Vec<f64>, nontargets: Vec<f64>, p_target: f64, c_miss: f64, c_fa: f64) -> PyResult<(f64, f64)> {
    let cfg = DcfConfig { p_target, c_miss, c_fa };
    let r = scoring::min_dcf(&targets, &nontargets, &cfg).map_err(err)?;
    Ok((r.min_dcf, r.threshold))
}

/// s-norm of `raw` given the cohort scores of each side, keeping the top `n` of each.
#[pyfunction]
fn snorm(raw: f64, enroll_scores: Vec<f64>, test_scores: Vec<f64>, n: usize) -> PyResult<f64> {
    scoring::snorm_from_scores(raw, &enroll_scores, &test_scores, n).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (iteration, lr_min=1e-8, lr_max=1e-3, cycle_len=130_000, up_leg=false))]
fn cyclical_lr(iteration: u64, lr_min: f64, lr_max: f64, cycle_len: u64, up_leg: bool) -> f64 {
    let sched = LrSchedule {
        lr_min,
        lr_max,
        cycle_len,
        cycle_span: if up_leg { CycleSpan::UpLeg } else { CycleSpan::Full },
    };
    train::cyclical_lr(iteration, &sched)
}

/// AAM-softmax loss of one embedding against class weight rows `[S][E]`.
#[pyfunction]
#[pyo3(signature = (embedding, class_weights, label, margin=0.2, scale=30.0))]
fn aam_softmax_loss(embedding: Vec<f64>, class_weights: Vec<Vec<f64>>, label: usize, margin: f64, scale: f64) -> PyResult<f64> {
    let w = matrix(class_weights)?;
    train::aam_softmax_loss(&Tensor::vector(embedding), &w, label, &AamConfig { margin, scale }).map_err(err)
}

#[pymodule]
fn ecapa_tdnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EcapaError", m.py().get_type::<EcapaError>())?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(mfcc, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_score, m)?)?;
    m.add_function(wrap_pyfunction!(eer, m)?)?;
    m.add_function(wrap_pyfunction!(min_dcf, m)?)?;
    m.add_function(wrap_pyfunction!(snorm, m)?)?;
    m.add_function(wrap_pyfunction!(cyclical_lr, m)?)?;
    m.add_function(wrap_pyfunction!(aam_softmax_loss, m)?)?;
    Ok(())
}
