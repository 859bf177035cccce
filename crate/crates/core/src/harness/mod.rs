//! Synthetic corpus, run configuration, manifests and the end-to-end pipeline.

pub mod config;
pub mod gradcheck;
pub mod manifest;
pub mod pipeline;
pub mod synth;

pub use config::{ModelPreset, ModelSection, RunConfig, ScoreSection};
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport, LayerCheck, GRAD_TOL};
pub use manifest::RunManifest;
pub use synth::{generate, SpeakerParams, SynthCorpusSpec, SynthSummary};
