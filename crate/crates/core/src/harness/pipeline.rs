//! File-to-file pipeline stages; each writes a run manifest into its output directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::manifest::RunManifest;
use super::synth::{self, read_list, ListEntry, SynthSummary};
use crate::archive::{self, Archive, ArchiveKind};
use crate::error::{Error, Result};
use crate::features::{cms, FeatureMatrix, Mfcc, MfccConfig, Waveform};
use crate::model::{AblationVariant, Model, ModelConfig, ParamScope};
use crate::scoring::{
    adaptive_snorm, build_cohort, cosine_score, eer, min_dcf, read_scores, read_trials, write_scores, CohortSelection,
    DcfConfig, MetricsReport, ScoreLine,
};
use crate::train::fit::{classification_accuracy, write_trace_csv};
use crate::train::{fit, TraceRow, TrainingSet};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TRACE_CSV: &str = "trace.csv";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const SCORES: &str = "scores.txt";
pub const METRICS: &str = "metrics.json";
pub const ABLATION_CSV: &str = "ablation.csv";

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v).expect("value serializes")).map_err(|e| Error::io(path, e))
}

/// MFCCs of every listed file, in list order.
pub fn list_features(entries: &[ListEntry]) -> Result<Vec<FeatureMatrix>> {
    let mfcc = Mfcc::new(MfccConfig::default())?;
    entries
        .par_iter()
        .map(|e| mfcc.compute(&Waveform::read_wav(&e.path)?))
        .collect()
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path, args: Vec<String>) -> Result<SynthSummary> {
    let mut m = RunManifest::start("synth", args, cfg.hash(), cfg.synth.seed);
    let s = synth::generate(&cfg.synth, out)?;
    for f in [synth::TRAIN_LIST, synth::TEST_LIST, synth::TRIALS, synth::CORPUS_JSON] {
        m.output(f);
    }
    m.finish(out)?;
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub speakers: Vec<String>,
    pub utterances: usize,
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Eval-mode accuracy of the head on whole training utterances.
    pub train_accuracy: f64,
    pub extractor_params: usize,
}

#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub trace: Vec<TraceRow>,
    pub summary: TrainSummary,
}

/// Trains on `corpus/train.list`; writes the checkpoint, loss trace and summary under `out`.
pub fn cmd_train(cfg: &RunConfig, corpus: &Path, out: &Path, args: Vec<String>) -> Result<TrainArtifacts> {
    let mut manifest = RunManifest::start("train", args, cfg.hash(), cfg.seed);
    let entries = read_list(&corpus.join(synth::TRAIN_LIST))?;
    let speakers: Vec<String> = entries
        .iter()
        .map(|e| e.speaker.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<&str, usize> = speakers.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let labels = entries.iter().map(|e| index[e.speaker.as_str()]).collect();
    let data = TrainingSet::new(list_features(&entries)?, labels, speakers.len())?;

    let mut model = Model::build(cfg.model_config()?, speakers.len(), cfg.seed)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ckpt = out.join(CHECKPOINT_DIR);
    let extra = serde_json::json!({
        "speakers": speakers,
        "run_manifest": super::manifest::RUN_MANIFEST,
        "config_hash": cfg.hash(),
    });
    let outcome = fit(&mut model, &data, &cfg.train, cfg.seed, |_, m| archive::save_checkpoint(m, &ckpt, extra.clone()))?;
    write_trace_csv(&out.join(TRACE_CSV), &outcome.trace)?;

    // Evaluate the checkpointed (f32-rounded) parameters so the numbers describe the artifact.
    let saved = archive::load_checkpoint(&ckpt)?;
    let summary = TrainSummary {
        speakers,
        utterances: data.len(),
        iterations: outcome.trace.len(),
        initial_loss: outcome.trace.first().map_or(f64::NAN, |r| r.loss),
        final_loss: outcome.trace.last().map_or(f64::NAN, |r| r.loss),
        train_accuracy: classification_accuracy(&saved, &data)?,
        extractor_params: saved.param_count(ParamScope::Extractor),
    };
    write_json(&out.join(TRAIN_SUMMARY), &summary)?;
    for f in [CHECKPOINT_DIR, TRACE_CSV, TRAIN_SUMMARY] {
        manifest.output(f);
    }
    manifest.finish(out)?;
    Ok(TrainArtifacts {
        checkpoint: ckpt,
        trace: outcome.trace,
        summary,
    })
}

/// Eval-mode embedding of one waveform (MFCC, mean subtraction, whole utterance).
pub fn embed_waveform(model: &Model, mfcc: &Mfcc, w: &Waveform) -> Result<Vec<f64>> {
    let f = mfcc.compute(w)?;
    Ok(model.embed(&cms(&f).values)?.into_data())
}

/// Embeds every file in `list` into an embedding archive at `out`.
pub fn cmd_extract(checkpoint: &Path, list: &Path, out: &Path, args: Vec<String>) -> Result<usize> {
    let model = archive::load_checkpoint(checkpoint)?;
    let hash = archive::checkpoint_extra(checkpoint)?
        .get("config_hash")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string();
    let mut manifest = RunManifest::start("extract", args, hash, model.seed);
    let entries = read_list(list)?;
    let mfcc = Mfcc::new(MfccConfig::default())?;
    let embs: Vec<Vec<f64>> = entries
        .par_iter()
        .map(|e| embed_waveform(&model, &mfcc, &Waveform::read_wav(&e.path)?))
        .collect::<Result<_>>()?;
    let speakers: BTreeMap<&str, &str> = entries.iter().map(|e| (e.utt.as_str(), e.speaker.as_str())).collect();
    let meta = serde_json::json!({
        "checkpoint": checkpoint.display().to_string(),
        "speakers": speakers,
        "run_manifest": super::manifest::RUN_MANIFEST,
    });
    let mut a = Archive::new(ArchiveKind::Embeddings, meta);
    for (e, v) in entries.iter().zip(embs) {
        a.push(e.utt.clone(), crate::tensor::Tensor::vector(v));
    }
    a.save(out)?;
    manifest.output(archive::MANIFEST);
    manifest.output(archive::BLOB);
    manifest.finish(out)?;
    Ok(entries.len())
}

/// Utterance embeddings and speakers from an embedding archive.
pub fn load_embeddings(dir: &Path) -> Result<(HashMap<String, Vec<f64>>, HashMap<String, String>)> {
    let a = Archive::load(dir, Some(ArchiveKind::Embeddings))?;
    let spk: HashMap<String, String> = a
        .metadata
        .get("speakers")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_default();
    let embs = a.tensors.into_iter().map(|(n, t)| (n, t.into_data())).collect();
    Ok((embs, spk))
}

/// Cohort from an embedding archive, grouping by the stored speaker labels.
pub fn cohort_from_archive(dir: &Path, selection: CohortSelection) -> Result<crate::scoring::Cohort> {
    let (embs, spk) = load_embeddings(dir)?;
    let mut groups: BTreeMap<String, Vec<(String, Vec<f64>)>> = BTreeMap::new();
    for (utt, e) in embs {
        let s = spk
            .get(&utt)
            .ok_or_else(|| Error::format(dir, format!("no speaker recorded for `{utt}`")))?;
        groups.entry(s.clone()).or_default().push((utt, e));
    }
    let grouped: Vec<Vec<Vec<f64>>> = groups
        .into_values()
        .map(|mut v| {
            v.sort_by(|a, b| a.0.cmp(&b.0));
            v.into_iter().map(|(_, e)| e).collect()
        })
        .collect();
    build_cohort(&grouped, selection)
}

/// Scores every trial; with a cohort archive the normalized column is filled in.
pub fn cmd_score(
    embeddings: &Path,
    trials: &Path,
    cohort: Option<&Path>,
    selection: CohortSelection,
    out: &Path,
    args: Vec<String>,
) -> Result<Vec<ScoreLine>> {
    let mut manifest = RunManifest::start("score", args, String::new(), 0);
    let (embs, _) = load_embeddings(embeddings)?;
    let trials = read_trials(trials)?;
    let cohort = cohort.map(|c| cohort_from_archive(c, selection)).transpose()?;
    let get = |id: &str| embs.get(id).ok_or_else(|| Error::UnknownId(id.to_string()));
    let lines: Vec<ScoreLine> = trials
        .par_iter()
        .map(|t| {
            let (e, v) = (get(&t.enroll)?, get(&t.test)?);
            let raw = cosine_score(e, v)?;
            let norm = cohort.as_ref().map(|c| adaptive_snorm(raw, e, v, c)).transpose()?;
            Ok(ScoreLine {
                enroll: t.enroll.clone(),
                test: t.test.clone(),
                raw,
                norm,
            })
        })
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_scores(&out.join(SCORES), &lines)?;
    manifest.output(SCORES);
    manifest.finish(out)?;
    Ok(lines)
}

/// Metrics for the raw column and, when present, the normalized one.
pub fn evaluate(scores: &[ScoreLine], trials: &[crate::scoring::Trial], dcf: &DcfConfig) -> Result<Vec<MetricsReport>> {
    let label: HashMap<(&str, &str), bool> = trials
        .iter()
        .map(|t| ((t.enroll.as_str(), t.test.as_str()), t.target))
        .collect();
    let scored: std::collections::HashSet<(&str, &str)> = scores.iter().map(|s| (s.enroll.as_str(), s.test.as_str())).collect();
    if let Some(t) = trials.iter().find(|t| !scored.contains(&(t.enroll.as_str(), t.test.as_str()))) {
        return Err(Error::UnknownId(format!("trial {} {} has no score", t.enroll, t.test)));
    }
    let mut cols: Vec<(&str, Vec<f64>, Vec<f64>)> = vec![("cosine", vec![], vec![])];
    let normalized = !scores.is_empty() && scores.iter().all(|s| s.norm.is_some());
    if normalized {
        cols.push(("s-norm", vec![], vec![]));
    }
    for s in scores {
        let target = *label
            .get(&(s.enroll.as_str(), s.test.as_str()))
            .ok_or_else(|| Error::UnknownId(format!("{} {}", s.enroll, s.test)))?;
        let values = [Some(s.raw), s.norm];
        for (col, v) in cols.iter_mut().zip(values) {
            let v = v.expect("column presence checked");
            if target {
                col.1.push(v);
            } else {
                col.2.push(v);
            }
        }
    }
    cols.into_iter()
        .map(|(name, t, n)| {
            let e = eer(&t, &n)?;
            let d = min_dcf(&t, &n, dcf)?;
            Ok(MetricsReport {
                system: name.to_string(),
                eer_percent: 100.0 * e.eer,
                min_dcf: d.min_dcf,
                eer_threshold: e.threshold,
                dcf_threshold: d.threshold,
                p_target: dcf.p_target,
                targets: t.len(),
                nontargets: n.len(),
            })
        })
        .collect()
}

/// Results as a table: one row per system with EER (%), MinDCF and trial count.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let mut s = String::new();
    writeln!(s, "{:<24} {:>8} {:>8} {:>9}", "System", "EER(%)", "MinDCF", "Trials").unwrap();
    for r in reports {
        writeln!(
            s,
            "{:<24} {:>8.2} {:>8.4} {:>9}",
            format!("ECAPA-TDNN ({})", r.system),
            r.eer_percent,
            r.min_dcf,
            r.targets + r.nontargets
        )
        .unwrap();
    }
    s
}

pub fn cmd_eval(scores: &Path, trials: &Path, dcf: &DcfConfig, out: &Path, args: Vec<String>) -> Result<Vec<MetricsReport>> {
    let mut manifest = RunManifest::start("eval", args, String::new(), 0);
    let reports = evaluate(&read_scores(scores)?, &read_trials(trials)?, dcf)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(METRICS), &reports)?;
    manifest.output(METRICS);
    manifest.finish(out)?;
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTable {
    pub rows: Vec<(String, usize)>,
    pub extractor_total: usize,
}

/// Per-layer extractor parameter counts (head excluded).
pub fn cmd_paramcount(config: &ModelConfig) -> Result<ParamTable> {
    let m = Model::build(config.clone(), 1, 0)?;
    Ok(ParamTable {
        rows: m.param_table(ParamScope::Extractor),
        extractor_total: m.param_count(ParamScope::Extractor),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub train: TrainSummary,
    pub reports: Vec<MetricsReport>,
}

impl PipelineResult {
    pub fn report(&self, system: &str) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.system == system)
    }
}

/// train → extract (train and test lists) → score with cohort → eval, all under `out`.
pub fn run_pipeline(cfg: &RunConfig, corpus: &Path, out: &Path) -> Result<PipelineResult> {
    let args = vec![format!("corpus={}", corpus.display())];
    let t = cmd_train(cfg, corpus, &out.join("train"), args.clone())?;
    let train_emb = out.join("embeddings-train");
    let test_emb = out.join("embeddings-test");
    cmd_extract(&t.checkpoint, &corpus.join(synth::TRAIN_LIST), &train_emb, args.clone())?;
    cmd_extract(&t.checkpoint, &corpus.join(synth::TEST_LIST), &test_emb, args.clone())?;
    let trials = corpus.join(synth::TRIALS);
    cmd_score(&test_emb, &trials, Some(&train_emb), cfg.score.selection(), &out.join("score"), args.clone())?;
    let reports = cmd_eval(&out.join("score").join(SCORES), &trials, &cfg.score.dcf, &out.join("eval"), args)?;
    Ok(PipelineResult {
        train: t.summary,
        reports,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub description: String,
    pub extractor_params: usize,
    pub train_accuracy: f64,
    pub eer_percent: f64,
    pub min_dcf: f64,
    pub snorm_eer_percent: f64,
    pub snorm_min_dcf: f64,
}

/// Runs the baseline and each variant through the full pipeline; writes `ablation.csv`.
pub fn cmd_ablate(cfg: &RunConfig, corpus: &Path, variants: &[AblationVariant], out: &Path, args: Vec<String>) -> Result<Vec<AblationRow>> {
    let mut manifest = RunManifest::start("ablate", args, cfg.hash(), cfg.seed);
    let mut runs: Vec<(String, String, RunConfig)> = vec![("ECAPA-TDNN".into(), "baseline".into(), cfg.clone())];
    for &v in variants {
        let mut c = cfg.clone();
        c.model.ablation = Some(v);
        runs.push((v.label().into(), v.description().into(), c));
    }
    let mut rows = Vec::new();
    for (label, desc, c) in runs {
        let r = run_pipeline(&c, corpus, &out.join(label.replace('.', "")))?;
        let raw = r.report("cosine").expect("raw column always present");
        let norm = r.report("s-norm").unwrap_or(raw);
        rows.push(AblationRow {
            variant: label,
            description: desc,
            extractor_params: r.train.extractor_params,
            train_accuracy: r.train.train_accuracy,
            eer_percent: raw.eer_percent,
            min_dcf: raw.min_dcf,
            snorm_eer_percent: norm.eer_percent,
            snorm_min_dcf: norm.min_dcf,
        });
    }
    let mut csv = String::from("systems,description,params,train_accuracy,eer_percent,min_dcf,snorm_eer_percent,snorm_min_dcf\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{:.4},{:.3},{:.4},{:.3},{:.4}",
            r.variant, r.description, r.extractor_params, r.train_accuracy, r.eer_percent, r.min_dcf, r.snorm_eer_percent, r.snorm_min_dcf
        )
        .unwrap();
    }
    let p = out.join(ABLATION_CSV);
    std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    manifest.output(ABLATION_CSV);
    manifest.finish(out)?;
    Ok(rows)
}
