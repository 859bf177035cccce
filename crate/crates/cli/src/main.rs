//! `ecapa`: synthetic corpus, training, extraction, scoring and reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ecapa_core::harness::pipeline::{self, format_table};
use ecapa_core::harness::{gradcheck, GradcheckOptions, ModelPreset, RunConfig};
use ecapa_core::scoring::CohortSelection;
use ecapa_core::AblationVariant;

#[derive(Parser, Debug)]
#[command(name = "ecapa", version, about = "ECAPA-TDNN speaker embeddings")]
struct Cli {
    /// TOML run configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config (and the corpus seed for `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for feature extraction and scoring.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic speaker corpus.
    Synth,
    /// Train on `<corpus>/train.list`.
    Train {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Embed every file of a list with a checkpoint.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        list: PathBuf,
    },
    /// Cosine scores, plus s-norm when a cohort archive is given.
    Score {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[command(flatten)]
        selection: SelectionArgs,
    },
    /// EER and MinDCF of a score file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        trials: PathBuf,
    },
    /// Per-layer extractor parameter counts.
    Paramcount {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Finite-difference check of every layer's gradient.
    Gradcheck {
        /// Check one ablation variant instead of the default model.
        #[arg(long)]
        ablation: Option<AblationVariant>,
        /// Check the baseline and all seven variants.
        #[arg(long, conflicts_with = "ablation")]
        all: bool,
    },
    /// Baseline plus ablation variants through the full pipeline; writes ablation.csv.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated labels such as `A.1,B.2`; all seven when omitted.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<AblationVariant>,
    },
    /// synth, train, extract, score and eval in one go.
    Run {
        /// Reuse an existing corpus instead of generating one under `--out`.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SelectionArgs {
    /// Cohort scores kept per side; overrides the config.
    #[arg(long, conflicts_with = "all_cohort")]
    top_n: Option<usize>,
    /// Normalize against the whole cohort.
    #[arg(long)]
    all_cohort: bool,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_parser = parse_preset)]
    preset: Option<ModelPreset>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    ablation: Option<AblationVariant>,
}

fn parse_preset(s: &str) -> Result<ModelPreset, String> {
    match s {
        "desk" => Ok(ModelPreset::Desk),
        "tiny" => Ok(ModelPreset::Tiny),
        "paper512" | "c512" => Ok(ModelPreset::Paper512),
        "paper1024" | "c1024" => Ok(ModelPreset::Paper1024),
        _ => Err(format!("unknown preset {s:?} (desk, tiny, paper512, paper1024)")),
    }
}

fn command_line() -> Vec<String> {
    std::env::args().collect()
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    Ok(cfg)
}

fn print_json(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("value serializes"));
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let mut cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    let args = command_line();
    match cli.command {
        Command::Synth => {
            let s = pipeline::cmd_synth(&cfg, out, args)?;
            print_json(serde_json::to_value(&s)?);
        }
        Command::Train { corpus } => {
            let t = pipeline::cmd_train(&cfg, &corpus, out, args)?;
            print_json(serde_json::to_value(&t.summary)?);
        }
        Command::Extract { checkpoint, list } => {
            let n = pipeline::cmd_extract(&checkpoint, &list, out, args)?;
            println!("{n} embeddings written to {}", out.display());
        }
        Command::Score {
            embeddings,
            trials,
            cohort,
            selection,
        } => {
            let sel = if selection.all_cohort {
                CohortSelection::All
            } else {
                selection.top_n.map_or(cfg.score.selection(), CohortSelection::TopN)
            };
            let lines = pipeline::cmd_score(&embeddings, &trials, cohort.as_deref(), sel, out, args)?;
            println!("{} trials scored into {}", lines.len(), out.join(pipeline::SCORES).display());
        }
        Command::Eval { scores, trials } => {
            let reports = pipeline::cmd_eval(&scores, &trials, &cfg.score.dcf, out, args)?;
            print!("{}", format_table(&reports));
        }
        Command::Paramcount { model } => {
            if let Some(p) = model.preset {
                cfg.model.preset = p;
                cfg.model.channels = None;
            }
            if model.channels.is_some() {
                cfg.model.channels = model.channels;
            }
            if model.ablation.is_some() {
                cfg.model.ablation = model.ablation;
            }
            let table = pipeline::cmd_paramcount(&cfg.model_config()?)?;
            let width = table.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
            for (name, count) in &table.rows {
                println!("{name:<width$} {count:>12}");
            }
            println!("{:<width$} {:>12}", "total", table.extractor_total);
        }
        Command::Gradcheck { ablation, all } => gradcheck_cmd(&cfg, ablation, all, out)?,
        Command::Ablate { corpus, variants } => {
            let variants = if variants.is_empty() {
                AblationVariant::ALL.to_vec()
            } else {
                variants
            };
            let rows = pipeline::cmd_ablate(&cfg, &corpus, &variants, out, args)?;
            for r in &rows {
                println!(
                    "{:<11} {:>10} params  EER {:>6.2}%  MinDCF {:.4}",
                    r.variant, r.extractor_params, r.eer_percent, r.min_dcf
                );
            }
        }
        Command::Run { corpus } => {
            let corpus = match corpus {
                Some(c) => c,
                None => {
                    let c = out.join("corpus");
                    pipeline::cmd_synth(&cfg, &c, args)?;
                    c
                }
            };
            let r = pipeline::run_pipeline(&cfg, &corpus, out)?;
            println!("train accuracy {:.2}%", 100.0 * r.train.train_accuracy);
            print!("{}", format_table(&r.reports));
        }
    }
    Ok(())
}

fn gradcheck_cmd(cfg: &RunConfig, ablation: Option<AblationVariant>, all: bool, out: &Path) -> anyhow::Result<()> {
    let base = ecapa_core::ModelConfig::tiny();
    let mut runs = vec![];
    if all || ablation.is_none() {
        runs.push(("baseline".to_string(), base.clone()));
    }
    let variants: Vec<AblationVariant> = if all { AblationVariant::ALL.to_vec() } else { ablation.into_iter().collect() };
    for v in variants {
        runs.push((v.label().to_string(), base.apply_ablation(v)));
    }
    let mut failed = vec![];
    let mut reports = serde_json::Map::new();
    for (name, config) in runs {
        let r = gradcheck(&config, cfg.seed, &GradcheckOptions::default())?;
        println!("{name}");
        for l in &r.layers {
            println!(
                "  {:<8} {:>4} entries  max rel err {:.2e}  {}",
                l.layer,
                l.entries_checked,
                l.max_rel_error,
                if l.passed { "PASS" } else { "FAIL" }
            );
        }
        if !r.passed {
            failed.push(name.clone());
        }
        reports.insert(name, serde_json::to_value(&r)?);
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("gradcheck.json");
    std::fs::write(&path, serde_json::to_string_pretty(&reports)?).with_context(|| format!("writing {}", path.display()))?;
    if !failed.is_empty() {
        bail!(GradcheckFailed(failed.join(",")));
    }
    Ok(())
}

#[derive(Debug)]
struct GradcheckFailed(String);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "gradient check failed for {}", self.0)
    }
}

impl std::error::Error for GradcheckFailed {}

/// One JSON object on stderr: `{"error": kind, "message": text}`.
fn error_line(e: &anyhow::Error) -> String {
    let (kind, message) = if let Some(core) = e.downcast_ref::<ecapa_core::Error>() {
        // Core errors already render their cause.
        (core.kind(), core.to_string())
    } else if e.downcast_ref::<GradcheckFailed>().is_some() {
        ("gradcheck_failed", e.to_string())
    } else {
        ("other", format!("{e:#}"))
    };
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
