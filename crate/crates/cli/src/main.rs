//! `speechloc` command-line front end: corpus generation, feature extraction,
//! training, inference and evaluation over directories of JSON/WAV/SFF1 files.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use speechloc::corpus::{generate_corpus, load_manifest, read_labels, Split};
use speechloc::experiment::{featurize_corpus, infer_clip, load_feature_split, ExperimentConfig, FeatureKind};
use speechloc::metrics::evaluate;
use speechloc::model::{parameter_count, Model};
use speechloc::postprocess::{read_prediction, write_prediction};
use speechloc::training::{train, TrainingClip};
use speechloc::{Error, Result};

const CHECKPOINT: &str = "model.ckpt";
const EXPERIMENT: &str = "experiment.json";
const TRAIN_LOG: &str = "train_log.json";

#[derive(Parser)]
#[command(name = "speechloc", version, about = "Localize spliced synthetic speech in audio clips")]
struct Cli {
    /// Master seed; overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy spliced-speech corpus.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute cepstral features (or ingest SFF1 files) for a corpus.
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "type")]
        kind: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train on the train split of a feature directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-clip predictions for a feature directory.
    Infer {
        /// Model directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "eval")]
        split: SplitArg,
    },
    /// Score predictions against ground-truth labels.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        /// Corpus or feature directory holding labels and the manifest.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value = "eval")]
        split: SplitArg,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Eval => Some(Split::Eval),
            SplitArg::All => None,
        }
    }
}

fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn echo_config(cfg: &ExperimentConfig) {
    eprintln!("resolved config:\n{}", cfg.to_pretty_json());
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out } => {
            let cfg = resolve_config(config.as_deref(), cli.seed)?;
            echo_config(&cfg);
            let manifest = generate_corpus(&cfg.corpus, &out)?;
            println!("wrote {} clips to {}", manifest.clips.len(), out.display());
        }
        Command::Features { input, out, kind, config } => {
            let mut cfg = resolve_config(config.as_deref(), cli.seed)?;
            if let Some(k) = kind {
                cfg.features.kind = k.parse::<FeatureKind>()?;
            }
            echo_config(&cfg);
            let manifest = featurize_corpus(&input, &cfg.features, &out)?;
            println!("wrote features for {} clips to {}", manifest.clips.len(), out.display());
        }
        Command::Train { data, config, out } => {
            let cfg = resolve_config(config.as_deref(), cli.seed)?;
            echo_config(&cfg);
            let clips: Vec<TrainingClip> = load_feature_split(&data, Some(Split::Train))?
                .into_iter()
                .map(|(c, _)| c)
                .collect();
            if let Some(c) = clips.first() {
                if c.features.dim != cfg.model.input_dim {
                    return Err(Error::InvalidConfig(format!(
                        "model.input_dim {} differs from the {}-dim features in {}",
                        cfg.model.input_dim,
                        c.features.dim,
                        data.display()
                    )));
                }
            }
            let spec = clips.first().map(|c| c.features.frame_spec).unwrap_or(cfg.features.frame);
            log::info!(
                "training on {} clips, {} parameters",
                clips.len(),
                parameter_count(&cfg.model)
            );
            let started = Instant::now();
            let (model, log) = train(&clips, &cfg.model, &cfg.train, &spec)?;
            log::info!("trained in {:.1}s", started.elapsed().as_secs_f64());
            create_dir(&out)?;
            model.save(out.join(CHECKPOINT))?;
            write_json(&out.join(TRAIN_LOG), &log)?;
            write_json(&out.join(EXPERIMENT), &cfg)?;
            println!("wrote model to {}", out.display());
        }
        Command::Infer { model, input, out, split } => {
            let cfg = ExperimentConfig::load(model.join(EXPERIMENT))?;
            echo_config(&cfg);
            let net = Model::load(cfg.model.clone(), model.join(CHECKPOINT))?;
            create_dir(&out)?;
            let clips = load_feature_split(&input, split.split())?;
            for (clip, labels) in &clips {
                let pred = infer_clip(&net, &clip.clip_id, &clip.features, labels.duration_s, &cfg.postprocess)?;
                write_prediction(&pred, out.join(format!("{}.json", clip.clip_id)))?;
            }
            println!("wrote predictions for {} clips to {}", clips.len(), out.display());
        }
        Command::Eval { pred, gt, report, split, config } => {
            let cfg = resolve_config(config.as_deref(), cli.seed)?;
            echo_config(&cfg);
            let manifest = load_manifest(&gt)?;
            let wanted = split.split();
            let mut truth = Vec::new();
            let mut predictions = Vec::new();
            for entry in manifest.clips.iter().filter(|c| wanted.is_none_or(|s| c.split == s)) {
                truth.push(read_labels(manifest.label_path(&entry.id))?);
                let path = pred.join(format!("{}.json", entry.id));
                if path.exists() {
                    predictions.push(read_prediction(&path)?);
                } else {
                    log::warn!("no prediction for clip `{}`; treating it as empty", entry.id);
                }
            }
            let result = evaluate(&predictions, &truth, &cfg.metrics)?;
            print!("{}", result.summary());
            if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            write_json(&report, &result)?;
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::UnknownConfigKey(_) => 2,
        Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => 3,
        Error::Numeric { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let mut line = serde_json::json!({ "error": err.kind(), "message": err.to_string() });
            if let Error::UnknownConfigKey(key) = &err {
                line["key"] = key.clone().into();
            }
            eprintln!("{line}");
            ExitCode::from(exit_code(&err))
        }
    }
}
