//! `vocalsense` command line: synthesize corpora, pretrain and train the
//! models, analyze recordings, compare cohorts and draw plots.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use serde::Deserialize;

use vocalsense::acoustic::{loss_curve_csv, AcousticConfig, AcousticModel, PretrainConfig};
use vocalsense::analytics::compare_cohorts;
use vocalsense::audio::{load_wav, Segment, CANONICAL_RATE};
use vocalsense::neural::Checkpoint;
use vocalsense::pipeline::report::sorted_json;
use vocalsense::pipeline::{
    discover_inputs, emit_plots, run_pipeline, transcribe_file, transcribe_labeled_dir, AnalysisReport, PipelineConfig,
    SEED_ENV,
};
use vocalsense::synth::{generate, CohortProfile, CohortTag};
use vocalsense::text::{mlm_curve_csv, ClassifierConfig, MlmConfig, TextConfig, TextModel, TrainingCurve};
use vocalsense::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "vocalsense", version, about = "Poultry vocalization analysis")]
struct Cli {
    /// Seed for every random stream; falls back to the config file, then VOCALSENSE_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the analysis pipeline over WAV files (needs --config).
    Analyze {
        /// Input files or directories; replaces the config's inputs.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        acoustic: Option<PathBuf>,
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long)]
        cohort: Option<String>,
    },
    /// Self-supervised pretraining of the acoustic encoder.
    PretrainAcoustic {
        /// Directories or WAV files.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Seconds taken from the start of each file.
        #[arg(long, default_value_t = 1.0)]
        crop_secs: f64,
        /// Loss curve CSV; defaults to the checkpoint path with `.curve.csv`.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Masked-language-model pretraining on transcripts of WAV files.
    PretrainText {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Acoustic checkpoint used to transcribe; seed-initialized without one.
        #[arg(long)]
        acoustic: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 32)]
        segments: usize,
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Fine-tune the sentiment classifier on labeled directories.
    Train {
        /// Directory with WAV files and labels.csv.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        acoustic: Option<PathBuf>,
        /// Text checkpoint to start from, e.g. after pretrain-text.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 32)]
        segments: usize,
        /// Training curve CSV; defaults to the checkpoint path with `.curve.csv`.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Generate a labeled synthetic cohort.
    Synth {
        /// stressed, relaxed, healthy or unhealthy.
        #[arg(long)]
        profile: CohortTag,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Delta of report B against report A.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Write the delta here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write report B with the delta under `comparison`.
        #[arg(long)]
        embed: Option<PathBuf>,
    },
    /// CSV and SVG figures from a report.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training curve CSV written by `train`.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
}

/// Model and optimizer settings read from the `training` key of the config.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainingSection {
    acoustic: AcousticConfig,
    acoustic_pretrain: PretrainConfig,
    text: TextConfig,
    mlm: MlmConfig,
    classifier: ClassifierConfig,
}

struct Settings {
    pipeline: PipelineConfig,
    training: TrainingSection,
    seed: u64,
    workers: usize,
}

fn read_config(path: Option<&Path>) -> Result<(PipelineConfig, TrainingSection)> {
    let Some(path) = path else {
        return Ok((PipelineConfig::default(), TrainingSection::default()));
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    let training = match value.as_object_mut().and_then(|m| m.remove("training")) {
        Some(t) => serde_json::from_value(t)?,
        None => TrainingSection::default(),
    };
    Ok((serde_json::from_value(value)?, training))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={v:?} is not a seed"))),
        Err(_) => Ok(None),
    }
}

impl Settings {
    fn new(cli: &Cli) -> Result<Self> {
        let (mut pipeline, training) = read_config(cli.config.as_deref())?;
        let seed = match cli.seed.or(pipeline.seed) {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        };
        let workers = cli.workers.unwrap_or(pipeline.workers);
        if workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        pipeline.seed = Some(seed);
        pipeline.workers = workers;
        Ok(Self { pipeline, training, seed, workers })
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.into(), source: e })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn curve_path(out: &Path, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| out.with_extension("curve.csv"))
}

fn acoustic_model(path: Option<&Path>, cfg: &AcousticConfig, seed: u64) -> Result<AcousticModel> {
    match path {
        Some(p) => AcousticModel::from_checkpoint(&Checkpoint::load(p)?),
        None => AcousticModel::new(cfg.clone(), seed),
    }
}

fn crop_corpus(inputs: &[PathBuf], crop_secs: f64) -> Result<Vec<Segment<f64>>> {
    let keep = (crop_secs * CANONICAL_RATE as f64).round() as usize;
    discover_inputs(inputs)?
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut samples = load_wav::<f64>(p)?.to_mono_16k().downmix();
            samples.truncate(keep);
            Ok(Segment::new(samples, CANONICAL_RATE, i, p.to_string_lossy()))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let s = Settings::new(&cli)?;
    match cli.command {
        Command::Analyze { inputs, out, segments, acoustic, text, cohort } => {
            let mut cfg = s.pipeline;
            if !inputs.is_empty() {
                cfg.inputs = inputs;
            }
            cfg.output = out.unwrap_or(cfg.output);
            cfg.segments = segments.unwrap_or(cfg.segments);
            cfg.acoustic_checkpoint = acoustic.or(cfg.acoustic_checkpoint);
            cfg.text_checkpoint = text.or(cfg.text_checkpoint);
            cfg.cohort = cohort.or(cfg.cohort);
            let report = run_pipeline(&cfg)?;
            for e in &report.errors {
                eprintln!("warning: {}: {}", e.path, e.error);
            }
            println!(
                "analyzed {} files ({} failed), report in {}",
                report.files.len(),
                report.errors.len(),
                cfg.output.join("report.json").display()
            );
        }
        Command::PretrainAcoustic { data, out, epochs, lr, crop_secs, curves } => {
            if !(crop_secs > 0.0) {
                return Err(Error::InvalidConfig("crop length must be positive".into()));
            }
            let corpus = crop_corpus(&data, crop_secs)?;
            let mut model = AcousticModel::new(s.training.acoustic.clone(), s.seed)?;
            let mut cfg = s.training.acoustic_pretrain.clone();
            cfg.seed = s.seed;
            cfg.workers = s.workers;
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.lr = lr.unwrap_or(cfg.lr);
            let curve = model.pretrain(&corpus, &cfg)?;
            model.to_checkpoint().save(&out)?;
            write(&curve_path(&out, curves), &loss_curve_csv(&curve))?;
            for e in &curve {
                println!("epoch {} loss {:.4} contrastive {:.4} diversity {:.4}", e.epoch, e.loss, e.contrastive, e.diversity);
            }
        }
        Command::PretrainText { data, out, acoustic, epochs, lr, segments, curves } => {
            let am = acoustic_model(acoustic.as_deref(), &s.training.acoustic, s.seed)?;
            let files = discover_inputs(&data)?;
            let corpus = files.iter().map(|p| transcribe_file(&am, p, segments)).collect::<Result<Vec<_>>>()?;
            let mut model = TextModel::new(s.training.text, s.seed)?;
            let mut cfg = s.training.mlm.clone();
            cfg.seed = s.seed;
            cfg.workers = s.workers;
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.lr = lr.unwrap_or(cfg.lr);
            let curve = model.pretrain_mlm(&corpus, &cfg)?;
            model.to_checkpoint().save(&out)?;
            write(&curve_path(&out, curves), &mlm_curve_csv(&curve))?;
            for e in &curve {
                println!("epoch {} loss {:.4} accuracy {:.4}", e.epoch, e.loss, e.accuracy);
            }
        }
        Command::Train { train, val, out, acoustic, init, epochs, lr, segments, curves } => {
            let am = acoustic_model(acoustic.as_deref(), &s.training.acoustic, s.seed)?;
            let train_set = transcribe_labeled_dir(&am, &train, segments, s.workers)?;
            let val_set = transcribe_labeled_dir(&am, &val, segments, s.workers)?;
            let mut model = match init {
                Some(p) => TextModel::from_checkpoint(&Checkpoint::load(p)?)?,
                None => TextModel::new(s.training.text, s.seed)?,
            };
            let mut cfg = s.training.classifier.clone();
            cfg.seed = s.seed;
            cfg.workers = s.workers;
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.lr = lr.unwrap_or(cfg.lr);
            let curve = model.train_classifier(&train_set, &val_set, &cfg)?;
            model.to_checkpoint().save(&out)?;
            write(&curve_path(&out, curves), &curve.to_csv())?;
            for m in &curve.epochs {
                println!(
                    "epoch {} train_loss {:.4} val_loss {:.4} train_acc {:.4} val_acc {:.4}",
                    m.epoch, m.train_loss, m.val_loss, m.train_acc, m.val_acc
                );
            }
            if let Some(b) = curve.best_epoch {
                println!("kept epoch {b}");
            }
        }
        Command::Synth { profile, count, out } => {
            let dir = generate(&CohortProfile::preset(profile), count, s.seed, &out, s.workers)?;
            println!("wrote {count} files to {}", dir.display());
        }
        Command::Compare { a, b, out, embed } => {
            let ra = AnalysisReport::load(&a)?;
            let mut rb = AnalysisReport::load(&b)?;
            let delta = compare_cohorts(&ra.summary(), &rb.summary())?;
            let text = sorted_json(&delta);
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
            if let Some(p) = embed {
                rb.comparison = Some(delta);
                write(&p, &rb.to_json())?;
            }
        }
        Command::Plot { report, out, curves } => {
            let mut r = AnalysisReport::load(&report)?;
            if let Some(c) = curves {
                let text = std::fs::read_to_string(&c).map_err(|e| Error::Io { path: c.clone(), source: e })?;
                r.training = Some(TrainingCurve::from_csv(&text)?);
            }
            for o in emit_plots(&r, &out)? {
                match o.result {
                    Ok((csv, svg)) => println!("{}: {} {}", o.plot, csv.display(), svg.display()),
                    Err(e) => eprintln!("skipped {}: {e}", o.plot),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if matches!(cli.command, Command::Analyze { .. }) && cli.config.is_none() {
        let mut cmd = Cli::command();
        let e = cmd.error(ErrorKind::MissingRequiredArgument, "analyze needs --config <FILE>");
        let _ = e.print();
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
