//! Batch analysis: load every input file, run the full per-segment chain,
//! fold the results into corpus aggregates and write a versioned report.

pub mod plots;
pub mod report;

pub use plots::{emit_plots, emit_selected, Plot, PlotOutcome};
pub use report::{Aggregates, AnalysisReport, FileError, FileRecord, RunManifest, SegmentRecord, REPORT_FORMAT_VERSION};

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic::{AcousticConfig, AcousticModel};
use crate::analytics::count_phonetics;
use crate::audio::{load_wav, Segment, DEFAULT_SEGMENTS};
use crate::dsp::{estimate_pitch, MfccConfig, MfccExtractor, PitchConfig};
use crate::error::{Error, Result};
use crate::neural::Checkpoint;
use crate::text::{load_labels, LabeledTranscript, PhoneticTranscript, Sentiment, SentimentResult, TextConfig, TextModel};

/// Environment variable consulted for the seed when neither a flag nor the
/// config file sets one.
pub const SEED_ENV: &str = "VOCALSENSE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramConfig {
    pub bin_width: f64,
    pub origin: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self { bin_width: 10.0, origin: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    /// Rows kept in each frequency table.
    pub top_n: usize,
    pub ngram_orders: Vec<usize>,
    /// Record the mean MFCC vector of every segment.
    pub mfcc: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { top_n: 25, ngram_orders: vec![1, 2], mfcc: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// WAV files, or directories whose `.wav` files are taken (not recursive).
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    pub workers: usize,
    pub seed: Option<u64>,
    pub segments: usize,
    pub pitch: PitchConfig,
    pub histogram: HistogramConfig,
    pub mfcc: MfccConfig,
    /// Without a checkpoint the model is initialized from the seed.
    pub acoustic_checkpoint: Option<PathBuf>,
    pub text_checkpoint: Option<PathBuf>,
    pub cohort: Option<String>,
    pub report: ReportOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            output: PathBuf::from("vocalsense-out"),
            workers: 1,
            seed: None,
            segments: DEFAULT_SEGMENTS,
            pitch: PitchConfig::default(),
            histogram: HistogramConfig::default(),
            mfcc: MfccConfig::default(),
            acoustic_checkpoint: None,
            text_checkpoint: None,
            cohort: None,
            report: ReportOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The configured seed, else `VOCALSENSE_SEED`, else 0.
    pub fn resolved_seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={v:?} is not a seed"))),
            Err(_) => Ok(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.segments == 0 {
            return bad("segment count must be at least 1".into());
        }
        if !(self.histogram.bin_width > 0.0) || !self.histogram.origin.is_finite() {
            return bad(format!("histogram bin width {}", self.histogram.bin_width));
        }
        if self.report.ngram_orders.contains(&0) {
            return Err(Error::InvalidN(0));
        }
        let paths = self.inputs.iter().chain(&self.acoustic_checkpoint).chain(&self.text_checkpoint);
        for p in paths {
            if !p.exists() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// The settings that determine the report's content. Worker count and
    /// output location are left out so they cannot change report bytes.
    pub fn echo(&self, seed: u64) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let map = v.as_object_mut().expect("config is an object");
        map.remove("workers");
        map.remove("output");
        map.insert("seed".into(), seed.into());
        v
    }
}

/// Hex SHA-256 of the compact JSON of `value` (keys in lexicographic order).
pub fn config_hash(value: &serde_json::Value) -> String {
    let digest = Sha256::digest(value.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// WAV inputs in path order: files as given, directories expanded to their
/// `.wav` entries.
pub fn discover_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let rd = std::fs::read_dir(p).map_err(|e| Error::io(p, e))?;
            for entry in rd {
                let path = entry.map_err(|e| Error::io(p, e))?.path();
                let wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
                if wav && path.is_file() {
                    files.push(path);
                }
            }
        } else {
            files.push(p.clone());
        }
    }
    files.sort();
    files.dedup();
    Ok(files)
}

/// Acoustic and text models shared read-only by all workers.
pub struct Models {
    pub acoustic: AcousticModel,
    pub text: TextModel,
}

impl Models {
    pub fn load(cfg: &PipelineConfig, seed: u64) -> Result<Self> {
        let acoustic = match &cfg.acoustic_checkpoint {
            Some(p) => AcousticModel::from_checkpoint(&Checkpoint::load(p)?)?,
            None => AcousticModel::new(AcousticConfig::default(), seed)?,
        };
        let text = match &cfg.text_checkpoint {
            Some(p) => TextModel::from_checkpoint(&Checkpoint::load(p)?)?,
            None => TextModel::new(TextConfig::default(), seed)?,
        };
        Ok(Self { acoustic, text })
    }
}

/// Transcript of one segment; empty when it is too short to yield a frame.
pub fn transcribe_segment(model: &AcousticModel, seg: &Segment<f64>) -> Result<String> {
    match model.transcribe(seg) {
        Err(Error::EmptyEncoding(_)) => Ok(String::new()),
        other => other,
    }
}

/// Loads a file, converts it to 16 kHz mono and cuts it into `segments`.
pub fn load_segments(path: &Path, segments: usize) -> Result<Vec<Segment<f64>>> {
    let wave = load_wav::<f64>(path)?.to_mono_16k();
    wave.segment(segments, &path.to_string_lossy())
}

/// Segment transcripts joined by single spaces.
pub fn transcribe_file(model: &AcousticModel, path: &Path, segments: usize) -> Result<PhoneticTranscript> {
    let segs = load_segments(path, segments)?;
    let words = segs.iter().map(|s| transcribe_segment(model, s)).collect::<Result<Vec<_>>>()?;
    Ok(PhoneticTranscript::new(words.join(" "), path.to_string_lossy()))
}

/// Transcribes every file listed in `<dir>/labels.csv`, in source id order.
/// Ids are file stems; the WAV is `<dir>/<id>.wav`.
pub fn transcribe_labeled_dir(
    model: &AcousticModel,
    dir: &Path,
    segments: usize,
    workers: usize,
) -> Result<Vec<LabeledTranscript>> {
    let labels: Vec<(String, Sentiment)> = load_labels(dir.join("labels.csv"))?.into_iter().collect();
    let pool = crate::worker_pool(workers)?;
    pool.install(|| {
        labels
            .par_iter()
            .map(|(id, label)| {
                let path = dir.join(format!("{id}.wav"));
                Ok(LabeledTranscript { transcript: transcribe_file(model, &path, segments)?, label: *label })
            })
            .collect()
    })
}

/// The most frequent segment label. Ties go to the label with the higher
/// summed probability, then to the earlier label.
pub fn majority_label(results: &[SentimentResult]) -> Option<Sentiment> {
    if results.is_empty() {
        return None;
    }
    let mut votes = [0usize; 3];
    let mut mass = [0.0f64; 3];
    for r in results {
        votes[r.label.index()] += 1;
        for (m, p) in mass.iter_mut().zip(r.probs) {
            *m += p;
        }
    }
    let best = (0..3).fold(0, |b, i| if (votes[i], mass[i]) > (votes[b], mass[b]) { i } else { b });
    Sentiment::from_index(best)
}

fn mean_mfcc(ex: &MfccExtractor<f64>, seg: &Segment<f64>) -> Result<Vec<f64>> {
    let frames = ex.extract(seg)?;
    let n = frames.len().max(1) as f64;
    let width = frames.first().map_or(0, Vec::len);
    Ok((0..width).map(|k| frames.iter().map(|f| f[k]).sum::<f64>() / n).collect())
}

pub fn process_file(models: &Models, cfg: &PipelineConfig, path: &Path) -> Result<FileRecord> {
    let segs = load_segments(path, cfg.segments)?;
    let mfcc = cfg.report.mfcc.then(|| MfccExtractor::new(cfg.mfcc));
    let source = path.to_string_lossy().into_owned();
    let mut records = Vec::with_capacity(segs.len());
    for seg in &segs {
        let pitch = estimate_pitch(seg, &cfg.pitch)?;
        let t = PhoneticTranscript::new(transcribe_segment(&models.acoustic, seg)?, source.clone());
        let sentiment = models.text.classify(&t)?;
        records.push(SegmentRecord {
            index: seg.index,
            pitch,
            phonetics: count_phonetics(&t),
            transcript: t.text,
            sentiment,
            mfcc: mfcc.as_ref().map(|ex| mean_mfcc(ex, seg)).transpose()?,
        });
    }
    let results: Vec<SentimentResult> = records.iter().map(|r| r.sentiment.clone()).collect();
    let transcript = records.iter().map(|r| r.transcript.as_str()).collect::<Vec<_>>().join(" ");
    Ok(FileRecord { path: source, transcript, sentiment: majority_label(&results), segments: records })
}

/// Runs the whole batch and writes `report.json` and `manifest.json` into
/// the output directory. Files that fail are listed under `errors`; only an
/// unusable output directory or checkpoint stops the run.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<AnalysisReport> {
    let report = analyze(cfg)?;
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    let path = cfg.output.join("report.json");
    std::fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    let path = cfg.output.join("manifest.json");
    std::fs::write(&path, report::sorted_json(&report.manifest())).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// [`run_pipeline`] without touching the filesystem beyond reading inputs.
pub fn analyze(cfg: &PipelineConfig) -> Result<AnalysisReport> {
    cfg.validate()?;
    let seed = cfg.resolved_seed()?;
    let models = Models::load(cfg, seed)?;
    let files = discover_inputs(&cfg.inputs)?;
    let pool = crate::worker_pool(cfg.workers)?;
    let results: Vec<Result<FileRecord>> =
        pool.install(|| files.par_iter().map(|p| process_file(&models, cfg, p)).collect());
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (path, r) in files.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => errors.push(FileError { path: path.to_string_lossy().into_owned(), error: e.to_string() }),
        }
    }
    let aggregates = Aggregates::fold(&records, cfg)?;
    let echo = cfg.echo(seed);
    Ok(AnalysisReport {
        format_version: REPORT_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config_hash: config_hash(&echo),
        config: echo,
        normalization: report::NORMALIZATION.to_string(),
        cohort: cfg.cohort.clone(),
        files: records,
        errors,
        aggregates,
        comparison: None,
        training: None,
    })
}
