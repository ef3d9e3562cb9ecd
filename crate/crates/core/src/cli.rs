//! Command-line front end: one binary with subcommands for data synthesis,
//! training, evaluation and prediction.
//!
//! A TOML config file is the source of truth and flags override it. Every
//! command writes the fully resolved config next to its outputs, so a run can
//! be repeated from that file alone.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{ModelCheckpoint, ModelKind};
use crate::classifier::{train_classifier, ClassifierConfig, ClassifierNet, TrainConfig};
use crate::detector::{
    parse_detection_records, train_detector, write_detection_records, DetectionRecord, DetectorConfig, DetectorNet,
    DetectorTrainConfig,
};
use crate::error::Error;
use crate::evaluation::{accuracy, mean_average_precision_tagged, reference, EvalReport, Tagged};
use crate::skeleton_data::{
    parse_pkummd_labels, read_sequence, synthesize_dataset, write_pkummd_labels, write_sequence, SkeletonSequence,
    SynthConfig, SynthMode,
};

/// Environment variable capping the worker threads used for inference.
pub const THREADS_ENV: &str = "SKELCONV_THREADS";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const SEQUENCE_EXT: &str = "skel";
pub const LABEL_EXT: &str = "csv";

#[derive(Debug, Parser)]
#[command(
    name = "skelconv",
    version,
    about = "Skeleton action classification and temporal detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (trimmed for classification, untrimmed for detection).
    Synth(CommonArgs),
    /// Train the action classifier.
    TrainCls(CommonArgs),
    /// Train the temporal action detector.
    TrainDet(CommonArgs),
    /// Classification accuracy of a checkpoint on a dataset.
    EvalCls(CommonArgs),
    /// Detection mAP of a checkpoint on a dataset.
    EvalDet(CommonArgs),
    /// Per-sequence class predictions or detection records.
    Predict(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory, or a single sequence file for predict.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Optional validation dataset for train-cls.
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    /// IoU threshold for eval-det; repeatable.
    #[arg(long = "theta")]
    pub thetas: Vec<f64>,
    /// synth only: `trimmed` or `untrimmed`.
    #[arg(long)]
    pub mode: Option<String>,
}

/// Everything a run needs, as read from and written to TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub thetas: Vec<f64>,
    pub synth: SynthConfig,
    pub classifier: ClassifierConfig,
    pub train: TrainConfig,
    pub detector: DetectorConfig,
    pub detector_train: DetectorTrainConfig,
}

impl Default for RunConfig {
    /// Desk-scale defaults matched to the default synthetic data.
    fn default() -> Self {
        let synth = SynthConfig::default();
        RunConfig {
            seed: 0,
            data: None,
            val_data: None,
            out_dir: PathBuf::from("runs"),
            checkpoint: None,
            thetas: reference::DETECTION_THETAS.to_vec(),
            classifier: ClassifierConfig::tiny(synth.joints, synth.class_count),
            train: TrainConfig::default(),
            detector: DetectorConfig::tiny(synth.joints, synth.class_count),
            detector_train: DetectorTrainConfig::default(),
            synth,
        }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Failed(format!("cannot serialise config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Failed(format!("invalid config: {e}")))
    }

    /// Loads the config file (if any) and applies flag overrides.
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|_| CliError::MissingPath(path.clone()))?;
                Self::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(p) = &args.out_dir {
            cfg.out_dir = p.clone();
        }
        if let Some(p) = &args.checkpoint {
            cfg.checkpoint = Some(p.clone());
        }
        if let Some(p) = &args.data {
            cfg.data = Some(p.clone());
        }
        if let Some(p) = &args.val_data {
            cfg.val_data = Some(p.clone());
        }
        if !args.thetas.is_empty() {
            cfg.thetas = args.thetas.clone();
        }
        if let Some(m) = &args.mode {
            cfg.synth.mode = match m.as_str() {
                "trimmed" => SynthMode::Trimmed,
                "untrimmed" => SynthMode::Untrimmed,
                other => return Err(CliError::Failed(format!("unknown synth mode {other:?}"))),
            };
        }
        Ok(cfg)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("path not found: {}", .0.display())]
    MissingPath(PathBuf),
    #[error("checkpoint does not match: {0}")]
    Mismatch(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingPath(_) => 2,
            CliError::Mismatch(_) => 3,
            CliError::Failed(_) | CliError::Core(_) => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Reads `SKELCONV_THREADS` and sizes the global rayon pool.
pub fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // Fails only if the pool already exists, which is harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&RunConfig::resolve(&a)?),
        Command::TrainCls(a) => cmd_train_cls(&RunConfig::resolve(&a)?),
        Command::TrainDet(a) => cmd_train_det(&RunConfig::resolve(&a)?),
        Command::EvalCls(a) => cmd_eval_cls(&RunConfig::resolve(&a)?),
        Command::EvalDet(a) => cmd_eval_det(&RunConfig::resolve(&a)?),
        Command::Predict(a) => cmd_predict(&RunConfig::resolve(&a)?),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn prepare_out_dir(cfg: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
    write_file(&cfg.out_dir.join(RESOLVED_CONFIG), &cfg.to_toml()?)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> CliResult<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| CliError::Failed(format!("no {what} given (flag or config)")))
}

/// A sequence with its identifier (the file stem).
#[derive(Debug, Clone, PartialEq)]
pub struct NamedSequence {
    pub id: String,
    pub sequence: SkeletonSequence,
}

/// Reads `*.skel` files in name order. A sibling `<stem>.csv` holds segment
/// labels and replaces any segments stored in the sequence file.
pub fn load_dataset(path: &Path) -> CliResult<Vec<NamedSequence>> {
    if !path.exists() {
        return Err(CliError::MissingPath(path.to_path_buf()));
    }
    let files: Vec<PathBuf> = if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| io_err(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == SEQUENCE_EXT))
            .collect();
        v.sort();
        v
    };
    if files.is_empty() {
        return Err(CliError::Failed(format!(
            "no .{SEQUENCE_EXT} files in {}",
            path.display()
        )));
    }
    files
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).map_err(|e| io_err(f, e))?;
            let mut sequence = read_sequence(&text).map_err(|e| CliError::Failed(format!("{}: {e}", f.display())))?;
            let labels = f.with_extension(LABEL_EXT);
            if labels.exists() {
                let text = fs::read_to_string(&labels).map_err(|e| io_err(&labels, e))?;
                let parsed =
                    parse_pkummd_labels(&text).map_err(|e| CliError::Failed(format!("{}: {e}", labels.display())))?;
                sequence.segments = Some(parsed.windows);
            }
            let id = f
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(NamedSequence { id, sequence })
        })
        .collect()
}

fn sequences(data: &[NamedSequence]) -> Vec<SkeletonSequence> {
    data.iter().map(|n| n.sequence.clone()).collect()
}

fn check_joints(data: &[NamedSequence], expected: usize) -> CliResult<()> {
    for n in data {
        if let Some(j) = n.sequence.joint_count() {
            if j != expected {
                return Err(CliError::Mismatch(format!(
                    "sequence {} has {j} joints, model expects {expected}",
                    n.id
                )));
            }
        }
    }
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig, kind: ModelKind) -> CliResult<ModelCheckpoint> {
    let path = required(&cfg.checkpoint, "checkpoint")?;
    if !path.exists() {
        return Err(CliError::MissingPath(path.clone()));
    }
    let ck = ModelCheckpoint::load(path).map_err(|e| CliError::Mismatch(e.to_string()))?;
    if ck.kind != kind {
        return Err(CliError::Mismatch(format!(
            "expected a {kind:?} checkpoint, found {:?}",
            ck.kind
        )));
    }
    Ok(ck)
}

fn load_classifier(cfg: &RunConfig) -> CliResult<ClassifierNet> {
    let ck = load_checkpoint(cfg, ModelKind::Classifier)?;
    ClassifierNet::from_checkpoint(&ck).map_err(|e| CliError::Mismatch(e.to_string()))
}

fn load_detector(cfg: &RunConfig) -> CliResult<DetectorNet> {
    let ck = load_checkpoint(cfg, ModelKind::Detector)?;
    DetectorNet::from_checkpoint(&ck).map_err(|e| CliError::Mismatch(e.to_string()))
}

fn json_lines<T: Serialize>(items: &[T]) -> CliResult<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(Error::from)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_synth(cfg: &RunConfig) -> CliResult<()> {
    let data = synthesize_dataset(&cfg.synth, cfg.seed)?;
    prepare_out_dir(cfg)?;
    for (i, seq) in data.iter().enumerate() {
        let stem = format!("seq_{i:04}");
        write_file(
            &cfg.out_dir.join(format!("{stem}.{SEQUENCE_EXT}")),
            &write_sequence(seq),
        )?;
        if let Some(segments) = &seq.segments {
            write_file(
                &cfg.out_dir.join(format!("{stem}.{LABEL_EXT}")),
                &write_pkummd_labels(segments),
            )?;
        }
    }
    info!("wrote {} sequences to {}", data.len(), cfg.out_dir.display());
    Ok(())
}

pub fn cmd_train_cls(cfg: &RunConfig) -> CliResult<()> {
    let train = load_dataset(required(&cfg.data, "dataset")?)?;
    let val = cfg.val_data.as_deref().map(load_dataset).transpose()?;
    check_joints(&train, cfg.classifier.n_joints)?;
    prepare_out_dir(cfg)?;
    let val_seqs = val.as_deref().map(sequences);
    let out = train_classifier(
        &sequences(&train),
        val_seqs.as_deref(),
        &cfg.classifier,
        &cfg.train,
        cfg.seed,
    )?;
    out.model.to_checkpoint()?.save(&cfg.out_dir.join("checkpoint.json"))?;
    write_file(&cfg.out_dir.join("metrics.jsonl"), &json_lines(&out.history)?)?;
    if let Some(last) = out.history.last() {
        println!(
            "epochs {} best_epoch {} train_accuracy {} val_accuracy {:?}",
            out.history.len(),
            out.best_epoch,
            last.train_accuracy,
            last.val_accuracy
        );
    }
    Ok(())
}

pub fn cmd_train_det(cfg: &RunConfig) -> CliResult<()> {
    let train = load_dataset(required(&cfg.data, "dataset")?)?;
    check_joints(&train, cfg.detector.n_joints)?;
    prepare_out_dir(cfg)?;
    let out = train_detector(&sequences(&train), &cfg.detector, &cfg.detector_train, cfg.seed)?;
    out.model.to_checkpoint()?.save(&cfg.out_dir.join("checkpoint.json"))?;
    write_file(&cfg.out_dir.join("metrics.jsonl"), &json_lines(&out.losses)?)?;
    if let Some(last) = out.losses.last() {
        println!("iterations {} final_loss {}", out.losses.len(), last.total);
    }
    Ok(())
}

fn write_report(cfg: &RunConfig, report: &EvalReport) -> CliResult<()> {
    write_file(&cfg.out_dir.join("eval_report.json"), &report.to_json()?)?;
    write_file(&cfg.out_dir.join("per_class_ap.csv"), &report.per_class_csv())
}

pub fn cmd_eval_cls(cfg: &RunConfig) -> CliResult<()> {
    let net = load_classifier(cfg)?;
    let data = load_dataset(required(&cfg.data, "dataset")?)?;
    check_joints(&data, net.config().n_joints)?;
    prepare_out_dir(cfg)?;
    let labels: Vec<usize> = data
        .iter()
        .map(|n| {
            n.sequence
                .label
                .ok_or_else(|| CliError::Failed(format!("sequence {} has no label", n.id)))
        })
        .collect::<CliResult<_>>()?;
    let preds: Vec<usize> = data
        .par_iter()
        .map(|n| net.predict(&n.sequence).map(|p| p.class_id))
        .collect::<Result<_, _>>()?;
    let acc = accuracy(&preds, &labels)?;
    let report = EvalReport {
        accuracy: Some(acc),
        counts: crate::evaluation::EvalCounts {
            sequences: data.len(),
            ground_truth: labels.len(),
            detections: preds.len(),
        },
        ..EvalReport::default()
    };
    write_file(&cfg.out_dir.join("eval_report.json"), &report.to_json()?)?;
    println!("accuracy {acc}");
    Ok(())
}

/// Detections for every sequence, in dataset order.
pub fn detect_all(net: &DetectorNet, data: &[NamedSequence]) -> CliResult<Vec<DetectionRecord>> {
    let per_seq: Vec<Vec<DetectionRecord>> = data
        .par_iter()
        .map(|n| {
            net.forward_detect(&n.sequence).map(|ws| {
                ws.into_iter()
                    .map(|window| DetectionRecord {
                        sequence_id: n.id.clone(),
                        window,
                    })
                    .collect()
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(per_seq.into_iter().flatten().collect())
}

/// mAP of detection records against the segments of `data`.
pub fn evaluate_records(records: &[DetectionRecord], data: &[NamedSequence], thetas: &[f64]) -> CliResult<EvalReport> {
    let ids: Vec<&str> = data.iter().map(|n| n.id.as_str()).collect();
    let unknown: BTreeSet<&str> = records
        .iter()
        .map(|r| r.sequence_id.as_str())
        .filter(|id| !ids.contains(id))
        .collect();
    if !unknown.is_empty() {
        return Err(CliError::Failed(format!(
            "detections for unknown sequences {unknown:?}"
        )));
    }
    let dets: Vec<Tagged> = records
        .iter()
        .map(|r| {
            (
                ids.iter().position(|id| *id == r.sequence_id).expect("checked"),
                r.window,
            )
        })
        .collect();
    let gts: Vec<Tagged> = data
        .iter()
        .enumerate()
        .flat_map(|(i, n)| n.sequence.segments.iter().flatten().map(move |w| (i, *w)))
        .collect();
    Ok(mean_average_precision_tagged(&dets, &gts, thetas)?)
}

pub fn cmd_eval_det(cfg: &RunConfig) -> CliResult<()> {
    let net = load_detector(cfg)?;
    let data = load_dataset(required(&cfg.data, "dataset")?)?;
    check_joints(&data, net.config().n_joints)?;
    prepare_out_dir(cfg)?;
    let records = detect_all(&net, &data)?;
    let text = write_detection_records(&records);
    debug_assert_eq!(
        parse_detection_records(&text).map(|r| r.len()).ok(),
        Some(records.len())
    );
    write_file(&cfg.out_dir.join("detections.csv"), &text)?;
    let report = evaluate_records(&records, &data, &cfg.thetas)?;
    write_report(cfg, &report)?;
    let mut line = String::new();
    for (theta, map) in &report.map_at_theta {
        let _ = write!(line, "mAP@{theta} {map} ");
    }
    println!("{}", line.trim_end());
    Ok(())
}

pub fn cmd_predict(cfg: &RunConfig) -> CliResult<()> {
    let path = required(&cfg.checkpoint, "checkpoint")?;
    if !path.exists() {
        return Err(CliError::MissingPath(path.clone()));
    }
    let kind = ModelCheckpoint::load(path)
        .map_err(|e| CliError::Mismatch(e.to_string()))?
        .kind;
    let data = load_dataset(required(&cfg.data, "dataset")?)?;
    prepare_out_dir(cfg)?;
    let text = match kind {
        ModelKind::Detector => {
            let net = load_detector(cfg)?;
            check_joints(&data, net.config().n_joints)?;
            write_detection_records(&detect_all(&net, &data)?)
        }
        ModelKind::Classifier => {
            let net = load_classifier(cfg)?;
            check_joints(&data, net.config().n_joints)?;
            let preds = data
                .par_iter()
                .map(|n| net.predict(&n.sequence))
                .collect::<Result<Vec<_>, _>>()?;
            let mut out = String::new();
            for (n, p) in data.iter().zip(preds) {
                let _ = writeln!(out, "{},{},{}", n.id, p.class_id, p.scores[p.class_id]);
            }
            out
        }
    };
    write_file(&cfg.out_dir.join("predictions.csv"), &text)?;
    print!("{text}");
    Ok(())
}
