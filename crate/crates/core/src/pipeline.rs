//! File-level commands: generate, train, evaluate and report.
//!
//! Every command writes its artifacts first and a `*.manifest.json` last, so
//! a directory without the manifest holds an incomplete run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::Table;

use crate::config::{config_hash, load_table, resolve};
use crate::dataset::{generate_split, AuditReport, DatasetConfig, Split, TrajectoryDataset};
use crate::error::{EcfError, Result};
use crate::grid::Precision;
use crate::io::{read_dataset, write_atomic, write_dataset};
use crate::metrics::{emit_report, load_records, write_record, MetricsRecord, ReportFormat, Variant};
use crate::operator::{read_checkpoint, write_checkpoint, OperatorConfig, OperatorModel};
use crate::solvers::ProblemKind;
use crate::training::{
    evaluate_dataset, train, variant_for, CorrectionMode, EpochRecord, Evaluation, TrainConfig, TrainMode,
};

pub const TOOL_VERSION: &str = concat!("ecf ", env!("CARGO_PKG_VERSION"));
pub const DATASET_RECORD: &str = "dataset.toml";
pub const TRAIN_RECORD: &str = "train.toml";
const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub tool_version: String,
    pub config_hashes: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<PathBuf>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    fn start(command: &[String]) -> Self {
        RunManifest {
            command: command.to_vec(),
            tool_version: TOOL_VERSION.to_string(),
            config_hashes: BTreeMap::new(),
            seeds: Vec::new(),
            artifacts: Vec::new(),
            started_unix: now(),
            finished_unix: 0.0,
        }
    }

    /// Stamps the finish time and writes `<name>.manifest.json` into `dir`.
    fn finish(mut self, dir: &Path, name: &str) -> Result<PathBuf> {
        self.finished_unix = now();
        let path = dir.join(format!("{name}{MANIFEST_SUFFIX}"));
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        write_atomic(&path, format!("{json}\n").as_bytes())?;
        Ok(path)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| EcfError::io(dir, e))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| EcfError::Config(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| EcfError::io(path, e))?;
    toml::from_str(&text).map_err(|e| EcfError::Config(format!("{}: {}", path.display(), e.message())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        }
    }

    pub fn preset(self, problem: ProblemKind) -> DatasetConfig {
        match self {
            Scale::Desk => DatasetConfig::desk(problem),
            Scale::Paper => DatasetConfig::paper(problem),
        }
    }
}

/// What `gen` records next to the split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    /// `desk`, `paper`, or `custom` when the grid or sample counts differ from the preset.
    pub scale: String,
    pub precision: Precision,
    pub dataset: DatasetConfig,
}

#[derive(Debug, Clone, Default)]
pub struct GenRequest {
    pub problem: Option<ProblemKind>,
    pub config_file: Option<PathBuf>,
    pub scale: Scale,
    /// Applied after the file, in order.
    pub overrides: Vec<Table>,
    pub precision: Option<Precision>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct GenOutcome {
    pub record: DatasetRecord,
    pub audits: Vec<(Split, AuditReport)>,
    pub manifest: PathBuf,
}

/// Preset for the chosen scale, then the config file, then the overrides.
pub fn resolve_dataset_config(req: &GenRequest) -> Result<(DatasetConfig, String)> {
    let file = req.config_file.as_deref().map(load_table).transpose()?;
    let from_file = file
        .as_ref()
        .and_then(|t| t.get("problem"))
        .map(|v| {
            v.as_str()
                .ok_or_else(|| EcfError::Config("'problem' must be a string".into()))?
                .parse::<ProblemKind>()
        })
        .transpose()?;
    let problem = req
        .problem
        .or(from_file)
        .ok_or_else(|| EcfError::Config("no problem given (use --problem or a config file)".into()))?;
    let preset = req.scale.preset(problem);
    let mut layers: Vec<Table> = file.into_iter().collect();
    layers.extend(req.overrides.iter().cloned());
    let mut forced = Table::new();
    forced.insert("problem".into(), toml::Value::String(problem.name().into()));
    layers.push(forced);
    let config: DatasetConfig = resolve(&preset, layers)?;
    config.validate()?;
    let scale = if config.resolution == preset.resolution && config.counts == preset.counts {
        req.scale.name()
    } else {
        "custom"
    };
    Ok((config, scale.to_string()))
}

pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.ecfd", split.name()))
}

/// Generates, audits and writes all three splits.
pub fn run_gen(req: &GenRequest, command: &[String]) -> Result<GenOutcome> {
    let mut manifest = RunManifest::start(command);
    let (config, scale) = resolve_dataset_config(req)?;
    let precision = req.precision.unwrap_or(Precision::F64);
    create_dir(&req.out_dir)?;
    let mut audits = Vec::new();
    for split in Split::ALL {
        let ds = generate_split(&config, split)?;
        let audit = ds.meta.audit.expect("generator records an audit");
        if !audit.passed() {
            return Err(EcfError::AuditFailed(format!(
                "{split} split of {}: drift {:e} (tolerance {:e}), flux residual {:e} (tolerance {:e})",
                config.problem, audit.max_drift, audit.drift_tolerance, audit.max_flux_residual, audit.flux_tolerance
            )));
        }
        audits.push((split, audit));
        let path = split_path(&req.out_dir, split);
        write_dataset(&ds, &path, precision)?;
        manifest.artifacts.push(crate::io::sidecar_path(&path));
        manifest.artifacts.push(path);
    }
    let record = DatasetRecord {
        scale,
        precision,
        dataset: config,
    };
    let record_path = req.out_dir.join(DATASET_RECORD);
    write_toml(&record_path, &record)?;
    manifest.artifacts.push(record_path);
    manifest.config_hashes.insert("dataset".into(), config_hash(&record.dataset));
    manifest.seeds.push(record.dataset.master_seed);
    let manifest = manifest.finish(&req.out_dir, "gen")?;
    Ok(GenOutcome {
        record,
        audits,
        manifest,
    })
}

/// Reads one split and the scale label recorded by `gen` (or `custom`).
pub fn load_split(data_dir: &Path, split: Split) -> Result<(TrajectoryDataset, String)> {
    let ds = read_dataset(&split_path(data_dir, split))?;
    let record = data_dir.join(DATASET_RECORD);
    let scale = if record.exists() {
        read_toml::<DatasetRecord>(&record)?.scale
    } else {
        "custom".to_string()
    };
    Ok((ds, scale))
}

/// Backbone size; channels come from the dataset and the seed from the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub layers: usize,
    pub width: usize,
    pub modes: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let c = OperatorConfig::new(1);
        ModelSettings {
            layers: c.layers,
            width: c.width,
            modes: c.modes,
        }
    }
}

impl ModelSettings {
    pub fn operator(self, channels: usize, seed: u64) -> OperatorConfig {
        OperatorConfig {
            channels,
            layers: self.layers,
            width: self.width,
            modes: self.modes,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub train: TrainConfig,
    pub model: ModelSettings,
}

impl TrainSettings {
    /// Desk scale trains 200 epochs, paper scale 1000.
    pub fn preset(scale: Scale) -> Self {
        let mut s = TrainSettings::default();
        if scale == Scale::Paper {
            s.train.epochs = 1000;
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainRequest {
    pub data_dir: PathBuf,
    pub scale: Scale,
    pub config_file: Option<PathBuf>,
    pub overrides: Vec<Table>,
    pub out_dir: PathBuf,
}

/// Per-seed summary stored as `seed<N>/run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub dataset: ProblemKind,
    pub mode: TrainMode,
    pub seed: u64,
    pub best_epoch: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRunOutcome {
    pub settings: TrainSettings,
    pub runs: Vec<SeedRun>,
    pub manifest: PathBuf,
}

pub fn resolve_train_settings(req: &TrainRequest) -> Result<TrainSettings> {
    let file = req.config_file.as_deref().map(load_table).transpose()?;
    let layers = file.into_iter().chain(req.overrides.iter().cloned());
    resolve(&TrainSettings::preset(req.scale), layers)
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed{seed}"))
}

fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in log {
        text.push_str(&serde_json::to_string(r).expect("log record serializes"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Trains one model per configured seed. Seeds run as independent jobs.
/// A diverging seed keeps its partial log and fails the command.
pub fn run_train(req: &TrainRequest, command: &[String]) -> Result<TrainRunOutcome> {
    let mut manifest = RunManifest::start(command);
    let settings = resolve_train_settings(req)?;
    if settings.train.seeds.is_empty() {
        return Err(EcfError::Config("no training seeds configured".into()));
    }
    let (train_set, _) = load_split(&req.data_dir, Split::Train)?;
    let (valid_set, _) = load_split(&req.data_dir, Split::Valid)?;
    settings.train.validate(train_set.len())?;
    create_dir(&req.out_dir)?;
    let settings_path = req.out_dir.join(TRAIN_RECORD);
    write_toml(&settings_path, &settings)?;

    let results: Vec<Result<(SeedRun, Vec<PathBuf>)>> = settings
        .train
        .seeds
        .par_iter()
        .map(|&seed| {
            let dir = seed_dir(&req.out_dir, seed);
            create_dir(&dir)?;
            let log_path = dir.join("log.jsonl");
            let config = settings.model.operator(train_set.channels, seed);
            match train(&train_set, &valid_set, config, &settings.train, seed) {
                Ok(out) => {
                    let model_path = dir.join("model.ecfm");
                    let run_path = dir.join("run.json");
                    write_log(&log_path, &out.log)?;
                    write_checkpoint(&out.model, &model_path)?;
                    let run = SeedRun {
                        dataset: train_set.problem,
                        mode: settings.train.mode,
                        seed,
                        best_epoch: out.best_epoch,
                        final_loss: out.log.last().map_or(f64::NAN, |r| r.loss),
                    };
                    let json = serde_json::to_string_pretty(&run).expect("run serializes");
                    write_atomic(&run_path, format!("{json}\n").as_bytes())?;
                    Ok((run, vec![log_path, model_path, run_path]))
                }
                Err(failure) => {
                    write_log(&log_path, &failure.log)?;
                    Err(failure.error)
                }
            }
        })
        .collect();
    let mut runs = Vec::new();
    manifest.artifacts.push(settings_path);
    for r in results {
        let (run, paths) = r?;
        runs.push(run);
        manifest.artifacts.extend(paths);
    }
    let data_record = req.data_dir.join(DATASET_RECORD);
    if data_record.exists() {
        let record: DatasetRecord = read_toml(&data_record)?;
        manifest.config_hashes.insert("dataset".into(), config_hash(&record.dataset));
    }
    manifest.config_hashes.insert("train".into(), config_hash(&settings));
    manifest.seeds = settings.train.seeds.clone();
    let manifest = manifest.finish(&req.out_dir, "train")?;
    Ok(TrainRunOutcome {
        settings,
        runs,
        manifest,
    })
}

#[derive(Debug, Clone, Default)]
pub struct EvalRequest {
    /// A checkpoint file, a `seed<N>` directory or a training output directory.
    pub checkpoint: PathBuf,
    pub data_dir: PathBuf,
    /// Defaults to the pairing of the training mode (off when unknown).
    pub correction: Option<CorrectionMode>,
    /// Defaults to the label implied by the correction.
    pub variant: Option<Variant>,
    pub split: Option<Split>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub evaluations: Vec<Evaluation>,
    pub records: Vec<PathBuf>,
    pub manifest: PathBuf,
}

struct Candidate {
    model: OperatorModel,
    seed: u64,
    mode: Option<TrainMode>,
}

fn load_candidate(model_path: &Path) -> Result<Candidate> {
    let model = read_checkpoint(model_path)?;
    let run_path = model_path.with_file_name("run.json");
    let run: Option<SeedRun> = if run_path.exists() {
        let text = fs::read_to_string(&run_path).map_err(|e| EcfError::io(&run_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| EcfError::Format(format!("{}: {e}", run_path.display())))?)
    } else {
        None
    };
    Ok(Candidate {
        seed: run.as_ref().map_or(model.config().seed, |r| r.seed),
        mode: run.map(|r| r.mode),
        model,
    })
}

fn find_checkpoints(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let direct = path.join("model.ecfm");
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let mut found: Vec<(u64, PathBuf)> = fs::read_dir(path)
        .map_err(|e| EcfError::io(path, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let seed = name.strip_prefix("seed")?.parse::<u64>().ok()?;
            let model = e.path().join("model.ecfm");
            model.is_file().then_some((seed, model))
        })
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(EcfError::InvalidArgument(format!("no checkpoints found under {}", path.display())));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn check_compatible(model: &OperatorModel, ds: &TrajectoryDataset) -> Result<()> {
    let cfg = model.config();
    if cfg.channels != ds.channels {
        return Err(EcfError::ShapeMismatch(format!(
            "checkpoint expects {} channel(s), {} dataset has {}",
            cfg.channels, ds.problem, ds.channels
        )));
    }
    if model.dims() != ds.grid.dims() {
        return Err(EcfError::ShapeMismatch(format!(
            "checkpoint is {}-D, dataset grid is {}-D",
            model.dims(),
            ds.grid.dims()
        )));
    }
    cfg.check_grid(&ds.grid)
}

pub fn run_eval(req: &EvalRequest, command: &[String]) -> Result<EvalOutcome> {
    let mut manifest = RunManifest::start(command);
    let split = req.split.unwrap_or(Split::Test);
    let (test_set, scale) = load_split(&req.data_dir, split)?;
    let candidates = find_checkpoints(&req.checkpoint)?
        .iter()
        .map(|p| load_candidate(p))
        .collect::<Result<Vec<_>>>()?;
    let mut evaluations = Vec::new();
    let mut records = Vec::new();
    let mut variants = Vec::new();
    for c in &candidates {
        check_compatible(&c.model, &test_set)?;
        let correction = req
            .correction
            .or(c.mode.map(TrainMode::evaluation_correction))
            .unwrap_or(CorrectionMode::Off);
        let variant = req.variant.unwrap_or(variant_for(correction));
        let eval = evaluate_dataset(&c.model, &test_set, correction, variant, c.seed, &scale)?;
        records.push(write_record(&eval.record, &req.out_dir)?);
        manifest.seeds.push(c.seed);
        variants.push(variant);
        evaluations.push(eval);
    }
    variants.sort_unstable();
    variants.dedup();
    manifest.artifacts = records.clone();
    let name = format!(
        "eval_{}_{}",
        test_set.problem.name(),
        variants.iter().map(|v| v.name()).collect::<Vec<_>>().join("_")
    );
    let manifest = manifest.finish(&req.out_dir, &name)?;
    Ok(EvalOutcome {
        evaluations,
        records,
        manifest,
    })
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub records: Vec<MetricsRecord>,
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Collects metrics records from every directory in `records_dirs`.
pub fn run_report(
    records_dirs: &[PathBuf],
    out_dir: &Path,
    format: ReportFormat,
    command: &[String],
) -> Result<ReportOutcome> {
    let mut manifest = RunManifest::start(command);
    let mut records = Vec::new();
    for dir in records_dirs {
        records.extend(load_records(dir)?);
    }
    let files = emit_report(&records, out_dir, format)?;
    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    manifest.seeds = seeds;
    manifest.artifacts = files.clone();
    let manifest = manifest.finish(out_dir, "report")?;
    Ok(ReportOutcome {
        records,
        files,
        manifest,
    })
}

/// True for the manifest files written by the commands above.
pub fn is_manifest(path: &Path) -> bool {
    path.file_name()
        .is_some_and(|n| n.to_string_lossy().ends_with(MANIFEST_SUFFIX))
}
