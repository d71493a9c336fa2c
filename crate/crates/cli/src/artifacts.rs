//! Reading and writing on-disk artifacts: datasets, checkpoints, CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use numcore::{checkpoint, ParamStore};
use serde::{Deserialize, Serialize};
use v2v_core::dataset::{Dataset, SplitStats};
use v2v_core::evalkit::report::provenance_line;
use v2v_core::fusion::Models;
use v2v_core::train::Stage;
use v2v_core::worldsim::read_scenario;

use crate::config::{digest, sha256_hex, RunConfig};
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const DATASET_FORMAT: &str = "v2v-dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub file: String,
    pub seed: u64,
    pub sha256: String,
    pub frames: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub stats: SplitStats,
    pub scenes: Vec<SceneEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub train: SplitEntry,
    pub test: SplitEntry,
    /// Digest of every scene file hash in order.
    pub content_hash: String,
}

impl Manifest {
    pub fn content_digest(train: &SplitEntry, test: &SplitEntry) -> String {
        let all: Vec<&str> = train.scenes.iter().chain(&test.scenes).map(|s| s.sha256.as_str()).collect();
        digest(all.join("\n").as_bytes())
    }
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, bytes).map_err(CliError::io(path))
}

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(CliError::io(path))
}

/// Provenance line, then `lines`.
pub fn write_csv(path: &Path, cfg: &RunConfig, lines: &[String]) -> Result<(), CliError> {
    let mut s = provenance_line(&cfg.hash(), cfg.seed);
    s.push('\n');
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    write(path, s.as_bytes())
}

pub fn read_manifest(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let path = cfg.data_dir().join(MANIFEST);
    if !path.exists() {
        return Err(CliError::Data(format!("{} not found; run `v2v gen` first", path.display())));
    }
    let m: Manifest = serde_json::from_slice(&read(&path)?)?;
    if m.format != DATASET_FORMAT {
        return Err(CliError::Data(format!("{}: not a dataset manifest", path.display())));
    }
    if m.config_hash != cfg.data_hash() {
        return Err(CliError::Data(format!(
            "{}: dataset was generated from a different world/dataset config or seed; rerun `v2v gen --force`",
            path.display()
        )));
    }
    Ok(m)
}

/// Loads and verifies the dataset written by `gen`.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let m = read_manifest(cfg)?;
    let dir = cfg.data_dir();
    let load = |entry: &SplitEntry| -> Result<Vec<_>, CliError> {
        entry
            .scenes
            .iter()
            .map(|s| {
                let path = dir.join(&s.file);
                let bytes = read(&path)?;
                if sha256_hex(&bytes) != s.sha256 {
                    return Err(CliError::Data(format!("{}: content hash mismatch", path.display())));
                }
                Ok(read_scenario(bytes.as_slice())?)
            })
            .collect()
    };
    Ok(Dataset::assemble(&cfg.world, &cfg.dataset, load(&m.train)?, load(&m.test)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: String,
    pub steps: usize,
    pub seed: u64,
    pub train_hash: String,
}

pub fn ckpt_path(cfg: &RunConfig, stage: Stage) -> PathBuf {
    cfg.ckpt_dir().join(format!("{}.pnpw", stage.name()))
}

pub fn save_checkpoint(cfg: &RunConfig, stage: Stage, store: &ParamStore) -> Result<PathBuf, CliError> {
    let meta = CheckpointMeta {
        stage: stage.name().into(),
        steps: cfg.train.steps(stage),
        seed: cfg.seed,
        train_hash: cfg.train_hash(),
    };
    let path = ckpt_path(cfg, stage);
    write(&path, &checkpoint::to_bytes_with_meta(store, &serde_json::to_string(&meta)?)?)?;
    Ok(path)
}

/// The stage's checkpoint if present and produced by the current config.
pub fn load_checkpoint(cfg: &RunConfig, stage: Stage) -> Result<Option<ParamStore>, CliError> {
    let path = ckpt_path(cfg, stage);
    if !path.exists() {
        return Ok(None);
    }
    let (store, meta) = checkpoint::from_bytes_with_meta(&read(&path)?)?;
    let meta: CheckpointMeta = serde_json::from_str(&meta)?;
    if meta.train_hash != cfg.train_hash() || meta.seed != cfg.seed || meta.stage != stage.name() {
        return Err(CliError::Data(format!(
            "{}: checkpoint was trained under a different config; retrain from `{}`",
            path.display(),
            stage.name()
        )));
    }
    Ok(Some(store))
}

pub fn init_models(cfg: &RunConfig) -> Models {
    Models::init(cfg.grid.clone(), cfg.model.clone(), cfg.aggregation.clone(), cfg.codec.clone(), cfg.world.sensor.sweeps, cfg.seed)
}

/// Trained weights: the pretrained single-vehicle model and the most
/// advanced fused checkpoint present.
pub fn load_models(cfg: &RunConfig) -> Result<Models, CliError> {
    let mut m = init_models(cfg);
    m.single = load_checkpoint(cfg, Stage::Pretrain)?
        .ok_or_else(|| CliError::Data(format!("{} not found; run `v2v train` first", ckpt_path(cfg, Stage::Pretrain).display())))?;
    m.fused = None;
    for stage in [Stage::TrainCodec, Stage::TrainTemporal, Stage::FinetuneFusion] {
        if let Some(s) = load_checkpoint(cfg, stage)? {
            m.fused = Some(s);
            break;
        }
    }
    Ok(m)
}
