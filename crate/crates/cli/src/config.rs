//! Run configuration: every module config in one TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use v2v_core::aggregate::AggregationConfig;
use v2v_core::channel::ChannelConfig;
use v2v_core::codec::FeatureCodecConfig;
use v2v_core::dataset::DatasetConfig;
use v2v_core::evalkit::EvalConfig;
use v2v_core::fusion::FusionConfig;
use v2v_core::pnp::{GridSpec, ModelConfig};
use v2v_core::train::TrainConfig;
use v2v_core::worldsim::WorldConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    /// Codec training steps per λ point.
    pub codec_steps: usize,
    pub sender_fractions: Vec<f64>,
    pub position_sigmas: Vec<f64>,
    pub heading_sigmas_deg: Vec<f64>,
    pub delays: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![300.0, 1000.0, 3000.0, 10000.0],
            codec_steps: 1500,
            sender_fractions: vec![0.25, 0.5, 0.75, 1.0],
            position_sigmas: vec![0.0, 0.1, 0.2, 0.4],
            heading_sigmas_deg: vec![0.0, 1.0, 2.0, 4.0],
            delays: vec![0.0, 0.025, 0.05, 0.075, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Root of every artifact the commands write.
    pub out: PathBuf,
    pub world: WorldConfig,
    pub dataset: DatasetConfig,
    pub grid: GridSpec,
    pub model: ModelConfig,
    pub aggregation: AggregationConfig,
    pub codec: FeatureCodecConfig,
    pub channel: ChannelConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("runs/default"),
            world: WorldConfig::default(),
            dataset: DatasetConfig::default(),
            grid: GridSpec::default(),
            model: ModelConfig::default(),
            aggregation: AggregationConfig::default(),
            codec: FeatureCodecConfig::default(),
            channel: ChannelConfig::default(),
            fusion: FusionConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Where each documented default comes from.
const SOURCES: &[(&str, &str)] = &[
    ("world.duration", "chosen"),
    ("world.max_sdvs", "reference: at most 7 SDVs per scene"),
    ("world.broadcast_range", "reference: 70 m"),
    ("world.range_x", "chosen (reference region is ±50 m)"),
    ("world.range_y", "chosen (reference region is ±50 m)"),
    ("dataset.train_frames", "chosen"),
    ("dataset.test_frames", "chosen"),
    ("grid.raster_resolution", "chosen"),
    ("model.channels", "chosen"),
    ("model.blocks", "chosen"),
    ("model.forecast_steps", "reference: 3 s horizon at 0.5 s"),
    ("model.nms_iou", "chosen"),
    ("aggregation.iterations", "chosen"),
    ("aggregation.max_neighbors", "reference: neighbors sampled in [0, min(c, 6)]"),
    ("codec.latent_channels", "chosen"),
    ("channel.broadcast_range", "reference: 70 m"),
    ("channel.data_rate", "reference: 25 Mbps"),
    ("channel.rate_range", "reference: 120 m"),
    ("channel.max_delay", "chosen (sweeps cover 0 to 0.1 s)"),
    ("channel.position_sigma", "chosen (sweeps reach 0.4 m)"),
    ("channel.heading_sigma_deg", "chosen (sweeps reach 4 degrees)"),
    ("train.max_delay", "reference: delay U(0, 0.1 s)"),
    ("train.lambda", "chosen"),
    ("eval.iou_thresholds", "reference: AP at IoU 0.5 and 0.7"),
    ("eval.recall_target", "reference: 90% recall"),
    ("eval.collision_tau", "reference: tau = 0.01"),
    ("eval.horizons", "reference: 1, 2, 3 s"),
];

impl RunConfig {
    /// Reads `path` (if any), applies `section.key=value` overrides, and
    /// validates.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let mut doc: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                text.parse().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for s in sets {
            apply_set(&mut doc, s)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.world.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.channel.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.dataset.frames_per_scene == 0 {
            return Err(CliError::Config("dataset.frames_per_scene must be positive".into()));
        }
        if self.world.sensor.sweeps == 0 {
            return Err(CliError::Config("world.sensor.sweeps must be positive".into()));
        }
        let (h, w) = self.grid.feature_hw();
        let f = self.codec.factor();
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(CliError::Config(format!("feature grid {h}x{w} must tile by the codec factor {f}")));
        }
        Ok(())
    }

    /// Full TOML with the source of documented defaults as comments.
    pub fn documented_toml(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let mut section = String::new();
        let mut out = String::new();
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('[') {
                section = trimmed.trim_matches(|c| c == '[' || c == ']').to_string();
            }
            out.push_str(line);
            if let Some((key, _)) = trimmed.split_once(" = ") {
                let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
                if let Some((_, src)) = SOURCES.iter().find(|(k, _)| *k == full) {
                    out.push_str("  # ");
                    out.push_str(src);
                }
            }
            out.push('\n');
        }
        out
    }

    /// Hash of everything except the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        digest(&serde_json::to_vec(&c).expect("config serializes"))
    }

    /// Hash of the parts that determine the dataset.
    pub fn data_hash(&self) -> String {
        digest(&serde_json::to_vec(&(self.seed, &self.world, &self.dataset)).expect("config serializes"))
    }

    /// Hash of the parts that determine trained weights.
    pub fn train_hash(&self) -> String {
        let key = (&self.data_hash(), &self.grid, &self.model, &self.aggregation, &self.codec, &self.train);
        digest(&serde_json::to_vec(&key).expect("config serializes"))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn ckpt_dir(&self) -> PathBuf {
        self.out.join("ckpt")
    }
}

pub fn digest(bytes: &[u8]) -> String {
    let h = Sha256::digest(bytes);
    h.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn apply_set(doc: &mut toml::Table, set: &str) -> Result<(), CliError> {
    let (path, raw) = set.split_once('=').ok_or_else(|| CliError::Config(format!("--set {set}: expected key=value")))?;
    let value: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        // Bare words are strings.
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("--set {path}: {k} is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
