//! Staged training: single-vehicle pretraining, fusion finetuning, the
//! delay-compensation network, and the feature codec.

use numcore::{clip_global_norm, Adam, AdamConfig, ParamStore, Tape};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{aggregate, sample_neighbor_count, NeighborInput};
use crate::codec::rd_loss;
use crate::dataset::{own_raster, receiver_labels, senders_in_range, Dataset, Split};
use crate::fusion::{Models, VehicleView};
use crate::pnp::{assign_targets, detection_loss, encode, output_network, LossWeights, Net};
use crate::rng::{stream, Rng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("stage {stage} needs parameters from {needs} (missing {param})")]
    MissingPrerequisite { stage: &'static str, needs: &'static str, param: String },
    #[error("training set is empty")]
    NoData,
    #[error(transparent)]
    Num(#[from] numcore::NumError),
    #[error(transparent)]
    World(#[from] crate::worldsim::WorldError),
    #[error(transparent)]
    Fusion(#[from] crate::fusion::FusionError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    FinetuneFusion,
    TrainTemporal,
    TrainCodec,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Pretrain, Stage::FinetuneFusion, Stage::TrainTemporal, Stage::TrainCodec];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::FinetuneFusion => "finetune_fusion",
            Stage::TrainTemporal => "train_temporal",
            Stage::TrainCodec => "train_codec",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }

    pub fn prerequisite(self) -> Option<Stage> {
        match self {
            Stage::Pretrain => None,
            Stage::FinetuneFusion => Some(Stage::Pretrain),
            Stage::TrainTemporal => Some(Stage::FinetuneFusion),
            Stage::TrainCodec => Some(Stage::TrainTemporal),
        }
    }

    /// Parameter-name prefixes this stage updates.
    pub fn trainable_prefixes(self) -> &'static [&'static str] {
        match self {
            Stage::Pretrain => &["backbone.", "header."],
            Stage::FinetuneFusion => &["backbone.", "header.", "agg."],
            Stage::TrainTemporal => &["temporal."],
            Stage::TrainCodec => &["codec."],
        }
    }

    pub fn trains(self, name: &str) -> bool {
        self.trainable_prefixes().iter().any(|p| name.starts_with(p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub pretrain_steps: usize,
    pub fusion_steps: usize,
    pub temporal_steps: usize,
    pub codec_steps: usize,
    pub lr: f64,
    pub temporal_lr: f64,
    pub codec_lr: f64,
    pub clip_norm: f64,
    /// The rate-distortion loss scales with λ, so it gets its own bound.
    pub codec_clip_norm: f64,
    /// Cosine decay from the stage rate down to this fraction of it.
    pub final_lr_fraction: f64,
    pub loss: LossWeights,
    /// Rate-distortion trade-off: bits per latent symbol + λ · MSE.
    pub lambda: f64,
    /// Delay drawn uniformly from `[0, max_delay]` in `train_temporal`.
    pub max_delay: f64,
    pub range: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_steps: 6000,
            fusion_steps: 2000,
            temporal_steps: 1500,
            codec_steps: 3000,
            lr: 2e-3,
            temporal_lr: 1e-3,
            codec_lr: 1e-3,
            clip_norm: 10.0,
            codec_clip_norm: 1e4,
            final_lr_fraction: 0.05,
            loss: LossWeights::default(),
            lambda: 1e4,
            max_delay: 0.1,
            range: 70.0,
            log_every: 25,
        }
    }
}

impl TrainConfig {
    pub fn steps(&self, stage: Stage) -> usize {
        match stage {
            Stage::Pretrain => self.pretrain_steps,
            Stage::FinetuneFusion => self.fusion_steps,
            Stage::TrainTemporal => self.temporal_steps,
            Stage::TrainCodec => self.codec_steps,
        }
    }
}

/// One logged training step; losses not used by a stage are zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub stage: String,
    pub total: f64,
    pub classification: f64,
    pub regression: f64,
    pub forecast: f64,
    pub rate: f64,
    pub mse: f64,
    pub grad_norm: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "step,stage,total,classification,regression,forecast,rate,mse,grad_norm";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4}",
            self.step, self.stage, self.total, self.classification, self.regression, self.forecast, self.rate, self.mse, self.grad_norm
        )
    }
}

/// Adds any parameter groups `stage` needs that `store` lacks, freshly
/// initialized, and checks the prerequisite stage's groups are present.
pub fn prepare(stage: Stage, store: &ParamStore, models: &Models, seed: u64) -> Result<ParamStore> {
    let fresh = Models::init(models.grid, models.model.clone(), models.agg.clone(), models.codec.clone(), models.model_sweeps(), seed);
    let full = fresh.fused.expect("init builds the fused store");
    if let Some(pre) = stage.prerequisite() {
        for p in pre.trainable_prefixes() {
            let want = full.names().find(|n| n.starts_with(p));
            if let Some(name) = want {
                if !store.contains(name) {
                    return Err(TrainError::MissingPrerequisite { stage: stage.name(), needs: pre.name(), param: name.clone() });
                }
            }
        }
    }
    let mut out = if stage == Stage::Pretrain && store.is_empty() { fresh.single } else { store.clone() };
    for (name, value) in full.iter() {
        // Later stages carry every group so the fused forward pass is whole.
        let needed = stage != Stage::Pretrain || stage.trains(name);
        if needed && !out.contains(name) {
            out.insert(name.clone(), value.clone());
        }
    }
    Ok(out)
}

struct Sample {
    scene: usize,
    t: f64,
    receiver: u32,
}

fn sample(data: &Dataset, frames: &[(usize, f64)], rng: &mut Rng) -> Sample {
    let (scene, t) = frames[rng.gen_range(0..frames.len())];
    let sdvs = &data.train[scene].scenario.sdvs;
    Sample { scene, t, receiver: sdvs[rng.gen_range(0..sdvs.len())] }
}

/// Runs `stage` from `store` and returns the updated parameters. Only the
/// stage's parameter groups change. `log` sees every `log_every`-th step.
pub fn train_stage(stage: Stage, store: &ParamStore, data: &Dataset, models: &Models, cfg: &TrainConfig, seed: u64, mut log: impl FnMut(&LogRow)) -> Result<ParamStore> {
    let mut params = prepare(stage, store, models, seed)?;
    let frames = data.frames(Split::Train);
    if frames.is_empty() {
        return Err(TrainError::NoData);
    }
    let lr = match stage {
        Stage::TrainTemporal => cfg.temporal_lr,
        Stage::TrainCodec => cfg.codec_lr,
        _ => cfg.lr,
    };
    let mut opt = Adam::new(AdamConfig { lr, ..AdamConfig::default() });
    let mut rng = stream(seed, stage.name(), 0);
    let trainable = |n: &str| stage.trains(n);
    let total = cfg.steps(stage);
    for step in 0..total {
        let progress = step as f64 / total.max(1) as f64;
        opt.config.lr = lr * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        let s = sample(data, &frames, &mut rng);
        let tape = Tape::new();
        let net = Net::new(&tape, &params, &trainable);
        let mut row = LogRow { step, stage: stage.name().to_string(), ..LogRow::default() };
        let loss = match stage {
            Stage::TrainCodec => {
                let sc = &data.train[s.scene].scenario;
                let v = VehicleView::capture(sc, s.receiver, s.t, &data.world)?;
                let z = encode(&net, tape.constant(own_raster(&v.sweeps, &v.pose, &models.grid)))?;
                let (loss, parts) = rd_loss(&net, &models.codec, z, cfg.lambda, &mut rng)?;
                row.rate = parts.rate;
                row.mse = parts.mse;
                loss
            }
            _ => {
                let (loss, parts) = detection_step(stage, &net, data, &s, models, cfg, &mut rng)?;
                row.classification = parts.classification;
                row.regression = parts.regression;
                row.forecast = parts.forecast;
                loss
            }
        };
        row.total = tape.value(loss).item();
        let mut grads = tape.backward(loss).into_params();
        let clip = if stage == Stage::TrainCodec { cfg.codec_clip_norm } else { cfg.clip_norm };
        row.grad_norm = clip_global_norm(&mut grads, clip);
        opt.step(&mut params, &grads)?;
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == total) {
            log(&row);
        }
    }
    Ok(params)
}

fn detection_step(stage: Stage, net: &Net, data: &Dataset, s: &Sample, models: &Models, cfg: &TrainConfig, rng: &mut Rng) -> Result<(numcore::Var, crate::pnp::LossParts)> {
    let tape = net.tape;
    let sc = &data.train[s.scene].scenario;
    let own = VehicleView::capture(sc, s.receiver, s.t, &data.world)?;
    let z = encode(net, tape.constant(own_raster(&own.sweeps, &own.pose, &models.grid)))?;
    let z = if stage == Stage::Pretrain {
        z
    } else {
        let mut senders = senders_in_range(sc, s.receiver, s.t, cfg.range);
        let n = sample_neighbor_count(senders.len(), models.agg.max_neighbors, rng);
        senders.shuffle(rng);
        senders.truncate(n);
        let mut neighbors = Vec::with_capacity(n);
        for id in senders {
            let delay = if stage == Stage::TrainTemporal { rng.gen_range(0.0..=cfg.max_delay) } else { 0.0 };
            let v = VehicleView::capture(sc, id, s.t - delay, &data.world)?;
            let zn = encode(net, tape.constant(own_raster(&v.sweeps, &v.pose, &models.grid)))?;
            neighbors.push(NeighborInput {
                z: zn,
                origin: models.grid.feature_origin(&v.pose),
                timestamp: v.timestamp,
                sdv: id,
                dt: delay,
            });
        }
        let origin = models.grid.feature_origin(&own.pose);
        aggregate(net, z, &origin, &neighbors, models.grid.feature_resolution(), true, &models.agg)?
    };
    let (det, fc) = output_network(net, z)?;
    let labels: Vec<_> = receiver_labels(sc, s.receiver, s.t, false)?.into_iter().map(|(b, w, _, _)| (b, w)).collect();
    let targets = assign_targets(&labels, &models.grid, &models.model);
    Ok(detection_loss(tape, det, fc, &targets, &cfg.loss)?)
}

/// Names whose values differ between two stores (missing counts as
/// differing).
pub fn changed_params(before: &ParamStore, after: &ParamStore) -> Vec<String> {
    let mut out: Vec<String> = after
        .iter()
        .filter(|(n, v)| before.get(n).map(|b| b.data() != v.data() || b.shape() != v.shape()).unwrap_or(true))
        .map(|(n, _)| n.clone())
        .collect();
    out.extend(before.names().filter(|n| !after.contains(n)).cloned());
    out
}
