//! Train/test scene sets, frame selection, and per-frame sensor data.

use serde::{Deserialize, Serialize};

use crate::evalkit::EvalLabel;
use crate::geom::{OrientedBox, Pose2};
use crate::pnp::{rasterize, sweeps_to_receiver, GridSpec};
use crate::rng::stream_seed;
use crate::worldsim::{count_points, generate_scenario, labels_at, raycast_sweep, LabelFilter, Result, Scenario, Sweep, WorldConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub train_frames: usize,
    pub test_frames: usize,
    pub frames_per_scene: usize,
    /// Earliest frame time; leaves room for older sweeps and delays.
    pub first_frame: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train_frames: 400,
            test_frames: 100,
            frames_per_scene: 4,
            first_frame: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// A scene and the frame times drawn from it.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFrames {
    pub scenario: Scenario,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub world: WorldConfig,
    pub train: Vec<SceneFrames>,
    pub test: Vec<SceneFrames>,
}

/// Frame times on the sweep grid, evenly spread over the labelled span.
pub fn frame_times(world: &WorldConfig, cfg: &DatasetConfig, n: usize) -> Vec<f64> {
    let period = world.sensor.period;
    let lo = (cfg.first_frame / period).round() as i64;
    let hi = ((world.duration - LabelFilter::default().horizon) / period).floor() as i64;
    (0..n)
        .map(|k| {
            let tick = if n == 1 { lo } else { lo + ((hi - lo) * k as i64) / (n as i64 - 1) };
            tick as f64 * period
        })
        .collect()
}

pub fn scene_seed(seed: u64, split: Split, index: usize) -> u64 {
    stream_seed(seed, split.tag(), index as u64)
}

pub fn scene_count(frames: usize, per_scene: usize) -> usize {
    frames.div_ceil(per_scene.max(1))
}

impl Dataset {
    pub fn generate(world: &WorldConfig, cfg: &DatasetConfig, seed: u64) -> Result<Self> {
        let build = |split: Split, frames: usize| -> Result<Vec<Scenario>> {
            (0..scene_count(frames, cfg.frames_per_scene)).map(|i| generate_scenario(world, scene_seed(seed, split, i))).collect()
        };
        Ok(Self::assemble(world, cfg, build(Split::Train, cfg.train_frames)?, build(Split::Test, cfg.test_frames)?))
    }

    /// Attaches configured frame times to already generated scenes; the
    /// last scene of a split may hold fewer frames.
    pub fn assemble(world: &WorldConfig, cfg: &DatasetConfig, train: Vec<Scenario>, test: Vec<Scenario>) -> Self {
        let attach = |scenes: Vec<Scenario>, frames: usize| -> Vec<SceneFrames> {
            let per = cfg.frames_per_scene.max(1);
            scenes
                .into_iter()
                .enumerate()
                .map(|(i, scenario)| {
                    let mut times = frame_times(world, cfg, per);
                    times.truncate(per.min(frames.saturating_sub(i * per)));
                    SceneFrames { scenario, times }
                })
                .collect()
        };
        Self {
            world: world.clone(),
            train: attach(train, cfg.train_frames),
            test: attach(test, cfg.test_frames),
        }
    }

    pub fn split(&self, s: Split) -> &[SceneFrames] {
        match s {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// `(scene index, time)` of every frame in `s`.
    pub fn frames(&self, s: Split) -> Vec<(usize, f64)> {
        self.split(s)
            .iter()
            .enumerate()
            .flat_map(|(i, sf)| sf.times.iter().map(move |&t| (i, t)))
            .collect()
    }
}

/// The `sweeps` most recent sweeps of `sdv` ending with the one starting at
/// `t`, newest first.
pub fn sweeps_at(sc: &Scenario, sdv: u32, t: f64, world: &WorldConfig) -> Result<Vec<Sweep>> {
    let s = &world.sensor;
    (0..s.sweeps).map(|k| raycast_sweep(sc, sdv, t - k as f64 * s.period, s)).collect()
}

/// Receiver-frame boxes and waypoints of the labels visible to `receiver`.
pub fn receiver_labels(sc: &Scenario, receiver: u32, t: f64, exclude_sdvs: bool) -> Result<Vec<(OrientedBox, Vec<(f64, f64)>, u32, f64)>> {
    let filter = LabelFilter {
        exclude_sdvs,
        ..LabelFilter::default()
    };
    let pose = sc.actor(receiver).map(|a| a.pose_at(t)).unwrap_or_else(Pose2::identity);
    let inv = pose.transform().inverse();
    Ok(labels_at(sc, receiver, t, &filter)?
        .into_iter()
        .map(|l| {
            let b = l.bbox.transformed(&inv);
            let w = l.waypoints.iter().map(|&p| inv.apply(p)).collect();
            (b, w, l.actor, l.speed)
        })
        .collect())
}

/// Evaluation labels for the ego, annotated with the number of returns
/// its own sweeps place on each actor.
pub fn eval_labels(sc: &Scenario, t: f64, own: &[Sweep]) -> Result<Vec<EvalLabel>> {
    Ok(receiver_labels(sc, sc.ego, t, true)?
        .into_iter()
        .map(|(bbox, waypoints, actor, speed)| EvalLabel {
            bbox,
            waypoints,
            points: own.iter().map(|s| count_points(s, actor)).sum(),
            speed,
        })
        .collect())
}

/// SDVs other than `receiver` within broadcast range of it at `t`, nearest
/// first then by id.
pub fn senders_in_range(sc: &Scenario, receiver: u32, t: f64, range: f64) -> Vec<u32> {
    let Some(rx) = sc.actor(receiver) else { return Vec::new() };
    let p = rx.pose_at(t);
    let mut v: Vec<(f64, u32)> = sc
        .sdvs
        .iter()
        .filter(|&&s| s != receiver)
        .filter_map(|&s| {
            let d = sc.actor(s)?.pose_at(t).distance(&p);
            (d <= range).then_some((d, s))
        })
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v.into_iter().map(|x| x.1).collect()
}

/// Occupancy raster of a vehicle's own sweeps in its frame at `pose`.
pub fn own_raster(sweeps: &[Sweep], pose: &Pose2, grid: &GridSpec) -> numcore::Tensor {
    rasterize(&sweeps_to_receiver(sweeps, pose), grid)
}

/// Candidate-SDV statistics of a scene set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub scenes: usize,
    pub frames: usize,
    pub mean_candidates: f64,
    pub max_candidates: usize,
    pub mean_sdvs: f64,
    pub mean_labels: f64,
    pub zero_point_fraction: f64,
}

pub fn split_stats(scenes: &[SceneFrames], world: &WorldConfig) -> Result<SplitStats> {
    let mut st = SplitStats {
        scenes: scenes.len(),
        ..Default::default()
    };
    let (mut labels, mut zero) = (0usize, 0usize);
    for sf in scenes {
        let sc = &sf.scenario;
        st.max_candidates = st.max_candidates.max(sc.candidates.len());
        st.mean_candidates += sc.candidates.len() as f64;
        st.mean_sdvs += sc.sdvs.len() as f64;
        for &t in &sf.times {
            let own = sweeps_at(sc, sc.ego, t, world)?;
            let ls = eval_labels(sc, t, &own)?;
            labels += ls.len();
            zero += ls.iter().filter(|l| l.points == 0).count();
            st.frames += 1;
        }
    }
    let n = scenes.len().max(1) as f64;
    st.mean_candidates /= n;
    st.mean_sdvs /= n;
    st.mean_labels = labels as f64 / st.frames.max(1) as f64;
    st.zero_point_fraction = zero as f64 / labels.max(1) as f64;
    Ok(st)
}
