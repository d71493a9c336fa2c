//! `v2v eval`: Table-1 style metrics, per-frame records, PR curves.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use v2v_core::channel::write_dump;
use v2v_core::dataset::{Dataset, Split};
use v2v_core::evalkit::report::{line_plot, metrics_header, metrics_row, pr_rows, Series};
use v2v_core::evalkit::{average_precision, summarize, EvalFrame, Summary};
use v2v_core::experiment::{run_frame, DetectionRecord, FrameRecord, Setting};
use v2v_core::fusion::{Models, Strategy};

use crate::artifacts::{load_dataset, load_models, write, write_csv};
use crate::config::RunConfig;
use crate::CliError;

pub fn parse_strategies(s: &str) -> Result<Vec<Strategy>, CliError> {
    if s == "all" {
        return Ok(Strategy::ALL.to_vec());
    }
    s.split(',')
        .map(|w| Strategy::parse(w.trim()).ok_or_else(|| CliError::Config(format!("unknown strategy `{w}`"))))
        .collect()
}

/// The configured channel and fusion settings for `strategy`.
pub fn base_setting(cfg: &RunConfig, strategy: Strategy) -> Setting {
    Setting {
        strategy,
        fusion: cfg.fusion.clone(),
        channel: cfg.channel.clone(),
        sender_fraction: 1.0,
        seed: cfg.seed,
        keep_wire: false,
    }
}

pub fn setting_label(s: &Setting) -> String {
    format!(
        "delay={};pos={};head={};fraction={};compress={}",
        s.channel.max_delay, s.channel.position_sigma, s.channel.heading_sigma_deg, s.sender_fraction, s.fusion.compress
    )
}

/// Every test frame under `setting`, frames in parallel, results in order.
pub fn run_test_split(models: &Models, data: &Dataset, setting: &Setting) -> Result<Vec<FrameRecord>, CliError> {
    let frames = data.frames(Split::Test);
    let recs: Result<Vec<_>, _> = frames.par_iter().map(|&(scene, t)| run_frame(models, data, Split::Test, scene, t, setting)).collect();
    Ok(recs?)
}

pub fn eval_frames(recs: &[FrameRecord]) -> Vec<EvalFrame> {
    recs.iter().map(|r| r.eval.clone()).collect()
}

/// Mean bits per delivered message, if any were delivered.
pub fn bits_per_message(recs: &[FrameRecord]) -> Option<f64> {
    let n: usize = recs.iter().map(|r| r.messages.len()).sum();
    (n > 0).then(|| recs.iter().map(|r| r.bits()).sum::<u64>() as f64 / n as f64)
}

#[derive(Serialize)]
struct FrameLine {
    scene: usize,
    t: f64,
    messages: usize,
    bits: u64,
    detections: Vec<DetectionRecord>,
}

pub fn frames_jsonl(recs: &[FrameRecord]) -> Result<String, CliError> {
    let mut s = String::new();
    for r in recs {
        let line = FrameLine {
            scene: r.scene,
            t: r.t,
            messages: r.messages.len(),
            bits: r.bits(),
            detections: r.detection_records(),
        };
        s.push_str(&serde_json::to_string(&line)?);
        s.push('\n');
    }
    Ok(s)
}

/// Index accompanying a message dump.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DumpIndex {
    pub config_hash: String,
    pub seed: u64,
    pub setting: Setting,
    /// Message dump file, relative to the index.
    pub messages: String,
    /// `(scene, t, message count)` per frame, in dump order.
    pub frames: Vec<(usize, f64, usize)>,
}

pub struct EvalResult {
    pub strategy: Strategy,
    pub summary: Summary,
    pub bits_per_message: Option<f64>,
}

pub fn eval_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("eval")
}

pub fn cmd_eval(cfg: &RunConfig, strategies: &[Strategy], dump: bool) -> Result<Vec<EvalResult>, CliError> {
    let data = load_dataset(cfg)?;
    let models = load_models(cfg)?;
    let dir = eval_dir(cfg);
    let mut metrics = vec![metrics_header(&cfg.eval)];
    let mut pr = vec!["method,iou,score,recall,precision".to_string()];
    let mut curves = Vec::new();
    let mut results = Vec::new();
    for &strategy in strategies {
        let mut setting = base_setting(cfg, strategy);
        setting.keep_wire = dump;
        let recs = run_test_split(&models, &data, &setting)?;
        let frames = eval_frames(&recs);
        let summary = summarize(&frames, &cfg.eval);
        metrics.push(metrics_row(strategy.name(), &setting_label(&setting), &summary));
        for &iou in &cfg.eval.iou_thresholds {
            let (_, curve) = average_precision(&frames, iou);
            pr.extend(pr_rows(&format!("{},{iou}", strategy.name()), &curve));
            if iou == *cfg.eval.iou_thresholds.last().expect("thresholds") {
                curves.push(Series {
                    name: strategy.name().into(),
                    points: curve.points.iter().map(|&(_, r, p)| (r, p)).collect(),
                });
            }
        }
        write(&dir.join(format!("frames_{}.jsonl", strategy.name())), frames_jsonl(&recs)?.as_bytes())?;
        if dump {
            write_message_dump(cfg, &dir, &setting, &recs)?;
        }
        println!("{}", metrics.last().expect("row"));
        results.push(EvalResult {
            strategy,
            summary,
            bits_per_message: bits_per_message(&recs),
        });
    }
    write_csv(&dir.join("metrics.csv"), cfg, &metrics)?;
    write_csv(&dir.join("pr.csv"), cfg, &pr)?;
    let iou = cfg.eval.iou_thresholds.last().copied().unwrap_or(0.7);
    write(&dir.join("pr.svg"), line_plot(&format!("Precision-recall at IoU {iou}"), "recall", "precision", &curves).as_bytes())?;
    Ok(results)
}

fn write_message_dump(cfg: &RunConfig, dir: &std::path::Path, setting: &Setting, recs: &[FrameRecord]) -> Result<(), CliError> {
    let name = format!("messages_{}", setting.strategy.name());
    let mut bytes = Vec::new();
    let all: Vec<_> = recs.iter().flat_map(|r| r.wire.iter().cloned()).collect();
    write_dump(&mut bytes, &all)?;
    write(&dir.join(format!("{name}.v2vd")), &bytes)?;
    let index = DumpIndex {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        setting: Setting {
            keep_wire: false,
            ..setting.clone()
        },
        messages: format!("{name}.v2vd"),
        frames: recs.iter().map(|r| (r.scene, r.t, r.wire.len())).collect(),
    };
    let mut json = serde_json::to_string_pretty(&index)?;
    json.push('\n');
    write(&dir.join(format!("{name}.json")), json.as_bytes())
}
