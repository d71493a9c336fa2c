//! `v2v sweep`: compression frontier, SDV density, pose noise, time delay
//! and occlusion/speed breakdowns.

use std::path::PathBuf;

use clap::ValueEnum;
use numcore::{checkpoint, ParamStore};
use serde::{Deserialize, Serialize};
use v2v_core::channel::transmission_delay;
use v2v_core::dataset::Dataset;
use v2v_core::evalkit::report::{fmt_opt, line_plot, Series};
use v2v_core::evalkit::{breakdown, summarize, BreakdownKind, Summary};
use v2v_core::fusion::{Models, Strategy};
use v2v_core::train::{train_stage, Stage, TrainConfig};

use crate::artifacts::{load_checkpoint, load_dataset, load_models, read, write, write_csv};
use crate::bench::{feature_codec_stats, CodecStats};
use crate::config::RunConfig;
use crate::eval::{base_setting, bits_per_message, eval_frames, run_test_split};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SweepKind {
    CompressionLambda,
    SdvDensity,
    PoseNoise,
    TimeDelay,
    Breakdown,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::CompressionLambda => "compression_lambda",
            SweepKind::SdvDensity => "sdv_density",
            SweepKind::PoseNoise => "pose_noise",
            SweepKind::TimeDelay => "time_delay",
            SweepKind::Breakdown => "breakdown",
        }
    }
}

const FUSED: [Strategy; 3] = [Strategy::Raw, Strategy::Output, Strategy::Feature];

pub fn sweep_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("sweep")
}

fn ap_cols(s: &Summary) -> String {
    s.ap.iter().map(|a| fmt_opt(a.map(|v| 100.0 * v), 2)).collect::<Vec<_>>().join(",")
}

fn ap_header(cfg: &RunConfig) -> String {
    cfg.eval.iou_thresholds.iter().map(|t| format!("ap@{t}")).collect::<Vec<_>>().join(",")
}

/// AP at the strictest configured IoU, in percent.
fn headline(s: &Summary) -> f64 {
    s.ap.last().copied().flatten().map_or(f64::NAN, |v| 100.0 * v)
}

fn plot(cfg: &RunConfig, name: &str, title: &str, x: &str, y: &str, series: &[Series]) -> Result<(), CliError> {
    write(&sweep_dir(cfg).join(format!("{name}.svg")), line_plot(title, x, y, series).as_bytes())
}

fn series(name: &str) -> Series {
    Series {
        name: name.into(),
        points: Vec::new(),
    }
}

pub fn cmd_sweep(cfg: &RunConfig, kind: SweepKind) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let models = load_models(cfg)?;
    match kind {
        SweepKind::CompressionLambda => compression(cfg, &data, &models),
        SweepKind::SdvDensity => density(cfg, &data, &models),
        SweepKind::PoseNoise => pose_noise(cfg, &data, &models),
        SweepKind::TimeDelay => time_delay(cfg, &data, &models),
        SweepKind::Breakdown => breakdowns(cfg, &data, &models),
    }
}

#[derive(Serialize, Deserialize, PartialEq)]
struct CodecMeta {
    train_hash: String,
    lambda: f64,
    steps: usize,
}

/// Codec weights trained at `lambda` on top of `base`, cached by config.
fn codec_at(cfg: &RunConfig, data: &Dataset, models: &Models, base: &ParamStore, lambda: f64) -> Result<ParamStore, CliError> {
    let meta = CodecMeta {
        train_hash: cfg.train_hash(),
        lambda,
        steps: cfg.sweep.codec_steps,
    };
    let path = sweep_dir(cfg).join("codec").join(format!("lambda_{lambda}.pnpw"));
    if path.exists() {
        let (store, m) = checkpoint::from_bytes_with_meta(&read(&path)?)?;
        if serde_json::from_str::<CodecMeta>(&m).is_ok_and(|m| m == meta) {
            return Ok(store);
        }
    }
    let tc = TrainConfig {
        lambda,
        codec_steps: cfg.sweep.codec_steps,
        ..cfg.train.clone()
    };
    let store = train_stage(Stage::TrainCodec, base, data, models, &tc, cfg.seed, |r| {
        eprintln!("lambda {lambda} step {} rate {:.4} mse {:.6}", r.step, r.rate, r.mse)
    })?;
    write(&path, &checkpoint::to_bytes_with_meta(&store, &serde_json::to_string(&meta)?)?)?;
    Ok(store)
}

fn compression(cfg: &RunConfig, data: &Dataset, models: &Models) -> Result<(), CliError> {
    let base = match load_checkpoint(cfg, Stage::TrainTemporal)? {
        Some(s) => s,
        None => load_checkpoint(cfg, Stage::FinetuneFusion)?
            .ok_or_else(|| CliError::Data("compression sweep needs a fused checkpoint; run `v2v train` first".into()))?,
    };
    let rate = cfg.channel.data_rate;
    let mut rows = vec![format!("lambda,bits_per_message,compression_ratio,tx_delay_ms,mse,{}", ap_header(cfg))];
    let (mut rd, mut ap) = (series("rate-distortion"), series("feature fusion"));
    let mut m = models.clone();
    m.fused = Some(base.clone());
    let mut setting = base_setting(cfg, Strategy::Feature);
    setting.fusion.compress = false;
    let recs = run_test_split(&m, data, &setting)?;
    let raw = summarize(&eval_frames(&recs), &cfg.eval);
    let raw_bits = bits_per_message(&recs).unwrap_or(f64::NAN);
    rows.push(format!(
        "inf,{raw_bits:.1},1.000,{:.4},0,{}",
        1e3 * transmission_delay(raw_bits.round() as u64, rate),
        ap_cols(&raw)
    ));
    println!("{}", rows.last().expect("row"));
    setting.fusion.compress = true;
    for &lambda in &cfg.sweep.lambdas {
        m.fused = Some(codec_at(cfg, data, models, &base, lambda)?);
        let st: CodecStats = feature_codec_stats(&m, data, 0)?;
        let recs = run_test_split(&m, data, &setting)?;
        let s = summarize(&eval_frames(&recs), &cfg.eval);
        let bits = bits_per_message(&recs).unwrap_or(f64::NAN);
        let mse = st.mse.unwrap_or(f64::NAN);
        rows.push(format!(
            "{lambda},{bits:.1},{:.3},{:.4},{mse:.6e},{}",
            raw_bits / bits,
            1e3 * transmission_delay(bits.round() as u64, rate),
            ap_cols(&s)
        ));
        println!("{}", rows.last().expect("row"));
        rd.points.push((bits, mse));
        ap.points.push((bits, headline(&s)));
    }
    let mut flat = series("uncompressed");
    flat.points = ap.points.iter().map(|p| (p.0, headline(&raw))).collect();
    write_csv(&sweep_dir(cfg).join("compression_lambda.csv"), cfg, &rows)?;
    plot(cfg, "compression_lambda_rd", "Feature codec rate-distortion", "bits per message", "feature MSE", &[rd])?;
    plot(cfg, "compression_lambda", "AP vs message size", "bits per message", "AP (%)", &[ap, flat])
}

fn density(cfg: &RunConfig, data: &Dataset, models: &Models) -> Result<(), CliError> {
    let mut rows = vec![format!("strategy,fraction,{}", ap_header(cfg))];
    let mut plots = Vec::new();
    for strategy in FUSED {
        let mut ser = series(strategy.name());
        for &f in &cfg.sweep.sender_fractions {
            let mut setting = base_setting(cfg, strategy);
            setting.sender_fraction = f;
            let s = summarize(&eval_frames(&run_test_split(models, data, &setting)?), &cfg.eval);
            rows.push(format!("{},{f},{}", strategy.name(), ap_cols(&s)));
            println!("{}", rows.last().expect("row"));
            ser.points.push((100.0 * f, headline(&s)));
        }
        plots.push(ser);
    }
    let none = summarize(&eval_frames(&run_test_split(models, data, &base_setting(cfg, Strategy::None))?), &cfg.eval);
    rows.push(format!("none,0,{}", ap_cols(&none)));
    let mut ser = series("none");
    ser.points = cfg.sweep.sender_fractions.iter().map(|f| (100.0 * f, headline(&none))).collect();
    plots.push(ser);
    write_csv(&sweep_dir(cfg).join("sdv_density.csv"), cfg, &rows)?;
    plot(cfg, "sdv_density", "Density of SDVs", "% of SDVs in the scene", "AP (%)", &plots)
}

/// `(series, position sigma, heading sigma)` evaluated by the pose sweep.
pub fn pose_grid(cfg: &RunConfig) -> Vec<(&'static str, f64, f64)> {
    let mut g: Vec<_> = cfg.sweep.position_sigmas.iter().map(|&p| ("position", p, 0.0)).collect();
    g.extend(cfg.sweep.heading_sigmas_deg.iter().map(|&h| ("heading", 0.0, h)));
    let pmax = cfg.sweep.position_sigmas.iter().copied().fold(0.0, f64::max);
    let hmax = cfg.sweep.heading_sigmas_deg.iter().copied().fold(0.0, f64::max);
    g.push(("both", pmax, hmax));
    g
}

fn pose_noise(cfg: &RunConfig, data: &Dataset, models: &Models) -> Result<(), CliError> {
    let mut rows = vec![format!("strategy,series,position_sigma,heading_sigma_deg,{}", ap_header(cfg))];
    let (mut pos_plot, mut head_plot) = (Vec::new(), Vec::new());
    for strategy in FUSED {
        let (mut ps, mut hs) = (series(strategy.name()), series(strategy.name()));
        let mut seen: Vec<((f64, f64), Summary)> = Vec::new();
        for (name, p, h) in pose_grid(cfg) {
            let s = match seen.iter().find(|e| e.0 == (p, h)) {
                Some(e) => e.1.clone(),
                None => {
                    let mut setting = base_setting(cfg, strategy);
                    setting.channel.position_sigma = p;
                    setting.channel.heading_sigma_deg = h;
                    let s = summarize(&eval_frames(&run_test_split(models, data, &setting)?), &cfg.eval);
                    seen.push(((p, h), s.clone()));
                    s
                }
            };
            rows.push(format!("{},{name},{p},{h},{}", strategy.name(), ap_cols(&s)));
            println!("{}", rows.last().expect("row"));
            match name {
                "position" => ps.points.push((p, headline(&s))),
                "heading" => hs.points.push((h, headline(&s))),
                _ => {}
            }
        }
        pos_plot.push(ps);
        head_plot.push(hs);
    }
    write_csv(&sweep_dir(cfg).join("pose_noise.csv"), cfg, &rows)?;
    plot(cfg, "pose_noise_position", "Position noise", "position sigma (m)", "AP (%)", &pos_plot)?;
    plot(cfg, "pose_noise_heading", "Heading noise", "heading sigma (deg)", "AP (%)", &head_plot)
}

fn time_delay(cfg: &RunConfig, data: &Dataset, models: &Models) -> Result<(), CliError> {
    let mut rows = vec![format!("strategy,max_delay,{}", ap_header(cfg))];
    let mut plots = Vec::new();
    for strategy in FUSED {
        let mut ser = series(strategy.name());
        for &d in &cfg.sweep.delays {
            let mut setting = base_setting(cfg, strategy);
            setting.channel.max_delay = d;
            let s = summarize(&eval_frames(&run_test_split(models, data, &setting)?), &cfg.eval);
            rows.push(format!("{},{d},{}", strategy.name(), ap_cols(&s)));
            println!("{}", rows.last().expect("row"));
            ser.points.push((d, headline(&s)));
        }
        plots.push(ser);
    }
    write_csv(&sweep_dir(cfg).join("time_delay.csv"), cfg, &rows)?;
    plot(cfg, "time_delay", "Effect of time delay", "max delay (s)", "AP (%)", &plots)
}

fn breakdowns(cfg: &RunConfig, data: &Dataset, models: &Models) -> Result<(), CliError> {
    let iou = cfg.eval.iou_thresholds.last().copied().unwrap_or(0.7);
    let mut rows = vec!["kind,bin,strategy,labels,ap".to_string()];
    let (mut pts, mut spd) = (Vec::new(), Vec::new());
    for strategy in [Strategy::None, Strategy::Raw, Strategy::Output, Strategy::Feature] {
        let frames = eval_frames(&run_test_split(models, data, &base_setting(cfg, strategy))?);
        for (kind, name, out) in [(BreakdownKind::PointCount, "points", &mut pts), (BreakdownKind::Speed, "speed", &mut spd)] {
            let mut ser = series(strategy.name());
            for (i, b) in breakdown(&frames, kind, iou, &cfg.eval).into_iter().enumerate() {
                rows.push(format!("{name},\"{}\",{},{},{}", b.label, strategy.name(), b.labels, fmt_opt(b.ap.map(|v| 100.0 * v), 2)));
                ser.points.push((i as f64, b.ap.map_or(f64::NAN, |v| 100.0 * v)));
            }
            out.push(ser);
        }
        println!("breakdown {} done", strategy.name());
    }
    write_csv(&sweep_dir(cfg).join("breakdown.csv"), cfg, &rows)?;
    plot(cfg, "breakdown_points", &format!("AP@{iou} by own LiDAR points on the object"), "bin (see CSV)", "AP (%)", &pts)?;
    plot(cfg, "breakdown_speed", &format!("AP@{iou} by object speed"), "bin (see CSV)", "AP (%)", &spd)
}
