//! `v2v codec-bench`: payload size and distortion of every codec.

use rayon::prelude::*;
use v2v_core::channel::transmission_delay;
use v2v_core::codec::points::raw_points_bits;
use v2v_core::codec::PayloadType;
use v2v_core::dataset::{Dataset, Split};
use v2v_core::fusion::{decode_message, make_message, FusionConfig, Models, Payload, VehicleView};

use crate::artifacts::{load_dataset, load_models, write_csv};
use crate::config::RunConfig;
use crate::CliError;

/// Per-codec totals over the measured frames.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CodecStats {
    pub name: String,
    pub messages: usize,
    pub bits: f64,
    /// Size of the same content without the codec.
    pub reference_bits: f64,
    /// Mean squared error of the decoded content, where defined.
    pub mse: Option<f64>,
}

impl CodecStats {
    pub fn mean_bits(&self) -> f64 {
        self.bits / self.messages.max(1) as f64
    }

    pub fn ratio(&self) -> f64 {
        self.reference_bits / self.bits.max(1.0)
    }
}

fn views(data: &Dataset, frames: usize) -> Result<Vec<VehicleView>, CliError> {
    let mut all = data.frames(Split::Test);
    if frames > 0 {
        all.truncate(frames);
    }
    let v: Result<Vec<_>, _> = all
        .par_iter()
        .map(|&(scene, t)| {
            let sc = &data.test[scene].scenario;
            VehicleView::capture(sc, sc.ego, t, &data.world)
        })
        .collect();
    Ok(v?)
}

fn feature_data(r: &v2v_core::fusion::Received) -> &[f64] {
    match &r.payload {
        Payload::Features(fm) => fm.data.data(),
        _ => &[],
    }
}

/// Learned feature codec against raw float32 features on the ego's view
/// of `frames` test frames.
pub fn feature_codec_stats(models: &Models, data: &Dataset, frames: usize) -> Result<CodecStats, CliError> {
    let views = views(data, frames)?;
    let raw_cfg = FusionConfig {
        compress: false,
        ..FusionConfig::default()
    };
    let coded_cfg = FusionConfig {
        compress: true,
        ..FusionConfig::default()
    };
    let per: Result<Vec<(u64, u64, f64, usize)>, CliError> = views
        .par_iter()
        .map(|v| {
            let raw = make_message(PayloadType::Features, v, models, &raw_cfg)?;
            let coded = make_message(PayloadType::Features, v, models, &coded_cfg)?;
            let a = decode_message(&raw, models)?;
            let b = decode_message(&coded, models)?;
            let (x, y) = (feature_data(&a), feature_data(&b));
            let se: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            Ok((coded.bits(), raw.bits(), se, x.len()))
        })
        .collect();
    let per = per?;
    let n: usize = per.iter().map(|p| p.3).sum();
    Ok(CodecStats {
        name: "feature_learned".into(),
        messages: per.len(),
        bits: per.iter().map(|p| p.0 as f64).sum(),
        reference_bits: per.iter().map(|p| p.1 as f64).sum(),
        mse: Some(per.iter().map(|p| p.2).sum::<f64>() / n.max(1) as f64),
    })
}

/// Point and output codecs, which need no trained codec weights beyond
/// the detector.
pub fn other_codec_stats(models: &Models, data: &Dataset, frames: usize) -> Result<Vec<CodecStats>, CliError> {
    let views = views(data, frames)?;
    let cfg = FusionConfig::default();
    let per: Result<Vec<[(u64, u64, f64); 2]>, CliError> = views
        .par_iter()
        .map(|v| {
            let pm = make_message(PayloadType::Points, v, models, &cfg)?;
            let Payload::Points(decoded) = decode_message(&pm, models)?.payload else {
                return Err(CliError::Data("point message decoded to another payload".into()));
            };
            let mut worst: f64 = 0.0;
            for (a, b) in v.sweeps.iter().zip(&decoded) {
                for (p, q) in a.points.iter().zip(&b.points) {
                    worst = worst.max((p.x - q.x).abs()).max((p.y - q.y).abs());
                }
            }
            let om = make_message(PayloadType::Outputs, v, models, &cfg)?;
            Ok([(pm.bits(), raw_points_bits(&v.sweeps), worst), (om.bits(), om.bits(), 0.0)])
        })
        .collect();
    let per = per?;
    let mk = |i: usize, name: &str, err: Option<f64>| CodecStats {
        name: name.into(),
        messages: per.len(),
        bits: per.iter().map(|p| p[i].0 as f64).sum(),
        reference_bits: per.iter().map(|p| p[i].1 as f64).sum(),
        mse: err,
    };
    let worst = per.iter().map(|p| p[0].2).fold(0.0, f64::max);
    Ok(vec![mk(0, "points", Some(worst * worst)), mk(1, "outputs", None)])
}

pub fn cmd_codec_bench(cfg: &RunConfig, frames: usize) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let models = load_models(cfg)?;
    let mut stats = other_codec_stats(&models, &data, frames)?;
    if models.fused.is_some() {
        stats.push(feature_codec_stats(&models, &data, frames)?);
    }
    let rate = cfg.channel.data_rate;
    let mut rows = vec!["codec,messages,mean_bits,reference_bits,compression_ratio,tx_delay_ms,distortion".to_string()];
    for s in &stats {
        rows.push(format!(
            "{},{},{:.1},{:.1},{:.3},{:.4},{}",
            s.name,
            s.messages,
            s.mean_bits(),
            s.reference_bits / s.messages.max(1) as f64,
            s.ratio(),
            1e3 * transmission_delay(s.mean_bits().round() as u64, rate),
            s.mse.map(|m| format!("{m:.6e}")).unwrap_or_else(|| "NA".into())
        ));
        println!("{}", rows.last().expect("row"));
    }
    let anchor = 1e3 * transmission_delay(225_000, rate);
    rows.push(format!("anchor_225kbit,1,225000.0,225000.0,1.000,{anchor:.4},NA"));
    println!("225 kbit at {:.0} Mbps: {anchor:.3} ms", rate / 1e6);
    write_csv(&cfg.out.join("bench").join("codec_bench.csv"), cfg, &rows)
}
