//! Newline-delimited JSON scenario files: one header record, then one record
//! per actor in id order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Actor, ActorKind, Result, Scenario, Trajectory, WorldError};
use crate::geom::Pose2;

pub const FORMAT: &str = "v2v-scenario";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    record: String,
    format: String,
    version: u32,
    seed: u64,
    attempt: u32,
    duration: f64,
    tick: f64,
    extent: [f64; 4],
    ego: u32,
    candidates: Vec<u32>,
    sdvs: Vec<u32>,
    actors: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActorRecord {
    record: String,
    id: u32,
    kind: ActorKind,
    length: f64,
    width: f64,
    is_candidate_sdv: bool,
    is_sdv: bool,
    phase: f64,
    tick: f64,
    /// `[x, y, theta]` per tick from t = 0.
    trajectory: Vec<[f64; 3]>,
}

pub fn write_scenario<W: Write>(sc: &Scenario, mut w: W) -> Result<()> {
    let header = Header {
        record: "header".into(),
        format: FORMAT.into(),
        version: VERSION,
        seed: sc.seed,
        attempt: sc.attempt,
        duration: sc.duration,
        tick: sc.tick,
        extent: sc.extent,
        ego: sc.ego,
        candidates: sc.candidates.clone(),
        sdvs: sc.sdvs.clone(),
        actors: sc.actors.len(),
    };
    let line = serde_json::to_string(&header).map_err(|e| WorldError::Format(e.to_string()))?;
    writeln!(w, "{line}")?;
    for a in &sc.actors {
        let rec = ActorRecord {
            record: "actor".into(),
            id: a.id,
            kind: a.kind,
            length: a.length,
            width: a.width,
            is_candidate_sdv: a.is_candidate_sdv,
            is_sdv: a.is_sdv,
            phase: sc.phase_of(a.id),
            tick: a.trajectory.tick,
            trajectory: a.trajectory.poses.iter().map(|p| [p.x, p.y, p.theta]).collect(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| WorldError::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_scenario<R: BufRead>(r: R) -> Result<Scenario> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| WorldError::Format("empty file".into()))??;
    let h: Header = serde_json::from_str(&first).map_err(|e| WorldError::Format(format!("header: {e}")))?;
    if h.record != "header" || h.format != FORMAT {
        return Err(WorldError::Format("first record is not a scenario header".into()));
    }
    if h.version != VERSION {
        return Err(WorldError::Format(format!("unsupported version {}", h.version)));
    }
    let mut actors = Vec::with_capacity(h.actors);
    let mut phase = Vec::with_capacity(h.actors);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let a: ActorRecord =
            serde_json::from_str(&line).map_err(|e| WorldError::Format(format!("actor record {i}: {e}")))?;
        if a.record != "actor" || a.id as usize != actors.len() {
            return Err(WorldError::Format(format!("actor record {i} out of order")));
        }
        if a.trajectory.is_empty() {
            return Err(WorldError::Format(format!("actor {} has an empty trajectory", a.id)));
        }
        phase.push(a.phase);
        actors.push(Actor {
            id: a.id,
            kind: a.kind,
            length: a.length,
            width: a.width,
            trajectory: Trajectory {
                tick: a.tick,
                poses: a.trajectory.iter().map(|p| Pose2::new(p[0], p[1], p[2])).collect(),
            },
            is_candidate_sdv: a.is_candidate_sdv,
            is_sdv: a.is_sdv,
        });
    }
    if actors.len() != h.actors {
        return Err(WorldError::Format(format!(
            "header announces {} actors, found {}",
            h.actors,
            actors.len()
        )));
    }
    Ok(Scenario {
        seed: h.seed,
        attempt: h.attempt,
        duration: h.duration,
        tick: h.tick,
        extent: h.extent,
        ego: h.ego,
        candidates: h.candidates,
        sdvs: h.sdvs,
        phase,
        actors,
    })
}
