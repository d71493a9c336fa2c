//! `v2v replay`: re-fuse a recorded message dump without re-simulating
//! the senders.

use std::path::Path;

use rayon::prelude::*;
use v2v_core::channel::{read_dump, V2VMessage};
use v2v_core::dataset::Split;
use v2v_core::evalkit::report::{metrics_header, metrics_row};
use v2v_core::evalkit::summarize;
use v2v_core::experiment::{receive_frame, FrameRecord};

use crate::artifacts::{load_dataset, load_models, read, write, write_csv};
use crate::config::RunConfig;
use crate::eval::{eval_frames, frames_jsonl, setting_label, DumpIndex};
use crate::CliError;

pub fn cmd_replay(cfg: &RunConfig, index_path: &Path) -> Result<(), CliError> {
    let index: DumpIndex = serde_json::from_slice(&read(index_path)?)?;
    let dump_path = index_path.parent().unwrap_or(Path::new(".")).join(&index.messages);
    let msgs = read_dump(&mut read(&dump_path)?.as_slice())?;
    let expected: usize = index.frames.iter().map(|f| f.2).sum();
    if expected != msgs.len() {
        return Err(CliError::Data(format!("{}: index lists {expected} messages, dump holds {}", index_path.display(), msgs.len())));
    }
    let data = load_dataset(cfg)?;
    let models = load_models(cfg)?;
    let mut groups: Vec<(usize, f64, &[V2VMessage])> = Vec::new();
    let mut at = 0;
    for &(scene, t, n) in &index.frames {
        if scene >= data.test.len() {
            return Err(CliError::Data(format!("dump refers to test scene {scene}, dataset has {}", data.test.len())));
        }
        groups.push((scene, t, &msgs[at..at + n]));
        at += n;
    }
    for m in &msgs {
        println!("sender {} t {:.3} type {:?} bits {}", m.sender, m.timestamp, m.payload.kind, m.bits());
    }
    let recs: Result<Vec<FrameRecord>, _> = groups
        .par_iter()
        .map(|&(scene, t, wire)| receive_frame(&models, &data, Split::Test, scene, t, &index.setting, wire))
        .collect();
    let recs = recs?;
    let summary = summarize(&eval_frames(&recs), &cfg.eval);
    let name = index.setting.strategy.name();
    let rows = vec![metrics_header(&cfg.eval), metrics_row(name, &setting_label(&index.setting), &summary)];
    let dir = cfg.out.join("replay");
    write_csv(&dir.join("metrics.csv"), cfg, &rows)?;
    write(&dir.join(format!("frames_{name}.jsonl")), frames_jsonl(&recs)?.as_bytes())?;
    println!("{}", rows[1]);
    Ok(())
}
