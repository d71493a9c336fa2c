//! `v2v gen`: scenario files plus a manifest.

use std::fs;

use rayon::prelude::*;
use v2v_core::dataset::{scene_count, scene_seed, split_stats, Dataset, Split};
use v2v_core::worldsim::{generate_scenario, write_scenario, Scenario};

use crate::artifacts::{write, Manifest, SceneEntry, SplitEntry, DATASET_FORMAT, MANIFEST};
use crate::config::{sha256_hex, RunConfig};
use crate::CliError;

/// Writes the dataset and returns its manifest.
pub fn cmd_gen(cfg: &RunConfig, force: bool) -> Result<Manifest, CliError> {
    let dir = cfg.data_dir();
    let occupied = fs::read_dir(&dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied {
        if !force {
            return Err(CliError::Data(format!("{} is not empty; pass --force to replace it", dir.display())));
        }
        fs::remove_dir_all(&dir).map_err(CliError::io(&dir))?;
    }
    let build = |split: Split, frames: usize| -> Result<Vec<Scenario>, CliError> {
        let n = scene_count(frames, cfg.dataset.frames_per_scene);
        let scenes: Result<Vec<_>, _> = (0..n).into_par_iter().map(|i| generate_scenario(&cfg.world, scene_seed(cfg.seed, split, i))).collect();
        Ok(scenes?)
    };
    let train = build(Split::Train, cfg.dataset.train_frames)?;
    let test = build(Split::Test, cfg.dataset.test_frames)?;
    let data = Dataset::assemble(&cfg.world, &cfg.dataset, train, test);

    let mut entries = Vec::new();
    for split in [Split::Train, Split::Test] {
        let scenes = data.split(split);
        let written: Result<Vec<SceneEntry>, CliError> = scenes
            .par_iter()
            .enumerate()
            .map(|(i, sf)| {
                let file = format!("{}/scene_{i:05}.ndjson", split.tag());
                let mut bytes = Vec::new();
                write_scenario(&sf.scenario, &mut bytes)?;
                write(&dir.join(&file), &bytes)?;
                Ok(SceneEntry {
                    file,
                    seed: sf.scenario.seed,
                    sha256: sha256_hex(&bytes),
                    frames: sf.times.clone(),
                })
            })
            .collect();
        let stats = split_stats(scenes, &cfg.world)?;
        println!(
            "{}: {} scenes, {} frames, candidate SDVs mean {:.2} max {}, SDVs mean {:.2}, labels/frame {:.2}, zero-point labels {:.1}%",
            split.tag(),
            stats.scenes,
            stats.frames,
            stats.mean_candidates,
            stats.max_candidates,
            stats.mean_sdvs,
            stats.mean_labels,
            100.0 * stats.zero_point_fraction
        );
        entries.push(SplitEntry { stats, scenes: written? });
    }
    let test = entries.pop().expect("two splits");
    let train = entries.pop().expect("two splits");
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        version: 1,
        config_hash: cfg.data_hash(),
        seed: cfg.seed,
        content_hash: Manifest::content_digest(&train, &test),
        train,
        test,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write(&dir.join(MANIFEST), json.as_bytes())?;
    println!("manifest {} content {}", dir.join(MANIFEST).display(), manifest.content_hash);
    Ok(manifest)
}
