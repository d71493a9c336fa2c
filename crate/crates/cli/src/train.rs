//! `v2v train`: staged training with checkpoints and loss logs.

use v2v_core::train::{train_stage, LogRow, Stage};

use crate::artifacts::{init_models, load_checkpoint, load_dataset, save_checkpoint, write_csv};
use crate::config::RunConfig;
use crate::CliError;

pub fn parse_stages(s: &str) -> Result<Vec<Stage>, CliError> {
    if s == "all" {
        return Ok(Stage::ALL.to_vec());
    }
    Stage::parse(s).map(|st| vec![st]).ok_or_else(|| {
        let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
        CliError::Config(format!("unknown stage `{s}` (expected one of {} or all)", names.join(", ")))
    })
}

pub fn cmd_train(cfg: &RunConfig, stage: &str) -> Result<(), CliError> {
    let stages = parse_stages(stage)?;
    let data = load_dataset(cfg)?;
    let models = init_models(cfg);
    for stage in stages {
        let input = match stage.prerequisite() {
            None => models.single.clone(),
            Some(pre) => load_checkpoint(cfg, pre)?.ok_or_else(|| {
                CliError::Data(format!("stage `{}` needs a `{}` checkpoint; run `v2v train --stage {}` first", stage.name(), pre.name(), pre.name()))
            })?,
        };
        let mut rows = vec![LogRow::CSV_HEADER.to_string()];
        let out = train_stage(stage, &input, &data, &models, &cfg.train, cfg.seed, |r: &LogRow| {
            eprintln!("{} step {} loss {:.4}", r.stage, r.step, r.total);
            rows.push(r.csv());
        })?;
        write_csv(&cfg.ckpt_dir().join(format!("{}.log.csv", stage.name())), cfg, &rows)?;
        let path = save_checkpoint(cfg, stage, &out)?;
        println!("{} -> {}", stage.name(), path.display());
    }
    Ok(())
}
