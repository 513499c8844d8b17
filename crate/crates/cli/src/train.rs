use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use condlora_core::io::{adapter_to_string, model_to_string};
use condlora_core::model::build_model;
use condlora_core::trainer::train_run;
use condlora_core::{build_task, Error, ExperimentConfig, TrainReport};

use crate::common::{write_file, CommonArgs};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn run(args: &Args) -> Result<u8> {
    let cfg = args.common.resolve()?;
    let report = train(&cfg)?;
    println!(
        "method={} initial_loss={:.6e} final_loss={:.6e} ratio={:.4} params={} examples_per_second={:.1}",
        report.method,
        report.initial_loss,
        report.final_loss,
        report.final_loss / report.initial_loss,
        report.trainable_param_count,
        report.examples_per_second
    );
    println!("wrote {}", cfg.output_dir.display());
    Ok(0)
}

/// Runs one configured experiment and writes every artifact into
/// `cfg.output_dir`.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)
        .map_err(Error::from)
        .with_context(|| format!("creating {}", dir.display()))?;
    let weights = build_model(&cfg.model)?;
    let task = build_task(cfg.task, &weights, &cfg.task_options, cfg.data_seed)?;
    let (params, report) = train_run(&weights, &cfg.adapter, &task, &cfg.train)?;
    write_file(&dir.join("report.csv"), &report.to_csv())?;
    write_file(
        &dir.join("adapter.ckpt"),
        &adapter_to_string(&cfg.adapter, &params),
    )?;
    write_file(&dir.join("model.ckpt"), &model_to_string(&weights))?;
    write_file(&dir.join("config.txt"), &cfg.to_text())?;
    write_file(&dir.join("run.json"), &summary_line(cfg, &report, dir))?;
    Ok(report)
}

fn summary_line(cfg: &ExperimentConfig, r: &TrainReport, dir: &Path) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{{\"method\":\"{}\",\"task\":\"{}\",\"steps\":{},\"initial_loss\":{:e},\"final_loss\":{:e},\
         \"examples_per_second\":{},\"params\":{},\"seconds\":{},\"seed_model\":{},\"seed_adapter\":{},\
         \"seed_data\":{},\"output_dir\":{:?}}}",
        r.method,
        cfg.task.name(),
        r.losses.len(),
        r.initial_loss,
        r.final_loss,
        r.examples_per_second,
        r.trainable_param_count,
        r.wall_clock_seconds,
        r.model_seed,
        r.adapter_seed,
        r.data_seed,
        dir.display().to_string(),
    );
    s
}
