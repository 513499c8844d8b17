use anyhow::Result;
use condlora_core::model::build_model;
use condlora_core::trainer::bench_throughput;
use condlora_core::{build_task, AdapterSpec, Error, Method};

use crate::common::CommonArgs;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Measurement time per method, at least 1.
    #[arg(long, default_value_t = 2.0)]
    pub seconds: f64,
}

pub fn run(args: &Args) -> Result<u8> {
    if args.seconds.is_nan() || args.seconds < 1.0 {
        return Err(Error::Config(format!("--seconds must be >= 1, got {}", args.seconds)).into());
    }
    let cfg = args.common.resolve()?;
    let weights = build_model(&cfg.model)?;
    let task = build_task(cfg.task, &weights, &cfg.task_options, cfg.data_seed)?;
    // Arms run one after the other so neither competes for the core.
    println!("{:<10} {:>18}", "method", "examples_per_second");
    for method in [Method::Lora, Method::CondLora] {
        let spec = AdapterSpec {
            method,
            ..cfg.adapter.clone()
        };
        let eps = bench_throughput(&weights, &spec, &task, &cfg.train, args.seconds)?;
        println!("{:<10} {:>18.2}", method.name(), eps);
    }
    Ok(0)
}
