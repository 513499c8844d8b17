use anyhow::Result;
use condlora_core::adapters::count_trainable;
use condlora_core::{AdapterSpec, Method};

use crate::common::CommonArgs;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Use d = 768, r = 8, k = 2, N = 12.
    #[arg(long)]
    pub paper_dims: bool,
}

pub fn run(args: &Args) -> Result<u8> {
    let (d, spec) = if args.paper_dims {
        (768, AdapterSpec::new(Method::Lora, 8, 12))
    } else {
        let cfg = args.common.resolve()?;
        (cfg.model.d_model, cfg.adapter)
    };
    let lora = count_trainable(
        &AdapterSpec {
            method: Method::Lora,
            ..spec.clone()
        },
        d,
        d,
    );
    let cond = count_trainable(
        &AdapterSpec {
            method: Method::CondLora,
            ..spec.clone()
        },
        d,
        d,
    );
    println!(
        "d={d} r={} k={} N={}",
        spec.rank,
        spec.k(),
        spec.target_layers.len()
    );
    println!("{:<10} {:>12}", "method", "params");
    println!("{:<10} {:>12}", "lora", lora);
    println!("{:<10} {:>12}", "condlora", cond);
    println!("ratio={}", ratio(lora, cond));
    Ok(0)
}

fn ratio(a: usize, b: usize) -> String {
    if a.is_multiple_of(b) {
        (a / b).to_string()
    } else {
        format!("{:.4}", a as f64 / b as f64)
    }
}
