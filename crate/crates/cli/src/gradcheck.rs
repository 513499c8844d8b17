use anyhow::Result;
use condlora_core::gradcheck::{run_trial, small_config, worst, DEFAULT_TOLERANCE};
use condlora_core::{AdapterSpec, Error, Method};

use crate::common::{CommonArgs, EXIT_NUMERIC};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of seeded trials, starting at the model seed.
    #[arg(long, default_value_t = 1)]
    pub trials: u64,
    /// Corrupt the analytic gradient; the check must then fail.
    #[arg(long)]
    pub perturb: bool,
}

pub fn run(args: &Args) -> Result<u8> {
    let (model, spec) = if args.common.config.is_some() || !args.common.overrides.is_empty() {
        let cfg = args.common.resolve()?;
        (cfg.model, cfg.adapter)
    } else {
        let model = small_config(args.common.seed_model.unwrap_or(0));
        let method = match &args.common.method {
            Some(m) => m.parse()?,
            None => Method::Lora,
        };
        (model.clone(), AdapterSpec::new(method, 4, model.n_layers))
    };
    if args.trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()).into());
    }
    let mut overall: f64 = 0.0;
    for t in 0..args.trials {
        let seed = model.seed.wrapping_add(t);
        let checks = run_trial(&model, &spec, seed, args.perturb)?;
        for c in &checks {
            println!(
                "seed={seed} tensor={} max_rel_err={:.3e} max_abs_grad={:.3e}",
                c.name, c.max_relative_error, c.max_abs_gradient
            );
        }
        overall = overall.max(worst(&checks));
    }
    let pass = overall < DEFAULT_TOLERANCE;
    println!(
        "{} method={} worst={overall:.3e} tolerance={DEFAULT_TOLERANCE:e}",
        if pass { "PASS" } else { "FAIL" },
        spec.method.name()
    );
    Ok(if pass { 0 } else { EXIT_NUMERIC })
}
