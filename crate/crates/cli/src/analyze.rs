use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use condlora_core::analysis::{
    compare_adapters, comparison_csv, conversion_grid, random_baseline_grid, Factor, Side,
    SimilarityGrid,
};
use condlora_core::io::{read_adapter, read_model};
use condlora_core::{AdapterParams, AdapterSpec, BaseWeights, Error};

use crate::common::{write_file, CommonArgs};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Adapter checkpoints. Grids come from the first; a second one is
    /// compared against it layer by layer.
    #[arg(value_name = "ADAPTER", num_args = 0..=2)]
    pub adapters: Vec<PathBuf>,
    /// Base model checkpoint; defaults to `model.ckpt` next to the first
    /// adapter.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Fall back to a truncated pseudoinverse when W0 is singular.
    #[arg(long)]
    pub pseudoinverse: bool,
    /// Random baseline at 768×8, twelve matrices, i = j = 8.
    #[arg(long)]
    pub paper_dims: bool,
    /// Singular-vector side for the grids.
    #[arg(long, default_value = "left")]
    pub side: Side,
}

pub fn run(args: &Args) -> Result<u8> {
    let baseline_seed = args.common.seed_data.unwrap_or(0);
    let mut loaded = Vec::new();
    for path in &args.adapters {
        loaded.push(load_adapter(path)?);
    }
    let base = match (&args.model, args.adapters.first()) {
        (Some(p), _) => Some(load_model(p)?),
        (None, Some(a)) => Some(load_model(&sibling_model(a))?),
        (None, None) => None,
    };

    let out = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("analysis"));
    std::fs::create_dir_all(&out)
        .map_err(Error::from)
        .with_context(|| format!("creating {}", out.display()))?;

    if args.paper_dims {
        let grid = random_baseline_grid(768, 8, 12, 8, 8, args.side, baseline_seed)?;
        emit(&out, "random_baseline.csv", &grid)?;
    }

    let Some(base) = base else {
        if !args.paper_dims {
            // No checkpoint: baseline at the configured desk shape.
            let cfg = args.common.resolve()?;
            let r = cfg.adapter.rank;
            let n = cfg.adapter.target_layers.len().max(2);
            let grid =
                random_baseline_grid(cfg.model.d_model, r, n, r, r, args.side, baseline_seed)?;
            emit(&out, "random_baseline.csv", &grid)?;
        }
        return Ok(0);
    };

    let (spec, params) = &loaded[0];
    for &module in &spec.target_modules {
        for (factor, tag) in [(Factor::A, "A"), (Factor::B, "B")] {
            let grid = conversion_grid(
                &base,
                params,
                spec,
                module,
                factor,
                args.side,
                args.pseudoinverse,
            )?;
            emit(&out, &format!("conv_{tag}_{module}.csv"), &grid)?;
        }
    }
    if !args.paper_dims {
        let r = spec.rank;
        let n = spec.target_layers.len().max(2);
        let grid = random_baseline_grid(base.config.d_model, r, n, r, r, args.side, baseline_seed)?;
        emit(&out, "random_baseline.csv", &grid)?;
    }

    if let Some((spec2, params2)) = loaded.get(1) {
        check_same_base(&base, args, &args.adapters[1])?;
        let rows = compare_adapters(&base, (params, spec), (params2, spec2))?;
        let path = out.join("comparison.csv");
        write_file(&path, &comparison_csv(&rows))?;
        for r in &rows {
            println!(
                "compare {} layer={} phi_A={:.6} phi_B={:.6} phi_dW={:.6}",
                r.module, r.layer, r.phi_a, r.phi_b, r.phi_delta
            );
        }
    }
    Ok(0)
}

fn emit(dir: &Path, name: &str, grid: &SimilarityGrid) -> Result<()> {
    write_file(&dir.join(name), &grid.to_csv())?;
    println!(
        "{name} side={} i={} j={} avg_offdiag={:.6}{}",
        grid.side,
        grid.i,
        grid.j,
        grid.average_offdiagonal,
        if grid.pseudoinverse { " pinv=true" } else { "" }
    );
    Ok(())
}

fn sibling_model(adapter: &Path) -> PathBuf {
    adapter
        .parent()
        .unwrap_or(Path::new("."))
        .join("model.ckpt")
}

fn load_adapter(path: &Path) -> Result<(AdapterSpec, AdapterParams)> {
    read_adapter(path).with_context(|| format!("loading adapter {}", path.display()))
}

fn load_model(path: &Path) -> Result<BaseWeights> {
    read_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn check_same_base(base: &BaseWeights, args: &Args, second: &Path) -> Result<()> {
    if args.model.is_some() {
        return Ok(());
    }
    let other = sibling_model(second);
    if other.exists() && load_model(&other)?.config != base.config {
        bail!(Error::Config(format!(
            "{} and {} were trained on different base models",
            args.adapters[0].display(),
            second.display()
        )));
    }
    Ok(())
}
