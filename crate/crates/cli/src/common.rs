use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use condlora_core::config::ConfigBuilder;
use condlora_core::{Error, ExperimentConfig};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_NUMERIC: u8 = 2;

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed_model: Option<u64>,
    #[arg(long)]
    pub seed_adapter: Option<u64>,
    #[arg(long)]
    pub seed_data: Option<u64>,
    /// lora | condlora
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut b = ConfigBuilder::new();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(Error::from)
                .with_context(|| format!("reading {}", path.display()))?;
            b.apply_text(&text)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            b.set(k, v)?;
        }
        let flags = [
            ("seed.model", self.seed_model.map(|v| v.to_string())),
            ("seed.adapter", self.seed_adapter.map(|v| v.to_string())),
            ("seed.data", self.seed_data.map(|v| v.to_string())),
            ("adapter.method", self.method.clone()),
            ("train.max_steps", self.max_steps.map(|v| v.to_string())),
            (
                "output_dir",
                self.out.as_ref().map(|p| p.display().to_string()),
            ),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                b.set(k, &v)?;
            }
        }
        Ok(b.build()?)
    }
}

/// Numeric failures map to 2, everything else to 1.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(err) if err.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

pub fn write_file(path: &std::path::Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(Error::from)
        .with_context(|| format!("writing {}", path.display()))
}
