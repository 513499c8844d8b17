//! Experiment configuration as line-based `key = value` text.
//!
//! Keys are dotted (`model.d_model = 32`); `#` starts a comment. Lists are
//! comma-separated. Unset keys keep their defaults; `adapter.alpha` and
//! `task.teacher_rank` default to `adapter.r`, and `adapter.layers` to every
//! layer.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::adapters::{AdapterSpec, Method};
use crate::error::{Error, Result};
use crate::io::{join, parse_list};
use crate::model::{ModelConfig, TargetModule};
use crate::task::{TaskKind, TaskOptions};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Includes the model seed.
    pub model: ModelConfig,
    pub adapter: AdapterSpec,
    /// Includes the adapter seed.
    pub train: TrainConfig,
    pub task: TaskKind,
    pub task_options: TaskOptions,
    pub data_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let adapter = AdapterSpec::new(Method::Lora, 4, model.n_layers);
        Self {
            model,
            adapter,
            train: TrainConfig::default(),
            task: TaskKind::Teacher,
            task_options: TaskOptions::default(),
            data_seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Tracks which derived defaults were overridden while parsing.
#[derive(Debug, Default)]
pub struct ConfigBuilder {
    config: ExperimentConfig,
    alpha_set: bool,
    layers_set: bool,
    teacher_rank_set: bool,
    n_outputs_set: bool,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_config(config: ExperimentConfig) -> Self {
        Self {
            config,
            alpha_set: true,
            layers_set: true,
            teacher_rank_set: true,
            n_outputs_set: true,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.config;
        let v = value.trim();
        match key.trim() {
            "model.n_layers" => c.model.n_layers = parse_value(key, v)?,
            "model.d_model" => c.model.d_model = parse_value(key, v)?,
            "model.n_heads" => c.model.n_heads = parse_value(key, v)?,
            "model.d_ff" => c.model.d_ff = parse_value(key, v)?,
            "model.vocab_size" => c.model.vocab_size = parse_value(key, v)?,
            "model.max_len" => c.model.max_len = parse_value(key, v)?,
            "model.n_outputs" => {
                c.model.n_outputs = parse_value(key, v)?;
                self.n_outputs_set = true;
            }
            "adapter.method" => c.adapter.method = parse_value(key, v)?,
            "adapter.r" => c.adapter.rank = parse_value(key, v)?,
            "adapter.alpha" => {
                c.adapter.alpha = parse_value(key, v)?;
                self.alpha_set = true;
            }
            "adapter.modules" => {
                let modules: Vec<TargetModule> = parse_list(v)?;
                c.adapter = c.adapter.clone().with_modules(&modules);
            }
            "adapter.layers" => {
                if v == "all" {
                    self.layers_set = false;
                } else {
                    let layers: Vec<usize> = parse_list(v)?;
                    c.adapter = c.adapter.clone().with_layers(&layers);
                    self.layers_set = true;
                }
            }
            "train.batch_size" => c.train.batch_size = parse_value(key, v)?,
            "train.learning_rate" => c.train.learning_rate = parse_value(key, v)?,
            "train.max_steps" => c.train.max_steps = parse_value(key, v)?,
            "train.beta1" => c.train.adam.beta1 = parse_value(key, v)?,
            "train.beta2" => c.train.adam.beta2 = parse_value(key, v)?,
            "train.eps" => c.train.adam.eps = parse_value(key, v)?,
            "train.eval_batches" => c.train.eval_batches = parse_value(key, v)?,
            "task.kind" => c.task = parse_value(key, v)?,
            "task.seq_len" => c.task_options.seq_len = parse_value(key, v)?,
            "task.teacher_rank" => {
                c.task_options.teacher_rank = parse_value(key, v)?;
                self.teacher_rank_set = true;
            }
            "task.teacher_scale" => c.task_options.teacher_scale = parse_value(key, v)?,
            "task.teacher_modules" => c.task_options.teacher_modules = parse_list(v)?,
            "task.parity_token" => c.task_options.parity_token = parse_value(key, v)?,
            "seed.model" => c.model.seed = parse_value(key, v)?,
            "seed.adapter" => c.train.seed = parse_value(key, v)?,
            "seed.data" => c.data_seed = parse_value(key, v)?,
            "output_dir" => c.output_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(idx + 1, "expected `key = value`"))?;
            self.set(k, v)
                .map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn build(mut self) -> Result<ExperimentConfig> {
        let c = &mut self.config;
        if !self.alpha_set {
            c.adapter.alpha = c.adapter.rank as f64;
        }
        if !self.layers_set {
            c.adapter.target_layers = (1..=c.model.n_layers).collect();
        }
        if !self.teacher_rank_set {
            c.task_options.teacher_rank = c.adapter.rank;
        }
        // Teacher regression uses one logit; parity is a two-way classifier.
        if !self.n_outputs_set && c.task == TaskKind::Parity {
            c.model.n_outputs = 2;
        }
        c.validate()?;
        Ok(self.config)
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut b = ConfigBuilder::new();
        b.apply_text(text)?;
        b.build()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.adapter
            .validate(self.model.n_layers, self.model.d_model)?;
        self.train.validate()?;
        let t = &self.task_options;
        if t.seq_len == 0 || t.seq_len > self.model.max_len {
            return Err(Error::Config(format!(
                "task.seq_len {} must be in 1..={}",
                t.seq_len, self.model.max_len
            )));
        }
        if !(t.teacher_scale >= 0.0 && t.teacher_scale.is_finite()) {
            return Err(Error::Config(
                "task.teacher_scale must be non-negative".into(),
            ));
        }
        if t.teacher_rank > self.model.d_model {
            return Err(Error::Config(
                "task.teacher_rank exceeds model.d_model".into(),
            ));
        }
        if self.task == TaskKind::Parity && self.model.n_outputs < 2 {
            return Err(Error::Config(
                "parity task needs model.n_outputs >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Every key, in a form [`ExperimentConfig::parse`] reads back exactly.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let a = &self.adapter;
        let t = &self.train;
        let k = &self.task_options;
        let mut out = String::new();
        let mut kv = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        kv("model.n_layers", m.n_layers.to_string());
        kv("model.d_model", m.d_model.to_string());
        kv("model.n_heads", m.n_heads.to_string());
        kv("model.d_ff", m.d_ff.to_string());
        kv("model.vocab_size", m.vocab_size.to_string());
        kv("model.max_len", m.max_len.to_string());
        kv("model.n_outputs", m.n_outputs.to_string());
        kv("adapter.method", a.method.to_string());
        kv("adapter.r", a.rank.to_string());
        kv("adapter.alpha", a.alpha.to_string());
        kv("adapter.modules", join(&a.target_modules));
        kv("adapter.layers", join(&a.target_layers));
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.learning_rate", t.learning_rate.to_string());
        kv("train.max_steps", t.max_steps.to_string());
        kv("train.beta1", t.adam.beta1.to_string());
        kv("train.beta2", t.adam.beta2.to_string());
        kv("train.eps", t.adam.eps.to_string());
        kv("train.eval_batches", t.eval_batches.to_string());
        kv("task.kind", self.task.to_string());
        kv("task.seq_len", k.seq_len.to_string());
        kv("task.teacher_rank", k.teacher_rank.to_string());
        kv("task.teacher_scale", k.teacher_scale.to_string());
        kv("task.teacher_modules", join(&k.teacher_modules));
        kv("task.parity_token", k.parity_token.to_string());
        kv("seed.model", m.seed.to_string());
        kv("seed.adapter", t.seed.to_string());
        kv("seed.data", self.data_seed.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        out
    }
}
