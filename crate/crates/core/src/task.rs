//! Synthetic fine-tuning tasks with deterministic, seeded batch streams.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::adapters::{AdapterState, Target};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{forward, BaseWeights, TargetModule};
use crate::rng::{derive_seed, Rng};

const EVAL_STREAM: u64 = 0xE7A1_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Teacher,
    Parity,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Teacher => "teacher",
            TaskKind::Parity => "parity",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(TaskKind::Teacher),
            "parity" => Ok(TaskKind::Parity),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `batch × n_outputs` regression targets.
    Values(Matrix),
    Classes(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub tokens: Vec<Vec<usize>>,
    pub targets: Targets,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOptions {
    pub seq_len: usize,
    /// Rank of every hidden teacher delta.
    pub teacher_rank: usize,
    /// Both teacher factors have entry standard deviation `teacher_scale / √d`.
    pub teacher_scale: f64,
    pub teacher_modules: Vec<TargetModule>,
    /// Token whose occurrence count decides the parity label.
    pub parity_token: usize,
}

impl Default for TaskOptions {
    fn default() -> Self {
        Self {
            seq_len: 12,
            teacher_rank: 4,
            teacher_scale: 0.5,
            teacher_modules: vec![TargetModule::Query, TargetModule::Value],
            parity_token: 1,
        }
    }
}

/// The base model perturbed by hidden rank-`r*` deltas; the student only sees
/// the teacher's logits.
#[derive(Debug, Clone)]
pub struct TeacherTask {
    teacher: BaseWeights,
    deltas: BTreeMap<Target, Matrix>,
}

impl TeacherTask {
    pub fn new(base: &BaseWeights, opts: &TaskOptions, seed: u64) -> Result<Self> {
        let d = base.config.d_model;
        if opts.teacher_rank > d {
            return Err(Error::Config(format!(
                "teacher rank {} exceeds d_model {d}",
                opts.teacher_rank
            )));
        }
        let mut deltas = BTreeMap::new();
        let mut stream = 0;
        for &m in &opts.teacher_modules {
            for l in 1..=base.config.n_layers {
                stream += 1;
                let delta = if opts.teacher_rank == 0 || opts.teacher_scale == 0.0 {
                    Matrix::zeros(d, d)
                } else {
                    let mut rng = Rng::new(derive_seed(seed, stream));
                    let b = Matrix::gaussian_from(d, opts.teacher_rank, 0.0, 1.0, &mut rng);
                    let a = Matrix::gaussian_from(opts.teacher_rank, d, 0.0, 1.0, &mut rng);
                    let c = opts.teacher_scale * opts.teacher_scale / d as f64;
                    b.matmul(&a)?.scale(c)
                };
                deltas.insert((m, l), delta);
            }
        }
        let state = AdapterState::from_deltas(deltas.clone());
        let mut teacher = base.clone();
        for (&(m, l), delta) in state.deltas() {
            let w = teacher.layers[l - 1].projection_mut(m);
            *w = w.add(delta)?;
        }
        Ok(Self { teacher, deltas })
    }

    /// Hidden deltas, exposed for diagnostics only.
    pub fn deltas(&self) -> &BTreeMap<Target, Matrix> {
        &self.deltas
    }

    pub fn teacher_weights(&self) -> &BaseWeights {
        &self.teacher
    }
}

#[derive(Debug, Clone)]
pub enum TaskData {
    Teacher(Box<TeacherTask>),
    Parity,
}

#[derive(Debug, Clone)]
pub struct Task {
    pub kind: TaskKind,
    pub options: TaskOptions,
    pub seed: u64,
    vocab_size: usize,
    max_len: usize,
    data: TaskData,
}

pub fn build_task(
    kind: TaskKind,
    base: &BaseWeights,
    options: &TaskOptions,
    seed: u64,
) -> Result<Task> {
    let cfg = &base.config;
    if options.seq_len == 0 || options.seq_len > cfg.max_len {
        return Err(Error::Config(format!(
            "task seq_len {} must be in 1..={}",
            options.seq_len, cfg.max_len
        )));
    }
    let data = match kind {
        TaskKind::Teacher => TaskData::Teacher(Box::new(TeacherTask::new(base, options, seed)?)),
        TaskKind::Parity => {
            if cfg.n_outputs < 2 {
                return Err(Error::Config("parity task needs n_outputs >= 2".into()));
            }
            if options.parity_token >= cfg.vocab_size {
                return Err(Error::Config("parity token outside vocabulary".into()));
            }
            TaskData::Parity
        }
    };
    Ok(Task {
        kind,
        options: options.clone(),
        seed,
        vocab_size: cfg.vocab_size,
        max_len: cfg.max_len,
        data,
    })
}

impl Task {
    pub fn loss_kind(&self) -> LossKind {
        match self.kind {
            TaskKind::Teacher => LossKind::Mse,
            TaskKind::Parity => LossKind::CrossEntropy,
        }
    }

    pub fn data(&self) -> &TaskData {
        &self.data
    }

    /// Training batch number `step`; a pure function of `(seed, step)`.
    pub fn batch(&self, step: u64, batch_size: usize) -> Result<Batch> {
        self.make_batch(derive_seed(self.seed, step), batch_size)
    }

    /// Held-out batch number `index`, drawn from a stream disjoint from
    /// training batches.
    pub fn eval_batch(&self, index: u64, batch_size: usize) -> Result<Batch> {
        self.make_batch(derive_seed(self.seed ^ EVAL_STREAM, index), batch_size)
    }

    fn make_batch(&self, seed: u64, batch_size: usize) -> Result<Batch> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let mut rng = Rng::new(seed);
        let len = self.options.seq_len.min(self.max_len);
        match &self.data {
            TaskData::Teacher(t) => {
                let tokens: Vec<Vec<usize>> = (0..batch_size)
                    .map(|_| (0..len).map(|_| rng.below(self.vocab_size)).collect())
                    .collect();
                let logits = forward(&t.teacher, None, &tokens)?.logits;
                Ok(Batch {
                    tokens,
                    targets: Targets::Values(logits),
                })
            }
            TaskData::Parity => {
                let special = self.options.parity_token;
                let mut labels = Vec::with_capacity(batch_size);
                let tokens = (0..batch_size)
                    .map(|_| {
                        let seq: Vec<usize> = (0..len)
                            .map(|_| {
                                if rng.uniform() < 0.25 {
                                    special
                                } else {
                                    rng.below(self.vocab_size)
                                }
                            })
                            .collect();
                        let count = seq.iter().filter(|&&t| t == special).count();
                        labels.push(usize::from(count % 2 == 0));
                        seq
                    })
                    .collect();
                Ok(Batch {
                    tokens,
                    targets: Targets::Classes(labels),
                })
            }
        }
    }
}
