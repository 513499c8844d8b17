//! Central finite-difference check of the analytic adapter gradients.
//!
//! The numerical side only ever calls [`crate::trainer::loss`], i.e. the
//! plain forward pass, so it shares no code with back-propagation.

use crate::adapters::{init_params, AdapterParams, AdapterSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{build_model, BaseWeights, ModelConfig};
use crate::rng::derive_seed;
use crate::task::{build_task, Batch, LossKind, TaskKind, TaskOptions};
use crate::trainer::{loss, loss_and_grads};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Finite differences are O(params × forward); keep models small.
pub const MAX_D_MODEL: usize = 16;
pub const MAX_LAYERS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    /// `max |analytic − numeric| / max(‖analytic‖_∞, ‖numeric‖_∞)`.
    pub max_relative_error: f64,
    pub max_abs_gradient: f64,
}

/// Numerical gradient of the loss with respect to every adapter tensor.
pub fn numerical_grads(
    weights: &BaseWeights,
    params: &AdapterParams,
    spec: &AdapterSpec,
    batch: &Batch,
    kind: LossKind,
    step: f64,
) -> Result<AdapterParams> {
    let mut out = params.zeros_like();
    let n_tensors = params.named_tensors().len();
    let mut probe = params.clone();
    for t in 0..n_tensors {
        let len = params.named_tensors()[t].1.len();
        for i in 0..len {
            let orig = probe.tensors_mut()[t].data()[i];
            probe.tensors_mut()[t].data_mut()[i] = orig + step;
            let plus = loss(weights, &probe, spec, batch, kind)?;
            probe.tensors_mut()[t].data_mut()[i] = orig - step;
            let minus = loss(weights, &probe, spec, batch, kind)?;
            probe.tensors_mut()[t].data_mut()[i] = orig;
            out.tensors_mut()[t].data_mut()[i] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(out)
}

pub fn compare(analytic: &AdapterParams, numeric: &AdapterParams) -> Vec<TensorCheck> {
    analytic
        .named_tensors()
        .into_iter()
        .zip(numeric.named_tensors())
        .map(|((name, a), (_, n))| {
            let scale = a.max_abs().max(n.max_abs());
            let err = a.max_abs_diff(n);
            let rel = if scale == 0.0 { 0.0 } else { err / scale };
            TensorCheck {
                name,
                max_relative_error: rel,
                max_abs_gradient: scale,
            }
        })
        .collect()
}

/// Checks every trainable tensor. `perturb` corrupts the analytic gradient
/// on purpose so callers can confirm the check can fail.
pub fn check_gradients(
    weights: &BaseWeights,
    params: &AdapterParams,
    spec: &AdapterSpec,
    batch: &Batch,
    kind: LossKind,
    perturb: bool,
) -> Result<Vec<TensorCheck>> {
    let (_, mut analytic) = loss_and_grads(weights, params, spec, batch, kind)?;
    if perturb {
        if let Some(t) = analytic.tensors_mut().into_iter().next() {
            let bump = 0.01 * t.max_abs() + 1e-3;
            t.data_mut()[0] += bump;
        }
    }
    let numeric = numerical_grads(weights, params, spec, batch, kind, DEFAULT_STEP)?;
    Ok(compare(&analytic, &numeric))
}

/// Default model for gradient checks: N = 2, d = 16.
pub fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        vocab_size: 32,
        max_len: 16,
        n_outputs: 2,
        seed,
    }
}

/// Adapter parameters with every entry drawn from N(0, std²). Zero-initialized
/// `B` would make the `A` gradient vanish and the check vacuous.
pub fn randomized_params(spec: &AdapterSpec, d_model: usize, seed: u64, std: f64) -> AdapterParams {
    let mut params = init_params(spec, d_model, seed);
    for (i, t) in params.tensors_mut().into_iter().enumerate() {
        *t = Matrix::gaussian(t.rows(), t.cols(), 0.0, std, derive_seed(seed, i as u64));
    }
    params
}

/// One seeded trial: fresh base model, random adapters, a teacher batch
/// (MSE) on even seeds and a parity batch (cross-entropy) on odd seeds when
/// the model has at least two outputs.
pub fn run_trial(
    config: &ModelConfig,
    spec: &AdapterSpec,
    seed: u64,
    perturb: bool,
) -> Result<Vec<TensorCheck>> {
    if config.d_model > MAX_D_MODEL || config.n_layers > MAX_LAYERS {
        return Err(Error::Config(format!(
            "gradient check limited to d_model <= {MAX_D_MODEL} and n_layers <= {MAX_LAYERS}"
        )));
    }
    let config = ModelConfig {
        seed: derive_seed(seed, 1),
        ..config.clone()
    };
    let weights = build_model(&config)?;
    let kind = if seed % 2 == 1 && config.n_outputs >= 2 {
        TaskKind::Parity
    } else {
        TaskKind::Teacher
    };
    let options = TaskOptions {
        seq_len: config.max_len.min(6),
        teacher_rank: spec.rank.min(config.d_model),
        ..TaskOptions::default()
    };
    let task = build_task(kind, &weights, &options, derive_seed(seed, 2))?;
    let batch = task.batch(0, 3)?;
    let params = randomized_params(spec, config.d_model, derive_seed(seed, 3), 0.3);
    check_gradients(&weights, &params, spec, &batch, task.loss_kind(), perturb)
}

pub fn worst(checks: &[TensorCheck]) -> f64 {
    checks
        .iter()
        .map(|c| c.max_relative_error)
        .fold(0.0, f64::max)
}
