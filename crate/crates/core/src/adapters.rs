//! LoRA and CondLoRA parameterizations of the per-projection delta `ΔW`.
//!
//! LoRA keeps an independent pair `A (r × d_in)`, `B (d_out × r)` for every
//! targeted (module, layer). CondLoRA keeps one pair of bias-free linear maps
//! per module, `θ_A (d × r)` and `θ_B (d × r)`, and derives each layer's
//! factors from that layer's frozen weight:
//!
//! ```text
//! A_cond = (W0 · θ_A)ᵀ      B_cond = W0ᵀ · θ_B
//! ```
//!
//! Both methods apply `ΔW = (α / r) · B · A`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{BaseWeights, TargetModule};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Lora,
    CondLora,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lora => "lora",
            Method::CondLora => "condlora",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lora" => Ok(Method::Lora),
            "condlora" => Ok(Method::CondLora),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// (module, 1-based layer)
pub type Target = (TargetModule, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSpec {
    pub method: Method,
    pub rank: usize,
    pub alpha: f64,
    /// Sorted, deduplicated.
    pub target_modules: Vec<TargetModule>,
    /// Sorted, deduplicated, 1-based.
    pub target_layers: Vec<usize>,
}

impl AdapterSpec {
    /// Query and value projections of every layer, with `alpha = rank`.
    pub fn new(method: Method, rank: usize, n_layers: usize) -> Self {
        Self {
            method,
            rank,
            alpha: rank as f64,
            target_modules: vec![TargetModule::Query, TargetModule::Value],
            target_layers: (1..=n_layers).collect(),
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_modules(mut self, modules: &[TargetModule]) -> Self {
        self.target_modules = modules.to_vec();
        self.normalize();
        self
    }

    pub fn with_layers(mut self, layers: &[usize]) -> Self {
        self.target_layers = layers.to_vec();
        self.normalize();
        self
    }

    fn normalize(&mut self) {
        self.target_modules.sort();
        self.target_modules.dedup();
        self.target_layers.sort_unstable();
        self.target_layers.dedup();
    }

    pub fn validate(&self, n_layers: usize, d_model: usize) -> Result<()> {
        if self.rank == 0 || self.rank > d_model {
            return Err(Error::Config(format!(
                "rank {} must be in 1..={d_model}",
                self.rank
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha {} must be positive",
                self.alpha
            )));
        }
        if self.target_modules.is_empty() {
            return Err(Error::Config("no target modules".into()));
        }
        if self.target_layers.is_empty() {
            return Err(Error::Config("no target layers".into()));
        }
        if let Some(&l) = self.target_layers.iter().find(|&&l| l == 0 || l > n_layers) {
            return Err(Error::Config(format!(
                "target layer {l} outside 1..={n_layers}"
            )));
        }
        Ok(())
    }

    /// Number of target modules.
    pub fn k(&self) -> usize {
        self.target_modules.len()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn targets(&self) -> impl Iterator<Item = Target> + '_ {
        self.target_modules
            .iter()
            .flat_map(move |&m| self.target_layers.iter().map(move |&l| (m, l)))
    }

    pub fn is_target(&self, module: TargetModule, layer: usize) -> bool {
        self.target_modules.contains(&module) && self.target_layers.contains(&layer)
    }

    fn check_target(&self, module: TargetModule, layer: usize) -> Result<()> {
        if self.is_target(module, layer) {
            Ok(())
        } else {
            Err(Error::NotATarget {
                module: module.name().into(),
                layer,
            })
        }
    }
}

/// Trainable-parameter count: `(d_in·r + d_out·r)·k·N` for LoRA and
/// `(d_in·r + d_out·r)·k` for CondLoRA, with `N = |target_layers|`.
pub fn count_trainable(spec: &AdapterSpec, d_in: usize, d_out: usize) -> usize {
    let per_pair = (d_in + d_out) * spec.rank * spec.k();
    match spec.method {
        Method::Lora => per_pair * spec.target_layers.len(),
        Method::CondLora => per_pair,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    /// `r × d_in`
    pub a: Matrix,
    /// `d_out × r`
    pub b: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondPair {
    /// `d × r`, maps `W0` rows to `A_condᵀ`.
    pub theta_a: Matrix,
    /// `d × r`, maps `W0ᵀ` rows to `B_cond`.
    pub theta_b: Matrix,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoraParams {
    pub pairs: BTreeMap<Target, LoraPair>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CondLoraParams {
    pub thetas: BTreeMap<TargetModule, CondPair>,
}

/// Trainable tensors of either method. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub enum AdapterParams {
    Lora(LoraParams),
    CondLora(CondLoraParams),
}

impl AdapterParams {
    pub fn method(&self) -> Method {
        match self {
            AdapterParams::Lora(_) => Method::Lora,
            AdapterParams::CondLora(_) => Method::CondLora,
        }
    }

    /// Tensors in a fixed order with their checkpoint names.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        match self {
            AdapterParams::Lora(p) => p
                .pairs
                .iter()
                .flat_map(|(&(m, l), pair)| {
                    [
                        (format!("lora.{m}.{l}.A"), &pair.a),
                        (format!("lora.{m}.{l}.B"), &pair.b),
                    ]
                })
                .collect(),
            AdapterParams::CondLora(p) => p
                .thetas
                .iter()
                .flat_map(|(m, pair)| {
                    [
                        (format!("cond.{m}.thetaA"), &pair.theta_a),
                        (format!("cond.{m}.thetaB"), &pair.theta_b),
                    ]
                })
                .collect(),
        }
    }

    /// Same order as [`AdapterParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            AdapterParams::Lora(p) => p
                .pairs
                .values_mut()
                .flat_map(|pair| [&mut pair.a, &mut pair.b])
                .collect(),
            AdapterParams::CondLora(p) => p
                .thetas
                .values_mut()
                .flat_map(|pair| [&mut pair.theta_a, &mut pair.theta_b])
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// All-zero tensors with the same layout.
    pub fn zeros_like(&self) -> AdapterParams {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }
}

/// `A ~ N(0, (1/r)²)` entrywise, `B = 0`.
pub fn init_lora(spec: &AdapterSpec, d_model: usize, seed: u64) -> LoraParams {
    let r = spec.rank;
    let pairs = spec
        .targets()
        .enumerate()
        .map(|(i, target)| {
            let a = Matrix::gaussian(r, d_model, 0.0, 1.0 / r as f64, derive_seed(seed, i as u64));
            (
                target,
                LoraPair {
                    a,
                    b: Matrix::zeros(d_model, r),
                },
            )
        })
        .collect();
    LoraParams { pairs }
}

/// `θ_A ~ N(0, (1/r)²)` entrywise, `θ_B = 0`.
pub fn init_condlora(spec: &AdapterSpec, d_model: usize, seed: u64) -> CondLoraParams {
    let r = spec.rank;
    let thetas = spec
        .target_modules
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let theta_a =
                Matrix::gaussian(d_model, r, 0.0, 1.0 / r as f64, derive_seed(seed, i as u64));
            (
                m,
                CondPair {
                    theta_a,
                    theta_b: Matrix::zeros(d_model, r),
                },
            )
        })
        .collect();
    CondLoraParams { thetas }
}

pub fn init_params(spec: &AdapterSpec, d_model: usize, seed: u64) -> AdapterParams {
    match spec.method {
        Method::Lora => AdapterParams::Lora(init_lora(spec, d_model, seed)),
        Method::CondLora => AdapterParams::CondLora(init_condlora(spec, d_model, seed)),
    }
}

/// `A_cond = (W0 · θ_A)ᵀ`, shape `r × d1`.
pub fn cond_a(w0: &Matrix, theta_a: &Matrix) -> Result<Matrix> {
    Ok(w0.matmul(theta_a)?.transpose())
}

/// `B_cond = W0ᵀ · θ_B`, shape `d2 × r`.
pub fn cond_b(w0: &Matrix, theta_b: &Matrix) -> Result<Matrix> {
    w0.t_matmul(theta_b)
}

/// Low-rank factors `(A, B)` that `ΔW` is built from at `(module, layer)`.
pub fn factors(
    params: &AdapterParams,
    spec: &AdapterSpec,
    w0: &Matrix,
    module: TargetModule,
    layer: usize,
) -> Result<(Matrix, Matrix)> {
    spec.check_target(module, layer)?;
    let missing = || Error::NotATarget {
        module: module.name().into(),
        layer,
    };
    match params {
        AdapterParams::Lora(p) => {
            let pair = p.pairs.get(&(module, layer)).ok_or_else(missing)?;
            Ok((pair.a.clone(), pair.b.clone()))
        }
        AdapterParams::CondLora(p) => {
            let pair = p.thetas.get(&module).ok_or_else(missing)?;
            Ok((cond_a(w0, &pair.theta_a)?, cond_b(w0, &pair.theta_b)?))
        }
    }
}

/// `(α/r) · B · A` for the target, with CondLoRA factors derived from `w0`.
pub fn delta_w(
    params: &AdapterParams,
    spec: &AdapterSpec,
    w0: &Matrix,
    module: TargetModule,
    layer: usize,
) -> Result<Matrix> {
    let (a, b) = factors(params, spec, w0, module, layer)?;
    Ok(b.matmul(&a)?.scale(spec.scale()))
}

/// Materialized `ΔW` for every target, ready for a forward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdapterState {
    deltas: BTreeMap<Target, Matrix>,
}

impl AdapterState {
    pub fn materialize(
        params: &AdapterParams,
        spec: &AdapterSpec,
        weights: &BaseWeights,
    ) -> Result<Self> {
        let mut deltas = BTreeMap::new();
        for (m, l) in spec.targets() {
            let w0 = weights.projection(m, l)?;
            let delta = delta_w(params, spec, w0, m, l)?;
            if delta.shape() != w0.shape() {
                return Err(Error::Shape {
                    op: "materialize",
                    left: w0.shape(),
                    right: delta.shape(),
                });
            }
            deltas.insert((m, l), delta);
        }
        Ok(Self { deltas })
    }

    pub fn from_deltas(deltas: BTreeMap<Target, Matrix>) -> Self {
        Self { deltas }
    }

    pub fn deltas(&self) -> &BTreeMap<Target, Matrix> {
        &self.deltas
    }

    pub fn get(&self, module: TargetModule, layer: usize) -> Option<&Matrix> {
        self.deltas.get(&(module, layer))
    }
}

/// Folds every `ΔW` into a copy of the base weights.
///
/// Not idempotent: merging the same adapters twice adds `2·ΔW`.
pub fn merge(
    weights: &BaseWeights,
    params: &AdapterParams,
    spec: &AdapterSpec,
) -> Result<BaseWeights> {
    let state = AdapterState::materialize(params, spec, weights)?;
    let mut merged = weights.clone();
    for (&(m, l), delta) in state.deltas() {
        let w = merged.layers[l - 1].projection_mut(m);
        *w = w.add(delta)?;
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd;
    use crate::model::{build_model, forward, ModelConfig};

    fn desk_spec(method: Method) -> AdapterSpec {
        AdapterSpec::new(method, 4, 4)
    }

    fn random_params(spec: &AdapterSpec, d: usize, seed: u64) -> AdapterParams {
        let mut p = init_params(spec, d, seed);
        for (i, t) in p.tensors_mut().into_iter().enumerate() {
            *t = Matrix::gaussian(
                t.rows(),
                t.cols(),
                0.0,
                0.3,
                derive_seed(seed ^ 0xABCD, i as u64),
            );
        }
        p
    }

    #[test]
    fn full_size_parameter_counts() {
        let lora = AdapterSpec::new(Method::Lora, 8, 12);
        let cond = AdapterSpec::new(Method::CondLora, 8, 12);
        assert_eq!(count_trainable(&lora, 768, 768), 294_912);
        assert_eq!(count_trainable(&cond, 768, 768), 24_576);
    }

    #[test]
    fn desk_parameter_counts_match_tensors() {
        // (32*4 + 32*4) * 2 * 4 = 2048 ; (32*4 + 32*4) * 2 = 512
        for (method, expected) in [(Method::Lora, 2048), (Method::CondLora, 512)] {
            let spec = desk_spec(method);
            assert_eq!(count_trainable(&spec, 32, 32), expected);
            assert_eq!(init_params(&spec, 32, 1).param_count(), expected);
        }
    }

    #[test]
    fn condlora_count_independent_of_layers() {
        let base = count_trainable(&AdapterSpec::new(Method::CondLora, 4, 1), 32, 32);
        for n in 2..=12 {
            let cond = AdapterSpec::new(Method::CondLora, 4, n);
            let lora = AdapterSpec::new(Method::Lora, 4, n);
            assert_eq!(count_trainable(&cond, 32, 32), base);
            assert_eq!(count_trainable(&lora, 32, 32), n * base);
        }
    }

    #[test]
    fn lora_init_zero_b_and_seed_dependent_a() {
        let spec = desk_spec(Method::Lora);
        let p1 = init_lora(&spec, 32, 1);
        let p2 = init_lora(&spec, 32, 2);
        assert_eq!(p1.pairs.len(), 8);
        for (t, pair) in &p1.pairs {
            assert_eq!(pair.a.shape(), (4, 32));
            assert_eq!(pair.b, Matrix::zeros(32, 4));
            assert_ne!(pair.a, p2.pairs[t].a);
            assert_eq!(pair.b, p2.pairs[t].b);
        }
    }

    #[test]
    fn condlora_init_shapes() {
        let spec = desk_spec(Method::CondLora);
        let p = init_condlora(&spec, 32, 3);
        assert_eq!(p.thetas.len(), 2);
        for pair in p.thetas.values() {
            assert_eq!(pair.theta_a.shape(), (32, 4));
            assert_eq!(pair.theta_b, Matrix::zeros(32, 4));
        }
    }

    #[test]
    fn init_deltas_are_zero() {
        let w = build_model(&ModelConfig::default()).unwrap();
        for method in [Method::Lora, Method::CondLora] {
            let spec = desk_spec(method);
            let p = init_params(&spec, 32, 9);
            let state = AdapterState::materialize(&p, &spec, &w).unwrap();
            assert_eq!(state.deltas().len(), 8);
            assert!(state.deltas().values().all(|d| d.max_abs() == 0.0));
        }
    }

    #[test]
    fn cond_factor_identities() {
        let theta = Matrix::gaussian(6, 2, 0.0, 1.0, 4);
        let eye = Matrix::identity(6);
        assert_eq!(cond_a(&eye, &theta).unwrap(), theta.transpose());
        assert_eq!(cond_b(&eye, &theta).unwrap(), theta);
        let w0 = Matrix::gaussian(6, 6, 0.0, 1.0, 5);
        assert_eq!(
            cond_a(&w0, &Matrix::zeros(6, 2)).unwrap(),
            Matrix::zeros(2, 6)
        );
        assert_eq!(
            cond_b(&w0, &Matrix::zeros(6, 2)).unwrap(),
            Matrix::zeros(6, 2)
        );
        // direct matmul oracle
        let a = cond_a(&w0, &theta).unwrap();
        assert_eq!(a, w0.matmul(&theta).unwrap().transpose());
        let b = cond_b(&w0, &theta).unwrap();
        assert!(b.max_abs_diff(&w0.transpose().matmul(&theta).unwrap()) < 1e-14);
    }

    #[test]
    fn delta_rejects_untargeted() {
        let spec = desk_spec(Method::Lora).with_layers(&[1, 2]);
        let p = init_params(&spec, 32, 1);
        let w0 = Matrix::identity(32);
        assert!(matches!(
            delta_w(&p, &spec, &w0, TargetModule::Value, 3),
            Err(Error::NotATarget { .. })
        ));
        assert!(delta_w(&p, &spec, &w0, TargetModule::Key, 1).is_err());
    }

    #[test]
    fn delta_scale_is_one_under_default_alpha() {
        let spec = AdapterSpec::new(Method::Lora, 8, 12);
        assert_eq!(spec.scale(), 1.0);
    }

    #[test]
    fn delta_rank_bound() {
        let w = build_model(&ModelConfig::default()).unwrap();
        for method in [Method::Lora, Method::CondLora] {
            let spec = desk_spec(method);
            let p = random_params(&spec, 32, 77);
            for (m, l) in spec.targets() {
                let d = delta_w(&p, &spec, w.projection(m, l).unwrap(), m, l).unwrap();
                let s = svd(&d).unwrap().s;
                assert!(
                    s[4] < 1e-9 * d.frobenius_norm(),
                    "{method} {m} {l}: {}",
                    s[4]
                );
            }
        }
    }

    #[test]
    fn delta_scale_equivariance() {
        let w = build_model(&ModelConfig::default()).unwrap();
        for method in [Method::Lora, Method::CondLora] {
            let spec = desk_spec(method);
            let doubled = spec.clone().with_alpha(2.0 * spec.alpha);
            let p = random_params(&spec, 32, 5);
            let w0 = w.projection(TargetModule::Query, 2).unwrap();
            let d1 = delta_w(&p, &spec, w0, TargetModule::Query, 2).unwrap();
            let d2 = delta_w(&p, &doubled, w0, TargetModule::Query, 2).unwrap();
            assert_eq!(d2, d1.scale(2.0));
        }
    }

    #[test]
    fn condlora_weight_tying() {
        let w = build_model(&ModelConfig::default()).unwrap();
        let spec = desk_spec(Method::CondLora);
        let p = random_params(&spec, 32, 8);
        let AdapterParams::CondLora(cp) = &p else {
            unreachable!()
        };
        let theta = &cp.thetas[&TargetModule::Value];
        for l in 1..=4 {
            let w0 = w.projection(TargetModule::Value, l).unwrap();
            let manual = cond_b(w0, &theta.theta_b)
                .unwrap()
                .matmul(&cond_a(w0, &theta.theta_a).unwrap())
                .unwrap()
                .scale(spec.scale());
            assert_eq!(
                delta_w(&p, &spec, w0, TargetModule::Value, l).unwrap(),
                manual
            );
        }
    }

    #[test]
    fn merge_zero_adapters_is_identity_and_merge_twice_adds_twice() {
        let w = build_model(&ModelConfig::default()).unwrap();
        let spec = desk_spec(Method::Lora);
        let zero = init_params(&spec, 32, 2);
        assert_eq!(merge(&w, &zero, &spec).unwrap(), w);

        let p = random_params(&spec, 32, 3);
        let once = merge(&w, &p, &spec).unwrap();
        let twice = merge(&once, &p, &spec).unwrap();
        let w0 = w.projection(TargetModule::Value, 1).unwrap();
        let delta = delta_w(&p, &spec, w0, TargetModule::Value, 1).unwrap();
        let expected = w0.add(&delta.scale(2.0)).unwrap();
        assert!(
            twice
                .projection(TargetModule::Value, 1)
                .unwrap()
                .max_abs_diff(&expected)
                < 1e-12
        );
    }

    #[test]
    fn merged_forward_matches_adapter_forward() {
        let w = build_model(&ModelConfig::default()).unwrap();
        let batch: Vec<Vec<usize>> = (0..4)
            .map(|b| (0..10).map(|t| (7 * b + 3 * t) % 64).collect())
            .collect();
        for method in [Method::Lora, Method::CondLora] {
            let spec = desk_spec(method);
            let p = random_params(&spec, 32, 11);
            let state = AdapterState::materialize(&p, &spec, &w).unwrap();
            let with_adapters = forward(&w, Some(&state), &batch).unwrap().logits;
            let merged = forward(&merge(&w, &p, &spec).unwrap(), None, &batch)
                .unwrap()
                .logits;
            assert!(with_adapters.max_abs_diff(&merged) < 1e-9);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(desk_spec(Method::Lora).validate(4, 32).is_ok());
        assert!(AdapterSpec::new(Method::Lora, 33, 4)
            .validate(4, 32)
            .is_err());
        assert!(desk_spec(Method::Lora)
            .with_layers(&[5])
            .validate(4, 32)
            .is_err());
        assert!(desk_spec(Method::Lora)
            .with_alpha(0.0)
            .validate(4, 32)
            .is_err());
        assert!(desk_spec(Method::Lora)
            .with_modules(&[])
            .validate(4, 32)
            .is_err());
    }
}
