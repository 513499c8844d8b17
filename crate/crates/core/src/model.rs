//! A small post-layer-norm transformer encoder with frozen weights.
//!
//! Attention projections are stored as `out × in` and applied as
//! `y = x · Wᵀ`, the same layout adapter deltas `ΔW = B·A` use. Feed-forward
//! and head weights are stored `in × out` and applied as `y = x · W + b`.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use crate::adapters::AdapterState;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::{derive_seed, Rng};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TargetModule {
    Query,
    Key,
    Value,
    Output,
}

impl TargetModule {
    pub const ALL: [TargetModule; 4] = [Self::Query, Self::Key, Self::Value, Self::Output];

    pub fn name(self) -> &'static str {
        match self {
            Self::Query => "query",
            Self::Key => "key",
            Self::Value => "value",
            Self::Output => "output",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TargetModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown target module `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub n_outputs: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            vocab_size: 64,
            max_len: 32,
            n_outputs: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("n_outputs", self.n_outputs),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// query, key, value, output projections, each `d_model × d_model`.
    pub attention: [Matrix; 4],
    pub ffn_in: Matrix,
    pub ffn_in_bias: Vec<f64>,
    pub ffn_out: Matrix,
    pub ffn_out_bias: Vec<f64>,
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
}

impl LayerWeights {
    pub fn projection(&self, module: TargetModule) -> &Matrix {
        &self.attention[module.index()]
    }

    pub fn projection_mut(&mut self, module: TargetModule) -> &mut Matrix {
        &mut self.attention[module.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseWeights {
    pub config: ModelConfig,
    /// Layer `l` (1-based) lives at index `l - 1`.
    pub layers: Vec<LayerWeights>,
    pub token_embed: Matrix,
    pub pos_embed: Matrix,
    pub head: Matrix,
}

impl BaseWeights {
    /// The frozen projection `W0` of `module` in 1-based layer `layer`.
    pub fn projection(&self, module: TargetModule, layer: usize) -> Result<&Matrix> {
        self.layer(layer).map(|l| l.projection(module))
    }

    pub fn layer(&self, layer: usize) -> Result<&LayerWeights> {
        if layer == 0 || layer > self.layers.len() {
            return Err(Error::Config(format!(
                "layer {layer} outside 1..={}",
                self.layers.len()
            )));
        }
        Ok(&self.layers[layer - 1])
    }
}

/// Deterministically samples frozen base weights from `config.seed`.
///
/// Attention projections are N(0, 1/d_model); biases start at zero and
/// layer-norm gains at one.
pub fn build_model(config: &ModelConfig) -> Result<BaseWeights> {
    config.validate()?;
    let d = config.d_model;
    let dff = config.d_ff;
    let std_d = 1.0 / (d as f64).sqrt();
    let std_ff = 1.0 / (dff as f64).sqrt();
    let mut stream = 0u64;
    let mut next_rng = || {
        stream += 1;
        Rng::new(derive_seed(config.seed, stream))
    };
    let token_embed = Matrix::gaussian_from(config.vocab_size, d, 0.0, 1.0, &mut next_rng());
    let pos_embed = Matrix::gaussian_from(config.max_len, d, 0.0, 0.5, &mut next_rng());
    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        let attention =
            std::array::from_fn(|_| Matrix::gaussian_from(d, d, 0.0, std_d, &mut next_rng()));
        layers.push(LayerWeights {
            attention,
            ffn_in: Matrix::gaussian_from(d, dff, 0.0, std_d, &mut next_rng()),
            ffn_in_bias: vec![0.0; dff],
            ffn_out: Matrix::gaussian_from(dff, d, 0.0, std_ff, &mut next_rng()),
            ffn_out_bias: vec![0.0; d],
            ln1_gain: vec![1.0; d],
            ln1_bias: vec![0.0; d],
            ln2_gain: vec![1.0; d],
            ln2_bias: vec![0.0; d],
        });
    }
    let head = Matrix::gaussian_from(d, config.n_outputs, 0.0, std_d, &mut next_rng());
    Ok(BaseWeights {
        config: config.clone(),
        layers,
        token_embed,
        pos_embed,
        head,
    })
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `batch × n_outputs`.
    pub logits: Matrix,
    /// `hidden[b][l]` is the `len × d_model` output of layer `l + 1` for
    /// sequence `b`.
    pub hidden: Vec<Vec<Matrix>>,
}

/// Runs the encoder over a batch of token sequences. Adapter deltas, when
/// given, are added to their target projections before the pass.
pub fn forward(
    weights: &BaseWeights,
    adapters: Option<&AdapterState>,
    tokens: &[Vec<usize>],
) -> Result<ForwardOutput> {
    let projections = effective_projections(weights, adapters)?;
    if tokens.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut logits = Matrix::zeros(tokens.len(), weights.config.n_outputs);
    let mut hidden = Vec::with_capacity(tokens.len());
    for (b, seq) in tokens.iter().enumerate() {
        let pass = sequence_forward(weights, &projections, seq)?;
        logits.row_mut(b).copy_from_slice(&pass.logits);
        hidden.push(pass.layers.into_iter().map(|c| c.x_out).collect());
    }
    Ok(ForwardOutput { logits, hidden })
}

pub(crate) type Projections<'a> = Vec<[Cow<'a, Matrix>; 4]>;

/// `W0 + ΔW` for every attention projection; untouched projections borrow.
pub(crate) fn effective_projections<'a>(
    weights: &'a BaseWeights,
    adapters: Option<&AdapterState>,
) -> Result<Projections<'a>> {
    let mut out: Projections<'a> = weights
        .layers
        .iter()
        .map(|l| std::array::from_fn(|i| Cow::Borrowed(&l.attention[i])))
        .collect();
    if let Some(state) = adapters {
        for (&(module, layer), delta) in state.deltas() {
            let w0 = weights.projection(module, layer)?;
            out[layer - 1][module.index()] = Cow::Owned(w0.add(delta)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    x_in: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Attention probabilities, one `len × len` matrix per head.
    probs: Vec<Matrix>,
    attn: Matrix,
    ln1: LnCache,
    h_pre: Matrix,
    ln2: LnCache,
    pub(crate) x_out: Matrix,
}

#[derive(Debug, Clone)]
pub(crate) struct SequencePass {
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) logits: Vec<f64>,
}

pub(crate) fn embed(weights: &BaseWeights, seq: &[usize]) -> Result<Matrix> {
    let cfg = &weights.config;
    if seq.is_empty() {
        return Err(Error::Config("empty token sequence".into()));
    }
    if seq.len() > cfg.max_len {
        return Err(Error::SequenceTooLong {
            len: seq.len(),
            max: cfg.max_len,
        });
    }
    let mut x = Matrix::zeros(seq.len(), cfg.d_model);
    for (t, &tok) in seq.iter().enumerate() {
        if tok >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange {
                token: tok,
                vocab: cfg.vocab_size,
            });
        }
        let row = x.row_mut(t);
        for ((o, e), p) in row
            .iter_mut()
            .zip(weights.token_embed.row(tok))
            .zip(weights.pos_embed.row(t))
        {
            *o = e + p;
        }
    }
    Ok(x)
}

pub(crate) fn sequence_forward(
    weights: &BaseWeights,
    projections: &Projections<'_>,
    seq: &[usize],
) -> Result<SequencePass> {
    let mut x = embed(weights, seq)?;
    let mut layers = Vec::with_capacity(weights.layers.len());
    for (lw, proj) in weights.layers.iter().zip(projections) {
        let cache = layer_forward(lw, proj, &x, weights.config.n_heads)?;
        x = cache.x_out.clone();
        layers.push(cache);
    }
    let t = x.rows() as f64;
    let mut pooled = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (p, v) in pooled.iter_mut().zip(x.row(r)) {
            *p += v;
        }
    }
    pooled.iter_mut().for_each(|p| *p /= t);
    let head = &weights.head;
    let logits = (0..head.cols())
        .map(|o| {
            pooled
                .iter()
                .enumerate()
                .map(|(i, p)| p * head[(i, o)])
                .sum()
        })
        .collect();
    Ok(SequencePass { layers, logits })
}

fn layer_forward(
    lw: &LayerWeights,
    proj: &[Cow<'_, Matrix>; 4],
    x: &Matrix,
    n_heads: usize,
) -> Result<LayerCache> {
    let q = x.matmul_t(&proj[0])?;
    let k = x.matmul_t(&proj[1])?;
    let v = x.matmul_t(&proj[2])?;
    let (len, d) = x.shape();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Matrix::zeros(len, d);
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        let mut p = Matrix::zeros(len, len);
        for i in 0..len {
            let qi = &q.row(i)[cols.clone()];
            let row = p.row_mut(i);
            for (j, s) in row.iter_mut().enumerate() {
                *s = dot(qi, &k.row(j)[cols.clone()]) * scale;
            }
            softmax_in_place(row);
            let out = &mut concat.row_mut(i)[cols.clone()];
            for (j, &pij) in p.row(i).iter().enumerate() {
                for (o, vj) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += pij * vj;
                }
            }
        }
        probs.push(p);
    }
    let attn_out = concat.matmul_t(&proj[3])?;
    let r1 = x.add(&attn_out)?;
    let (x1, ln1) = layer_norm(&r1, &lw.ln1_gain, &lw.ln1_bias);
    let mut h_pre = x1.matmul(&lw.ffn_in)?;
    add_bias(&mut h_pre, &lw.ffn_in_bias);
    let h = h_pre.map(gelu);
    let mut f = h.matmul(&lw.ffn_out)?;
    add_bias(&mut f, &lw.ffn_out_bias);
    let r2 = x1.add(&f)?;
    let (x_out, ln2) = layer_norm(&r2, &lw.ln2_gain, &lw.ln2_bias);
    Ok(LayerCache {
        x_in: x.clone(),
        q,
        k,
        v,
        probs,
        attn: concat,
        ln1,
        h_pre,
        ln2,
        x_out,
    })
}

/// Back-propagates `d_out` (gradient w.r.t. the layer output) through one
/// layer. Returns the gradient w.r.t. the layer input and, for every
/// projection flagged in `want`, the gradient w.r.t. its effective weight
/// (`out × in`).
pub(crate) fn layer_backward(
    lw: &LayerWeights,
    proj: &[Cow<'_, Matrix>; 4],
    cache: &LayerCache,
    d_out: &Matrix,
    want: [bool; 4],
) -> Result<(Matrix, [Option<Matrix>; 4])> {
    let mut grads: [Option<Matrix>; 4] = Default::default();
    let dr2 = layer_norm_backward(d_out, &cache.ln2, &lw.ln2_gain);
    let dh = dr2.matmul_t(&lw.ffn_out)?;
    let mut dh_pre = dh;
    for (g, &z) in dh_pre.data_mut().iter_mut().zip(cache.h_pre.data()) {
        *g *= gelu_grad(z);
    }
    let mut dx1 = dr2;
    dx1.add_assign(&dh_pre.matmul_t(&lw.ffn_in)?)?;
    let dr1 = layer_norm_backward(&dx1, &cache.ln1, &lw.ln1_gain);

    // attention output projection
    if want[3] {
        grads[3] = Some(dr1.t_matmul(&cache.attn)?);
    }
    let d_concat = dr1.matmul(&proj[3])?;

    let (len, d) = cache.x_in.shape();
    let n_heads = cache.probs.len();
    let dh_size = d / n_heads;
    let scale = 1.0 / (dh_size as f64).sqrt();
    let mut dq = Matrix::zeros(len, d);
    let mut dk = Matrix::zeros(len, d);
    let mut dv = Matrix::zeros(len, d);
    let mut dp = vec![0.0; len];
    for (h, p) in cache.probs.iter().enumerate() {
        let cols = h * dh_size..(h + 1) * dh_size;
        for i in 0..len {
            let doi = &d_concat.row(i)[cols.clone()];
            for (j, g) in dp.iter_mut().enumerate() {
                *g = dot(doi, &cache.v.row(j)[cols.clone()]);
            }
            let pi = p.row(i);
            for (j, &pij) in pi.iter().enumerate() {
                for (g, o) in dv.row_mut(j)[cols.clone()].iter_mut().zip(doi) {
                    *g += pij * o;
                }
            }
            let weighted = dot(pi, &dp);
            for j in 0..len {
                let ds = pi[j] * (dp[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj = &cache.k.row(j)[cols.clone()];
                for (g, kv) in dq.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                    *g += ds * kv;
                }
                let qi = &cache.q.row(i)[cols.clone()];
                for (g, qv) in dk.row_mut(j)[cols.clone()].iter_mut().zip(qi) {
                    *g += ds * qv;
                }
            }
        }
    }

    let mut dx = dr1;
    for (idx, dproj) in [(0, &dq), (1, &dk), (2, &dv)] {
        if want[idx] {
            grads[idx] = Some(dproj.t_matmul(&cache.x_in)?);
        }
        dx.add_assign(&dproj.matmul(&proj[idx])?)?;
    }
    Ok((dx, grads))
}

fn add_bias(m: &mut Matrix, bias: &[f64]) {
    for r in 0..m.rows() {
        for (x, b) in m.row_mut(r).iter_mut().zip(bias) {
            *x += b;
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64]) -> (Matrix, LnCache) {
    let (rows, cols) = x.shape();
    let mut y = Matrix::zeros(rows, cols);
    let mut xhat = Matrix::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(inv);
        for c in 0..cols {
            let xh = (row[c] - mean) * inv;
            xhat[(r, c)] = xh;
            y[(r, c)] = gain[c] * xh + bias[c];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(dy: &Matrix, cache: &LnCache, gain: &[f64]) -> Matrix {
    let (rows, cols) = dy.shape();
    let n = cols as f64;
    let mut dx = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let xh = cache.xhat.row(r);
        let dxhat: Vec<f64> = dy.row(r).iter().zip(gain).map(|(g, w)| g * w).collect();
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dot(&dxhat, xh) / n;
        let inv = cache.inv_std[r];
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = inv * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}
