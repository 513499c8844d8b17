//! Normalized subspace similarity, conversion matrices, and the grids built
//! from them.
//!
//! For matrices `X`, `Y` with top-`i` / top-`j` singular vectors `U_X^i`,
//! `U_Y^j` (left or right),
//!
//! ```text
//! φ(X, Y, i, j) = ‖(U_X^i)ᵀ U_Y^j‖_F² / min(i, j)   ∈ [0, 1]
//! ```

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::adapters::{factors, AdapterParams, AdapterSpec, CondLoraParams, LoraParams, Method};
use crate::error::{Error, Result};
use crate::linalg::{pseudoinverse, solve, svd};
use crate::matrix::Matrix;
use crate::model::{BaseWeights, TargetModule};
use crate::rng::derive_seed;

/// Values above `1 + RANGE_TOLERANCE` (or below `-RANGE_TOLERANCE`) are
/// treated as numerical failure rather than clamped.
pub const RANGE_TOLERANCE: f64 = 1e-9;
/// Relative singular-value cutoff for the opt-in pseudoinverse.
pub const PINV_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(Error::Config(format!("unknown side `{other}`"))),
        }
    }
}

/// Orthonormal singular vectors of one matrix on one side, computed once and
/// reused across every pair it takes part in.
#[derive(Debug, Clone)]
pub struct SingularBasis {
    vectors: Matrix,
}

impl SingularBasis {
    pub fn new(x: &Matrix, side: Side) -> Result<Self> {
        let d = svd(x)?;
        let vectors = match side {
            Side::Left => d.u,
            Side::Right => d.vt.transpose(),
        };
        Ok(Self { vectors })
    }

    pub fn available(&self) -> usize {
        self.vectors.cols()
    }

    pub fn similarity(&self, other: &SingularBasis, i: usize, j: usize) -> Result<f64> {
        for (req, basis) in [(i, self), (j, other)] {
            if req == 0 || req > basis.available() {
                return Err(Error::RankTooLarge {
                    requested: req,
                    available: basis.available(),
                });
            }
        }
        if self.vectors.rows() != other.vectors.rows() {
            return Err(Error::Shape {
                op: "subspace_similarity",
                left: self.vectors.shape(),
                right: other.vectors.shape(),
            });
        }
        let ux = self.vectors.take_cols(i);
        let uy = other.vectors.take_cols(j);
        let overlap = ux.t_matmul(&uy)?;
        let phi = overlap.frobenius_norm().powi(2) / i.min(j) as f64;
        if !phi.is_finite() || !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(&phi) {
            return Err(Error::NonFinite(format!(
                "subspace similarity {phi} outside [0, 1]"
            )));
        }
        Ok(phi.clamp(0.0, 1.0))
    }
}

pub fn subspace_similarity(x: &Matrix, y: &Matrix, i: usize, j: usize, side: Side) -> Result<f64> {
    SingularBasis::new(x, side)?.similarity(&SingularBasis::new(y, side)?, i, j)
}

fn inverse_apply(w0: &Matrix, rhs: &Matrix, pseudo: bool) -> Result<Matrix> {
    if !w0.is_square() {
        return Err(Error::NotSquare {
            rows: w0.rows(),
            cols: w0.cols(),
        });
    }
    if rhs.rows() != w0.rows() {
        return Err(Error::Shape {
            op: "conversion",
            left: w0.shape(),
            right: rhs.shape(),
        });
    }
    if pseudo {
        pseudoinverse(w0, PINV_TOLERANCE)?.matmul(rhs)
    } else {
        solve(w0, rhs)
    }
}

/// `W0⁻¹ · Aᵀ`, the map taking `W0` to `Aᵀ`. `a` is `r × d`.
pub fn conversion_a(w0: &Matrix, a: &Matrix, pseudo: bool) -> Result<Matrix> {
    inverse_apply(w0, &a.transpose(), pseudo)
}

/// `W0⁻¹ · B`, the map taking `W0` to `B`. `b` is `d × r`.
pub fn conversion_b(w0: &Matrix, b: &Matrix, pseudo: bool) -> Result<Matrix> {
    inverse_apply(w0, b, pseudo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGrid {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub side: Side,
    pub i: usize,
    pub j: usize,
    /// Mean over cells with row ≠ column; NaN for a single matrix.
    pub average_offdiagonal: f64,
    pub pseudoinverse: bool,
}

impl SimilarityGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("labels");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.values) {
            out.push_str(label);
            for v in row {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        let _ = write!(
            out,
            "# side={} i={} j={} avg_offdiag={:.6}",
            self.side, self.i, self.j, self.average_offdiagonal
        );
        if self.pseudoinverse {
            out.push_str(" pinv=true");
        }
        out.push('\n');
        out
    }
}

/// φ between every ordered pair of `matrices`.
pub fn layer_similarity_grid(
    matrices: &[Matrix],
    labels: &[String],
    i: usize,
    j: usize,
    side: Side,
) -> Result<SimilarityGrid> {
    if matrices.is_empty() || labels.len() != matrices.len() {
        return Err(Error::Config("grid needs one label per matrix".into()));
    }
    let shape = matrices[0].shape();
    if let Some(m) = matrices.iter().find(|m| m.shape() != shape) {
        return Err(Error::Shape {
            op: "layer_similarity_grid",
            left: shape,
            right: m.shape(),
        });
    }
    let bases = matrices
        .iter()
        .map(|m| SingularBasis::new(m, side))
        .collect::<Result<Vec<_>>>()?;
    let n = bases.len();
    let mut values = vec![vec![0.0; n]; n];
    for p in 0..n {
        for q in p..n {
            values[p][q] = bases[p].similarity(&bases[q], i, j)?;
            values[q][p] = if i == j {
                values[p][q]
            } else {
                bases[q].similarity(&bases[p], i, j)?
            };
        }
    }
    let off: Vec<f64> = (0..n)
        .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
        .map(|(p, q)| values[p][q])
        .collect();
    let average_offdiagonal = if off.is_empty() {
        f64::NAN
    } else {
        off.iter().sum::<f64>() / off.len() as f64
    };
    Ok(SimilarityGrid {
        labels: labels.to_vec(),
        values,
        side,
        i,
        j,
        average_offdiagonal,
        pseudoinverse: false,
    })
}

/// Grid over `n` independent standard Gaussian `rows × cols` matrices.
pub fn random_baseline_grid(
    rows: usize,
    cols: usize,
    n: usize,
    i: usize,
    j: usize,
    side: Side,
    seed: u64,
) -> Result<SimilarityGrid> {
    if n < 2 {
        return Err(Error::Config(
            "random baseline needs at least two matrices".into(),
        ));
    }
    let matrices: Vec<Matrix> = (0..n)
        .map(|k| Matrix::gaussian(rows, cols, 0.0, 1.0, derive_seed(seed, k as u64)))
        .collect();
    let labels: Vec<String> = (1..=n).map(|k| format!("rand{k}")).collect();
    layer_similarity_grid(&matrices, &labels, i, j, side)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    A,
    B,
}

/// Per-layer conversion matrices of one module, ordered by layer.
pub fn conversion_matrices(
    weights: &BaseWeights,
    params: &AdapterParams,
    spec: &AdapterSpec,
    module: TargetModule,
    factor: Factor,
    pseudo: bool,
) -> Result<Vec<(usize, Matrix)>> {
    spec.target_layers
        .iter()
        .map(|&l| {
            let w0 = weights.projection(module, l)?;
            let (a, b) = factors(params, spec, w0, module, l)?;
            let conv = match factor {
                Factor::A => conversion_a(w0, &a, pseudo)?,
                Factor::B => conversion_b(w0, &b, pseudo)?,
            };
            Ok((l, conv))
        })
        .collect()
}

/// Layer-by-layer φ grid of conversion matrices; left side and `i = j = r`
/// are the customary choice.
pub fn conversion_grid(
    weights: &BaseWeights,
    params: &AdapterParams,
    spec: &AdapterSpec,
    module: TargetModule,
    factor: Factor,
    side: Side,
    pseudo: bool,
) -> Result<SimilarityGrid> {
    let convs = conversion_matrices(weights, params, spec, module, factor, pseudo)?;
    let labels: Vec<String> = convs.iter().map(|(l, _)| l.to_string()).collect();
    let matrices: Vec<Matrix> = convs.into_iter().map(|(_, m)| m).collect();
    let mut grid = layer_similarity_grid(&matrices, &labels, spec.rank, spec.rank, side)?;
    grid.pseudoinverse = pseudo;
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub module: TargetModule,
    pub layer: usize,
    /// Right singular vectors of `A` vs `A_cond`.
    pub phi_a: f64,
    /// Left singular vectors of `B` vs `B_cond`.
    pub phi_b: f64,
    /// Left singular vectors of `ΔW` vs `ΔW_cond`.
    pub phi_delta: f64,
}

/// Compares matrices of two adapter sets target by target, with `i = j = r`.
/// Usually the first is LoRA and the second CondLoRA, but any two sets over
/// the same targets and rank work.
pub fn compare_adapters(
    weights: &BaseWeights,
    first: (&AdapterParams, &AdapterSpec),
    second: (&AdapterParams, &AdapterSpec),
) -> Result<Vec<ComparisonRow>> {
    let (p1, s1) = first;
    let (p2, s2) = second;
    if s1.rank != s2.rank
        || s1.target_modules != s2.target_modules
        || s1.target_layers != s2.target_layers
    {
        return Err(Error::Config(
            "adapter sets must share rank, target modules and target layers".into(),
        ));
    }
    let r = s1.rank;
    s1.targets()
        .map(|(m, l)| {
            let w0 = weights.projection(m, l)?;
            let (a1, b1) = factors(p1, s1, w0, m, l)?;
            let (a2, b2) = factors(p2, s2, w0, m, l)?;
            let d1 = b1.matmul(&a1)?.scale(s1.scale());
            let d2 = b2.matmul(&a2)?.scale(s2.scale());
            Ok(ComparisonRow {
                module: m,
                layer: l,
                phi_a: subspace_similarity(&a1, &a2, r, r, Side::Right)?,
                phi_b: subspace_similarity(&b1, &b2, r, r, Side::Left)?,
                phi_delta: subspace_similarity(&d1, &d2, r, r, Side::Left)?,
            })
        })
        .collect()
}

pub fn compare_lora_condlora(
    weights: &BaseWeights,
    lora: &LoraParams,
    lora_spec: &AdapterSpec,
    cond: &CondLoraParams,
    cond_spec: &AdapterSpec,
) -> Result<Vec<ComparisonRow>> {
    if lora_spec.method != Method::Lora || cond_spec.method != Method::CondLora {
        return Err(Error::Config("expected a lora and a condlora spec".into()));
    }
    compare_adapters(
        weights,
        (&AdapterParams::Lora(lora.clone()), lora_spec),
        (&AdapterParams::CondLora(cond.clone()), cond_spec),
    )
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("module,layer,phi_A,phi_B,phi_dW\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6}",
            r.module, r.layer, r.phi_a, r.phi_b, r.phi_delta
        );
    }
    out
}
