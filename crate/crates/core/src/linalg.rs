//! LU inversion and one-sided Jacobi SVD.

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Pivot-ratio condition estimate above which inversion is refused.
pub const MAX_CONDITION: f64 = 1e12;
pub const SVD_MAX_SWEEPS: usize = 500;
pub const SVD_TOLERANCE: f64 = 1e-12;

/// Partial-pivot LU factorization of a square matrix, packed in place.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    condition: f64,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Lu> {
        if !a.is_square() {
            return Err(Error::NotSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        if !a.is_finite() {
            return Err(Error::NonFinite("LU input".into()));
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[(i, k)].abs().total_cmp(&lu[(j, k)].abs()))
                .expect("non-empty range");
            if p != k {
                for c in 0..n {
                    let tmp = lu[(k, c)];
                    lu[(k, c)] = lu[(p, c)];
                    lu[(p, c)] = tmp;
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            max_pivot = max_pivot.max(pivot.abs());
            min_pivot = min_pivot.min(pivot.abs());
            if pivot == 0.0 {
                continue;
            }
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        lu[(i, c)] -= f * lu[(k, c)];
                    }
                }
            }
        }
        let condition = if min_pivot == 0.0 {
            f64::INFINITY
        } else {
            max_pivot / min_pivot
        };
        Ok(Lu {
            lu,
            perm,
            condition,
        })
    }

    /// `|largest pivot| / |smallest pivot|`.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    /// Solves `A X = B` for every column of `b`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.lu.rows();
        if b.rows() != n {
            return Err(Error::Shape {
                op: "solve",
                left: self.lu.shape(),
                right: b.shape(),
            });
        }
        if self.condition.is_nan() || self.condition > MAX_CONDITION {
            return Err(Error::Singular {
                condition: self.condition,
            });
        }
        let m = b.cols();
        let mut x = Matrix::zeros(n, m);
        for (i, &p) in self.perm.iter().enumerate() {
            x.row_mut(i).copy_from_slice(b.row(p));
        }
        for c in 0..m {
            for i in 1..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in i + 1..n {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.lu[(i, i)];
            }
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("LU solve".into()));
        }
        Ok(x)
    }
}

pub fn condition_estimate(a: &Matrix) -> Result<f64> {
    Ok(Lu::factor(a)?.condition_estimate())
}

pub fn invert(a: &Matrix) -> Result<Matrix> {
    Lu::factor(a)?.solve(&Matrix::identity(a.rows()))
}

/// Solves `a · X = b`.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    Lu::factor(a)?.solve(b)
}

/// Thin SVD: `a = u · diag(s) · vt` with `u` of shape m×k, `vt` k×n,
/// `k = min(m, n)`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (x, s) in us.row_mut(r).iter_mut().zip(&self.s) {
                *x *= s;
            }
        }
        us.matmul(&self.vt).expect("consistent svd shapes")
    }

    /// Right singular vectors as columns (n×k).
    pub fn v(&self) -> Matrix {
        self.vt.transpose()
    }
}

/// Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
///
/// Singular values come back non-increasing. Each left singular vector is
/// sign-normalized so its largest-magnitude entry is non-negative, with the
/// matching right vector flipped alongside.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    if a.rows() >= a.cols() {
        let (u, s, v) = jacobi_tall(a)?;
        Ok(finish(u, s, v))
    } else {
        let (v, s, u) = jacobi_tall(&a.transpose())?;
        Ok(finish(u, s, v))
    }
}

/// Returns `(u, s, v)` for a matrix with `rows >= cols`, columns stored as
/// rows of the returned `u`/`v` (i.e. transposed) for cache-friendly sweeps.
type Vectors = Vec<Vec<f64>>;

fn jacobi_tall(a: &Matrix) -> Result<(Vectors, Vec<f64>, Vectors)> {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| a.col(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();

    // Columns at rounding-noise level carry no direction; rotating them
    // never settles, so they are skipped and reported as zero.
    let negligible = f64::EPSILON * a.frobenius_norm();
    let floor = negligible * negligible;
    let mut converged = n < 2;
    for _ in 0..SVD_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0
                    || alpha <= floor
                    || beta <= floor
                    || gamma.abs() <= SVD_TOLERANCE * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps: SVD_MAX_SWEEPS,
        });
    }

    let mut order: Vec<(f64, usize)> = cols
        .iter()
        .enumerate()
        .map(|(i, c)| (dot(c, c).sqrt(), i))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut u = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut vv = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &(norm, i)) in order.iter().enumerate() {
        if norm > negligible && norm > f64::MIN_POSITIVE.sqrt() {
            u.push(cols[i].iter().map(|x| x / norm).collect::<Vec<_>>());
            s.push(norm);
        } else {
            u.push(vec![0.0; m]);
            s.push(0.0);
            missing.push(k);
        }
        vv.push(v[i].clone());
    }
    complete_basis(&mut u, &missing, m);
    Ok((u, s, vv))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (xp, xq) = (&mut lo[p], &mut hi[0]);
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (ap, aq) = (*a, *b);
        *a = c * ap - s * aq;
        *b = s * ap + c * aq;
    }
}

/// Fills the listed (zero) columns with unit vectors orthogonal to the rest.
fn complete_basis(u: &mut [Vec<f64>], missing: &[usize], m: usize) {
    let mut candidate = 0;
    for &k in missing {
        loop {
            assert!(candidate < m, "basis completion ran out of candidates");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (j, other) in u.iter().enumerate() {
                    if j == k {
                        continue;
                    }
                    let proj = dot(&e, other);
                    for (x, o) in e.iter_mut().zip(other) {
                        *x -= proj * o;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 0.5 {
                u[k] = e.iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

fn finish(u_cols: Vec<Vec<f64>>, s: Vec<f64>, v_cols: Vec<Vec<f64>>) -> Svd {
    let k = s.len();
    let m = u_cols[0].len();
    let n = v_cols[0].len();
    let mut u = Matrix::zeros(m, k);
    let mut vt = Matrix::zeros(k, n);
    for j in 0..k {
        let lead = u_cols[j]
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            u[(i, j)] = sign * u_cols[j][i];
        }
        for i in 0..n {
            vt[(j, i)] = sign * v_cols[j][i];
        }
    }
    Svd { u, s, vt }
}

/// Moore–Penrose pseudoinverse, dropping singular values below
/// `rel_tol × s_max`.
pub fn pseudoinverse(a: &Matrix, rel_tol: f64) -> Result<Matrix> {
    let d = svd(a)?;
    let cutoff = rel_tol * d.s.first().copied().unwrap_or(0.0);
    // pinv = V · diag(1/s) · Uᵀ
    let mut v_scaled = d.v();
    for r in 0..v_scaled.rows() {
        for (x, &s) in v_scaled.row_mut(r).iter_mut().zip(&d.s) {
            *x = if s > cutoff && s > 0.0 { *x / s } else { 0.0 };
        }
    }
    v_scaled.matmul_t(&d.u)
}
