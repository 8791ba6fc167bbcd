//! Dense small-dimension linear algebra.
//!
//! Vectors are plain `[f64]` slices. Matrices are `d × d`, row-major `Vec<f64>`.
//! Dimensions are expected to stay small (`d ≤ 64`), so everything is dense.

use crate::error::{Error, Result};

/// Number of rank-one updates after which the maintained inverse is
/// recomputed from the accumulated matrix.
pub const INVERSE_REFRESH_INTERVAL: u32 = 1000;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Euclidean distance `‖a − b‖`.
#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `y ← y + alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-major matrix-vector product for a `d × d` matrix.
pub fn mat_vec(m: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    debug_assert_eq!(m.len(), d * d);
    m.chunks_exact(d).map(|row| dot(row, x)).collect()
}

pub fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

pub(crate) fn check_finite(x: &[f64], what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Returns `None` when a non-positive pivot is met.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve_in_place(l: &[f64], d: usize, x: &mut [f64]) {
    // L y = b
    for i in 0..d {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * d + k] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    // Lᵀ x = y
    for i in (0..d).rev() {
        let mut s = x[i];
        for k in i + 1..d {
            s -= l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn solve_spd(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let d = b.len();
    let l = cholesky(a, d)?;
    let mut x = b.to_vec();
    cholesky_solve_in_place(&l, d, &mut x);
    Some(x)
}

/// Inverse of a symmetric positive-definite matrix, symmetrised.
pub fn invert_spd(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let l = cholesky(a, d)?;
    let mut inv = vec![0.0; d * d];
    let mut col = vec![0.0; d];
    for j in 0..d {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        cholesky_solve_in_place(&l, d, &mut col);
        for i in 0..d {
            inv[i * d + j] = col[i];
        }
    }
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (inv[i * d + j] + inv[j * d + i]);
            inv[i * d + j] = v;
            inv[j * d + i] = v;
        }
    }
    Some(inv)
}

/// The ridge accumulator `A = I + Σ x xᵀ` together with a maintained `A⁻¹`.
///
/// Updates use the Sherman–Morrison identity, so each one costs `O(d²)`.
/// Every [`INVERSE_REFRESH_INTERVAL`] updates the inverse is recomputed from
/// `A` to bound floating-point drift.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdAccumulator {
    dim: usize,
    a: Vec<f64>,
    a_inv: Vec<f64>,
    since_refresh: u32,
    // scratch for A⁻¹ x
    work: Vec<f64>,
}

impl SpdAccumulator {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(Self {
            dim,
            a: identity(dim),
            a_inv: identity(dim),
            since_refresh: 0,
            work: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The accumulated matrix `A`, row-major.
    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// The maintained inverse `A⁻¹`, row-major.
    pub fn a_inv(&self) -> &[f64] {
        &self.a_inv
    }

    /// `A ← A + x xᵀ`, with `A⁻¹` updated by Sherman–Morrison.
    pub fn rank_one_update(&mut self, x: &[f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        check_finite(x, "update vector")?;
        let d = self.dim;

        for i in 0..d {
            let xi = x[i];
            let row = &mut self.a[i * d..(i + 1) * d];
            for (aij, xj) in row.iter_mut().zip(x) {
                *aij += xi * xj;
            }
        }

        for i in 0..d {
            self.work[i] = dot(&self.a_inv[i * d..(i + 1) * d], x);
        }
        let denom = 1.0 + dot(x, &self.work);
        for i in 0..d {
            let ui = self.work[i] / denom;
            let row = &mut self.a_inv[i * d..(i + 1) * d];
            for (vij, uj) in row.iter_mut().zip(&self.work) {
                *vij -= ui * uj;
            }
        }

        self.since_refresh += 1;
        if self.since_refresh >= INVERSE_REFRESH_INTERVAL {
            self.refresh_inverse();
        }
        Ok(())
    }

    /// Recomputes `A⁻¹` directly from `A`.
    pub fn refresh_inverse(&mut self) {
        // A ⪰ I, so the factorisation cannot fail for finite input.
        if let Some(inv) = invert_spd(&self.a, self.dim) {
            self.a_inv = inv;
        }
        self.since_refresh = 0;
    }

    /// `xᵀ A⁻¹ x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.quad_form_unchecked(x))
    }

    #[inline]
    pub(crate) fn quad_form_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for i in 0..d {
            s += x[i] * dot(&self.a_inv[i * d..(i + 1) * d], x);
        }
        // A⁻¹ is positive definite; clamp rounding noise around zero.
        s.max(0.0)
    }

    /// `A⁻¹ v`
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, v.len())?;
        Ok(mat_vec(&self.a_inv, v))
    }

    /// `max |(A · A⁻¹ − I)_{ij}|`
    pub fn inverse_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += self.a[i * d + k] * self.a_inv[k * d + j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }
}
