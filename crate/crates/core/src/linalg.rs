//! Linear solvers used by the implicit steps.
//!
//! Dense LU comes from `nalgebra`; this module adds a banded LU without
//! pivoting (for column diagonally dominant M-matrices) and a matrix-free
//! preconditioned conjugate gradient.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SktError};

/// Systems of at most this many unknowns are factorized densely.
pub const DENSE_LIMIT: usize = 1024;

/// Dense LU solve; fails on a singular or non-finite result.
pub fn dense_solve(matrix: DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let b = DVector::from_column_slice(rhs);
    let x = matrix
        .lu()
        .solve(&b)
        .ok_or_else(|| SktError::LinearSolveFailed("singular dense system".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SktError::LinearSolveFailed("non-finite dense solution".into()));
    }
    Ok(x.as_slice().to_vec())
}

/// Square band matrix with equal lower and upper bandwidth.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (2 * bw + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.bw);
        i * (2 * self.bw + 1) + j + self.bw - i
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.bw);
                let hi = (i + self.bw + 1).min(self.n);
                (lo..hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// Solves `A x = b` by Gaussian elimination without pivoting. Stable for
    /// diagonally dominant matrices; fails on a vanishing pivot.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let (n, bw) = (self.n, self.bw);
        let mut lu = self.clone();
        for k in 0..n {
            let pivot = lu.data[lu.idx(k, k)];
            if pivot.abs() < f64::MIN_POSITIVE || !pivot.is_finite() {
                return Err(SktError::LinearSolveFailed(format!("zero pivot at row {k}")));
            }
            let hi = (k + bw + 1).min(n);
            for i in (k + 1)..hi {
                let ik = lu.idx(i, k);
                let l = lu.data[ik] / pivot;
                lu.data[ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in (k + 1)..hi {
                    let kj = lu.data[lu.idx(k, j)];
                    let ij = lu.idx(i, j);
                    lu.data[ij] -= l * kj;
                }
            }
        }
        let mut x = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = x[i];
            for j in lo..i {
                s -= lu.data[lu.idx(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw + 1).min(n);
            let mut s = x[i];
            for j in (i + 1)..hi {
                s -= lu.data[lu.idx(i, j)] * x[j];
            }
            x[i] = s / lu.data[lu.idx(i, i)];
        }
        Ok(x)
    }
}

/// Result of an iterative solve.
#[derive(Debug, Clone)]
pub struct IterativeSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradient for symmetric positive definite `A`.
///
/// Stops when `‖b − A x‖ ≤ tol · ‖b‖` (Euclidean).
pub fn pcg(
    matvec: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Option<Vec<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<IterativeSolution> {
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(p, q)| p * q).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    let mut x = x0.unwrap_or_else(|| vec![0.0; b.len()]);
    if bnorm == 0.0 {
        return Ok(IterativeSolution { x: vec![0.0; b.len()], iterations: 0, relative_residual: 0.0 });
    }
    let ax = matvec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= tol * bnorm {
            return Ok(IterativeSolution { x, iterations: it, relative_residual: rnorm / bnorm });
        }
        let ap = matvec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(SktError::LinearSolveFailed(format!("CG breakdown (pAp = {pap:e})")));
        }
        let alpha = rz / pap;
        for k in 0..x.len() {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..p.len() {
            p[k] = z[k] + beta * p[k];
        }
    }
    // Recompute the true residual; the recursive one drifts.
    let ax = matvec(&x);
    let rnorm = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt();
    if rnorm <= tol * bnorm {
        Ok(IterativeSolution { x, iterations: max_iter, relative_residual: rnorm / bnorm })
    } else {
        Err(SktError::LinearSolveFailed(format!(
            "CG did not converge in {max_iter} iterations (relative residual {:e})",
            rnorm / bnorm
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_solve_matches_dense() {
        let n = 12;
        let bw = 3;
        let mut band = BandMatrix::zeros(n, bw);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..(i + bw + 1).min(n) {
                let v = if i == j { 10.0 } else { -(((i * 7 + j * 3) % 5) as f64) * 0.3 };
                band.add(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = band.solve(&b).unwrap();
        let y = dense_solve(dense, &b).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-13);
        }
        let r = band.matvec(&x);
        assert!(r.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-13));
    }

    #[test]
    fn band_solve_zero_pivot() {
        let band = BandMatrix::zeros(3, 1);
        assert!(band.solve(&[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn pcg_solves_spd() {
        let n = 30;
        let a = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut s = (2.0 + i as f64 * 0.1) * x[i];
                    if i > 0 {
                        s -= x[i - 1];
                    }
                    if i + 1 < n {
                        s -= x[i + 1];
                    }
                    s
                })
                .collect()
        };
        let b: Vec<f64> = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
        let sol = pcg(a, |r: &[f64]| r.to_vec(), &b, None, 1e-13, 200).unwrap();
        let r = a(&sol.x);
        assert!(r.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-11));
    }

    #[test]
    fn singular_dense_fails() {
        assert!(dense_solve(DMatrix::zeros(2, 2), &[1.0, 1.0]).is_err());
    }
}
