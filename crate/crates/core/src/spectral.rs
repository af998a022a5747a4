//! Cosine eigenbasis of the discrete Neumann Laplacian and the spectral
//! operators built on it.
//!
//! In 1D with `N` cells of width `h` the eigenpairs are
//!
//! ```text
//! λ_k = (4/h²) sin²(πk / 2N),    η_k(x_c) = c_k cos(πk x_c / L),
//! ```
//!
//! with `c_0 = L^{-1/2}` and `c_k = (2/L)^{1/2}`, orthonormal for the cell
//! quadrature `Σ_c h f_c g_c`. In 2D the basis is the tensor product and the
//! eigenvalues add. Modes are exposed sorted by eigenvalue (ties broken by
//! the `ky * nx + kx` index).
//!
//! The connection operator is the multiplier `L = (I + Λ)^{m/2}`, so that
//! `‖L f‖_{L²}² = Σ (1+λ_k)^m f̂_k²` is an `H^m`-equivalent norm with
//! constant 1, and the dual norm is `Σ (1+λ_k)^{-m} f̂_k²`.

use std::f64::consts::PI;

use crate::error::{Result, SktError};
use crate::grid::{FieldKind, Grid, GridField};

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    grid: Grid,
    m: u32,
    /// `cos_x[k * nx + i] = η^x_k(x_i)`.
    cos_x: Vec<f64>,
    cos_y: Vec<f64>,
    /// Eigenvalues in natural (`ky * nx + kx`) layout.
    lambda: Vec<f64>,
    /// Natural indices sorted by eigenvalue.
    order: Vec<usize>,
    mult_l: Vec<f64>,
    mult_lstarl: Vec<f64>,
    mult_dual: Vec<f64>,
}

/// Smallest integer `m > d/2 + 1`.
pub fn default_sobolev_index(dim: usize) -> u32 {
    (dim as u32) / 2 + 2
}

fn axis_basis(n: usize, len: f64) -> (Vec<f64>, Vec<f64>) {
    let h = len / n as f64;
    let mut table = vec![0.0; n * n];
    let mut lambda = vec![0.0; n];
    for k in 0..n {
        let norm = if k == 0 { (1.0 / len).sqrt() } else { (2.0 / len).sqrt() };
        let s = (PI * k as f64 / (2.0 * n as f64)).sin();
        lambda[k] = 4.0 / (h * h) * s * s;
        for i in 0..n {
            table[k * n + i] = norm * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
        }
    }
    (table, lambda)
}

impl SpectralBasis {
    /// Eigenbasis of `grid` with Sobolev index `m` (default: smallest `m > d/2 + 1`).
    pub fn build(grid: &Grid, m: Option<u32>) -> Result<Self> {
        let m = m.unwrap_or_else(|| default_sobolev_index(grid.dim()));
        if 2 * m as usize <= grid.dim() + 2 {
            return Err(SktError::InvalidParameters(format!(
                "Sobolev index m = {m} must exceed d/2 + 1 for d = {}",
                grid.dim()
            )));
        }
        let (cos_x, lx) = axis_basis(grid.nx(), grid.lx());
        let (cos_y, ly) = if grid.dim() == 2 {
            axis_basis(grid.ny(), grid.ly())
        } else {
            (vec![1.0], vec![0.0])
        };
        let nx = grid.nx();
        let lambda: Vec<f64> = (0..grid.len()).map(|k| lx[k % nx] + ly[k / nx]).collect();
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by(|&a, &b| lambda[a].total_cmp(&lambda[b]).then(a.cmp(&b)));
        let half = m as f64 / 2.0;
        let mult_l = lambda.iter().map(|l| (1.0 + l).powf(half)).collect();
        let mult_lstarl = lambda.iter().map(|l| (1.0 + l).powi(m as i32)).collect();
        let mult_dual = lambda.iter().map(|l| (1.0 + l).powi(-(m as i32))).collect();
        Ok(Self {
            grid: grid.clone(),
            m,
            cos_x,
            cos_y,
            lambda,
            order,
            mult_l,
            mult_lstarl,
            mult_dual,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn sobolev_index(&self) -> u32 {
        self.m
    }
    pub fn len(&self) -> usize {
        self.lambda.len()
    }
    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// Eigenvalues sorted ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.order.iter().map(|&k| self.lambda[k]).collect()
    }

    /// Natural-layout index of the `k`-th sorted mode.
    pub(crate) fn lambda_natural(&self) -> &[f64] {
        &self.lambda
    }

    pub(crate) fn lstarl_multiplier(&self) -> &[f64] {
        &self.mult_lstarl
    }

    /// `k`-th eigenvector (sorted order) sampled at cell centers.
    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        let mut coeffs = vec![0.0; self.len()];
        coeffs[k] = 1.0;
        self.from_spectral(&coeffs)
    }

    /// `max_c |η_k(c)|` for the `k`-th sorted mode.
    pub fn eigenvector_sup(&self, k: usize) -> f64 {
        let nat = self.order[k];
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let (kx, ky) = (nat % nx, nat / nx);
        let sx = self.cos_x[kx * nx..(kx + 1) * nx].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sy = self.cos_y[ky * ny..(ky + 1) * ny].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        sx * sy
    }

    pub(crate) fn forward_natural(&self, f: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let wx = self.grid.hx();
        let wy = if self.grid.dim() == 2 { self.grid.hy() } else { 1.0 };
        let mut tmp = vec![0.0; nx * ny];
        for j in 0..ny {
            let row = &f[j * nx..(j + 1) * nx];
            for kx in 0..nx {
                let basis = &self.cos_x[kx * nx..(kx + 1) * nx];
                let dot: f64 = basis.iter().zip(row).map(|(b, v)| b * v).sum();
                tmp[j * nx + kx] = wx * dot;
            }
        }
        if ny == 1 {
            return tmp;
        }
        let mut out = vec![0.0; nx * ny];
        for ky in 0..ny {
            let basis = &self.cos_y[ky * ny..(ky + 1) * ny];
            for (j, b) in basis.iter().enumerate() {
                let wb = wy * b;
                for kx in 0..nx {
                    out[ky * nx + kx] += wb * tmp[j * nx + kx];
                }
            }
        }
        out
    }

    pub(crate) fn inverse_natural(&self, coeffs: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let tmp = if ny == 1 {
            coeffs.to_vec()
        } else {
            let mut tmp = vec![0.0; nx * ny];
            for ky in 0..ny {
                let basis = &self.cos_y[ky * ny..(ky + 1) * ny];
                for (j, b) in basis.iter().enumerate() {
                    for kx in 0..nx {
                        tmp[j * nx + kx] += b * coeffs[ky * nx + kx];
                    }
                }
            }
            tmp
        };
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny {
            let row = &tmp[j * nx..(j + 1) * nx];
            let dst = &mut out[j * nx..(j + 1) * nx];
            for (kx, &c) in row.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let basis = &self.cos_x[kx * nx..(kx + 1) * nx];
                for (d, b) in dst.iter_mut().zip(basis) {
                    *d += c * b;
                }
            }
        }
        out
    }

    /// Coefficients `f̂_k = ⟨f, η_k⟩` in sorted mode order.
    pub fn to_spectral(&self, f: &[f64]) -> Vec<f64> {
        let nat = self.forward_natural(f);
        self.order.iter().map(|&k| nat[k]).collect()
    }

    /// Inverse of [`Self::to_spectral`]; shorter coefficient vectors are zero-padded.
    pub fn from_spectral(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut nat = vec![0.0; self.len()];
        for (k, &c) in coeffs.iter().enumerate().take(self.len()) {
            nat[self.order[k]] = c;
        }
        self.inverse_natural(&nat)
    }

    pub(crate) fn apply_multiplier(&self, f: &[f64], mult: &[f64]) -> Vec<f64> {
        let mut nat = self.forward_natural(f);
        for (c, m) in nat.iter_mut().zip(mult) {
            *c *= m;
        }
        self.inverse_natural(&nat)
    }

    fn weighted_square(&self, f: &[f64], mult: &[f64]) -> f64 {
        let nat = self.forward_natural(f);
        nat.iter().zip(mult).map(|(c, m)| m * c * c).sum()
    }

    /// `L f`, multiplier `(1+λ_k)^{m/2}`.
    pub fn apply_l(&self, f: &[f64]) -> Vec<f64> {
        self.apply_multiplier(f, &self.mult_l)
    }

    /// `L*L f`, multiplier `(1+λ_k)^m`.
    pub fn apply_lstarl(&self, f: &[f64]) -> Vec<f64> {
        self.apply_multiplier(f, &self.mult_lstarl)
    }

    /// `‖f‖_{D(L)} = ‖L f‖_{L²}`.
    pub fn l_norm(&self, f: &[f64]) -> f64 {
        self.weighted_square(f, &self.mult_lstarl).sqrt()
    }

    /// `‖f‖_{D(L)'}`.
    pub fn dual_norm(&self, f: &[f64]) -> f64 {
        self.weighted_square(f, &self.mult_dual).sqrt()
    }

    /// Species-wise `L` on a field.
    pub fn apply_l_field(&self, f: &GridField) -> Result<GridField> {
        self.map_species(f, f.kind(), |s| self.apply_l(s))
    }

    /// Species-wise `L*L` on a field; the result is a dual quantity.
    pub fn apply_lstarl_field(&self, f: &GridField) -> Result<GridField> {
        self.map_species(f, FieldKind::Dual, |s| self.apply_lstarl(s))
    }

    /// `(Σ_i ‖f_i‖²_{D(L)'})^{1/2}`.
    pub fn dual_norm_field(&self, f: &GridField) -> f64 {
        (0..f.n_species()).map(|i| self.dual_norm(f.species(i)).powi(2)).sum::<f64>().sqrt()
    }

    /// `(Σ_i ‖L f_i‖²)^{1/2}`.
    pub fn l_norm_field(&self, f: &GridField) -> f64 {
        (0..f.n_species()).map(|i| self.l_norm(f.species(i)).powi(2)).sum::<f64>().sqrt()
    }

    fn map_species(
        &self,
        f: &GridField,
        kind: FieldKind,
        op: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<GridField> {
        if f.n_cells() != self.len() {
            return Err(SktError::ShapeMismatch {
                expected: format!("{} cells", self.len()),
                got: format!("{}", f.n_cells()),
            });
        }
        let values = (0..f.n_species()).flat_map(|i| op(f.species(i))).collect();
        GridField::new(kind, f.n_species(), f.n_cells(), values)
    }
}
