//! Flux-form spatial operators on a grid.
//!
//! The divergence operator evaluates the mobility `B` once per interior face
//! at the arithmetic mean of the entropy variable on the two adjacent cells.
//! Fluxes are antisymmetric across a face, so every operator here has zero
//! discrete mass.

use crate::error::{Result, SktError};
use crate::grid::{neumann_laplacian, Face, FieldKind, Grid, GridField};
use crate::model::SktParameters;

/// Face mobilities frozen at a given entropy-variable state.
#[derive(Debug, Clone)]
pub struct FaceMobility {
    n: usize,
    n_cells: usize,
    faces: Vec<Face>,
    /// Row-major `n × n` block per face.
    b: Vec<f64>,
    /// `u(w_face)` per face, `n` values each.
    u_face: Vec<f64>,
}

impl FaceMobility {
    pub fn new(params: &SktParameters, grid: &Grid, w: &GridField) -> Result<Self> {
        let n = params.n();
        w.check_shape(n, grid.len())?;
        if w.values().iter().any(|v| !v.is_finite()) {
            return Err(SktError::NonFinite("entropy variable"));
        }
        let faces = grid.faces();
        let mut b = vec![0.0; faces.len() * n * n];
        let mut u_face = vec![0.0; faces.len() * n];
        let mut wf = vec![0.0; n];
        for (f, face) in faces.iter().enumerate() {
            for i in 0..n {
                let wi = w.species(i);
                wf[i] = 0.5 * (wi[face.left] + wi[face.right]);
            }
            params.mobility_into(&wf, &mut u_face[f * n..(f + 1) * n], &mut b[f * n * n..(f + 1) * n * n]);
        }
        Ok(Self { n, n_cells: grid.len(), faces, b, u_face })
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Mobility block of face `f`.
    pub fn block(&self, f: usize) -> &[f64] {
        &self.b[f * self.n * self.n..(f + 1) * self.n * self.n]
    }

    pub fn face_density(&self, f: usize) -> &[f64] {
        &self.u_face[f * self.n..(f + 1) * self.n]
    }

    /// `div(B ∇w)` with the frozen face mobilities, on raw species-major values.
    pub fn apply_raw(&self, w: &[f64], out: &mut [f64]) {
        let (n, nc) = (self.n, self.n_cells);
        out.iter_mut().for_each(|x| *x = 0.0);
        for (f, face) in self.faces.iter().enumerate() {
            let blk = self.block(f);
            for i in 0..n {
                let mut flux = 0.0;
                for j in 0..n {
                    flux += blk[i * n + j] * (w[j * nc + face.right] - w[j * nc + face.left]);
                }
                flux *= face.inv_h2;
                out[i * nc + face.left] += flux;
                out[i * nc + face.right] -= flux;
            }
        }
    }

    pub fn apply(&self, w: &GridField) -> Result<GridField> {
        w.check_shape(self.n, self.n_cells)?;
        let mut out = vec![0.0; w.values().len()];
        self.apply_raw(w.values(), &mut out);
        GridField::new(FieldKind::Dual, self.n, self.n_cells, out)
    }

    /// `∫ ∇w : B ∇w dx` with the frozen mobilities (nonnegative).
    pub fn dissipation(&self, w: &[f64], cell_volume: f64) -> f64 {
        let (n, nc) = (self.n, self.n_cells);
        let mut dw = vec![0.0; n];
        let mut total = 0.0;
        for (f, face) in self.faces.iter().enumerate() {
            for (i, d) in dw.iter_mut().enumerate() {
                *d = w[i * nc + face.right] - w[i * nc + face.left];
            }
            let blk = self.block(f);
            let mut q = 0.0;
            for i in 0..n {
                for j in 0..n {
                    q += dw[i] * blk[i * n + j] * dw[j];
                }
            }
            total += q * face.inv_h2;
        }
        total * cell_volume
    }

    /// Compares, face by face, `∇w : B ∇w` with the lower bound of
    /// [`SktParameters::dissipation_lower_bound`] at the face density, using
    /// `z = h''(u_face)^{-1} ∇w`.
    pub fn lower_bound_check(&self, params: &SktParameters, w: &[f64], cell_volume: f64) -> FaceBoundCheck {
        let (n, nc) = (self.n, self.n_cells);
        let pi = params.pi();
        let mut grad = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut check = FaceBoundCheck::default();
        for (f, face) in self.faces.iter().enumerate() {
            let h = face.inv_h2.sqrt();
            let uf = self.face_density(f);
            for i in 0..n {
                grad[i] = (w[i * nc + face.right] - w[i * nc + face.left]) * h;
                z[i] = uf[i] / pi[i] * grad[i];
            }
            let blk = self.block(f);
            let mut q = 0.0;
            for i in 0..n {
                for j in 0..n {
                    q += grad[i] * blk[i * n + j] * grad[j];
                }
            }
            let bound = params.dissipation_lower_bound(uf, &z);
            let slack = q - bound + 1e-12 * (1.0 + bound.abs());
            check.min_slack = check.min_slack.min(slack);
            check.min_bound = check.min_bound.min(bound);
            check.bound_total += bound * cell_volume;
            if slack < 0.0 || bound < -1e-12 {
                check.violations += 1;
            }
        }
        check
    }
}

/// Outcome of [`FaceMobility::lower_bound_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceBoundCheck {
    /// Number of faces where the form fell below the bound or the bound below 0.
    pub violations: usize,
    /// `min (q − bound + 1e-12 (1 + |bound|))` over faces.
    pub min_slack: f64,
    pub min_bound: f64,
    /// Quadrature of the bound (comparable to the dissipation).
    pub bound_total: f64,
}

impl Default for FaceBoundCheck {
    fn default() -> Self {
        Self { violations: 0, min_slack: f64::INFINITY, min_bound: f64::INFINITY, bound_total: 0.0 }
    }
}

/// `div(B(w_face) ∇w)` with the mobility evaluated at the current state.
pub fn divergence_mobility(params: &SktParameters, grid: &Grid, w: &GridField) -> Result<GridField> {
    FaceMobility::new(params, grid, w)?.apply(w)
}

/// `Δ_h (u_i (a_i0 + Σ_j a_ij u_j))` species by species.
pub fn laplacian_form_rhs(params: &SktParameters, grid: &Grid, u: &GridField) -> Result<GridField> {
    let n = params.n();
    u.check_shape(n, grid.len())?;
    if let Some(k) = u.values().iter().position(|&v| v <= 0.0) {
        return Err(SktError::NonPositiveDensity {
            species: k / grid.len(),
            cell: k % grid.len(),
            value: u.values()[k],
        });
    }
    let pressure = laplacian_coefficients(params, u);
    let mut out = Vec::with_capacity(u.values().len());
    for i in 0..n {
        let p: Vec<f64> = pressure[i].iter().zip(u.species(i)).map(|(c, ui)| c * ui).collect();
        out.extend(neumann_laplacian(grid, &p)?);
    }
    GridField::new(FieldKind::Dual, n, grid.len(), out)
}

/// Cellwise `a_i0 + Σ_j a_ij u_j`, one vector per species.
pub fn laplacian_coefficients(params: &SktParameters, u: &GridField) -> Vec<Vec<f64>> {
    let n = params.n();
    (0..n)
        .map(|i| {
            (0..u.n_cells())
                .map(|c| params.a0()[i] + (0..n).map(|j| params.a(i, j) * u.species(j)[c]).sum::<f64>())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DiffusionMode;
    use std::f64::consts::PI;

    fn heat() -> SktParameters {
        SktParameters::new(vec![1.0], vec![vec![0.0]], Some(vec![1.0]), DiffusionMode::WithoutSelfDiffusion).unwrap()
    }

    fn two_species() -> SktParameters {
        SktParameters::new(
            vec![0.1, 0.2],
            vec![vec![0.5, 1.0], vec![0.5, 0.3]],
            None,
            DiffusionMode::WithSelfDiffusion,
        )
        .unwrap()
    }

    fn wavy(grid: &Grid, n: usize) -> GridField {
        let vals = (0..n)
            .flat_map(|i| grid.sample(move |x, y| 0.4 * (3.0 * x + i as f64).sin() + 0.2 * (2.0 * y).cos()))
            .collect();
        GridField::new(FieldKind::EntropyVariable, n, grid.len(), vals).unwrap()
    }

    #[test]
    fn constants_are_annihilated() {
        let g = Grid::new_2d(6, 5, 1.0, 1.0).unwrap();
        let p = two_species();
        let w = GridField::constant(FieldKind::EntropyVariable, 2, g.len(), 0.3).unwrap();
        assert!(divergence_mobility(&p, &g, &w).unwrap().max_abs() == 0.0);
        let u = GridField::constant(FieldKind::Density, 2, g.len(), 1.7).unwrap();
        assert!(laplacian_form_rhs(&p, &g, &u).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn mobility_form_linearizes_to_laplacian() {
        let g = Grid::new_1d(64, 1.0).unwrap();
        let delta = 1e-6;
        let u: Vec<f64> = g.sample(|x, _| 1.0 + delta * (PI * x).cos());
        let w = GridField::new(FieldKind::EntropyVariable, 1, 64, u.iter().map(|v| v.ln()).collect()).unwrap();
        let div = divergence_mobility(&heat(), &g, &w).unwrap();
        let lap = neumann_laplacian(&g, &u).unwrap();
        let scale = lap.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = div.values().iter().zip(&lap).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-4 * scale, "err {err} scale {scale}");
    }

    #[test]
    fn fluxes_telescope() {
        for g in [Grid::new_1d(40, 2.0).unwrap(), Grid::new_2d(7, 9, 1.0, 2.0).unwrap()] {
            let p = two_species();
            let w = wavy(&g, 2);
            let div = divergence_mobility(&p, &g, &w).unwrap();
            for i in 0..2 {
                assert!(g.integrate(div.species(i)).abs() < 1e-12);
            }
            let u = GridField::new(FieldKind::Density, 2, g.len(), w.values().iter().map(|x| x.exp()).collect())
                .unwrap();
            let lf = laplacian_form_rhs(&p, &g, &u).unwrap();
            for i in 0..2 {
                assert!(g.integrate(lf.species(i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_form_reduces_to_heat() {
        let g = Grid::new_1d(20, 1.0).unwrap();
        let p = SktParameters::new(vec![2.5], vec![vec![0.0]], None, DiffusionMode::WithoutSelfDiffusion).unwrap();
        let u: Vec<f64> = g.sample(|x, _| 1.0 + 0.3 * (PI * x).cos());
        let field = GridField::new(FieldKind::Density, 1, 20, u.clone()).unwrap();
        let lf = laplacian_form_rhs(&p, &g, &field).unwrap();
        let lap = neumann_laplacian(&g, &u).unwrap();
        for (a, b) in lf.values().iter().zip(&lap) {
            assert!((a - 2.5 * b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn laplacian_form_rejects_nonpositive() {
        let g = Grid::new_1d(4, 1.0).unwrap();
        let u = GridField::new(FieldKind::Dual, 1, 4, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(laplacian_form_rhs(&heat(), &g, &u), Err(SktError::NonPositiveDensity { .. })));
    }

    #[test]
    fn dissipation_matches_inner_product_and_bound() {
        let g = Grid::new_2d(8, 6, 1.0, 1.0).unwrap();
        let p = two_species();
        let w = wavy(&g, 2);
        let mob = FaceMobility::new(&p, &g, &w).unwrap();
        let div = mob.apply(&w).unwrap();
        let inner: f64 = (0..2).map(|i| g.inner(w.species(i), div.species(i))).sum();
        let d = mob.dissipation(w.values(), g.cell_volume());
        assert!(d > 0.0);
        assert!((d + inner).abs() < 1e-12 * d);
        let check = mob.lower_bound_check(&p, w.values(), g.cell_volume());
        assert_eq!(check.violations, 0);
        assert!(check.bound_total <= d * (1.0 + 1e-12));
    }
}
