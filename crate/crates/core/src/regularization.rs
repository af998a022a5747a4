//! The monotone regularization `Q_ε(w) = u(w) + ε L*L w` and its inverse
//! `R_ε`, computed by damped Newton iteration.
//!
//! `DQ_ε[w] = diag(u_i(w)/π_i) + ε L*L` is symmetric positive definite and
//! bounded below by `ε L*L`, so the Newton direction is a descent direction
//! for any norm of the residual; the iteration backtracks on the dual norm
//! `‖Q_ε(w) − v‖_{D(L)'}`.
//!
//! The same Newton machinery solves the implicit time step
//! `Q_ε(w') − dt·div(B ∇w') = rhs` used by the simulator (frozen face
//! mobilities), which only adds a linear symmetric negative semidefinite term.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SktError};
use crate::grid::{FieldKind, GridField};
use crate::linalg::{dense_solve, pcg, DENSE_LIMIT};
use crate::model::SktParameters;
use crate::operators::FaceMobility;
use crate::spectral::SpectralBasis;

/// Solver controls for [`RegularizationOperator`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Maximum number of step halvings per iteration.
    pub damping: usize,
    /// Largest system factorized densely; larger ones use PCG.
    pub dense_limit: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, damping: 30, dense_limit: DENSE_LIMIT }
    }
}

/// Floor applied to `v` when it seeds the Newton iteration.
const INITIAL_GUESS_FLOOR: f64 = 1e-12;
/// Relative accuracy demanded of linear solves.
const LINEAR_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
pub struct RegularizationOperator {
    epsilon: f64,
    basis: Arc<SpectralBasis>,
    params: Arc<SktParameters>,
    settings: NewtonSettings,
    /// `L*L` as a dense cell-space matrix (without `ε`), when small enough.
    lstarl_dense: Option<DMatrix<f64>>,
}

/// Converged Newton solve.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub w: GridField,
    pub iterations: usize,
    pub residual: f64,
}

impl RegularizationOperator {
    pub fn new(
        epsilon: f64,
        basis: Arc<SpectralBasis>,
        params: Arc<SktParameters>,
        settings: NewtonSettings,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(SktError::InvalidParameters("epsilon must be positive".into()));
        }
        if !(settings.tol > 0.0) || settings.max_iter == 0 {
            return Err(SktError::InvalidParameters("Newton tolerance and iteration budget must be positive".into()));
        }
        let n = basis.len();
        let lstarl_dense = (n <= settings.dense_limit).then(|| {
            let mut m = DMatrix::zeros(n, n);
            let mut e = vec![0.0; n];
            for c in 0..n {
                e[c] = 1.0;
                let col = basis.apply_lstarl(&e);
                m.set_column(c, &nalgebra::DVector::from_vec(col));
                e[c] = 0.0;
            }
            // symmetrize rounding
            let t = m.transpose();
            (m + t) * 0.5
        });
        Ok(Self { epsilon, basis, params, settings, lstarl_dense })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }
    pub fn params(&self) -> &SktParameters {
        &self.params
    }
    pub fn settings(&self) -> NewtonSettings {
        self.settings
    }

    /// Same operator with a different `ε` (shares the basis and dense tables).
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(SktError::InvalidParameters("epsilon must be positive".into()));
        }
        Ok(Self { epsilon, ..self.clone() })
    }

    fn n_cells(&self) -> usize {
        self.basis.len()
    }

    fn check(&self, f: &GridField) -> Result<()> {
        f.check_shape(self.params.n(), self.n_cells())?;
        if f.values().iter().any(|v| !v.is_finite()) {
            return Err(SktError::NonFinite("regularization input"));
        }
        Ok(())
    }

    fn density_raw(&self, w: &[f64]) -> Vec<f64> {
        let nc = self.n_cells();
        let pi = self.params.pi();
        w.iter().enumerate().map(|(k, &x)| (x / pi[k / nc]).exp()).collect()
    }

    /// `u(w)` on a whole field.
    pub fn density(&self, w: &GridField) -> Result<GridField> {
        self.check(w)?;
        GridField::new(FieldKind::Density, w.n_species(), w.n_cells(), self.density_raw(w.values()))
    }

    /// `π_i log u_i` on a whole field.
    pub fn entropy_variable(&self, u: &GridField) -> Result<GridField> {
        u.check_shape(self.params.n(), self.n_cells())?;
        let nc = self.n_cells();
        let pi = self.params.pi();
        let mut w = Vec::with_capacity(u.values().len());
        for (k, &x) in u.values().iter().enumerate() {
            if !(x > 0.0) {
                return Err(SktError::NonPositiveDensity { species: k / nc, cell: k % nc, value: x });
            }
            w.push(pi[k / nc] * x.ln());
        }
        GridField::new(FieldKind::EntropyVariable, u.n_species(), nc, w)
    }

    fn q_raw(&self, w: &[f64]) -> Vec<f64> {
        let nc = self.n_cells();
        let mut v = self.density_raw(w);
        for i in 0..self.params.n() {
            let ll = self.basis.apply_lstarl(&w[i * nc..(i + 1) * nc]);
            for (x, y) in v[i * nc..(i + 1) * nc].iter_mut().zip(ll) {
                *x += self.epsilon * y;
            }
        }
        v
    }

    /// `Q_ε(w) = u(w) + ε L*L w`.
    pub fn apply_q(&self, w: &GridField) -> Result<GridField> {
        self.check(w)?;
        let v = self.q_raw(w.values());
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SktError::NonFinite("Q_eps(w) overflowed"));
        }
        Ok(GridField::from_raw(FieldKind::Dual, w.n_species(), w.n_cells(), v))
    }

    fn dual_norm_raw(&self, f: &[f64]) -> f64 {
        let nc = self.n_cells();
        f.chunks(nc).map(|s| self.basis.dual_norm(s).powi(2)).sum::<f64>().sqrt()
    }

    fn initial_guess(&self, v: &[f64]) -> Vec<f64> {
        let nc = self.n_cells();
        let pi = self.params.pi();
        let mut w = vec![0.0; v.len()];
        for (i, chunk) in v.chunks(nc).enumerate() {
            if chunk.iter().all(|&x| x > 0.0) {
                for (dst, &x) in w[i * nc..(i + 1) * nc].iter_mut().zip(chunk) {
                    *dst = pi[i] * x.max(INITIAL_GUESS_FLOOR).ln();
                }
            }
        }
        w
    }

    /// `R_ε(v)`: the `w` with `Q_ε(w) = v`.
    pub fn solve_r(&self, v: &GridField) -> Result<GridField> {
        Ok(self.solve_r_detailed(v)?.w)
    }

    pub fn solve_r_detailed(&self, v: &GridField) -> Result<NewtonOutcome> {
        self.check(v)?;
        let w0 = self.initial_guess(v.values());
        self.newton(v.values(), None, 0.0, w0)
    }

    /// Solves `Q_ε(w) − dt · div(B_frozen ∇w) = rhs` starting from `w0`.
    pub(crate) fn solve_implicit(
        &self,
        rhs: &[f64],
        mobility: &FaceMobility,
        dt: f64,
        w0: Vec<f64>,
    ) -> Result<NewtonOutcome> {
        self.newton(rhs, Some(mobility), dt, w0)
    }

    fn residual(&self, w: &[f64], rhs: &[f64], mobility: Option<&FaceMobility>, dt: f64) -> Vec<f64> {
        let mut g = self.q_raw(w);
        if let Some(mob) = mobility {
            let mut div = vec![0.0; w.len()];
            mob.apply_raw(w, &mut div);
            for (x, d) in g.iter_mut().zip(&div) {
                *x -= dt * d;
            }
        }
        for (x, r) in g.iter_mut().zip(rhs) {
            *x -= r;
        }
        g
    }

    fn merit(&self, g: &[f64]) -> f64 {
        if g.iter().any(|x| !x.is_finite()) {
            f64::INFINITY
        } else {
            self.dual_norm_raw(g)
        }
    }

    fn newton(
        &self,
        rhs: &[f64],
        mobility: Option<&FaceMobility>,
        dt: f64,
        mut w: Vec<f64>,
    ) -> Result<NewtonOutcome> {
        let target = self.settings.tol * (1.0 + self.dual_norm_raw(rhs));
        let mut g = self.residual(&w, rhs, mobility, dt);
        let mut r = self.merit(&g);
        let mut iterations = 0;
        loop {
            if r <= target {
                // One extra full step pushes the residual to rounding level.
                if let Ok(delta) = self.newton_direction(&w, &g, mobility, dt) {
                    let trial: Vec<f64> = w.iter().zip(&delta).map(|(a, d)| a + d).collect();
                    let r_trial = self.merit(&self.residual(&trial, rhs, mobility, dt));
                    iterations += 1;
                    if r_trial <= r {
                        w = trial;
                        r = r_trial;
                    }
                }
                break;
            }
            if iterations >= self.settings.max_iter {
                return Err(SktError::NewtonDiverged { iterations, residual: r });
            }
            let delta = self.newton_direction(&w, &g, mobility, dt)?;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..=self.settings.damping {
                let trial: Vec<f64> = w.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
                let g_trial = self.residual(&trial, rhs, mobility, dt);
                let r_trial = self.merit(&g_trial);
                if r_trial < r {
                    w = trial;
                    g = g_trial;
                    r = r_trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            iterations += 1;
            if !accepted {
                return Err(SktError::NewtonDiverged { iterations, residual: r });
            }
        }
        let w = GridField::new(FieldKind::EntropyVariable, self.params.n(), self.n_cells(), w)?;
        Ok(NewtonOutcome { w, iterations, residual: r })
    }

    /// Solves `J δ = −g` with `J = diag(u/π) + ε L*L − dt K`.
    fn newton_direction(&self, w: &[f64], g: &[f64], mobility: Option<&FaceMobility>, dt: f64) -> Result<Vec<f64>> {
        let diag: Vec<f64> = self.jacobian_diagonal(w);
        let neg_g: Vec<f64> = g.iter().map(|x| -x).collect();
        self.solve_linear(&diag, &neg_g, mobility, dt)
    }

    fn jacobian_diagonal(&self, w: &[f64]) -> Vec<f64> {
        let nc = self.n_cells();
        let pi = self.params.pi();
        self.density_raw(w).iter().enumerate().map(|(k, u)| u / pi[k / nc]).collect()
    }

    /// Solves `(diag(d) + ε L*L − dt K) x = b` (with `K` the frozen mobility operator, if any).
    fn solve_linear(&self, diag: &[f64], b: &[f64], mobility: Option<&FaceMobility>, dt: f64) -> Result<Vec<f64>> {
        let n = self.params.n();
        let nc = self.n_cells();
        let size = n * nc;
        match (&self.lstarl_dense, mobility) {
            (Some(ll), None) => {
                let mut x = Vec::with_capacity(size);
                for i in 0..n {
                    let mut m = ll * self.epsilon;
                    for c in 0..nc {
                        m[(c, c)] += diag[i * nc + c];
                    }
                    x.extend(dense_solve(m, &b[i * nc..(i + 1) * nc])?);
                }
                Ok(x)
            }
            (Some(ll), Some(mob)) if size <= self.settings.dense_limit => {
                let mut m = DMatrix::zeros(size, size);
                for i in 0..n {
                    for c in 0..nc {
                        for c2 in 0..nc {
                            m[(i * nc + c, i * nc + c2)] = self.epsilon * ll[(c, c2)];
                        }
                        m[(i * nc + c, i * nc + c)] += diag[i * nc + c];
                    }
                }
                for (f, face) in mob.faces().iter().enumerate() {
                    let blk = mob.block(f);
                    let s = dt * face.inv_h2;
                    for i in 0..n {
                        for j in 0..n {
                            let bij = s * blk[i * n + j];
                            let (il, ir) = (i * nc + face.left, i * nc + face.right);
                            let (jl, jr) = (j * nc + face.left, j * nc + face.right);
                            m[(il, jr)] -= bij;
                            m[(il, jl)] += bij;
                            m[(ir, jl)] -= bij;
                            m[(ir, jr)] += bij;
                        }
                    }
                }
                dense_solve(m, b)
            }
            _ => self.solve_linear_iterative(diag, b, mobility, dt),
        }
    }

    fn solve_linear_iterative(
        &self,
        diag: &[f64],
        b: &[f64],
        mobility: Option<&FaceMobility>,
        dt: f64,
    ) -> Result<Vec<f64>> {
        let n = self.params.n();
        let nc = self.n_cells();
        let matvec = |x: &[f64]| -> Vec<f64> {
            let mut y: Vec<f64> = x.iter().zip(diag).map(|(a, d)| a * d).collect();
            for i in 0..n {
                let ll = self.basis.apply_lstarl(&x[i * nc..(i + 1) * nc]);
                for (dst, l) in y[i * nc..(i + 1) * nc].iter_mut().zip(ll) {
                    *dst += self.epsilon * l;
                }
            }
            if let Some(mob) = mobility {
                let mut k = vec![0.0; x.len()];
                mob.apply_raw(x, &mut k);
                for (dst, kv) in y.iter_mut().zip(k) {
                    *dst -= dt * kv;
                }
            }
            y
        };
        // Spectral preconditioner: mean diagonal + ε(1+λ)^m + dt·mean(B_ii)·λ per species.
        let lambda = self.basis.lambda_natural();
        let llm = self.basis.lstarl_multiplier();
        let precond_mult: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let dbar = diag[i * nc..(i + 1) * nc].iter().sum::<f64>() / nc as f64;
                let bbar = mobility.map_or(0.0, |mob| {
                    let nf = mob.faces().len().max(1);
                    (0..mob.faces().len()).map(|f| mob.block(f)[i * n + i]).sum::<f64>() / nf as f64
                });
                lambda.iter().zip(llm).map(|(l, m)| 1.0 / (dbar + self.epsilon * m + dt * bbar * l)).collect()
            })
            .collect();
        let precond = |r: &[f64]| -> Vec<f64> {
            (0..n)
                .flat_map(|i| self.basis.apply_multiplier(&r[i * nc..(i + 1) * nc], &precond_mult[i]))
                .collect()
        };
        let sol = pcg(matvec, precond, b, None, 1e-14, 20 * n * nc)?;
        Ok(sol.x)
    }

    /// `H(v) = ∫ h(u(R_ε v)) dx + (ε/2) ‖L R_ε v‖²`.
    pub fn regularized_entropy(&self, v: &GridField) -> Result<f64> {
        let w = self.solve_r(v)?;
        Ok(self.entropy_of_w(&w))
    }

    /// The regularized entropy expressed through `w = R_ε(v)`.
    pub fn entropy_of_w(&self, w: &GridField) -> f64 {
        let (h, reg) = self.entropy_parts(w);
        h + reg
    }

    /// `(∫ h(u(w)) dx, (ε/2)‖L w‖²)`.
    pub fn entropy_parts(&self, w: &GridField) -> (f64, f64) {
        let nc = self.n_cells();
        let grid = self.basis.grid();
        let pi = self.params.pi();
        let mut dens = vec![0.0; nc];
        for i in 0..self.params.n() {
            for (c, &x) in w.species(i).iter().enumerate() {
                let u = (x / pi[i]).exp();
                // u log u − u + 1 with log u = w/π
                dens[c] += pi[i] * (u * x / pi[i] - u + 1.0);
            }
        }
        let l2 = self.basis.l_norm_field(w);
        (grid.integrate(&dens), 0.5 * self.epsilon * l2 * l2)
    }

    /// `DR_ε[v] ξ = (diag(u'(w)) + ε L*L)^{-1} ξ` with `w = R_ε(v)`.
    pub fn dr_apply(&self, v: &GridField, xi: &GridField) -> Result<GridField> {
        let w = self.solve_r(v)?;
        self.dr_apply_at(&w, xi)
    }

    /// [`Self::dr_apply`] with `w = R_ε(v)` already known.
    pub fn dr_apply_at(&self, w: &GridField, xi: &GridField) -> Result<GridField> {
        self.check(w)?;
        self.check(xi)?;
        if xi.values().iter().all(|x| *x == 0.0) {
            return Ok(GridField::from_raw(FieldKind::EntropyVariable, xi.n_species(), xi.n_cells(), vec![0.0; xi.values().len()]));
        }
        let diag = self.jacobian_diagonal(w.values());
        let mut b = self.solve_linear(&diag, xi.values(), None, 0.0)?;
        // One step of iterative refinement, then verify the residual.
        let r = self.linear_residual(&diag, &b, xi.values());
        let correction = self.solve_linear(&diag, &r.0, None, 0.0)?;
        for (x, c) in b.iter_mut().zip(correction) {
            *x += c;
        }
        let (res, scale) = self.linear_residual(&diag, &b, xi.values());
        let worst = res.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if worst > LINEAR_TOL * scale {
            return Err(SktError::LinearSolveFailed(format!(
                "DR_eps residual {worst:e} exceeds {LINEAR_TOL:e} x {scale:e}"
            )));
        }
        GridField::new(FieldKind::EntropyVariable, xi.n_species(), xi.n_cells(), b)
    }

    /// Both sides of the trace inequality
    /// `∫ a · DR_ε[v] a dx ≤ ∫ a · u'(w)^{-1} a dx`, `w = R_ε(v)`.
    pub fn trace_inequality_sides(&self, v: &GridField, a: &GridField) -> Result<(f64, f64)> {
        let w = self.solve_r(v)?;
        let b = self.dr_apply_at(&w, a)?;
        let grid = self.basis.grid();
        let nc = self.n_cells();
        let pi = self.params.pi();
        let u = self.density_raw(w.values());
        let lhs: f64 = (0..self.params.n()).map(|i| grid.inner(a.species(i), b.species(i))).sum();
        let dens: Vec<f64> = a.values().iter().zip(&u).enumerate().map(|(k, (x, ui))| pi[k / nc] / ui * x * x).collect();
        Ok((lhs, grid.integrate(&dens)))
    }

    /// Residual `ξ − (diag + εL*L) b` and the normwise scale
    /// `‖ξ‖ + ‖diag + εL*L‖ ‖b‖` (sup norms) it is judged against.
    fn linear_residual(&self, diag: &[f64], b: &[f64], xi: &[f64]) -> (Vec<f64>, f64) {
        let nc = self.n_cells();
        let sup = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ll_max = self.basis.lstarl_multiplier().iter().fold(0.0f64, |m, v| m.max(*v));
        let mut r = xi.to_vec();
        for i in 0..self.params.n() {
            let s = i * nc..(i + 1) * nc;
            let ll = self.basis.apply_lstarl(&b[s.clone()]);
            for (k, c) in s.enumerate() {
                r[c] -= diag[c] * b[c] + self.epsilon * ll[k];
            }
        }
        (r, sup(xi) + (sup(diag) + self.epsilon * ll_max) * sup(b))
    }

    /// Shared handle to the basis.
    pub fn basis_arc(&self) -> Arc<SpectralBasis> {
        self.basis.clone()
    }
    pub fn params_arc(&self) -> Arc<SktParameters> {
        self.params.clone()
    }
}
