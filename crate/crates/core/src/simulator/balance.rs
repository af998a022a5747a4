use serde::{Deserialize, Serialize};

use crate::error::{Result, SktError};
use crate::grid::{FieldKind, GridField};
use crate::operators::FaceMobility;

use super::record::PathRecord;
use super::step::{density_entropy, lf_entropy_variable, replay_increments};
use super::{Scheme, SimConfig};

/// Itô decomposition of one step's entropy change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceStep {
    pub t: f64,
    pub delta_h: f64,
    /// `−dt ∫ ∇w' : B(w) ∇w' dx`.
    pub dissipation: f64,
    /// `Σ_i ⟨π_i log u_i, σ_ii(u) dW_i⟩`.
    pub martingale: f64,
    /// `½ dt Σ_{i,k} ⟨DR_ε[v](σ e_{i,k}), σ e_{i,k}⟩`.
    pub ito_correction: f64,
    pub residual: f64,
    /// Quadrature of the facewise lower bound for the dissipation.
    pub bound_total: f64,
    pub bound_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyBalanceReport {
    pub steps: Vec<BalanceStep>,
    pub max_abs_residual: f64,
    pub bound_violations: usize,
}

/// Decomposes `H(t_{k+1}) − H(t_k)` for every step of a path saved with
/// `save_every = 1`; noise increments are regenerated from the path's seed.
pub fn entropy_balance_report(config: &SimConfig, path: &PathRecord) -> Result<EntropyBalanceReport> {
    let snaps = path.snapshots();
    let n_steps = config.n_steps();
    if snaps.len() != n_steps + 1 || snaps.iter().enumerate().any(|(k, s)| s.step != k) {
        return Err(SktError::InsufficientData("entropy balance needs every step saved (save_every = 1)".into()));
    }
    let params = config.params();
    let grid = config.grid();
    let reg = config.regularization();
    let noise = config.noise();
    let basis = config.basis();
    let n = params.n();
    let nc = grid.len();
    let dt = config.dt();
    let vol = grid.cell_volume();
    let increments = replay_increments(config, path.seed, path.path_index);
    let mode_fields: Vec<Vec<f64>> = noise
        .coefficients()
        .iter()
        .enumerate()
        .map(|(k, a)| basis.eigenvector(k).into_iter().map(|e| a * e).collect())
        .collect();

    let state_w = |k: usize| -> Result<GridField> {
        match (&snaps[k].w, config.scheme()) {
            (Some(w), _) => Ok(w.clone()),
            (None, Scheme::LaplacianForm) => lf_entropy_variable(params, &snaps[k].u)
                .ok_or_else(|| SktError::InsufficientData("density vanished; entropy variable undefined".into())),
            (None, Scheme::EntropyVariable) => Err(SktError::InsufficientData("snapshot without entropy variable".into())),
        }
    };
    let entropy = |k: usize, w: &GridField| -> f64 {
        match config.scheme() {
            Scheme::EntropyVariable => reg.entropy_of_w(w),
            Scheme::LaplacianForm => density_entropy(params, grid, &snaps[k].u),
        }
    };

    let mut steps = Vec::with_capacity(n_steps);
    let mut w_prev = state_w(0)?;
    let mut h_prev = entropy(0, &w_prev);
    for k in 0..n_steps {
        let w_next = state_w(k + 1)?;
        let h_next = entropy(k + 1, &w_next);
        let u = &snaps[k].u;
        let mob = FaceMobility::new(params, grid, &w_prev)?;
        let dissipation = -dt * mob.dissipation(w_next.values(), vol);
        let check = mob.lower_bound_check(params, w_next.values(), vol);

        let (mut martingale, mut ito) = (0.0, 0.0);
        if !noise.is_zero() {
            let inc = noise.increment_field(u, &increments[k])?;
            martingale = (0..n).map(|i| grid.inner(w_prev.species(i), inc.species(i))).sum();
            for i in 0..n {
                let s: Vec<f64> = u.species(i).iter().map(|&x| noise.intensity(x)).collect();
                for mode in &mode_fields {
                    let mut xi = vec![0.0; n * nc];
                    for c in 0..nc {
                        xi[i * nc + c] = s[c] * mode[c];
                    }
                    let q = match config.scheme() {
                        Scheme::EntropyVariable => {
                            let xi_f = GridField::new(FieldKind::Dual, n, nc, xi.clone())?;
                            let b = reg.dr_apply_at(&w_prev, &xi_f)?;
                            grid.inner(b.species(i), &xi[i * nc..(i + 1) * nc])
                        }
                        Scheme::LaplacianForm => {
                            let pi = params.pi()[i];
                            let dens: Vec<f64> =
                                (0..nc).map(|c| pi / u.species(i)[c] * xi[i * nc + c].powi(2)).collect();
                            grid.integrate(&dens)
                        }
                    };
                    ito += 0.5 * dt * q;
                }
            }
        }
        let delta_h = h_next - h_prev;
        steps.push(BalanceStep {
            t: snaps[k].t,
            delta_h,
            dissipation,
            martingale,
            ito_correction: ito,
            residual: delta_h - dissipation - martingale - ito,
            bound_total: check.bound_total,
            bound_violations: check.violations,
        });
        w_prev = w_next;
        h_prev = h_next;
    }
    let max_abs_residual = steps.iter().map(|s| s.residual.abs()).fold(0.0, f64::max);
    let bound_violations = steps.iter().map(|s| s.bound_violations).sum();
    Ok(EntropyBalanceReport { steps, max_abs_residual, bound_violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::{DiffusionMode, SktParameters};
    use crate::simulator::{run_path, InitialCondition};

    fn heat_config(n: usize, t: f64, dt: f64) -> SimConfig {
        let p = SktParameters::new(vec![1.0], vec![vec![0.0]], Some(vec![1.0]), DiffusionMode::WithoutSelfDiffusion).unwrap();
        SimConfig::new(p, Grid::new_1d(n, 1.0).unwrap(), Scheme::EntropyVariable, t, dt).unwrap()
    }

    #[test]
    fn constant_state_has_zero_terms() {
        let cfg = heat_config(8, 0.03, 0.01)
            .with_initial(InitialCondition::Cosine { c: vec![1.0], delta: vec![0.0], wavenumber: 1 })
            .unwrap();
        let rec = run_path(&cfg, 0).unwrap();
        let rep = entropy_balance_report(&cfg, &rec).unwrap();
        assert_eq!(rep.steps.len(), 3);
        for s in rep.steps {
            assert_eq!((s.delta_h, s.dissipation, s.martingale, s.ito_correction), (0.0, 0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn heat_residual_is_second_order() {
        let dt = 1e-4;
        let cfg = heat_config(64, 20.0 * dt, dt);
        let rec = run_path(&cfg, 0).unwrap();
        let rep = entropy_balance_report(&cfg, &rec).unwrap();
        assert!(rep.max_abs_residual <= 1e-3 * dt, "{}", rep.max_abs_residual);
        assert_eq!(rep.bound_violations, 0);
        assert!(rep.steps.iter().all(|s| s.dissipation <= 0.0 && s.bound_total >= 0.0));
    }

    #[test]
    fn sparse_snapshots_are_rejected() {
        let cfg = heat_config(8, 0.04, 0.01).with_save_every(2).unwrap();
        let rec = run_path(&cfg, 0).unwrap();
        assert!(entropy_balance_report(&cfg, &rec).is_err());
    }
}
