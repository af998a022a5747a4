//! Time integration of the regularized stochastic system.
//!
//! Two schemes are provided. [`Scheme::EntropyVariable`] advances the
//! regularized variable `v = Q_ε(w)` with implicit diffusion (face mobilities
//! frozen at the previous state) and explicit Itô noise; densities are
//! `u = exp(w/π)` and hence positive by construction. [`Scheme::LaplacianForm`]
//! advances `u` itself through the Laplacian form of the equations and is
//! only available without self-diffusion.

mod balance;
pub(crate) mod ensemble;
mod record;
mod step;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SktError};
use crate::grid::{FieldKind, Grid, GridField};
use crate::model::{DiffusionMode, SktParameters};
use crate::noise::{NoiseFamily, NoiseModel};
use crate::regularization::{NewtonSettings, RegularizationOperator};
use crate::spectral::SpectralBasis;

pub use balance::{entropy_balance_report, BalanceStep, EntropyBalanceReport};
pub use ensemble::{run_ensemble, run_ensemble_paths, EnsembleStats, PathSummary, SummaryStats};
pub use record::{PathRecord, Snapshot};
pub use step::{step_entropy_variable, step_laplacian_form, EvState, LfStepInfo, StepInfo};

/// Default regularization strength.
pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EntropyVariable,
    LaplacianForm,
}

/// Initial densities.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `u_i = c_i + δ_i cos(kπx/L_x)` (times `cos(kπy/L_y)` in 2D), `|δ_i| < c_i`.
    Cosine { c: Vec<f64>, delta: Vec<f64>, wavenumber: u32 },
    Field(GridField),
}

impl InitialCondition {
    pub fn realize(&self, grid: &Grid, n: usize) -> Result<GridField> {
        match self {
            InitialCondition::Cosine { c, delta, wavenumber } => {
                if c.len() != n || delta.len() != n {
                    return Err(SktError::ShapeMismatch {
                        expected: format!("{n} initial levels and amplitudes"),
                        got: format!("{} and {}", c.len(), delta.len()),
                    });
                }
                if c.iter().zip(delta).any(|(ci, di)| !(di.abs() < *ci)) {
                    return Err(SktError::InvalidParameters("initial condition requires |delta_i| < c_i".into()));
                }
                let k = *wavenumber as f64 * std::f64::consts::PI;
                let (lx, ly, dim) = (grid.lx(), grid.ly(), grid.dim());
                let species = c
                    .iter()
                    .zip(delta)
                    .map(|(&ci, &di)| {
                        grid.sample(|x, y| {
                            let shape = (k * x / lx).cos() * if dim == 2 { (k * y / ly).cos() } else { 1.0 };
                            ci + di * shape
                        })
                    })
                    .collect();
                GridField::from_species(FieldKind::Density, species)
            }
            InitialCondition::Field(f) => {
                f.check_shape(n, grid.len())?;
                GridField::new(FieldKind::Density, n, grid.len(), f.values().to_vec())
            }
        }
    }
}

/// Everything that determines a simulated path apart from the seed.
#[derive(Debug, Clone)]
pub struct SimConfig {
    params: Arc<SktParameters>,
    grid: Grid,
    basis: Arc<SpectralBasis>,
    regularization: RegularizationOperator,
    noise: NoiseModel,
    t_final: f64,
    dt: f64,
    n_steps: usize,
    scheme: Scheme,
    save_every: usize,
    initial: InitialCondition,
}

impl SimConfig {
    /// Configuration with defaults: `ε = 1e-4`, default Sobolev index, no
    /// noise, every step saved, initial datum `1 + cos(πx/L)/2` per species.
    pub fn new(params: SktParameters, grid: Grid, scheme: Scheme, t_final: f64, dt: f64) -> Result<Self> {
        let params = Arc::new(params);
        let basis = Arc::new(SpectralBasis::build(&grid, None)?);
        let regularization =
            RegularizationOperator::new(DEFAULT_EPSILON, basis.clone(), params.clone(), NewtonSettings::default())?;
        let noise = NoiseModel::new(NoiseFamily::Zero, basis.clone(), None, None)?;
        let n = params.n();
        let cfg = Self {
            params,
            grid,
            basis,
            regularization,
            noise,
            t_final,
            dt,
            n_steps: 0,
            scheme,
            save_every: 1,
            initial: InitialCondition::Cosine { c: vec![1.0; n], delta: vec![0.5; n], wavenumber: 1 },
        };
        cfg.validated()
    }

    fn validated(mut self) -> Result<Self> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SktError::InvalidParameters("dt must be positive".into()));
        }
        if !(self.t_final >= self.dt && self.t_final.is_finite()) {
            return Err(SktError::InvalidParameters("T must be at least dt".into()));
        }
        self.n_steps = ((self.t_final / self.dt).round() as usize).max(1);
        if self.save_every == 0 {
            return Err(SktError::InvalidParameters("save_every must be >= 1".into()));
        }
        match self.scheme {
            Scheme::LaplacianForm => {
                if self.params.mode() != DiffusionMode::WithoutSelfDiffusion {
                    return Err(SktError::InvalidParameters(
                        "the Laplacian-form scheme requires parameters without self-diffusion".into(),
                    ));
                }
                if self.grid.dim() > 2 {
                    return Err(SktError::InvalidParameters("the Laplacian-form scheme requires d <= 2".into()));
                }
            }
            Scheme::EntropyVariable => {
                let ok = self.params.mode() == DiffusionMode::WithSelfDiffusion
                    || self.params.a0().iter().all(|&a| a > 0.0);
                if !ok {
                    return Err(SktError::InvalidParameters(
                        "the entropy-variable scheme requires self-diffusion or a_i0 > 0".into(),
                    ));
                }
            }
        }
        self.initial.realize(&self.grid, self.params.n())?;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.regularization = self.regularization.with_epsilon(epsilon)?;
        Ok(self)
    }

    pub fn with_newton(mut self, settings: NewtonSettings) -> Result<Self> {
        self.regularization = RegularizationOperator::new(
            self.regularization.epsilon(),
            self.basis.clone(),
            self.params.clone(),
            settings,
        )?;
        Ok(self)
    }

    /// Rebuilds the basis with Sobolev index `m` (regularization and noise follow).
    pub fn with_sobolev_index(mut self, m: u32) -> Result<Self> {
        self.basis = Arc::new(SpectralBasis::build(&self.grid, Some(m))?);
        self.regularization = RegularizationOperator::new(
            self.regularization.epsilon(),
            self.basis.clone(),
            self.params.clone(),
            self.regularization.settings(),
        )?;
        self.noise = NoiseModel::new(
            self.noise.family(),
            self.basis.clone(),
            Some(self.noise.rho()),
            Some(self.noise.k_modes()),
        )?;
        Ok(self)
    }

    pub fn with_noise(mut self, family: NoiseFamily, rho: Option<f64>, k_modes: Option<usize>) -> Result<Self> {
        self.noise = NoiseModel::new(family, self.basis.clone(), rho, k_modes)?;
        Ok(self)
    }

    pub fn with_initial(mut self, initial: InitialCondition) -> Result<Self> {
        self.initial = initial;
        self.validated()
    }

    pub fn with_save_every(mut self, save_every: usize) -> Result<Self> {
        self.save_every = save_every;
        self.validated()
    }

    pub fn with_horizon(mut self, t_final: f64, dt: f64) -> Result<Self> {
        self.t_final = t_final;
        self.dt = dt;
        self.validated()
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Result<Self> {
        self.scheme = scheme;
        self.validated()
    }

    pub fn params(&self) -> &SktParameters {
        &self.params
    }
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }
    pub fn regularization(&self) -> &RegularizationOperator {
        &self.regularization
    }
    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }
    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    /// `round(T/dt)`; the last recorded time is `n_steps · dt`.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }
    pub fn save_every(&self) -> usize {
        self.save_every
    }
    pub fn initial(&self) -> &InitialCondition {
        &self.initial
    }
    pub fn epsilon(&self) -> f64 {
        self.regularization.epsilon()
    }

    pub fn initial_density(&self) -> Result<GridField> {
        self.initial.realize(&self.grid, self.params.n())
    }
}

/// Simulates one path with noise stream `(seed, 0)`.
pub fn run_path(config: &SimConfig, seed: u64) -> Result<PathRecord> {
    run_path_indexed(config, seed, 0)
}

/// Simulates the path using noise stream `(seed, path_index)`.
pub fn run_path_indexed(config: &SimConfig, seed: u64, path_index: u64) -> Result<PathRecord> {
    step::drive(config, seed, path_index)
}
