use crate::error::{Result, SktError};
use crate::grid::{FieldKind, Grid, GridField};
use crate::linalg::BandMatrix;
use crate::model::SktParameters;
use crate::noise::{sample_wiener_increments, NormalStream, WienerIncrements};
use crate::operators::{laplacian_coefficients, FaceMobility};

use super::record::{PathRecord, Snapshot};
use super::{Scheme, SimConfig};

/// Relative residual demanded of the Laplacian-form linear solves.
const LF_RESIDUAL_TOL: f64 = 1e-11;
/// Negative values above `−CLIP_TOL · ‖u‖_∞` are round-off and clipped.
const CLIP_TOL: f64 = 1e-12;

/// State of the entropy-variable scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct EvState {
    pub v: GridField,
    pub w: GridField,
}

impl EvState {
    /// `w = π log u`, `v = Q_ε(w)`.
    pub fn from_density(config: &SimConfig, u: &GridField) -> Result<Self> {
        let reg = config.regularization();
        let w = reg.entropy_variable(u)?;
        let v = reg.apply_q(&w)?;
        Ok(Self { v, w })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub newton_iters: usize,
    pub residual: f64,
    /// `∫ ∇w' : B(w) ∇w' dx` with the frozen face mobilities.
    pub step_dissipation: f64,
    pub bound_violations: usize,
    pub min_bound_slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LfStepInfo {
    pub clipped: usize,
}

/// One step of the entropy-variable scheme: solves
/// `Q_ε(w') − dt·div(B(w)∇w') = v + σ(u(w)) dW` and sets `v' = Q_ε(w')`.
pub fn step_entropy_variable(config: &SimConfig, state: &EvState, dw: &WienerIncrements) -> Result<(EvState, StepInfo)> {
    let reg = config.regularization();
    let grid = config.grid();
    let params = config.params();
    let mut rhs = state.v.values().to_vec();
    if !config.noise().is_zero() {
        let u = reg.density(&state.w)?;
        let inc = config.noise().increment_field(&u, dw)?;
        for (r, x) in rhs.iter_mut().zip(inc.values()) {
            *r += x;
        }
    }
    let mob = FaceMobility::new(params, grid, &state.w)?;
    let out = reg.solve_implicit(&rhs, &mob, config.dt(), state.w.values().to_vec())?;
    let w = out.w;
    let nc = grid.len();
    for (k, &x) in w.values().iter().enumerate() {
        let u = (x / params.pi()[k / nc]).exp();
        if !(u > 0.0) {
            return Err(SktError::PositivityLost { species: k / nc, cell: k % nc, value: u });
        }
    }
    let v = reg.apply_q(&w)?;
    let check = mob.lower_bound_check(params, w.values(), grid.cell_volume());
    let info = StepInfo {
        newton_iters: out.iterations,
        residual: out.residual,
        step_dissipation: mob.dissipation(w.values(), grid.cell_volume()),
        bound_violations: check.violations,
        min_bound_slack: check.min_slack,
    };
    Ok((EvState { v, w }, info))
}

/// One step of the Laplacian-form scheme:
/// `(I − dt Δ_h diag(a_i0 + Σ_j a_ij u_j)) u'_i = u_i + σ_ii(u) dW_i` per species,
/// coefficients frozen at `u`.
pub fn step_laplacian_form(config: &SimConfig, u: &GridField, dw: &WienerIncrements) -> Result<(GridField, LfStepInfo)> {
    let grid = config.grid();
    let params = config.params();
    let n = params.n();
    let nc = grid.len();
    u.check_shape(n, nc)?;
    if let Some(k) = u.values().iter().position(|&x| x < 0.0 || !x.is_finite()) {
        return Err(SktError::NonPositiveDensity { species: k / nc, cell: k % nc, value: u.values()[k] });
    }
    let inc = if config.noise().is_zero() { None } else { Some(config.noise().increment_field(u, dw)?) };
    let coeffs = laplacian_coefficients(params, u);
    let faces = grid.faces();
    let bw = if grid.dim() == 1 { 1 } else { grid.nx() };
    let dt = config.dt();
    let scale = u.max_abs();
    let mut out = Vec::with_capacity(n * nc);
    let mut clipped = 0;
    for i in 0..n {
        let c = &coeffs[i];
        let mut m = BandMatrix::zeros(nc, bw);
        for cell in 0..nc {
            m.add(cell, cell, 1.0);
        }
        for face in &faces {
            let s = dt * face.inv_h2;
            let (l, r) = (face.left, face.right);
            m.add(l, l, s * c[l]);
            m.add(l, r, -s * c[r]);
            m.add(r, r, s * c[r]);
            m.add(r, l, -s * c[l]);
        }
        let mut b = u.species(i).to_vec();
        if let Some(inc) = &inc {
            for (x, d) in b.iter_mut().zip(inc.species(i)) {
                *x += d;
            }
        }
        let mut x = m.solve(&b)?;
        let mx = m.matvec(&x);
        let worst = mx.iter().zip(&b).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        let bscale = b.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if !(worst <= LF_RESIDUAL_TOL * bscale) {
            return Err(SktError::LinearSolveFailed(format!("Laplacian-form residual {worst:e}")));
        }
        for (cell, val) in x.iter_mut().enumerate() {
            if *val < 0.0 {
                if *val < -CLIP_TOL * scale {
                    return Err(SktError::PositivityLost { species: i, cell, value: *val });
                }
                *val = 0.0;
                clipped += 1;
            }
        }
        out.extend(x);
    }
    let kind = if out.iter().all(|&x| x > 0.0) { FieldKind::Density } else { FieldKind::Dual };
    Ok((GridField::new(kind, n, nc, out)?, LfStepInfo { clipped }))
}

fn entropy_of_density(params: &SktParameters, grid: &Grid, u: &GridField) -> f64 {
    let dens: Vec<f64> = (0..grid.len()).map(|c| params.entropy_density(&u.at(c))).collect();
    grid.integrate(&dens)
}

/// `w = π log u` when every value is positive.
fn entropy_variable_if_positive(params: &SktParameters, u: &GridField) -> Option<GridField> {
    let nc = u.n_cells();
    if u.values().iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    let w = u.values().iter().enumerate().map(|(k, &x)| params.pi()[k / nc] * x.ln()).collect();
    Some(GridField::from_raw(FieldKind::EntropyVariable, u.n_species(), nc, w))
}

struct Recorder<'a> {
    config: &'a SimConfig,
    rec: PathRecord,
}

impl Recorder<'_> {
    fn push(&mut self, step: usize, u: &GridField, w: Option<&GridField>, v: Option<&GridField>, entropy: f64, iters: usize) -> Result<()> {
        let grid = self.config.grid();
        let params = self.config.params();
        let n = params.n();
        let t = step as f64 * self.config.dt();
        let dissipation = match w {
            Some(w) => FaceMobility::new(params, grid, w)?.dissipation(w.values(), grid.cell_volume()),
            None => match entropy_variable_if_positive(params, u) {
                Some(w) => FaceMobility::new(params, grid, &w)?.dissipation(w.values(), grid.cell_volume()),
                None => f64::NAN,
            },
        };
        let rec = &mut self.rec;
        rec.times.push(t);
        rec.entropy.push(entropy);
        rec.dissipation.push(dissipation);
        rec.mass.push((0..n).map(|i| grid.integrate(u.species(i))).collect());
        let vm = match v {
            Some(v) => (0..n).map(|i| grid.integrate(v.species(i))).collect(),
            None => rec.mass.last().unwrap().clone(),
        };
        rec.v_mass.push(vm);
        rec.min_u.push(u.values().iter().cloned().fold(f64::INFINITY, f64::min));
        rec.max_u.push(u.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        rec.l2.push((0..n).map(|i| grid.l2_norm(u.species(i))).collect());
        rec.newton_iters.push(iters);
        let n_steps = self.config.n_steps();
        if step.is_multiple_of(self.config.save_every()) || step == n_steps {
            rec.snapshots.push(Snapshot { step, t, u: u.clone(), w: w.cloned() });
        }
        Ok(())
    }
}

pub(super) fn drive(config: &SimConfig, seed: u64, path_index: u64) -> Result<PathRecord> {
    let params = config.params();
    let n = params.n();
    let noise = config.noise();
    let k = noise.k_modes();
    let rec = PathRecord::empty(
        config.scheme(),
        config.grid().clone(),
        n,
        seed,
        path_index,
        noise.family(),
        k,
        config.dt(),
    );
    let mut recorder = Recorder { config, rec };
    let mut stream = NormalStream::new(seed, path_index);
    let zero_dw = WienerIncrements::zeros(n, k);
    let draw = |stream: &mut NormalStream| {
        if noise.is_zero() {
            zero_dw.clone()
        } else {
            sample_wiener_increments(stream, n, k, config.dt())
        }
    };
    let u0 = config.initial_density()?;
    match config.scheme() {
        Scheme::EntropyVariable => {
            let reg = config.regularization();
            let mut state = EvState::from_density(config, &u0)?;
            recorder.push(0, &u0, Some(&state.w), Some(&state.v), reg.entropy_of_w(&state.w), 0)?;
            for step in 1..=config.n_steps() {
                let dw = draw(&mut stream);
                let (next, info) = step_entropy_variable(config, &state, &dw).map_err(|e| e.at_step(step))?;
                state = next;
                let u = reg.density(&state.w)?;
                recorder.rec.bound_violations += info.bound_violations;
                recorder.rec.min_bound_slack = recorder.rec.min_bound_slack.min(info.min_bound_slack);
                recorder.push(step, &u, Some(&state.w), Some(&state.v), reg.entropy_of_w(&state.w), info.newton_iters)?;
            }
        }
        Scheme::LaplacianForm => {
            let grid = config.grid();
            let mut u = u0;
            recorder.push(0, &u, None, None, entropy_of_density(params, grid, &u), 0)?;
            for step in 1..=config.n_steps() {
                let dw = draw(&mut stream);
                let (next, info) = step_laplacian_form(config, &u, &dw).map_err(|e| e.at_step(step))?;
                u = next;
                recorder.rec.clipped += info.clipped;
                recorder.push(step, &u, None, None, entropy_of_density(params, grid, &u), 0)?;
            }
        }
    }
    Ok(recorder.rec)
}

/// Regenerates the increments a path used at each step.
pub(super) fn replay_increments(config: &SimConfig, seed: u64, path_index: u64) -> Vec<WienerIncrements> {
    let n = config.params().n();
    let k = config.noise().k_modes();
    let mut stream = NormalStream::new(seed, path_index);
    (0..config.n_steps())
        .map(|_| {
            if config.noise().is_zero() {
                WienerIncrements::zeros(n, k)
            } else {
                sample_wiener_increments(&mut stream, n, k, config.dt())
            }
        })
        .collect()
}

pub(super) fn density_entropy(params: &SktParameters, grid: &Grid, u: &GridField) -> f64 {
    entropy_of_density(params, grid, u)
}

pub(super) fn lf_entropy_variable(params: &SktParameters, u: &GridField) -> Option<GridField> {
    entropy_variable_if_positive(params, u)
}

#[cfg(test)]
mod tests {
    use super::super::{run_path, InitialCondition};
    use super::*;
    use crate::model::DiffusionMode;
    use crate::noise::NoiseFamily;

    fn heat() -> SktParameters {
        SktParameters::new(vec![1.0], vec![vec![0.0]], Some(vec![1.0]), DiffusionMode::WithoutSelfDiffusion).unwrap()
    }

    #[test]
    fn constant_state_is_a_fixed_point() {
        let g = Grid::new_1d(16, 1.0).unwrap();
        for scheme in [Scheme::EntropyVariable, Scheme::LaplacianForm] {
            let cfg = SimConfig::new(heat(), g.clone(), scheme, 0.01, 0.01)
                .unwrap()
                .with_initial(InitialCondition::Cosine { c: vec![2.0], delta: vec![0.0], wavenumber: 1 })
                .unwrap();
            let u = cfg.initial_density().unwrap();
            let dw = WienerIncrements::zeros(1, cfg.noise().k_modes());
            if scheme == Scheme::EntropyVariable {
                let s = EvState::from_density(&cfg, &u).unwrap();
                let (next, _) = step_entropy_variable(&cfg, &s, &dw).unwrap();
                assert_eq!(next.w, s.w);
            } else {
                let (next, info) = step_laplacian_form(&cfg, &u, &dw).unwrap();
                assert!(next.values().iter().zip(u.values()).all(|(a, b)| (a - b).abs() < 1e-14));
                assert_eq!(info.clipped, 0);
            }
            let rec = run_path(&cfg, 1).unwrap();
            assert_eq!(rec.times.len(), 2);
            assert!(rec.entropy.iter().all(|h| (h - rec.entropy[0]).abs() < 1e-13));
        }
    }

    #[test]
    fn unit_state_has_zero_entropy() {
        let g = Grid::new_1d(8, 1.0).unwrap();
        let cfg = SimConfig::new(heat(), g, Scheme::EntropyVariable, 0.01, 0.01)
            .unwrap()
            .with_initial(InitialCondition::Cosine { c: vec![1.0], delta: vec![0.0], wavenumber: 1 })
            .unwrap();
        let rec = run_path(&cfg, 0).unwrap();
        assert_eq!(rec.times, vec![0.0, 0.01]);
        assert!(rec.entropy.iter().all(|h| *h == 0.0));
    }

    #[test]
    fn paths_are_deterministic() {
        let g = Grid::new_1d(16, 1.0).unwrap();
        let cfg = SimConfig::new(heat(), g, Scheme::EntropyVariable, 0.01, 1e-3)
            .unwrap()
            .with_noise(NoiseFamily::BoundedRatio { eta: 0.5 }, None, None)
            .unwrap();
        let a = run_path(&cfg, 11).unwrap();
        let b = run_path(&cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = run_path(&cfg, 12).unwrap();
        assert_ne!(a.entropy, c.entropy);
    }

    #[test]
    fn laplacian_form_is_stable_for_large_steps() {
        let g = Grid::new_1d(32, 1.0).unwrap();
        let h = g.hx();
        let cfg = SimConfig::new(heat(), g, Scheme::LaplacianForm, 100.0 * h * h, 10.0 * h * h).unwrap();
        let rec = run_path(&cfg, 0).unwrap();
        assert!(rec.max_u.windows(2).all(|m| m[1] <= m[0] + 1e-14));
        assert!(rec.min_u.iter().all(|m| *m > 0.0));
        for d in PathRecord::relative_mass_drift(&rec.mass) {
            assert!(d < 1e-12);
        }
    }

    #[test]
    fn step_errors_carry_the_index() {
        let g = Grid::new_1d(16, 1.0).unwrap();
        let cfg = SimConfig::new(heat(), g, Scheme::EntropyVariable, 0.2, 0.1)
            .unwrap()
            .with_newton(crate::regularization::NewtonSettings { max_iter: 1, ..Default::default() })
            .unwrap();
        match run_path(&cfg, 0) {
            Err(SktError::Step { step: 1, source }) => assert!(matches!(*source, SktError::NewtonDiverged { .. })),
            other => panic!("unexpected {other:?}"),
        }
    }
}
