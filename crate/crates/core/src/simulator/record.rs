use crate::grid::{Grid, GridField};
use crate::noise::NoiseFamily;

use super::Scheme;

/// Saved fields at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub u: GridField,
    /// Entropy variable (entropy-variable scheme only).
    pub w: Option<GridField>,
}

/// Scalar time series and snapshots of one simulated path.
///
/// Index `k` of every per-time vector refers to `times[k]`. `dissipation[k]`
/// is `∫ ∇w : B(w) ∇w dx` at the state of time `t_k` (face mobilities), and
/// `newton_iters[k]` counts the iterations of the step that ended at `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub scheme: Scheme,
    pub grid: Grid,
    pub n_species: usize,
    pub seed: u64,
    pub path_index: u64,
    pub noise_family: NoiseFamily,
    pub k_modes: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    /// Regularized entropy (plain `∫ h(u)` for the Laplacian-form scheme).
    pub entropy: Vec<f64>,
    pub dissipation: Vec<f64>,
    /// `∫ u_i dx` per species.
    pub mass: Vec<Vec<f64>>,
    /// `∫ v_i dx` per species; the conserved quantity of the entropy-variable scheme.
    pub v_mass: Vec<Vec<f64>>,
    pub min_u: Vec<f64>,
    pub max_u: Vec<f64>,
    pub l2: Vec<Vec<f64>>,
    pub newton_iters: Vec<usize>,
    /// Facewise dissipation lower-bound violations summed over all steps.
    pub bound_violations: usize,
    pub min_bound_slack: f64,
    /// Negative round-off values clipped to zero (Laplacian-form scheme).
    pub clipped: usize,
    pub(crate) snapshots: Vec<Snapshot>,
}

impl PathRecord {
    pub(crate) fn empty(
        scheme: Scheme,
        grid: Grid,
        n_species: usize,
        seed: u64,
        path_index: u64,
        noise_family: NoiseFamily,
        k_modes: usize,
        dt: f64,
    ) -> Self {
        Self {
            scheme,
            grid,
            n_species,
            seed,
            path_index,
            noise_family,
            k_modes,
            dt,
            times: Vec::new(),
            entropy: Vec::new(),
            dissipation: Vec::new(),
            mass: Vec::new(),
            v_mass: Vec::new(),
            min_u: Vec::new(),
            max_u: Vec::new(),
            l2: Vec::new(),
            newton_iters: Vec::new(),
            bound_violations: 0,
            min_bound_slack: f64::INFINITY,
            clipped: 0,
            snapshots: Vec::new(),
        }
    }

    /// Builds a record from externally supplied snapshots (e.g. sampled exact
    /// solutions); scalar series are derived from the fields.
    pub fn from_snapshots(grid: Grid, snapshots: Vec<Snapshot>) -> crate::Result<Self> {
        let n = snapshots.first().map_or(0, |s| s.u.n_species());
        if n == 0 {
            return Err(crate::SktError::InsufficientData("no snapshots".into()));
        }
        if snapshots.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(crate::SktError::InvalidParameters("snapshot times must increase".into()));
        }
        let dt = if snapshots.len() > 1 { snapshots[1].t - snapshots[0].t } else { 0.0 };
        let mut rec = Self::empty(Scheme::EntropyVariable, grid, n, 0, 0, NoiseFamily::Zero, 0, dt);
        for s in &snapshots {
            s.u.check_shape(n, rec.grid.len())?;
            rec.times.push(s.t);
            rec.mass.push((0..n).map(|i| rec.grid.integrate(s.u.species(i))).collect());
            rec.v_mass.push(rec.mass.last().unwrap().clone());
            rec.l2.push((0..n).map(|i| rec.grid.l2_norm(s.u.species(i))).collect());
            rec.min_u.push(s.u.values().iter().cloned().fold(f64::INFINITY, f64::min));
            rec.max_u.push(s.u.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            rec.entropy.push(f64::NAN);
            rec.dissipation.push(f64::NAN);
            rec.newton_iters.push(0);
        }
        rec.snapshots = snapshots;
        Ok(rec)
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_snapshot(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    /// `max_k H(t_k)`.
    pub fn sup_entropy(&self) -> f64 {
        self.entropy.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Left-rectangle quadrature of the dissipation over `[0, T]`.
    pub fn dissipation_integral(&self) -> f64 {
        self.times
            .windows(2)
            .zip(&self.dissipation)
            .map(|(t, d)| (t[1] - t[0]) * d)
            .sum()
    }

    /// Relative drift `max_k |m_i(t_k) − m_i(0)| / |m_i(0)|` of the given mass series.
    pub fn relative_mass_drift(series: &[Vec<f64>]) -> Vec<f64> {
        let Some(first) = series.first() else { return Vec::new() };
        (0..first.len())
            .map(|i| {
                let m0 = first[i];
                series.iter().map(|m| (m[i] - m0).abs()).fold(0.0, f64::max) / m0.abs().max(f64::MIN_POSITIVE)
            })
            .collect()
    }
}
