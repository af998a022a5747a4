//! Spectrally truncated Wiener noise with diagonal multiplicative intensity
//!
//! ```text
//! σ_ii(u) dW_i = s(u_i) Σ_{k<K} a_k η_k dW_i^k,    a_k = (1 + λ_k)^{-ρ},
//! ```
//!
//! plus numerical checks of the Lipschitz/growth and entropy–noise
//! interaction conditions on sampled states and simulated trajectories.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SktError};
use crate::grid::{FieldKind, GridField};
use crate::model::SktParameters;
use crate::simulator::PathRecord;
use crate::spectral::SpectralBasis;

/// Intensity `s(u)` of the diagonal noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseFamily {
    Zero,
    /// `u / (1 + u^{1/2+η})`.
    BoundedRatio { eta: f64 },
    /// `u^α`, `α ∈ [1/2, 1]`.
    Power { alpha: f64 },
    /// `u^α / (1 + u^β)`, `β ≥ α/2`.
    PowerDamped { alpha: f64, beta: f64 },
    /// `s ≡ value`. Does not vanish at `u = 0`; calibration runs only.
    Constant { value: f64 },
}

impl NoiseFamily {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SktError::InvalidParameters(m.into()));
        match *self {
            NoiseFamily::Zero => Ok(()),
            NoiseFamily::BoundedRatio { eta } if !(eta > 0.0 && eta.is_finite()) => bad("bounded_ratio requires eta > 0"),
            NoiseFamily::Power { alpha } if !(0.5..=1.0).contains(&alpha) => bad("power requires alpha in [1/2, 1]"),
            NoiseFamily::PowerDamped { alpha, beta } if !(0.5..=1.0).contains(&alpha) || !(beta >= alpha / 2.0) || !beta.is_finite() => {
                bad("power_damped requires alpha in [1/2, 1] and beta >= alpha/2")
            }
            NoiseFamily::Constant { value } if !value.is_finite() => bad("constant intensity must be finite"),
            _ => Ok(()),
        }
    }

    /// `s(u)` for `u ≥ 0`.
    #[inline]
    pub fn intensity(&self, u: f64) -> f64 {
        match *self {
            NoiseFamily::Zero => 0.0,
            NoiseFamily::BoundedRatio { eta } => u / (1.0 + u.powf(0.5 + eta)),
            NoiseFamily::Power { alpha } => u.powf(alpha),
            NoiseFamily::PowerDamped { alpha, beta } => u.powf(alpha) / (1.0 + u.powf(beta)),
            NoiseFamily::Constant { value } => value,
        }
    }

    /// `s(u)²/u`, continuously extended to `u = 0`.
    pub fn intensity_sq_over_u(&self, u: f64) -> f64 {
        if u > 0.0 {
            let s = self.intensity(u);
            return s * s / u;
        }
        match *self {
            NoiseFamily::Power { alpha } | NoiseFamily::PowerDamped { alpha, .. } if alpha == 0.5 => 1.0,
            NoiseFamily::Constant { value } if value != 0.0 => f64::INFINITY,
            _ => 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, NoiseFamily::Zero) || matches!(self, NoiseFamily::Constant { value } if *value == 0.0)
    }
}

/// Default decay exponent `1.1 (d/2)² + 0.1`, strictly above `(d/2)²`.
pub fn default_rho(dim: usize) -> f64 {
    let q = dim as f64 / 2.0;
    1.1 * q * q + 0.1
}

/// Default truncation: coefficient tail `Σ_{k≥K} a_k² ≤ 1%` of the total.
pub const DEFAULT_TAIL_FRACTION: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct NoiseModel {
    family: NoiseFamily,
    rho: f64,
    /// `a_k` for all modes, sorted by eigenvalue.
    all_coeffs: Vec<f64>,
    k_modes: usize,
    basis: Arc<SpectralBasis>,
    /// `Σ_{k<K} a_k² η_k(c)²` per cell.
    mode_weight: Vec<f64>,
}

impl NoiseModel {
    pub fn new(family: NoiseFamily, basis: Arc<SpectralBasis>, rho: Option<f64>, k_modes: Option<usize>) -> Result<Self> {
        family.validate()?;
        let dim = basis.grid().dim();
        let rho = rho.unwrap_or_else(|| default_rho(dim));
        let q = dim as f64 / 2.0;
        if !(rho > q * q) || !rho.is_finite() {
            return Err(SktError::InvalidParameters(format!("rho = {rho} must exceed (d/2)^2 = {}", q * q)));
        }
        let all_coeffs: Vec<f64> = basis.eigenvalues().iter().map(|l| (1.0 + l).powf(-rho)).collect();
        let k_modes = match k_modes {
            Some(k) if k == 0 || k > basis.len() => {
                return Err(SktError::InvalidParameters(format!(
                    "mode count K = {k} must be in 1..={}",
                    basis.len()
                )))
            }
            Some(k) => k,
            None => truncation_for_tail(&all_coeffs, DEFAULT_TAIL_FRACTION),
        };
        let mut mode_weight = vec![0.0; basis.len()];
        for (k, a) in all_coeffs.iter().enumerate().take(k_modes) {
            let eta = basis.eigenvector(k);
            for (w, e) in mode_weight.iter_mut().zip(eta) {
                *w += a * a * e * e;
            }
        }
        Ok(Self { family, rho, all_coeffs, k_modes, basis, mode_weight })
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn k_modes(&self) -> usize {
        self.k_modes
    }
    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }
    /// Retained coefficients `a_0 … a_{K−1}`.
    pub fn coefficients(&self) -> &[f64] {
        &self.all_coeffs[..self.k_modes]
    }
    pub fn intensity(&self, u: f64) -> f64 {
        self.family.intensity(u)
    }
    pub fn is_zero(&self) -> bool {
        self.family.is_zero()
    }

    /// `Σ_{k≥K} a_k² / Σ_k a_k²` over the grid's modes.
    pub fn tail_fraction(&self) -> f64 {
        let total: f64 = self.all_coeffs.iter().map(|a| a * a).sum();
        let tail: f64 = self.all_coeffs[self.k_modes..].iter().map(|a| a * a).sum();
        tail / total
    }

    /// `Σ_{k<K} a_k²`.
    pub fn coefficient_energy(&self) -> f64 {
        self.coefficients().iter().map(|a| a * a).sum()
    }

    /// `Σ_{k<K} a_k² ‖η_k‖²_∞`.
    pub fn sup_energy(&self) -> f64 {
        self.coefficients()
            .iter()
            .enumerate()
            .map(|(k, a)| a * a * self.basis.eigenvector_sup(k).powi(2))
            .sum()
    }

    pub(crate) fn mode_weight(&self) -> &[f64] {
        &self.mode_weight
    }

    /// Noise increment `s(u_i) Σ_{k<K} a_k η_k dW_{i,k}` per species and cell.
    pub fn increment_field(&self, u: &GridField, dw: &WienerIncrements) -> Result<GridField> {
        let nc = self.basis.len();
        let n = u.n_species();
        if u.n_cells() != nc {
            return Err(SktError::ShapeMismatch { expected: format!("{nc} cells"), got: format!("{}", u.n_cells()) });
        }
        if dw.n_species != n || dw.k_modes != self.k_modes {
            return Err(SktError::ShapeMismatch {
                expected: format!("{n}x{} increments", self.k_modes),
                got: format!("{}x{}", dw.n_species, dw.k_modes),
            });
        }
        let mut out = Vec::with_capacity(n * nc);
        for i in 0..n {
            let coeffs: Vec<f64> = self.coefficients().iter().zip(dw.row(i)).map(|(a, d)| a * d).collect();
            let spatial = self.basis.from_spectral(&coeffs);
            out.extend(u.species(i).iter().zip(spatial).map(|(&ui, xi)| self.family.intensity(ui) * xi));
        }
        GridField::new(FieldKind::Dual, n, nc, out)
    }

    /// `Σ_i Σ_{k<K} a_k² ‖s(u_i) η_k‖²_{L²}` (squared Hilbert–Schmidt norm of `σ(u)`).
    pub fn hs_norm_sq(&self, u: &GridField) -> f64 {
        self.hs_norm_sq_with(u, |x| self.family.intensity(x))
    }

    fn hs_norm_sq_with(&self, u: &GridField, s: impl Fn(f64) -> f64) -> f64 {
        let grid = self.basis.grid();
        (0..u.n_species())
            .map(|i| {
                let dens: Vec<f64> = u.species(i).iter().zip(&self.mode_weight).map(|(&x, w)| s(x).powi(2) * w).collect();
                grid.integrate(&dens)
            })
            .sum()
    }
}

fn truncation_for_tail(coeffs: &[f64], fraction: f64) -> usize {
    let total: f64 = coeffs.iter().map(|a| a * a).sum();
    let mut tail = total;
    for (k, a) in coeffs.iter().enumerate() {
        if tail <= fraction * total {
            return k.max(1);
        }
        tail -= a * a;
    }
    coeffs.len()
}

/// `n × K` Brownian increments, species-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerIncrements {
    pub n_species: usize,
    pub k_modes: usize,
    pub values: Vec<f64>,
}

impl WienerIncrements {
    pub fn zeros(n_species: usize, k_modes: usize) -> Self {
        Self { n_species, k_modes, values: vec![0.0; n_species * k_modes] }
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k_modes..(i + 1) * self.k_modes]
    }
}

/// Standard normal stream: ChaCha8 keystream (counter-based, stream id =
/// path index) fed through the Box–Muller transform with `libm`
/// transcendental functions, so draws are bit-identical on every platform.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        // u1 ∈ (0, 1], u2 ∈ [0, 1)
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * SCALE;
        let u2 = (self.rng.next_u64() >> 11) as f64 * SCALE;
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }
}

/// i.i.d. `N(0, dt)` increments for `n` species and `K` modes.
pub fn sample_wiener_increments(stream: &mut NormalStream, n: usize, k_modes: usize, dt: f64) -> WienerIncrements {
    let sd = libm::sqrt(dt);
    let values = (0..n * k_modes).map(|_| sd * stream.next_normal()).collect();
    WienerIncrements { n_species: n, k_modes, values }
}

/// Empirical Lipschitz and growth constants of `σ` on sampled states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A4Report {
    /// `max ‖σ(u) − σ(v)‖_HS / ‖u − v‖_{L²}` over distinct pairs.
    pub c_lip_est: f64,
    /// `max ‖σ(x)‖_HS / (1 + ‖x‖_{L²})` over all sampled states.
    pub c_growth_est: f64,
    /// Least-squares slope of `log ‖σ(x)‖_HS` against `log ‖x‖_{L²}`;
    /// `None` when fewer than two distinct usable states exist.
    pub gamma_est: Option<f64>,
}

pub fn check_a4(model: &NoiseModel, params: &SktParameters, pairs: &[(GridField, GridField)]) -> Result<A4Report> {
    if pairs.is_empty() {
        return Err(SktError::InsufficientData("check_a4 needs at least one sample pair".into()));
    }
    let grid = model.basis.grid();
    let n = params.n();
    let norm = |f: &GridField| -> f64 { (0..n).map(|i| grid.inner(f.species(i), f.species(i))).sum::<f64>().sqrt() };
    let s = |x: f64| model.family.intensity(x);
    let mut c_lip = 0.0f64;
    let mut c_growth = 0.0f64;
    let mut log_pts = Vec::new();
    for (u, v) in pairs {
        u.check_shape(n, grid.len())?;
        v.check_shape(n, grid.len())?;
        let diff: Vec<f64> = u.values().iter().zip(v.values()).map(|(a, b)| a - b).collect();
        let diff = GridField::from_raw(FieldKind::Dual, n, grid.len(), diff);
        let dnorm = norm(&diff);
        if dnorm > 0.0 {
            // ‖σ(u) − σ(v)‖² = Σ_i ∫ (s(u_i) − s(v_i))² Σ_k a_k² η_k² dx
            let sd: Vec<f64> = u.values().iter().zip(v.values()).map(|(a, b)| s(*a) - s(*b)).collect();
            let sd = GridField::from_raw(FieldKind::Dual, n, grid.len(), sd);
            let hs = model.hs_norm_sq_with(&sd, |x| x).sqrt();
            c_lip = c_lip.max(hs / dnorm);
        }
        for x in [u, v] {
            let xn = norm(x);
            let hs = model.hs_norm_sq(x).sqrt();
            c_growth = c_growth.max(hs / (1.0 + xn));
            if xn > 0.0 && hs > 0.0 {
                log_pts.push((xn.ln(), hs.ln()));
            }
        }
    }
    Ok(A4Report { c_lip_est: c_lip, c_growth_est: c_growth, gamma_est: ols_slope(&log_pts) })
}

fn ols_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 1e-300).then(|| sxy / sxx)
}

/// Measured entropy–noise interaction constants along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A5Report {
    pub ratio1_max: f64,
    pub ratio2_max: f64,
}

impl A5Report {
    /// The smallest `C_h` consistent with both measured ratios.
    pub fn c_h(&self) -> f64 {
        self.ratio1_max.max(self.ratio2_max)
    }
}

/// Evaluates, at every saved time `t`,
///
/// ```text
/// lhs₁(t) = ( ∫₀ᵗ Σ_k Σ_i ( ∫ π_i log u_i · s(u_i) a_k η_k dx )² ds )^{1/2}
/// lhs₂(t) = ∫₀ᵗ Σ_k Σ_i ∫ (π_i/u_i) (s(u_i) a_k η_k)² dx ds
/// ```
///
/// (left rectangle rule over snapshots) and returns the largest
/// `lhsᵢ(t) / (1 + ∫₀ᵗ ∫ h(u) dx ds)`.
pub fn check_a5(model: &NoiseModel, params: &SktParameters, path: &PathRecord) -> Result<A5Report> {
    let snaps = path.snapshots();
    if snaps.len() < 2 {
        return Err(SktError::InsufficientData("check_a5 needs a trajectory with at least two saved fields".into()));
    }
    let basis = &model.basis;
    let grid = basis.grid();
    let n = params.n();
    let pi = params.pi();
    let coeff_sq: Vec<f64> = model.coefficients().iter().map(|a| a * a).collect();
    let mut int1 = 0.0;
    let mut int2 = 0.0;
    let mut int_h = 0.0;
    let mut report = A5Report { ratio1_max: 0.0, ratio2_max: 0.0 };
    for pair in snaps.windows(2) {
        let (snap, next) = (&pair[0], &pair[1]);
        let dt = next.t - snap.t;
        let u = &snap.u;
        u.check_shape(n, grid.len())?;
        let mut i1 = 0.0;
        let mut i2 = 0.0;
        for i in 0..n {
            let ui = u.species(i);
            let f: Vec<f64> = ui
                .iter()
                .map(|&x| if x > 0.0 { pi[i] * x.ln() * model.family.intensity(x) } else { 0.0 })
                .collect();
            let coeffs = basis.to_spectral(&f);
            i1 += coeffs.iter().zip(&coeff_sq).map(|(c, a2)| a2 * c * c).sum::<f64>();
            let g: Vec<f64> = ui
                .iter()
                .zip(model.mode_weight())
                .map(|(&x, w)| pi[i] * model.family.intensity_sq_over_u(x) * w)
                .collect();
            i2 += grid.integrate(&g);
        }
        let hdens: Vec<f64> = (0..grid.len()).map(|c| params.entropy_density(&u.at(c))).collect();
        int1 += dt * i1;
        int2 += dt * i2;
        int_h += dt * grid.integrate(&hdens);
        let denom = 1.0 + int_h;
        report.ratio1_max = report.ratio1_max.max(int1.sqrt() / denom);
        report.ratio2_max = report.ratio2_max.max(int2 / denom);
    }
    Ok(report)
}
