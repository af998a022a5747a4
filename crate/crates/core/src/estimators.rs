//! Discrete space-time norms, fractional time regularity and Monte Carlo
//! moments evaluated on recorded paths.
//!
//! Time integrals use the left rectangle rule on the saved snapshots (weight
//! `t_{k+1} − t_k`, the last snapshot carries weight 0 but counts for
//! suprema). Space integrals are cell sums; gradients are the mirrored cell
//! differences of [`Grid::cell_gradient`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SktError};
use crate::grid::{pairwise_sum, Grid, GridField};
use crate::simulator::ensemble::shifted_mean_variance;
use crate::simulator::{run_path, PathRecord, Scheme, SimConfig};
use crate::spectral::SpectralBasis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceNorm {
    L1,
    L2,
    Lq(f64),
    /// Full `H¹` norm `(‖f‖² + ‖∇f‖²)^{1/2}`.
    H1,
    /// `‖∇f‖_{L²}`.
    H1Seminorm,
    /// `∫ |f| + Σ_axes |∂f|`.
    W11,
    /// `D(L)'` norm with Sobolev index `m`.
    Dual(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Sqrt,
    /// `(u_i u_j)^{1/2}`; ignores the species selector.
    PairSqrt(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    /// `p_t ∈ [1, ∞]`.
    pub time_exponent: f64,
    pub space: SpaceNorm,
    pub transform: Transform,
}

impl NormSpec {
    pub fn new(time_exponent: f64, space: SpaceNorm, transform: Transform) -> Result<Self> {
        if !(time_exponent >= 1.0) {
            return Err(SktError::InvalidParameters("time exponent must be >= 1".into()));
        }
        if let SpaceNorm::Lq(q) = space {
            if !(q >= 1.0 && q.is_finite()) {
                return Err(SktError::InvalidParameters("space exponent must be in [1, inf)".into()));
            }
        }
        if let Transform::PairSqrt(i, j) = transform {
            if i == j {
                return Err(SktError::InvalidParameters("pair_sqrt needs two distinct species".into()));
            }
        }
        Ok(Self { time_exponent, space, transform })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeciesSelector {
    One(usize),
    All,
}

/// Left-rectangle weights `t_{k+1} − t_k`, last weight 0.
pub fn time_weights(times: &[f64]) -> Vec<f64> {
    let mut w: Vec<f64> = times.windows(2).map(|t| t[1] - t[0]).collect();
    if !times.is_empty() {
        w.push(0.0);
    }
    w
}

fn snapshot_times(path: &PathRecord) -> Result<Vec<f64>> {
    let snaps = path.snapshots();
    if snaps.is_empty() {
        return Err(SktError::InsufficientData("path has no snapshots".into()));
    }
    Ok(snaps.iter().map(|s| s.t).collect())
}

fn transformed_components(u: &GridField, transform: Transform, selector: SpeciesSelector) -> Result<Vec<Vec<f64>>> {
    let n = u.n_species();
    let check = |i: usize| -> Result<()> {
        if i >= n {
            return Err(SktError::ShapeMismatch { expected: format!("species < {n}"), got: i.to_string() });
        }
        Ok(())
    };
    let species: Vec<usize> = match selector {
        SpeciesSelector::One(i) => {
            check(i)?;
            vec![i]
        }
        SpeciesSelector::All => (0..n).collect(),
    };
    let root = |x: f64| x.max(0.0).sqrt();
    Ok(match transform {
        Transform::Identity => species.iter().map(|&i| u.species(i).to_vec()).collect(),
        Transform::Sqrt => species.iter().map(|&i| u.species(i).iter().map(|&x| root(x)).collect()).collect(),
        Transform::PairSqrt(i, j) => {
            check(i)?;
            check(j)?;
            vec![u.species(i).iter().zip(u.species(j)).map(|(a, b)| root(a * b)).collect()]
        }
    })
}

/// Space norm of a vector-valued function given by its components.
fn space_norm(grid: &Grid, comps: &[Vec<f64>], norm: SpaceNorm, basis: Option<&SpectralBasis>) -> f64 {
    let grad_sq = |f: &[f64]| -> f64 {
        let g = grid.cell_gradient(f);
        let dens: Vec<f64> = (0..f.len()).map(|c| g.iter().map(|ax| ax[c] * ax[c]).sum()).collect();
        grid.integrate(&dens)
    };
    match norm {
        SpaceNorm::L1 => comps.iter().map(|f| grid.integrate(&abs(f))).sum(),
        SpaceNorm::L2 => comps.iter().map(|f| grid.inner(f, f)).sum::<f64>().sqrt(),
        SpaceNorm::Lq(q) => {
            let s: f64 = comps
                .iter()
                .map(|f| grid.integrate(&f.iter().map(|x| x.abs().powf(q)).collect::<Vec<_>>()))
                .sum();
            s.powf(1.0 / q)
        }
        SpaceNorm::H1 => comps.iter().map(|f| grid.inner(f, f) + grad_sq(f)).sum::<f64>().sqrt(),
        SpaceNorm::H1Seminorm => comps.iter().map(|f| grad_sq(f)).sum::<f64>().sqrt(),
        SpaceNorm::W11 => comps
            .iter()
            .map(|f| {
                let g = grid.cell_gradient(f);
                let dens: Vec<f64> = (0..f.len()).map(|c| f[c].abs() + g.iter().map(|ax| ax[c].abs()).sum::<f64>()).collect();
                grid.integrate(&dens)
            })
            .sum(),
        SpaceNorm::Dual(_) => {
            let b = basis.expect("dual norm needs a basis");
            comps.iter().map(|f| b.dual_norm(f).powi(2)).sum::<f64>().sqrt()
        }
    }
}

fn abs(f: &[f64]) -> Vec<f64> {
    f.iter().map(|x| x.abs()).collect()
}

fn dual_basis(grid: &Grid, norm: SpaceNorm) -> Result<Option<SpectralBasis>> {
    match norm {
        SpaceNorm::Dual(m) => Ok(Some(SpectralBasis::build(grid, Some(m))?)),
        _ => Ok(None),
    }
}

/// `(Σ_k w_k X_k^p)^{1/p}` or `max_k X_k` for `p = ∞`.
fn time_norm(weights: &[f64], values: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        values.iter().cloned().fold(0.0, f64::max)
    } else {
        let terms: Vec<f64> = weights.iter().zip(values).map(|(w, x)| w * x.powf(p)).collect();
        pairwise_sum(&terms).powf(1.0 / p)
    }
}

/// Space norm of the transformed field at every snapshot.
pub fn space_norm_series(path: &PathRecord, space: SpaceNorm, transform: Transform, selector: SpeciesSelector) -> Result<Vec<f64>> {
    snapshot_times(path)?;
    let basis = dual_basis(&path.grid, space)?;
    path.snapshots()
        .iter()
        .map(|s| {
            s.u.check_shape(path.n_species, path.grid.len())?;
            let comps = transformed_components(&s.u, transform, selector)?;
            Ok(space_norm(&path.grid, &comps, space, basis.as_ref()))
        })
        .collect()
}

/// Discrete `‖T(u)‖_{L^{p_t}(0,T; X)}`.
pub fn mixed_norm(path: &PathRecord, spec: &NormSpec, selector: SpeciesSelector) -> Result<f64> {
    let times = snapshot_times(path)?;
    let values = space_norm_series(path, spec.space, spec.transform, selector)?;
    Ok(time_norm(&time_weights(&times), &values, spec.time_exponent))
}

/// Ratio `‖u‖_{L^{2+2/d}(Q_T)} / (‖u‖^θ_{L²(0,T;H¹)} ‖u‖^{1−θ}_{L^∞(0,T;L¹)})`,
/// `θ = d/(d+1)`: the measured constant of the space-time interpolation inequality.
pub fn gagliardo_nirenberg_ratio(path: &PathRecord, selector: SpeciesSelector) -> Result<f64> {
    let d = path.grid.dim() as f64;
    let theta = d / (d + 1.0);
    let q = 2.0 + 2.0 / d;
    let lhs = mixed_norm(path, &NormSpec::new(q, SpaceNorm::Lq(q), Transform::Identity)?, selector)?;
    let h1 = mixed_norm(path, &NormSpec::new(2.0, SpaceNorm::H1, Transform::Identity)?, selector)?;
    let l1 = mixed_norm(path, &NormSpec::new(f64::INFINITY, SpaceNorm::L1, Transform::Identity)?, selector)?;
    Ok(lhs / (h1.powf(theta) * l1.powf(1.0 - theta)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlobodeckijValue {
    /// `Σ_{j≠k} w_j w_k ‖v_j − v_k‖^p / |t_j − t_k|^{1+αp}`.
    pub double_integral: f64,
    /// `double_integral^{1/p}`.
    pub seminorm: f64,
    /// `(Σ_k w_k ‖v_k‖^p)^{1/p}`.
    pub lp_part: f64,
    /// `(lp_part^p + double_integral)^{1/p}`.
    pub full_norm: f64,
    /// Whether `α < 1/2`, the range in which the fractional estimate is proved.
    pub alpha_below_half: bool,
}

/// Rectangle-rule Sobolev–Slobodeckij quantities for a sampled path given
/// its norms `norm(k)` and distances `dist(j, k)`; diagonal pairs are omitted.
pub fn slobodeckij_series(
    times: &[f64],
    norm: impl Fn(usize) -> f64 + Sync,
    dist: impl Fn(usize, usize) -> f64 + Sync,
    alpha: f64,
    p: f64,
) -> Result<SlobodeckijValue> {
    if times.len() < 2 {
        return Err(SktError::InsufficientData("Slobodeckij seminorm needs at least two samples".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) || !(p >= 1.0 && p.is_finite()) {
        return Err(SktError::InvalidParameters("need alpha in (0,1) and finite p >= 1".into()));
    }
    let w = time_weights(times);
    let m = times.len();
    let rows: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|j| {
            let terms: Vec<f64> = (0..m)
                .filter(|&k| k != j && w[j] * w[k] != 0.0)
                .map(|k| w[j] * w[k] * dist(j, k).powf(p) / (times[j] - times[k]).abs().powf(1.0 + alpha * p))
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    let double_integral = pairwise_sum(&rows);
    let lp_terms: Vec<f64> = (0..m).map(|k| w[k] * norm(k).powf(p)).collect();
    let lp_p = pairwise_sum(&lp_terms);
    Ok(SlobodeckijValue {
        double_integral,
        seminorm: double_integral.powf(1.0 / p),
        lp_part: lp_p.powf(1.0 / p),
        full_norm: (lp_p + double_integral).powf(1.0 / p),
        alpha_below_half: alpha < 0.5,
    })
}

/// Spaces available for the fractional time seminorm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlobodeckijSpace {
    L2,
    Dual(u32),
}

/// Fractional time seminorm of the density path (all species).
pub fn slobodeckij_seminorm(path: &PathRecord, alpha: f64, p: f64, space: SlobodeckijSpace) -> Result<SlobodeckijValue> {
    let times = snapshot_times(path)?;
    let snaps = path.snapshots();
    let grid = &path.grid;
    let basis = match space {
        SlobodeckijSpace::Dual(m) => Some(SpectralBasis::build(grid, Some(m))?),
        SlobodeckijSpace::L2 => None,
    };
    let norm_of = |f: &[f64]| -> f64 {
        let nc = grid.len();
        f.chunks(nc)
            .map(|s| match &basis {
                Some(b) => b.dual_norm(s).powi(2),
                None => grid.inner(s, s),
            })
            .sum::<f64>()
            .sqrt()
    };
    let norm = |k: usize| norm_of(snaps[k].u.values());
    let dist = |j: usize, k: usize| {
        let diff: Vec<f64> = snaps[j].u.values().iter().zip(snaps[k].u.values()).map(|(a, b)| a - b).collect();
        norm_of(&diff)
    };
    slobodeckij_series(&times, norm, dist, alpha, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    /// Mean of `X^p`.
    pub mean: f64,
    /// Standard error of the mean; `None` for a single sample.
    pub std_error: Option<f64>,
    pub samples: usize,
}

/// Monte Carlo mean and standard error of `X^p` from per-path values `X`.
pub fn ensemble_moment(values: &[f64], p: f64) -> Result<Moment> {
    if values.is_empty() {
        return Err(SktError::InsufficientData("no paths".into()));
    }
    if !(p >= 1.0) {
        return Err(SktError::InvalidParameters("moment order must be >= 1".into()));
    }
    let xp: Vec<f64> = values.iter().map(|x| x.abs().powf(p)).collect();
    let (mean, variance) = shifted_mean_variance(&xp);
    let std_error = (xp.len() > 1).then(|| (variance / xp.len() as f64).sqrt());
    Ok(Moment { mean, std_error, samples: xp.len() })
}

/// [`ensemble_moment`] of a mixed norm over a list of paths.
pub fn ensemble_moment_paths(paths: &[PathRecord], spec: &NormSpec, selector: SpeciesSelector, p: f64) -> Result<Moment> {
    let values = paths.iter().map(|r| mixed_norm(r, spec, selector)).collect::<Result<Vec<_>>>()?;
    ensemble_moment(&values, p)
}

/// `‖f − g‖_{L²(Q_T)}` over matching snapshots of two paths.
pub fn l2_qt_distance(a: &PathRecord, b: &PathRecord) -> Result<f64> {
    let (sa, sb) = (a.snapshots(), b.snapshots());
    if sa.len() != sb.len() || sa.iter().zip(sb).any(|(x, y)| x.t != y.t) || a.grid != b.grid {
        return Err(SktError::InvalidParameters("paths do not share snapshot times and grid".into()));
    }
    let times = snapshot_times(a)?;
    let w = time_weights(&times);
    let terms: Vec<f64> = sa
        .iter()
        .zip(sb)
        .zip(&w)
        .map(|((x, y), wk)| {
            let d: Vec<f64> = x.u.values().iter().zip(y.u.values()).map(|(p, q)| (p - q).powi(2)).collect();
            wk * a.grid.integrate(&d)
        })
        .collect();
    Ok(pairwise_sum(&terms).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonStudy {
    pub epsilons: Vec<f64>,
    /// `‖u^{ε_k} − u^{ε_{k+1}}‖_{L²(Q_T)}`.
    pub successive_differences: Vec<f64>,
    /// `sup_t ε ‖L*L R_ε(v)‖_{D(L)'} = sup_t ε ‖L w‖_{L²}` per ε.
    pub residue: Vec<f64>,
    /// `(2ε sup_t H)^{1/2}` per ε.
    pub residue_bound: Vec<f64>,
    pub sup_entropy: Vec<f64>,
}

/// Runs the entropy-variable scheme for each `ε` with the same seed (hence
/// the same Wiener increments) and compares consecutive solutions.
pub fn epsilon_consistency_study(config: &SimConfig, epsilons: &[f64], seed: u64) -> Result<EpsilonStudy> {
    if config.scheme() != Scheme::EntropyVariable {
        return Err(SktError::InvalidParameters("the epsilon study uses the entropy-variable scheme".into()));
    }
    if epsilons.is_empty() || epsilons.windows(2).any(|e| e[1] > e[0]) {
        return Err(SktError::InvalidParameters("epsilon list must be nonempty and non-increasing".into()));
    }
    let paths: Vec<PathRecord> = epsilons
        .par_iter()
        .map(|&eps| run_path(&config.clone().with_epsilon(eps)?, seed))
        .collect::<Result<_>>()?;
    let successive_differences = paths.windows(2).map(|p| l2_qt_distance(&p[0], &p[1])).collect::<Result<_>>()?;
    let basis = config.basis();
    let mut residue = Vec::new();
    let mut residue_bound = Vec::new();
    let mut sup_entropy = Vec::new();
    for (rec, &eps) in paths.iter().zip(epsilons) {
        let r = rec
            .snapshots()
            .iter()
            .filter_map(|s| s.w.as_ref())
            .map(|w| eps * basis.l_norm_field(w))
            .fold(0.0, f64::max);
        let h = rec.sup_entropy();
        residue.push(r);
        residue_bound.push((2.0 * eps * h.max(0.0)).sqrt());
        sup_entropy.push(h);
    }
    Ok(EpsilonStudy { epsilons: epsilons.to_vec(), successive_differences, residue, residue_bound, sup_entropy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::FieldKind;
    use crate::simulator::Snapshot;
    use std::f64::consts::PI;

    fn constant_path(grid: &Grid, c: f64, steps: usize) -> PathRecord {
        let snaps = (0..=steps)
            .map(|k| Snapshot {
                step: k,
                t: k as f64 * 0.1,
                u: GridField::constant(FieldKind::Density, 2, grid.len(), c).unwrap(),
                w: None,
            })
            .collect();
        PathRecord::from_snapshots(grid.clone(), snaps).unwrap()
    }

    #[test]
    fn constant_path_norms() {
        let g = Grid::new_1d(16, 2.0).unwrap();
        let rec = constant_path(&g, 3.0, 5);
        let spec = NormSpec::new(f64::INFINITY, SpaceNorm::L1, Transform::Identity).unwrap();
        assert!((mixed_norm(&rec, &spec, SpeciesSelector::One(0)).unwrap() - 6.0).abs() < 1e-14);
        let grad = NormSpec::new(2.0, SpaceNorm::H1Seminorm, Transform::Sqrt).unwrap();
        assert_eq!(mixed_norm(&rec, &grad, SpeciesSelector::All).unwrap(), 0.0);
        let pair = NormSpec::new(2.0, SpaceNorm::H1Seminorm, Transform::PairSqrt(0, 1)).unwrap();
        assert_eq!(mixed_norm(&rec, &pair, SpeciesSelector::All).unwrap(), 0.0);
        let v = slobodeckij_seminorm(&rec, 0.25, 2.0, SlobodeckijSpace::Dual(2)).unwrap();
        assert_eq!(v.double_integral, 0.0);
    }

    #[test]
    fn spec_validation() {
        assert!(NormSpec::new(0.5, SpaceNorm::L2, Transform::Identity).is_err());
        assert!(NormSpec::new(2.0, SpaceNorm::Lq(0.5), Transform::Identity).is_err());
        assert!(NormSpec::new(2.0, SpaceNorm::L2, Transform::PairSqrt(1, 1)).is_err());
    }

    #[test]
    fn homogeneity() {
        let g = Grid::new_2d(6, 5, 1.0, 1.5).unwrap();
        let field = |scale: f64| -> PathRecord {
            let snaps = (0..4)
                .map(|k| {
                    let vals: Vec<f64> = (0..2)
                        .flat_map(|i| g.sample(move |x, y| scale * (2.0 + (x * 3.0 + i as f64 + k as f64).sin() * y.cos())))
                        .collect();
                    Snapshot { step: k, t: 0.1 * k as f64, u: GridField::new(FieldKind::Density, 2, g.len(), vals).unwrap(), w: None }
                })
                .collect();
            PathRecord::from_snapshots(g.clone(), snaps).unwrap()
        };
        let (a, b) = (field(1.0), field(2.5));
        for space in [SpaceNorm::L1, SpaceNorm::L2, SpaceNorm::Lq(3.0), SpaceNorm::H1, SpaceNorm::W11, SpaceNorm::Dual(3)] {
            for pt in [1.0, 2.0, f64::INFINITY] {
                let id = NormSpec::new(pt, space, Transform::Identity).unwrap();
                let x = mixed_norm(&a, &id, SpeciesSelector::All).unwrap();
                let y = mixed_norm(&b, &id, SpeciesSelector::All).unwrap();
                assert!((y - 2.5 * x).abs() <= 1e-12 * y, "{space:?} {pt}");
                let sq = NormSpec::new(pt, space, Transform::Sqrt).unwrap();
                let x = mixed_norm(&a, &sq, SpeciesSelector::One(1)).unwrap();
                let y = mixed_norm(&b, &sq, SpeciesSelector::One(1)).unwrap();
                assert!((y - 2.5f64.sqrt() * x).abs() <= 1e-12 * y);
            }
            let dual = NormSpec::new(2.0, SpaceNorm::Dual(3), Transform::Identity).unwrap();
            let l2 = NormSpec::new(2.0, SpaceNorm::L2, Transform::Identity).unwrap();
            assert!(mixed_norm(&a, &dual, SpeciesSelector::All).unwrap() <= mixed_norm(&a, &l2, SpeciesSelector::All).unwrap());
        }
    }

    #[test]
    fn heat_mode_h1_norm() {
        let g = Grid::new_1d(128, 1.0).unwrap();
        let dt = 1e-3;
        let t_final = 0.1;
        let snaps = (0..=100)
            .map(|k| {
                let t = k as f64 * dt;
                let vals = g.sample(|x, _| 1.0 + 0.5 * (PI * x).cos() * (-PI * PI * t).exp());
                Snapshot { step: k, t, u: GridField::new(FieldKind::Density, 1, 128, vals).unwrap(), w: None }
            })
            .collect();
        let rec = PathRecord::from_snapshots(g, snaps).unwrap();
        let spec = NormSpec::new(2.0, SpaceNorm::H1, Transform::Identity).unwrap();
        let got = mixed_norm(&rec, &spec, SpeciesSelector::One(0)).unwrap().powi(2);
        let k = 2.0 * PI * PI;
        let exact = t_final + 0.125 * (1.0 + PI * PI) * (1.0 - (-k * t_final).exp()) / k;
        assert!((got - exact).abs() <= 0.02 * exact, "{got} vs {exact}");
    }

    #[test]
    fn slobodeckij_scalar_oracle_and_monotonicity() {
        let times: Vec<f64> = (0..512).map(|k| k as f64 / 511.0).collect();
        let v = |alpha: f64| slobodeckij_series(&times, |k| times[k], |j, k| (times[j] - times[k]).abs(), alpha, 2.0).unwrap();
        let exact = 2.0 / (1.5 * 2.5);
        let got = v(0.25).double_integral;
        assert!((got - exact).abs() <= 0.02 * exact, "{got}");
        let mut prev = 0.0;
        for alpha in [0.1, 0.2, 0.3, 0.45, 0.6, 0.8] {
            let s = v(alpha).double_integral;
            assert!(s >= prev);
            prev = s;
        }
        assert!(slobodeckij_series(&times[..1], |_| 0.0, |_, _| 0.0, 0.25, 2.0).is_err());
    }

    #[test]
    fn moments() {
        let m = ensemble_moment(&[2.0], 3.0).unwrap();
        assert_eq!((m.mean, m.std_error), (8.0, None));
        let m = ensemble_moment(&[1.5; 4], 2.0).unwrap();
        assert_eq!((m.mean, m.std_error), (2.25, Some(0.0)));
        let base = [0.3, 1.2, 2.0, 0.7];
        let scaled: Vec<f64> = base.iter().map(|x| 3.0 * x).collect();
        let (a, b) = (ensemble_moment(&base, 2.5).unwrap(), ensemble_moment(&scaled, 2.5).unwrap());
        assert!((b.mean - 3f64.powf(2.5) * a.mean).abs() <= 1e-13 * b.mean);
        assert!(ensemble_moment(&[], 1.0).is_err());
    }
}
