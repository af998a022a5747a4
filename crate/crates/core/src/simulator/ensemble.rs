use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SktError};
use crate::grid::pairwise_sum;

use super::record::PathRecord;
use super::{run_path_indexed, SimConfig};

/// Per-path quantities aggregated by [`run_ensemble`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub path_index: u64,
    pub sup_entropy: f64,
    pub dissipation_integral: f64,
    /// `∫ v_i(T) − ∫ v_i(0)` per species.
    pub mass_increment: Vec<f64>,
    pub min_u: f64,
    pub newton_iters: usize,
}

impl PathSummary {
    pub fn of(rec: &PathRecord) -> Self {
        let first = rec.v_mass.first().cloned().unwrap_or_default();
        let last = rec.v_mass.last().cloned().unwrap_or_default();
        Self {
            path_index: rec.path_index,
            sup_entropy: rec.sup_entropy(),
            dissipation_integral: rec.dissipation_integral(),
            mass_increment: last.iter().zip(&first).map(|(a, b)| a - b).collect(),
            min_u: rec.min_u.iter().cloned().fold(f64::INFINITY, f64::min),
            newton_iters: rec.newton_iters.iter().sum(),
        }
    }
}

/// Mean, unbiased variance (0 for a single path) and maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub variance: f64,
    pub max: f64,
}

impl SummaryStats {
    /// Pairwise sums in index order, so the result does not depend on scheduling.
    pub fn of(values: &[f64]) -> Self {
        let (mean, variance) = shifted_mean_variance(values);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self { mean, variance, max }
    }

    pub fn std_error(&self, count: usize) -> f64 {
        (self.variance / count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub paths: usize,
    pub base_seed: u64,
    pub sup_entropy: SummaryStats,
    pub dissipation_integral: SummaryStats,
    /// Per species.
    pub mass_increment: Vec<SummaryStats>,
    pub min_u: f64,
    pub summaries: Vec<PathSummary>,
}

impl EnsembleStats {
    pub fn from_summaries(base_seed: u64, summaries: Vec<PathSummary>) -> Result<Self> {
        if summaries.is_empty() {
            return Err(SktError::InsufficientData("ensemble without paths".into()));
        }
        let col = |f: &dyn Fn(&PathSummary) -> f64| -> Vec<f64> { summaries.iter().map(f).collect() };
        let n = summaries[0].mass_increment.len();
        let mass_increment = (0..n).map(|i| SummaryStats::of(&col(&|s| s.mass_increment[i]))).collect();
        Ok(Self {
            paths: summaries.len(),
            base_seed,
            sup_entropy: SummaryStats::of(&col(&|s| s.sup_entropy)),
            dissipation_integral: SummaryStats::of(&col(&|s| s.dissipation_integral)),
            mass_increment,
            min_u: col(&|s| s.min_u).into_iter().fold(f64::INFINITY, f64::min),
            summaries,
        })
    }
}

/// Mean and unbiased variance computed relative to the first value, so
/// identical inputs give exactly that value and zero variance.
pub(crate) fn shifted_mean_variance(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let x0 = values[0];
    let shifted: Vec<f64> = values.iter().map(|x| x - x0).collect();
    let md = pairwise_sum(&shifted) / m;
    let dev: Vec<f64> = shifted.iter().map(|d| (d - md).powi(2)).collect();
    let variance = if values.len() > 1 { pairwise_sum(&dev) / (m - 1.0) } else { 0.0 };
    (x0 + md, variance)
}

fn collect_ordered<T: Send>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    let completed = results.iter().filter(|r| r.is_ok()).count();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(e) => return Err(SktError::Ensemble { completed, source: Box::new(e) }),
        }
    }
    Ok(out)
}

/// Runs paths `(base_seed, 0..paths)` in parallel and aggregates them.
pub fn run_ensemble(config: &SimConfig, paths: usize, base_seed: u64) -> Result<EnsembleStats> {
    if paths == 0 {
        return Err(SktError::InvalidParameters("ensemble needs at least one path".into()));
    }
    let results: Vec<Result<PathSummary>> = (0..paths as u64)
        .into_par_iter()
        .map(|j| run_path_indexed(config, base_seed, j).map(|r| PathSummary::of(&r)))
        .collect();
    EnsembleStats::from_summaries(base_seed, collect_ordered(results)?)
}

/// Like [`run_ensemble`] but keeps every record.
pub fn run_ensemble_paths(config: &SimConfig, paths: usize, base_seed: u64) -> Result<Vec<PathRecord>> {
    if paths == 0 {
        return Err(SktError::InvalidParameters("ensemble needs at least one path".into()));
    }
    let results: Vec<Result<PathRecord>> =
        (0..paths as u64).into_par_iter().map(|j| run_path_indexed(config, base_seed, j)).collect();
    collect_ordered(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::{DiffusionMode, SktParameters};
    use crate::noise::NoiseFamily;
    use crate::simulator::{run_path, Scheme};

    fn config() -> SimConfig {
        let p = SktParameters::new(vec![1.0], vec![vec![0.0]], Some(vec![1.0]), DiffusionMode::WithoutSelfDiffusion).unwrap();
        SimConfig::new(p, Grid::new_1d(8, 1.0).unwrap(), Scheme::EntropyVariable, 0.005, 1e-3).unwrap()
    }

    #[test]
    fn single_path_matches_record() {
        let cfg = config();
        let stats = run_ensemble(&cfg, 1, 3).unwrap();
        let rec = run_path(&cfg, 3).unwrap();
        assert_eq!(stats.sup_entropy.mean, rec.sup_entropy());
        assert_eq!(stats.sup_entropy.variance, 0.0);
        assert_eq!(stats.dissipation_integral.mean, rec.dissipation_integral());
    }

    #[test]
    fn deterministic_paths_have_zero_variance() {
        let stats = run_ensemble(&config(), 5, 0).unwrap();
        assert_eq!(stats.sup_entropy.variance, 0.0);
        assert_eq!(stats.dissipation_integral.variance, 0.0);
    }

    #[test]
    fn aggregation_is_reproducible() {
        let cfg = config().with_noise(NoiseFamily::Power { alpha: 0.5 }, None, None).unwrap();
        let a = run_ensemble(&cfg, 6, 9).unwrap();
        let b = run_ensemble(&cfg, 6, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.sup_entropy.variance > 0.0);
        assert!(run_ensemble(&cfg, 0, 9).is_err());
    }
}
