//! Pointwise algebra of the SKT cross-diffusion model.
//!
//! For `n` species with densities `u_i > 0` the diffusion matrix is
//!
//! ```text
//! A_ij(u) = δ_ij (a_i0 + Σ_k a_ik u_k) + a_ij u_i
//! ```
//!
//! and the Boltzmann entropy `h(u) = Σ π_i (u_i (log u_i − 1) + 1)` with the
//! reversible measure `π` (`π_i a_ij = π_j a_ji`) symmetrizes it. Everything
//! here acts on a single point value; grid-level operators live in
//! [`crate::operators`].

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SktError};

/// Relative residual accepted for `π_i a_ij = π_j a_ji` on user-supplied `π`.
pub const DETAILED_BALANCE_TOL: f64 = 1e-12;
/// Relative mismatch of cycle products tolerated by [`find_reversible_measure`].
pub const CYCLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionMode {
    /// `a_ii > 0` for every species.
    WithSelfDiffusion,
    /// `a_ii = 0` and `a_i0 > 0` for every species.
    WithoutSelfDiffusion,
}

/// Coefficients of an SKT system together with its reversible measure.
#[derive(Debug, Clone, PartialEq)]
pub struct SktParameters {
    n: usize,
    a0: Vec<f64>,
    /// Row-major `n × n`.
    a: Vec<f64>,
    pi: Vec<f64>,
    mode: DiffusionMode,
}

impl SktParameters {
    /// Builds and validates a parameter set. When `pi` is `None` the
    /// reversible measure is computed with [`find_reversible_measure`].
    pub fn new(
        a0: Vec<f64>,
        a: Vec<Vec<f64>>,
        pi: Option<Vec<f64>>,
        mode: DiffusionMode,
    ) -> Result<Self> {
        let n = a0.len();
        if n == 0 {
            return Err(SktError::InvalidParameters("species count must be >= 1".into()));
        }
        if a.len() != n || a.iter().any(|row| row.len() != n) {
            return Err(SktError::ShapeMismatch {
                expected: format!("{n}x{n} coefficient matrix"),
                got: format!("{} rows", a.len()),
            });
        }
        let flat: Vec<f64> = a.iter().flatten().copied().collect();
        if a0.iter().chain(&flat).any(|x| !x.is_finite() || *x < 0.0) {
            return Err(SktError::InvalidParameters(
                "coefficients a_i0, a_ij must be finite and nonnegative".into(),
            ));
        }
        let pi = match pi {
            Some(pi) => {
                if pi.len() != n {
                    return Err(SktError::ShapeMismatch {
                        expected: format!("pi of length {n}"),
                        got: format!("length {}", pi.len()),
                    });
                }
                if pi.iter().any(|p| !p.is_finite() || *p <= 0.0) {
                    return Err(SktError::InvalidParameters("pi_i must be positive".into()));
                }
                check_detailed_balance(&flat, &pi)?;
                pi
            }
            None => find_reversible_measure(&a)?,
        };
        for i in 0..n {
            let aii = flat[i * n + i];
            match mode {
                DiffusionMode::WithSelfDiffusion if aii <= 0.0 => {
                    return Err(SktError::InvalidParameters(format!(
                        "mode with_self_diffusion requires a_{0}{0} > 0",
                        i + 1
                    )))
                }
                DiffusionMode::WithoutSelfDiffusion if aii != 0.0 || a0[i] <= 0.0 => {
                    return Err(SktError::InvalidParameters(format!(
                        "mode without_self_diffusion requires a_{0}{0} = 0 and a_{0}0 > 0",
                        i + 1
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { n, a0, a: flat, pi, mode })
    }

    /// Picks the mode from the diagonal of `a`: all positive means
    /// self-diffusion, all zero (with `a_i0 > 0`) means none.
    pub fn infer_mode(a0: &[f64], a: &[Vec<f64>]) -> Option<DiffusionMode> {
        let diag: Vec<f64> = a.iter().enumerate().map(|(i, r)| r.get(i).copied().unwrap_or(0.0)).collect();
        if diag.iter().all(|&d| d > 0.0) {
            Some(DiffusionMode::WithSelfDiffusion)
        } else if diag.iter().all(|&d| d == 0.0) && a0.iter().all(|&c| c > 0.0) {
            Some(DiffusionMode::WithoutSelfDiffusion)
        } else {
            None
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn a0(&self) -> &[f64] {
        &self.a0
    }
    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }
    pub fn a_rows(&self) -> Vec<Vec<f64>> {
        self.a.chunks(self.n).map(<[f64]>::to_vec).collect()
    }
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }
    pub fn mode(&self) -> DiffusionMode {
        self.mode
    }

    /// Largest relative residual `|π_i a_ij − π_j a_ji| / max(1, π_i a_ij)`.
    pub fn detailed_balance_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                let lhs = self.pi[i] * self.a(i, j);
                let rhs = self.pi[j] * self.a(j, i);
                worst = worst.max((lhs - rhs).abs() / lhs.max(1.0));
            }
        }
        worst
    }

    /// `A(u)` written into `out` (row-major `n × n`).
    pub fn diffusion_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut diag = self.a0[i];
            for k in 0..n {
                diag += self.a(i, k) * u[k];
            }
            for j in 0..n {
                out[i * n + j] = self.a(i, j) * u[i];
            }
            out[i * n + i] += diag;
        }
    }

    /// `A(u)` for a point value `u`.
    pub fn diffusion_matrix(&self, u: &[f64]) -> DMatrix<f64> {
        let mut out = vec![0.0; self.n * self.n];
        self.diffusion_into(u, &mut out);
        DMatrix::from_row_slice(self.n, self.n, &out)
    }

    /// `h(u)`, with `0 log 0 = 0`.
    pub fn entropy_density(&self, u: &[f64]) -> f64 {
        u.iter()
            .zip(&self.pi)
            .map(|(&ui, &pi)| pi * (xlogx(ui) - ui + 1.0))
            .sum()
    }

    /// `w_i = π_i log u_i`.
    pub fn entropy_variable(&self, u: &[f64]) -> Result<Vec<f64>> {
        u.iter()
            .zip(&self.pi)
            .enumerate()
            .map(|(i, (&ui, &pi))| {
                if ui > 0.0 {
                    Ok(pi * ui.ln())
                } else {
                    Err(SktError::NonPositiveDensity { species: i, cell: 0, value: ui })
                }
            })
            .collect()
    }

    /// `u_i = exp(w_i / π_i)`; strictly positive for finite `w`.
    pub fn inverse_entropy_variable(&self, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.pi).map(|(&wi, &pi)| (wi / pi).exp()).collect()
    }

    /// `B(w) = A(u(w)) h''(u(w))^{-1}` written into `out`; `u` is scratch of length n.
    pub fn mobility_into(&self, w: &[f64], u: &mut [f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            u[i] = (w[i] / self.pi[i]).exp();
        }
        self.diffusion_into(u, out);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] *= u[j] / self.pi[j];
            }
        }
    }

    pub fn mobility_matrix(&self, w: &[f64]) -> DMatrix<f64> {
        let mut u = vec![0.0; self.n];
        let mut out = vec![0.0; self.n * self.n];
        self.mobility_into(w, &mut u, &mut out);
        DMatrix::from_row_slice(self.n, self.n, &out)
    }

    /// `z · h''(u) A(u) z`.
    pub fn dissipation_form(&self, u: &[f64], z: &[f64]) -> f64 {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        self.diffusion_into(u, &mut a);
        let mut q = 0.0;
        for i in 0..n {
            let mut az = 0.0;
            for j in 0..n {
                az += a[i * n + j] * z[j];
            }
            q += z[i] * self.pi[i] / u[i] * az;
        }
        q
    }

    /// Lower bound for `z · h''(u) A(u) z`:
    ///
    /// ```text
    /// Σ_i π_i (a_i0 z_i²/u_i + 2 a_ii z_i²)
    ///   + ½ Σ_{i≠j} π_i a_ij (√(u_j/u_i) z_i + √(u_i/u_j) z_j)²
    /// ```
    ///
    /// Under detailed balance the two coincide up to rounding.
    pub fn dissipation_lower_bound(&self, u: &[f64], z: &[f64]) -> f64 {
        let n = self.n;
        let mut bound = 0.0;
        for i in 0..n {
            let zi = z[i];
            bound += self.pi[i] * (self.a0[i] * zi * zi / u[i] + 2.0 * self.a(i, i) * zi * zi);
            for j in 0..n {
                if j != i {
                    let r = (u[j] / u[i]).sqrt();
                    let t = r * zi + z[j] / r;
                    bound += 0.5 * self.pi[i] * self.a(i, j) * t * t;
                }
            }
        }
        bound
    }
}

#[inline]
pub(crate) fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn check_detailed_balance(a: &[f64], pi: &[f64]) -> Result<()> {
    let n = pi.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let lhs = pi[i] * a[i * n + j];
            let rhs = pi[j] * a[j * n + i];
            if (lhs - rhs).abs() > DETAILED_BALANCE_TOL * lhs.max(rhs).max(1.0) {
                return Err(SktError::DetailedBalanceViolated { i, j, lhs, rhs });
            }
        }
    }
    Ok(())
}

/// Reversible measure of the coefficient matrix `a` (diagonal ignored).
///
/// Ratios are propagated along a breadth-first spanning tree of the graph
/// `{(i, j) : a_ij > 0}`, then every remaining edge is checked (Kolmogorov
/// cycle criterion). Each connected component is anchored at its smallest
/// index with `π = 1`.
pub fn find_reversible_measure(a: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = a.len();
    for (i, row) in a.iter().enumerate() {
        if row.len() != n {
            return Err(SktError::ShapeMismatch {
                expected: format!("{n}x{n} coefficient matrix"),
                got: format!("row {} of length {}", i + 1, row.len()),
            });
        }
        if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(SktError::InvalidParameters("a_ij must be finite and nonnegative".into()));
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && a[i][j] > 0.0 && a[j][i] <= 0.0 {
                return Err(SktError::AsymmetricSupport { i, j });
            }
        }
    }

    let mut pi = vec![0.0; n];
    let mut queue = VecDeque::new();
    for root in 0..n {
        if pi[root] > 0.0 {
            continue;
        }
        pi[root] = 1.0;
        queue.push_back(root);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if j != i && a[i][j] > 0.0 && pi[j] == 0.0 {
                    pi[j] = pi[i] * a[i][j] / a[j][i];
                    queue.push_back(j);
                }
            }
        }
    }

    for i in 0..n {
        for j in (i + 1)..n {
            if a[i][j] > 0.0 {
                let fwd = pi[i] * a[i][j];
                let bwd = pi[j] * a[j][i];
                let mismatch = (fwd - bwd).abs() / fwd.max(bwd);
                if mismatch > CYCLE_TOL {
                    return Err(SktError::CycleInconsistent { i, j, mismatch });
                }
            }
        }
    }
    Ok(pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cross2() -> SktParameters {
        SktParameters::new(
            vec![1.0, 1.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            Some(vec![1.0, 1.0]),
            DiffusionMode::WithoutSelfDiffusion,
        )
        .unwrap()
    }

    #[test]
    fn reversible_measure_two_species() {
        let pi = find_reversible_measure(&[vec![0.0, 2.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(pi, vec![1.0, 2.0]);
    }

    #[test]
    fn reversible_measure_symmetric() {
        let a = vec![vec![0.0, 0.3, 0.7], vec![0.3, 0.0, 1.1], vec![0.7, 1.1, 0.0]];
        assert_eq!(find_reversible_measure(&a).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn reversible_measure_rejects_inconsistent_cycle() {
        let a = vec![vec![0.0, 1.0, 2.0], vec![2.0, 0.0, 1.0], vec![1.0, 2.0, 0.0]];
        assert!(matches!(
            find_reversible_measure(&a),
            Err(SktError::CycleInconsistent { .. })
        ));
    }

    #[test]
    fn reversible_measure_rejects_one_sided_edge() {
        let a = vec![vec![0.0, 1.0], vec![0.0, 0.0]];
        assert_eq!(find_reversible_measure(&a), Err(SktError::AsymmetricSupport { i: 0, j: 1 }));
    }

    #[test]
    fn reversible_measure_disconnected_components() {
        // {1,2} and {3,4} never interact; each component anchored at its first species.
        let a = vec![
            vec![0.0, 3.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.5],
            vec![0.0, 0.0, 2.0, 0.0],
        ];
        assert_eq!(find_reversible_measure(&a).unwrap(), vec![1.0, 3.0, 1.0, 0.25]);
    }

    #[test]
    fn explicit_pi_must_satisfy_detailed_balance() {
        let err = SktParameters::new(
            vec![1.0, 1.0],
            vec![vec![0.0, 2.0], vec![1.0, 0.0]],
            Some(vec![1.0, 1.0]),
            DiffusionMode::WithoutSelfDiffusion,
        )
        .unwrap_err();
        assert!(matches!(err, SktError::DetailedBalanceViolated { .. }));
    }

    #[test]
    fn mode_hypotheses_enforced() {
        let err = SktParameters::new(vec![1.0], vec![vec![0.0]], None, DiffusionMode::WithSelfDiffusion);
        assert!(err.is_err());
        let err = SktParameters::new(vec![0.0], vec![vec![0.0]], None, DiffusionMode::WithoutSelfDiffusion);
        assert!(err.is_err());
    }

    #[test]
    fn diffusion_matrix_examples() {
        let p = cross2();
        let a = p.diffusion_matrix(&[1.0, 2.0]);
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 2.0, 2.0]));

        let heat = SktParameters::new(vec![0.7], vec![vec![0.0]], None, DiffusionMode::WithoutSelfDiffusion).unwrap();
        assert_eq!(heat.diffusion_matrix(&[42.0])[(0, 0)], 0.7);

        let a = p.diffusion_matrix(&[1e-300, 1e-300]);
        assert_relative_eq!(a[(0, 0)], 1.0);
        assert_relative_eq!(a[(1, 1)], 1.0);
        assert!(a[(0, 1)].abs() < 1e-299);
    }

    #[test]
    fn entropy_density_examples() {
        let p = cross2();
        assert_eq!(p.entropy_density(&[1.0, 1.0]), 0.0);
        assert_relative_eq!(p.entropy_density(&[std::f64::consts::E, 1.0]), 1.0, epsilon = 1e-15);
        let q = SktParameters::new(vec![1.0], vec![vec![0.0]], Some(vec![2.0]), DiffusionMode::WithoutSelfDiffusion).unwrap();
        assert_eq!(q.entropy_density(&[0.0]), 2.0);
    }

    #[test]
    fn entropy_variable_examples() {
        let p = cross2();
        assert_eq!(p.entropy_variable(&[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(p.inverse_entropy_variable(&[0.0, 0.0]), vec![1.0, 1.0]);
        let q = SktParameters::new(vec![1.0], vec![vec![0.0]], Some(vec![2.0]), DiffusionMode::WithoutSelfDiffusion).unwrap();
        assert_relative_eq!(q.entropy_variable(&[std::f64::consts::E]).unwrap()[0], 2.0);
        assert!(matches!(
            p.entropy_variable(&[1.0, 0.0]),
            Err(SktError::NonPositiveDensity { species: 1, .. })
        ));
    }

    #[test]
    fn mobility_examples() {
        let p = cross2();
        let w = p.entropy_variable(&[1.0, 2.0]).unwrap();
        let b = p.mobility_matrix(&w);
        let expected = DMatrix::from_row_slice(2, 2, &[3.0, 2.0, 2.0, 4.0]);
        assert!((b - expected).amax() < 1e-14);

        let heat = SktParameters::new(vec![1.0], vec![vec![0.0]], None, DiffusionMode::WithoutSelfDiffusion).unwrap();
        assert_relative_eq!(heat.mobility_matrix(&[0.3f64.ln()])[(0, 0)], 0.3, epsilon = 1e-15);

        let b = p.mobility_matrix(&[0.0, 0.0]);
        assert_eq!(b, b.transpose());
    }

    #[test]
    fn dissipation_bound_examples() {
        let heat = SktParameters::new(vec![1.0], vec![vec![0.0]], None, DiffusionMode::WithoutSelfDiffusion).unwrap();
        let (u, z) = ([0.4], [1.3]);
        assert_relative_eq!(heat.dissipation_lower_bound(&u, &z), 1.69 / 0.4, epsilon = 1e-14);
        assert_relative_eq!(heat.dissipation_form(&u, &z), 1.69 / 0.4, epsilon = 1e-14);
        assert_eq!(heat.dissipation_lower_bound(&u, &[0.0]), 0.0);

        let p = SktParameters::new(
            vec![0.0, 0.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            Some(vec![1.0, 1.0]),
            DiffusionMode::WithoutSelfDiffusion,
        );
        // a_i0 = 0 is not allowed without self-diffusion; the algebra is still defined.
        assert!(p.is_err());
        let p = SktParameters {
            n: 2,
            a0: vec![0.0, 0.0],
            a: vec![0.0, 1.0, 1.0, 0.0],
            pi: vec![1.0, 1.0],
            mode: DiffusionMode::WithoutSelfDiffusion,
        };
        assert_eq!(p.dissipation_lower_bound(&[1.0, 1.0], &[1.0, -1.0]), 0.0);
        assert_eq!(p.dissipation_form(&[1.0, 1.0], &[1.0, -1.0]), 0.0);
    }

    fn reversible_params(n: usize) -> impl Strategy<Value = SktParameters> {
        (
            proptest::collection::vec(0.01f64..3.0, n),
            proptest::collection::vec(0.0f64..2.0, n),
            proptest::collection::vec(0.0f64..2.0, n * n),
        )
            .prop_map(move |(pi, a0, s)| {
                let mut a = vec![vec![0.0; n]; n];
                for i in 0..n {
                    for j in 0..n {
                        let sym = s[i.min(j) * n + i.max(j)] + if i == j { 0.01 } else { 0.0 };
                        a[i][j] = sym / pi[i];
                    }
                }
                let a0 = a0.iter().map(|x| x + 0.01).collect();
                SktParameters::new(a0, a, Some(pi), DiffusionMode::WithSelfDiffusion).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn dissipation_bound_below_quadratic_form(
            p in (1usize..5).prop_flat_map(reversible_params),
            seed in proptest::collection::vec((0.01f64..100.0, -10.0f64..10.0), 4),
        ) {
            let n = p.n();
            let u: Vec<f64> = seed[..n].iter().map(|s| s.0).collect();
            let z: Vec<f64> = seed[..n].iter().map(|s| s.1).collect();
            prop_assert!(p.detailed_balance_residual() <= DETAILED_BALANCE_TOL);
            let q = p.dissipation_form(&u, &z);
            let bound = p.dissipation_lower_bound(&u, &z);
            prop_assert!(bound >= 0.0);
            prop_assert!(q - bound >= -1e-12 * (1.0 + bound.abs()), "q={q} bound={bound}");
        }

        #[test]
        fn entropy_is_convex(
            u in proptest::collection::vec(0.001f64..50.0, 3),
            v in proptest::collection::vec(0.001f64..50.0, 3),
            lam in 0.0f64..1.0,
        ) {
            let p = SktParameters::new(vec![1.0; 3], vec![vec![1.0; 3]; 3], None, DiffusionMode::WithSelfDiffusion).unwrap();
            let mid: Vec<f64> = u.iter().zip(&v).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
            let lhs = p.entropy_density(&mid);
            let rhs = lam * p.entropy_density(&u) + (1.0 - lam) * p.entropy_density(&v);
            prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn entropy_variable_roundtrip(w in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let p = SktParameters::new(vec![1.0; 3], vec![vec![0.5, 1.0, 0.0], vec![0.5, 0.5, 2.0], vec![0.0, 0.25, 0.5]], None, DiffusionMode::WithSelfDiffusion).unwrap();
            let back = p.entropy_variable(&p.inverse_entropy_variable(&w)).unwrap();
            for (a, b) in w.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
            }
        }

        #[test]
        fn mobility_reproduces_quadratic_form(
            p in (1usize..5).prop_flat_map(reversible_params),
            seed in proptest::collection::vec((-3.0f64..3.0, -5.0f64..5.0), 4),
        ) {
            let n = p.n();
            let w: Vec<f64> = seed[..n].iter().map(|s| s.0).collect();
            let zp: Vec<f64> = seed[..n].iter().map(|s| s.1).collect();
            let u = p.inverse_entropy_variable(&w);
            // z = h''(u) z'
            let z: Vec<f64> = (0..n).map(|i| p.pi()[i] / u[i] * zp[i]).collect();
            let b = p.mobility_matrix(&w);
            let mut lhs = 0.0;
            for i in 0..n { for j in 0..n { lhs += z[i] * b[(i, j)] * z[j]; } }
            let rhs = p.dissipation_form(&u, &zp);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "lhs={lhs} rhs={rhs}");
        }
    }
}
