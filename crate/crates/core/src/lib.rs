//! Numerical laboratory for stochastic Shigesada–Kawasaki–Teramoto
//! cross-diffusion systems
//!
//! ```text
//! du_i = div( Σ_j A_ij(u) ∇u_j ) dt + Σ_j σ_ij(u) dW_j,   no-flux boundary,
//! ```
//!
//! integrated in entropy variables `w_i = π_i log u_i` through the monotone
//! regularization `v = u(w) + ε L*L w`, which keeps densities strictly
//! positive. Alongside the solver the crate provides estimators for the norms
//! and functionals that control such solutions (entropy balance, mixed
//! space-time norms, fractional time regularity, noise structure checks).

// Index loops mirror the component formulas; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod error;
pub mod estimators;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod operators;
pub mod regularization;
pub mod simulator;
pub mod spectral;

pub use error::{Result, SktError};
pub use grid::{FieldKind, Grid, GridField};
pub use model::{find_reversible_measure, DiffusionMode, SktParameters};
pub use noise::{NoiseFamily, NoiseModel};
pub use regularization::RegularizationOperator;
pub use simulator::{PathRecord, Scheme, SimConfig};
pub use spectral::SpectralBasis;
