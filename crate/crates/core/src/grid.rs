//! Uniform cell-centered grids on an interval or rectangle with no-flux
//! boundaries, and multi-species fields living on them.
//!
//! Cells are stored row-major with `x` fastest: cell `(i, j)` has flat index
//! `j * nx + i`. A field with `n` species stores species blocks contiguously.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SktError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
}

/// Interior face between two neighbouring cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub left: usize,
    pub right: usize,
    /// `1/h²` along the face normal.
    pub inv_h2: f64,
}

impl Grid {
    pub fn new_1d(nx: usize, lx: f64) -> Result<Self> {
        Self::new(1, nx, 1, lx, 1.0)
    }

    pub fn new_2d(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::new(2, nx, ny, lx, ly)
    }

    fn new(dim: usize, nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 2 || (dim == 2 && ny < 2) {
            return Err(SktError::InvalidParameters("grid needs at least 2 cells per axis".into()));
        }
        if !(lx > 0.0 && lx.is_finite() && ly > 0.0 && ly.is_finite()) {
            return Err(SktError::InvalidParameters("grid lengths must be positive".into()));
        }
        Ok(Self { dim, nx, ny, lx, ly })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell measure used as the quadrature weight (`h` in 1D, `hx·hy` in 2D).
    pub fn cell_volume(&self) -> f64 {
        if self.dim == 1 {
            self.hx()
        } else {
            self.hx() * self.hy()
        }
    }

    /// |Ω|.
    pub fn measure(&self) -> f64 {
        if self.dim == 1 {
            self.lx
        } else {
            self.lx * self.ly
        }
    }

    /// Smallest grid spacing.
    pub fn h_min(&self) -> f64 {
        if self.dim == 1 {
            self.hx()
        } else {
            self.hx().min(self.hy())
        }
    }

    /// Cell center of flat index `c`.
    pub fn center(&self, c: usize) -> (f64, f64) {
        let (i, j) = (c % self.nx, c / self.nx);
        ((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }

    /// All interior faces; boundary faces carry no flux and are omitted.
    pub fn faces(&self) -> Vec<Face> {
        let mut faces = Vec::with_capacity(self.dim * self.len());
        let ihx2 = 1.0 / (self.hx() * self.hx());
        for j in 0..self.ny {
            for i in 0..self.nx - 1 {
                let c = j * self.nx + i;
                faces.push(Face { left: c, right: c + 1, inv_h2: ihx2 });
            }
        }
        if self.dim == 2 {
            let ihy2 = 1.0 / (self.hy() * self.hy());
            for j in 0..self.ny - 1 {
                for i in 0..self.nx {
                    let c = j * self.nx + i;
                    faces.push(Face { left: c, right: c + self.nx, inv_h2: ihy2 });
                }
            }
        }
        faces
    }

    /// `Σ_c f_c · cell_volume`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        pairwise_sum(f) * self.cell_volume()
    }

    /// Discrete `L²` inner product.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        let prods: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
        self.integrate(&prods)
    }

    pub fn l2_norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    /// `∫ g(x) dx`-style sampling of a function at cell centers.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.len()).map(|c| {
            let (x, y) = self.center(c);
            f(x, y)
        }).collect()
    }

    /// Cell-centered gradient with mirrored ghost cells: centered differences
    /// in the interior, `(f_1 − f_0)/(2h)` at a wall. Returns one vector per axis.
    pub fn cell_gradient(&self, f: &[f64]) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|axis| {
                let (h, stride, n_axis) = if axis == 0 {
                    (self.hx(), 1, self.nx)
                } else {
                    (self.hy(), self.nx, self.ny)
                };
                (0..self.len())
                    .map(|c| {
                        let pos = if axis == 0 { c % self.nx } else { c / self.nx };
                        let prev = if pos == 0 { c } else { c - stride };
                        let next = if pos + 1 == n_axis { c } else { c + stride };
                        (f[next] - f[prev]) / (2.0 * h)
                    })
                    .collect()
            })
            .collect()
    }
}

/// What a field represents; densities must stay strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Density,
    EntropyVariable,
    Dual,
}

/// `n`-species grid function, species-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    kind: FieldKind,
    n_species: usize,
    n_cells: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(kind: FieldKind, n_species: usize, n_cells: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_species * n_cells {
            return Err(SktError::ShapeMismatch {
                expected: format!("{n_species}x{n_cells} values"),
                got: format!("{}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SktError::NonFinite("grid field"));
        }
        if kind == FieldKind::Density {
            if let Some(k) = values.iter().position(|&v| v <= 0.0) {
                return Err(SktError::NonPositiveDensity {
                    species: k / n_cells,
                    cell: k % n_cells,
                    value: values[k],
                });
            }
        }
        Ok(Self { kind, n_species, n_cells, values })
    }

    /// Builds a field from per-species vectors.
    pub fn from_species(kind: FieldKind, species: Vec<Vec<f64>>) -> Result<Self> {
        let n = species.len();
        let cells = species.first().map_or(0, Vec::len);
        if species.iter().any(|s| s.len() != cells) {
            return Err(SktError::ShapeMismatch {
                expected: format!("{cells} cells per species"),
                got: "ragged species".into(),
            });
        }
        Self::new(kind, n, cells, species.concat())
    }

    pub fn constant(kind: FieldKind, n_species: usize, n_cells: usize, value: f64) -> Result<Self> {
        Self::new(kind, n_species, n_cells, vec![value; n_species * n_cells])
    }

    pub(crate) fn from_raw(kind: FieldKind, n_species: usize, n_cells: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n_species * n_cells);
        Self { kind, n_species, n_cells, values }
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }
    pub fn n_species(&self) -> usize {
        self.n_species
    }
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn species(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cells..(i + 1) * self.n_cells]
    }
    /// Point value of all species at cell `c`.
    pub fn at(&self, c: usize) -> Vec<f64> {
        (0..self.n_species).map(|i| self.values[i * self.n_cells + c]).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Relabels the field; checks positivity when turning it into a density.
    pub fn with_kind(self, kind: FieldKind) -> Result<Self> {
        Self::new(kind, self.n_species, self.n_cells, self.values)
    }

    pub fn check_shape(&self, n_species: usize, n_cells: usize) -> Result<()> {
        if self.n_species != n_species || self.n_cells != n_cells {
            return Err(SktError::ShapeMismatch {
                expected: format!("{n_species}x{n_cells}"),
                got: format!("{}x{}", self.n_species, self.n_cells),
            });
        }
        Ok(())
    }
}

/// Discrete Neumann Laplacian: 3-/5-point stencil, boundary faces contribute 0.
pub fn neumann_laplacian(grid: &Grid, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != grid.len() {
        return Err(SktError::ShapeMismatch {
            expected: format!("{} cells", grid.len()),
            got: format!("{}", f.len()),
        });
    }
    let mut out = vec![0.0; f.len()];
    for face in grid.faces() {
        let flux = (f[face.right] - f[face.left]) * face.inv_h2;
        out[face.left] += flux;
        out[face.right] -= flux;
    }
    Ok(out)
}

/// Pairwise summation; the result is independent of thread scheduling and
/// more accurate than a left fold.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 16 {
        x.iter().sum()
    } else {
        let mid = x.len() / 2;
        pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplacian_of_constant_vanishes() {
        let g = Grid::new_2d(5, 4, 1.0, 2.0).unwrap();
        let lap = neumann_laplacian(&g, &vec![3.5; g.len()]).unwrap();
        assert!(lap.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn laplacian_two_cells() {
        let g = Grid::new_1d(2, 1.0).unwrap();
        assert_eq!(neumann_laplacian(&g, &[0.0, 1.0]).unwrap(), vec![4.0, -4.0]);
    }

    #[test]
    fn laplacian_conserves_mass() {
        let g = Grid::new_2d(7, 6, 1.3, 0.7).unwrap();
        let f: Vec<f64> = (0..g.len()).map(|c| ((c * 37) % 11) as f64 - 3.0).collect();
        let lap = neumann_laplacian(&g, &f).unwrap();
        assert!(g.integrate(&lap).abs() < 1e-12);
    }

    #[test]
    fn laplacian_size_mismatch() {
        let g = Grid::new_1d(4, 1.0).unwrap();
        assert!(neumann_laplacian(&g, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn density_must_be_positive() {
        let err = GridField::new(FieldKind::Density, 2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap_err();
        assert_eq!(err, SktError::NonPositiveDensity { species: 1, cell: 0, value: 0.0 });
        assert!(GridField::new(FieldKind::Dual, 2, 2, vec![1.0, 1.0, -1.0, 1.0]).is_ok());
        assert!(GridField::new(FieldKind::Dual, 1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn layout_is_x_fastest() {
        let g = Grid::new_2d(3, 2, 3.0, 2.0).unwrap();
        assert_eq!(g.center(1), (1.5, 0.5));
        assert_eq!(g.center(3), (0.5, 1.5));
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new_1d(1, 1.0).is_err());
        assert!(Grid::new_1d(4, 0.0).is_err());
        assert!(Grid::new_2d(4, 1, 1.0, 1.0).is_err());
    }
}
