use serde::{Deserialize, Serialize};

use crate::error::{MorphoError, Result};

/// A uniform node grid in 2 or 3 dimensions.
///
/// Node `(i, j, k)` sits at physical position `(i·h, j·h, k·h)`; values are stored
/// row-major with `x` fastest. In 2D `nz` is 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    nx: usize,
    ny: usize,
    nz: usize,
    spacing: f64,
}

impl GridSpec {
    pub fn new_2d(nx: usize, ny: usize, spacing: f64) -> Result<Self> {
        Self::validate(&[nx, ny], spacing)?;
        Ok(GridSpec {
            dim: 2,
            nx,
            ny,
            nz: 1,
            spacing,
        })
    }

    pub fn new_3d(nx: usize, ny: usize, nz: usize, spacing: f64) -> Result<Self> {
        Self::validate(&[nx, ny, nz], spacing)?;
        Ok(GridSpec {
            dim: 3,
            nx,
            ny,
            nz,
            spacing,
        })
    }

    /// Square 2D grid with unit spacing.
    pub fn square(n: usize) -> Result<Self> {
        Self::new_2d(n, n, 1.0)
    }

    /// Cubic 3D grid with unit spacing.
    pub fn cube(n: usize) -> Result<Self> {
        Self::new_3d(n, n, n, 1.0)
    }

    fn validate(counts: &[usize], spacing: f64) -> Result<()> {
        if let Some(n) = counts.iter().find(|&&n| n < 3) {
            return Err(MorphoError::InvalidGrid(format!(
                "every axis needs at least 3 nodes, got {n}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(MorphoError::InvalidGrid(format!(
                "spacing must be positive and finite, got {spacing}"
            )));
        }
        Ok(())
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

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Node counts along the active axes.
    pub fn shape(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stride of the flat index along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.nx,
            _ => self.nx * self.ny,
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.nx;
        let j = (idx / self.nx) % self.ny;
        let k = idx / (self.nx * self.ny);
        [i, j, k]
    }

    /// Physical position of a node.
    #[inline]
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.coords(idx);
        [
            i as f64 * self.spacing,
            j as f64 * self.spacing,
            k as f64 * self.spacing,
        ]
    }

    #[inline]
    pub fn is_boundary(&self, idx: usize) -> bool {
        let [i, j, k] = self.coords(idx);
        let on = |c: usize, n: usize| c == 0 || c + 1 == n;
        on(i, self.nx) || on(j, self.ny) || (self.dim == 3 && on(k, self.nz))
    }

    /// Indices of all interior nodes in storage order.
    pub fn interior_indices(&self) -> Vec<usize> {
        let (nx, ny) = (self.nx, self.ny);
        let (k0, k1) = if self.dim == 3 { (1, self.nz - 1) } else { (0, 1) };
        let mut out = Vec::with_capacity(self.interior_len());
        for k in k0..k1 {
            for j in 1..ny - 1 {
                let row = nx * (j + ny * k);
                out.extend(row + 1..row + nx - 1);
            }
        }
        out
    }

    /// Number of interior nodes.
    pub fn interior_len(&self) -> usize {
        let inner = |n: usize| n - 2;
        match self.dim {
            2 => inner(self.nx) * inner(self.ny),
            _ => inner(self.nx) * inner(self.ny) * inner(self.nz),
        }
    }

    /// Node-volume `h^d` used by every Riemann sum in the crate.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Physical extent of the domain along `axis`.
    pub fn extent(&self, axis: usize) -> f64 {
        (self.shape()[axis] - 1) as f64 * self.spacing
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(MorphoError::GridMismatch {
                left: self.describe(),
                right: other.describe(),
            })
        }
    }

    pub fn ensure_dim(&self, op: &'static str, expected: usize) -> Result<()> {
        if self.dim == expected {
            Ok(())
        } else {
            Err(MorphoError::DimensionError {
                op,
                expected,
                found: self.dim,
            })
        }
    }

    pub fn describe(&self) -> String {
        match self.dim {
            2 => format!("{}x{} (h={})", self.nx, self.ny, self.spacing),
            _ => format!("{}x{}x{} (h={})", self.nx, self.ny, self.nz, self.spacing),
        }
    }
}

/// One real value per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MorphoError::InvalidArgument(format!(
                "scalar field on {} needs {} values, got {}",
                grid.describe(),
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MorphoError::InvalidArgument(format!(
                "non-finite value at node {i}"
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        ScalarField {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Samples `f(x, y, z)` at every node position.
    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.position(i))).collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Node mean, summed sequentially in storage order.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Min and max over interior nodes only.
    pub fn interior_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for idx in self.grid.interior_indices() {
            let v = self.values[idx];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// `d` real components per node.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: GridSpec, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.is_empty() {
            return Err(MorphoError::EmptyInput("vector field components"));
        }
        for c in &components {
            if c.len() != grid.len() {
                return Err(MorphoError::InvalidArgument(format!(
                    "component length {} does not match grid {}",
                    c.len(),
                    grid.describe()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(MorphoError::InvalidArgument(
                    "vector field has non-finite values".into(),
                ));
            }
        }
        Ok(VectorField { grid, components })
    }

    pub(crate) fn from_vec_unchecked(grid: GridSpec, components: Vec<Vec<f64>>) -> Self {
        VectorField { grid, components }
    }

    pub fn zeros(grid: GridSpec, ncomp: usize) -> Self {
        VectorField {
            grid,
            components: vec![vec![0.0; grid.len()]; ncomp],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn ncomponents(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.components[c]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub(crate) fn components_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.components
    }

    pub fn into_components(self) -> Vec<Vec<f64>> {
        self.components
    }

    /// Euclidean inner product over all nodes and components.
    pub fn dot(&self, other: &VectorField) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    /// Largest per-node Euclidean norm.
    pub fn max_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                self.components
                    .iter()
                    .map(|c| c[i] * c[i])
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// A mapping `x ↦ T(x)` sampled at grid nodes.
///
/// Boundary nodes always map to themselves. `diffeomorphic` is set only by
/// producers that have verified a positive interior Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub struct Transformation {
    map: VectorField,
    diffeomorphic: bool,
}

/// Boundary values may deviate from identity by at most this many grid steps
/// before a constructor rejects the field.
const BOUNDARY_TOLERANCE: f64 = 1e-9;

impl Transformation {
    pub fn identity(grid: GridSpec) -> Self {
        let components = (0..grid.dim())
            .map(|c| (0..grid.len()).map(|i| grid.position(i)[c]).collect())
            .collect();
        Transformation {
            map: VectorField { grid, components },
            diffeomorphic: true,
        }
    }

    /// Builds a transformation from mapped coordinates, one component per axis.
    ///
    /// Boundary values within round-off of identity are snapped to the exact
    /// node coordinates; anything further off is rejected.
    pub fn new(grid: GridSpec, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim() {
            return Err(MorphoError::InvalidArgument(format!(
                "a {}D transformation needs {} components, got {}",
                grid.dim(),
                grid.dim(),
                components.len()
            )));
        }
        let field = VectorField::new(grid, components)?;
        let tol = BOUNDARY_TOLERANCE * grid.spacing().max(1.0);
        for idx in 0..grid.len() {
            if !grid.is_boundary(idx) {
                continue;
            }
            let p = grid.position(idx);
            for c in 0..grid.dim() {
                let dev = (field.components[c][idx] - p[c]).abs();
                if dev > tol {
                    return Err(MorphoError::InvalidArgument(format!(
                        "transformation is not the identity on the boundary (node {idx}, deviation {dev:.3e})"
                    )));
                }
            }
        }
        let mut t = Transformation {
            map: field,
            diffeomorphic: false,
        };
        t.reset_boundary();
        Ok(t)
    }

    /// `x + u(x)`, with the boundary forced to identity.
    pub fn from_displacement(disp: &VectorField) -> Result<Self> {
        let grid = *disp.grid();
        if disp.ncomponents() != grid.dim() {
            return Err(MorphoError::InvalidArgument(format!(
                "displacement needs {} components",
                grid.dim()
            )));
        }
        let mut t = Transformation::identity(grid);
        t.diffeomorphic = false;
        for (c, comp) in t.map.components.iter_mut().enumerate() {
            for (idx, v) in comp.iter_mut().enumerate() {
                if !grid.is_boundary(idx) {
                    *v += disp.component(c)[idx];
                }
            }
        }
        Ok(t)
    }

    /// Internal constructor: trusts the caller for finiteness and overwrites the boundary.
    pub(crate) fn from_components_unchecked(grid: GridSpec, components: Vec<Vec<f64>>) -> Self {
        let mut t = Transformation {
            map: VectorField { grid, components },
            diffeomorphic: false,
        };
        t.reset_boundary();
        t
    }

    pub(crate) fn reset_boundary(&mut self) {
        let grid = self.map.grid;
        for idx in 0..grid.len() {
            if grid.is_boundary(idx) {
                let p = grid.position(idx);
                for (c, comp) in self.map.components.iter_mut().enumerate() {
                    comp[idx] = p[c];
                }
            }
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.map.grid
    }

    pub fn dim(&self) -> usize {
        self.map.grid.dim()
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.map.components[c]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.map.components
    }

    /// The mapped coordinates as a plain vector field.
    pub fn as_map(&self) -> &VectorField {
        &self.map
    }

    pub fn into_map(self) -> VectorField {
        self.map
    }

    pub fn is_diffeomorphic(&self) -> bool {
        self.diffeomorphic
    }

    pub(crate) fn with_diffeomorphic(mut self, flag: bool) -> Self {
        self.diffeomorphic = flag;
        self
    }

    #[inline]
    pub fn map_node(&self, idx: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, comp) in self.map.components.iter().enumerate() {
            out[c] = comp[idx];
        }
        out
    }

    /// `u(x) = T(x) − x`.
    pub fn displacement(&self) -> VectorField {
        let grid = self.map.grid;
        let comps = self
            .map
            .components
            .iter()
            .enumerate()
            .map(|(c, comp)| {
                comp.iter()
                    .enumerate()
                    .map(|(i, v)| v - grid.position(i)[c])
                    .collect()
            })
            .collect();
        VectorField::from_vec_unchecked(grid, comps)
    }

    /// Largest `|T(x) − x|` over all nodes.
    pub fn max_displacement(&self) -> f64 {
        self.displacement().max_norm()
    }

    /// Largest node-wise Euclidean distance `|T(x) − S(x)|`.
    pub fn max_node_distance(&self, other: &Transformation) -> Result<f64> {
        let grid = self.grid();
        grid.ensure_same(other.grid())?;
        let d = (0..grid.len())
            .map(|i| {
                self.components()
                    .iter()
                    .zip(other.components())
                    .map(|(a, b)| (a[i] - b[i]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        Ok(d)
    }

    /// True when every boundary node maps exactly to itself.
    pub fn is_identity_on_boundary(&self) -> bool {
        let grid = self.grid();
        (0..grid.len()).filter(|&i| grid.is_boundary(i)).all(|i| {
            let p = grid.position(i);
            (0..self.dim()).all(|c| self.map.components[c][i] == p[c])
        })
    }
}

/// Intensity samples in `[0, 1]` on a uniform grid (2D image or 3D volume).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Image {
    /// Validates that every intensity is finite and within `[0, 1]`.
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MorphoError::InvalidArgument(format!(
                "image on {} needs {} values, got {}",
                grid.describe(),
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values
            .iter()
            .position(|v| !(v.is_finite() && (0.0..=1.0).contains(v)))
        {
            return Err(MorphoError::InvalidArgument(format!(
                "intensity {} at node {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(Image { grid, values })
    }

    /// Clips every value into `[0, 1]`; non-finite values become 0.
    pub fn from_clipped(grid: GridSpec, mut values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len(), "image length mismatch");
        for v in &mut values {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Image { grid, values }
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Image::from_clipped(grid, vec![value; grid.len()])
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Copies z-slice `k` of a volume into a 2D image.
    pub fn slice_z(&self, k: usize) -> Result<Image> {
        self.grid.ensure_dim("slice_z", 3)?;
        let plane = GridSpec::new_2d(self.grid.nx(), self.grid.ny(), self.grid.spacing())?;
        let start = k * plane.len();
        Ok(Image {
            grid: plane,
            values: self.values[start..start + plane.len()].to_vec(),
        })
    }

    /// Stacks congruent 2D slices into a volume.
    pub fn stack(slices: &[Image]) -> Result<Image> {
        let first = slices.first().ok_or(MorphoError::EmptyInput("slices"))?;
        first.grid.ensure_dim("stack", 2)?;
        let g = first.grid;
        let grid = GridSpec::new_3d(g.nx(), g.ny(), slices.len(), g.spacing())?;
        let mut values = Vec::with_capacity(grid.len());
        for s in slices {
            s.grid.ensure_same(&g)?;
            values.extend_from_slice(&s.values);
        }
        Ok(Image { grid, values })
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_grids_and_bad_spacing() {
        assert!(GridSpec::new_2d(2, 5, 1.0).is_err());
        assert!(GridSpec::new_3d(5, 5, 2, 1.0).is_err());
        assert!(GridSpec::new_2d(5, 5, 0.0).is_err());
        assert!(GridSpec::new_2d(5, 5, f64::NAN).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let g = GridSpec::new_3d(4, 5, 6, 0.5).unwrap();
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
        assert_eq!(g.interior_len(), 2 * 3 * 4);
    }

    #[test]
    fn identity_is_fixed_on_boundary() {
        let g = GridSpec::new_2d(7, 5, 0.25).unwrap();
        let id = Transformation::identity(g);
        assert!(id.is_identity_on_boundary());
        assert_eq!(id.max_displacement(), 0.0);
    }

    #[test]
    fn constructor_rejects_moved_boundary() {
        let g = GridSpec::square(5).unwrap();
        let mut comps = Transformation::identity(g).components().to_vec();
        comps[0][0] = 0.3;
        assert!(Transformation::new(g, comps.clone()).is_err());
        comps[0][0] = 1e-12;
        let t = Transformation::new(g, comps).unwrap();
        assert!(t.is_identity_on_boundary());
    }

    #[test]
    fn image_range_is_enforced() {
        let g = GridSpec::square(3).unwrap();
        assert!(Image::new(g, vec![1.5; 9]).is_err());
        let img = Image::from_clipped(g, vec![1.5; 9]);
        assert!(img.values().iter().all(|&v| v == 1.0));
    }
}
