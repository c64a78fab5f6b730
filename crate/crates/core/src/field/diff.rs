//! Finite-difference operators on grid fields.
//!
//! Interior nodes use second-order central differences, boundary nodes the
//! second-order one-sided three-point formulas. Both are exact on affine data.

use crate::error::Result;
use crate::field::grid::{GridSpec, ScalarField, Transformation, VectorField};

/// `∂v/∂x_axis` at every node.
pub fn partial(values: &[f64], grid: &GridSpec, axis: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    partial_into(values, grid, axis, &mut out);
    out
}

pub(crate) fn partial_into(values: &[f64], grid: &GridSpec, axis: usize, out: &mut [f64]) {
    let n = grid.shape()[axis];
    let s = grid.stride(axis);
    let inv2h = 0.5 / grid.spacing();
    if s == 1 {
        for (v, o) in values.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            o[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) * inv2h;
            for c in 1..n - 1 {
                o[c] = (v[c + 1] - v[c - 1]) * inv2h;
            }
            o[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) * inv2h;
        }
        return;
    }
    // storage splits into blocks of n·s nodes: position along the axis, then s inner nodes
    for base in (0..values.len()).step_by(n * s) {
        for c in 0..n {
            let row = base + c * s;
            for idx in row..row + s {
                out[idx] = if c == 0 {
                    (-3.0 * values[idx] + 4.0 * values[idx + s] - values[idx + 2 * s]) * inv2h
                } else if c + 1 == n {
                    (3.0 * values[idx] - 4.0 * values[idx - s] + values[idx - 2 * s]) * inv2h
                } else {
                    (values[idx + s] - values[idx - s]) * inv2h
                };
            }
        }
    }
}

/// Matrix of first partials of a coordinate map: `m[r][c] = ∂T_r/∂x_c`.
pub fn jacobian_matrix(map: &VectorField) -> Vec<Vec<Vec<f64>>> {
    let grid = map.grid();
    let d = grid.dim();
    (0..d)
        .map(|r| (0..d).map(|c| partial(map.component(r), grid, c)).collect())
        .collect()
}

/// Jacobian determinant `J(T)` at every node.
pub fn jacobian_det(t: &Transformation) -> ScalarField {
    jacobian_det_of(t.as_map())
}

/// Jacobian determinant of an arbitrary coordinate map (not necessarily identity on the boundary).
pub fn jacobian_det_of(map: &VectorField) -> ScalarField {
    let grid = *map.grid();
    let m = jacobian_matrix(map);
    let values = (0..grid.len())
        .map(|i| match grid.dim() {
            2 => m[0][0][i] * m[1][1][i] - m[0][1][i] * m[1][0][i],
            _ => {
                m[0][0][i] * (m[1][1][i] * m[2][2][i] - m[1][2][i] * m[2][1][i])
                    - m[0][1][i] * (m[1][0][i] * m[2][2][i] - m[1][2][i] * m[2][0][i])
                    + m[0][2][i] * (m[1][0][i] * m[2][1][i] - m[1][1][i] * m[2][0][i])
            }
        })
        .collect();
    ScalarField::from_vec_unchecked(grid, values)
}

/// Scalar curl `∂T₂/∂x − ∂T₁/∂y` of a 2D transformation.
pub fn curl2d(t: &Transformation) -> Result<ScalarField> {
    curl2d_of(t.as_map())
}

pub fn curl2d_of(map: &VectorField) -> Result<ScalarField> {
    let grid = map.grid();
    grid.ensure_dim("curl2d", 2)?;
    let d2dx = partial(map.component(1), grid, 0);
    let d1dy = partial(map.component(0), grid, 1);
    let values = d2dx.iter().zip(&d1dy).map(|(a, b)| a - b).collect();
    Ok(ScalarField::from_vec_unchecked(*grid, values))
}

/// Componentwise curl of a 3D transformation.
pub fn curl3d(t: &Transformation) -> Result<VectorField> {
    curl3d_of(t.as_map())
}

pub fn curl3d_of(map: &VectorField) -> Result<VectorField> {
    let grid = map.grid();
    grid.ensure_dim("curl3d", 3)?;
    let d = |r: usize, c: usize| partial(map.component(r), grid, c);
    let sub = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let comps = vec![
        sub(d(2, 1), d(1, 2)),
        sub(d(0, 2), d(2, 0)),
        sub(d(1, 0), d(0, 1)),
    ];
    Ok(VectorField::from_vec_unchecked(*grid, comps))
}

/// `Σ ∂T_i/∂x_i`.
pub fn divergence(t: &Transformation) -> ScalarField {
    divergence_of(t.as_map())
}

pub fn divergence_of(map: &VectorField) -> ScalarField {
    let grid = map.grid();
    let mut acc = vec![0.0; grid.len()];
    for c in 0..grid.dim() {
        for (a, d) in acc.iter_mut().zip(partial(map.component(c), grid, c)) {
            *a += d;
        }
    }
    ScalarField::from_vec_unchecked(*grid, acc)
}

/// 5-point (2D) / 7-point (3D) Laplacian at interior nodes; boundary entries are 0.
pub fn laplacian(values: &[f64], grid: &GridSpec) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let dim = grid.dim();
    for idx in grid.interior_indices() {
        let mut acc = -2.0 * dim as f64 * values[idx];
        for axis in 0..dim {
            let s = grid.stride(axis);
            acc += values[idx + s] + values[idx - s];
        }
        out[idx] = acc * inv_h2;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_map(grid: GridSpec, a: f64, b: f64, c: f64, d: f64) -> VectorField {
        let comp = |p: f64, q: f64| {
            (0..grid.len())
                .map(|i| {
                    let x = grid.position(i);
                    p * x[0] + q * x[1]
                })
                .collect()
        };
        VectorField::new(grid, vec![comp(a, b), comp(c, d)]).unwrap()
    }

    #[test]
    fn identity_axioms() {
        let g = GridSpec::new_2d(9, 7, 1.0).unwrap();
        let id = Transformation::identity(g);
        assert!(jacobian_det(&id).values().iter().all(|&v| v == 1.0));
        assert!(curl2d(&id).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(divergence(&id).values().iter().all(|&v| v == 2.0));

        let g3 = GridSpec::cube(5).unwrap();
        let id3 = Transformation::identity(g3);
        assert!(jacobian_det(&id3).values().iter().all(|&v| v == 1.0));
        let c = curl3d(&id3).unwrap();
        assert!(c.components().iter().flatten().all(|&v| v == 0.0));
        assert!(divergence(&id3).values().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn linear_map_is_differentiated_exactly() {
        let g = GridSpec::square(12).unwrap();
        let t = linear_map(g, 1.1, 0.2, -0.1, 0.9);
        let j = jacobian_det_of(&t);
        let curl = curl2d_of(&t).unwrap();
        let div = divergence_of(&t);
        for i in 0..g.len() {
            assert!((j.values()[i] - 1.01).abs() < 1e-13);
            assert!((curl.values()[i] + 0.3).abs() < 1e-13);
            assert!((div.values()[i] - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn rigid_rotation_displacement_has_curl_two_omega() {
        let g = GridSpec::cube(6).unwrap();
        let w = 0.01;
        let mut comps = Transformation::identity(g).components().to_vec();
        for i in 0..g.len() {
            let p = g.position(i);
            comps[0][i] += -w * p[1];
            comps[1][i] += w * p[0];
        }
        let t = VectorField::new(g, comps).unwrap();
        let c = curl3d_of(&t).unwrap();
        for i in 0..g.len() {
            assert!(c.component(0)[i].abs() < 1e-14);
            assert!(c.component(1)[i].abs() < 1e-14);
            assert!((c.component(2)[i] - 2.0 * w).abs() < 1e-14);
        }
        assert!(divergence_of(&t)
            .values()
            .iter()
            .all(|v| (v - 3.0).abs() < 1e-14));
    }

    #[test]
    fn dimension_errors() {
        let g2 = GridSpec::square(5).unwrap();
        let g3 = GridSpec::cube(5).unwrap();
        assert!(curl3d(&Transformation::identity(g2)).is_err());
        assert!(curl2d(&Transformation::identity(g3)).is_err());
    }

    #[test]
    fn laplacian_of_quadratic() {
        let g = GridSpec::new_2d(6, 6, 0.5).unwrap();
        let v: Vec<f64> = (0..g.len())
            .map(|i| {
                let p = g.position(i);
                p[0] * p[0] + 3.0 * p[1] * p[1]
            })
            .collect();
        let l = laplacian(&v, &g);
        for i in 0..g.len() {
            if !g.is_boundary(i) {
                assert!((l[i] - 8.0).abs() < 1e-12);
            }
        }
    }
}
