//! Bilinear / trilinear sampling, resampling, composition and SSD.
//!
//! Queries outside the domain are clamped to the nearest boundary value.

use rayon::prelude::*;

use crate::error::{MorphoError, Result};
use crate::field::grid::{GridSpec, Image, Transformation, VectorField};

/// Minimum number of nodes handed to one rayon task.
pub(crate) const PAR_MIN_LEN: usize = 2048;

/// Continuous node coordinate along one axis, snapped to the node when it is
/// within round-off of it and clamped to `[0, n-1]`.
#[inline]
fn axis_coord(x: f64, h: f64, n: usize) -> (usize, f64, bool) {
    let mut c = x / h;
    let r = c.round();
    if (c - r).abs() <= 4.0 * f64::EPSILON * r.abs().max(1.0) {
        c = r;
    }
    let hi = (n - 1) as f64;
    let clamped = !(0.0..=hi).contains(&c);
    let c = c.clamp(0.0, hi);
    let base = (c.floor() as usize).min(n - 2);
    (base, c - base as f64, clamped)
}

/// Interpolated value of `values` at physical point `p`.
#[inline]
pub fn sample(values: &[f64], grid: &GridSpec, p: [f64; 3]) -> f64 {
    let h = grid.spacing();
    let (i, fx, _) = axis_coord(p[0], h, grid.nx());
    let (j, fy, _) = axis_coord(p[1], h, grid.ny());
    let sx = grid.stride(0);
    let sy = grid.stride(1);
    if grid.dim() == 2 {
        let b = grid.index(i, j, 0);
        let v00 = values[b];
        let v10 = values[b + sx];
        let v01 = values[b + sy];
        let v11 = values[b + sx + sy];
        (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11)
    } else {
        let (k, fz, _) = axis_coord(p[2], h, grid.nz());
        let sz = grid.stride(2);
        let b = grid.index(i, j, k);
        let lerp2 = |o: usize| {
            let v00 = values[o];
            let v10 = values[o + sx];
            let v01 = values[o + sy];
            let v11 = values[o + sx + sy];
            (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11)
        };
        (1.0 - fz) * lerp2(b) + fz * lerp2(b + sz)
    }
}

/// Interpolated value and its exact spatial gradient at `p`.
///
/// The gradient is the derivative of the piecewise-linear interpolant, zero
/// along any axis where the query was clamped.
pub fn sample_with_gradient(values: &[f64], grid: &GridSpec, p: [f64; 3]) -> (f64, [f64; 3]) {
    let h = grid.spacing();
    let (i, fx, cx) = axis_coord(p[0], h, grid.nx());
    let (j, fy, cy) = axis_coord(p[1], h, grid.ny());
    let sx = grid.stride(0);
    let sy = grid.stride(1);
    let bilinear = |o: usize| {
        let v00 = values[o];
        let v10 = values[o + sx];
        let v01 = values[o + sy];
        let v11 = values[o + sx + sy];
        let val = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
        let dx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
        let dy = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10);
        (val, dx, dy)
    };
    let zero_if = |clamped: bool, d: f64| if clamped { 0.0 } else { d / h };
    if grid.dim() == 2 {
        let (v, dx, dy) = bilinear(grid.index(i, j, 0));
        (v, [zero_if(cx, dx), zero_if(cy, dy), 0.0])
    } else {
        let (k, fz, cz) = axis_coord(p[2], h, grid.nz());
        let b = grid.index(i, j, k);
        let (v0, dx0, dy0) = bilinear(b);
        let (v1, dx1, dy1) = bilinear(b + grid.stride(2));
        let v = (1.0 - fz) * v0 + fz * v1;
        let dx = (1.0 - fz) * dx0 + fz * dx1;
        let dy = (1.0 - fz) * dy0 + fz * dy1;
        let dz = v1 - v0;
        (v, [zero_if(cx, dx), zero_if(cy, dy), zero_if(cz, dz)])
    }
}

/// `I ∘ T`: the image sampled at the mapped positions, clipped to `[0, 1]`.
pub fn resample(image: &Image, t: &Transformation) -> Result<Image> {
    let grid = *image.grid();
    grid.ensure_same(t.grid())?;
    let src = image.values();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|idx| sample(src, &grid, t.map_node(idx)).clamp(0.0, 1.0))
        .collect();
    Ok(Image::from_clipped(grid, values))
}

/// `(T2 ∘ T1)(x) = T2(T1(x))`, interpolating `T2` at the positions `T1(x)`.
pub fn compose(t2: &Transformation, t1: &Transformation) -> Result<Transformation> {
    let grid = *t1.grid();
    grid.ensure_same(t2.grid())?;
    let comps = (0..grid.dim())
        .map(|c| {
            let src = t2.component(c);
            (0..grid.len())
                .into_par_iter()
                .with_min_len(PAR_MIN_LEN)
                .map(|idx| sample(src, &grid, t1.map_node(idx)))
                .collect()
        })
        .collect();
    Ok(Transformation::from_components_unchecked(grid, comps))
}

/// Grid inverse of `t` by the fixed-point iteration `v ← −u(y + v)`, where
/// `t = x + u`. Converges when `t` is a small perturbation of the identity
/// (`|∇u| < 1`); stops once no node moves by more than `1e-12·h` or after
/// 500 sweeps.
pub fn invert(t: &Transformation) -> Result<Transformation> {
    let grid = *t.grid();
    let dim = grid.dim();
    let disp = t.displacement();
    let u = disp.components();
    let tol = 1e-12 * grid.spacing();
    let mut v: Vec<Vec<f64>> = vec![vec![0.0; grid.len()]; dim];
    for _ in 0..500 {
        let next: Vec<Vec<f64>> = (0..dim)
            .map(|c| {
                (0..grid.len())
                    .into_par_iter()
                    .with_min_len(PAR_MIN_LEN)
                    .map(|idx| {
                        if grid.is_boundary(idx) {
                            return 0.0;
                        }
                        let mut p = grid.position(idx);
                        for (a, va) in v.iter().enumerate() {
                            p[a] += va[idx];
                        }
                        -sample(&u[c], &grid, p)
                    })
                    .collect()
            })
            .collect();
        let change = next
            .iter()
            .zip(&v)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0f64, f64::max);
        v = next;
        if change <= tol {
            break;
        }
    }
    Transformation::from_displacement(&VectorField::new(grid, v)?)
}

/// Riemann sum `Σ (A − B)² · h^d`, accumulated in storage order.
pub fn ssd(a: &Image, b: &Image) -> Result<f64> {
    a.grid().ensure_same(b.grid())?;
    Ok(ssd_values(a.values(), b.values(), a.grid()))
}

pub(crate) fn ssd_values(a: &[f64], b: &[f64], grid: &GridSpec) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc * grid.cell_volume()
}

/// Checks that weights are positive and sum to one.
pub(crate) fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(MorphoError::InvalidArgument(format!(
            "expected {n} weights, got {}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(MorphoError::InvalidArgument(
            "weights must be positive".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(MorphoError::InvalidArgument(format!(
            "weights must sum to 1, got {total}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::grid::VectorField;

    fn smooth_displacement(grid: GridSpec, amp: f64) -> Transformation {
        let l = grid.extent(0);
        let comps = (0..grid.dim())
            .map(|c| {
                (0..grid.len())
                    .map(|i| {
                        let p = grid.position(i);
                        let s = (std::f64::consts::PI * p[0] / l).sin()
                            * (std::f64::consts::PI * p[1] / l).sin();
                        amp * s * if c == 0 { 1.0 } else { -0.5 }
                    })
                    .collect()
            })
            .collect();
        Transformation::from_displacement(&VectorField::new(grid, comps).unwrap()).unwrap()
    }

    #[test]
    fn identity_resample_is_exact() {
        let g = GridSpec::new_2d(9, 6, 0.1).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let img = Image::new(g, vals).unwrap();
        let out = resample(&img, &Transformation::identity(g)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let g = GridSpec::square(16).unwrap();
        let img = Image::constant(g, 0.3);
        let out = resample(&img, &smooth_displacement(g, 2.0)).unwrap();
        assert!(out.values().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn compose_with_identity() {
        let g = GridSpec::square(12).unwrap();
        let t = smooth_displacement(g, 1.5);
        let id = Transformation::identity(g);
        // interpolating the identity is exact up to one rounding per node
        let left = compose(&id, &t).unwrap();
        assert!(left.max_node_distance(&t).unwrap() < 1e-13);
        assert_eq!(compose(&t, &id).unwrap().components(), t.components());
    }

    #[test]
    fn sampling_clamps_outside_domain() {
        let g = GridSpec::square(4).unwrap();
        let vals: Vec<f64> = (0..16).map(|i| i as f64).collect();
        assert_eq!(sample(&vals, &g, [-5.0, 0.0, 0.0]), 0.0);
        assert_eq!(sample(&vals, &g, [10.0, 10.0, 0.0]), 15.0);
        let (_, grad) = sample_with_gradient(&vals, &g, [-1.0, 1.5, 0.0]);
        assert_eq!(grad[0], 0.0);
        assert!((grad[1] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn ssd_small_cases() {
        let g = GridSpec::square(4).unwrap();
        let one = Image::constant(g, 1.0);
        let zero = Image::constant(g, 0.0);
        assert_eq!(ssd(&one, &zero).unwrap(), 16.0);
        assert_eq!(ssd(&one, &one).unwrap(), 0.0);
        let g2 = GridSpec::square(5).unwrap();
        assert!(ssd(&one, &Image::constant(g2, 1.0)).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(check_weights(&[0.5, 0.5], 2).is_ok());
        assert!(check_weights(&[0.5, 0.6], 2).is_err());
        assert!(check_weights(&[1.0, 0.0], 2).is_err());
        assert!(check_weights(&[1.0], 2).is_err());
    }
}
