//! Analytic gradients against central finite differences.

use morphokit::field::{resample, ssd, GridSpec, Image, ScalarField, Transformation, VectorField};
use morphokit::registration::ssd_gradient;
use morphokit::varcon::{gradient_wrt_t, objective};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Smooth random interior displacement of size about `amp`, zero on the boundary.
fn random_map(grid: GridSpec, rng: &mut ChaCha8Rng, amp: f64) -> Transformation {
    let l = grid.extent(0);
    let comps = (0..2)
        .map(|_| {
            let (a, b, c): (f64, f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..PI));
            (0..grid.len())
                .map(|i| {
                    let p = grid.position(i);
                    let s = (PI * p[0] / l).sin() * (PI * p[1] / l).sin();
                    amp * s * (a + b * (2.0 * PI * p[0] / l + c).cos())
                })
                .collect()
        })
        .collect();
    Transformation::from_displacement(&VectorField::new(grid, comps).unwrap()).unwrap()
}

fn random_direction(grid: GridSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..2)
        .map(|_| {
            (0..grid.len())
                .map(|i| if grid.is_boundary(i) { 0.0 } else { rng.gen_range(-1.0..1.0) })
                .collect()
        })
        .collect()
}

fn shifted(t: &Transformation, dir: &[Vec<f64>], eps: f64) -> Transformation {
    let comps = t
        .components()
        .iter()
        .zip(dir)
        .map(|(c, d)| c.iter().zip(d).map(|(a, b)| a + eps * b).collect())
        .collect();
    Transformation::new(*t.grid(), comps).unwrap()
}

fn pair(a: &VectorField, dir: &[Vec<f64>]) -> f64 {
    a.components()
        .iter()
        .zip(dir)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

/// Smallest relative error over the step sweep.
fn best_relative_error(analytic: f64, f: impl Fn(f64) -> f64) -> f64 {
    [1e-4, 1e-5, 1e-6, 1e-7]
        .iter()
        .map(|&eps| {
            let fd = (f(eps) - f(-eps)) / (2.0 * eps);
            (fd - analytic).abs() / analytic.abs().max(1e-12)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn construction_gradient_matches_finite_differences() {
    let grid = GridSpec::square(9).unwrap();
    let l = grid.extent(0);
    for seed in 0..12 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_map(grid, &mut rng, 0.6);
        let (fa, fb, ga): (f64, f64, f64) = (rng.gen_range(0.1..0.3), rng.gen_range(0.5..2.0), rng.gen_range(-0.3..0.3));
        let f0 = ScalarField::from_fn(grid, |p| 1.0 + fa * (fb * PI * p[0] / l).sin() * (PI * p[1] / l).cos());
        let g0 = ScalarField::from_fn(grid, |p| ga * (PI * p[1] / l).sin());
        let dir = random_direction(grid, &mut rng);
        let g = gradient_wrt_t(&t, &f0, &g0).unwrap();
        let analytic = pair(&g, &dir);
        let err = best_relative_error(analytic, |eps| objective(&shifted(&t, &dir, eps), &f0, &g0).unwrap());
        assert!(err <= 1e-6, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn ssd_gradient_matches_finite_differences() {
    let grid = GridSpec::square(9).unwrap();
    for seed in 0..12 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let moving = Image::new(grid, (0..grid.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let fixed = Image::new(grid, (0..grid.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let phi = random_map(grid, &mut rng, 0.7);
        let dir = random_direction(grid, &mut rng);
        let g = ssd_gradient(&moving, &fixed, &phi).unwrap();
        let analytic = pair(&g, &dir);
        let err = best_relative_error(analytic, |eps| {
            ssd(&resample(&moving, &shifted(&phi, &dir, eps)).unwrap(), &fixed).unwrap()
        });
        assert!(err <= 1e-5, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn construction_gradient_is_mirror_symmetric() {
    // mirror x ↔ y: T'(x, y) = swap(T(y, x)); targets mirror with curl changing sign
    let grid = GridSpec::square(11).unwrap();
    let l = grid.extent(0);
    let n = grid.nx();
    let bump = |x: f64, y: f64| (PI * x / l).sin() * (PI * y / l).sin();
    let u = |x: f64, y: f64| 0.4 * bump(x, y) * (x + y) / l;
    let comps = vec![
        (0..grid.len()).map(|i| { let p = grid.position(i); p[0] + u(p[0], p[1]) }).collect(),
        (0..grid.len()).map(|i| { let p = grid.position(i); p[1] + u(p[1], p[0]) }).collect(),
    ];
    let t = Transformation::new(grid, comps).unwrap();
    let f0 = ScalarField::from_fn(grid, |p| 1.0 + 0.2 * bump(p[0], p[1]));
    let g0 = ScalarField::constant(grid, 0.0);
    let g = gradient_wrt_t(&t, &f0, &g0).unwrap();
    for j in 0..n {
        for i in 0..n {
            let a = grid.index(i, j, 0);
            let b = grid.index(j, i, 0);
            assert!((g.component(0)[a] - g.component(1)[b]).abs() < 1e-12);
        }
    }
}
