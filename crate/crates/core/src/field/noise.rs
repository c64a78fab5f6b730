use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MorphoError, Result};
use crate::field::grid::{GridSpec, Transformation};

/// Default number of smoothing passes applied to the white noise.
pub const DEFAULT_SMOOTHING_PASSES: usize = 2;

/// Adds seeded smooth noise to the interior displacement of `t`.
///
/// Uniform white noise on interior nodes is smoothed by `passes` sweeps of the
/// nearest-neighbour averaging stencil (boundary held at zero), rescaled so its
/// largest component magnitude is 1, then multiplied by `amplitude`.
pub fn add_noise(t: &Transformation, amplitude: f64, seed: u64) -> Result<Transformation> {
    add_noise_with_passes(t, amplitude, seed, DEFAULT_SMOOTHING_PASSES)
}

pub fn add_noise_with_passes(
    t: &Transformation,
    amplitude: f64,
    seed: u64,
    passes: usize,
) -> Result<Transformation> {
    if !(amplitude.is_finite() && amplitude >= 0.0) {
        return Err(MorphoError::InvalidArgument(format!(
            "noise amplitude must be non-negative, got {amplitude}"
        )));
    }
    if amplitude == 0.0 {
        return Ok(t.clone());
    }
    let grid = *t.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise: Vec<Vec<f64>> = (0..grid.dim())
        .map(|_| {
            (0..grid.len())
                .map(|idx| {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    if grid.is_boundary(idx) {
                        0.0
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    for comp in &mut noise {
        for _ in 0..passes {
            *comp = smooth_once(comp, &grid);
        }
    }
    let peak = noise
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Ok(t.clone());
    }
    let scale = amplitude / peak;
    let comps = t
        .components()
        .iter()
        .zip(&noise)
        .map(|(tc, nc)| tc.iter().zip(nc).map(|(a, n)| a + scale * n).collect())
        .collect();
    Ok(Transformation::from_components_unchecked(grid, comps))
}

fn smooth_once(v: &[f64], grid: &GridSpec) -> Vec<f64> {
    let dim = grid.dim();
    let denom = (2 * dim + 1) as f64;
    (0..v.len())
        .map(|idx| {
            if grid.is_boundary(idx) {
                return 0.0;
            }
            let mut acc = v[idx];
            for axis in 0..dim {
                let s = grid.stride(axis);
                acc += v[idx + s] + v[idx - s];
            }
            acc / denom
        })
        .collect()
}
