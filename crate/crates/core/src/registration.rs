//! Non-rigid registration by descent on a Poisson control: small
//! displacements `u` with `Δu = F` are composed onto the running map,
//! `φ ← φ ∘ (x + u)`, while the SSD decreases and the Jacobian stays positive.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MorphoError, Result};
use crate::field::interp::{ssd_values, PAR_MIN_LEN};
use crate::field::{
    compose, jacobian_det, partial, resample, sample, sample_with_gradient, GridSpec, Image,
    Transformation, VectorField,
};
use crate::poisson::{PoissonOptions, PoissonSolver};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationOptions {
    /// Maximum number of compositions.
    pub outer_max: usize,
    /// Control-descent steps taken before each composition.
    pub inner_steps: usize,
    /// Initial largest node movement per step, in units of `h`.
    pub step: f64,
    /// Relative SSD decrease below which a step counts as stalled.
    pub ssd_tol: f64,
    pub jmin_guard: f64,
    /// Number of resolution levels; 1 registers at full resolution only.
    pub multires_levels: usize,
    pub smoothing: Smoothing,
    pub poisson: PoissonOptions,
}

/// How the SSD gradient is turned into a displacement step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Descent on the control `F` of `Δu = F`: `u ∝ −Δ⁻²g` (two solves).
    #[default]
    Control,
    /// One solve: `u ∝ (−Δ)⁻¹(−g)`, a Sobolev gradient of the displacement.
    Displacement,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        RegistrationOptions {
            outer_max: 2000,
            inner_steps: 1,
            step: 0.5,
            ssd_tol: 1e-5,
            jmin_guard: 0.1,
            multires_levels: 1,
            smoothing: Smoothing::default(),
            poisson: PoissonOptions::default(),
        }
    }
}

impl RegistrationOptions {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 || self.multires_levels == 0 {
            return Err(MorphoError::InvalidArgument(
                "inner_steps and multires_levels must be at least 1".into(),
            ));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(MorphoError::InvalidArgument(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if !(self.ssd_tol.is_finite() && self.ssd_tol >= 0.0) {
            return Err(MorphoError::InvalidArgument("ssd_tol must be non-negative".into()));
        }
        if !(self.jmin_guard.is_finite() && self.jmin_guard >= 0.0) {
            return Err(MorphoError::InvalidArgument("jmin_guard must be non-negative".into()));
        }
        self.poisson.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationTermination {
    Converged,
    MaxSteps,
    StepExhausted,
    /// Both images are constant; nothing to align.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult {
    /// `I_moving ∘ phi ≈ I_fixed`.
    pub phi: Transformation,
    /// SSD at the start of the finest level (after any coarse-level
    /// initialization) and after every accepted step there.
    pub ssd_trace: Vec<f64>,
    pub steps_taken: usize,
    pub min_j: f64,
    pub termination: RegistrationTermination,
}

/// Serializable summary of a [`RegistrationResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub ssd_trace: Vec<f64>,
    pub steps_taken: usize,
    #[serde(rename = "min_J")]
    pub min_j: f64,
    pub termination: RegistrationTermination,
}

impl RegistrationResult {
    pub fn report(&self) -> RegistrationReport {
        RegistrationReport {
            ssd_trace: self.ssd_trace.clone(),
            steps_taken: self.steps_taken,
            min_j: self.min_j,
            termination: self.termination,
        }
    }

    pub fn final_ssd(&self) -> f64 {
        *self.ssd_trace.last().expect("trace holds the initial SSD")
    }
}

/// Gradient of `ssd(I_moving ∘ phi, I_fixed)` with respect to the node values
/// of `phi`: `2(I_moving(φ) − I_fixed)·∇I_moving(φ)·h^d`, where `∇I_moving` is
/// the derivative of the interpolant itself. Zero on boundary nodes.
///
/// Unlike [`resample`], no clipping is applied, matching the objective only
/// while `I_moving ∘ phi` stays in `[0, 1]` (always true for interpolated images).
pub fn ssd_gradient(moving: &Image, fixed: &Image, phi: &Transformation) -> Result<VectorField> {
    let grid = *moving.grid();
    grid.ensure_same(fixed.grid())?;
    grid.ensure_same(phi.grid())?;
    let w = 2.0 * grid.cell_volume();
    let m = moving.values();
    let f = fixed.values();
    let per_node: Vec<[f64; 3]> = (0..grid.len())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|idx| {
            if grid.is_boundary(idx) {
                return [0.0; 3];
            }
            let (v, g) = sample_with_gradient(m, &grid, phi.map_node(idx));
            let r = w * (v - f[idx]);
            [r * g[0], r * g[1], r * g[2]]
        })
        .collect();
    let comps = (0..grid.dim())
        .map(|c| per_node.iter().map(|g| g[c]).collect())
        .collect();
    VectorField::new(grid, comps)
}

/// Search direction for the displacement `u` applied before `phi`:
/// `2(W(x+u) − I_fixed)·∇W(x+u)` with `W = I_moving ∘ phi` and `∇W` taken by
/// central differences and interpolated.
fn displacement_gradient(
    warped: &Image,
    warped_grad: &[Vec<f64>],
    fixed: &Image,
    u: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let grid = *warped.grid();
    let dim = grid.dim();
    let per_node: Vec<[f64; 3]> = (0..grid.len())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|idx| {
            if grid.is_boundary(idx) {
                return [0.0; 3];
            }
            let mut p = grid.position(idx);
            for c in 0..dim {
                p[c] += u[c][idx];
            }
            let r = 2.0 * (sample(warped.values(), &grid, p) - fixed.values()[idx]);
            let mut g = [0.0; 3];
            for c in 0..dim {
                g[c] = r * sample(&warped_grad[c], &grid, p);
            }
            g
        })
        .collect();
    (0..dim)
        .map(|c| per_node.iter().map(|g| g[c]).collect())
        .collect()
}

fn interior_min_j(t: &Transformation) -> f64 {
    jacobian_det(t).interior_range().0
}

fn displacement_map(grid: GridSpec, u: &[Vec<f64>]) -> Transformation {
    let comps = (0..grid.dim())
        .map(|c| {
            u[c].iter()
                .enumerate()
                .map(|(idx, v)| grid.position(idx)[c] + v)
                .collect()
        })
        .collect();
    Transformation::from_components_unchecked(grid, comps)
}

const STALL_WINDOW: usize = 5;
const MAX_HALVINGS: usize = 20;
const STEP_GROWTH: f64 = 1.5;
const STEP_CAP: f64 = 1.0;

/// Additive step along the exact derivative of the interpolated SSD in `phi`,
/// smoothed like the main direction. Used once the composed direction stops
/// descending, which happens when the resampled-image gradient drifts away
/// from the derivative of `moving ∘ phi`.
fn exact_fallback(
    moving: &Image,
    fixed: &Image,
    phi: &Transformation,
    current: f64,
    solver: &PoissonSolver,
    opts: &RegistrationOptions,
) -> Result<Option<(Transformation, Image, f64)>> {
    let grid = *moving.grid();
    let g = ssd_gradient(moving, fixed, phi)?;
    let mut dir = Vec::with_capacity(grid.dim());
    for gc in g.components() {
        let gf = solver.solve_zero_boundary(gc)?;
        dir.push(match opts.smoothing {
            Smoothing::Control => solver.solve_zero_boundary(&gf)?,
            Smoothing::Displacement => gf.iter().map(|v| -v).collect(),
        });
    }
    let reach = dir.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if reach == 0.0 || !reach.is_finite() {
        return Ok(None);
    }
    let mut scale = opts.step;
    for _ in 0..=MAX_HALVINGS {
        let s = scale * grid.spacing() / reach;
        let comps = phi
            .components()
            .iter()
            .zip(&dir)
            .map(|(pc, dc)| pc.iter().zip(dc).map(|(a, d)| a - s * d).collect())
            .collect();
        let trial = Transformation::from_components_unchecked(grid, comps);
        let img = resample(moving, &trial)?;
        let e = ssd_values(img.values(), fixed.values(), &grid);
        if e < current && interior_min_j(&trial) > opts.jmin_guard {
            return Ok(Some((trial, img, e)));
        }
        scale *= 0.5;
    }
    Ok(None)
}

fn is_flat(img: &Image) -> bool {
    let v = img.values();
    v.iter().all(|x| *x == v[0])
}

/// Registers `moving` onto `fixed`, returning `phi` with `moving ∘ phi ≈ fixed`.
pub fn register(moving: &Image, fixed: &Image, opts: &RegistrationOptions) -> Result<RegistrationResult> {
    opts.validate()?;
    let grid = *moving.grid();
    grid.ensure_same(fixed.grid())?;
    if grid.dim() != 2 && grid.dim() != 3 {
        return Err(MorphoError::DimensionError {
            op: "register",
            expected: 2,
            found: grid.dim(),
        });
    }
    if is_flat(moving) && is_flat(fixed) {
        let ssd0 = ssd_values(moving.values(), fixed.values(), &grid);
        return Ok(RegistrationResult {
            phi: Transformation::identity(grid).with_diffeomorphic(true),
            ssd_trace: vec![ssd0],
            steps_taken: 0,
            min_j: 1.0,
            termination: RegistrationTermination::Degenerate,
        });
    }
    let mut init = Transformation::identity(grid);
    let levels = pyramid_depth(&grid, opts.multires_levels);
    if levels > 1 {
        let coarse_m = downsample(moving, levels - 1)?;
        let coarse_f = downsample(fixed, levels - 1)?;
        let sub = RegistrationOptions {
            multires_levels: levels - 1,
            ..*opts
        };
        let coarse = register(&coarse_m, &coarse_f, &sub)?;
        let up = upsample_map(&coarse.phi, &grid)?;
        if interior_min_j(&up) > opts.jmin_guard {
            init = up;
        }
    }
    register_from(moving, fixed, init, opts)
}

/// Number of usable pyramid levels: each halving must leave at least 9 nodes
/// per axis.
fn pyramid_depth(grid: &GridSpec, wanted: usize) -> usize {
    let mut shape = grid.shape();
    let mut depth = 1;
    while depth < wanted {
        let next: Vec<usize> = shape[..grid.dim()].iter().map(|n| (n - 1) / 2 + 1).collect();
        if next.iter().any(|n| *n < 9) {
            break;
        }
        for (s, n) in shape.iter_mut().zip(next) {
            *s = n;
        }
        depth += 1;
    }
    depth
}

fn coarse_grid(grid: &GridSpec) -> Result<GridSpec> {
    let half = |n: usize| (n - 1) / 2 + 1;
    let h = 2.0 * grid.spacing();
    if grid.dim() == 2 {
        GridSpec::new_2d(half(grid.nx()), half(grid.ny()), h)
    } else {
        GridSpec::new_3d(half(grid.nx()), half(grid.ny()), half(grid.nz()), h)
    }
}

/// Averages with the axis neighbours, then keeps every other node.
fn downsample(img: &Image, times: usize) -> Result<Image> {
    let mut cur = img.clone();
    for _ in 0..times {
        let g = *cur.grid();
        let v = cur.values();
        let blurred: Vec<f64> = (0..g.len())
            .map(|idx| {
                if g.is_boundary(idx) {
                    return v[idx];
                }
                let mut acc = 2.0 * v[idx];
                let mut wsum = 2.0;
                for axis in 0..g.dim() {
                    let s = g.stride(axis);
                    acc += 0.5 * (v[idx + s] + v[idx - s]);
                    wsum += 1.0;
                }
                acc / wsum
            })
            .collect();
        let cg = coarse_grid(&g)?;
        let values = (0..cg.len())
            .map(|idx| {
                let [i, j, k] = cg.coords(idx);
                blurred[g.index(2 * i, 2 * j, 2 * k)]
            })
            .collect();
        cur = Image::from_clipped(cg, values);
    }
    Ok(cur)
}

/// Interpolates the displacement of a coarse map onto `fine`.
fn upsample_map(coarse: &Transformation, fine: &GridSpec) -> Result<Transformation> {
    let disp = coarse.displacement();
    let cg = *coarse.grid();
    let comps = (0..fine.dim())
        .map(|c| {
            let src = disp.component(c);
            (0..fine.len())
                .map(|idx| {
                    let p = fine.position(idx);
                    p[c] + sample(src, &cg, p)
                })
                .collect()
        })
        .collect();
    Ok(Transformation::from_components_unchecked(*fine, comps))
}

fn register_from(
    moving: &Image,
    fixed: &Image,
    mut phi: Transformation,
    opts: &RegistrationOptions,
) -> Result<RegistrationResult> {
    let grid = *moving.grid();
    let h = grid.spacing();
    let dim = grid.dim();
    let solver = PoissonSolver::new(grid, opts.poisson)?;
    let mut warped = resample(moving, &phi)?;
    let mut current = ssd_values(warped.values(), fixed.values(), &grid);
    let mut trace = vec![current];
    let mut accepted = 0usize;
    let mut small_run = 0usize;
    let mut scale = opts.step;
    let termination = loop {
        if current == 0.0 {
            break RegistrationTermination::Converged;
        }
        if accepted >= opts.outer_max {
            break RegistrationTermination::MaxSteps;
        }
        let warped_grad: Vec<Vec<f64>> = (0..dim).map(|a| partial(warped.values(), &grid, a)).collect();
        let mut u = vec![vec![0.0; grid.len()]; dim];
        let mut candidate: Option<(Transformation, Image, f64)> = None;
        let mut exhausted = false;
        for _ in 0..opts.inner_steps {
            let g = displacement_gradient(&warped, &warped_grad, fixed, &u);
            // u-direction −Δ⁻²g: the control gradient Δ⁻¹g pushed through one more solve
            let mut dir = Vec::with_capacity(dim);
            for gc in &g {
                let gf = solver.solve_zero_boundary(gc)?;
                dir.push(match opts.smoothing {
                    Smoothing::Control => solver.solve_zero_boundary(&gf)?,
                    // Δ⁻¹ is negative definite, so −Δ⁻¹g is the descent side
                    Smoothing::Displacement => gf.iter().map(|v| -v).collect(),
                });
            }
            let reach = dir
                .iter()
                .flatten()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if reach == 0.0 || !reach.is_finite() {
                break;
            }
            let base = candidate.as_ref().map_or(current, |c| c.2);
            let mut found = None;
            for _ in 0..=MAX_HALVINGS {
                let s = scale * h / reach;
                let trial_u: Vec<Vec<f64>> = u
                    .iter()
                    .zip(&dir)
                    .map(|(uc, dc)| uc.iter().zip(dc).map(|(a, d)| a - s * d).collect())
                    .collect();
                let trial_phi = compose(&phi, &displacement_map(grid, &trial_u))?;
                let trial_img = resample(moving, &trial_phi)?;
                let e = ssd_values(trial_img.values(), fixed.values(), &grid);
                if e < base && interior_min_j(&trial_phi) > opts.jmin_guard {
                    found = Some((trial_u, trial_phi, trial_img, e));
                    break;
                }
                scale *= 0.5;
            }
            match found {
                Some((nu, p, img, e)) => {
                    u = nu;
                    candidate = Some((p, img, e));
                    scale = (scale * STEP_GROWTH).min(STEP_CAP);
                }
                None => {
                    exhausted = true;
                    break;
                }
            }
        }
        if candidate.is_none() && exhausted {
            candidate = exact_fallback(moving, fixed, &phi, current, &solver, opts)?;
            if candidate.is_some() {
                scale = opts.step;
            }
        }
        let Some((new_phi, new_img, e)) = candidate else {
            break if exhausted {
                RegistrationTermination::StepExhausted
            } else {
                RegistrationTermination::Converged
            };
        };
        let rel = (current - e) / current;
        phi = new_phi;
        warped = new_img;
        current = e;
        trace.push(current);
        accepted += 1;
        if rel < opts.ssd_tol {
            small_run += 1;
            if small_run >= STALL_WINDOW {
                break RegistrationTermination::Converged;
            }
        } else {
            small_run = 0;
        }
    };
    let min_j = interior_min_j(&phi);
    Ok(RegistrationResult {
        phi: phi.with_diffeomorphic(true),
        ssd_trace: trace,
        steps_taken: accepted,
        min_j,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(grid: GridSpec, cx: f64) -> Image {
        let l = grid.extent(0);
        Image::new(
            grid,
            (0..grid.len())
                .map(|i| {
                    let p = grid.position(i);
                    let d2 = (p[0] - cx).powi(2) + (p[1] - 0.5 * l).powi(2);
                    0.1 + 0.8 * (-d2 / (0.02 * l * l)).exp()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn self_registration_is_fixed_point() {
        let g = GridSpec::square(24).unwrap();
        let img = bump(g, 11.0);
        let r = register(&img, &img, &RegistrationOptions::default()).unwrap();
        assert_eq!(r.steps_taken, 0);
        assert_eq!(r.phi.components(), Transformation::identity(g).components());
    }

    #[test]
    fn constant_images_return_identity() {
        let g = GridSpec::square(16).unwrap();
        let a = Image::constant(g, 0.2);
        let b = bump(g, 8.0);
        let r = register(&a, &Image::constant(g, 0.7), &RegistrationOptions::default()).unwrap();
        assert_eq!(r.termination, RegistrationTermination::Degenerate);
        let r = register(&a, &b, &RegistrationOptions::default()).unwrap();
        assert_eq!(r.steps_taken, 0);
        assert_eq!(r.phi.components(), Transformation::identity(g).components());
        let grad = ssd_gradient(&a, &b, &Transformation::identity(g)).unwrap();
        assert_eq!(grad.max_norm(), 0.0);
    }

    #[test]
    fn shifted_bump_is_aligned() {
        let g = GridSpec::square(32).unwrap();
        let fixed = bump(g, 15.5);
        let moving = bump(g, 17.0);
        let r = register(&moving, &fixed, &RegistrationOptions::default()).unwrap();
        assert!(r.final_ssd() < 0.1 * r.ssd_trace[0]);
        assert!(r.ssd_trace.windows(2).all(|w| w[1] < w[0]));
        assert!(r.min_j > 0.1);
        assert!(r.phi.is_identity_on_boundary());
    }

    #[test]
    fn multires_runs() {
        let g = GridSpec::square(33).unwrap();
        let fixed = bump(g, 15.0);
        let moving = bump(g, 17.0);
        let opts = RegistrationOptions {
            multires_levels: 2,
            ..Default::default()
        };
        let r = register(&moving, &fixed, &opts).unwrap();
        // the trace starts after the coarse level, so compare with the raw SSD
        let raw = crate::field::ssd(&moving, &fixed).unwrap();
        assert!(r.final_ssd() < 0.1 * raw);
    }
}
