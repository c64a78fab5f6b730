//! Construction of a 2D transformation from a prescribed Jacobian determinant
//! and curl, by descent on the Poisson control `F` with `ΔT = F`, and
//! averaging of transformations built on top of it.

use serde::{Deserialize, Serialize};

use crate::error::{MorphoError, Result};
use crate::field::interp::check_weights;
use crate::field::{curl2d, jacobian_det, partial, GridSpec, ScalarField, Transformation};
use crate::poisson::{solve_vector_with, ControlField, PoissonOptions, PoissonSolver};

/// Targets and starting point for one construction.
#[derive(Clone, Debug)]
pub struct VarConProblem {
    f0: ScalarField,
    g0: ScalarField,
    t_init: Transformation,
}

impl VarConProblem {
    /// Starts from the identity.
    pub fn new(f0: ScalarField, g0: ScalarField) -> Result<Self> {
        let id = Transformation::identity(*f0.grid());
        Self::with_init(f0, g0, id)
    }

    pub fn with_init(f0: ScalarField, g0: ScalarField, t_init: Transformation) -> Result<Self> {
        let grid = *f0.grid();
        grid.ensure_dim("varcon", 2)?;
        grid.ensure_same(g0.grid())?;
        grid.ensure_same(t_init.grid())?;
        check_positive(&f0)?;
        Ok(VarConProblem { f0, g0, t_init })
    }

    pub fn grid(&self) -> &GridSpec {
        self.f0.grid()
    }

    pub fn f0(&self) -> &ScalarField {
        &self.f0
    }

    pub fn g0(&self) -> &ScalarField {
        &self.g0
    }

    pub fn t_init(&self) -> &Transformation {
        &self.t_init
    }
}

fn check_positive(f: &ScalarField) -> Result<()> {
    match f.values().iter().position(|v| !(*v > 0.0)) {
        Some(index) => Err(MorphoError::NonPositiveTarget {
            index,
            value: f.values()[index],
        }),
        None => Ok(()),
    }
}

/// Step control for [`solve`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescentOptions {
    /// Initial step, as the largest node movement it may cause in units of `h`.
    pub step: f64,
    pub max_steps: usize,
    /// Stop once the relative objective decrease stays below this for
    /// [`STALL_WINDOW`] accepted steps in a row.
    pub obj_tol: f64,
    /// Trial maps whose interior Jacobian drops to this value are rejected.
    pub jmin_guard: f64,
    /// Also stop once the objective falls to this fraction of its initial value.
    pub target_ratio: f64,
    pub direction: DescentDirection,
    pub poisson: PoissonOptions,
}

/// How successive control gradients are turned into search directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescentDirection {
    /// `−G_F` at every step.
    Steepest,
    /// Polak–Ribière conjugate directions built from `G_F`, restarted whenever
    /// the result is not a descent direction or a step is rejected.
    ConjugateGradient,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions {
            step: 0.5,
            max_steps: 10_000,
            obj_tol: 1e-8,
            jmin_guard: 0.05,
            target_ratio: 1e-6,
            direction: DescentDirection::ConjugateGradient,
            poisson: PoissonOptions::default(),
        }
    }
}

impl DescentOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(MorphoError::InvalidArgument(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if !(self.jmin_guard.is_finite() && self.jmin_guard >= 0.0) {
            return Err(MorphoError::InvalidArgument(format!(
                "jmin_guard must be non-negative, got {}",
                self.jmin_guard
            )));
        }
        if !(self.target_ratio.is_finite() && self.target_ratio >= 0.0) {
            return Err(MorphoError::InvalidArgument(format!(
                "target_ratio must be non-negative, got {}",
                self.target_ratio
            )));
        }
        if !(self.obj_tol.is_finite() && self.obj_tol >= 0.0) {
            return Err(MorphoError::InvalidArgument(format!(
                "obj_tol must be non-negative, got {}",
                self.obj_tol
            )));
        }
        self.poisson.validate()
    }
}

/// Number of consecutive small decreases that counts as convergence.
pub const STALL_WINDOW: usize = 5;

/// Halvings tried within one step before giving up.
pub const MAX_HALVINGS: usize = 20;

const STEP_GROWTH: f64 = 1.5;
const STEP_CAP: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxSteps,
    GuardHalt,
}

/// Diagnostics of one descent run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub steps_taken: usize,
    pub rejected_steps: usize,
    #[serde(rename = "min_J")]
    pub min_j: f64,
    #[serde(rename = "max_J")]
    pub max_j: f64,
    /// `(‖J(T)−f0‖², ‖curl(T)−g0‖²)` as interior Riemann sums.
    pub final_residuals: (f64, f64),
    pub termination: Termination,
}

/// Divides by the node mean so the result averages to exactly one.
pub fn normalize_f0(f0_raw: &ScalarField) -> Result<ScalarField> {
    check_positive(f0_raw)?;
    let mean = f0_raw.mean();
    let mut values: Vec<f64> = f0_raw.values().iter().map(|v| v / mean).collect();
    // absorb the last rounding error into the largest entry
    let n = values.len() as f64;
    let drift = values.iter().sum::<f64>() / n - 1.0;
    if drift != 0.0 {
        let (imax, _) = values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |m, (i, v)| if *v > m.1 { (i, *v) } else { m });
        values[imax] -= drift * n;
    }
    ScalarField::new(*f0_raw.grid(), values)
}

fn check_targets(t: &Transformation, f0: &ScalarField, g0: &ScalarField) -> Result<()> {
    let g = t.grid();
    g.ensure_dim("varcon", 2)?;
    g.ensure_same(f0.grid())?;
    g.ensure_same(g0.grid())
}

/// Squared residual sums over interior nodes, each scaled by `h²`.
fn residual_sums(t: &Transformation, f0: &ScalarField, g0: &ScalarField) -> Result<(f64, f64)> {
    check_targets(t, f0, g0)?;
    let grid = t.grid();
    let j = jacobian_det(t);
    let c = curl2d(t)?;
    let (mut rj, mut rc) = (0.0, 0.0);
    for idx in grid.interior_indices() {
        let dj = j.values()[idx] - f0.values()[idx];
        let dc = c.values()[idx] - g0.values()[idx];
        rj += dj * dj;
        rc += dc * dc;
    }
    let w = grid.cell_volume();
    Ok((rj * w, rc * w))
}

/// `Σ_interior [(J(T) − f0)² + (curl T − g0)²]·h²`.
pub fn objective(t: &Transformation, f0: &ScalarField, g0: &ScalarField) -> Result<f64> {
    let (a, b) = residual_sums(t, f0, g0)?;
    Ok(a + b)
}

/// Exact gradient of [`objective`] with respect to the node values of `T`.
///
/// Boundary nodes are not free, so their entries are zero.
pub fn gradient_wrt_t(
    t: &Transformation,
    f0: &ScalarField,
    g0: &ScalarField,
) -> Result<crate::field::VectorField> {
    check_targets(t, f0, g0)?;
    let grid = *t.grid();
    let n = grid.len();
    let h = grid.spacing();
    let w = 2.0 * grid.cell_volume();
    let t1 = t.component(0);
    let t2 = t.component(1);
    let a = partial(t1, &grid, 0);
    let b = partial(t1, &grid, 1);
    let e = partial(t2, &grid, 0);
    let d = partial(t2, &grid, 1);
    // sensitivities of the objective to the four stencil outputs at each node
    let mut sa = vec![0.0; n];
    let mut sb = vec![0.0; n];
    let mut se = vec![0.0; n];
    let mut sd = vec![0.0; n];
    let interior = grid.interior_indices();
    for &q in &interior {
        let rj = w * (a[q] * d[q] - b[q] * e[q] - f0.values()[q]);
        let rc = w * (e[q] - b[q] - g0.values()[q]);
        sa[q] = rj * d[q];
        sb[q] = -rj * e[q] - rc;
        se[q] = -rj * b[q] + rc;
        sd[q] = rj * a[q];
    }
    let sx = grid.stride(0);
    let sy = grid.stride(1);
    let inv = 1.0 / (2.0 * h);
    let mut g1 = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    for &p in &interior {
        g1[p] = inv * ((sa[p - sx] - sa[p + sx]) + (sb[p - sy] - sb[p + sy]));
        g2[p] = inv * ((se[p - sx] - se[p + sx]) + (sd[p - sy] - sd[p + sy]));
    }
    crate::field::VectorField::new(grid, vec![g1, g2])
}

fn dot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

fn interior_j_range(t: &Transformation) -> (f64, f64) {
    jacobian_det(t).interior_range()
}

/// Descends on the control `F` until the targets are met.
///
/// Each step preconditions the gradient through the constraint
/// (`G_F = Δ⁻¹G_T`), moves `F` along `−G_F` (or a conjugate direction built
/// from it) and re-solves `T` from `F`. The step is expressed through the
/// largest node movement it produces, which starts at `opts.step·h`, grows by
/// half after a step accepted at the first try and halves on a rejected one. A trial is accepted only if the objective drops and the
/// interior Jacobian stays above `opts.jmin_guard`.
pub fn solve(problem: &VarConProblem, opts: &DescentOptions) -> Result<(Transformation, SolverReport)> {
    opts.validate()?;
    let grid = *problem.grid();
    let h = grid.spacing();
    let f0 = problem.f0();
    let g0 = problem.g0();
    let solver = PoissonSolver::new(grid, opts.poisson)?;

    let mut t = problem.t_init().clone();
    let (jmin0, _) = interior_j_range(&t);
    if !(jmin0 > opts.jmin_guard) {
        return Err(MorphoError::InvalidArgument(format!(
            "initial map has interior min J = {jmin0:.4}, not above the guard {}",
            opts.jmin_guard
        )));
    }
    let mut control = ControlField::of_transformation(&t);
    let mut energy = objective(&t, f0, g0)?;
    let mut trace = vec![energy];
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut small_run = 0usize;
    let mut scale = opts.step;
    let mut previous: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = None;
    let floor = energy * opts.target_ratio;
    let termination = loop {
        if energy == 0.0 || (accepted > 0 && energy <= floor) {
            break Termination::Converged;
        }
        if accepted >= opts.max_steps {
            break Termination::MaxSteps;
        }
        let gt = gradient_wrt_t(&t, f0, g0)?;
        let gf: Vec<Vec<f64>> = gt
            .components()
            .iter()
            .map(|c| solver.solve_zero_boundary(c))
            .collect::<Result<_>>()?;
        let mut dir: Vec<Vec<f64>> = gf.iter().map(|c| c.iter().map(|v| -v).collect()).collect();
        if let (DescentDirection::ConjugateGradient, Some((g_old, d_old))) = (opts.direction, &previous) {
            let num = dot(&gf, &gf) - dot(&gf, g_old);
            let beta = (num / dot(g_old, g_old)).max(0.0);
            if beta.is_finite() && beta > 0.0 {
                let mixed: Vec<Vec<f64>> = dir
                    .iter()
                    .zip(d_old)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + beta * y).collect())
                    .collect();
                if dot(&mixed, &gf) < 0.0 {
                    dir = mixed;
                }
            }
        }
        // node movement per unit step
        let mut reach = 0.0f64;
        for c in &dir {
            let dt = solver.solve_zero_boundary(c)?;
            reach = dt.iter().fold(reach, |m, v| m.max(v.abs()));
        }
        if reach == 0.0 || !reach.is_finite() {
            break Termination::Converged;
        }
        let mut outcome = None;
        let mut first_try = true;
        for _ in 0..=MAX_HALVINGS {
            let s = scale * h / reach;
            let mut trial = control.clone();
            for (fc, dc) in trial.components_mut().iter_mut().zip(&dir) {
                for (f, d) in fc.iter_mut().zip(dc) {
                    *f += s * d;
                }
            }
            let t_trial = solve_vector_with(&solver, &trial)?;
            let e_trial = objective(&t_trial, f0, g0)?;
            let (jmin, _) = interior_j_range(&t_trial);
            if e_trial < energy && jmin > opts.jmin_guard {
                outcome = Some((trial, t_trial, e_trial));
                break;
            }
            rejected += 1;
            first_try = false;
            scale *= 0.5;
        }
        let Some((c_new, t_new, e_new)) = outcome else {
            break Termination::GuardHalt;
        };
        let rel = (energy - e_new) / energy;
        control = c_new;
        t = t_new;
        energy = e_new;
        trace.push(energy);
        accepted += 1;
        if first_try {
            scale = (scale * STEP_GROWTH).min(STEP_CAP);
        }
        previous = if first_try { Some((gf, dir)) } else { None };
        if rel < opts.obj_tol {
            small_run += 1;
            if small_run >= STALL_WINDOW {
                break Termination::Converged;
            }
        } else {
            small_run = 0;
        }
    };
    let (min_j, max_j) = interior_j_range(&t);
    let final_residuals = residual_sums(&t, f0, g0)?;
    let report = SolverReport {
        objective_trace: trace,
        steps_taken: accepted,
        rejected_steps: rejected,
        min_j,
        max_j,
        final_residuals,
        termination,
    };
    Ok((t.with_diffeomorphic(true), report))
}

/// Node-wise weighted mean of scalar fields, summed in sorted order so the
/// result does not depend on the order of `fields`.
fn sorted_mean(fields: &[ScalarField], weights: Option<&[f64]>) -> Vec<f64> {
    let n = fields[0].values().len();
    let count = fields.len();
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(count);
    (0..n)
        .map(|idx| {
            pairs.clear();
            for (i, f) in fields.iter().enumerate() {
                let w = weights.map_or(1.0, |w| w[i]);
                pairs.push((f.values()[idx], w));
            }
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            match weights {
                Some(_) => pairs.iter().map(|(v, w)| v * w).sum(),
                None => pairs.iter().map(|(v, _)| v).sum::<f64>() / count as f64,
            }
        })
        .collect()
}

/// Averaging targets `(f0, g0)` of a set of transformations: the normalized
/// mean Jacobian and the mean curl.
pub fn average_targets(
    ts: &[Transformation],
    weights: Option<&[f64]>,
) -> Result<(ScalarField, ScalarField)> {
    let first = ts.first().ok_or(MorphoError::EmptyInput("transformations"))?;
    let grid = *first.grid();
    grid.ensure_dim("average_transformations", 2)?;
    for t in ts {
        grid.ensure_same(t.grid())?;
    }
    if let Some(w) = weights {
        check_weights(w, ts.len())?;
    }
    let js: Vec<ScalarField> = ts.iter().map(jacobian_det).collect();
    let cs: Vec<ScalarField> = ts.iter().map(curl2d).collect::<Result<_>>()?;
    let f0 = normalize_f0(&ScalarField::new(grid, sorted_mean(&js, weights))?)?;
    let g0 = ScalarField::new(grid, sorted_mean(&cs, weights))?;
    Ok((f0, g0))
}

/// Average of transformations: the map whose Jacobian and curl are the
/// (weighted) means of those of `ts`, constructed from the identity.
pub fn average_transformations(
    ts: &[Transformation],
    weights: Option<&[f64]>,
    opts: &DescentOptions,
) -> Result<(Transformation, SolverReport)> {
    let (f0, g0) = average_targets(ts, weights)?;
    solve(&VarConProblem::new(f0, g0)?, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let g = GridSpec::square(8).unwrap();
        let one = ScalarField::constant(g, 1.0);
        assert_eq!(normalize_f0(&one).unwrap(), one);
        let two = ScalarField::constant(g, 2.0);
        assert_eq!(normalize_f0(&two).unwrap(), one);
        let mut v = vec![1.0; g.len()];
        v[3] = 0.0;
        assert!(matches!(
            normalize_f0(&ScalarField::new(g, v).unwrap()),
            Err(MorphoError::NonPositiveTarget { index: 3, .. })
        ));
    }

    #[test]
    fn objective_on_identity() {
        let g = GridSpec::square(10).unwrap();
        let id = Transformation::identity(g);
        let zero = ScalarField::constant(g, 0.0);
        assert_eq!(objective(&id, &ScalarField::constant(g, 1.0), &zero).unwrap(), 0.0);
        let e = objective(&id, &ScalarField::constant(g, 1.1), &zero).unwrap();
        assert!((e - 0.01 * 64.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_minimizer() {
        let g = GridSpec::square(9).unwrap();
        let id = Transformation::identity(g);
        let gr = gradient_wrt_t(&id, &ScalarField::constant(g, 1.0), &ScalarField::constant(g, 0.0))
            .unwrap();
        assert!(gr.max_norm() == 0.0);
    }

    #[test]
    fn solve_trivial_problem_takes_no_steps() {
        let g = GridSpec::square(16).unwrap();
        let p = VarConProblem::new(ScalarField::constant(g, 1.0), ScalarField::constant(g, 0.0)).unwrap();
        let (t, r) = solve(&p, &DescentOptions::default()).unwrap();
        assert_eq!(t, Transformation::identity(g).with_diffeomorphic(true));
        assert_eq!(r.steps_taken, 0);
        assert_eq!(r.termination, Termination::Converged);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = GridSpec::square(8).unwrap();
        let z = ScalarField::constant(g, 0.0);
        assert!(VarConProblem::new(z.clone(), z.clone()).is_err());
        assert!(matches!(
            average_transformations(&[], None, &DescentOptions::default()),
            Err(MorphoError::EmptyInput(_))
        ));
        let opts = DescentOptions {
            step: 0.0,
            ..Default::default()
        };
        assert!(opts.validate().is_err());
    }
}
