//! End-to-end replicas of the reference experiments on synthetic data. Each
//! scenario returns a serializable report with the measured quantities and
//! the fields it produced.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::{add_noise, curl2d, jacobian_det, resample, ssd, GridSpec, Image, Transformation};
use crate::registration::{register, RegistrationOptions, RegistrationReport};
use crate::synth::{
    make_family6_with, make_rotational_pair, make_test_image, make_twisted_volume, stack_slice_maps, FamilySpec,
    ImageKind, RotationalSpec,
};
use crate::template::{build_both, build_fast, build_general, mean_and_std, Cohort, TemplateOptions, TemplateRunReport};
use crate::varcon::{normalize_f0, solve, DescentOptions, SolverReport, VarConProblem};

/// Opposite local rotations: near-identical Jacobians, opposite curls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurlEffectReport {
    pub n: usize,
    pub max_angle: f64,
    pub d1_j_range: (f64, f64),
    pub d2_j_range: (f64, f64),
    /// `max |curl(D₁) + curl(D₂)|` over all nodes.
    pub max_curl_sum: f64,
    pub max_curl: f64,
    /// `SSD(I∘D₁, I∘D₂)` for a textured test image `I`.
    pub ssd_between_warps: f64,
}

pub struct CurlEffect {
    pub report: CurlEffectReport,
    pub d1: Transformation,
    pub d2: Transformation,
    pub image: Image,
    pub warped1: Image,
    pub warped2: Image,
}

pub fn curl_effect(n: usize) -> Result<CurlEffect> {
    let grid = GridSpec::square(n)?;
    let spec = RotationalSpec::default_for(&grid);
    let (d1, d2) = make_rotational_pair(&grid, &spec)?;
    let (j1, j2) = (jacobian_det(&d1), jacobian_det(&d2));
    let (c1, c2) = (curl2d(&d1)?, curl2d(&d2)?);
    let max_curl_sum = c1
        .values()
        .iter()
        .zip(c2.values())
        .map(|(a, b)| (a + b).abs())
        .fold(0.0, f64::max);
    let image = make_test_image(&grid, ImageKind::Rings, 1)?;
    let warped1 = resample(&image, &d1)?;
    let warped2 = resample(&image, &d2)?;
    let report = CurlEffectReport {
        n,
        max_angle: spec.max_angle,
        d1_j_range: (j1.min(), j1.max()),
        d2_j_range: (j2.min(), j2.max()),
        max_curl_sum,
        max_curl: c1.max().max(-c1.min()),
        ssd_between_warps: ssd(&warped1, &warped2)?,
    };
    Ok(CurlEffect { report, d1, d2, image, warped1, warped2 })
}

/// Recovery of `D₂` from its Jacobian and curl, starting at (a noisy) `D₁`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub n: usize,
    pub max_angle: f64,
    /// Amplitude of the smooth noise added to the initial map, in grid units.
    pub noise: f64,
    pub seed: u64,
    pub descent: DescentOptions,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            n: 64,
            max_angle: 0.2,
            noise: 0.0,
            seed: 7,
            descent: DescentOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub config: RecoveryConfig,
    /// Max node distance to `D₂` of the initial map, in units of `h`.
    pub initial_error: f64,
    /// Max node distance to `D₂` of the result, in units of `h`.
    pub final_error: f64,
    pub trace_strictly_decreasing: bool,
    pub solver: SolverReport,
}

pub struct Recovery {
    pub report: RecoveryReport,
    pub start: Transformation,
    pub result: Transformation,
    pub target: Transformation,
}

pub fn recovery(cfg: &RecoveryConfig) -> Result<Recovery> {
    let grid = GridSpec::square(cfg.n)?;
    let spec = RotationalSpec::default_for(&grid).with_angle(cfg.max_angle);
    let (d1, d2) = make_rotational_pair(&grid, &spec)?;
    let f0 = normalize_f0(&jacobian_det(&d2))?;
    let g0 = curl2d(&d2)?;
    let start = add_noise(&d1, cfg.noise * grid.spacing(), cfg.seed)?;
    let (result, solver) = solve(&VarConProblem::with_init(f0, g0, start.clone())?, &cfg.descent)?;
    let h = grid.spacing();
    let report = RecoveryReport {
        config: cfg.clone(),
        initial_error: start.max_node_distance(&d2)? / h,
        final_error: result.max_node_distance(&d2)? / h,
        trace_strictly_decreasing: solver.objective_trace.windows(2).all(|w| w[1] < w[0]),
        solver,
    };
    Ok(Recovery { report, start, result, target: d2 })
}

/// Template construction on the six-member synthetic cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n: usize,
    pub seed: u64,
    pub family: FamilySpec,
    pub passes: usize,
    pub template: TemplateOptions,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n: 64,
            seed: 3,
            family: FamilySpec::default(),
            passes: 2,
            template: TemplateOptions::default(),
        }
    }
}

/// One pipeline run plus the registration of its result onto the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub run: TemplateRunReport,
    pub to_truth: RegistrationReport,
    pub to_truth_min_j: f64,
    pub to_truth_max_abs_curl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    /// Pass-1 error ratio per init.
    pub pass1_ratios: Vec<f64>,
    pub pass1_std: f64,
    /// Final error ratio per init.
    pub final_ratios: Vec<f64>,
    pub final_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub config: CohortConfig,
    pub general: Vec<PipelineRun>,
    pub fast: Vec<PipelineRun>,
    pub general_summary: Option<CohortSummary>,
    pub fast_summary: Option<CohortSummary>,
}

pub struct CohortStudy {
    pub report: CohortReport,
    pub truth: Image,
    pub cohort: Cohort,
    pub general_templates: Vec<Image>,
    pub fast_templates: Vec<Image>,
}

/// The truth image, the family and the cohort `Iⱼ = truth ∘ Dⱼ`.
pub fn synthetic_cohort(cfg: &CohortConfig) -> Result<(Image, Vec<Transformation>, Cohort)> {
    let grid = GridSpec::square(cfg.n)?;
    let truth = make_test_image(&grid, ImageKind::Blobs, cfg.seed)?;
    let family = make_family6_with(&grid, cfg.seed, &cfg.family)?;
    let images = family.iter().map(|d| resample(&truth, d)).collect::<Result<Vec<_>>>()?;
    Ok((truth, family, Cohort::unlabeled(images)?))
}

fn check_against_truth(template: &Image, truth: &Image, run: TemplateRunReport, opts: &RegistrationOptions) -> Result<PipelineRun> {
    let back = register(template, truth, opts)?;
    let c = curl2d(&back.phi)?;
    Ok(PipelineRun {
        run,
        to_truth_min_j: jacobian_det(&back.phi).min(),
        to_truth_max_abs_curl: c.max().max(-c.min()),
        to_truth: back.report(),
    })
}

fn summarize(runs: &[PipelineRun]) -> Option<CohortSummary> {
    if runs.is_empty() {
        return None;
    }
    let stage = |r: &PipelineRun, first: bool| {
        let s = if first { r.run.stages.first() } else { r.run.stages.last() };
        s.and_then(|s| Some((s.error_ratio?, s.ssd_to_reference?)))
    };
    let pass1: Vec<(f64, f64)> = runs.iter().filter_map(|r| stage(r, true)).collect();
    let last: Vec<(f64, f64)> = runs.iter().filter_map(|r| stage(r, false)).collect();
    let ssd1: Vec<f64> = pass1.iter().map(|p| p.1).collect();
    let ssd2: Vec<f64> = last.iter().map(|p| p.1).collect();
    Some(CohortSummary {
        pass1_ratios: pass1.iter().map(|p| p.0).collect(),
        pass1_std: mean_and_std(&ssd1).1,
        final_ratios: last.iter().map(|p| p.0).collect(),
        final_std: mean_and_std(&ssd2).1,
    })
}

/// Runs the requested pipelines from every init.
pub fn cohort_study(cfg: &CohortConfig, general: bool, fast: bool) -> Result<CohortStudy> {
    let (truth, _, cohort) = synthetic_cohort(cfg)?;
    let ropts = &cfg.template.registration;
    let (mut g_runs, mut f_runs, mut g_imgs, mut f_imgs) = (vec![], vec![], vec![], vec![]);
    for init in 0..cohort.len() {
        let stage = |e: crate::MorphoError| e.in_stage(format!("init {}", cohort.labels()[init]));
        let (g, f) = match (general, fast) {
            (true, true) => {
                let (g, f) = build_both(&cohort, init, cfg.passes, Some(&truth), &cfg.template).map_err(stage)?;
                (Some(g), Some(f))
            }
            (true, false) => (Some(build_general(&cohort, init, cfg.passes, Some(&truth), &cfg.template).map_err(stage)?), None),
            (false, true) => (None, Some(build_fast(&cohort, init, Some(&truth), &cfg.template).map_err(stage)?)),
            (false, false) => (None, None),
        };
        if let Some((img, run)) = g {
            g_runs.push(check_against_truth(&img, &truth, run, ropts)?);
            g_imgs.push(img);
        }
        if let Some((img, run)) = f {
            f_runs.push(check_against_truth(&img, &truth, run, ropts)?);
            f_imgs.push(img);
        }
    }
    let report = CohortReport {
        config: cfg.clone(),
        general_summary: summarize(&g_runs),
        fast_summary: summarize(&f_runs),
        general: g_runs,
        fast: f_runs,
    };
    Ok(CohortStudy {
        report,
        truth,
        cohort,
        general_templates: g_imgs,
        fast_templates: f_imgs,
    })
}

/// Registration of the twisted volume back onto the reference volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwistConfig {
    pub n: usize,
    pub twist_max: f64,
    pub registration: RegistrationOptions,
}

impl Default for TwistConfig {
    fn default() -> Self {
        TwistConfig {
            n: 24,
            twist_max: 0.5,
            registration: RegistrationOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwistReport {
    pub config: TwistConfig,
    pub ssd_initial: f64,
    pub ssd_final: f64,
    /// Max node distance between the recovered map and the stacked slice
    /// rotations, in units of `h`.
    pub max_map_error: f64,
    /// The same distance per slice.
    pub slice_errors: Vec<f64>,
    pub registration: RegistrationReport,
}

pub struct TwistStudy {
    pub report: TwistReport,
    pub reference: Image,
    pub twisted: Image,
    pub recovered: Image,
    pub phi: Transformation,
    pub truth: Transformation,
}

pub fn twist_study(cfg: &TwistConfig) -> Result<TwistStudy> {
    let vol = make_twisted_volume(cfg.n, cfg.twist_max)?;
    let truth = stack_slice_maps(&vol.slice_maps)?;
    let result = register(&vol.twisted, &vol.reference, &cfg.registration)?;
    let grid = *truth.grid();
    let h = grid.spacing();
    let plane = grid.nx() * grid.ny();
    let slice_errors: Vec<f64> = (0..grid.nz())
        .map(|k| {
            (k * plane..(k + 1) * plane)
                .map(|i| {
                    let (a, b) = (result.phi.map_node(i), truth.map_node(i));
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt() / h
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let recovered = resample(&vol.twisted, &result.phi)?;
    let report = TwistReport {
        config: cfg.clone(),
        ssd_initial: ssd(&vol.twisted, &vol.reference)?,
        ssd_final: result.final_ssd(),
        max_map_error: slice_errors.iter().copied().fold(0.0, f64::max),
        slice_errors,
        registration: result.report(),
    };
    Ok(TwistStudy {
        report,
        reference: vol.reference,
        twisted: vol.twisted,
        recovered,
        phi: result.phi,
        truth,
    })
}
