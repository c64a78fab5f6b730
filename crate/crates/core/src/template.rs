//! Unbiased template construction from an image cohort.
//!
//! Direction convention, shared by every registration here: the template is
//! the moving image and `resample(template, φⱼ) ≈ Iⱼ`. A pass resamples the
//! template on the average of the `φⱼ`. The fast pipeline's correction map
//! `Ĥ` has Jacobian `N/ΣJ(φⱼ)` and curl `−mean curl(φⱼ)`, so it describes the
//! residual bias itself; it is applied as a forward warp of the template,
//! i.e. the template is resampled on `Ĥ⁻¹`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MorphoError, Result};
use crate::field::{compose, curl2d, invert, jacobian_det, resample, ssd, Image, ScalarField, Transformation};
use crate::registration::{register, RegistrationOptions, RegistrationReport};
use crate::varcon::{average_transformations, normalize_f0, solve, DescentOptions, SolverReport, VarConProblem};

/// Images to build a template from.
#[derive(Clone, Debug)]
pub struct Cohort {
    images: Vec<Image>,
    labels: Vec<String>,
}

impl Cohort {
    pub fn new(images: Vec<Image>, labels: Vec<String>) -> Result<Self> {
        if images.len() < 2 {
            return Err(MorphoError::InvalidArgument(format!(
                "a cohort needs at least 2 images, got {}",
                images.len()
            )));
        }
        if labels.len() != images.len() {
            return Err(MorphoError::InvalidArgument(format!(
                "{} labels for {} images",
                labels.len(),
                images.len()
            )));
        }
        let grid = *images[0].grid();
        for img in &images[1..] {
            grid.ensure_same(img.grid())?;
        }
        Ok(Cohort { images, labels })
    }

    /// Labels `I1`, `I2`, ...
    pub fn unlabeled(images: Vec<Image>) -> Result<Self> {
        let labels = (1..=images.len()).map(|i| format!("I{i}")).collect();
        Self::new(images, labels)
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn member(&self, index: usize) -> Result<&Image> {
        self.images.get(index).ok_or_else(|| {
            MorphoError::InvalidArgument(format!(
                "init index {index} out of range for a cohort of {}",
                self.images.len()
            ))
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplateOptions {
    pub registration: RegistrationOptions,
    pub descent: DescentOptions,
}

/// Result of one register-average-resample pass.
#[derive(Clone, Debug)]
pub struct PassOutput {
    pub template: Image,
    /// This pass's average of the registrations.
    pub average: Transformation,
    /// Map from the pass's source image to `template`, accumulated over the
    /// passes so far.
    pub map: Transformation,
    pub phis: Vec<Transformation>,
    pub registrations: Vec<RegistrationReport>,
    pub average_report: SolverReport,
}

/// Registers the current template `resample(source, carried)` to every cohort
/// member, averages the maps and resamples `source` once on the composed map
/// (so interpolation blur does not pile up over passes).
pub fn template_pass(
    cohort: &Cohort,
    source: &Image,
    carried: Option<&Transformation>,
    opts: &TemplateOptions,
) -> Result<PassOutput> {
    cohort.images[0].grid().ensure_same(source.grid())?;
    let current = match carried {
        Some(t) => resample(source, t)?,
        None => source.clone(),
    };
    let results: Vec<_> = cohort
        .images
        .par_iter()
        .enumerate()
        .map(|(j, target)| {
            register(&current, target, &opts.registration)
                .map_err(|e| e.in_stage(format!("registration to {}", cohort.labels[j])))
        })
        .collect::<Result<_>>()?;
    let registrations = results.iter().map(|r| r.report()).collect();
    let phis: Vec<Transformation> = results.into_iter().map(|r| r.phi).collect();
    let (average, average_report) = average_transformations(&phis, None, &opts.descent)
        .map_err(|e| e.in_stage("averaging"))?;
    let map = match carried {
        Some(t) => compose(t, &average)?,
        None => average.clone(),
    };
    Ok(PassOutput {
        template: resample(source, &map)?,
        average,
        map,
        phis,
        registrations,
        average_report,
    })
}

/// Output of the correction step of the fast pipeline.
#[derive(Clone, Debug)]
pub struct Correction {
    pub template: Image,
    pub correction: Transformation,
    pub registrations: Vec<RegistrationReport>,
    pub construction: SolverReport,
}

/// Registers the pass-1 template to every member, builds the correction map
/// `Ĥ` from the Jacobians and curls and warps the template forward by it.
pub fn correct_pass(cohort: &Cohort, source: &Image, first: &PassOutput, opts: &TemplateOptions) -> Result<Correction> {
    let temp = &first.template;
    let results: Vec<_> = cohort
        .images
        .par_iter()
        .enumerate()
        .map(|(j, img)| {
            register(temp, img, &opts.registration).map_err(|e| {
                e.in_stage(format!("correction registration to {}", cohort.labels[j]))
            })
        })
        .collect::<Result<_>>()?;
    let registrations = results.iter().map(|r| r.report()).collect();
    let phis: Vec<Transformation> = results.into_iter().map(|r| r.phi).collect();
    let (f0, g0) = correction_field_targets(&phis)?;
    let (correction, construction) =
        solve(&VarConProblem::new(f0, g0)?, &opts.descent).map_err(|e| e.in_stage("correction map"))?;
    let undo = invert(&correction)?;
    let template = resample(source, &compose(&first.map, &undo)?)?;
    Ok(Correction {
        template,
        correction,
        registrations,
        construction,
    })
}

/// Diagnostics of one stage of a template run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    /// `SSD(template, reference)` when a reference was supplied.
    pub ssd_to_reference: Option<f64>,
    /// `ssd_to_reference / SSD(initial image, reference)`.
    pub error_ratio: Option<f64>,
    pub registrations: Vec<RegistrationReport>,
    pub construction: SolverReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateRunReport {
    pub mode: String,
    pub init_index: usize,
    pub init_label: String,
    /// `SSD(initial image, reference)` when a reference was supplied.
    pub initial_ssd_to_reference: Option<f64>,
    pub stages: Vec<StageReport>,
}

impl TemplateRunReport {
    fn new(mode: &str, cohort: &Cohort, init_index: usize, reference: Option<&Image>) -> Result<Self> {
        let init = cohort.member(init_index)?;
        let initial = reference.map(|r| ssd(init, r)).transpose()?;
        Ok(TemplateRunReport {
            mode: mode.into(),
            init_index,
            init_label: cohort.labels[init_index].clone(),
            initial_ssd_to_reference: initial,
            stages: Vec::new(),
        })
    }

    fn push(
        &mut self,
        stage: String,
        template: &Image,
        reference: Option<&Image>,
        registrations: Vec<RegistrationReport>,
        construction: SolverReport,
    ) -> Result<()> {
        let s = reference.map(|r| ssd(template, r)).transpose()?;
        let ratio = match (s, self.initial_ssd_to_reference) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
        self.stages.push(StageReport {
            stage,
            ssd_to_reference: s,
            error_ratio: ratio,
            registrations,
            construction,
        });
        Ok(())
    }

    /// The last stage's error ratio, if a reference was supplied.
    pub fn final_error_ratio(&self) -> Option<f64> {
        self.stages.last().and_then(|s| s.error_ratio)
    }

    pub fn final_ssd_to_reference(&self) -> Option<f64> {
        self.stages.last().and_then(|s| s.ssd_to_reference)
    }
}

/// Iterated template passes starting from `cohort.images()[init_index]`.
pub fn build_general(
    cohort: &Cohort,
    init_index: usize,
    passes: usize,
    reference: Option<&Image>,
    opts: &TemplateOptions,
) -> Result<(Image, TemplateRunReport)> {
    if passes == 0 {
        return Err(MorphoError::InvalidArgument("passes must be at least 1".into()));
    }
    check_reference(cohort, reference)?;
    let mut report = TemplateRunReport::new("general", cohort, init_index, reference)?;
    let init = cohort.member(init_index)?;
    let first = template_pass(cohort, init, None, opts).map_err(|e| e.in_stage("pass 1"))?;
    let (template, _) = continue_general(cohort, init, first, passes, reference, &mut report, opts)?;
    Ok((template, report))
}

fn check_reference(cohort: &Cohort, reference: Option<&Image>) -> Result<()> {
    match reference {
        Some(r) => cohort.images[0].grid().ensure_same(r.grid()),
        None => Ok(()),
    }
}

/// Records pass 1 and runs passes `2..=passes`; returns the final template
/// and the pass-1 output.
fn continue_general(
    cohort: &Cohort,
    init: &Image,
    first: PassOutput,
    passes: usize,
    reference: Option<&Image>,
    report: &mut TemplateRunReport,
    opts: &TemplateOptions,
) -> Result<(Image, PassOutput)> {
    report.push(
        "pass1".into(),
        &first.template,
        reference,
        first.registrations.clone(),
        first.average_report.clone(),
    )?;
    let mut current: Option<PassOutput> = None;
    for pass in 2..=passes {
        let carried = current.as_ref().map_or(&first.map, |c| &c.map);
        let out = template_pass(cohort, init, Some(carried), opts).map_err(|e| e.in_stage(format!("pass {pass}")))?;
        report.push(
            format!("pass{pass}"),
            &out.template,
            reference,
            out.registrations.clone(),
            out.average_report.clone(),
        )?;
        current = Some(out);
    }
    let template = current.map_or_else(|| first.template.clone(), |c| c.template);
    Ok((template, first))
}

/// Targets of the correction map: `J = N / ΣJ(φ̂ⱼ)` (normalized to unit mean)
/// and `curl = −(1/N)·Σ curl(φ̂ⱼ)`.
pub fn correction_field_targets(phis: &[Transformation]) -> Result<(ScalarField, ScalarField)> {
    let first = phis.first().ok_or(MorphoError::EmptyInput("transformations"))?;
    let grid = *first.grid();
    grid.ensure_dim("correction_field_targets", 2)?;
    for p in phis {
        grid.ensure_same(p.grid())?;
    }
    let n = phis.len() as f64;
    let js: Vec<ScalarField> = phis.iter().map(jacobian_det).collect();
    let cs: Vec<ScalarField> = phis.iter().map(curl2d).collect::<Result<_>>()?;
    let mut f0 = Vec::with_capacity(grid.len());
    let mut g0 = Vec::with_capacity(grid.len());
    let mut buf = Vec::with_capacity(phis.len());
    for idx in 0..grid.len() {
        buf.clear();
        buf.extend(js.iter().map(|j| j.values()[idx]));
        buf.sort_by(f64::total_cmp);
        let total: f64 = buf.iter().sum();
        if !(total > 0.0) {
            return Err(MorphoError::SingularJacobianSum { index: idx, value: total });
        }
        f0.push(n / total);
        buf.clear();
        buf.extend(cs.iter().map(|c| c.values()[idx]));
        buf.sort_by(f64::total_cmp);
        g0.push(-buf.iter().sum::<f64>() / n);
    }
    let f0 = normalize_f0(&ScalarField::new(grid, f0)?)?;
    Ok((f0, ScalarField::new(grid, g0)?))
}

/// One template pass followed by a single correction map built from the
/// Jacobians and curls of the registrations onto the temporary template.
pub fn build_fast(
    cohort: &Cohort,
    init_index: usize,
    reference: Option<&Image>,
    opts: &TemplateOptions,
) -> Result<(Image, TemplateRunReport)> {
    check_reference(cohort, reference)?;
    let mut report = TemplateRunReport::new("fast", cohort, init_index, reference)?;
    let init = cohort.member(init_index)?;
    let first = template_pass(cohort, init, None, opts).map_err(|e| e.in_stage("pass 1"))?;
    let template = finish_fast(cohort, init, &first, reference, &mut report, opts)?;
    Ok((template, report))
}

fn finish_fast(
    cohort: &Cohort,
    init: &Image,
    first: &PassOutput,
    reference: Option<&Image>,
    report: &mut TemplateRunReport,
    opts: &TemplateOptions,
) -> Result<Image> {
    report.push(
        "pass1".into(),
        &first.template,
        reference,
        first.registrations.clone(),
        first.average_report.clone(),
    )?;
    let c = correct_pass(cohort, init, first, opts)?;
    report.push("corrected".into(), &c.template, reference, c.registrations, c.construction)?;
    Ok(c.template)
}

/// Runs both pipelines from the same init, sharing their common first pass.
/// Returns `(general, fast)`.
pub fn build_both(
    cohort: &Cohort,
    init_index: usize,
    passes: usize,
    reference: Option<&Image>,
    opts: &TemplateOptions,
) -> Result<((Image, TemplateRunReport), (Image, TemplateRunReport))> {
    if passes == 0 {
        return Err(MorphoError::InvalidArgument("passes must be at least 1".into()));
    }
    check_reference(cohort, reference)?;
    let mut general = TemplateRunReport::new("general", cohort, init_index, reference)?;
    let mut fast = TemplateRunReport::new("fast", cohort, init_index, reference)?;
    let init = cohort.member(init_index)?;
    let first = template_pass(cohort, init, None, opts).map_err(|e| e.in_stage("pass 1"))?;
    let fast_template = finish_fast(cohort, init, &first, reference, &mut fast, opts)?;
    let (general_template, _) = continue_general(cohort, init, first, passes, reference, &mut general, opts)?;
    Ok(((general_template, general), (fast_template, fast)))
}

/// Sample mean and sample standard deviation (denominator `n − 1`).
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;

    #[test]
    fn identity_targets() {
        let g = GridSpec::square(12).unwrap();
        let id = Transformation::identity(g);
        let (f0, g0) = correction_field_targets(&[id.clone(), id.clone(), id]).unwrap();
        assert!(f0.values().iter().all(|v| *v == 1.0));
        assert!(g0.values().iter().all(|v| *v == 0.0));
        assert!(matches!(
            correction_field_targets(&[]),
            Err(MorphoError::EmptyInput(_))
        ));
    }

    #[test]
    fn cohort_validation() {
        let g = GridSpec::square(8).unwrap();
        let img = Image::constant(g, 0.5);
        assert!(Cohort::unlabeled(vec![img.clone()]).is_err());
        let c = Cohort::unlabeled(vec![img.clone(), img]).unwrap();
        assert_eq!(c.labels(), ["I1", "I2"]);
        assert!(build_general(&c, 5, 1, None, &TemplateOptions::default()).is_err());
        assert!(build_general(&c, 0, 0, None, &TemplateOptions::default()).is_err());
    }

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_and_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
