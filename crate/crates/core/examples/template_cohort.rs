//! Builds templates from a synthetic six-image cohort with both pipelines and
//! every choice of initial image, reporting the error against the known
//! ground-truth image.
//!
//! Usage: `template_cohort [grid_size] [seed] [amplitude] [max_strain] [outer_max]`

use std::time::Instant;

use morphokit::field::{curl2d, jacobian_det, resample, GridSpec};
use morphokit::registration::register;
use morphokit::synth::{make_family6_with, make_test_image, FamilySpec, ImageKind};
use morphokit::template::{build_both, mean_and_std, Cohort, TemplateOptions};

fn main() -> morphokit::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: f64| args.get(i).map_or(default, |a| a.parse().expect("number"));
    let n = arg(0, 64.0) as usize;
    let seed = arg(1, 3.0) as u64;
    let spec = FamilySpec {
        amplitude: arg(2, FamilySpec::default().amplitude),
        max_strain: arg(3, FamilySpec::default().max_strain),
    };
    let mut opts = TemplateOptions::default();
    opts.registration.outer_max = arg(4, opts.registration.outer_max as f64) as usize;

    let grid = GridSpec::square(n)?;
    let truth = make_test_image(&grid, ImageKind::Blobs, seed)?;
    let family = make_family6_with(&grid, seed, &spec)?;
    let images = family
        .iter()
        .map(|d| resample(&truth, d))
        .collect::<morphokit::Result<Vec<_>>>()?;
    let cohort = Cohort::unlabeled(images)?;

    let (mut r1, mut s1, mut s2, mut rf, mut sf) = (vec![], vec![], vec![], vec![], vec![]);
    println!("init  ratio(pass1)  ratio(pass2)  ratio(fast)  min J / max |curl| to truth");
    for i in 0..cohort.len() {
        let clock = Instant::now();
        let ((template, general), (_, fast)) = build_both(&cohort, i, 2, Some(&truth), &opts)?;
        r1.push(general.stages[0].error_ratio.unwrap());
        s1.push(general.stages[0].ssd_to_reference.unwrap());
        s2.push(general.final_ssd_to_reference().unwrap());
        rf.push(fast.final_error_ratio().unwrap());
        sf.push(fast.final_ssd_to_reference().unwrap());
        let back = register(&template, &truth, &opts.registration)?;
        let j = jacobian_det(&back.phi);
        let c = curl2d(&back.phi)?;
        println!(
            "{:>4}  {:>12.4}  {:>12.4}  {:>11.4}  {:.4} / {:.2e}   ({:.1} s)",
            cohort.labels()[i],
            r1[i],
            general.final_error_ratio().unwrap(),
            rf[i],
            j.min(),
            c.max().max(-c.min()),
            clock.elapsed().as_secs_f64()
        );
    }
    let spread = r1.iter().cloned().fold(0.0, f64::max) / r1.iter().cloned().fold(f64::INFINITY, f64::min);
    let (_, std1) = mean_and_std(&s1);
    let (_, std2) = mean_and_std(&s2);
    let (_, stdf) = mean_and_std(&sf);
    println!("pass-1 ratio spread (max/min): {spread:.2}");
    println!("std SSD: pass1 {std1:.4e}  pass2 {std2:.4e} ({:.1}%)  fast {stdf:.4e} ({:.1}%)", 100.0 * std2 / std1, 100.0 * stdf / std1);
    let max_r1 = r1.iter().cloned().fold(0.0, f64::max);
    let max_rf = rf.iter().cloned().fold(0.0, f64::max);
    println!("max ratio: pass1 {max_r1:.4}  fast {max_rf:.4} ({:.2}x)", max_rf / max_r1);
    let worst = sf.iter().zip(&s2).map(|(f, g)| f / g).fold(0.0, f64::max);
    println!("worst fast/general SSD: {worst:.2}");
    Ok(())
}
