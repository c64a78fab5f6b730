//! Two deformations with nearly the same Jacobian but opposite curl move an
//! image differently, so the Jacobian alone does not determine a deformation.

use morphokit::field::{curl2d, jacobian_det, resample, ssd, GridSpec};
use morphokit::synth::{make_rotational_pair, make_test_image, ImageKind, RotationalSpec};

fn main() -> morphokit::Result<()> {
    let grid = GridSpec::square(128)?;
    let (d1, d2) = make_rotational_pair(&grid, &RotationalSpec::default_for(&grid))?;
    for (name, d) in [("D1", &d1), ("D2", &d2)] {
        let j = jacobian_det(d);
        let c = curl2d(d)?;
        println!(
            "{name}: J in [{:.6}, {:.6}], curl in [{:.5}, {:.5}], max |u| = {:.3} px",
            j.min(),
            j.max(),
            c.min(),
            c.max(),
            d.max_displacement()
        );
    }
    let c1 = curl2d(&d1)?;
    let c2 = curl2d(&d2)?;
    let worst = c1
        .values()
        .iter()
        .zip(c2.values())
        .fold(0.0f64, |m, (a, b)| m.max((a + b).abs()));
    println!("max |curl(D1) + curl(D2)| = {worst:e}");

    let image = make_test_image(&grid, ImageKind::Checker, 0)?;
    let a = resample(&image, &d1)?;
    let b = resample(&image, &d2)?;
    println!("SSD(I∘D1, I∘D2) = {:.4}", ssd(&a, &b)?);
    Ok(())
}
