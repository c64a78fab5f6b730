//! Registers a deformed copy of a synthetic image back onto the original and
//! compares the recovered map with the inverse of the applied deformation.
//!
//! Usage: `register_pair [grid_size] [angle]`

use std::time::Instant;

use morphokit::field::{compose, resample, GridSpec};
use morphokit::registration::{register, RegistrationOptions};
use morphokit::synth::{make_rotational_pair, make_test_image, ImageKind, RotationalSpec};

fn main() -> morphokit::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(64, |a| a.parse().expect("grid size"));
    let angle: f64 = args.next().map_or(0.2, |a| a.parse().expect("angle"));

    let grid = GridSpec::square(n)?;
    let image = make_test_image(&grid, ImageKind::Blobs, 1)?;
    let (d1, _) = make_rotational_pair(&grid, &RotationalSpec::default_for(&grid).with_angle(angle))?;
    let moving = resample(&image, &d1)?;

    let clock = Instant::now();
    let result = register(&moving, &image, &RegistrationOptions::default())?;
    let trace = &result.ssd_trace;
    println!(
        "{} steps, {:?}, {:.2} s",
        result.steps_taken,
        result.termination,
        clock.elapsed().as_secs_f64()
    );
    println!(
        "SSD {:.4} -> {:.4} (ratio {:.4}), min J = {:.4}",
        trace[0],
        result.final_ssd(),
        result.final_ssd() / trace[0],
        result.min_j
    );
    // moving ∘ phi ≈ image means D1 ∘ phi ≈ identity
    let round_trip = compose(&d1, &result.phi)?;
    println!("max |D1(phi(x)) - x| = {:.4} h", round_trip.max_displacement() / grid.spacing());
    Ok(())
}
