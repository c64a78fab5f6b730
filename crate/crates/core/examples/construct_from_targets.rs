//! Recovers a deformation from its Jacobian determinant and curl, starting
//! from a different deformation (optionally perturbed by smooth noise).
//!
//! Usage: `construct_from_targets [noise_amplitude] [seed] [max_steps] [steepest|cg]`

use std::time::Instant;

use morphokit::field::{add_noise, curl2d, jacobian_det, GridSpec};
use morphokit::synth::{make_rotational_pair, RotationalSpec};
use morphokit::varcon::{normalize_f0, solve, DescentDirection, DescentOptions, VarConProblem};

fn main() -> morphokit::Result<()> {
    let mut args = std::env::args().skip(1);
    let noise: f64 = args.next().map_or(0.0, |a| a.parse().expect("noise amplitude"));
    let seed: u64 = args.next().map_or(7, |a| a.parse().expect("seed"));
    let mut opts = DescentOptions::default();
    if let Some(a) = args.next() {
        opts.max_steps = a.parse().expect("max steps");
    }
    if args.next().as_deref() == Some("steepest") {
        opts.direction = DescentDirection::Steepest;
    }

    let grid = GridSpec::square(64)?;
    let spec = RotationalSpec::default_for(&grid).with_angle(0.2);
    let (d1, d2) = make_rotational_pair(&grid, &spec)?;
    let f0 = normalize_f0(&jacobian_det(&d2))?;
    let g0 = curl2d(&d2)?;
    let start = add_noise(&d1, noise, seed)?;
    println!("start: max distance to D2 = {:.4} h", start.max_node_distance(&d2)?);

    let clock = Instant::now();
    let problem = VarConProblem::with_init(f0, g0, start)?;
    let (t, report) = solve(&problem, &opts)?;
    println!(
        "{} steps ({} rejected), {:?}, {:.2} s",
        report.steps_taken,
        report.rejected_steps,
        report.termination,
        clock.elapsed().as_secs_f64()
    );
    println!(
        "objective {:.3e} -> {:.3e}, J in [{:.4}, {:.4}]",
        report.objective_trace[0],
        report.objective_trace.last().unwrap(),
        report.min_j,
        report.max_j
    );
    println!("final: max distance to D2 = {:.4} h", t.max_node_distance(&d2)?);
    Ok(())
}
