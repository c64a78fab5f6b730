//! Averages deformations through their Jacobians and curls: the counter-rotating
//! pair cancels to (nearly) the identity, and so does the six-member family
//! even though each member moves nodes by several grid steps.
//!
//! Usage: `average_maps [grid_size] [seed]`

use morphokit::field::GridSpec;
use morphokit::synth::{make_family6, make_rotational_pair, RotationalSpec};
use morphokit::varcon::{average_transformations, DescentOptions};

fn main() -> morphokit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let grid = GridSpec::square(n)?;
    let h = grid.spacing();
    let opts = DescentOptions::default();

    let (d1, d2) = make_rotational_pair(&grid, &RotationalSpec::default_for(&grid).with_angle(0.3))?;
    println!("pair: members move up to {:.3}h", d1.max_displacement() / h);
    let (avg, rep) = average_transformations(&[d1, d2], None, &opts)?;
    println!(
        "  average moves {:.2e}h, J in [{:.5}, {:.5}], {} steps",
        avg.max_displacement() / h,
        rep.min_j,
        rep.max_j,
        rep.steps_taken
    );

    let family = make_family6(&grid, seed)?;
    for (k, t) in family.iter().enumerate() {
        println!("family member {}: moves {:.3}h", k + 1, t.max_displacement() / h);
    }
    let (avg, rep) = average_transformations(&family, None, &opts)?;
    println!(
        "  average moves {:.2e}h, J in [{:.5}, {:.5}], {} steps",
        avg.max_displacement() / h,
        rep.min_j,
        rep.max_j,
        rep.steps_taken
    );

    // unequal weights inside a pair no longer cancel
    let w = [0.3, 0.1, 0.15, 0.15, 0.15, 0.15];
    let (avg, _) = average_transformations(&family, Some(&w), &opts)?;
    println!("weighted average moves {:.3}h", avg.max_displacement() / h);
    Ok(())
}
