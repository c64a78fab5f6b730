//! Twists every slice of a volume of a turning object, registers the twisted
//! volume back in 3D and compares the recovered map with the known slice
//! rotations.
//!
//! Usage: `twisted_volume [n] [twist_max]`

use std::time::Instant;

use morphokit::scenarios::{twist_study, TwistConfig};

fn main() -> morphokit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = TwistConfig::default();
    if let Some(n) = args.get(1).and_then(|s| s.parse().ok()) {
        cfg.n = n;
    }
    if let Some(t) = args.get(2).and_then(|s| s.parse().ok()) {
        cfg.twist_max = t;
    }
    let start = Instant::now();
    let s = twist_study(&cfg)?;
    let r = &s.report;
    println!("{}³ volume, twist up to {} rad", cfg.n, cfg.twist_max);
    println!("SSD {:.4} -> {:.4} ({:.1}x)", r.ssd_initial, r.ssd_final, r.ssd_initial / r.ssd_final);
    println!(
        "{} steps, min J {:.3}, {:?}",
        r.registration.steps_taken, r.registration.min_j, r.registration.termination
    );
    println!("max map error {:.3}h", r.max_map_error);
    for (k, e) in r.slice_errors.iter().enumerate().step_by((cfg.n / 8).max(1)) {
        println!("  slice {k:3}: {e:.3}h");
    }
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
