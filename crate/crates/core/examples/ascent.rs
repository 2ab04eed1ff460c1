//! Cap continuation for lambda_k on a coarse sphere.
//!
//! `cargo run --release --example ascent -- <level> <k> <budget>`

use std::f64::consts::PI;

use conformal_spectra::density_opt::{continuation, AscentOptions, SpectralObjective};
use conformal_spectra::*;

fn main() -> Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let level = args.first().copied().unwrap_or(2);
    let k = args.get(1).copied().unwrap_or(2);
    let budget = args.get(2).copied().unwrap_or(40);

    let mesh = build_sphere_mesh(level)?;
    let obj = SpectralObjective::new(assemble_stiffness(&mesh)?, mesh.vertex_weights(), k)?;
    let opts = AscentOptions { budget, ..Default::default() };
    let (mu, trace) = continuation(&obj, 0.0, &[4.0, 8.0, 16.0], None, &opts)?;
    for s in &trace.stages {
        println!(
            "cap {:>4}: {:.4} pi -> {:.4} pi in {} steps ({})",
            s.cap,
            s.start_lambda / PI,
            s.best_lambda / PI,
            s.iterations,
            s.stop_reason
        );
    }
    let peak = mu.values.iter().cloned().fold(0.0, f64::max);
    println!("peak density {peak:.3}, 8 pi k would be {:.1} pi", 8.0 * k as f64);
    Ok(())
}
