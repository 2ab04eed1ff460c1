//! Uniform-density spectrum of the icosphere against the exact values l(l+1).

use std::f64::consts::PI;

use conformal_spectra::certify::{expand_levels, sphere_spectrum};
use conformal_spectra::*;

fn main() -> Result<()> {
    let level: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mesh = build_sphere_mesh(level)?;
    let w = mesh.vertex_weights();
    let a = assemble_stiffness(&mesh)?;
    let m = assemble_mass(&mesh, &DensityField::unconstrained(vec![1.0; w.len()], &w)?)?;
    let r = solve_smallest(&a, &m, 16, &SolverOptions::default())?;
    let exact = expand_levels(&sphere_spectrum(4), 16);
    println!("level {level}: {} vertices, area {:.6} (4pi = {:.6})", mesh.num_vertices(), mesh.total_area(), 4.0 * PI);
    for (j, (l, e)) in r.eigenvalues.iter().zip(&exact).enumerate() {
        let rel = if *e > 0.0 { (l - e) / e } else { 0.0 };
        println!("{j:>3} {l:>12.6} {e:>6.1} {rel:>+10.2e}");
    }
    println!("groups {:?}", r.multiplicity_groups);
    Ok(())
}
