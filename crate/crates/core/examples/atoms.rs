//! Atom detection on synthetic concentrating densities: two bumps whose mass
//! survives every cap stage, plus a uniform control.

use conformal_spectra::concentration::{detect_atoms, synthetic_bumps, DetectorOptions, StageDensity};
use conformal_spectra::surface::nearest_vertex;
use conformal_spectra::*;

fn main() -> Result<()> {
    let mesh = build_sphere_mesh(5)?;
    let a = nearest_vertex(&mesh, &[0.0, 0.0, 1.0]);
    let b = nearest_vertex(&mesh, &[1.0, 0.0, 0.0]);
    let edge = mesh.mean_edge_length();
    let stages: Vec<StageDensity> = [4.0, 8.0, 16.0, 32.0]
        .iter()
        .map(|&cap| {
            let values = synthetic_bumps(&mesh, &[(a, 0.3), (b, 0.2)], 1.5 * edge).unwrap();
            StageDensity { cap, values }
        })
        .collect();
    let dec = detect_atoms(&mesh, &stages, 2, &DetectorOptions::default())?;
    println!("K = {}, regular area {:.4}", dec.atom_count, dec.regular_area);
    for atom in &dec.atoms {
        println!("  vertex {:>6} weight {:.4} stage masses {:?}", atom.vertex, atom.weight, atom.stage_masses);
    }
    for w in &dec.warnings {
        println!("  warning: {w}");
    }

    let flat = vec![1.0 / mesh.total_area(); mesh.num_vertices()];
    let uniform: Vec<StageDensity> = [4.0, 8.0].iter().map(|&cap| StageDensity { cap, values: flat.clone() }).collect();
    let dec = detect_atoms(&mesh, &uniform, 2, &DetectorOptions::default())?;
    println!("uniform control: K = {}", dec.atom_count);
    Ok(())
}
