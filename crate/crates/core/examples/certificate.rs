//! The first nonzero eigenspace of the round sphere is spanned by the
//! coordinate functions, so it should certify a sphere-valued map with ell = 3.

use conformal_spectra::certify::harmonic_map_certificate;
use conformal_spectra::*;

fn main() -> Result<()> {
    let mesh = build_sphere_mesh(3)?;
    let w = mesh.vertex_weights();
    let area: f64 = w.iter().sum();
    let mu = DensityField::unconstrained(vec![1.0 / area; w.len()], &w)?;
    let r = solve_smallest(&assemble_stiffness(&mesh)?, &assemble_mass(&mesh, &mu)?, 6, &SolverOptions::default())?;
    let group = r.multiplicity_groups.iter().find(|g| g.contains(&1)).cloned().expect("group of lambda_1");
    let support: Vec<usize> = (0..mesh.num_vertices()).collect();
    let cert = harmonic_map_certificate(&r, group.clone(), &support, 1e-2)?;
    println!("group {group:?}, lambda_1 = {:.5}", r.eigenvalues[1]);
    println!(
        "ell {} defect {:.2e} energy {:.5} mass {:.5} valid {}",
        cert.ell, cert.sphere_defect, cert.dirichlet_energy, cert.mass, cert.valid
    );
    Ok(())
}
