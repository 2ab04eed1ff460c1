//! Dirichlet eigenvalues of the unit disk next to squared Bessel zeros, and
//! the same problem on shrinking geodesic balls of the sphere.

use conformal_spectra::assembly::DirichletProblem;
use conformal_spectra::certify::disk_dirichlet_spectrum;
use conformal_spectra::surface::nearest_vertex;
use conformal_spectra::*;

fn main() -> Result<()> {
    let opts = SolverOptions::default();
    let disk = build_disk_mesh(1.0, 64)?;
    let p = DirichletProblem::new(&disk, &vec![1.0; disk.num_vertices()])?;
    let r = solve_dirichlet(&p, 6, &opts)?;
    let exact = disk_dirichlet_spectrum(1.0, 6)?;
    println!("disk, {} vertices", disk.num_vertices());
    for (l, e) in r.eigenvalues.iter().zip(&exact) {
        println!("  {l:>10.5} {e:>10.5} {:>+9.2e}", (l - e) / e);
    }

    let sphere = build_sphere_mesh(4)?;
    let north = nearest_vertex(&sphere, &[0.0, 0.0, 1.0]);
    println!("sphere balls around vertex {north}");
    for eps in [0.8, 0.6, 0.4] {
        let ball = geodesic_ball(&sphere, north, eps)?;
        let p = DirichletProblem::new(&ball, &vec![1.0; ball.num_vertices()])?;
        let r = solve_dirichlet(&p, 1, &opts)?;
        println!("  eps {eps:.2}: lambda_1 = {:.4}, eps^2 lambda_1 = {:.4}", r.eigenvalues[0], eps * eps * r.eigenvalues[0]);
    }
    Ok(())
}
