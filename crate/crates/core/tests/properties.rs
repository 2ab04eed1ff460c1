use conformal_spectra::assembly::DirichletProblem;
use conformal_spectra::concentration::{detect_atoms, singular_spectrum, synthetic_bumps, DetectorOptions, StageDensity};
use conformal_spectra::surface::nearest_vertex;
use conformal_spectra::*;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform_problem(level: usize) -> (TriangleMesh, StiffnessForm, MassForm) {
    let mesh = build_sphere_mesh(level).unwrap();
    let w = mesh.vertex_weights();
    let a = assemble_stiffness(&mesh).unwrap();
    let mu = DensityField::unconstrained(vec![1.0; w.len()], &w).unwrap();
    let m = assemble_mass(&mesh, &mu).unwrap();
    (mesh, a, m)
}

/// Extreme Ritz values of the pencil restricted to span(vs).
fn ritz_range(a: &StiffnessForm, m: &MassForm, vs: &[Vec<f64>]) -> (f64, f64) {
    let d = vs.len();
    let mut am = DMatrix::zeros(d, d);
    let mut mm = DMatrix::zeros(d, d);
    let av: Vec<Vec<f64>> = vs.iter().map(|v| a.matrix.mul_vec(v)).collect();
    for i in 0..d {
        for j in 0..d {
            am[(i, j)] = vs[i].iter().zip(&av[j]).map(|(x, y)| x * y).sum::<f64>();
            mm[(i, j)] = m.inner(&vs[i], &vs[j]);
        }
    }
    // M-orthonormalize through the Cholesky factor of the Gram matrix
    let l = mm.cholesky().expect("independent vectors").l();
    let li = l.try_inverse().unwrap();
    let reduced = &li * am * li.transpose();
    let e = SymmetricEigen::new((&reduced + reduced.transpose()) * 0.5).eigenvalues;
    (e.min(), e.max())
}

#[test]
fn courant_hilbert_bounds() {
    let (_, a, m) = uniform_problem(3);
    let r = solve_smallest(&a, &m, 8, &SolverOptions::default()).unwrap();
    let n = m.dim();
    let total: f64 = m.diagonal.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..10 {
        let vs: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mean = m.inner(&v, &vec![1.0; n]) / total;
                v.iter_mut().for_each(|x| *x -= mean);
                v
            })
            .collect();
        let (lo, hi) = ritz_range(&a, &m, &vs);
        assert!(hi >= r.eigenvalues[5] * (1.0 - 1e-9), "max Ritz {hi} below lambda_5 {}", r.eigenvalues[5]);
        assert!(lo >= r.eigenvalues[1] * (1.0 - 1e-9));
    }
    let (lo, hi) = ritz_range(&a, &m, &r.eigenvectors[1..6]);
    assert!((hi - r.eigenvalues[5]).abs() < 1e-8 * r.eigenvalues[5]);
    assert!((lo - r.eigenvalues[1]).abs() < 1e-8 * r.eigenvalues[1]);
}

#[test]
fn scaling_the_density_scales_the_spectrum() {
    let (_, a, m) = uniform_problem(3);
    let opts = SolverOptions::default();
    let base = solve_smallest(&a, &m, 9, &opts).unwrap();
    for c in [0.25, 3.0] {
        let scaled = solve_smallest(&a, &m.scaled(c), 9, &opts).unwrap();
        for (x, y) in base.eigenvalues.iter().zip(&scaled.eigenvalues).skip(1) {
            assert!((y * c - x).abs() < 1e-7 * x, "{y} * {c} vs {x}");
        }
        assert_eq!(base.multiplicity_groups, scaled.multiplicity_groups);
        // each scaled eigenvector lies in the matching unscaled eigenspace
        for g in &base.multiplicity_groups[1..] {
            for j in g.clone() {
                let u = &scaled.eigenvectors[j];
                let norm2 = m.inner(u, u);
                let captured: f64 = g.clone().map(|i| m.inner(u, &base.eigenvectors[i]).powi(2)).sum();
                assert!((captured / norm2 - 1.0).abs() < 1e-6, "eigenvector {j} leaves its eigenspace");
            }
        }
    }
}

#[test]
fn dirichlet_eigenvalue_grows_as_the_ball_shrinks() {
    let mesh = build_sphere_mesh(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let density: Vec<f64> = (0..mesh.num_vertices()).map(|_| rng.random_range(0.5..2.0)).collect();
    let opts = SolverOptions::default();
    for center in [0, 17, 600] {
        let lambdas: Vec<f64> = [0.9, 0.7, 0.5]
            .iter()
            .map(|&eps| {
                let ball = geodesic_ball(&mesh, center, eps).unwrap();
                let p = DirichletProblem::from_parent_density(&ball, &density).unwrap();
                solve_dirichlet(&p, 1, &opts).unwrap().eigenvalues[0]
            })
            .collect();
        assert!(lambdas.windows(2).all(|p| p[0] <= p[1]), "center {center}: {lambdas:?}");
    }
}

#[test]
fn geodesic_balls_are_valid_meshes_with_boundary() {
    let sphere = build_sphere_mesh(3).unwrap();
    let torus = build_torus_mesh(24, 24, 1.0, 1.0).unwrap();
    for (mesh, radii) in [(&sphere, [0.3, 1.0, 2.5]), (&torus, [0.1, 0.25, 0.45])] {
        for c in [0, mesh.num_vertices() / 3, mesh.num_vertices() - 1] {
            for r in radii {
                let ball = geodesic_ball(mesh, c, r).unwrap();
                ball.validate().unwrap();
                assert!(!ball.boundary_vertices.is_empty());
                assert_eq!(ball.parent_vertex.as_ref().unwrap().len(), ball.num_vertices());
            }
        }
    }
}

#[test]
fn mass_form_kernel_is_the_zero_set() {
    let mesh = build_sphere_mesh(2).unwrap();
    let w = mesh.vertex_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let values: Vec<f64> = (0..w.len()).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.1..3.0) }).collect();
    let m = assemble_mass(&mesh, &DensityField::unconstrained(values.clone(), &w).unwrap()).unwrap();
    assert!(m.is_nonnegative());
    for (d, v) in m.diagonal.iter().zip(&values) {
        assert_eq!(*d == 0.0, *v == 0.0);
    }
}

#[test]
fn stiffness_does_not_see_the_density() {
    let (mesh, a, m) = uniform_problem(2);
    let w = mesh.vertex_weights();
    let other: Vec<f64> = mesh.vertices.iter().map(|p| 1.0 + p[2] * p[2]).collect();
    let m2 = assemble_mass(&mesh, &DensityField::unconstrained(other, &w).unwrap()).unwrap();
    let u: Vec<f64> = mesh.vertices.iter().map(|p| p[0] + 0.3 * p[1] * p[2]).collect();
    let q1 = rayleigh_quotient(&a, &m, &u).unwrap() * m.inner(&u, &u);
    let q2 = rayleigh_quotient(&a, &m2, &u).unwrap() * m2.inner(&u, &u);
    assert!((q1 - q2).abs() < 1e-12 * q1.abs());
    assert_eq!(a.matrix, assemble_stiffness(&mesh).unwrap().matrix);
}

#[test]
fn decomposition_conserves_mass() {
    let mesh = build_sphere_mesh(4).unwrap();
    let edge = mesh.mean_edge_length();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..8 {
        let count = rng.random_range(0..3);
        let bumps: Vec<(usize, f64)> =
            (0..count).map(|_| (rng.random_range(0..mesh.num_vertices()), rng.random_range(0.1..0.3))).collect();
        let values = synthetic_bumps(&mesh, &bumps, 1.5 * edge).unwrap();
        let stages: Vec<StageDensity> = [4.0, 16.0].iter().map(|&cap| StageDensity { cap, values: values.clone() }).collect();
        let dec = detect_atoms(&mesh, &stages, 2, &DetectorOptions::default()).unwrap();
        let total: f64 = dec.weights().iter().sum::<f64>() + dec.regular_area;
        assert!((total - 1.0).abs() < 1e-8, "sum c + A_r = {total}");
    }
}

#[test]
fn singular_table_is_monotone_in_the_radius() {
    let mesh = build_sphere_mesh(4).unwrap();
    let north = nearest_vertex(&mesh, &[0.0, 0.0, 1.0]);
    let values = synthetic_bumps(&mesh, &[(north, 0.4)], 1.5 * mesh.mean_edge_length()).unwrap();
    let stages: Vec<StageDensity> = [8.0, 16.0].iter().map(|&cap| StageDensity { cap, values: values.clone() }).collect();
    let s = singular_spectrum(&mesh, north, &[0.6, 0.45, 0.3], &stages, None, &SolverOptions::default()).unwrap();
    assert!(s.monotone, "{:?}", s.table);
    for stage in &s.table {
        for m in 0..stage[0].len() {
            assert!(stage.windows(2).all(|p| p[0][m] <= p[1][m]));
        }
    }
}
