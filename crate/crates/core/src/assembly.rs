//! Finite-element forms for `-Lap u = lambda mu u`.
//!
//! The stiffness form is the P1 cotangent Laplacian of the background metric;
//! in two dimensions the Dirichlet energy is conformally invariant, so it
//! never sees the density. All density dependence sits in the lumped mass
//! form `diag(mu_v w_v)`, where `w_v` is one third of the area of the
//! triangles around vertex `v`.

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::surface::{dot, TriangleMesh};

/// Cotangent stiffness matrix over mesh vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessForm {
    pub matrix: CsrMatrix,
}

impl StiffnessForm {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Discrete Dirichlet energy `u^T A u`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        self.matrix.quadratic_form(u)
    }
}

/// Per-vertex conformal density with its box bounds and lumped mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub values: Vec<f64>,
    pub lower_bound: f64,
    pub cap: f64,
    /// `sum_v mu_v w_v`
    pub mass: f64,
}

impl DensityField {
    /// Wraps raw values; `mass` is computed with the given vertex weights.
    /// Values are not projected or checked against the bounds.
    pub fn new(values: Vec<f64>, lower_bound: f64, cap: f64, weights: &[f64]) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(Error::SizeMismatch { expected: weights.len(), got: values.len() });
        }
        let mass = weighted_sum(&values, weights);
        Ok(DensityField { values, lower_bound, cap, mass })
    }

    /// Unbounded density (lower bound 0, infinite cap) from raw values.
    pub fn unconstrained(values: Vec<f64>, weights: &[f64]) -> Result<Self> {
        Self::new(values, 0.0, f64::INFINITY, weights)
    }

    /// Constant density `1 / area`.
    pub fn uniform(weights: &[f64], lower_bound: f64, cap: f64) -> Self {
        let area: f64 = weights.iter().sum();
        let values = vec![1.0 / area; weights.len()];
        let mass = weighted_sum(&values, weights);
        DensityField { values, lower_bound, cap, mass }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Bounds hold up to `slack`.
    pub fn within_bounds(&self, slack: f64) -> bool {
        self.values
            .iter()
            .all(|&m| m >= self.lower_bound - slack && m <= self.cap + slack)
    }

    pub fn has_negative_part(&self) -> bool {
        self.values.iter().any(|&m| m < 0.0)
    }
}

pub(crate) fn weighted_sum(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(v, w)| v * w).sum()
}

/// Lumped (diagonal) mass form `diag(mu_v w_v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassForm {
    pub diagonal: Vec<f64>,
}

impl MassForm {
    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal.iter().sum()
    }

    /// `u^T M v`
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.diagonal.iter().zip(u).zip(v).map(|((m, a), b)| m * a * b).sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.diagonal.iter().all(|&m| m >= 0.0)
    }

    /// Multiplies every entry by `c` (used for the scale-equivariance checks).
    pub fn scaled(&self, c: f64) -> MassForm {
        MassForm { diagonal: self.diagonal.iter().map(|m| m * c).collect() }
    }
}

/// P1 element stiffness `K_ij = (e_i . e_j) / (4 area)` with `e_i` the edge
/// opposite corner `i`; off-diagonal entries equal `-cot(theta_k) / 2`.
fn element_stiffness(mesh: &TriangleMesh, t: usize) -> [[f64; 3]; 3] {
    let p = mesh.triangle_corners(t);
    let area = mesh.triangle_areas[t];
    let e = [
        [p[2][0] - p[1][0], p[2][1] - p[1][1], p[2][2] - p[1][2]],
        [p[0][0] - p[2][0], p[0][1] - p[2][1], p[0][2] - p[2][2]],
        [p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]],
    ];
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = dot(&e[i], &e[j]) / (4.0 * area);
        }
    }
    k
}

/// Assembles the cotangent stiffness form. Triangles are visited in index
/// order, so the result is bit-reproducible.
pub fn assemble_stiffness(mesh: &TriangleMesh) -> Result<StiffnessForm> {
    let n = mesh.num_vertices();
    let mut triplets = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.triangle_areas[t];
        if !(area > f64::EPSILON * 1e-6) {
            return Err(Error::DegenerateTriangle { triangle: t, area });
        }
        let k = element_stiffness(mesh, t);
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((tri[i], tri[j], k[i][j]));
            }
        }
    }
    Ok(StiffnessForm { matrix: CsrMatrix::from_triplets(n, &triplets) })
}

/// Assembles `diag(mu_v w_v)` for the mesh's lumped vertex weights.
pub fn assemble_mass(mesh: &TriangleMesh, density: &DensityField) -> Result<MassForm> {
    assemble_mass_with_weights(&mesh.vertex_weights(), density)
}

pub fn assemble_mass_with_weights(weights: &[f64], density: &DensityField) -> Result<MassForm> {
    if density.len() != weights.len() {
        return Err(Error::SizeMismatch { expected: weights.len(), got: density.len() });
    }
    Ok(MassForm {
        diagonal: density.values.iter().zip(weights).map(|(m, w)| m * w).collect(),
    })
}

/// Homogeneous Dirichlet restriction of a submesh: eliminates the boundary
/// rows and columns and keeps the interior vertices.
#[derive(Debug, Clone)]
pub struct DirichletRestriction {
    /// Interior vertices, as submesh-local indices.
    pub interior: Vec<usize>,
    /// Number of vertices of the submesh.
    pub submesh_vertices: usize,
}

impl DirichletRestriction {
    pub fn dim(&self) -> usize {
        self.interior.len()
    }

    pub fn stiffness(&self, full: &StiffnessForm) -> StiffnessForm {
        StiffnessForm { matrix: full.matrix.principal_submatrix(&self.interior) }
    }

    pub fn mass(&self, full: &MassForm) -> MassForm {
        MassForm { diagonal: self.vector(&full.diagonal) }
    }

    pub fn vector(&self, v: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&i| v[i]).collect()
    }

    /// Extends an interior vector by zero on the boundary.
    pub fn prolong(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.submesh_vertices];
        for (&i, &x) in self.interior.iter().zip(v) {
            out[i] = x;
        }
        out
    }
}

/// Builds the Dirichlet restriction for a submesh. A closed mesh restricts to
/// the identity.
pub fn restrict_to_submesh(submesh: &TriangleMesh) -> Result<DirichletRestriction> {
    let mut on_boundary = vec![false; submesh.num_vertices()];
    for &b in &submesh.boundary_vertices {
        on_boundary[b] = true;
    }
    let interior: Vec<usize> = (0..submesh.num_vertices()).filter(|&v| !on_boundary[v]).collect();
    if interior.is_empty() {
        return Err(Error::DegenerateDomain("submesh has no interior vertices".into()));
    }
    Ok(DirichletRestriction { interior, submesh_vertices: submesh.num_vertices() })
}

/// Everything needed for a Dirichlet eigen-solve on a submesh.
#[derive(Debug, Clone)]
pub struct DirichletProblem {
    pub restriction: DirichletRestriction,
    pub stiffness: StiffnessForm,
    pub mass: MassForm,
}

impl DirichletProblem {
    /// `density` lives on the submesh vertices.
    pub fn new(submesh: &TriangleMesh, density: &[f64]) -> Result<Self> {
        if density.len() != submesh.num_vertices() {
            return Err(Error::SizeMismatch { expected: submesh.num_vertices(), got: density.len() });
        }
        let restriction = restrict_to_submesh(submesh)?;
        let full = assemble_stiffness(submesh)?;
        let weights = submesh.vertex_weights();
        let mass = MassForm { diagonal: density.iter().zip(&weights).map(|(m, w)| m * w).collect() };
        Ok(DirichletProblem {
            stiffness: restriction.stiffness(&full),
            mass: restriction.mass(&mass),
            restriction,
        })
    }

    /// Pulls a parent-mesh density onto the submesh via its vertex lookup.
    pub fn from_parent_density(submesh: &TriangleMesh, parent_density: &[f64]) -> Result<Self> {
        let parent = submesh
            .parent_vertex
            .as_ref()
            .ok_or_else(|| Error::Precondition("submesh carries no parent lookup".into()))?;
        let local: Vec<f64> = parent.iter().map(|&p| parent_density[p]).collect();
        Self::new(submesh, &local)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{build_sphere_mesh, build_torus_mesh, geodesic_ball};
    use std::f64::consts::PI;

    /// Dirichlet energy of the P1 interpolant, recomputed triangle by triangle
    /// from the gradient in a local orthonormal frame.
    fn energy_by_gradients(mesh: &TriangleMesh, u: &[f64]) -> f64 {
        let mut total = 0.0;
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let p = mesh.triangle_corners(t);
            let e1 = [p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]];
            let e2 = [p[2][0] - p[0][0], p[2][1] - p[0][1], p[2][2] - p[0][2]];
            let l1 = dot(&e1, &e1).sqrt();
            let x = [e1[0] / l1, e1[1] / l1, e1[2] / l1];
            let a2 = dot(&e2, &x);
            let yv = [e2[0] - a2 * x[0], e2[1] - a2 * x[1], e2[2] - a2 * x[2]];
            let b2 = dot(&yv, &yv).sqrt();
            // u(p) = u0 + g . (local coords); solve for g
            let du1 = u[tri[1]] - u[tri[0]];
            let du2 = u[tri[2]] - u[tri[0]];
            let gx = du1 / l1;
            let gy = (du2 - gx * a2) / b2;
            total += 0.5 * l1 * b2 * (gx * gx + gy * gy);
        }
        total
    }

    #[test]
    fn constants_in_kernel() {
        let mesh = build_sphere_mesh(3).unwrap();
        let a = assemble_stiffness(&mesh).unwrap();
        let ones = vec![1.0; mesh.num_vertices()];
        assert!(a.energy(&ones).abs() < 1e-12);
        let scale = a.matrix.diagonal().iter().cloned().fold(0.0, f64::max);
        for r in a.matrix.mul_vec(&ones) {
            assert!(r.abs() <= 1e-12 * scale);
        }
        assert!(a.matrix.max_asymmetry() == 0.0);
    }

    #[test]
    fn sphere_coordinate_energy() {
        let mesh = build_sphere_mesh(4).unwrap();
        let a = assemble_stiffness(&mesh).unwrap();
        let z: Vec<f64> = mesh.vertices.iter().map(|p| p[2]).collect();
        let exact = 8.0 * PI / 3.0;
        assert!((a.energy(&z) - exact).abs() / exact < 0.01);
    }

    #[test]
    fn torus_sine_energy() {
        let mesh = build_torus_mesh(64, 64, 1.0, 1.0).unwrap();
        let a = assemble_stiffness(&mesh).unwrap();
        let u: Vec<f64> = mesh.vertices.iter().map(|p| (2.0 * PI * p[0]).sin()).collect();
        let exact = 2.0 * PI * PI;
        assert!((a.energy(&u) - exact).abs() / exact < 0.01);
    }

    #[test]
    fn galerkin_consistency() {
        for mesh in [build_sphere_mesh(3).unwrap(), build_torus_mesh(9, 7, 1.3, 0.8).unwrap()] {
            let a = assemble_stiffness(&mesh).unwrap();
            let u: Vec<f64> = (0..mesh.num_vertices()).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
            let e1 = a.energy(&u);
            let e2 = energy_by_gradients(&mesh, &u);
            assert!((e1 - e2).abs() <= 1e-12 * e2.abs().max(1.0), "{e1} vs {e2}");
        }
    }

    #[test]
    fn uniform_mass_trace_is_one() {
        let mesh = build_sphere_mesh(3).unwrap();
        let w = mesh.vertex_weights();
        let mu = DensityField::uniform(&w, 0.0, 10.0);
        let m = assemble_mass(&mesh, &mu).unwrap();
        assert!((m.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_indicator_mass() {
        let mesh = build_torus_mesh(8, 8, 1.0, 1.0).unwrap();
        let w = mesh.vertex_weights();
        let values: Vec<f64> = mesh.vertices.iter().map(|p| if p[0] < 0.49 { 2.0 } else { 0.0 }).collect();
        let mu = DensityField::unconstrained(values, &w).unwrap();
        let m = assemble_mass(&mesh, &mu).unwrap();
        assert!((m.trace() - 1.0).abs() < 1e-12);
        assert_eq!(m.diagonal.iter().filter(|&&d| d == 0.0).count(), 32);
        assert!(m.is_nonnegative());
    }

    #[test]
    fn mass_size_mismatch() {
        let mesh = build_sphere_mesh(1).unwrap();
        let mu = DensityField::unconstrained(vec![1.0; 3], &[1.0; 3]).unwrap();
        assert!(matches!(assemble_mass(&mesh, &mu), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn closed_mesh_restricts_to_identity() {
        let mesh = build_sphere_mesh(1).unwrap();
        let r = restrict_to_submesh(&mesh).unwrap();
        assert_eq!(r.interior, (0..mesh.num_vertices()).collect::<Vec<_>>());
        let a = assemble_stiffness(&mesh).unwrap();
        assert_eq!(r.stiffness(&a), a);
    }

    #[test]
    fn all_boundary_ball_rejected() {
        // a single triangle: every vertex is on the boundary
        let mesh = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
            crate::surface::SurfaceKind::Planar,
        )
        .unwrap();
        assert!(matches!(restrict_to_submesh(&mesh), Err(Error::DegenerateDomain(_))));
    }

    #[test]
    fn ball_restriction_keeps_parent_weights() {
        let mesh = build_torus_mesh(32, 32, 1.0, 1.0).unwrap();
        let ball = geodesic_ball(&mesh, 5, 0.25).unwrap();
        let w_parent = mesh.vertex_weights();
        let w_ball = ball.vertex_weights();
        let r = restrict_to_submesh(&ball).unwrap();
        let parent = ball.parent_vertex.as_ref().unwrap();
        for &i in &r.interior {
            assert!((w_ball[i] - w_parent[parent[i]]).abs() < 1e-15);
        }
    }
}
