//! Numerical laboratory for maximizing the k-th Laplace eigenvalue over
//! conformal densities on closed surfaces.
//!
//! The pipeline discretizes a surface ([`surface`]), assembles the
//! density-independent stiffness form and the lumped density-weighted mass
//! form ([`assembly`]), solves the generalized eigenproblem
//! `A u = lambda M u` ([`eigensolver`]), maximizes `lambda_k` over bounded
//! unit-mass densities with a continuation in the density cap
//! ([`density_opt`]), and analyzes the terminal densities for point
//! concentrations ([`concentration`]) and sphere-valued eigenmaps ([`certify`]).

pub mod assembly;
pub mod certify;
pub mod concentration;
pub mod density_opt;
pub mod eigensolver;
pub mod error;
pub mod pipeline;
pub mod sparse;
pub mod suites;
pub mod surface;

pub use assembly::{assemble_mass, assemble_stiffness, DensityField, MassForm, StiffnessForm};
pub use eigensolver::{rayleigh_quotient, solve_dirichlet, solve_smallest, SolverOptions, SpectralResult};
pub use error::{Error, Result};
pub use surface::{build_disk_mesh, build_sphere_mesh, build_torus_mesh, geodesic_ball, SurfaceKind, TriangleMesh};
