//! Smallest eigenpairs of the pencil `A u = lambda M u` with `A` the sparse
//! stiffness form and `M` a diagonal mass form.
//!
//! The solver runs a locally optimal block iteration on the shift-inverted
//! operator `T = (A + sigma M)^{-1} M`, which is self-adjoint in the
//! `(A + sigma M)` inner product. Each step builds the trial space
//! `[X, W, P]` from the current Ritz block `X`, the shift-invert directions
//! `W = T X - X Theta` and the previous search directions `P`, and keeps the
//! Ritz vectors of largest `theta = 1 / (lambda + sigma)`.
//!
//! Vertices with zero mass never enter the Rayleigh quotient: every image of
//! `T` satisfies `(A u)_v = 0` there, so eigenvectors come out harmonically
//! extended across the zero set without forming a Schur complement.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{DirichletProblem, MassForm, StiffnessForm};
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, EnvelopeCholesky};

/// Relative gap below which neighbouring eigenvalues form one multiplicity group.
pub const DEFAULT_CLUSTER_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Target normwise backward error `|A u - lambda M u| / ((|A| + |lambda| |M|) |u|)`.
    pub tol: f64,
    pub max_iterations: usize,
    /// Extra block vectors beyond the requested count.
    pub guard: usize,
    /// Spectral shift; `None` picks `0.1 * 4 pi / |trace M|`.
    pub shift: Option<f64>,
    pub seed: u64,
    /// Accept sign-changing mass forms.
    pub allow_indefinite: bool,
    pub cluster_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iterations: 400,
            guard: 4,
            shift: None,
            seed: 0x5eed,
            allow_indefinite: false,
            cluster_tol: DEFAULT_CLUSTER_TOL,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Mass-normalized (`u^T M u = 1`), one vector per eigenvalue.
    pub eigenvectors: Vec<Vec<f64>>,
    /// `|A u - lambda M u| / |u|`.
    pub residuals: Vec<f64>,
    /// Scale-free residuals checked against `tolerance`.
    pub backward_errors: Vec<f64>,
    pub multiplicity_groups: Vec<Range<usize>>,
    pub tolerance: f64,
    pub iterations: usize,
    pub shift: f64,
}

impl SpectralResult {
    /// Multiplicity group containing index `k`.
    pub fn group_of(&self, k: usize) -> Option<Range<usize>> {
        self.multiplicity_groups.iter().find(|g| g.contains(&k)).cloned()
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// CSV dump: `vertex,u0,u1,...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.len()).map(|i| format!("u{i}")).collect();
        writeln!(out, "vertex,{}", header.join(","))?;
        let n = self.eigenvectors.first().map_or(0, Vec::len);
        for v in 0..n {
            let row: Vec<String> = self.eigenvectors.iter().map(|u| format!("{:.17e}", u[v])).collect();
            writeln!(out, "{v},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Groups consecutive ascending values whose relative gap is below `tol`.
pub fn cluster_eigenvalues(values: &[f64], tol: f64) -> Vec<Range<usize>> {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        let split = i == values.len() || {
            let (a, b) = (values[i - 1], values[i]);
            (b - a) > tol * a.abs().max(b.abs()).max(floor)
        };
        if split {
            groups.push(start..i);
            start = i;
        }
    }
    groups
}

/// `u^T A u / u^T M u`.
pub fn rayleigh_quotient(stiffness: &StiffnessForm, mass: &MassForm, u: &[f64]) -> Result<f64> {
    if u.len() != stiffness.dim() || u.len() != mass.dim() {
        return Err(Error::SizeMismatch { expected: stiffness.dim(), got: u.len() });
    }
    let den = mass.inner(u, u);
    let scale: f64 = mass.diagonal.iter().map(|m| m.abs()).sum::<f64>() * u.iter().map(|x| x * x).fold(0.0, f64::max);
    if !(den.abs() > 1e-300) || den.abs() <= 1e-14 * scale {
        return Err(Error::ZeroMassNorm);
    }
    Ok(stiffness.energy(u) / den)
}

/// The `count` smallest eigenpairs of `A u = lambda M u` on a closed mesh.
pub fn solve_smallest(
    stiffness: &StiffnessForm,
    mass: &MassForm,
    count: usize,
    opts: &SolverOptions,
) -> Result<SpectralResult> {
    solve_generalized(&stiffness.matrix, &mass.diagonal, count, opts, None)
}

/// As [`solve_smallest`], seeding the block with previous eigenvectors.
pub fn solve_smallest_warm(
    stiffness: &StiffnessForm,
    mass: &MassForm,
    count: usize,
    opts: &SolverOptions,
    warm: &[Vec<f64>],
) -> Result<SpectralResult> {
    solve_generalized(&stiffness.matrix, &mass.diagonal, count, opts, Some(warm))
}

/// Dirichlet eigenpairs on a submesh; eigenvectors are prolonged by zero to
/// the whole submesh.
pub fn solve_dirichlet(problem: &DirichletProblem, count: usize, opts: &SolverOptions) -> Result<SpectralResult> {
    let mut result = solve_generalized(&problem.stiffness.matrix, &problem.mass.diagonal, count, opts, None)?;
    result.eigenvectors = result
        .eigenvectors
        .iter()
        .map(|u| problem.restriction.prolong(u))
        .collect();
    Ok(result)
}

fn validate_options(opts: &SolverOptions) -> Result<()> {
    if !(opts.tol > 0.0 && opts.tol <= 1e-2) {
        return Err(Error::Configuration(format!("solver tolerance {} outside (0, 1e-2]", opts.tol)));
    }
    if opts.max_iterations == 0 {
        return Err(Error::Configuration("max_iterations must be positive".into()));
    }
    Ok(())
}

fn scale_rows(m: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for j in 0..out.ncols() {
        for (o, mi) in out.column_mut(j).iter_mut().zip(m) {
            *o *= mi;
        }
    }
    out
}

/// Orthonormalizes the columns of `z` in the inner product whose images are
/// `bz`, dropping numerically dependent directions. Two passes.
fn orthonormalize(mut z: DMatrix<f64>, mut bz: DMatrix<f64>, drop_tol: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    for pass in 0..2 {
        if z.ncols() == 0 {
            break;
        }
        let mut g = z.transpose() * &bz;
        g = (&g + g.transpose()) * 0.5;
        let eig = SymmetricEigen::new(g);
        let gmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
        let cut = if pass == 0 { drop_tol * gmax } else { 1e-14 * gmax };
        let keep: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&i| eig.eigenvalues[i] > cut && eig.eigenvalues[i] > 0.0)
            .collect();
        let mut s = DMatrix::zeros(z.ncols(), keep.len());
        for (c, &i) in keep.iter().enumerate() {
            let scale = 1.0 / eig.eigenvalues[i].sqrt();
            for r in 0..z.ncols() {
                s[(r, c)] = eig.eigenvectors[(r, i)] * scale;
            }
        }
        z = &z * &s;
        bz = &bz * &s;
    }
    (z, bz)
}

fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.iter().map(|b| b.nrows()).max().unwrap_or(0);
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, total);
    let mut c = 0;
    for b in blocks {
        if b.ncols() > 0 {
            out.columns_mut(c, b.ncols()).copy_from(*b);
            c += b.ncols();
        }
    }
    out
}

/// Core solver on a raw pencil.
pub fn solve_generalized(
    a: &CsrMatrix,
    mass: &[f64],
    count: usize,
    opts: &SolverOptions,
    warm: Option<&[Vec<f64>]>,
) -> Result<SpectralResult> {
    validate_options(opts)?;
    let n = a.dim();
    if mass.len() != n {
        return Err(Error::SizeMismatch { expected: n, got: mass.len() });
    }
    if count == 0 {
        return Err(Error::Precondition("eigenpair count must be positive".into()));
    }
    let negative = mass.iter().any(|&m| m < 0.0);
    if negative && !opts.allow_indefinite {
        return Err(Error::Configuration(
            "mass form has negative entries; enable the indefinite (paper-mode) path".into(),
        ));
    }
    let support = mass.iter().filter(|&&m| m != 0.0).count();
    if count > support {
        return Err(Error::Precondition(format!(
            "requested {count} eigenpairs but the density is supported on {support} vertices"
        )));
    }
    let p = (count + opts.guard).min(support).min(n);

    let abs_trace: f64 = mass.iter().map(|m| m.abs()).sum();
    let mut sigma = opts.shift.unwrap_or(0.1 * 4.0 * PI / abs_trace);
    let mut chol = None;
    for _ in 0..16 {
        match EnvelopeCholesky::factor(&a.add_diagonal(sigma, mass)) {
            Ok(c) => {
                chol = Some(c);
                break;
            }
            Err(Error::NotPositiveDefinite { .. }) if negative => sigma *= 0.25,
            Err(e) => return Err(e),
        }
    }
    let chol = chol.ok_or_else(|| Error::Configuration("no positive definite shift found for the pencil".into()))?;

    // normwise backward error scales
    let a_norm = (0..n).map(|i| a.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let m_norm = mass.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    let apply_b = |x: &DMatrix<f64>| -> DMatrix<f64> { a.mul_dense(x) + scale_rows(mass, x) * sigma };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = DMatrix::zeros(n, p);
    let mut filled = 0;
    if let Some(w) = warm {
        for v in w.iter().take(p) {
            if v.len() == n {
                x.column_mut(filled).copy_from_slice(v);
                filled += 1;
            }
        }
    }
    for j in filled..p {
        for i in 0..n {
            x[(i, j)] = rng.random_range(-1.0..1.0);
        }
    }
    // one shift-invert sweep so random columns start inside the range of T
    if filled < p {
        let mx = scale_rows(mass, &x.columns(filled, p - filled).into_owned());
        let tx = chol.solve_dense(&mx);
        x.columns_mut(filled, p - filled).copy_from(&tx);
    }
    let bx = apply_b(&x);
    let (mut x, mut bx) = orthonormalize(x, bx, 1e-12);
    let mut p_blk = DMatrix::<f64>::zeros(n, 0);
    let mut bp_blk = DMatrix::<f64>::zeros(n, 0);

    let mut theta = vec![0.0; 0];
    let mut backward = vec![f64::INFINITY; count];
    let mut residuals = vec![f64::INFINITY; count];
    let mut iterations = 0;
    let mut converged = false;

    for it in 1..=opts.max_iterations {
        iterations = it;
        let mx = scale_rows(mass, &x);
        let tx = chol.solve_dense(&mx);
        // X^T B T X = X^T M X
        let xmx = x.transpose() * &mx;
        let mut w = &tx - &x * &xmx;
        let mut bw = apply_b(&w);
        for _ in 0..2 {
            let c = x.transpose() * &bw;
            w -= &x * &c;
            bw -= &bx * &c;
            if p_blk.ncols() > 0 {
                let c = p_blk.transpose() * &bw;
                w -= &p_blk * &c;
                bw -= &bp_blk * &c;
            }
        }
        // normalize and drop converged directions
        let mut keep = Vec::new();
        for j in 0..w.ncols() {
            let nb = w.column(j).dot(&bw.column(j)).max(0.0).sqrt();
            let nt = tx.column(j).dot(&mx.column(j)).abs().sqrt();
            if nb > 1e-14 * nt.max(f64::MIN_POSITIVE) {
                keep.push((j, nb));
            }
        }
        let mut wk = DMatrix::zeros(n, keep.len());
        let mut bwk = DMatrix::zeros(n, keep.len());
        for (c, &(j, nb)) in keep.iter().enumerate() {
            wk.column_mut(c).copy_from(&(w.column(j) / nb));
            bwk.column_mut(c).copy_from(&(bw.column(j) / nb));
        }
        let (wk, bwk) = orthonormalize(wk, bwk, 1e-12);

        let q = hcat(&[&x, &p_blk, &wk]);
        let bq = hcat(&[&bx, &bp_blk, &bwk]);
        let mq = scale_rows(mass, &q);
        let mut h = q.transpose() * &mq;
        h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let chosen: Vec<usize> = order.into_iter().filter(|&i| eig.eigenvalues[i] > 0.0).take(p).collect();
        if chosen.len() < count {
            return Err(Error::Configuration(format!(
                "only {} positive-type Ritz values found; the mass form may be too indefinite",
                chosen.len()
            )));
        }
        let mut c = DMatrix::zeros(q.ncols(), chosen.len());
        for (col, &i) in chosen.iter().enumerate() {
            c.column_mut(col).copy_from(&eig.eigenvectors.column(i));
        }
        theta = chosen.iter().map(|&i| eig.eigenvalues[i]).collect();

        let x_new = &q * &c;
        let bx_new = &bq * &c;
        // next search directions: the part of the update outside the old X block
        let k0 = x.ncols();
        let tail = q.ncols() - k0;
        let (mut pn, mut bpn) = if tail > 0 {
            let ct = c.rows(k0, tail).into_owned();
            (q.columns(k0, tail) * &ct, bq.columns(k0, tail) * &ct)
        } else {
            (DMatrix::zeros(n, 0), DMatrix::zeros(n, 0))
        };
        if pn.ncols() > 0 {
            let cc = x_new.transpose() * &bpn;
            pn -= &x_new * &cc;
            bpn -= &bx_new * &cc;
            let (a1, b1) = orthonormalize(pn, bpn, 1e-10);
            pn = a1;
            bpn = b1;
        }
        x = x_new;
        bx = bx_new;
        p_blk = pn;
        bp_blk = bpn;

        // residuals of the wanted pairs
        let ax = a.mul_dense(&x.columns(0, count).into_owned());
        let mut worst: f64 = 0.0;
        for j in 0..count {
            let lam = 1.0 / theta[j] - sigma;
            let xj = x.column(j);
            let axj = ax.column(j);
            let mut r2 = 0.0;
            for i in 0..n {
                let r = axj[i] - lam * mass[i] * xj[i];
                r2 += r * r;
            }
            let rn = r2.sqrt();
            let un = xj.norm();
            residuals[j] = rn / un;
            backward[j] = rn / ((a_norm + lam.abs() * m_norm) * un).max(f64::MIN_POSITIVE);
            worst = worst.max(backward[j]);
        }
        if worst <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            worst: backward.iter().cloned().fold(0.0, f64::max),
            residuals: backward,
        });
    }

    let eigenvalues: Vec<f64> = theta[..count].iter().map(|t| 1.0 / t - sigma).collect();
    let eigenvectors: Vec<Vec<f64>> = (0..count)
        .map(|j| {
            // B-normalized column has u^T M u = theta
            let s = 1.0 / theta[j].sqrt();
            let mut u: Vec<f64> = x.column(j).iter().map(|v| v * s).collect();
            let pivot = u.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            if pivot < 0.0 {
                u.iter_mut().for_each(|v| *v = -*v);
            }
            u
        })
        .collect();
    let multiplicity_groups = cluster_eigenvalues(&eigenvalues, opts.cluster_tol);
    Ok(SpectralResult {
        eigenvalues,
        eigenvectors,
        residuals,
        backward_errors: backward,
        multiplicity_groups,
        tolerance: opts.tol,
        iterations,
        shift: sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_mass, assemble_stiffness, DensityField};
    use crate::surface::{build_sphere_mesh, build_torus_mesh};

    #[test]
    fn clustering() {
        let g = cluster_eigenvalues(&[0.0, 1.0, 1.0005, 1.0009, 2.0], 1e-3);
        assert_eq!(g, vec![0..1, 1..4, 4..5]);
    }

    #[test]
    fn uniform_sphere_has_constant_ground_state() {
        let mesh = build_sphere_mesh(2).unwrap();
        let w = mesh.vertex_weights();
        let a = assemble_stiffness(&mesh).unwrap();
        let m = assemble_mass(&mesh, &DensityField::uniform(&w, 0.0, 1.0)).unwrap();
        let r = solve_smallest(&a, &m, 4, &SolverOptions::default()).unwrap();
        assert!(r.eigenvalues[0].abs() < 1e-8);
        let u0 = &r.eigenvectors[0];
        assert!(u0.iter().all(|v| (v - u0[0]).abs() < 1e-7));
        assert!(r.backward_errors.iter().all(|&b| b <= r.tolerance));
        assert_eq!(r.group_of(2), Some(1..4));
        for i in 0..4 {
            for j in 0..4 {
                let ip = m.inner(&r.eigenvectors[i], &r.eigenvectors[j]);
                assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rayleigh_quotient_cases() {
        let mesh = build_torus_mesh(16, 16, 1.0, 1.0).unwrap();
        let w = mesh.vertex_weights();
        let a = assemble_stiffness(&mesh).unwrap();
        let m = assemble_mass(&mesh, &DensityField::uniform(&w, 0.0, 2.0)).unwrap();
        let r = solve_smallest(&a, &m, 6, &SolverOptions::default()).unwrap();
        let q = rayleigh_quotient(&a, &m, &vec![1.0; mesh.num_vertices()]).unwrap();
        assert!(q.abs() < 1e-12);
        let q1 = rayleigh_quotient(&a, &m, &r.eigenvectors[1]).unwrap();
        assert!((q1 - r.eigenvalues[1]).abs() <= 1e-8 * r.eigenvalues[1]);
        let mix: Vec<f64> = r.eigenvectors[1].iter().zip(&r.eigenvectors[5]).map(|(a, b)| a + b).collect();
        let qm = rayleigh_quotient(&a, &m, &mix).unwrap();
        assert!(qm >= r.eigenvalues[1] - 1e-9 && qm <= r.eigenvalues[5] + 1e-9);
        let zero = MassForm { diagonal: vec![0.0; mesh.num_vertices()] };
        assert!(matches!(rayleigh_quotient(&a, &zero, &mix), Err(Error::ZeroMassNorm)));
    }

    #[test]
    fn indefinite_mass_needs_flag() {
        let mesh = build_sphere_mesh(1).unwrap();
        let w = mesh.vertex_weights();
        let a = assemble_stiffness(&mesh).unwrap();
        let mut values = vec![0.1; mesh.num_vertices()];
        values[0] = -0.5;
        let m = assemble_mass(&mesh, &DensityField::new(values, -0.5, 2.0, &w).unwrap()).unwrap();
        assert!(matches!(
            solve_smallest(&a, &m, 3, &SolverOptions::default()),
            Err(Error::Configuration(_))
        ));
        let opts = SolverOptions { allow_indefinite: true, ..Default::default() };
        let r = solve_smallest(&a, &m, 3, &opts).unwrap();
        assert!(r.eigenvalues[0].abs() < 1e-8);
        assert!(r.eigenvalues[1] > 0.0);
    }

    #[test]
    fn bad_tolerance_rejected() {
        let mesh = build_sphere_mesh(1).unwrap();
        let w = mesh.vertex_weights();
        let a = assemble_stiffness(&mesh).unwrap();
        let m = assemble_mass(&mesh, &DensityField::uniform(&w, 0.0, 1.0)).unwrap();
        let opts = SolverOptions { tol: 0.5, ..Default::default() };
        assert!(matches!(solve_smallest(&a, &m, 2, &opts), Err(Error::Configuration(_))));
        assert!(matches!(
            solve_smallest(&a, &m, 43, &SolverOptions::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn non_convergence_reports_residuals() {
        let mesh = build_sphere_mesh(3).unwrap();
        let w = mesh.vertex_weights();
        let a = assemble_stiffness(&mesh).unwrap();
        let m = assemble_mass(&mesh, &DensityField::uniform(&w, 0.0, 1.0)).unwrap();
        let opts = SolverOptions { max_iterations: 1, tol: 1e-14, guard: 0, ..Default::default() };
        match solve_smallest(&a, &m, 9, &opts) {
            Err(Error::NonConvergence { residuals, .. }) => assert_eq!(residuals.len(), 9),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_density_region_is_harmonically_filled() {
        let mesh = build_torus_mesh(24, 24, 1.0, 1.0).unwrap();
        let w = mesh.vertex_weights();
        let a = assemble_stiffness(&mesh).unwrap();
        let values: Vec<f64> = mesh.vertices.iter().map(|p| if p[0] < 0.5 { 2.0 } else { 0.0 }).collect();
        let mu = DensityField::unconstrained(values.clone(), &w).unwrap();
        let m = assemble_mass(&mesh, &mu).unwrap();
        let r = solve_smallest(&a, &m, 4, &SolverOptions::default()).unwrap();
        for u in &r.eigenvectors {
            let au = a.matrix.mul_vec(u);
            for (v, &val) in values.iter().enumerate() {
                if val == 0.0 {
                    assert!(au[v].abs() < 1e-7, "A u = {} on zero set", au[v]);
                }
            }
        }
    }
}
