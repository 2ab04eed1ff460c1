//! Closed-form reference spectra and the sphere-valued eigenmap certificate.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::eigensolver::SpectralResult;
use crate::error::{Error, Result};

/// One distinct eigenvalue of a reference spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumLevel {
    pub value: f64,
    pub multiplicity: usize,
    /// Value for the unit-mass density (`value * area`).
    pub normalized: f64,
}

/// `l (l + 1)` with multiplicity `2 l + 1` on the unit sphere, `l = 0..=l_max`.
pub fn sphere_spectrum(l_max: usize) -> Vec<SpectrumLevel> {
    (0..=l_max)
        .map(|l| {
            let value = (l * (l + 1)) as f64;
            SpectrumLevel { value, multiplicity: 2 * l + 1, normalized: value * 4.0 * PI }
        })
        .collect()
}

/// Expands levels into a list with repeats, truncated to `count`.
pub fn expand_levels(levels: &[SpectrumLevel], count: usize) -> Vec<f64> {
    levels
        .iter()
        .flat_map(|l| std::iter::repeat_n(l.value, l.multiplicity))
        .take(count)
        .collect()
}

/// The `count` smallest values `4 pi^2 (p^2 / w^2 + q^2 / h^2)`, with repeats.
pub fn torus_spectrum(width: f64, height: f64, count: usize) -> Result<Vec<f64>> {
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::Precondition("torus dimensions must be positive".into()));
    }
    // every value below (R 2 pi / max(w,h))^2 needs |p| <= R w / max, |q| <= R h / max
    let mut reach = 1i64;
    loop {
        let mut vals = Vec::new();
        for p in -reach..=reach {
            for q in -reach..=reach {
                let (p, q) = (p as f64, q as f64);
                vals.push(4.0 * PI * PI * (p * p / (width * width) + q * q / (height * height)));
            }
        }
        vals.sort_by(f64::total_cmp);
        let bound = 4.0 * PI * PI * ((reach + 1) as f64).powi(2) / width.max(height).powi(2);
        if vals.len() >= count && vals[count - 1] < bound {
            vals.truncate(count);
            return Ok(vals);
        }
        reach *= 2;
    }
}

/// Bessel function of the first kind by the periodic trapezoid rule on
/// `J_n(x) = (1 / 2 pi) int_0^{2 pi} cos(n t - x sin t) dt`.
pub fn bessel_j(n: u32, x: f64) -> f64 {
    // the integrand is entire and periodic; the rule converges geometrically
    // once the node count exceeds |x| + n by a margin
    let nodes = 64 + 2 * (x.abs().ceil() as usize + n as usize);
    let h = 2.0 * PI / nodes as f64;
    let s: f64 = (0..nodes)
        .map(|i| {
            let t = i as f64 * h;
            (n as f64 * t - x * t.sin()).cos()
        })
        .sum();
    s / nodes as f64
}

/// Positive zeros of `J_n` below `limit`, bracketed on a fine grid and refined
/// by bisection to `1e-13` absolute.
pub fn bessel_zeros(n: u32, limit: f64) -> Vec<f64> {
    let step = 0.05;
    let mut zeros = Vec::new();
    let mut a = if n == 0 { step } else { n as f64 };
    let mut fa = bessel_j(n, a);
    while a < limit {
        let b = a + step;
        let fb = bessel_j(n, b);
        if fa == 0.0 {
            zeros.push(a);
        } else if fa * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            while hi - lo > 1e-13 {
                let mid = 0.5 * (lo + hi);
                let fm = bessel_j(n, mid);
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            let z = 0.5 * (lo + hi);
            if z < limit {
                zeros.push(z);
            }
        }
        a = b;
        fa = fb;
    }
    zeros
}

/// The `count` smallest Dirichlet eigenvalues `(j_{m,s} / radius)^2` of a flat
/// disk, repeated twice for `m > 0`.
pub fn disk_dirichlet_spectrum(radius: f64, count: usize) -> Result<Vec<f64>> {
    if !(radius > 0.0) {
        return Err(Error::Precondition("disk radius must be positive".into()));
    }
    let mut limit = 10.0;
    loop {
        let mut vals = Vec::new();
        // j_{m,1} > m, so orders up to `limit` suffice
        for m in 0..=(limit as u32) {
            for z in bessel_zeros(m, limit) {
                let lam = (z / radius).powi(2);
                vals.push(lam);
                if m > 0 {
                    vals.push(lam);
                }
            }
        }
        if vals.len() >= count {
            vals.sort_by(f64::total_cmp);
            vals.truncate(count);
            return Ok(vals);
        }
        limit *= 1.5;
    }
}

/// A PSD recombination `u_i = sum_j C_ij U_j` of an eigenvalue group whose
/// squares sum to one on the regular support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarmonicMapCertificate {
    pub ell: usize,
    /// `ell` rows over the group basis.
    pub coefficients: Vec<Vec<f64>>,
    /// `Q = C^T C` over the group basis.
    pub gram: Vec<Vec<f64>>,
    pub sphere_defect: f64,
    pub dirichlet_energy: f64,
    /// `sum_i u_i^T M u_i = tr Q`.
    pub mass: f64,
    pub fit_iterations: usize,
    pub tolerance: f64,
    pub valid: bool,
}

const CERT_MAX_ITERATIONS: usize = 1000;
const RANK_CUTOFF: f64 = 1e-6;

fn psd_project(q: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (q + q.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut d = eig.eigenvalues.clone();
    d.iter_mut().for_each(|v| *v = v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Fits the group's Gram matrix by PSD least squares on the sphere condition.
///
/// Eigenvectors are taken as returned by the solver, so `U^T A U` is the
/// diagonal of group eigenvalues and the energy is `sum_j lambda_j Q_jj`.
pub fn harmonic_map_certificate(
    result: &SpectralResult,
    group: Range<usize>,
    regular_support: &[usize],
    tol: f64,
) -> Result<HarmonicMapCertificate> {
    if group.is_empty() || group.end > result.len() {
        return Err(Error::Precondition(format!("invalid eigenvalue group {group:?}")));
    }
    if regular_support.is_empty() {
        return Err(Error::Precondition("regular support is empty".into()));
    }
    let m = group.len();
    let basis: Vec<&Vec<f64>> = group.clone().map(|j| &result.eigenvectors[j]).collect();
    let n = basis[0].len();
    if let Some(&bad) = regular_support.iter().find(|&&x| x >= n) {
        return Err(Error::Precondition(format!("support vertex {bad} out of range")));
    }
    let rows: Vec<DVector<f64>> = regular_support
        .iter()
        .map(|&x| DVector::from_iterator(m, basis.iter().map(|u| u[x])))
        .collect();

    // orthonormal coordinates of symmetric matrices: diagonal, then sqrt(2) * upper
    let dim = m * (m + 1) / 2;
    let feature = |u: &DVector<f64>| -> DVector<f64> {
        let mut f = DVector::zeros(dim);
        let mut c = 0;
        for a in 0..m {
            for b in a..m {
                f[c] = if a == b { u[a] * u[a] } else { std::f64::consts::SQRT_2 * u[a] * u[b] };
                c += 1;
            }
        }
        f
    };
    let unpack = |q: &DVector<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m, m);
        let mut c = 0;
        for a in 0..m {
            for b in a..m {
                let v = if a == b { q[c] } else { q[c] / std::f64::consts::SQRT_2 };
                out[(a, b)] = v;
                out[(b, a)] = v;
                c += 1;
            }
        }
        out
    };
    let pack = |q: &DMatrix<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(dim);
        let mut c = 0;
        for a in 0..m {
            for b in a..m {
                out[c] = if a == b { q[(a, b)] } else { std::f64::consts::SQRT_2 * q[(a, b)] };
                c += 1;
            }
        }
        out
    };
    let mut normal = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for u in &rows {
        let f = feature(u);
        normal += &f * f.transpose();
        rhs += &f;
    }
    let objective = |q: &DMatrix<f64>| -> f64 {
        rows.iter().map(|u| (u.dot(&(q * u)) - 1.0).powi(2)).sum()
    };

    // minimum-norm least squares, then PSD projection, then FISTA on the cone
    let ls = normal
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12 * normal.norm())
        .map_err(|e| Error::Precondition(e.to_string()))?;
    let mut q = psd_project(&unpack(&ls));
    let lip = 2.0 * SymmetricEigen::new(normal.clone()).eigenvalues.iter().fold(0.0f64, |a, v| a.max(*v));
    let mut iterations = 0;
    if lip > 0.0 {
        let mut y = q.clone();
        let mut t = 1.0f64;
        let mut best = objective(&q);
        for it in 1..=CERT_MAX_ITERATIONS {
            iterations = it;
            let yv = pack(&y);
            let grad = (&normal * &yv - &rhs) * 2.0;
            let next = psd_project(&unpack(&(yv - grad / lip)));
            let f = objective(&next);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if f > best {
                // adaptive restart
                y = q.clone();
                t = 1.0;
                continue;
            }
            y = &next + (&next - &q) * ((t - 1.0) / t_next);
            t = t_next;
            let done = (best - f) <= 1e-15 * best.max(1e-300);
            q = next;
            best = f;
            if done {
                break;
            }
        }
    }

    let eig = SymmetricEigen::new(q.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(*v));
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let coefficients: Vec<Vec<f64>> = order
        .iter()
        .filter(|&&i| top > 0.0 && eig.eigenvalues[i] > RANK_CUTOFF * top)
        .map(|&i| {
            let s = eig.eigenvalues[i].sqrt();
            eig.eigenvectors.column(i).iter().map(|v| v * s).collect()
        })
        .collect();
    let sphere_defect = rows.iter().map(|u| (u.dot(&(&q * u)) - 1.0).abs()).fold(0.0, f64::max);
    let dirichlet_energy: f64 = group.clone().enumerate().map(|(a, j)| result.eigenvalues[j] * q[(a, a)]).sum();
    Ok(HarmonicMapCertificate {
        ell: coefficients.len(),
        coefficients,
        gram: (0..m).map(|a| q.row(a).iter().cloned().collect()).collect(),
        sphere_defect,
        dirichlet_energy,
        mass: q.trace(),
        fit_iterations: iterations,
        tolerance: tol,
        valid: sphere_defect < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_levels() {
        let s = sphere_spectrum(2);
        assert_eq!((s[0].value, s[0].multiplicity), (0.0, 1));
        assert_eq!((s[1].value, s[1].multiplicity), (2.0, 3));
        assert!((s[1].normalized - 8.0 * PI).abs() < 1e-12);
        assert_eq!((s[2].value, s[2].multiplicity), (6.0, 5));
        assert_eq!(expand_levels(&s, 5), vec![0.0, 2.0, 2.0, 2.0, 6.0]);
    }

    #[test]
    fn torus_values() {
        let t = torus_spectrum(1.0, 1.0, 9).unwrap();
        assert_eq!(t[0], 0.0);
        assert!(t[1..5].iter().all(|&v| (v - 4.0 * PI * PI).abs() < 1e-9));
        assert!(t[5..9].iter().all(|&v| (v - 8.0 * PI * PI).abs() < 1e-9));
        let r = torus_spectrum(2.0, 1.0, 5).unwrap();
        assert!(r[1..3].iter().all(|&v| (v - PI * PI).abs() < 1e-9));
        assert!(r[3..5].iter().all(|&v| (v - 4.0 * PI * PI).abs() < 1e-9));
    }

    #[test]
    fn bessel_values_and_zeros() {
        assert!((bessel_j(0, 0.0) - 1.0).abs() < 1e-14);
        assert!((bessel_j(1, 1.0) - 0.440_050_585_744_933_5).abs() < 1e-14);
        assert!((bessel_j(0, 30.0) - -0.086_367_983_581_040_2).abs() < 1e-13);
        let z0 = bessel_zeros(0, 10.0);
        assert!((z0[0] - 2.404_825_557_695_773).abs() < 1e-10);
        assert!((z0[1] - 5.520_078_110_286_311).abs() < 1e-10);
        assert!((bessel_zeros(1, 5.0)[0] - 3.831_705_970_207_512).abs() < 1e-10);
    }

    #[test]
    fn disk_values() {
        let d = disk_dirichlet_spectrum(1.0, 6).unwrap();
        assert!((d[0] - 5.783186).abs() < 1e-5);
        assert!((d[1] - 14.68197).abs() < 1e-4 && (d[2] - 14.68197).abs() < 1e-4);
        assert!((d[3] - 26.374_616).abs() < 1e-5 && d[4] == d[3]);
        assert!((d[5] - 30.471_262).abs() < 1e-5);
        let d2 = disk_dirichlet_spectrum(2.0, 1).unwrap();
        assert!((d2[0] - d[0] / 4.0).abs() < 1e-12);
    }

    use crate::assembly::{assemble_mass, assemble_stiffness, DensityField};
    use crate::eigensolver::{solve_smallest, SolverOptions};
    use crate::surface::{build_sphere_mesh, build_torus_mesh, TriangleMesh};

    fn uniform_spectrum(mesh: &TriangleMesh, count: usize) -> SpectralResult {
        let w = mesh.vertex_weights();
        let a = assemble_stiffness(mesh).unwrap();
        let m = assemble_mass(mesh, &DensityField::uniform(&w, 0.0, 1.0)).unwrap();
        solve_smallest(&a, &m, count, &SolverOptions::default()).unwrap()
    }

    #[test]
    fn sphere_coordinates_certify() {
        let mesh = build_sphere_mesh(4).unwrap();
        let r = uniform_spectrum(&mesh, 4);
        let all: Vec<usize> = (0..mesh.num_vertices()).collect();
        let c = harmonic_map_certificate(&r, 1..4, &all, 1e-2).unwrap();
        assert_eq!(c.ell, 3);
        assert!(c.valid, "defect {}", c.sphere_defect);
        // unit regular mass
        assert!((c.dirichlet_energy / r.eigenvalues[1] - 1.0).abs() < 0.05);
    }

    #[test]
    fn rotated_basis_gives_same_defect() {
        let mesh = build_sphere_mesh(3).unwrap();
        let mut r = uniform_spectrum(&mesh, 4);
        let all: Vec<usize> = (0..mesh.num_vertices()).collect();
        let base = harmonic_map_certificate(&r, 1..4, &all, 1e-2).unwrap();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let (u1, u2) = (r.eigenvectors[1].clone(), r.eigenvectors[2].clone());
        r.eigenvectors[1] = u1.iter().zip(&u2).map(|(a, b)| c * a - s * b).collect();
        r.eigenvectors[2] = u1.iter().zip(&u2).map(|(a, b)| s * a + c * b).collect();
        let rot = harmonic_map_certificate(&r, 1..4, &all, 1e-2).unwrap();
        assert!((base.sphere_defect - rot.sphere_defect).abs() < 1e-10);
    }

    #[test]
    fn single_sign_changing_function_fails() {
        let mesh = build_sphere_mesh(3).unwrap();
        let r = uniform_spectrum(&mesh, 2);
        let all: Vec<usize> = (0..mesh.num_vertices()).collect();
        let c = harmonic_map_certificate(&r, 1..2, &all, 1e-2).unwrap();
        assert!(!c.valid);
        assert!(c.sphere_defect > 0.5);
    }

    #[test]
    fn torus_group_certifies() {
        let mesh = build_torus_mesh(48, 48, 1.0, 1.0).unwrap();
        let r = uniform_spectrum(&mesh, 5);
        let all: Vec<usize> = (0..mesh.num_vertices()).collect();
        let c = harmonic_map_certificate(&r, 1..5, &all, 1e-2).unwrap();
        assert!(c.ell <= 4 && c.ell >= 2);
        assert!(c.valid, "defect {}", c.sphere_defect);
    }

    #[test]
    fn rejects_bad_input() {
        let mesh = build_sphere_mesh(1).unwrap();
        let r = uniform_spectrum(&mesh, 4);
        assert!(harmonic_map_certificate(&r, 2..2, &[0], 1e-2).is_err());
        assert!(harmonic_map_certificate(&r, 1..4, &[], 1e-2).is_err());
    }
}
