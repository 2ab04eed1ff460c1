//! Ascent of `lambda_k(mu)` over the box-and-mass class
//! `{lower <= mu <= cap, sum_v w_v mu_v = 1}` and continuation in the cap.
//!
//! Only the mass form depends on `mu`, so a perturbation `nu` moves an
//! eigenvalue group with M-orthonormal basis `U` to first order by the
//! eigenvalues of `-lambda U^T M[nu] U`. The ascent direction for the `j`-th
//! member of a group is the steepest ascent of the smallest eigenvalue of that
//! matrix over a subspace of the group, i.e. the minimum-norm element of the
//! supergradient hull `{P G(Z) : Z >= 0, tr Z = 1}`.

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::assembly::{DensityField, MassForm, StiffnessForm};
use crate::eigensolver::{solve_generalized, SolverOptions, SpectralResult};
use crate::error::{Error, Result};

/// Relative slack used to decide whether a value sits on a bound.
const CLAMP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub lower_bound: f64,
    pub cap: f64,
    pub weights: Vec<f64>,
}

impl FeasibleSet {
    /// Requires `lower < 1 / area < cap` so the uniform density is interior.
    pub fn new(lower_bound: f64, cap: f64, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Configuration("vertex weights must be positive".into()));
        }
        let area: f64 = weights.iter().sum();
        if !(lower_bound < 1.0 / area && 1.0 / area < cap) {
            return Err(Error::Configuration(format!(
                "need lower < 1/area < cap, got {lower_bound} < {} < {cap}",
                1.0 / area
            )));
        }
        Ok(FeasibleSet { lower_bound, cap, weights })
    }

    pub fn total_area(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn with_cap(&self, cap: f64) -> Result<Self> {
        FeasibleSet::new(self.lower_bound, cap, self.weights.clone())
    }

    pub fn uniform(&self) -> DensityField {
        DensityField::uniform(&self.weights, self.lower_bound, self.cap)
    }

    pub fn field(&self, values: Vec<f64>) -> Result<DensityField> {
        DensityField::new(values, self.lower_bound, self.cap, &self.weights)
    }

    pub fn contains(&self, mu: &[f64], tol: f64) -> bool {
        mu.len() == self.weights.len()
            && mu.iter().all(|&m| m >= self.lower_bound - tol && m <= self.cap + tol)
            && (dot_w(&self.weights, mu, &vec![1.0; mu.len()]) - 1.0).abs() <= tol
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        dot_w(&self.weights, x, x).sqrt()
    }

    pub fn level_sets(&self, mu: &[f64]) -> LevelSetReport {
        let at_cap = self.cap - CLAMP_TOL * self.cap.abs().max(1.0);
        let (mut cap_area, mut cap_mass, mut neg_area, mut neg_mass) = (0.0, 0.0, 0.0, 0.0);
        for (&m, &w) in mu.iter().zip(&self.weights) {
            if m >= at_cap {
                cap_area += w;
                cap_mass += w * m;
            }
            if m < 0.0 {
                neg_area += w;
                neg_mass += w * m;
            }
        }
        LevelSetReport {
            cap: self.cap,
            cap_area,
            cap_mass,
            negative_area: neg_area,
            negative_mass: neg_mass,
            scaled_cap_area: self.cap * cap_area,
        }
    }
}

fn dot_w(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Areas of the saturated set `{mu = cap}` and the negative set `{mu < 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSetReport {
    pub cap: f64,
    pub cap_area: f64,
    pub cap_mass: f64,
    pub negative_area: f64,
    pub negative_mass: f64,
    /// `cap * cap_area`
    pub scaled_cap_area: f64,
}

/// Weighted Euclidean projection onto the feasible set: `clamp(raw + t)` with
/// the shift `t` located by bisection on the mass, then solved exactly on the
/// free set.
pub fn project_to_feasible(raw: &[f64], set: &FeasibleSet) -> Result<DensityField> {
    let w = &set.weights;
    if raw.len() != w.len() {
        return Err(Error::SizeMismatch { expected: w.len(), got: raw.len() });
    }
    let area = set.total_area();
    if !(set.lower_bound * area <= 1.0 && set.cap * area >= 1.0) || set.lower_bound > set.cap {
        return Err(Error::Configuration("feasible set is empty".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("raw density has non-finite entries".into()));
    }
    let (lo, hi) = (set.lower_bound, set.cap);
    let clamp = |t: f64| -> Vec<f64> { raw.iter().map(|&r| (r + t).clamp(lo, hi)).collect() };
    let mass = |t: f64| -> f64 { raw.iter().zip(w).map(|(&r, &w)| w * (r + t).clamp(lo, hi)).sum() };

    let rmin = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let rmax = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut a, mut b) = (lo - rmax, hi - rmin);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if mass(mid) < 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let mut t = 0.5 * (a + b);
    // exact shift on the free set of the bracketed pattern
    let (mut fixed, mut free_w, mut free_raw) = (0.0, 0.0, 0.0);
    for (&r, &wv) in raw.iter().zip(w) {
        let v = r + t;
        if v <= lo {
            fixed += wv * lo;
        } else if v >= hi {
            fixed += wv * hi;
        } else {
            free_w += wv;
            free_raw += wv * r;
        }
    }
    if free_w > 0.0 {
        let exact = (1.0 - fixed - free_raw) / free_w;
        if (mass(exact) - 1.0).abs() <= (mass(t) - 1.0).abs() {
            t = exact;
        }
    }
    set.field(clamp(t))
}

/// Reference projection by enumerating every lower/free/upper pattern and
/// keeping the KKT-consistent one of least cost. Exponential in the vertex
/// count; meant for small instances.
pub fn enumerate_projection(raw: &[f64], set: &FeasibleSet) -> Option<Vec<f64>> {
    let n = raw.len();
    let w = &set.weights;
    let (lo, hi) = (set.lower_bound, set.cap);
    let slack = 1e-12 * (1.0 + hi.abs() + lo.abs());
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let pattern: Vec<u8> = (0..n)
            .map(|_| {
                let p = (c % 3) as u8;
                c /= 3;
                p
            })
            .collect();
        let (mut fixed, mut free_w, mut free_raw) = (0.0, 0.0, 0.0);
        for i in 0..n {
            match pattern[i] {
                0 => fixed += w[i] * lo,
                2 => fixed += w[i] * hi,
                _ => {
                    free_w += w[i];
                    free_raw += w[i] * raw[i];
                }
            }
        }
        // admissible shifts: each clamp pins t to a half-line
        let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            match pattern[i] {
                0 => tmax = tmax.min(lo - raw[i]),
                2 => tmin = tmin.max(hi - raw[i]),
                _ => {
                    tmin = tmin.max(lo - raw[i]);
                    tmax = tmax.min(hi - raw[i]);
                }
            }
        }
        let t = if free_w > 0.0 {
            (1.0 - fixed - free_raw) / free_w
        } else if (fixed - 1.0).abs() <= 1e-12 {
            0.5 * (tmin.max(-1e300) + tmax.min(1e300))
        } else {
            continue;
        };
        if t < tmin - slack || t > tmax + slack {
            continue;
        }
        let mu: Vec<f64> = (0..n)
            .map(|i| match pattern[i] {
                0 => lo,
                2 => hi,
                _ => raw[i] + t,
            })
            .collect();
        let cost: f64 = (0..n).map(|i| w[i] * (mu[i] - raw[i]).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, mu));
        }
    }
    best.map(|(_, mu)| mu)
}

/// First-order change of `lambda_k` along a density perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBound {
    pub lower: f64,
    pub upper: f64,
}

impl DerivativeBound {
    pub fn is_simple(&self) -> bool {
        self.lower == self.upper
    }
}

/// `-lambda_k sum_v nu_v w_v u_k(v)^2` for a simple eigenvalue; for a group,
/// the extreme eigenvalues of `-lambda_k U^T M[nu] U`.
pub fn eigenvalue_derivative(
    result: &SpectralResult,
    weights: &[f64],
    k: usize,
    direction: &[f64],
) -> Result<DerivativeBound> {
    let group = result
        .group_of(k)
        .ok_or_else(|| Error::Precondition(format!("index {k} outside the computed spectrum")))?;
    derivative_over(result, weights, k, group, direction)
}

fn derivative_over(
    result: &SpectralResult,
    weights: &[f64],
    k: usize,
    group: Range<usize>,
    direction: &[f64],
) -> Result<DerivativeBound> {
    for j in group.clone() {
        if !(result.backward_errors[j] <= result.tolerance) {
            return Err(Error::StaleEigenpair {
                index: j,
                backward_error: result.backward_errors[j],
                tolerance: result.tolerance,
            });
        }
    }
    let n = weights.len();
    if direction.len() != n {
        return Err(Error::SizeMismatch { expected: n, got: direction.len() });
    }
    let lam = result.eigenvalues[k];
    let basis: Vec<&Vec<f64>> = group.map(|j| &result.eigenvectors[j]).collect();
    let d = group_matrix(&basis, weights, lam, direction);
    if d.nrows() == 1 {
        return Ok(DerivativeBound { lower: d[(0, 0)], upper: d[(0, 0)] });
    }
    let e = SymmetricEigen::new(d).eigenvalues;
    Ok(DerivativeBound { lower: e.min(), upper: e.max() })
}

/// `D_ab = -lambda sum_v nu_v w_v u_a(v) u_b(v)`.
fn group_matrix(basis: &[&Vec<f64>], weights: &[f64], lam: f64, nu: &[f64]) -> DMatrix<f64> {
    let m = basis.len();
    let mut d = DMatrix::zeros(m, m);
    let scaled: Vec<f64> = nu.iter().zip(weights).map(|(a, b)| -lam * a * b).collect();
    for a in 0..m {
        for b in a..m {
            let s: f64 = scaled.iter().zip(basis[a]).zip(basis[b]).map(|((s, x), y)| s * x * y).sum();
            d[(a, b)] = s;
            d[(b, a)] = s;
        }
    }
    d
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AscentOptions {
    pub budget: usize,
    /// Stop once the accepted step is shorter than this in the w-norm.
    pub step_tol: f64,
    /// Mass fraction moved by the first trial step.
    pub initial_mass_move: f64,
    pub max_backtracks: usize,
    /// Eigenvalues within this relative distance of `lambda_k` move as a block.
    pub group_tol: f64,
    /// Largest block tolerance tried before declaring a stall.
    pub max_group_tol: f64,
    pub solver: SolverOptions,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions {
            budget: 500,
            step_tol: 1e-8,
            initial_mass_move: 0.01,
            max_backtracks: 30,
            group_tol: 2e-3,
            max_group_tol: 0.08,
            solver: SolverOptions { tol: 1e-9, ..SolverOptions::default() },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: usize,
    pub cap: f64,
    pub iteration: usize,
    pub lambda_k: f64,
    pub best_lambda_k: f64,
    /// `lambda_{k-1}, lambda_k, lambda_{k+1}, ...` as computed.
    pub lambdas: Vec<f64>,
    pub group: Range<usize>,
    pub step: f64,
    pub step_norm: f64,
    pub direction_norm: f64,
    pub predicted_rate: f64,
    pub backtracks: usize,
    pub solver_iterations: usize,
    pub cap_area: f64,
    pub cap_mass: f64,
    pub negative_area: f64,
    pub negative_mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub cap: f64,
    pub start_lambda: f64,
    /// Best `lambda_k` seen in the stage: the estimate of the constrained supremum.
    pub best_lambda: f64,
    pub iterations: usize,
    pub stop_reason: String,
    pub level_sets: LevelSetReport,
    pub density: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub k: usize,
    pub iterations: Vec<IterationRecord>,
    pub stages: Vec<StageRecord>,
}

impl OptimizationTrace {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.iterations {
            serde_json::to_writer(&mut out, r)?;
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn write_stage_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "stage,cap,start_lambda,best_lambda,iterations,cap_area,scaled_cap_area,negative_area,stop_reason")?;
        for s in &self.stages {
            writeln!(
                out,
                "{},{},{:.15e},{:.15e},{},{:.15e},{:.15e},{:.15e},{}",
                s.stage,
                s.cap,
                s.start_lambda,
                s.best_lambda,
                s.iterations,
                s.level_sets.cap_area,
                s.level_sets.scaled_cap_area,
                s.level_sets.negative_area,
                s.stop_reason
            )?;
        }
        Ok(())
    }

    /// Largest relative drop of the stage estimates (zero when nondecreasing).
    pub fn worst_stage_drop(&self) -> f64 {
        self.stages
            .windows(2)
            .map(|p| ((p[0].best_lambda - p[1].best_lambda) / p[0].best_lambda.abs().max(f64::MIN_POSITIVE)).max(0.0))
            .fold(0.0, f64::max)
    }

    /// `max / min` of `cap * area(E_n)` over the stages where the cap is
    /// active; `None` when no stage saturates. An empty cap set satisfies
    /// `area(E_n) <= C / n` trivially, so it does not enter the ratio.
    pub fn scaled_cap_area_spread(&self) -> Option<f64> {
        let v: Vec<f64> =
            self.stages.iter().map(|s| s.level_sets.scaled_cap_area).filter(|&a| a > 0.0).collect();
        if v.is_empty() {
            return None;
        }
        let max = v.iter().cloned().fold(0.0, f64::max);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(max / min)
    }
}

/// Fixed part of the objective: the stiffness form and vertex weights.
#[derive(Debug, Clone)]
pub struct SpectralObjective {
    pub stiffness: StiffnessForm,
    pub weights: Vec<f64>,
    pub k: usize,
}

impl SpectralObjective {
    pub fn new(stiffness: StiffnessForm, weights: Vec<f64>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Configuration("eigenvalue index k must be at least 1".into()));
        }
        if stiffness.dim() != weights.len() {
            return Err(Error::SizeMismatch { expected: stiffness.dim(), got: weights.len() });
        }
        Ok(SpectralObjective { stiffness, weights, k })
    }

    /// Spectrum through `lambda_{k+extra}`, widening until the group around `k`
    /// is closed off from above.
    pub fn evaluate(
        &self,
        mu: &[f64],
        solver: &SolverOptions,
        warm: Option<&[Vec<f64>]>,
        group_tol: f64,
    ) -> Result<SpectralResult> {
        let mass = MassForm { diagonal: mu.iter().zip(&self.weights).map(|(m, w)| m * w).collect() };
        let mut opts = solver.clone();
        opts.allow_indefinite = opts.allow_indefinite || mass.diagonal.iter().any(|&m| m < 0.0);
        let support = mass.diagonal.iter().filter(|&&m| m != 0.0).count();
        let mut count = (self.k + 3).min(support);
        loop {
            let r = solve_generalized(&self.stiffness.matrix, &mass.diagonal, count, &opts, warm)?;
            let g = block_around(&r.eigenvalues, self.k, group_tol);
            if g.end < count || count >= support || count >= self.k + 16 {
                return Ok(r);
            }
            count = (count + 3).min(support);
        }
    }
}

/// Indices whose eigenvalue lies within `tol * lambda_k` of `lambda_k`.
fn block_around(values: &[f64], k: usize, tol: f64) -> Range<usize> {
    let lam = values[k];
    let near = |v: f64| (v - lam).abs() <= tol * lam.abs();
    let mut a = k;
    while a > 0 && near(values[a - 1]) {
        a -= 1;
    }
    let mut b = k + 1;
    while b < values.len() && near(values[b]) {
        b += 1;
    }
    a..b
}

#[derive(Debug, Clone)]
pub struct AscentDirection {
    pub direction: Vec<f64>,
    /// First-order increase of `lambda_k` per unit step.
    pub rate: f64,
    pub group: Range<usize>,
}

fn project_psd_simplex(z: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((z + z.transpose()) * 0.5);
    let mut v: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    // Euclidean projection of the spectrum onto the unit simplex
    let mut s = v.clone();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, &x) in s.iter().enumerate() {
        acc += x;
        let t = (acc - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&DVector::from_vec(v)) * eig.eigenvectors.transpose()
}

/// Minimum-norm element of `{P G(Z)}` over the spectraplex, for the functions
/// `phi` spanning the active subspace.
fn min_norm_direction(phi: &[Vec<f64>], weights: &[f64], lam: f64, free: &[bool]) -> Vec<f64> {
    let m = phi.len();
    let n = weights.len();
    let free_w: f64 = weights.iter().zip(free).filter(|(_, &f)| f).map(|(w, _)| w).sum();
    let project = |x: &mut Vec<f64>| {
        if free_w <= 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let mean: f64 = x.iter().zip(weights).zip(free).filter(|(_, &f)| f).map(|((x, w), _)| x * w).sum::<f64>() / free_w;
        for (v, &f) in x.iter_mut().zip(free) {
            *v = if f { *v - mean } else { 0.0 };
        }
    };
    let mut pairs = Vec::new();
    for a in 0..m {
        for b in a..m {
            pairs.push((a, b));
        }
    }
    let cols: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(a, b)| {
            let s = if a == b { 1.0 } else { std::f64::consts::SQRT_2 };
            let mut c: Vec<f64> = (0..n).map(|v| -lam * s * phi[a][v] * phi[b][v]).collect();
            project(&mut c);
            c
        })
        .collect();
    let dim = pairs.len();
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let s = dot_w(weights, &cols[i], &cols[j]);
            h[(i, j)] = s;
            h[(j, i)] = s;
        }
    }
    let to_mat = |z: &DVector<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m, m);
        for (c, &(a, b)) in pairs.iter().enumerate() {
            let v = if a == b { z[c] } else { z[c] / std::f64::consts::SQRT_2 };
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
        out
    };
    let to_vec = |q: &DMatrix<f64>| -> DVector<f64> {
        DVector::from_iterator(
            dim,
            pairs.iter().map(|&(a, b)| if a == b { q[(a, b)] } else { std::f64::consts::SQRT_2 * q[(a, b)] }),
        )
    };
    let mut zm = DMatrix::identity(m, m) / m as f64;
    let lip = 2.0 * SymmetricEigen::new(h.clone()).eigenvalues.iter().fold(0.0f64, |a, v| a.max(*v));
    if lip > 0.0 && m > 1 {
        let mut y = zm.clone();
        let mut t = 1.0f64;
        let mut best = f64::INFINITY;
        for _ in 0..3000 {
            // Frank-Wolfe gap at the current iterate
            let zv = to_vec(&zm);
            let grad = &h * &zv * 2.0;
            let fz = zv.dot(&(&h * &zv));
            let gap = grad.dot(&zv) - SymmetricEigen::new(to_mat(&grad)).eigenvalues.min();
            if gap <= 1e-4 * fz + 1e-15 * lip {
                break;
            }
            let yv = to_vec(&y);
            let g = &h * &yv * 2.0;
            let next = project_psd_simplex(&to_mat(&(yv - g / lip)));
            let nv = to_vec(&next);
            let f = nv.dot(&(&h * &nv));
            let t1 = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if f > best {
                y = zm.clone();
                t = 1.0;
                continue;
            }
            y = &next + (&next - &zm) * ((t - 1.0) / t1);
            t = t1;
            zm = next;
            best = f;
        }
    }
    let z = to_vec(&zm);
    let mut d = vec![0.0; n];
    for (c, col) in cols.iter().enumerate() {
        for (dv, cv) in d.iter_mut().zip(col) {
            *dv += z[c] * cv;
        }
    }
    d
}

/// Multiplicity-aware ascent direction for `lambda_k` over the block `group`.
pub fn ascent_direction(
    result: &SpectralResult,
    set: &FeasibleSet,
    mu: &[f64],
    k: usize,
    group: Range<usize>,
) -> AscentDirection {
    let w = &set.weights;
    let n = w.len();
    let lam = result.eigenvalues[k];
    let basis: Vec<&Vec<f64>> = group.clone().map(|j| &result.eigenvectors[j]).collect();
    let m = basis.len();
    let rank = k - group.start;
    let sub = group.end - k;
    let tol = CLAMP_TOL * set.cap.abs().max(1.0);
    let combine = |v: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..v.ncols())
            .map(|c| {
                let mut f = vec![0.0; n];
                for (a, u) in basis.iter().enumerate() {
                    let s = v[(a, c)];
                    f.iter_mut().zip(u.iter()).for_each(|(x, y)| *x += s * y);
                }
                f
            })
            .collect()
    };
    // rank-th smallest eigenvalue of the group matrix along d
    let rate_of = |d: &[f64]| -> (f64, DMatrix<f64>) {
        let dm = group_matrix(&basis, w, lam, d);
        let e = SymmetricEigen::new(dm);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
        let mut v = DMatrix::zeros(m, sub);
        for (c, &i) in order[rank..].iter().enumerate() {
            v.column_mut(c).copy_from(&e.eigenvectors.column(i));
        }
        (e.eigenvalues[order[rank]], v)
    };

    let mut free = vec![true; n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..4 {
        let mut v = DMatrix::zeros(m, sub);
        for c in 0..sub {
            v[(rank + c, c)] = 1.0;
        }
        let rounds = if sub == m { 1 } else { 4 };
        let mut round_best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..rounds {
            let d = min_norm_direction(&combine(&v), w, lam, &free);
            let norm = dot_w(w, &d, &d).sqrt();
            if norm <= 0.0 {
                break;
            }
            let (rate, vnext) = rate_of(&d);
            let score = rate / norm;
            if round_best.as_ref().is_none_or(|(s, _)| score > *s) {
                round_best = Some((score, d));
            }
            v = vnext;
        }
        let Some((score, d)) = round_best else { break };
        let blocked: Vec<bool> = (0..n)
            .map(|i| (mu[i] >= set.cap - tol && d[i] > 0.0) || (mu[i] <= set.lower_bound + tol && d[i] < 0.0))
            .collect();
        let improved = best.as_ref().is_none_or(|(s, _)| score > *s);
        if improved {
            best = Some((score, d));
        }
        let next_free: Vec<bool> = free.iter().zip(&blocked).map(|(&f, &b)| f && !b).collect();
        if next_free == free || !improved {
            break;
        }
        free = next_free;
    }
    match best {
        Some((_, d)) => {
            let (rate, _) = rate_of(&d);
            AscentDirection { direction: d, rate, group }
        }
        None => AscentDirection { direction: vec![0.0; n], rate: 0.0, group },
    }
}

/// `project(mu + step * direction)`.
pub fn take_step(mu: &[f64], direction: &[f64], step: f64, set: &FeasibleSet) -> Result<DensityField> {
    let raw: Vec<f64> = mu.iter().zip(direction).map(|(m, d)| m + step * d).collect();
    project_to_feasible(&raw, set)
}

fn lambdas_near(r: &SpectralResult, k: usize) -> Vec<f64> {
    r.eigenvalues[k.saturating_sub(1)..].to_vec()
}

struct StageOutcome {
    best: DensityField,
    best_lambda: f64,
    start_lambda: f64,
    iterations: usize,
    stop_reason: String,
}

fn run_stage(
    objective: &SpectralObjective,
    set: &FeasibleSet,
    start: &DensityField,
    opts: &AscentOptions,
    stage: usize,
    trace: &mut OptimizationTrace,
) -> Result<StageOutcome> {
    let k = objective.k;
    let w = &set.weights;
    let wrap = |iteration: usize, density: &[f64], e: Error| Error::Ascent {
        iteration,
        density: density.to_vec(),
        source: Box::new(e),
    };
    if !set.contains(&start.values, 1e-8) {
        return Err(Error::Precondition("start density is not feasible".into()));
    }
    let mut mu = start.clone();
    let mut result = objective
        .evaluate(&mu.values, &opts.solver, None, opts.group_tol)
        .map_err(|e| wrap(0, &mu.values, e))?;
    let start_lambda = result.eigenvalues[k];
    let mut best = (start_lambda, mu.clone());
    let mut step = None::<f64>;
    let mut stop_reason = "budget".to_string();
    let mut iterations = 0;

    for it in 1..=opts.budget {
        iterations = it;
        let lam = result.eigenvalues[k];
        let mut tol = opts.group_tol;
        let mut accepted = None;
        let mut last_dir = None;
        let mut backtracks = 0;
        // widen the block when a narrow one yields no ascent
        while tol <= opts.max_group_tol * (1.0 + 1e-12) {
            let group = block_around(&result.eigenvalues, k, tol);
            let dir = ascent_direction(&result, set, &mu.values, k, group);
            let dnorm = set.norm(&dir.direction);
            if dnorm > 0.0 && dir.rate > 0.0 {
                let l1: f64 = dir.direction.iter().zip(w).map(|(d, w)| d.abs() * w).sum();
                let mut s = step.unwrap_or(opts.initial_mass_move / l1).min(opts.initial_mass_move / l1 * 64.0);
                for b in 0..=opts.max_backtracks {
                    let trial = take_step(&mu.values, &dir.direction, s, set)?;
                    let moved: Vec<f64> = trial.values.iter().zip(&mu.values).map(|(a, b)| a - b).collect();
                    let snorm = set.norm(&moved);
                    if snorm < opts.step_tol {
                        backtracks = b;
                        break;
                    }
                    let r = objective
                        .evaluate(&trial.values, &opts.solver, Some(&result.eigenvectors), opts.group_tol)
                        .map_err(|e| wrap(it, &trial.values, e))?;
                    if r.eigenvalues[k] > lam * (1.0 + 1e-12) {
                        accepted = Some((trial, r, s, snorm, b));
                        break;
                    }
                    s *= 0.5;
                    backtracks = b + 1;
                }
            }
            last_dir = Some((dir, dnorm));
            if accepted.is_some() {
                break;
            }
            tol *= 2.0;
        }
        let (dir, dnorm) = last_dir.expect("at least one block tried");
        match accepted {
            Some((trial, r, s, snorm, b)) => {
                step = Some(2.0 * s);
                mu = trial;
                result = r;
                let lam_new = result.eigenvalues[k];
                if lam_new > best.0 {
                    best = (lam_new, mu.clone());
                }
                let ls = set.level_sets(&mu.values);
                trace.iterations.push(IterationRecord {
                    stage,
                    cap: set.cap,
                    iteration: it,
                    lambda_k: lam_new,
                    best_lambda_k: best.0,
                    lambdas: lambdas_near(&result, k),
                    group: dir.group.clone(),
                    step: s,
                    step_norm: snorm,
                    direction_norm: dnorm,
                    predicted_rate: dir.rate,
                    backtracks: b,
                    solver_iterations: result.iterations,
                    cap_area: ls.cap_area,
                    cap_mass: ls.cap_mass,
                    negative_area: ls.negative_area,
                    negative_mass: ls.negative_mass,
                });
                if snorm < opts.step_tol {
                    stop_reason = "step_tolerance".into();
                    break;
                }
            }
            None => {
                stop_reason = if dnorm == 0.0 || dir.rate <= 0.0 { "stationary" } else { "no_ascent" }.into();
                let _ = backtracks;
                break;
            }
        }
    }
    Ok(StageOutcome { best: best.1, best_lambda: best.0, start_lambda, iterations, stop_reason })
}

/// Ascent of `lambda_k` from `start` inside `set`; returns the best density seen.
pub fn ascend(
    objective: &SpectralObjective,
    set: &FeasibleSet,
    start: &DensityField,
    opts: &AscentOptions,
) -> Result<(DensityField, OptimizationTrace)> {
    let mut trace = OptimizationTrace { k: objective.k, ..Default::default() };
    let out = run_stage(objective, set, start, opts, 0, &mut trace)?;
    trace.stages.push(StageRecord {
        stage: 0,
        cap: set.cap,
        start_lambda: out.start_lambda,
        best_lambda: out.best_lambda,
        iterations: out.iterations,
        stop_reason: out.stop_reason,
        level_sets: set.level_sets(&out.best.values),
        density: out.best.values.clone(),
        error: None,
    });
    Ok((out.best, trace))
}

/// Runs one ascent stage per cap, each warm-started from the previous optimum.
/// A failed stage is recorded and the next one restarts from the last good
/// density.
pub fn continuation(
    objective: &SpectralObjective,
    lower_bound: f64,
    caps: &[f64],
    start: Option<&DensityField>,
    opts: &AscentOptions,
) -> Result<(DensityField, OptimizationTrace)> {
    if caps.is_empty() || caps.windows(2).any(|p| !(p[0] < p[1])) {
        return Err(Error::Configuration("cap schedule must be nonempty and strictly increasing".into()));
    }
    let base = FeasibleSet::new(lower_bound, caps[0], objective.weights.clone())?;
    let mut current = match start {
        Some(s) => project_to_feasible(&s.values, &base)?,
        None => base.uniform(),
    };
    let mut trace = OptimizationTrace { k: objective.k, ..Default::default() };
    for (stage, &cap) in caps.iter().enumerate() {
        let set = base.with_cap(cap)?;
        // the box only grows, so this is the identity on the previous optimum
        let warm = project_to_feasible(&current.values, &set)?;
        match run_stage(objective, &set, &warm, opts, stage, &mut trace) {
            Ok(out) => {
                trace.stages.push(StageRecord {
                    stage,
                    cap,
                    start_lambda: out.start_lambda,
                    best_lambda: out.best_lambda,
                    iterations: out.iterations,
                    stop_reason: out.stop_reason,
                    level_sets: set.level_sets(&out.best.values),
                    density: out.best.values.clone(),
                    error: None,
                });
                current = out.best;
            }
            Err(e) => {
                trace.stages.push(StageRecord {
                    stage,
                    cap,
                    start_lambda: f64::NAN,
                    best_lambda: f64::NAN,
                    iterations: 0,
                    stop_reason: "error".into(),
                    level_sets: set.level_sets(&warm.values),
                    density: warm.values.clone(),
                    error: Some(e.to_string()),
                });
                current = warm;
            }
        }
    }
    Ok((current, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_mass_with_weights, assemble_stiffness};
    use crate::eigensolver::solve_smallest;
    use crate::surface::build_sphere_mesh;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(lower: f64, cap: f64, w: Vec<f64>) -> FeasibleSet {
        FeasibleSet { lower_bound: lower, cap, weights: w }
    }

    #[test]
    fn projection_examples() {
        let s = toy(0.0, 2.0, vec![1.0, 1.0]);
        let p = project_to_feasible(&[3.0, 3.0], &s).unwrap();
        assert!((p.values[0] - 0.5).abs() < 1e-12 && (p.values[1] - 0.5).abs() < 1e-12);
        let s = toy(0.0, 1.0, vec![1.0, 1.0, 1.0]);
        let p = project_to_feasible(&[2.0, 0.4, -1.0], &s).unwrap();
        for (a, b) in p.values.iter().zip([1.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-12, "{:?}", p.values);
        }
        let feasible = [0.2, 0.5, 0.3];
        let p = project_to_feasible(&feasible, &s).unwrap();
        assert!(p.values.iter().zip(feasible).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn projection_rejects_empty_set() {
        let s = toy(0.0, 0.2, vec![1.0, 1.0]);
        assert!(matches!(project_to_feasible(&[0.1, 0.1], &s), Err(Error::Configuration(_))));
        assert!(FeasibleSet::new(0.0, 0.4, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn projection_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
            let area: f64 = w.iter().sum();
            let lower = if rng.random_bool(0.5) { 0.0 } else { -0.5 };
            let cap = (1.0 / area) * rng.random_range(1.05..4.0);
            let s = FeasibleSet::new(lower, cap, w).unwrap();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let fast = project_to_feasible(&raw, &s).unwrap();
            let slow = enumerate_projection(&raw, &s).unwrap();
            for (a, b) in fast.values.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-10, "{raw:?}: {:?} vs {slow:?}", fast.values);
            }
            assert!((fast.mass - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn projection_idempotent_and_nonexpansive(
            a in proptest::collection::vec(-4.0f64..4.0, 8),
            b in proptest::collection::vec(-4.0f64..4.0, 8),
            w in proptest::collection::vec(0.05f64..1.0, 8),
        ) {
            let area: f64 = w.iter().sum();
            let s = FeasibleSet::new(-0.5, 3.0 / area, w).unwrap();
            let pa = project_to_feasible(&a, &s).unwrap();
            let pb = project_to_feasible(&b, &s).unwrap();
            let again = project_to_feasible(&pa.values, &s).unwrap();
            for (x, y) in pa.values.iter().zip(&again.values) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let diff_in: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let diff_out: Vec<f64> = pa.values.iter().zip(&pb.values).map(|(x, y)| x - y).collect();
            prop_assert!(s.norm(&diff_out) <= s.norm(&diff_in) * (1.0 + 1e-12) + 1e-12);
            prop_assert!(s.contains(&pa.values, 1e-10));
        }
    }

    fn broken_sphere() -> (crate::surface::TriangleMesh, StiffnessForm, Vec<f64>, Vec<f64>) {
        let mesh = build_sphere_mesh(3).unwrap();
        let w = mesh.vertex_weights();
        let a = assemble_stiffness(&mesh).unwrap();
        let raw: Vec<f64> = mesh.vertices.iter().map(|p| 1.0 + 0.3 * p[0] + 0.2 * p[1] * p[1] - 0.1 * p[2]).collect();
        let s = FeasibleSet::new(0.0, 10.0, w.clone()).unwrap();
        let scale = 1.0 / raw.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let mu = project_to_feasible(&raw.iter().map(|v| v * scale).collect::<Vec<_>>(), &s).unwrap();
        (mesh, a, w, mu.values)
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let (_mesh, a, w, mu) = broken_sphere();
        let opts = SolverOptions::default();
        let solve = |m: &[f64]| {
            let mass = assemble_mass_with_weights(&w, &DensityField::unconstrained(m.to_vec(), &w).unwrap()).unwrap();
            solve_smallest(&a, &mass, 5, &opts).unwrap()
        };
        let r = solve(&mu);
        let k = 2;
        assert_eq!(r.group_of(k), Some(k..k + 1), "{:?}", r.eigenvalues);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for _ in 0..5 {
            let nu: Vec<f64> = (0..mu.len()).map(|_| rng.random_range(0.0..1.0)).collect();
            let d = eigenvalue_derivative(&r, &w, k, &nu).unwrap();
            assert!(d.is_simple());
            let plus: Vec<f64> = mu.iter().zip(&nu).map(|(m, n)| m + h * n).collect();
            let minus: Vec<f64> = mu.iter().zip(&nu).map(|(m, n)| m - h * n).collect();
            let fd = (solve(&plus).eigenvalues[k] - solve(&minus).eigenvalues[k]) / (2.0 * h);
            assert!((fd - d.lower).abs() <= 1e-4 * fd.abs(), "fd {fd} vs {}", d.lower);
        }
    }

    #[test]
    fn derivative_identities() {
        let (_mesh, a, w, mu) = broken_sphere();
        let mass = assemble_mass_with_weights(&w, &DensityField::unconstrained(mu.clone(), &w).unwrap()).unwrap();
        let r = solve_smallest(&a, &mass, 5, &SolverOptions::default()).unwrap();
        // inflating the density by a factor 1 + c t deflates lambda by the same factor
        let c = 0.7;
        let inflate: Vec<f64> = mu.iter().map(|m| c * m).collect();
        let d = eigenvalue_derivative(&r, &w, 1, &inflate).unwrap();
        assert!((d.lower + r.eigenvalues[1] * c).abs() < 1e-8 * r.eigenvalues[1]);
        // perturbation supported where u_1 vanishes to rounding
        let u = &r.eigenvectors[1];
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let nu: Vec<f64> = u.iter().map(|&x| if x.abs() < 1e-3 * umax { 1.0 } else { 0.0 }).collect();
        let d0 = eigenvalue_derivative(&r, &w, 1, &nu).unwrap();
        assert!(d0.lower.abs() < 1e-5 * r.eigenvalues[1]);
        let mut stale = r.clone();
        stale.backward_errors[1] = 1.0;
        assert!(matches!(eigenvalue_derivative(&stale, &w, 1, &nu), Err(Error::StaleEigenpair { .. })));
    }

    #[test]
    fn group_interval_contains_split_derivatives() {
        let mesh = build_sphere_mesh(3).unwrap();
        let w = mesh.vertex_weights();
        let a = assemble_stiffness(&mesh).unwrap();
        let uniform = DensityField::uniform(&w, 0.0, 1.0);
        let solve = |m: &[f64], count| {
            let mass = assemble_mass_with_weights(&w, &DensityField::unconstrained(m.to_vec(), &w).unwrap()).unwrap();
            solve_smallest(&a, &mass, count, &SolverOptions::default()).unwrap()
        };
        let r = solve(&uniform.values, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nu: Vec<f64> = (0..w.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (k, size) in [(1usize, 3usize), (4, 5)] {
            let d = eigenvalue_derivative(&r, &w, k, &nu).unwrap();
            assert_eq!(r.group_of(k).unwrap().len(), size);
            // an infinitesimal split along nu gives simple eigenvalues whose
            // slopes sit inside the interval
            let eps = 1e-7;
            let moved: Vec<f64> = uniform.values.iter().zip(&nu).map(|(m, n)| m + eps * n).collect();
            let rs = solve(&moved, 9);
            for j in r.group_of(k).unwrap() {
                let slope = (rs.eigenvalues[j] - r.eigenvalues[j]) / eps;
                let pad = 1e-3 * (d.upper - d.lower).abs().max(1.0);
                assert!(slope >= d.lower - pad && slope <= d.upper + pad, "{slope} not in {d:?}");
            }
        }
    }

    #[test]
    fn cap_area_spread_ignores_inactive_stages() {
        let trace_of = |areas: &[f64]| OptimizationTrace {
            k: 1,
            iterations: Vec::new(),
            stages: areas
                .iter()
                .enumerate()
                .map(|(i, &a)| StageRecord {
                    stage: i,
                    cap: 4.0,
                    start_lambda: 1.0,
                    best_lambda: 1.0,
                    iterations: 0,
                    stop_reason: "budget".into(),
                    level_sets: LevelSetReport {
                        cap: 4.0,
                        cap_area: a / 4.0,
                        cap_mass: a,
                        negative_area: 0.0,
                        negative_mass: 0.0,
                        scaled_cap_area: a,
                    },
                    density: Vec::new(),
                    error: None,
                })
                .collect(),
        };
        assert_eq!(trace_of(&[0.0, 0.0]).scaled_cap_area_spread(), None);
        assert_eq!(trace_of(&[0.07, 0.0, 0.0]).scaled_cap_area_spread(), Some(1.0));
        assert_eq!(trace_of(&[0.1, 0.0, 0.4]).scaled_cap_area_spread(), Some(4.0));
        assert!(trace_of(&[0.01, 0.5]).scaled_cap_area_spread().unwrap() > 10.0);
    }

    #[test]
    fn zero_step_keeps_density() {
        let (_mesh, _a, w, mu) = broken_sphere();
        let s = FeasibleSet::new(0.0, 10.0, w).unwrap();
        let same = take_step(&mu, &vec![0.0; mu.len()], 1.0, &s).unwrap();
        assert!(same.values.iter().zip(&mu).all(|(a, b)| (a - b).abs() < 1e-14));
    }
}
