//! Named verification suites shared by `cspec verify` and the acceptance tests.
//!
//! Every check returns a [`CheckLine`]; a suite passes when all lines pass.
//! The end-to-end checks go through [`crate::pipeline::execute`] with the
//! configs shipped under `configs/`.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble_mass, assemble_mass_with_weights, assemble_stiffness, DensityField, DirichletProblem};
use crate::certify::{disk_dirichlet_spectrum, expand_levels, sphere_spectrum, torus_spectrum};
use crate::concentration::{detect_atoms, synthetic_bumps, DetectorOptions, StageDensity};
use crate::density_opt::{eigenvalue_derivative, enumerate_projection, project_to_feasible, FeasibleSet};
use crate::eigensolver::{solve_dirichlet, solve_smallest, SolverOptions};
use crate::error::Result;
use crate::pipeline::{execute, numeric_differences, RunArtifacts, RunConfig};
use crate::surface::{build_disk_mesh, build_sphere_mesh, build_torus_mesh, nearest_vertex, Point, TriangleMesh};

pub const SPHERE_K1: &str = include_str!("../../../configs/sphere_k1.toml");
pub const SPHERE_K1_PAPER: &str = include_str!("../../../configs/sphere_k1_paper.toml");
pub const SPHERE_K2: &str = include_str!("../../../configs/sphere_k2.toml");
pub const TORUS_K2: &str = include_str!("../../../configs/torus_k2.toml");
pub const SMOKE: &str = include_str!("../../../configs/smoke.toml");

pub const SUITES: [&str; 5] = ["oracles", "gradients", "projection", "endtoend-k1", "endtoend-k2"];

#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl CheckLine {
    fn new(name: &str, pass: bool, detail: String, start: Instant) -> Self {
        CheckLine { name: name.into(), pass, detail, elapsed: start.elapsed() }
    }

    pub fn render(&self) -> String {
        format!(
            "{:<4} {:<28} {:>8.1}s  {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

fn failed(name: &str, e: impl std::fmt::Display, start: Instant) -> CheckLine {
    CheckLine::new(name, false, format!("error: {e}"), start)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Runs a named suite; `None` for an unknown name.
pub fn run_suite(name: &str) -> Option<Vec<CheckLine>> {
    let lines = match name {
        "oracles" => vec![
            sphere_oracle(),
            torus_oracle(),
            disk_oracle(),
            convergence_rate(),
            detector_soundness(),
            detector_specificity(),
        ],
        "gradients" => vec![gradient_check()],
        "projection" => vec![projection_oracle()],
        "endtoend-k1" => {
            let k1 = run_config(SPHERE_K1, None);
            let paper = run_config(SPHERE_K1_PAPER, None);
            vec![
                k1_sphere(&k1),
                certificate_check(&k1),
                monotonicity(&[("sphere k=1", &k1)]),
                level_set_trends(&[("sphere k=1", &k1)], &paper),
                determinism(),
            ]
        }
        "endtoend-k2" => {
            let k2 = run_config(SPHERE_K2, None);
            let torus = run_config(TORUS_K2, None);
            let coarse: Vec<_> = [2, 3].iter().map(|&l| run_config(SPHERE_K2, Some(l))).collect();
            vec![
                k2_sphere(&k2, &coarse),
                monotonicity(&[("sphere k=2", &k2), ("torus k=2", &torus)]),
                level_set_trends(&[("sphere k=2", &k2), ("torus k=2", &torus)], &Err("not run".into())),
            ]
        }
        _ => return None,
    };
    Some(lines)
}

pub type RunOutcome = std::result::Result<(RunArtifacts, Duration), String>;

/// Parses a shipped config, optionally overriding the sphere level, and executes it.
pub fn run_config(text: &str, level: Option<usize>) -> RunOutcome {
    let mut cfg = RunConfig::from_toml_str(text).map_err(|e| e.to_string())?;
    if let Some(l) = level {
        cfg.level = l;
    }
    let start = Instant::now();
    let art = execute(&cfg).map_err(|e| e.to_string())?;
    Ok((art, start.elapsed()))
}

pub fn sphere_oracle() -> CheckLine {
    let name = "sphere oracle (level 4)";
    let start = Instant::now();
    let go = || -> Result<(bool, String)> {
        let mesh = build_sphere_mesh(4)?;
        let a = assemble_stiffness(&mesh)?;
        let w = mesh.vertex_weights();
        let mu = DensityField::uniform(&w, 0.0, 1.0);
        let r = solve_smallest(&a, &assemble_mass(&mesh, &mu)?, 9, &SolverOptions::default())?;
        let oracle = expand_levels(&sphere_spectrum(2), 9);
        // the unit-mass normalization multiplies by the area 4 pi
        let worst1 = (1..4).map(|i| rel(r.eigenvalues[i], oracle[i] * 4.0 * PI)).fold(0.0, f64::max);
        let worst2 = (4..9).map(|i| rel(r.eigenvalues[i], oracle[i] * 4.0 * PI)).fold(0.0, f64::max);
        let secs = start.elapsed().as_secs_f64();
        Ok((
            worst1 < 0.01 && worst2 < 0.02 && secs < 60.0,
            format!("lambda1-3 off {:.3}% (< 1%), lambda4-8 off {:.3}% (< 2%), {secs:.1}s (< 60s)", 100.0 * worst1, 100.0 * worst2),
        ))
    };
    match go() {
        Ok((pass, detail)) => CheckLine::new(name, pass, detail, start),
        Err(e) => failed(name, e, start),
    }
}

pub fn torus_oracle() -> CheckLine {
    let name = "torus oracle (64x64)";
    let start = Instant::now();
    let go = || -> Result<(bool, String)> {
        let mesh = build_torus_mesh(64, 64, 1.0, 1.0)?;
        let a = assemble_stiffness(&mesh)?;
        let mu = DensityField::uniform(&mesh.vertex_weights(), 0.0, 2.0);
        let r = solve_smallest(&a, &assemble_mass(&mesh, &mu)?, 5, &SolverOptions::default())?;
        let oracle = torus_spectrum(1.0, 1.0, 5)?;
        let worst = (1..5).map(|i| rel(r.eigenvalues[i], oracle[i])).fold(0.0, f64::max);
        let secs = start.elapsed().as_secs_f64();
        Ok((worst < 0.01 && secs < 30.0, format!("lambda1-4 off {:.3}% (< 1%), {secs:.1}s (< 30s)", 100.0 * worst)))
    };
    match go() {
        Ok((pass, detail)) => CheckLine::new(name, pass, detail, start),
        Err(e) => failed(name, e, start),
    }
}

pub fn disk_oracle() -> CheckLine {
    let name = "disk Dirichlet oracle";
    let start = Instant::now();
    let go = || -> Result<(bool, String)> {
        let mesh = build_disk_mesh(1.0, 129)?;
        let ones = vec![1.0; mesh.num_vertices()];
        let problem = DirichletProblem::new(&mesh, &ones)?;
        let r = solve_dirichlet(&problem, 3, &SolverOptions::default())?;
        let oracle = disk_dirichlet_spectrum(1.0, 3)?;
        let e1 = rel(r.eigenvalues[0], 5.783186);
        let e23 = rel(r.eigenvalues[1], 14.68197).max(rel(r.eigenvalues[2], 14.68197));
        let oracle_ok = rel(oracle[0], 5.783186) < 1e-6 && rel(oracle[1], 14.68197) < 1e-6;
        Ok((
            e1 < 0.005 && e23 < 0.01 && oracle_ok,
            format!(
                "{} interior vertices; lambda1 off {:.3}% (< 0.5%), lambda2,3 off {:.3}% (< 1%)",
                problem.restriction.dim(),
                100.0 * e1,
                100.0 * e23
            ),
        ))
    };
    match go() {
        Ok((pass, detail)) => CheckLine::new(name, pass, detail, start),
        Err(e) => failed(name, e, start),
    }
}

/// Error ratio between consecutive sphere refinements for lambda_1.
pub fn convergence_rate() -> CheckLine {
    let name = "second-order convergence";
    let start = Instant::now();
    let go = || -> Result<(bool, String)> {
        let mut errs = Vec::new();
        for level in 2..=4 {
            let mesh = build_sphere_mesh(level)?;
            let a = assemble_stiffness(&mesh)?;
            let mu = DensityField::uniform(&mesh.vertex_weights(), 0.0, 1.0);
            let r = solve_smallest(&a, &assemble_mass(&mesh, &mu)?, 2, &SolverOptions::default())?;
            errs.push((r.eigenvalues[1] - 8.0 * PI).abs());
        }
        let ratios: Vec<f64> = errs.windows(2).map(|p| p[0] / p[1]).collect();
        let last = *ratios.last().unwrap();
        Ok(((3.5..=4.5).contains(&last), format!("error ratios {ratios:.3?} (finest in [3.5, 4.5])")))
    };
    match go() {
        Ok((pass, detail)) => CheckLine::new(name, pass, detail, start),
        Err(e) => failed(name, e, start),
    }
}

pub fn gradient_check() -> CheckLine {
    let name = "eigenvalue derivative vs FD";
    let start = Instant::now();
    let go = || -> Result<(bool, String)> {
        let mesh = build_sphere_mesh(3)?;
        let w = mesh.vertex_weights();
        let a = assemble_stiffness(&mesh)?;
        let raw: Vec<f64> = mesh.vertices.iter().map(|p| 1.0 + 0.3 * p[0] + 0.2 * p[1] * p[1] - 0.1 * p[2]).collect();
        let set = FeasibleSet::new(0.0, 10.0, w.clone())?;
        let z: f64 = raw.iter().zip(&w).map(|(a, b)| a * b).sum();
        let mu = project_to_feasible(&raw.iter().map(|v| v / z).collect::<Vec<_>>(), &set)?.values;
        let opts = SolverOptions::default();
        let solve = |m: &[f64]| -> Result<Vec<f64>> {
            let mass = assemble_mass_with_weights(&w, &DensityField::unconstrained(m.to_vec(), &w)?)?;
            Ok(solve_smallest(&a, &mass, 5, &opts)?.eigenvalues)
        };
        let mass = assemble_mass_with_weights(&w, &DensityField::unconstrained(mu.clone(), &w)?)?;
        let r = solve_smallest(&a, &mass, 5, &opts)?;
        let k = 2;
        let simple = r.group_of(k) == Some(k..k + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let h = 1e-5;
        let mut good = 0;
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let nu: Vec<f64> = (0..mu.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d = eigenvalue_derivative(&r, &w, k, &nu)?;
            let plus: Vec<f64> = mu.iter().zip(&nu).map(|(m, n)| m + h * n).collect();
            let minus: Vec<f64> = mu.iter().zip(&nu).map(|(m, n)| m - h * n).collect();
            let fd = (solve(&plus)?[k] - solve(&minus)?[k]) / (2.0 * h);
            let e = (fd - d.lower).abs() / fd.abs();
            worst = worst.max(e);
            if e < 1e-4 {
                good += 1;
            }
        }
        Ok((simple && good >= 19, format!("{good}/20 within 1e-4 (need 19), worst {worst:.2e}, simple={simple}")))
    };
    match go() {
        Ok((pass, detail)) => CheckLine::new(name, pass, detail, start),
        Err(e) => failed(name, e, start),
    }
}

pub fn projection_oracle() -> CheckLine {
    let name = "projection vs enumeration";
    let start = Instant::now();
    let go = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst: f64 = 0.0;
        let mut matched = 0;
        for _ in 0..100 {
            let n = rng.random_range(1..=6);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
            let area: f64 = w.iter().sum();
            let lower = if rng.random_bool(0.5) { 0.0 } else { -0.5 };
            let cap = rng.random_range(1.05..4.0) / area;
            let set = FeasibleSet::new(lower, cap, w)?;
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let fast = project_to_feasible(&raw, &set)?.values;
            if let Some(slow) = enumerate_projection(&raw, &set) {
                let e = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst = worst.max(e);
                if e < 1e-8 {
                    matched += 1;
                }
            }
        }
        Ok((matched == 100, format!("{matched}/100 within 1e-8, worst {worst:.2e}")))
    };
    match go() {
        Ok((pass, detail)) => CheckLine::new(name, pass, detail, start),
        Err(e) => failed(name, e, start),
    }
}

fn frozen(values: &[f64]) -> Vec<StageDensity> {
    [4.0, 8.0, 16.0, 32.0].iter().map(|&cap| StageDensity { cap, values: values.to_vec() }).collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Point {
    loop {
        let p: Point = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [p[0] / n, p[1] / n, p[2] / n];
        }
    }
}

/// 1 to 3 bumps of mass in [0.1, 0.3], support up to two mean edges.
pub fn random_bumps(mesh: &TriangleMesh, rng: &mut ChaCha8Rng) -> (Vec<(usize, f64)>, f64) {
    let edge = mesh.mean_edge_length();
    let count = rng.random_range(1..=3);
    let mut centers: Vec<usize> = Vec::new();
    while centers.len() < count {
        let c = nearest_vertex(mesh, &random_unit(rng));
        if centers.iter().all(|&o| mesh.kind.geodesic_distance(&mesh.vertices[o], &mesh.vertices[c]) > 0.8) {
            centers.push(c);
        }
    }
    let bumps = centers.into_iter().map(|c| (c, rng.random_range(0.1..0.3))).collect();
    (bumps, rng.random_range(0.2..2.0) * edge)
}

pub fn detector_soundness() -> CheckLine {
    let name = "detector soundness (20)";
    let start = Instant::now();
    let go = || -> Result<(bool, String)> {
        let mesh = build_sphere_mesh(5)?;
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut good = 0;
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let (bumps, scale) = random_bumps(&mesh, &mut rng);
            let mu = synthetic_bumps(&mesh, &bumps, scale)?;
            let dec = detect_atoms(&mesh, &frozen(&mu), 4, &DetectorOptions::default())?;
            let mut ok = dec.atom_count == bumps.len();
            for (c, m) in &bumps {
                match dec.atoms.iter().find(|a| a.vertex == *c) {
                    Some(a) => {
                        worst = worst.max((a.weight - m).abs());
                        ok &= (a.weight - m).abs() < 0.05;
                    }
                    None => ok = false,
                }
            }
            good += ok as usize;
        }
        Ok((good == 20, format!("{good}/20 exact K with weights within 0.05, worst weight error {worst:.4}")))
    };
    match go() {
        Ok((pass, detail)) => CheckLine::new(name, pass, detail, start),
        Err(e) => failed(name, e, start),
    }
}

pub fn detector_specificity() -> CheckLine {
    let name = "detector specificity (20)";
    let start = Instant::now();
    let go = || -> Result<(bool, String)> {
        let mesh = build_sphere_mesh(5)?;
        let w = mesh.vertex_weights();
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let mut clean = 0;
        for _ in 0..20 {
            let dirs: Vec<(Point, f64)> = (0..4).map(|_| (random_unit(&mut rng), rng.random_range(-1.0..1.0))).collect();
            let raw: Vec<f64> = mesh
                .vertices
                .iter()
                .map(|x| {
                    dirs.iter()
                        .map(|(d, a)| a * (x[0] * d[0] + x[1] * d[1] + x[2] * d[2]).powi(2))
                        .sum::<f64>()
                        .exp()
                })
                .collect();
            let z: f64 = raw.iter().zip(&w).map(|(a, b)| a * b).sum();
            let mu: Vec<f64> = raw.iter().map(|v| v / z).collect();
            let dec = detect_atoms(&mesh, &frozen(&mu), 4, &DetectorOptions::default())?;
            clean += (dec.atom_count == 0) as usize;
        }
        Ok((clean == 20, format!("{clean}/20 smooth densities with K = 0")))
    };
    match go() {
        Ok((pass, detail)) => CheckLine::new(name, pass, detail, start),
        Err(e) => failed(name, e, start),
    }
}

pub fn k1_sphere(run: &RunOutcome) -> CheckLine {
    let name = "k=1 sphere end-to-end";
    let start = Instant::now();
    let (art, took) = match run {
        Ok(x) => x,
        Err(e) => return failed(name, e, start),
    };
    let r = &art.report;
    let (Some(fs), Some(dec)) = (&r.final_spectrum, &r.decomposition) else {
        return failed(name, format!("incomplete run: {:?}", r.status.error), start);
    };
    let err = rel(fs.lambda_k, 8.0 * PI);
    let pass = r.status.completed && err < 0.03 && dec.atom_count == 0 && took.as_secs_f64() < 600.0;
    let mut line = CheckLine::new(
        name,
        pass,
        format!(
            "level {}: lambda1 = {:.4} pi ({:.2}% from 8 pi, < 3%), K = {}, {:.0}s (< 600s)",
            r.config.level,
            fs.lambda_k_over_pi,
            100.0 * err,
            dec.atom_count,
            took.as_secs_f64()
        ),
        start,
    );
    line.elapsed = *took;
    line
}

pub fn certificate_check(run: &RunOutcome) -> CheckLine {
    let name = "harmonic-map certificate";
    let start = Instant::now();
    let (art, _) = match run {
        Ok(x) => x,
        Err(e) => return failed(name, e, start),
    };
    let r = &art.report;
    let (Some(c), Some(fs), Some(dec)) = (&r.certificate, &r.final_spectrum, &r.decomposition) else {
        return failed(name, "no certificate in report", start);
    };
    let expected = fs.lambda_k * dec.regular_mass_measured;
    let e = rel(c.dirichlet_energy, expected);
    CheckLine::new(
        name,
        c.ell == 3 && c.sphere_defect < 1e-2 && e < 0.05,
        format!(
            "ell = {} (3), defect {:.2e} (< 1e-2), energy / (lambda * regular mass) off {:.2}% (< 5%)",
            c.ell,
            c.sphere_defect,
            100.0 * e
        ),
        start,
    )
}

pub fn monotonicity(runs: &[(&str, &RunOutcome)]) -> CheckLine {
    let name = "continuation monotonicity";
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, run) in runs {
        match run {
            Ok((art, _)) => {
                let vals: Vec<String> = art.report.stages.iter().map(|s| format!("{:.5}", s.best_over_pi)).collect();
                let ok = art.report.checks.stages_nondecreasing;
                pass &= ok;
                parts.push(format!(
                    "{label}: [{}] pi, worst drop {:.1e}",
                    vals.join(", "),
                    art.report.checks.worst_stage_drop
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{label}: {e}"));
            }
        }
    }
    CheckLine::new(name, pass, parts.join("; "), start)
}

/// `n * area(E_n)` within a factor 10 across stages, and in the paper-mode
/// run a negligible negative set at every stage optimum.
pub fn level_set_trends(runs: &[(&str, &RunOutcome)], paper: &RunOutcome) -> CheckLine {
    let name = "level-set trends";
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, run) in runs {
        match run {
            Ok((art, _)) => {
                let c = &art.report.checks;
                pass &= c.level_set_trend;
                let areas: Vec<String> =
                    art.report.stages.iter().map(|s| format!("{:.3e}", s.level_sets.scaled_cap_area)).collect();
                parts.push(match c.scaled_cap_area_spread {
                    Some(s) => {
                        let active = art.report.stages.iter().filter(|s| s.level_sets.scaled_cap_area > 0.0).count();
                        format!(
                            "{label}: n*area(E_n) = [{}], cap active at {active}/{} stages, spread over active {s:.2} (< 10)",
                            areas.join(", "),
                            art.report.stages.len()
                        )
                    }
                    None => format!("{label}: cap never active, n*area(E_n) = 0 at every stage (vacuous)"),
                });
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{label}: {e}"));
            }
        }
    }
    match paper {
        Ok((art, _)) => {
            let c = &art.report.checks;
            pass &= c.negative_set_null && c.level_set_trend;
            parts.push(format!("paper mode: max area(E_-) = {:.2e} (< 1e-3)", c.max_negative_area));
        }
        Err(e) if e == "not run" => {}
        Err(e) => {
            pass = false;
            parts.push(format!("paper mode: {e}"));
        }
    }
    CheckLine::new(name, pass, parts.join("; "), start)
}

/// `coarse` holds the same config at lower levels, for the refinement trend.
pub fn k2_sphere(run: &RunOutcome, coarse: &[RunOutcome]) -> CheckLine {
    let name = "k=2 sphere end-to-end";
    let start = Instant::now();
    let (art, took) = match run {
        Ok(x) => x,
        Err(e) => return failed(name, e, start),
    };
    let r = &art.report;
    let (Some(fs), Some(dec), Some(q)) = (&r.final_spectrum, &r.decomposition, &r.quantization) else {
        return failed(name, format!("incomplete run: {:?}", r.status.error), start);
    };
    let mut trend: Vec<(usize, f64)> = coarse
        .iter()
        .filter_map(|c| c.as_ref().ok())
        .filter_map(|(a, _)| a.report.final_spectrum.as_ref().map(|f| (a.report.config.level, f.lambda_k_over_pi)))
        .collect();
    trend.push((r.config.level, fs.lambda_k_over_pi));
    trend.sort_by_key(|t| t.0);
    let increasing = trend.len() == coarse.len() + 1 && trend.windows(2).all(|p| p[1].1 > p[0].1);
    let c1 = dec.atoms.first().map(|a| a.weight);
    let one = dec.atom_count == 1;
    let near_half = |x: f64| (x - 0.5).abs() <= 0.15;
    let weights_ok = one && c1.is_some_and(near_half) && near_half(dec.regular_area);
    let pass = r.status.completed
        && fs.lambda_k_over_pi >= 11.0
        && increasing
        && weights_ok
        && q.pass
        && took.as_secs_f64() < 1800.0;
    let trend_s: Vec<String> = trend.iter().map(|(l, v)| format!("L{l} {v:.3}")).collect();
    let mut line = CheckLine::new(
        name,
        pass,
        format!(
            "lambda2 = {:.4} pi (>= 11 pi); trend [{}] pi; K = {} (gauge {}), c1 = {}, A_r = {:.4}; quantization {}; {:.0}s (< 1800s)",
            fs.lambda_k_over_pi,
            trend_s.join(", "),
            dec.atom_count,
            if dec.gauge.is_some() { "on" } else { "off" },
            c1.map_or("-".into(), |c| format!("{c:.4}")),
            dec.regular_area,
            if q.pass { "pass" } else { "fail" },
            took.as_secs_f64()
        ),
        start,
    );
    line.elapsed = *took;
    line
}

/// Two runs of the smoke config with the same seed.
pub fn determinism() -> CheckLine {
    let name = "determinism";
    let start = Instant::now();
    let a = run_config(SMOKE, None);
    let b = run_config(SMOKE, None);
    match (a, b) {
        (Ok((x, _)), Ok((y, _))) => {
            let (Ok(vx), Ok(vy)) = (serde_json::to_value(&x.report), serde_json::to_value(&y.report)) else {
                return failed(name, "serialization failed", start);
            };
            let diffs = numeric_differences(&vx, &vy, 1e-10);
            CheckLine::new(
                name,
                diffs.is_empty() && x.report.status.completed,
                if diffs.is_empty() {
                    "two identical runs agree to 1e-10 in every numeric field".into()
                } else {
                    format!("{} differing fields, first: {}", diffs.len(), diffs[0])
                },
                start,
            )
        }
        (Err(e), _) | (_, Err(e)) => failed(name, e, start),
    }
}
