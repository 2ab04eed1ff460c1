//! End-to-end runs: optimize, decompose, quantize, certify, write files.
//!
//! Configuration is a flat TOML table (see `configs/` and the README for the
//! key list). Scientific verdicts are recorded in the report and never turn
//! into errors; only bad configuration and hard solver failures do.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::assembly::assemble_stiffness;
use crate::certify::{harmonic_map_certificate, HarmonicMapCertificate};
use crate::concentration::{
    check_quantization, default_sphere_table, detect_atoms, membership_report, singular_spectrum, DetectorOptions,
    MeasureDecomposition, MembershipReport, QuantizationCheck, SingularSpectrum, StageDensity,
};
use crate::density_opt::{continuation, AscentOptions, LevelSetReport, OptimizationTrace, SpectralObjective};
use crate::eigensolver::{SolverOptions, SpectralResult};
use crate::error::{Error, Result};
use crate::surface::{build_sphere_mesh, build_torus_mesh, SurfaceKind, TriangleMesh};

pub const SCHEMA_VERSION: &str = "1.0.0";
pub const REPORT_SCHEMA: &str = include_str!("../../../docs/report-schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceChoice {
    Sphere,
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LowerBoundMode {
    /// Nonnegative densities.
    Zero,
    /// Densities down to -1/2.
    Paper,
}

impl LowerBoundMode {
    pub fn value(self) -> f64 {
        match self {
            LowerBoundMode::Zero => 0.0,
            LowerBoundMode::Paper => -0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub surface: SurfaceChoice,
    /// Icosphere subdivision level.
    pub level: usize,
    /// Torus grid cells per side.
    pub torus_cells: usize,
    pub torus_width: f64,
    pub torus_height: f64,
    pub k: usize,
    pub caps: Vec<f64>,
    pub lower_bound: LowerBoundMode,
    /// Ascent iterations per stage.
    pub budget: usize,
    pub step_tol: f64,
    pub solver_tol: f64,
    pub group_tol: f64,
    pub seed: u64,
    pub out: Option<String>,
    pub detector_threshold: f64,
    pub detector_edge_multiple: f64,
    pub detector_growth_slack: f64,
    pub gauge: bool,
    pub quantization_tol: f64,
    pub membership_tol: f64,
    pub certificate_tol: f64,
    /// `Lambda_j(S^2)` for j = 1, 2, ...; empty means `8 pi j`.
    pub sphere_table: Vec<f64>,
    /// `Lambda_j(M)` for j = 1..k-1; empty means bootstrap by optimizing.
    pub class_table: Vec<f64>,
    pub bootstrap_budget: usize,
    pub export_eigenpairs: bool,
    pub export_mesh: bool,
    pub export_matrices: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            surface: SurfaceChoice::Sphere,
            level: 4,
            torus_cells: 32,
            torus_width: 1.0,
            torus_height: 1.0,
            k: 1,
            caps: vec![4.0, 8.0, 16.0, 32.0],
            lower_bound: LowerBoundMode::Zero,
            budget: 200,
            step_tol: 1e-8,
            solver_tol: 1e-9,
            group_tol: 2e-3,
            seed: 0,
            out: None,
            detector_threshold: 0.05,
            detector_edge_multiple: 10.0,
            detector_growth_slack: 0.25,
            gauge: true,
            quantization_tol: 0.15,
            membership_tol: 0.1,
            certificate_tol: 1e-2,
            sphere_table: Vec::new(),
            class_table: Vec::new(),
            bootstrap_budget: 100,
            export_eigenpairs: false,
            export_mesh: false,
            export_matrices: false,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Configuration(msg.into())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(config_err("k must be at least 1"));
        }
        if self.caps.is_empty() || self.caps.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(config_err("caps must be nonempty and strictly increasing"));
        }
        if self.caps.len() < 2 {
            return Err(config_err("atom detection needs at least two caps"));
        }
        let positive = [
            ("step_tol", self.step_tol),
            ("solver_tol", self.solver_tol),
            ("group_tol", self.group_tol),
            ("detector_threshold", self.detector_threshold),
            ("detector_edge_multiple", self.detector_edge_multiple),
            ("quantization_tol", self.quantization_tol),
            ("membership_tol", self.membership_tol),
            ("certificate_tol", self.certificate_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(config_err(format!("{name} must be positive, got {v}")));
            }
        }
        if self.solver_tol > 1e-2 {
            return Err(config_err("solver_tol must not exceed 1e-2"));
        }
        if !(0.0..1.0).contains(&self.detector_growth_slack) {
            return Err(config_err("detector_growth_slack must lie in [0, 1)"));
        }
        match self.surface {
            SurfaceChoice::Sphere if self.level > 6 => return Err(config_err("level above 6 is out of reach")),
            SurfaceChoice::Torus if self.torus_cells < 4 => return Err(config_err("torus_cells must be at least 4")),
            SurfaceChoice::Torus if !(self.torus_width > 0.0 && self.torus_height > 0.0) => {
                return Err(config_err("torus dimensions must be positive"))
            }
            _ => {}
        }
        let area = self.area();
        if !(self.lower_bound.value() < 1.0 / area && 1.0 / area < self.caps[0]) {
            return Err(config_err(format!(
                "the uniform density 1/{area:.4} must lie strictly between the lower bound and the first cap"
            )));
        }
        if self.sphere_table.iter().any(|v| !(*v > 0.0)) || self.class_table.iter().any(|v| !(*v >= 0.0)) {
            return Err(config_err("reference tables must hold positive values"));
        }
        if !self.sphere_table.is_empty() && self.sphere_table.len() < self.k {
            return Err(config_err("sphere_table needs an entry for every j = 1..k"));
        }
        if !self.class_table.is_empty() && self.class_table.len() + 1 < self.k {
            return Err(config_err("class_table needs an entry for every j = 1..k-1"));
        }
        Ok(())
    }

    fn area(&self) -> f64 {
        match self.surface {
            SurfaceChoice::Sphere => 4.0 * PI,
            SurfaceChoice::Torus => self.torus_width * self.torus_height,
        }
    }

    pub fn build_mesh(&self) -> Result<TriangleMesh> {
        match self.surface {
            SurfaceChoice::Sphere => build_sphere_mesh(self.level),
            SurfaceChoice::Torus => {
                build_torus_mesh(self.torus_cells, self.torus_cells, self.torus_width, self.torus_height)
            }
        }
    }

    pub fn ascent_options(&self, budget: usize) -> AscentOptions {
        AscentOptions {
            budget,
            step_tol: self.step_tol,
            group_tol: self.group_tol,
            solver: SolverOptions { tol: self.solver_tol, seed: self.seed, ..SolverOptions::default() },
            ..AscentOptions::default()
        }
    }

    pub fn detector_options(&self) -> DetectorOptions {
        DetectorOptions {
            threshold: self.detector_threshold,
            edge_multiple: self.detector_edge_multiple,
            growth_slack: self.detector_growth_slack,
            gauge: self.gauge,
            ..DetectorOptions::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshInfo {
    pub kind: String,
    pub vertices: usize,
    pub triangles: usize,
    pub area: f64,
    pub mean_edge: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub cap: f64,
    pub start_lambda: f64,
    pub best_lambda: f64,
    pub best_over_pi: f64,
    pub iterations: usize,
    pub stop_reason: String,
    pub level_sets: LevelSetReport,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalSpectrum {
    pub lambda_k: f64,
    pub lambda_k_over_pi: f64,
    pub eigenvalues: Vec<f64>,
    pub backward_errors: Vec<f64>,
    pub group: Range<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checks {
    /// `K <= k - 1` (or K = 0 for k = 1).
    pub atom_bound: Option<bool>,
    pub stages_nondecreasing: bool,
    pub worst_stage_drop: f64,
    /// `max / min` of `n * area(E_n)`; null when no stage saturates the cap.
    pub scaled_cap_area_spread: Option<f64>,
    pub level_set_trend: bool,
    pub max_negative_area: f64,
    pub negative_set_null: bool,
    pub quantization_pass: Option<bool>,
    pub membership_pass: Option<bool>,
    pub certificate_valid: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunStatus {
    pub completed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    pub status: RunStatus,
    pub config: RunConfig,
    pub mesh: MeshInfo,
    pub k: usize,
    pub stages: Vec<StageSummary>,
    pub final_spectrum: Option<FinalSpectrum>,
    pub decomposition: Option<MeasureDecomposition>,
    pub sphere_table: BTreeMap<usize, f64>,
    pub class_table: BTreeMap<usize, f64>,
    pub class_table_source: String,
    pub quantization: Option<QuantizationCheck>,
    pub singular_spectra: Vec<SingularSpectrum>,
    pub regular_spectrum: Option<Vec<f64>>,
    pub membership: Option<MembershipReport>,
    pub certificate: Option<HarmonicMapCertificate>,
    pub checks: Checks,
    pub warnings: Vec<String>,
}

/// Everything a run produced, in memory.
pub struct RunArtifacts {
    pub report: Report,
    pub trace: OptimizationTrace,
    pub mesh: TriangleMesh,
    pub final_density: Vec<f64>,
    pub final_result: Option<SpectralResult>,
}

fn stage_summaries(trace: &OptimizationTrace) -> Vec<StageSummary> {
    trace
        .stages
        .iter()
        .map(|s| StageSummary {
            stage: s.stage,
            cap: s.cap,
            start_lambda: s.start_lambda,
            best_lambda: s.best_lambda,
            best_over_pi: s.best_lambda / PI,
            iterations: s.iterations,
            stop_reason: s.stop_reason.clone(),
            level_sets: s.level_sets.clone(),
            error: s.error.clone(),
        })
        .collect()
}

fn mesh_info(mesh: &TriangleMesh) -> MeshInfo {
    let kind = match mesh.kind {
        SurfaceKind::RoundSphere { radius } => format!("sphere(radius={radius})"),
        SurfaceKind::FlatTorus { width, height } => format!("torus({width}x{height})"),
        SurfaceKind::Planar => "planar".into(),
    };
    MeshInfo {
        kind,
        vertices: mesh.num_vertices(),
        triangles: mesh.num_triangles(),
        area: mesh.total_area(),
        mean_edge: mesh.mean_edge_length(),
    }
}

/// Runs the whole pipeline in memory. Configuration problems are returned as
/// errors; solver failures after that point end up in `report.status`.
pub fn execute(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let mesh = cfg.build_mesh()?;
    let weights = mesh.vertex_weights();
    let stiffness = assemble_stiffness(&mesh)?;
    let objective = SpectralObjective::new(stiffness, weights.clone(), cfg.k)?;
    let opts = cfg.ascent_options(cfg.budget);
    let lower = cfg.lower_bound.value();

    let mut warnings = Vec::new();
    let mut report = Report {
        schema_version: SCHEMA_VERSION.into(),
        status: RunStatus { completed: false, error: None },
        config: cfg.clone(),
        mesh: mesh_info(&mesh),
        k: cfg.k,
        stages: Vec::new(),
        final_spectrum: None,
        decomposition: None,
        sphere_table: BTreeMap::new(),
        class_table: BTreeMap::new(),
        class_table_source: String::new(),
        quantization: None,
        singular_spectra: Vec::new(),
        regular_spectrum: None,
        membership: None,
        certificate: None,
        checks: Checks {
            atom_bound: None,
            stages_nondecreasing: false,
            worst_stage_drop: 0.0,
            scaled_cap_area_spread: None,
            level_set_trend: false,
            max_negative_area: 0.0,
            negative_set_null: false,
            quantization_pass: None,
            membership_pass: None,
            certificate_valid: None,
        },
        warnings: Vec::new(),
    };

    let (density, trace) = match continuation(&objective, lower, &cfg.caps, None, &opts) {
        Ok(x) => x,
        Err(e) => {
            report.status.error = Some(e.to_string());
            let values = vec![1.0 / mesh.total_area(); mesh.num_vertices()];
            return Ok(RunArtifacts {
                report,
                trace: OptimizationTrace { k: cfg.k, ..Default::default() },
                mesh,
                final_density: values,
                final_result: None,
            });
        }
    };
    report.stages = stage_summaries(&trace);
    let drop = trace.worst_stage_drop();
    report.checks.worst_stage_drop = drop;
    report.checks.stages_nondecreasing = drop <= 1e-6 && trace.stages.iter().all(|s| s.error.is_none());
    report.checks.scaled_cap_area_spread = trace.scaled_cap_area_spread();
    report.checks.level_set_trend = trace.scaled_cap_area_spread().is_none_or(|s| s < 10.0);
    report.checks.max_negative_area =
        trace.stages.iter().map(|s| s.level_sets.negative_area).fold(0.0, f64::max);
    report.checks.negative_set_null = report.checks.max_negative_area < 1e-3;

    let stage_errors: Vec<String> = trace
        .stages
        .iter()
        .filter_map(|s| s.error.as_ref().map(|e| format!("stage {} (cap {}): {e}", s.stage, s.cap)))
        .collect();
    let final_density = density.values.clone();
    let mut artifacts = RunArtifacts { report, trace, mesh, final_density, final_result: None };
    if !stage_errors.is_empty() {
        artifacts.report.status.error = Some(stage_errors.join("; "));
        return Ok(artifacts);
    }

    match analyze(cfg, &objective, &mut artifacts, &mut warnings) {
        Ok(()) => artifacts.report.status.completed = true,
        Err(e) => artifacts.report.status.error = Some(e.to_string()),
    }
    artifacts.report.warnings = warnings;
    Ok(artifacts)
}

fn analyze(
    cfg: &RunConfig,
    objective: &SpectralObjective,
    art: &mut RunArtifacts,
    warnings: &mut Vec<String>,
) -> Result<()> {
    let k = cfg.k;
    let opts = cfg.ascent_options(cfg.budget);
    let mesh = &art.mesh;
    let result = objective.evaluate(&art.final_density, &opts.solver, None, opts.group_tol)?;
    let group = result.group_of(k).unwrap_or(k..k + 1);
    let lambda_k = result.eigenvalues[k];
    art.report.final_spectrum = Some(FinalSpectrum {
        lambda_k,
        lambda_k_over_pi: lambda_k / PI,
        eigenvalues: result.eigenvalues.clone(),
        backward_errors: result.backward_errors.clone(),
        group: group.clone(),
    });

    let stages: Vec<StageDensity> = art.trace.stages.iter().map(StageDensity::from).collect();
    let dec = detect_atoms(mesh, &stages, k, &cfg.detector_options())?;
    art.report.checks.atom_bound = Some(dec.within_bound);

    let sphere_table: BTreeMap<usize, f64> = if cfg.sphere_table.is_empty() {
        default_sphere_table(k)
    } else {
        cfg.sphere_table.iter().enumerate().map(|(j, v)| (j + 1, *v)).collect()
    };
    let (class_table, source) = if !cfg.class_table.is_empty() {
        (cfg.class_table.iter().enumerate().map(|(j, v)| (j + 1, *v)).collect(), "config".to_string())
    } else {
        (bootstrap_class_table(cfg, objective)?, "bootstrap".to_string())
    };
    let quant = check_quantization(&dec, lambda_k, &sphere_table, &class_table, cfg.quantization_tol)?;
    art.report.checks.quantization_pass = Some(quant.pass);
    art.report.sphere_table = sphere_table;
    art.report.class_table = quant.class_table.clone();
    art.report.class_table_source = source;

    // singular spectra on the two latest stages
    let late = &stages[stages.len().saturating_sub(2)..];
    let r1 = dec.radii[0];
    let radii = [r1, r1 / 2f64.sqrt(), r1 / 2.0];
    let mut spectra = Vec::new();
    for atom in &dec.atoms {
        match singular_spectrum(mesh, atom.vertex, &radii, late, dec.gauge.as_ref(), &opts.solver) {
            Ok(s) => spectra.push(s),
            Err(Error::DegenerateBall(msg)) => warnings.push(format!("atom {}: {msg}", atom.vertex)),
            Err(e) => return Err(e),
        }
    }

    let regular_spectrum = if dec.atoms.is_empty() {
        result.eigenvalues.clone()
    } else {
        objective.evaluate(&dec.regular_density, &opts.solver, None, opts.group_tol)?.eigenvalues
    };
    let membership = membership_report(lambda_k, &spectra, &regular_spectrum, cfg.membership_tol);
    art.report.checks.membership_pass = Some(membership.singular_pass && membership.regular_pass);

    let support: Vec<usize> = (0..mesh.num_vertices()).filter(|&v| dec.regular_density[v] > 0.0).collect();
    match harmonic_map_certificate(&result, group, &support, cfg.certificate_tol) {
        Ok(c) => {
            art.report.checks.certificate_valid = Some(c.valid);
            art.report.certificate = Some(c);
        }
        Err(e) => warnings.push(format!("certificate not computed: {e}")),
    }

    warnings.extend(dec.warnings.iter().cloned());
    art.report.decomposition = Some(dec);
    art.report.quantization = Some(quant);
    art.report.singular_spectra = spectra;
    art.report.regular_spectrum = Some(regular_spectrum);
    art.report.membership = Some(membership);
    art.final_result = Some(result);
    Ok(())
}

/// Class-table entries for j < k from shorter runs of the optimizer itself.
fn bootstrap_class_table(cfg: &RunConfig, objective: &SpectralObjective) -> Result<BTreeMap<usize, f64>> {
    let mut table = BTreeMap::new();
    let opts = cfg.ascent_options(cfg.bootstrap_budget);
    for j in 1..cfg.k {
        let obj = SpectralObjective::new(objective.stiffness.clone(), objective.weights.clone(), j)?;
        let (_, trace) = continuation(&obj, cfg.lower_bound.value(), &cfg.caps, None, &opts)?;
        let best = trace.stages.iter().map(|s| s.best_lambda).filter(|v| v.is_finite()).fold(0.0, f64::max);
        table.insert(j, best);
    }
    Ok(table)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes every output file of a run into `out`.
pub fn write_outputs(art: &RunArtifacts, out: &Path) -> Result<()> {
    fs::create_dir_all(out.join("plotdata"))?;
    let value = serde_json::to_value(&art.report)?;
    let problems = validate_report(&value)?;
    if !problems.is_empty() {
        return Err(Error::Configuration(format!("report does not match its schema: {}", problems.join("; "))));
    }
    let mut f = create(&out.join("report.json"))?;
    serde_json::to_writer_pretty(&mut f, &value)?;
    writeln!(f)?;
    f.flush()?;

    let mut f = create(&out.join("trace.jsonl"))?;
    art.trace.write_jsonl(&mut f)?;
    f.flush()?;
    let mut f = create(&out.join("stage_summary.csv"))?;
    art.trace.write_stage_csv(&mut f)?;
    f.flush()?;

    let weights = art.mesh.vertex_weights();
    let regular = art.report.decomposition.as_ref().map(|d| &d.regular_density);
    let mut f = create(&out.join("density_final.csv"))?;
    writeln!(f, "vertex,x,y,z,weight,density,regular_density")?;
    for (v, p) in art.mesh.vertices.iter().enumerate() {
        let r = regular.map_or(art.final_density[v], |r| r[v]);
        writeln!(
            f,
            "{v},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            p[0], p[1], p[2], weights[v], art.final_density[v], r
        )?;
    }
    f.flush()?;

    write_plotdata(art, &out.join("plotdata"))?;

    let cfg = &art.report.config;
    if cfg.export_eigenpairs {
        if let Some(r) = &art.final_result {
            let mut f = create(&out.join("eigenpairs.csv"))?;
            r.write_csv(&mut f)?;
            f.flush()?;
        }
    }
    if cfg.export_mesh {
        art.mesh.write_off(create(&out.join("mesh.off"))?)?;
    }
    if cfg.export_matrices {
        let a = assemble_stiffness(&art.mesh)?;
        let mut f = create(&out.join("stiffness.mtx"))?;
        a.matrix.write_matrix_market(&mut f)?;
        f.flush()?;
        let mut f = create(&out.join("mass.mtx"))?;
        let n = weights.len();
        writeln!(f, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(f, "{n} {n} {n}")?;
        for (i, (m, w)) in art.final_density.iter().zip(&weights).enumerate() {
            writeln!(f, "{} {} {:.17e}", i + 1, i + 1, m * w)?;
        }
        f.flush()?;
    }
    Ok(())
}

fn write_plotdata(art: &RunArtifacts, dir: &Path) -> Result<()> {
    let mut f = create(&dir.join("eigenvalue_history.csv"))?;
    writeln!(f, "step,stage,cap,iteration,lambda_k,best_lambda_k,lambda_k_minus_1,lambda_k_plus_1,lambda_k_plus_2")?;
    let at = |v: &Vec<f64>, i: usize| v.get(i).map_or(String::new(), |x| format!("{x:.15e}"));
    for (step, r) in art.trace.iterations.iter().enumerate() {
        writeln!(
            f,
            "{step},{},{},{},{:.15e},{:.15e},{},{},{}",
            r.stage,
            r.cap,
            r.iteration,
            r.lambda_k,
            r.best_lambda_k,
            if art.report.k >= 1 { at(&r.lambdas, 0) } else { String::new() },
            at(&r.lambdas, 2),
            at(&r.lambdas, 3)
        )?;
    }
    f.flush()?;

    let weights = art.mesh.vertex_weights();
    let mut f = create(&dir.join("mass_histogram.csv"))?;
    writeln!(f, "stage,cap,bin,density_lo,density_hi,vertices,area,mass")?;
    const BINS: usize = 24;
    for s in &art.trace.stages {
        let lo = art.report.config.lower_bound.value();
        let width = (s.cap - lo) / BINS as f64;
        let mut count = [0usize; BINS];
        let mut area = [0.0; BINS];
        let mut mass = [0.0; BINS];
        for (m, w) in s.density.iter().zip(&weights) {
            let b = (((m - lo) / width).floor().max(0.0) as usize).min(BINS - 1);
            count[b] += 1;
            area[b] += w;
            mass[b] += m * w;
        }
        for b in 0..BINS {
            writeln!(
                f,
                "{},{},{b},{:.15e},{:.15e},{},{:.15e},{:.15e}",
                s.stage,
                s.cap,
                lo + b as f64 * width,
                lo + (b + 1) as f64 * width,
                count[b],
                area[b],
                mass[b]
            )?;
        }
    }
    f.flush()?;

    let mut f = create(&dir.join("level_sets.csv"))?;
    writeln!(f, "stage,cap,cap_area,scaled_cap_area,cap_mass,negative_area,negative_mass")?;
    for s in &art.trace.stages {
        let l = &s.level_sets;
        writeln!(
            f,
            "{},{},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}",
            s.stage, s.cap, l.cap_area, l.scaled_cap_area, l.cap_mass, l.negative_area, l.negative_mass
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Resolves the output directory: explicit flag, then config, then `out`.
pub fn output_dir(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// `execute` then `write_outputs`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Report> {
    let art = execute(cfg)?;
    write_outputs(&art, out)?;
    Ok(art.report)
}

/// Checks a JSON value against the shipped report schema. Supports the
/// subset the schema uses: `type` (string or list), `properties`,
/// `required`, `additionalProperties: false`, `items`, `enum`, `const`,
/// `minimum`, and local `$ref` into `$defs`.
pub fn validate_report(value: &Value) -> Result<Vec<String>> {
    let schema: Value = serde_json::from_str(REPORT_SCHEMA)?;
    let mut problems = Vec::new();
    validate_node(value, &schema, &schema, "$", &mut problems);
    Ok(problems)
}

fn type_matches(value: &Value, ty: &str) -> bool {
    match ty {
        "null" => value.is_null(),
        "boolean" => value.is_boolean(),
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "number" => value.is_number(),
        "integer" => value.as_f64().is_some_and(|x| x.fract() == 0.0) && value.is_number(),
        _ => false,
    }
}

fn validate_node(value: &Value, schema: &Value, root: &Value, path: &str, problems: &mut Vec<String>) {
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        match r.strip_prefix("#/$defs/").and_then(|name| root.get("$defs").and_then(|d| d.get(name))) {
            Some(target) => validate_node(value, target, root, path, problems),
            None => problems.push(format!("{path}: unresolved reference {r}")),
        }
        return;
    }
    if let Some(ty) = schema.get("type") {
        let ok = match ty {
            Value::String(t) => type_matches(value, t),
            Value::Array(ts) => ts.iter().filter_map(Value::as_str).any(|t| type_matches(value, t)),
            _ => true,
        };
        if !ok {
            problems.push(format!("{path}: expected type {ty}, found {value}"));
            return;
        }
    }
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if !options.contains(value) {
            problems.push(format!("{path}: {value} is not one of {options:?}"));
        }
    }
    if let Some(c) = schema.get("const") {
        if c != value {
            problems.push(format!("{path}: expected {c}, found {value}"));
        }
    }
    if let (Some(min), Some(x)) = (schema.get("minimum").and_then(Value::as_f64), value.as_f64()) {
        if x < min {
            problems.push(format!("{path}: {x} below minimum {min}"));
        }
    }
    if let Some(obj) = value.as_object() {
        let props = schema.get("properties").and_then(Value::as_object);
        if let Some(req) = schema.get("required").and_then(Value::as_array) {
            for key in req.iter().filter_map(Value::as_str) {
                if !obj.contains_key(key) {
                    problems.push(format!("{path}: missing required field {key}"));
                }
            }
        }
        for (key, v) in obj {
            match props.and_then(|p| p.get(key)) {
                Some(sub) => validate_node(v, sub, root, &format!("{path}.{key}"), problems),
                None => {
                    if schema.get("additionalProperties") == Some(&Value::Bool(false)) {
                        problems.push(format!("{path}: unexpected field {key}"));
                    }
                }
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            validate_node(v, items, root, &format!("{path}[{i}]"), problems);
        }
    }
}

/// Numeric leaves of two JSON documents that differ by more than `tol`
/// (relative to magnitude, with an absolute floor of `tol`).
pub fn numeric_differences(a: &Value, b: &Value, tol: f64) -> Vec<String> {
    fn walk(a: &Value, b: &Value, tol: f64, path: String, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Number(x), Value::Number(y)) => {
                let (x, y) = (x.as_f64().unwrap_or(0.0), y.as_f64().unwrap_or(0.0));
                if (x - y).abs() > tol * x.abs().max(y.abs()).max(1.0) {
                    out.push(format!("{path}: {x} vs {y}"));
                }
            }
            (Value::Array(xs), Value::Array(ys)) => {
                if xs.len() != ys.len() {
                    out.push(format!("{path}: length {} vs {}", xs.len(), ys.len()));
                }
                for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
                    walk(x, y, tol, format!("{path}[{i}]"), out);
                }
            }
            (Value::Object(xs), Value::Object(ys)) => {
                for (k, x) in xs {
                    match ys.get(k) {
                        Some(y) => walk(x, y, tol, format!("{path}.{k}"), out),
                        None => out.push(format!("{path}.{k}: missing")),
                    }
                }
            }
            (x, y) if x != y => out.push(format!("{path}: {x} vs {y}")),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(a, b, tol, "$".into(), &mut out);
    out
}
