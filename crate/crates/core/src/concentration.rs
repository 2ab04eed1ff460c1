//! Point-concentration analysis of continuation outputs.
//!
//! A vertex is an atom when the background-corrected mass of the geodesic
//! ball of radius `r0 / sqrt(cap)` around it stays above a threshold while
//! the cap schedule shrinks the ball. Weights are read at the coarsest radius.
//!
//! On the round sphere a second pass runs in a conformal gauge. Two
//! equal lumps are conformally equivalent to one spread-out lump plus one
//! sharp one, and the eigenvalues do not see the difference, so when the
//! native frame finds nothing but the density has several sharp basins we
//! dilate the sphere until one basin is balanced and look again. Raw and
//! gauged findings are both kept.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::DirichletProblem;
use crate::density_opt::StageRecord;
use crate::eigensolver::{solve_dirichlet, SolverOptions};
use crate::error::{Error, Result};
use crate::surface::{cross, dot, geodesic_ball, norm, Point, SurfaceKind, TriangleMesh};

/// One continuation stage as seen by the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDensity {
    pub cap: f64,
    pub values: Vec<f64>,
}

impl From<&StageRecord> for StageDensity {
    fn from(s: &StageRecord) -> Self {
        StageDensity { cap: s.cap, values: s.density.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorOptions {
    /// Base radius in mean edge lengths, used when `r0` is unset.
    pub edge_multiple: f64,
    pub r0: Option<f64>,
    /// Minimum corrected ball mass.
    pub threshold: f64,
    /// Allowed relative loss of ball mass from one stage to the next, and
    /// from the first stage to the last.
    pub growth_slack: f64,
    /// Candidate centers must exceed this multiple of the mean density.
    pub peak_ratio: f64,
    pub gauge: bool,
    /// Basins count as sharp lumps above this multiple of the mean density.
    pub gauge_peak_ratio: f64,
}

impl Default for DetectorOptions {
    fn default() -> Self {
        DetectorOptions {
            edge_multiple: 10.0,
            r0: None,
            threshold: 0.05,
            growth_slack: 0.25,
            peak_ratio: 2.0,
            gauge: true,
            gauge_peak_ratio: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub vertex: usize,
    /// Position in the frame where the atom was detected.
    pub position: Point,
    pub weight: f64,
    /// Corrected ball mass per stage, at that stage's radius.
    pub stage_masses: Vec<f64>,
    /// Linear extrapolation of `stage_masses` to zero radius (in r^2).
    pub extrapolated_mass: f64,
    /// Vertices inside the atom ball at the coarsest radius.
    #[serde(skip_serializing, default)]
    pub support: Vec<usize>,
}

/// Conformal dilation of the unit sphere fixing `axis` and `-axis`:
/// stereographic projection from `-axis`, scaling by `exp(dilation)`, and back.
/// Mass near `axis` spreads out and mass near `-axis` concentrates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereGauge {
    pub axis: Point,
    pub dilation: f64,
    /// Mass of the basin that was balanced.
    pub balanced_mass: f64,
    pub balanced_vertex: usize,
}

impl SphereGauge {
    pub fn map_point(&self, x: &Point) -> Point {
        let p = self.axis;
        let (e1, e2) = orthonormal_pair(&p);
        let (a, b, c) = (dot(x, &e1), dot(x, &e2), dot(x, &p));
        let denom = 1.0 + c;
        if denom <= 1e-300 {
            return [-p[0], -p[1], -p[2]];
        }
        let scale = self.dilation.exp() / denom;
        let (za, zb) = (a * scale, b * scale);
        let r2 = za * za + zb * zb;
        let (u, v, w) = (2.0 * za / (1.0 + r2), 2.0 * zb / (1.0 + r2), (1.0 - r2) / (1.0 + r2));
        [
            u * e1[0] + v * e2[0] + w * p[0],
            u * e1[1] + v * e2[1] + w * p[1],
            u * e1[2] + v * e2[2] + w * p[2],
        ]
    }

    /// The mesh with every vertex moved; connectivity is unchanged.
    pub fn apply(&self, mesh: &TriangleMesh) -> Result<TriangleMesh> {
        let radius = match mesh.kind {
            SurfaceKind::RoundSphere { radius } => radius,
            _ => return Err(Error::Precondition("the conformal gauge needs a round sphere".into())),
        };
        let vertices = mesh
            .vertices
            .iter()
            .map(|x| {
                let y = self.map_point(&[x[0] / radius, x[1] / radius, x[2] / radius]);
                [y[0] * radius, y[1] * radius, y[2] * radius]
            })
            .collect();
        TriangleMesh::new(vertices, mesh.triangles.clone(), mesh.kind)
    }

    /// Pushes a density forward: vertex masses are kept, so the density is
    /// rescaled by the ratio of old to new vertex weights.
    pub fn push_density(old_weights: &[f64], new_weights: &[f64], values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(old_weights.iter().zip(new_weights))
            .map(|(m, (w0, w1))| m * w0 / w1)
            .collect()
    }
}

fn orthonormal_pair(p: &Point) -> (Point, Point) {
    let a = if p[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = cross(p, &a);
    let n = norm(&e1);
    let e1 = [e1[0] / n, e1[1] / n, e1[2] / n];
    (e1, cross(p, &e1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureDecomposition {
    pub atoms: Vec<Atom>,
    /// Final-stage density with atom balls zeroed, not renormalized.
    #[serde(skip_serializing, default)]
    pub regular_density: Vec<f64>,
    #[serde(rename = "K")]
    pub atom_count: usize,
    /// `1 - sum c_i`.
    pub regular_area: f64,
    /// Mass actually left in `regular_density`.
    pub regular_mass_measured: f64,
    /// `K <= k - 1`.
    pub within_bound: bool,
    pub k: usize,
    /// Ball radius per stage.
    pub radii: Vec<f64>,
    /// Atom weights found in the native frame, before any gauge.
    pub raw_weights: Vec<f64>,
    pub gauge: Option<SphereGauge>,
    pub warnings: Vec<String>,
}

impl MeasureDecomposition {
    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.weight).collect()
    }
}

fn check_stages(mesh: &TriangleMesh, stages: &[StageDensity]) -> Result<()> {
    if stages.len() < 2 {
        return Err(Error::Precondition("atom detection compares at least two continuation stages".into()));
    }
    for s in stages {
        if s.values.len() != mesh.num_vertices() {
            return Err(Error::SizeMismatch { expected: mesh.num_vertices(), got: s.values.len() });
        }
        if !(s.cap > 0.0) || s.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("stage densities must be finite with a positive cap".into()));
        }
    }
    Ok(())
}

/// Splits the final-stage density into atoms and a regular part.
pub fn detect_atoms(
    mesh: &TriangleMesh,
    stages: &[StageDensity],
    k: usize,
    opts: &DetectorOptions,
) -> Result<MeasureDecomposition> {
    check_stages(mesh, stages)?;
    let r0 = opts.r0.unwrap_or(opts.edge_multiple * mesh.mean_edge_length());
    let limit = 0.5 * mesh.kind.max_ball_radius();
    let radii: Vec<f64> = stages.iter().map(|s| (r0 / s.cap.sqrt()).min(limit)).collect();
    let weights = mesh.vertex_weights();
    let masses: Vec<Vec<f64>> = stages
        .iter()
        .map(|s| s.values.iter().zip(&weights).map(|(m, w)| m * w).collect())
        .collect();

    let mut warnings = Vec::new();
    let raw = find_atoms(mesh, &weights, &masses, &radii, opts, &mut warnings);
    let raw_weights: Vec<f64> = raw.iter().map(|a| a.weight).collect();
    let mut atoms = raw;
    let mut gauge = None;
    if atoms.is_empty() && opts.gauge {
        if let SurfaceKind::RoundSphere { .. } = mesh.kind {
            if let Some(g) = choose_gauge(mesh, &weights, masses.last().unwrap(), opts) {
                match g.apply(mesh) {
                    Ok(gm) => {
                        let gw = gm.vertex_weights();
                        let mut gauged_warnings = Vec::new();
                        let found = find_atoms(&gm, &gw, &masses, &radii, opts, &mut gauged_warnings);
                        warnings.extend(gauged_warnings.into_iter().map(|w| format!("gauged frame: {w}")));
                        if !found.is_empty() {
                            atoms = found;
                            gauge = Some(g);
                        } else {
                            warnings.push("gauged frame found no atom either".into());
                        }
                    }
                    Err(e) => warnings.push(format!("gauge rejected: {e}")),
                }
            }
        }
    }

    let last = stages.last().unwrap();
    let mut regular_density = last.values.clone();
    for a in &atoms {
        for &v in &a.support {
            regular_density[v] = 0.0;
        }
    }
    let total: f64 = atoms.iter().map(|a| a.weight).sum();
    let regular_mass_measured = regular_density.iter().zip(&weights).map(|(m, w)| m * w).sum();
    Ok(MeasureDecomposition {
        atom_count: atoms.len(),
        within_bound: atoms.len() + 1 <= k.max(1),
        atoms,
        regular_density,
        regular_area: 1.0 - total,
        regular_mass_measured,
        k,
        radii,
        raw_weights,
        gauge,
        warnings,
    })
}

/// Mass inside `B(center, r)` minus the mean annulus density times the ball area.
fn corrected_ball_mass(dist: &[f64], weights: &[f64], mass: &[f64], r: f64) -> f64 {
    let (mut ball_m, mut ball_w, mut ann_m, mut ann_w) = (0.0, 0.0, 0.0, 0.0);
    for ((&d, &w), &m) in dist.iter().zip(weights).zip(mass) {
        if d <= r {
            ball_m += m;
            ball_w += w;
        } else if d <= 2.0 * r {
            ann_m += m;
            ann_w += w;
        }
    }
    let background = if ann_w > 0.0 { (ann_m / ann_w).max(0.0) } else { 0.0 };
    (ball_m - background * ball_w).max(0.0)
}

fn find_atoms(
    mesh: &TriangleMesh,
    weights: &[f64],
    masses: &[Vec<f64>],
    radii: &[f64],
    opts: &DetectorOptions,
    warnings: &mut Vec<String>,
) -> Vec<Atom> {
    let area: f64 = weights.iter().sum();
    let last = masses.last().unwrap();
    let density: Vec<f64> = last.iter().zip(weights).map(|(m, w)| m / w).collect();
    let adjacency = mesh.adjacency();
    let floor = opts.peak_ratio / area;
    let candidates: Vec<usize> = (0..mesh.num_vertices())
        .filter(|&v| density[v] >= floor && adjacency[v].iter().all(|&u| density[u] <= density[v]))
        .collect();

    let r1 = radii[0];
    let mut scored: Vec<(usize, Vec<f64>)> = candidates
        .par_iter()
        .map(|&c| {
            let x = mesh.vertices[c];
            let dist: Vec<f64> = mesh.vertices.iter().map(|p| mesh.kind.geodesic_distance(&x, p)).collect();
            let per_stage: Vec<f64> = masses
                .iter()
                .zip(radii)
                .map(|(m, &r)| corrected_ball_mass(&dist, weights, m, r))
                .collect();
            (c, per_stage)
        })
        .collect();
    scored.retain(|(_, m)| {
        let first = m[0];
        let lastm = *m.last().unwrap();
        let keep = 1.0 - opts.growth_slack;
        m.iter().all(|&x| x >= opts.threshold)
            && m.windows(2).all(|p| p[1] >= keep * p[0])
            && lastm >= keep * first
    });
    // strongest first; ties by vertex for determinism
    scored.sort_by(|a, b| b.1[0].total_cmp(&a.1[0]).then(a.0.cmp(&b.0)));

    let mut atoms: Vec<Atom> = Vec::new();
    let mut absorbed: BTreeMap<usize, usize> = BTreeMap::new();
    for (c, stage_masses) in scored {
        let x = mesh.vertices[c];
        if let Some(hit) = atoms
            .iter()
            .position(|a| mesh.kind.geodesic_distance(&a.position, &x) < 2.0 * r1)
        {
            *absorbed.entry(hit).or_default() += 1;
            continue;
        }
        let support = (0..mesh.num_vertices())
            .filter(|&v| mesh.kind.geodesic_distance(&x, &mesh.vertices[v]) <= r1)
            .collect();
        let extrapolated_mass = extrapolate_to_zero(radii, &stage_masses);
        atoms.push(Atom {
            vertex: c,
            position: x,
            weight: stage_masses[0],
            stage_masses,
            extrapolated_mass,
            support,
        });
    }
    for (i, n) in absorbed {
        warnings.push(format!(
            "atom at vertex {} merged {} overlapping candidate ball(s)",
            atoms[i].vertex, n
        ));
    }
    atoms
}

/// Least-squares line through `(r^2, m)`, evaluated at zero.
fn extrapolate_to_zero(radii: &[f64], values: &[f64]) -> f64 {
    let n = radii.len() as f64;
    let xs: Vec<f64> = radii.iter().map(|r| r * r).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = values.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return my;
    }
    let sxy: f64 = xs.iter().zip(values).map(|(x, y)| (x - mx) * (y - my)).sum();
    my - sxy / sxx * mx
}

/// Steepest-ascent basins of the vertex density: `(peak vertex, members)`.
fn basins(mesh: &TriangleMesh, density: &[f64]) -> Vec<(usize, Vec<usize>)> {
    let adjacency = mesh.adjacency();
    let n = mesh.num_vertices();
    let up: Vec<usize> = (0..n)
        .map(|v| {
            let best = adjacency[v]
                .iter()
                .copied()
                .max_by(|&a, &b| density[a].total_cmp(&density[b]).then(b.cmp(&a)));
            match best {
                Some(u) if density[u] > density[v] => u,
                _ => v,
            }
        })
        .collect();
    let mut root = vec![usize::MAX; n];
    for v in 0..n {
        let mut path = vec![v];
        let mut cur = v;
        while up[cur] != cur && root[cur] == usize::MAX {
            cur = up[cur];
            path.push(cur);
        }
        let r = if root[cur] != usize::MAX { root[cur] } else { cur };
        for p in path {
            root[p] = r;
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        groups.entry(root[v]).or_default().push(v);
    }
    groups.into_iter().collect()
}

/// Picks the gauge that balances the most spread of the sharp basins, or
/// `None` when fewer than two sharp basins carry enough mass.
fn choose_gauge(mesh: &TriangleMesh, weights: &[f64], mass: &[f64], opts: &DetectorOptions) -> Option<SphereGauge> {
    let radius = match mesh.kind {
        SurfaceKind::RoundSphere { radius } => radius,
        _ => return None,
    };
    let area: f64 = weights.iter().sum();
    let density: Vec<f64> = mass.iter().zip(weights).map(|(m, w)| m / w).collect();
    let unit: Vec<Point> = mesh
        .vertices
        .iter()
        .map(|x| [x[0] / radius, x[1] / radius, x[2] / radius])
        .collect();
    let mut sharp = Vec::new();
    for (peak, members) in basins(mesh, &density) {
        let m: f64 = members.iter().map(|&v| mass[v]).sum();
        if m < opts.threshold || density[peak] < opts.gauge_peak_ratio / area {
            continue;
        }
        let mut c = [0.0; 3];
        for &v in &members {
            for i in 0..3 {
                c[i] += mass[v] * unit[v][i];
            }
        }
        let len = norm(&c) / m;
        sharp.push((peak, members, m, len, c));
    }
    if sharp.len() < 2 {
        return None;
    }
    // most spread = shortest mean position vector
    let (peak, members, m, _, c) = sharp
        .into_iter()
        .min_by(|a, b| a.3.total_cmp(&b.3).then(a.0.cmp(&b.0)))
        .unwrap();
    let n = norm(&c);
    if n <= 0.0 {
        return None;
    }
    let axis = [c[0] / n, c[1] / n, c[2] / n];
    let moment = |s: f64| {
        let g = SphereGauge { axis, dilation: s, balanced_mass: m, balanced_vertex: peak };
        members.iter().map(|&v| mass[v] * dot(&g.map_point(&unit[v]), &axis)).sum::<f64>()
    };
    let (mut lo, mut hi) = (0.0, 12.0);
    if moment(hi) > 0.0 {
        return None;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if moment(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(SphereGauge { axis, dilation: 0.5 * (lo + hi), balanced_mass: m, balanced_vertex: peak })
}

/// One candidate value and the relative distance to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestCandidate {
    pub value: f64,
    pub candidate: f64,
    pub index: usize,
    /// `|value - candidate| / candidate`, or the absolute gap for a zero candidate.
    pub distance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationCheck {
    pub lambda_k: f64,
    pub sphere_table: BTreeMap<usize, f64>,
    pub class_table: BTreeMap<usize, f64>,
    /// `Lambda_j(S^2) / lambda_k`, j = 1..k.
    pub weight_candidates: Vec<f64>,
    /// `Lambda_j(M) / lambda_k`, j = 0..k.
    pub area_candidates: Vec<f64>,
    pub weights: Vec<NearestCandidate>,
    pub regular_area: NearestCandidate,
    pub tolerance: f64,
    pub pass: bool,
}

fn nearest(value: f64, candidates: &[f64], tol: f64) -> NearestCandidate {
    let gap = |c: f64| if c == 0.0 { value.abs() } else { (value - c).abs() / c.abs() };
    let (index, &candidate) = candidates
        .iter()
        .enumerate()
        .min_by(|a, b| gap(*a.1).total_cmp(&gap(*b.1)))
        .expect("candidate set is nonempty");
    let distance = gap(candidate);
    NearestCandidate { value, candidate, index, distance, pass: distance <= tol }
}

/// Default sphere table `j -> 8 pi j`.
pub fn default_sphere_table(k: usize) -> BTreeMap<usize, f64> {
    (1..=k).map(|j| (j, 8.0 * PI * j as f64)).collect()
}

/// Compares atom weights and the regular area with the eigenvalue-ratio sets.
/// The class table gets `0 -> 0` and `k -> lambda_k` when absent.
pub fn check_quantization(
    dec: &MeasureDecomposition,
    lambda_k: f64,
    sphere_table: &BTreeMap<usize, f64>,
    class_table: &BTreeMap<usize, f64>,
    tol: f64,
) -> Result<QuantizationCheck> {
    if !(lambda_k > 0.0) {
        return Err(Error::Precondition("lambda_k estimate must be positive".into()));
    }
    let k = dec.k;
    let weight_candidates: Vec<f64> = (1..=k).filter_map(|j| sphere_table.get(&j)).map(|v| v / lambda_k).collect();
    if weight_candidates.is_empty() {
        return Err(Error::Precondition("sphere table has no entry for j = 1..k".into()));
    }
    let mut class = class_table.clone();
    class.entry(0).or_insert(0.0);
    class.entry(k).or_insert(lambda_k);
    let area_candidates: Vec<f64> = class.range(0..=k).map(|(_, v)| v / lambda_k).collect();
    let weights: Vec<NearestCandidate> = dec.atoms.iter().map(|a| nearest(a.weight, &weight_candidates, tol)).collect();
    let regular_area = nearest(dec.regular_area, &area_candidates, tol);
    let pass = regular_area.pass && weights.iter().all(|w| w.pass);
    Ok(QuantizationCheck {
        lambda_k,
        sphere_table: sphere_table.clone(),
        class_table: class,
        weight_candidates,
        area_candidates,
        weights,
        regular_area,
        tolerance: tol,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularSpectrum {
    pub atom: usize,
    pub radii: Vec<f64>,
    pub stage_caps: Vec<f64>,
    /// `table[stage][radius][m]`, the first three weighted Dirichlet eigenvalues.
    pub table: Vec<Vec<Vec<f64>>>,
    /// Richardson limits in `eps^2` from the two finest radii, last stage.
    /// `None` when the atom test fails.
    pub limits: Vec<Option<f64>>,
    /// `|lambda(eps_finest) - lambda(eps_next)|` at the last stage.
    pub spread: Vec<f64>,
    pub monotone: bool,
    /// Fitted exponent p in `lambda_1 ~ eps^-p` over the radius range.
    pub power: f64,
    /// `p >= 1`: `lambda_1` blows up like a smooth density's would.
    pub no_atom: bool,
    pub warnings: Vec<String>,
}

pub const SINGULAR_MODES: usize = 3;

/// Weighted Dirichlet eigenvalues on shrinking balls around `atom`, for each
/// given stage density. A gauge, when given, is applied to the mesh and to
/// every stage first.
pub fn singular_spectrum(
    mesh: &TriangleMesh,
    atom: usize,
    radii: &[f64],
    stages: &[StageDensity],
    gauge: Option<&SphereGauge>,
    solver: &SolverOptions,
) -> Result<SingularSpectrum> {
    if radii.len() < 3 {
        return Err(Error::Precondition("singular spectrum needs at least three radii".into()));
    }
    if radii.windows(2).any(|p| !(p[0] > p[1])) || radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Precondition("radii must be positive and strictly decreasing".into()));
    }
    if stages.is_empty() {
        return Err(Error::Precondition("no stage densities".into()));
    }
    for s in stages {
        if s.values.len() != mesh.num_vertices() {
            return Err(Error::SizeMismatch { expected: mesh.num_vertices(), got: s.values.len() });
        }
    }
    let (frame, densities): (TriangleMesh, Vec<Vec<f64>>) = match gauge {
        Some(g) => {
            let gm = g.apply(mesh)?;
            let (w0, w1) = (mesh.vertex_weights(), gm.vertex_weights());
            let d = stages.iter().map(|s| SphereGauge::push_density(&w0, &w1, &s.values)).collect();
            (gm, d)
        }
        None => (mesh.clone(), stages.iter().map(|s| s.values.clone()).collect()),
    };

    let mut warnings = Vec::new();
    let mut balls = Vec::new();
    let mut kept = Vec::new();
    for &r in radii {
        match geodesic_ball(&frame, atom, r) {
            Ok(b) => {
                balls.push(b);
                kept.push(r);
            }
            Err(Error::DegenerateBall(msg)) => warnings.push(format!("radius {r} dropped: {msg}")),
            Err(e) => return Err(e),
        }
    }
    if kept.len() < 2 {
        return Err(Error::DegenerateBall("fewer than two usable radii".into()));
    }

    let table: Vec<Vec<Vec<f64>>> = densities
        .iter()
        .map(|d| {
            balls
                .par_iter()
                .map(|b| {
                    let problem = DirichletProblem::from_parent_density(b, d)?;
                    let support = problem.mass.diagonal.iter().filter(|&&m| m > 0.0).count();
                    let count = SINGULAR_MODES.min(support);
                    if count == 0 {
                        return Ok(vec![f64::INFINITY; SINGULAR_MODES]);
                    }
                    let mut vals = solve_dirichlet(&problem, count, solver)?.eigenvalues;
                    vals.resize(SINGULAR_MODES, f64::INFINITY);
                    Ok(vals)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut monotone = true;
    for (s, rows) in table.iter().enumerate() {
        for i in 1..rows.len() {
            for m in 0..SINGULAR_MODES {
                let (big, small) = (rows[i - 1][m], rows[i][m]);
                if small < big * (1.0 - 1e-6) {
                    monotone = false;
                    warnings.push(format!(
                        "stage {s}, mode {m}: eigenvalue fell from {big:.6} to {small:.6} as the radius shrank to {}",
                        kept[i]
                    ));
                }
            }
        }
    }

    let rows = table.last().unwrap();
    let n = kept.len();
    let (ea, eb) = (kept[n - 2], kept[n - 1]);
    // local power law lambda_1 ~ eps^-p: p = 2 for a smooth density, near 0 for a point mass
    let power = (rows[n - 1][0] / rows[0][0]).ln() / (kept[0] / kept[n - 1]).ln();
    let no_atom = !(power < 1.0);
    let mut limits = Vec::new();
    let mut spread = Vec::new();
    for m in 0..SINGULAR_MODES {
        let (la, lb) = (rows[n - 2][m], rows[n - 1][m]);
        spread.push((lb - la).abs());
        limits.push(if no_atom || !la.is_finite() || !lb.is_finite() {
            None
        } else {
            Some(lb + (lb - la) * eb * eb / (ea * ea - eb * eb))
        });
    }
    Ok(SingularSpectrum {
        atom,
        radii: kept,
        stage_caps: stages.iter().map(|s| s.cap).collect(),
        table,
        limits,
        spread,
        monotone,
        power,
        no_atom,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomMembership {
    pub atom: usize,
    pub nearest: Option<f64>,
    /// Relative gap to the error band around `nearest`.
    pub distance: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub lambda_k: f64,
    pub tolerance: f64,
    pub singular: Vec<AtomMembership>,
    /// True when there are no atoms, so the singular check passes trivially.
    pub singular_vacuous: bool,
    pub singular_pass: bool,
    pub regular_nearest: Option<f64>,
    pub regular_distance: Option<f64>,
    pub regular_pass: bool,
    pub note: String,
}

/// Distance from `lambda_k` to the nearest singular eigenvalue of each atom
/// and to the nearest eigenvalue of the regular part. Singular values are the
/// extrapolated limits widened by their spread; without a limit the finest
/// radius is used as is.
pub fn membership_report(
    lambda_k: f64,
    spectra: &[SingularSpectrum],
    regular_spectrum: &[f64],
    tol: f64,
) -> MembershipReport {
    let rel = |v: f64| (v - lambda_k).abs() / lambda_k.abs();
    let closest = |vals: &mut dyn Iterator<Item = f64>| {
        vals.filter(|v| v.is_finite()).min_by(|a, b| rel(*a).total_cmp(&rel(*b)))
    };
    let singular: Vec<AtomMembership> = spectra
        .iter()
        .map(|s| {
            let finest = s.table.last().and_then(|rows| rows.last()).cloned().unwrap_or_default();
            // (center, half width): the limit with its error bar, else the finest radius
            let bands: Vec<(f64, f64)> = s
                .limits
                .iter()
                .zip(&finest)
                .zip(&s.spread)
                .map(|((l, &f), &sp)| match l {
                    Some(v) => (*v, sp),
                    None => (f, 0.0),
                })
                .filter(|(c, _)| c.is_finite())
                .collect();
            let gap = |(c, h): (f64, f64)| ((c - lambda_k).abs() - h).max(0.0) / lambda_k.abs();
            let best = bands.into_iter().min_by(|a, b| gap(*a).total_cmp(&gap(*b)));
            let nearest = best.map(|b| b.0);
            let distance = best.map(gap);
            AtomMembership { atom: s.atom, nearest, distance, pass: distance.is_some_and(|d| d <= tol) }
        })
        .collect();
    let singular_vacuous = singular.is_empty();
    let singular_pass = singular.iter().all(|a| a.pass);
    let regular_nearest = closest(&mut regular_spectrum.iter().copied());
    let regular_distance = regular_nearest.map(rel);
    let regular_pass = regular_distance.is_some_and(|d| d <= tol);
    let note = if singular_vacuous {
        "no atoms: singular membership holds vacuously".to_string()
    } else {
        String::new()
    };
    MembershipReport {
        lambda_k,
        tolerance: tol,
        singular,
        singular_vacuous,
        singular_pass,
        regular_nearest,
        regular_distance,
        regular_pass,
        note,
    }
}

/// Unit-mass density: a uniform background carrying `1 - sum(mass)` plus one
/// compact mollifier bump per `(center, mass)` with support radius `scale`.
/// A scale below the vertex spacing puts each bump on its center vertex.
pub fn synthetic_bumps(mesh: &TriangleMesh, bumps: &[(usize, f64)], scale: f64) -> Result<Vec<f64>> {
    let total: f64 = bumps.iter().map(|b| b.1).sum();
    if !(total < 1.0) || bumps.iter().any(|b| !(b.1 > 0.0) || b.0 >= mesh.num_vertices()) || !(scale > 0.0) {
        return Err(Error::Precondition("bump masses must be positive, sum below 1, centers in range".into()));
    }
    let weights = mesh.vertex_weights();
    let area: f64 = weights.iter().sum();
    let mut mass: Vec<f64> = weights.iter().map(|w| (1.0 - total) * w / area).collect();
    for &(c, m) in bumps {
        let x = mesh.vertices[c];
        let profile: Vec<f64> = mesh
            .vertices
            .iter()
            .zip(&weights)
            .map(|(p, w)| {
                let t = mesh.kind.geodesic_distance(&x, p) / scale;
                if t < 1.0 {
                    (-1.0 / (1.0 - t * t)).exp() * w
                } else {
                    0.0
                }
            })
            .collect();
        let z: f64 = profile.iter().sum();
        for (acc, p) in mass.iter_mut().zip(profile) {
            *acc += m * p / z;
        }
    }
    Ok(mass.iter().zip(&weights).map(|(m, w)| m / w).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{build_sphere_mesh, build_torus_mesh, nearest_vertex};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CAPS: [f64; 4] = [4.0, 8.0, 16.0, 32.0];

    fn frozen(values: &[f64]) -> Vec<StageDensity> {
        CAPS.iter().map(|&cap| StageDensity { cap, values: values.to_vec() }).collect()
    }

    fn uniform(mesh: &TriangleMesh) -> Vec<f64> {
        vec![1.0 / mesh.total_area(); mesh.num_vertices()]
    }

    fn mass_balance(dec: &MeasureDecomposition) {
        let s: f64 = dec.weights().iter().sum::<f64>() + dec.regular_area;
        assert!((s - 1.0).abs() < 1e-8);
    }

    #[test]
    fn uniform_has_no_atoms() {
        let mesh = build_sphere_mesh(3).unwrap();
        let dec = detect_atoms(&mesh, &frozen(&uniform(&mesh)), 1, &DetectorOptions::default()).unwrap();
        assert_eq!(dec.atom_count, 0);
        assert_eq!(dec.regular_area, 1.0);
        assert!(dec.within_bound && dec.gauge.is_none());
    }

    #[test]
    fn one_stage_is_rejected() {
        let mesh = build_sphere_mesh(2).unwrap();
        let stages = vec![StageDensity { cap: 4.0, values: uniform(&mesh) }];
        assert!(matches!(
            detect_atoms(&mesh, &stages, 1, &DetectorOptions::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn half_mass_point_bump() {
        let mesh = build_sphere_mesh(5).unwrap();
        let mu = synthetic_bumps(&mesh, &[(100, 0.5)], 0.01).unwrap();
        let dec = detect_atoms(&mesh, &frozen(&mu), 2, &DetectorOptions::default()).unwrap();
        assert_eq!(dec.atom_count, 1);
        assert_eq!(dec.atoms[0].vertex, 100);
        assert!((dec.atoms[0].weight - 0.5).abs() < 0.05, "{}", dec.atoms[0].weight);
        mass_balance(&dec);
    }

    #[test]
    fn antipodal_pair() {
        let mesh = build_sphere_mesh(5).unwrap();
        let p = mesh.vertices[7];
        let q = nearest_vertex(&mesh, &[-p[0], -p[1], -p[2]]);
        let mu = synthetic_bumps(&mesh, &[(7, 0.3), (q, 0.2)], 0.01).unwrap();
        let dec = detect_atoms(&mesh, &frozen(&mu), 3, &DetectorOptions::default()).unwrap();
        assert_eq!(dec.atom_count, 2);
        assert!((dec.atoms[0].weight - 0.3).abs() < 0.05);
        assert!((dec.atoms[1].weight - 0.2).abs() < 0.05);
        assert!(dec.gauge.is_none());
        mass_balance(&dec);
    }

    #[test]
    fn twin_lumps_resolve_in_the_gauge() {
        // two broad lumps of half mass each: no atom natively, one after balancing
        let mesh = build_sphere_mesh(4).unwrap();
        let w = mesh.vertex_weights();
        let raw: Vec<f64> = mesh
            .vertices
            .iter()
            .map(|x| (-(1.0 - x[2]) / 0.06).exp() + (-(1.0 + x[2]) / 0.06).exp())
            .collect();
        let z: f64 = raw.iter().zip(&w).map(|(a, b)| a * b).sum();
        let mu: Vec<f64> = raw.iter().map(|v| v / z).collect();
        let dec = detect_atoms(&mesh, &frozen(&mu), 2, &DetectorOptions::default()).unwrap();
        assert!(dec.raw_weights.is_empty());
        assert!(dec.gauge.is_some());
        assert_eq!(dec.atom_count, 1);
        assert!((dec.atoms[0].weight - 0.5).abs() < 0.05, "{}", dec.atoms[0].weight);
        assert!(dec.within_bound);
        mass_balance(&dec);
    }

    #[test]
    fn gauge_keeps_mass_and_fixes_axis() {
        let mesh = build_sphere_mesh(3).unwrap();
        let g = SphereGauge { axis: [0.0, 0.0, 1.0], dilation: 1.3, balanced_mass: 0.0, balanced_vertex: 0 };
        let n = g.map_point(&[0.0, 0.0, 1.0]);
        assert!((n[2] - 1.0).abs() < 1e-14);
        let gm = g.apply(&mesh).unwrap();
        for v in &gm.vertices {
            assert!((norm(v) - 1.0).abs() < 1e-12);
        }
        let mu = synthetic_bumps(&mesh, &[(3, 0.2)], 0.3).unwrap();
        let (w0, w1) = (mesh.vertex_weights(), gm.vertex_weights());
        let pushed = SphereGauge::push_density(&w0, &w1, &mu);
        let m: f64 = pushed.iter().zip(&w1).map(|(a, b)| a * b).sum();
        assert!((m - 1.0).abs() < 1e-12);
    }

    fn random_sphere_point(rng: &mut ChaCha8Rng) -> Point {
        loop {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let n = norm(&p);
            if n > 0.1 && n <= 1.0 {
                return [p[0] / n, p[1] / n, p[2] / n];
            }
        }
    }

    /// Random placements: 1 to 3 bumps of mass >= 0.1, support <= 2 edges.
    pub(crate) fn random_bump_case(mesh: &TriangleMesh, rng: &mut ChaCha8Rng) -> (Vec<(usize, f64)>, f64) {
        let edge = mesh.mean_edge_length();
        let count = rng.random_range(1..=3);
        let mut centers: Vec<usize> = Vec::new();
        while centers.len() < count {
            let c = nearest_vertex(mesh, &random_sphere_point(rng));
            if centers
                .iter()
                .all(|&o| mesh.kind.geodesic_distance(&mesh.vertices[o], &mesh.vertices[c]) > 0.8)
            {
                centers.push(c);
            }
        }
        let bumps = centers.into_iter().map(|c| (c, rng.random_range(0.1..0.3))).collect();
        (bumps, rng.random_range(0.2..2.0) * edge)
    }

    #[test]
    fn bump_soundness_random() {
        let mesh = build_sphere_mesh(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (bumps, scale) = random_bump_case(&mesh, &mut rng);
            let mu = synthetic_bumps(&mesh, &bumps, scale).unwrap();
            let dec = detect_atoms(&mesh, &frozen(&mu), 4, &DetectorOptions::default()).unwrap();
            assert_eq!(dec.atom_count, bumps.len(), "{bumps:?} scale {scale}");
            for (c, m) in &bumps {
                let a = dec.atoms.iter().find(|a| a.vertex == *c).expect("atom at bump center");
                assert!((a.weight - m).abs() < 0.05, "{} vs {m}", a.weight);
            }
            mass_balance(&dec);
        }
    }

    #[test]
    fn smooth_specificity_random() {
        let mesh = build_sphere_mesh(5).unwrap();
        let w = mesh.vertex_weights();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let dirs: Vec<(Point, f64)> =
                (0..4).map(|_| (random_sphere_point(&mut rng), rng.random_range(-1.0..1.0))).collect();
            let raw: Vec<f64> = mesh
                .vertices
                .iter()
                .map(|x| (dirs.iter().map(|(d, a)| a * dot(x, d).powi(2)).sum::<f64>()).exp())
                .collect();
            let z: f64 = raw.iter().zip(&w).map(|(a, b)| a * b).sum();
            let mu: Vec<f64> = raw.iter().map(|v| v / z).collect();
            let dec = detect_atoms(&mesh, &frozen(&mu), 4, &DetectorOptions::default()).unwrap();
            assert_eq!(dec.atom_count, 0);
            assert_eq!(dec.regular_area, 1.0);
        }
    }

    #[test]
    fn quantization_examples() {
        let mesh = build_sphere_mesh(2).unwrap();
        let mut dec = detect_atoms(&mesh, &frozen(&uniform(&mesh)), 2, &DetectorOptions::default()).unwrap();
        dec.atoms.push(Atom {
            vertex: 0,
            position: mesh.vertices[0],
            weight: 0.5,
            stage_masses: vec![0.5],
            extrapolated_mass: 0.5,
            support: vec![0],
        });
        dec.regular_area = 0.5;
        let table = default_sphere_table(2);
        let class = BTreeMap::from([(1, 8.0 * PI)]);
        let q = check_quantization(&dec, 16.0 * PI, &table, &class, 0.15).unwrap();
        assert_eq!(q.area_candidates, vec![0.0, 0.5, 1.0]);
        assert!((q.weights[0].candidate - 0.5).abs() < 1e-15 && q.weights[0].distance < 1e-15);
        assert!(q.pass);

        dec.atoms[0].weight = 0.37;
        let q = check_quantization(&dec, 16.0 * PI, &table, &class, 0.15).unwrap();
        assert!((q.weights[0].distance - 0.26).abs() < 1e-12);
        assert!(!q.weights[0].pass && !q.pass);

        let mut one = detect_atoms(&mesh, &frozen(&uniform(&mesh)), 1, &DetectorOptions::default()).unwrap();
        one.k = 1;
        let q = check_quantization(&one, 8.0 * PI, &default_sphere_table(1), &BTreeMap::new(), 0.15).unwrap();
        assert_eq!(q.regular_area.candidate, 1.0);
        assert_eq!(q.regular_area.distance, 0.0);
        assert!(q.pass);
        assert!(check_quantization(&one, 0.0, &default_sphere_table(1), &BTreeMap::new(), 0.15).is_err());
    }

    #[test]
    fn uniform_ball_has_no_singular_limit() {
        let mesh = build_torus_mesh(64, 64, 1.0, 1.0).unwrap();
        let stages = frozen(&uniform(&mesh));
        let s = singular_spectrum(&mesh, 0, &[0.4, 0.28, 0.2], &stages[2..], None, &SolverOptions::default()).unwrap();
        assert!(s.no_atom);
        assert!(s.monotone);
        assert!(s.limits.iter().all(|l| l.is_none()));
        assert!((s.power - 2.0).abs() < 0.2, "{}", s.power);
        // j01^2 / eps^2 under unit density, up to the staircase boundary
        let ratio = s.table[1][2][0] * 0.2 * 0.2 / 5.783186;
        assert!(ratio > 1.0 && ratio < 1.2, "{ratio}");
    }

    #[test]
    fn point_bump_singular_values_settle() {
        let mesh = build_torus_mesh(128, 128, 1.0, 1.0).unwrap();
        let c = 64 * 128 + 64;
        let mu = synthetic_bumps(&mesh, &[(c, 0.4)], 1e-3).unwrap();
        let stages = frozen(&mu);
        let s = singular_spectrum(&mesh, c, &[0.4, 0.36, 0.32], &stages[2..], None, &SolverOptions::default()).unwrap();
        assert!(!s.no_atom);
        assert!(s.monotone);
        let rows = s.table.last().unwrap();
        let rel = (rows[2][0] - rows[1][0]).abs() / rows[1][0];
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn radii_must_decrease() {
        let mesh = build_torus_mesh(16, 16, 1.0, 1.0).unwrap();
        let stages = frozen(&uniform(&mesh));
        let r = singular_spectrum(&mesh, 0, &[0.2, 0.3, 0.1], &stages, None, &SolverOptions::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn membership_without_atoms_is_vacuous() {
        let r = membership_report(8.0 * PI, &[], &[0.0, 8.0 * PI * 1.01, 8.0 * PI * 1.02], 0.1);
        assert!(r.singular_vacuous && r.singular_pass && r.regular_pass);
        assert!(r.note.contains("vacuous"));
        let far = membership_report(8.0 * PI, &[], &[0.0, 40.0], 0.1);
        assert!(!far.regular_pass);
    }
}
