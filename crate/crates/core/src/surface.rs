//! Triangle meshes for the round sphere, the flat torus and flat planar patches.
//!
//! Sphere meshes are subdivided icosahedra with vertices projected onto the
//! sphere. Torus meshes live in the fundamental domain `[0, w) x [0, h)` and
//! every geometric query applies the minimum-image convention, so triangles
//! that straddle the periodic seam are handled without duplicated vertices.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};

/// Highest supported icosphere subdivision level (655 362 vertices).
pub const MAX_SUBDIVISION_LEVEL: usize = 8;

pub type Point = [f64; 3];

/// Which closed-form metric the mesh discretizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceKind {
    RoundSphere { radius: f64 },
    FlatTorus { width: f64, height: f64 },
    /// A flat domain without identifications (a disk, or any planar patch).
    Planar,
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub kind: SurfaceKind,
    /// Sorted vertex indices on the topological boundary. Empty for closed meshes.
    pub boundary_vertices: Vec<usize>,
    pub triangle_areas: Vec<f64>,
    /// For submeshes: index of each vertex in the parent mesh.
    pub parent_vertex: Option<Vec<usize>>,
}

#[inline]
fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

fn wrap_periodic(d: f64, period: f64) -> f64 {
    d - period * (d / period).round()
}

impl SurfaceKind {
    /// Displacement `b - a`, unwrapped across periodic seams.
    pub fn displacement(&self, a: &Point, b: &Point) -> Point {
        let mut d = sub(b, a);
        if let SurfaceKind::FlatTorus { width, height } = *self {
            d[0] = wrap_periodic(d[0], width);
            d[1] = wrap_periodic(d[1], height);
        }
        d
    }

    /// Closed-form geodesic distance (great-circle or periodic Euclidean).
    pub fn geodesic_distance(&self, a: &Point, b: &Point) -> f64 {
        match *self {
            SurfaceKind::RoundSphere { radius } => {
                let angle = norm(&cross(a, b)).atan2(dot(a, b));
                radius * angle
            }
            _ => norm(&self.displacement(a, b)),
        }
    }

    /// Largest admissible geodesic-ball radius (exclusive).
    pub fn max_ball_radius(&self) -> f64 {
        match *self {
            SurfaceKind::RoundSphere { radius } => PI * radius,
            SurfaceKind::FlatTorus { width, height } => 0.5 * width.min(height),
            SurfaceKind::Planar => f64::INFINITY,
        }
    }

    pub fn analytic_area(&self) -> Option<f64> {
        match *self {
            SurfaceKind::RoundSphere { radius } => Some(4.0 * PI * radius * radius),
            SurfaceKind::FlatTorus { width, height } => Some(width * height),
            SurfaceKind::Planar => None,
        }
    }
}

impl TriangleMesh {
    /// Builds a mesh, computing triangle areas. Fails on non-positive areas.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, kind: SurfaceKind) -> Result<Self> {
        let mut mesh = TriangleMesh {
            vertices,
            triangles,
            kind,
            boundary_vertices: Vec::new(),
            triangle_areas: Vec::new(),
            parent_vertex: None,
        };
        for (t, tri) in mesh.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= mesh.vertices.len()) {
                return Err(Error::DegenerateMesh(format!("triangle {t} references a missing vertex")));
            }
        }
        mesh.triangle_areas = (0..mesh.triangles.len()).map(|t| mesh.compute_area(t)).collect();
        if let Some((t, &area)) = mesh
            .triangle_areas
            .iter()
            .enumerate()
            .find(|(_, a)| !(**a > 0.0))
        {
            return Err(Error::DegenerateTriangle { triangle: t, area });
        }
        mesh.boundary_vertices = mesh.find_boundary_vertices();
        Ok(mesh)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_closed(&self) -> bool {
        self.boundary_vertices.is_empty()
    }

    /// Triangle corners in a common chart: the first corner as stored, the
    /// others displaced from it (unwrapped on the torus).
    pub fn triangle_corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        let pa = self.vertices[a];
        let db = self.kind.displacement(&pa, &self.vertices[b]);
        let dc = self.kind.displacement(&pa, &self.vertices[c]);
        [
            pa,
            [pa[0] + db[0], pa[1] + db[1], pa[2] + db[2]],
            [pa[0] + dc[0], pa[1] + dc[1], pa[2] + dc[2]],
        ]
    }

    fn compute_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_corners(t);
        0.5 * norm(&cross(&sub(&b, &a), &sub(&c, &a)))
    }

    pub fn total_area(&self) -> f64 {
        self.triangle_areas.iter().sum()
    }

    /// Lumped vertex measure: one third of the area of every incident triangle.
    pub fn vertex_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.num_vertices()];
        for (tri, &area) in self.triangles.iter().zip(&self.triangle_areas) {
            for &v in tri {
                w[v] += area / 3.0;
            }
        }
        w
    }

    /// Undirected edges as sorted pairs, each with the number of incident triangles.
    pub fn edges(&self) -> BTreeMap<(usize, usize), usize> {
        let mut edges = BTreeMap::new();
        for tri in &self.triangles {
            for i in 0..3 {
                let (a, b) = (tri[i], tri[(i + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices() as i64 - self.edges().len() as i64 + self.num_triangles() as i64
    }

    /// Vertex neighbours (sorted, deduplicated).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_vertices()];
        for &(a, b) in self.edges().keys() {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn valences(&self) -> Vec<usize> {
        self.adjacency().iter().map(Vec::len).collect()
    }

    /// Mean edge length in the background metric.
    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edges();
        let total: f64 = edges
            .keys()
            .map(|&(a, b)| norm(&self.kind.displacement(&self.vertices[a], &self.vertices[b])))
            .sum();
        total / edges.len() as f64
    }

    fn find_boundary_vertices(&self) -> Vec<usize> {
        let mut boundary: Vec<usize> = self
            .edges()
            .iter()
            .filter(|(_, &count)| count == 1)
            .flat_map(|(&(a, b), _)| [a, b])
            .collect();
        boundary.sort_unstable();
        boundary.dedup();
        boundary
    }

    /// Checks positivity of areas, edge-manifoldness and consistent orientation.
    pub fn validate(&self) -> Result<()> {
        if let Some((t, &area)) = self.triangle_areas.iter().enumerate().find(|(_, a)| !(**a > 0.0)) {
            return Err(Error::DegenerateTriangle { triangle: t, area });
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateMesh(format!("triangle {t} repeats a vertex")));
            }
            for i in 0..3 {
                let e = (tri[i], tri[(i + 1) % 3]);
                if directed.insert(e, t).is_some() {
                    return Err(Error::DegenerateMesh(format!(
                        "directed edge {:?} appears twice (inconsistent orientation or non-manifold)",
                        e
                    )));
                }
            }
        }
        for (&(a, b), &count) in &self.edges() {
            if count > 2 {
                return Err(Error::DegenerateMesh(format!("edge ({a}, {b}) has {count} triangles")));
            }
        }
        Ok(())
    }

    /// Writes the mesh in ASCII OFF format.
    pub fn write_off<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "OFF").unwrap();
        writeln!(s, "{} {} 0", self.num_vertices(), self.num_triangles()).unwrap();
        for p in &self.vertices {
            writeln!(s, "{} {} {}", p[0], p[1], p[2]).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }
}

/// Icosahedron subdivided `level` times, vertices on the unit sphere.
pub fn build_sphere_mesh(level: usize) -> Result<TriangleMesh> {
    build_sphere_mesh_with_radius(level, 1.0)
}

pub fn build_sphere_mesh_with_radius(level: usize, radius: f64) -> Result<TriangleMesh> {
    if level > MAX_SUBDIVISION_LEVEL {
        return Err(Error::Capacity { requested: level, cap: MAX_SUBDIVISION_LEVEL });
    }
    if !(radius > 0.0) {
        return Err(Error::Precondition(format!("sphere radius must be positive, got {radius}")));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let project = |p: Point| {
        let n = norm(&p);
        [p[0] / n, p[1] / n, p[2] / n]
    };
    for v in vertices.iter_mut() {
        *v = project(*v);
    }
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (pa, pb) = (vertices[a], vertices[b]);
                vertices.push(project([
                    0.5 * (pa[0] + pb[0]),
                    0.5 * (pa[1] + pb[1]),
                    0.5 * (pa[2] + pb[2]),
                ]));
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    for v in vertices.iter_mut() {
        for x in v.iter_mut() {
            *x *= radius;
        }
    }
    TriangleMesh::new(vertices, triangles, SurfaceKind::RoundSphere { radius })
}

/// Regular `nx` by `ny` grid on the flat torus `[0, width) x [0, height)`,
/// each cell split along its diagonal.
pub fn build_torus_mesh(nx: usize, ny: usize, width: f64, height: f64) -> Result<TriangleMesh> {
    if nx < 3 || ny < 3 {
        return Err(Error::DegenerateMesh(format!("torus grid needs nx, ny >= 3, got {nx} x {ny}")));
    }
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::Precondition(format!("torus dimensions must be positive, got {width} x {height}")));
    }
    let (dx, dy) = (width / nx as f64, height / ny as f64);
    let index = |i: usize, j: usize| (j % ny) * nx + (i % nx);
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push([i as f64 * dx, j as f64 * dy, 0.0]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (index(i, j), index(i + 1, j), index(i + 1, j + 1), index(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    TriangleMesh::new(vertices, triangles, SurfaceKind::FlatTorus { width, height })
}

/// Flat disk of the given radius meshed by `rings` concentric rings, ring `i`
/// carrying `6 i` vertices. Boundary vertices lie exactly on the circle.
pub fn build_disk_mesh(radius: f64, rings: usize) -> Result<TriangleMesh> {
    if rings < 1 {
        return Err(Error::DegenerateMesh("disk mesh needs at least one ring".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Precondition(format!("disk radius must be positive, got {radius}")));
    }
    let mut vertices: Vec<Point> = vec![[0.0, 0.0, 0.0]];
    let mut ring_start = vec![0usize];
    for i in 1..=rings {
        ring_start.push(vertices.len());
        let n = 6 * i;
        let r = radius * i as f64 / rings as f64;
        // small per-ring twist keeps consecutive rings from aligning radially
        let offset = if i % 2 == 0 { PI / n as f64 } else { 0.0 };
        for s in 0..n {
            let theta = offset + 2.0 * PI * s as f64 / n as f64;
            vertices.push([r * theta.cos(), r * theta.sin(), 0.0]);
        }
    }
    let mut triangles = Vec::new();
    for s in 0..6 {
        triangles.push([0, 1 + s, 1 + (s + 1) % 6]);
    }
    let angle_of = |v: usize, first: usize, count: usize| -> f64 {
        // angles along a ring start near zero and increase; wrap the last step
        if v == count {
            return 2.0 * PI + angle_of_point(&vertices[first]);
        }
        angle_of_point(&vertices[first + v])
    };
    for i in 1..rings {
        let (inner0, ni) = (ring_start[i], 6 * i);
        let (outer0, no) = (ring_start[i + 1], 6 * (i + 1));
        let (mut a, mut b) = (0usize, 0usize);
        while a < ni || b < no {
            let advance_inner =
                a < ni && (b == no || angle_of(a + 1, inner0, ni) <= angle_of(b + 1, outer0, no));
            if advance_inner {
                triangles.push([inner0 + a, outer0 + b % no, inner0 + (a + 1) % ni]);
                a += 1;
            } else {
                triangles.push([inner0 + a % ni, outer0 + b, outer0 + (b + 1) % no]);
                b += 1;
            }
        }
    }
    // orient all triangles counter-clockwise
    for tri in triangles.iter_mut() {
        let (p, q, r) = (vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
        let z = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
        if z < 0.0 {
            tri.swap(1, 2);
        }
    }
    TriangleMesh::new(vertices, triangles, SurfaceKind::Planar)
}

fn angle_of_point(p: &Point) -> f64 {
    let a = p[1].atan2(p[0]);
    if a < -1e-12 {
        a + 2.0 * PI
    } else {
        a.max(0.0)
    }
}

/// Triangles whose three vertices lie within geodesic distance `radius` of
/// `center`, returned as a standalone submesh with its boundary marked and a
/// lookup back to parent vertex indices. Torus coordinates are unwrapped
/// around the center so the submesh is a planar patch.
pub fn geodesic_ball(mesh: &TriangleMesh, center: usize, radius: f64) -> Result<TriangleMesh> {
    if center >= mesh.num_vertices() {
        return Err(Error::Precondition(format!("center vertex {center} out of range")));
    }
    let limit = mesh.kind.max_ball_radius();
    if !(radius > 0.0) || radius >= limit {
        return Err(Error::Precondition(format!(
            "ball radius {radius} must lie in (0, {limit}) for this surface"
        )));
    }
    let c = mesh.vertices[center];
    let inside: Vec<bool> = mesh
        .vertices
        .iter()
        .map(|p| mesh.kind.geodesic_distance(&c, p) <= radius)
        .collect();
    let mut local = vec![usize::MAX; mesh.num_vertices()];
    let mut parent = Vec::new();
    let mut triangles = Vec::new();
    for tri in &mesh.triangles {
        if tri.iter().all(|&v| inside[v]) {
            let mut t = [0; 3];
            for (k, &v) in tri.iter().enumerate() {
                if local[v] == usize::MAX {
                    local[v] = parent.len();
                    parent.push(v);
                }
                t[k] = local[v];
            }
            triangles.push(t);
        }
    }
    if triangles.is_empty() {
        return Err(Error::DegenerateBall(format!(
            "no triangle fits in the ball of radius {radius} around vertex {center}"
        )));
    }
    let (vertices, kind) = match mesh.kind {
        SurfaceKind::FlatTorus { .. } => (
            parent
                .iter()
                .map(|&v| {
                    let d = mesh.kind.displacement(&c, &mesh.vertices[v]);
                    [c[0] + d[0], c[1] + d[1], 0.0]
                })
                .collect(),
            SurfaceKind::Planar,
        ),
        other => (parent.iter().map(|&v| mesh.vertices[v]).collect(), other),
    };
    let mut sub = TriangleMesh::new(vertices, triangles, kind)?;
    if sub.boundary_vertices.is_empty() || sub.boundary_vertices.len() == sub.num_vertices() {
        return Err(Error::DegenerateBall(format!(
            "ball of radius {radius} around vertex {center} has no interior vertex"
        )));
    }
    sub.parent_vertex = Some(parent);
    Ok(sub)
}

/// Vertex closest to a point (by the surface metric).
pub fn nearest_vertex(mesh: &TriangleMesh, p: &Point) -> usize {
    mesh.vertices
        .iter()
        .enumerate()
        .map(|(i, v)| (i, mesh.kind.geodesic_distance(p, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cap_area(r: f64) -> f64 {
        2.0 * PI * (1.0 - r.cos())
    }

    #[test]
    fn icosahedron_counts() {
        let m = build_sphere_mesh(0).unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles()), (12, 20));
        assert_eq!(m.euler_characteristic(), 2);
        m.validate().unwrap();
    }

    #[test]
    fn subdivision_vertex_count() {
        for level in 0..5 {
            let m = build_sphere_mesh(level).unwrap();
            assert_eq!(m.num_vertices(), 10 * 4usize.pow(level as u32) + 2);
            assert_eq!(m.num_triangles(), 20 * 4usize.pow(level as u32));
            assert_eq!(m.euler_characteristic(), 2);
        }
        let m = build_sphere_mesh(2).unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles()), (162, 320));
    }

    #[test]
    fn sphere_area_converges() {
        let a1 = build_sphere_mesh(1).unwrap().total_area();
        let a3 = build_sphere_mesh(3).unwrap().total_area();
        let a4 = build_sphere_mesh(4).unwrap().total_area();
        let exact = 4.0 * PI;
        // flat chords undershoot the sphere: about 0.47% at level 3, 0.12% at level 4
        assert!((a3 - exact).abs() / exact < 5e-3, "level 3 area {a3}");
        assert!((a4 - exact).abs() / exact < 2e-3, "level 4 area {a4}");
        assert!(a1 < a3 && a3 < a4 && a4 < exact);
    }

    #[test]
    fn level_above_cap_rejected() {
        assert!(matches!(
            build_sphere_mesh(MAX_SUBDIVISION_LEVEL + 1),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn sphere_valences_are_five_or_six() {
        let m = build_sphere_mesh(3).unwrap();
        let v = m.valences();
        assert_eq!(v.iter().filter(|&&d| d == 5).count(), 12);
        assert!(v.iter().all(|&d| d == 5 || d == 6));
    }

    #[test]
    fn torus_grid() {
        let m = build_torus_mesh(4, 4, 1.0, 1.0).unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles()), (16, 32));
        assert!((m.total_area() - 1.0).abs() < 1e-14);
        m.validate().unwrap();
        let m = build_torus_mesh(3, 3, 2.0, 1.0).unwrap();
        assert!((m.total_area() - 2.0).abs() < 1e-14);
        let m = build_torus_mesh(64, 64, 1.0, 1.0).unwrap();
        assert_eq!(m.euler_characteristic(), 0);
        assert!(m.is_closed());
        assert!(m.valences().iter().all(|&d| d == 6));
    }

    #[test]
    fn torus_too_coarse() {
        assert!(matches!(build_torus_mesh(2, 5, 1.0, 1.0), Err(Error::DegenerateMesh(_))));
    }

    #[test]
    fn ball_preconditions() {
        let m = build_sphere_mesh(2).unwrap();
        assert!(matches!(geodesic_ball(&m, 0, PI), Err(Error::Precondition(_))));
        assert!(matches!(geodesic_ball(&m, 0, 4.0), Err(Error::Precondition(_))));
        assert!(matches!(geodesic_ball(&m, 0, 1e-3), Err(Error::DegenerateBall(_))));
    }

    #[test]
    fn spherical_cap_area() {
        let m = build_sphere_mesh(6).unwrap();
        let ball = geodesic_ball(&m, 17, 0.5).unwrap();
        let exact = cap_area(0.5);
        assert!((ball.total_area() - exact).abs() / exact < 0.05);
        assert!(!ball.boundary_vertices.is_empty());
        ball.validate().unwrap();
        assert_eq!(ball.euler_characteristic(), 1);
    }

    #[test]
    fn torus_disk_area_across_seam() {
        let m = build_torus_mesh(128, 128, 1.0, 1.0).unwrap();
        // vertex 0 sits on the corner of the fundamental domain
        let ball = geodesic_ball(&m, 0, 0.2).unwrap();
        let exact = PI * 0.04;
        assert!((ball.total_area() - exact).abs() / exact < 0.05);
        assert_eq!(ball.kind, SurfaceKind::Planar);
        ball.validate().unwrap();
        let parent = ball.parent_vertex.as_ref().unwrap();
        assert_eq!(parent.len(), ball.num_vertices());
    }

    #[test]
    fn disk_mesh_is_valid() {
        let d = build_disk_mesh(1.0, 20).unwrap();
        d.validate().unwrap();
        assert_eq!(d.num_vertices(), 1 + 3 * 20 * 21);
        assert_eq!(d.euler_characteristic(), 1);
        assert_eq!(d.boundary_vertices.len(), 120);
        assert!((d.total_area() - PI).abs() / PI < 2e-3);
    }

    #[test]
    fn off_export() {
        let m = build_sphere_mesh(0).unwrap();
        let mut buf = Vec::new();
        m.write_off(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("OFF"));
        assert_eq!(lines.next(), Some("12 20 0"));
        assert_eq!(text.lines().count(), 2 + 12 + 20);
        assert!(text.lines().last().unwrap().starts_with("3 "));
    }
}
