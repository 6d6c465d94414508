//! Conforming triangular meshes of the offset-cylinder domain.
//!
//! The domain is the unit-scale disk of radius `r1` centered at the origin with
//! a smaller disk of radius `r2` centered at `(c1, c2)` removed. Meshes are
//! produced by a deterministic generator (boundary rings plus hexagonal
//! interior lattices joined by a constrained Delaunay triangulation) and are
//! persisted as a versioned, line-oriented text file.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use spade::handles::FixedVertexHandle;
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MESH_FORMAT_VERSION: u32 = 1;
const MESH_MAGIC: &str = "acrom-mesh";

/// Which circle a boundary edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    OuterCylinder,
    InnerCylinder,
}

impl BoundaryTag {
    fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::OuterCylinder => "outer",
            BoundaryTag::InnerCylinder => "inner",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "outer" => Some(BoundaryTag::OuterCylinder),
            "inner" => Some(BoundaryTag::InnerCylinder),
            _ => None,
        }
    }
}

/// Offset-cylinder geometry: outer circle radius `r1` about the origin, inner
/// circle radius `r2` about `(c1, c2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetCylinders<T> {
    pub r1: T,
    pub r2: T,
    pub c1: T,
    pub c2: T,
}

impl<T: Real> OffsetCylinders<T> {
    /// The flow-between-offset-cylinders configuration used in the experiments.
    pub fn reference() -> Self {
        Self {
            r1: T::one(),
            r2: T::lit(0.1),
            c1: T::lit(0.5),
            c2: T::zero(),
        }
    }

    pub fn inner_center(&self) -> [T; 2] {
        [self.c1, self.c2]
    }

    /// Exact area of the annular region.
    pub fn area(&self) -> T {
        T::pi() * (self.r1 * self.r1 - self.r2 * self.r2)
    }

    /// `|x^2 + y^2 - r^2|` for the circle implied by `tag`.
    pub fn circle_defect(&self, tag: BoundaryTag, p: [T; 2]) -> T {
        match tag {
            BoundaryTag::OuterCylinder => (p[0] * p[0] + p[1] * p[1] - self.r1 * self.r1).abs(),
            BoundaryTag::InnerCylinder => {
                let dx = p[0] - self.c1;
                let dy = p[1] - self.c2;
                (dx * dx + dy * dy - self.r2 * self.r2).abs()
            }
        }
    }

    /// Projects `p` radially onto the circle implied by `tag`.
    pub fn snap(&self, tag: BoundaryTag, p: [T; 2]) -> [T; 2] {
        let (c, r) = match tag {
            BoundaryTag::OuterCylinder => ([T::zero(), T::zero()], self.r1),
            BoundaryTag::InnerCylinder => ([self.c1, self.c2], self.r2),
        };
        let dx = p[0] - c[0];
        let dy = p[1] - c[1];
        let d = (dx * dx + dy * dy).sqrt();
        [c[0] + r * dx / d, c[1] + r * dy / d]
    }

    fn validate(&self) -> Result<()> {
        let offset = (self.c1 * self.c1 + self.c2 * self.c2).sqrt();
        if !(self.r2 > T::zero()) {
            return Err(Error::Geometry(format!(
                "inner radius must be positive, got {}",
                self.r2
            )));
        }
        if !(self.r1 > self.r2 + offset) {
            return Err(Error::Geometry(format!(
                "inner disk (r2 = {}, center ({}, {})) is not strictly inside the outer disk (r1 = {})",
                self.r2, self.c1, self.c2, self.r1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
}

/// Immutable conforming triangulation.
///
/// Triangles are stored counterclockwise. `domain` is present for generated
/// meshes and absent for hand-built test meshes; when present, boundary vertices
/// are checked against the circles.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<T> {
    vertices: Vec<[T; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    domain: Option<OffsetCylinders<T>>,
}

/// Tolerance on `|x^2 + y^2 - r^2|` for boundary vertices.
pub fn snap_tolerance<T: Real>() -> T {
    T::lit(1e-8).max(T::lit(100.0) * T::eps())
}

impl<T: Real> Mesh<T> {
    /// Builds a mesh and checks every invariant.
    pub fn new(
        vertices: Vec<[T; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
        domain: Option<OffsetCylinders<T>>,
    ) -> Result<Self> {
        let mesh = Self {
            vertices,
            triangles,
            boundary_edges,
            domain,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[[T; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn domain(&self) -> Option<&OffsetCylinders<T>> {
        self.domain.as_ref()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_coords(&self, t: usize) -> [[T; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> T {
        signed_area(self.triangle_coords(t))
    }

    pub fn area(&self) -> T {
        (0..self.n_triangles()).fold(T::zero(), |acc, t| acc + self.signed_area(t))
    }

    /// Longest edge over all triangles.
    pub fn max_diameter(&self) -> T {
        (0..self.n_triangles()).fold(T::zero(), |acc, t| {
            let [a, b, c] = self.triangle_coords(t);
            acc.max(dist(a, b)).max(dist(b, c)).max(dist(c, a))
        })
    }

    /// Largest `|x^2 + y^2 - r^2|` over boundary vertices (zero without a domain).
    pub fn max_boundary_defect(&self) -> T {
        let Some(domain) = &self.domain else {
            return T::zero();
        };
        self.boundary_edges.iter().fold(T::zero(), |acc, e| {
            e.vertices
                .iter()
                .fold(acc, |acc, &v| acc.max(domain.circle_defect(e.tag, self.vertices[v])))
        })
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!("triangle {t} references a missing vertex")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh(format!("triangle {t} repeats a vertex")));
            }
            let area = self.signed_area(t);
            if !(area > T::zero()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} has non-positive signed area {area:e}"
                )));
            }
        }

        // Directed half-edges: a conforming, consistently oriented mesh uses each
        // directed edge at most once and each undirected edge at most twice.
        let mut half_edges: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if half_edges.insert((a, b), t).is_some() {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({a}, {b}) is traversed twice in the same direction"
                    )));
                }
            }
        }
        let mut open_edges: HashMap<(usize, usize), ()> = HashMap::new();
        for &(a, b) in half_edges.keys() {
            if !half_edges.contains_key(&(b, a)) {
                open_edges.insert((a.min(b), a.max(b)), ());
            }
        }

        let mut seen = HashMap::new();
        for (i, e) in self.boundary_edges.iter().enumerate() {
            let [a, b] = e.vertices;
            if a >= nv || b >= nv {
                return Err(Error::InvalidMesh(format!(
                    "boundary edge {i} references a missing vertex"
                )));
            }
            let key = (a.min(b), a.max(b));
            if !open_edges.contains_key(&key) {
                return Err(Error::InvalidMesh(format!(
                    "boundary edge ({a}, {b}) does not belong to exactly one triangle"
                )));
            }
            if seen.insert(key, i).is_some() {
                return Err(Error::InvalidMesh(format!("boundary edge ({a}, {b}) listed twice")));
            }
        }
        if seen.len() != open_edges.len() {
            return Err(Error::InvalidMesh(format!(
                "{} mesh boundary edges are untagged",
                open_edges.len() - seen.len()
            )));
        }

        if let Some(domain) = &self.domain {
            let tol = snap_tolerance::<T>();
            for e in &self.boundary_edges {
                for &v in &e.vertices {
                    let defect = domain.circle_defect(e.tag, self.vertices[v]);
                    if defect > tol {
                        return Err(Error::InvalidMesh(format!(
                            "boundary vertex {v} is {defect:e} off its {} circle",
                            e.tag.as_str()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Inner-cylinder boundary edges chained into one closed loop, oriented
    /// counterclockwise about the inner disk center.
    pub fn inner_boundary_edges(&self) -> Result<Vec<[usize; 2]>> {
        let edges: Vec<[usize; 2]> = self
            .boundary_edges
            .iter()
            .filter(|e| e.tag == BoundaryTag::InnerCylinder)
            .map(|e| e.vertices)
            .collect();
        if edges.is_empty() {
            return Err(Error::Topology("mesh has no inner-cylinder boundary edges".into()));
        }
        let mut adjacency: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, &[a, b]) in edges.iter().enumerate() {
            adjacency.entry(a).or_default().push(i);
            adjacency.entry(b).or_default().push(i);
        }
        if let Some((v, _)) = adjacency.iter().find(|(_, inc)| inc.len() != 2) {
            return Err(Error::Topology(format!(
                "inner boundary vertex {v} does not have exactly two incident edges"
            )));
        }

        let mut used = vec![false; edges.len()];
        let mut ordered = Vec::with_capacity(edges.len());
        let start = edges[0][0];
        let mut current = start;
        let mut edge = 0;
        loop {
            used[edge] = true;
            let [a, b] = edges[edge];
            let next = if a == current { b } else { a };
            ordered.push([current, next]);
            current = next;
            if current == start {
                break;
            }
            match adjacency[&current].iter().find(|&&e| !used[e]) {
                Some(&e) => edge = e,
                None => return Err(Error::Topology("inner boundary loop does not close".into())),
            }
        }
        if ordered.len() != edges.len() {
            return Err(Error::Topology(format!(
                "inner boundary splits into several loops ({} of {} edges in the first)",
                ordered.len(),
                edges.len()
            )));
        }

        // Shoelace area of the loop relative to the inner center.
        let center = self
            .domain
            .map(|d| d.inner_center())
            .unwrap_or_else(|| self.loop_centroid(&ordered));
        let twice_area = ordered.iter().fold(T::zero(), |acc, &[a, b]| {
            let p = self.vertices[a];
            let q = self.vertices[b];
            acc + (p[0] - center[0]) * (q[1] - center[1]) - (q[0] - center[0]) * (p[1] - center[1])
        });
        if twice_area < T::zero() {
            ordered.reverse();
            for e in &mut ordered {
                e.swap(0, 1);
            }
        }
        Ok(ordered)
    }

    fn loop_centroid(&self, edges: &[[usize; 2]]) -> [T; 2] {
        let n = T::from_count(edges.len());
        let (sx, sy) = edges.iter().fold((T::zero(), T::zero()), |(sx, sy), e| {
            let p = self.vertices[e[0]];
            (sx + p[0], sy + p[1])
        });
        [sx / n, sy / n]
    }

    /// Converts the coordinates to another scalar type.
    pub fn cast<U: Real>(&self) -> Result<Mesh<U>> {
        let c = |x: T| U::lit(x.as_f64());
        Mesh::new(
            self.vertices.iter().map(|p| [c(p[0]), c(p[1])]).collect(),
            self.triangles.clone(),
            self.boundary_edges.clone(),
            self.domain.map(|d| OffsetCylinders {
                r1: c(d.r1),
                r2: c(d.r2),
                c1: c(d.c1),
                c2: c(d.c2),
            }),
        )
    }
}

pub(crate) fn signed_area<T: Real>([a, b, c]: [[T; 2]; 3]) -> T {
    ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])) * T::lit(0.5)
}

fn dist<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Generates a mesh of the offset-cylinder annulus.
///
/// The interior is filled with a hexagonal lattice of spacing `target_h`, and a
/// band around the inner cylinder with a lattice of spacing `target_h / 2`.
/// Triangles longer than `1.4 * target_h` are split by centroid insertion, so
/// every triangle diameter stays below `1.5 * target_h`.
pub fn generate_offset_cylinder_mesh<T: Real>(r1: T, r2: T, c1: T, c2: T, target_h: T) -> Result<Mesh<T>> {
    let domain = OffsetCylinders { r1, r2, c1, c2 };
    domain.validate()?;
    if !(target_h > T::zero()) {
        return Err(Error::Geometry(format!("target h must be positive, got {target_h}")));
    }
    if target_h > r2 {
        return Err(Error::Resolution {
            h: target_h.as_f64(),
            r2: r2.as_f64(),
        });
    }

    let (r1f, r2f, c1f, c2f, h) = (r1.as_f64(), r2.as_f64(), c1.as_f64(), c2.as_f64(), target_h.as_f64());
    let h_fine = 0.5 * h;
    let band = r2f + 6.0 * h_fine;

    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> = ConstrainedDelaunayTriangulation::new();
    let insert = |cdt: &mut ConstrainedDelaunayTriangulation<Point2<f64>>, x: f64, y: f64| {
        cdt.insert(Point2::new(x, y))
            .map_err(|e| Error::Geometry(format!("cannot insert point ({x}, {y}): {e:?}")))
    };

    // Boundary rings. Their coordinates are evaluated again in `T` afterwards so
    // that boundary vertices sit on the circles to the precision of `T`.
    let n_outer = ((2.0 * std::f64::consts::PI * r1f / h).ceil() as usize).max(8);
    let n_inner = ((2.0 * std::f64::consts::PI * r2f / h_fine).ceil() as usize).max(8);
    let ring = |n: usize, k: usize| 2.0 * std::f64::consts::PI * (k as f64) / (n as f64);

    let mut outer_handles = Vec::with_capacity(n_outer);
    for k in 0..n_outer {
        let th = ring(n_outer, k);
        outer_handles.push(insert(&mut cdt, r1f * th.cos(), r1f * th.sin())?);
    }
    let mut inner_handles = Vec::with_capacity(n_inner);
    for k in 0..n_inner {
        let th = ring(n_inner, k);
        inner_handles.push(insert(&mut cdt, c1f + r2f * th.cos(), c2f + r2f * th.sin())?);
    }
    for ring in [&outer_handles, &inner_handles] {
        for k in 0..ring.len() {
            cdt.add_constraint(ring[k], ring[(k + 1) % ring.len()]);
        }
    }

    let dist_outer = |x: f64, y: f64| r1f - (x * x + y * y).sqrt();
    let dist_inner_center = |x: f64, y: f64| ((x - c1f).powi(2) + (y - c2f).powi(2)).sqrt();

    let mut fine_points = Vec::new();
    for (x, y) in hex_lattice(c1f - band, c1f + band, c2f - band, c2f + band, h_fine) {
        let d = dist_inner_center(x, y);
        if d < band && d - r2f >= 0.5 * h_fine && dist_outer(x, y) >= 0.5 * h {
            fine_points.push((x, y));
        }
    }
    let mut coarse_points = Vec::new();
    for (x, y) in hex_lattice(-r1f, r1f, -r1f, r1f, h) {
        let d = dist_inner_center(x, y);
        if d < band + 0.5 * h || dist_outer(x, y) < 0.5 * h {
            continue;
        }
        coarse_points.push((x, y));
    }
    for &(x, y) in fine_points.iter().chain(&coarse_points) {
        insert(&mut cdt, x, y)?;
    }

    // Split overlong triangles until every retained triangle is short enough.
    let limit = 1.4 * h;
    for _ in 0..64 {
        let mut splits = Vec::new();
        for face in cdt.inner_faces() {
            let [a, b, c] = face.positions();
            let cx = (a.x + b.x + c.x) / 3.0;
            let cy = (a.y + b.y + c.y) / 3.0;
            if dist_inner_center(cx, cy) < r2f {
                continue;
            }
            let longest = pdist(a, b).max(pdist(b, c)).max(pdist(c, a));
            if longest > limit {
                splits.push((cx, cy));
            }
        }
        if splits.is_empty() {
            break;
        }
        for (x, y) in splits {
            insert(&mut cdt, x, y)?;
        }
    }

    // Collect retained faces and compact vertex numbering in first-use order.
    let mut remap: HashMap<FixedVertexHandle, usize> = HashMap::new();
    let mut coords_f64: Vec<(f64, f64)> = Vec::new();
    let mut triangles = Vec::new();
    for face in cdt.inner_faces() {
        let [a, b, c] = face.positions();
        let cx = (a.x + b.x + c.x) / 3.0;
        let cy = (a.y + b.y + c.y) / 3.0;
        if dist_inner_center(cx, cy) < r2f {
            continue;
        }
        let handles = face.vertices().map(|v| v.fix());
        let mut tri = [0usize; 3];
        for (slot, handle) in tri.iter_mut().zip(handles) {
            let next = remap.len();
            *slot = *remap.entry(handle).or_insert_with(|| {
                let p = cdt.vertex(handle).position();
                coords_f64.push((p.x, p.y));
                next
            });
        }
        triangles.push(tri);
    }

    let mut vertices: Vec<[T; 2]> = coords_f64.iter().map(|&(x, y)| [T::lit(x), T::lit(y)]).collect();
    let mut boundary_edges = Vec::with_capacity(n_outer + n_inner);
    for (ring, n, tag) in [
        (&outer_handles, n_outer, BoundaryTag::OuterCylinder),
        (&inner_handles, n_inner, BoundaryTag::InnerCylinder),
    ] {
        for k in 0..n {
            let v = remap[&ring[k]];
            let th = T::two_pi() * T::from_count(k) / T::from_count(n);
            vertices[v] = match tag {
                BoundaryTag::OuterCylinder => [r1 * th.cos(), r1 * th.sin()],
                BoundaryTag::InnerCylinder => [c1 + r2 * th.cos(), c2 + r2 * th.sin()],
            };
            let w = remap[&ring[(k + 1) % n]];
            boundary_edges.push(BoundaryEdge { vertices: [v, w], tag });
        }
    }

    for tri in &mut triangles {
        let coords = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
        if signed_area(coords) < T::zero() {
            tri.swap(1, 2);
        }
    }

    Mesh::new(vertices, triangles, boundary_edges, Some(domain))
}

/// Generates a mesh of the reference geometry.
pub fn generate_reference_mesh<T: Real>(target_h: T) -> Result<Mesh<T>> {
    let d = OffsetCylinders::<T>::reference();
    generate_offset_cylinder_mesh(d.r1, d.r2, d.c1, d.c2, target_h)
}

fn pdist(a: Point2<f64>, b: Point2<f64>) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

fn hex_lattice(x0: f64, x1: f64, y0: f64, y1: f64, s: f64) -> Vec<(f64, f64)> {
    let dy = s * 3f64.sqrt() / 2.0;
    let rows = ((y1 - y0) / dy).ceil() as i64;
    let cols = ((x1 - x0) / s).ceil() as i64;
    let mut points = Vec::new();
    for j in 0..=rows {
        let y = y0 + j as f64 * dy;
        let shift = if j % 2 == 1 { 0.5 * s } else { 0.0 };
        for i in 0..=cols {
            points.push((x0 + shift + i as f64 * s, y));
        }
    }
    points
}

/// Writes the mesh in the versioned text format.
pub fn save_mesh<T: Real>(mesh: &Mesh<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, mesh_to_string(mesh)).map_err(|e| Error::io(path, e))
}

pub fn mesh_to_string<T: Real>(mesh: &Mesh<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MESH_MAGIC} {MESH_FORMAT_VERSION}");
    match &mesh.domain {
        Some(d) => {
            let _ = writeln!(out, "domain {:e} {:e} {:e} {:e}", d.r1, d.r2, d.c1, d.c2);
        }
        None => out.push_str("domain none\n"),
    }
    let _ = writeln!(out, "vertices {}", mesh.vertices.len());
    for p in &mesh.vertices {
        let _ = writeln!(out, "{:e} {:e}", p[0], p[1]);
    }
    let _ = writeln!(out, "triangles {}", mesh.triangles.len());
    for t in &mesh.triangles {
        let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(out, "boundary {}", mesh.boundary_edges.len());
    for e in &mesh.boundary_edges {
        let _ = writeln!(out, "{} {} {}", e.vertices[0], e.vertices[1], e.tag.as_str());
    }
    out.push_str("end\n");
    out
}

/// Reads and validates a mesh file.
pub fn load_mesh<T: Real>(path: impl AsRef<Path>) -> Result<Mesh<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text, path)
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
}

impl<'a> Lines<'a> {
    fn fail(&self, reason: String) -> Error {
        Error::format(self.path, reason)
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.iter.next() {
            Some((i, l)) => Ok((i + 1, l.trim())),
            None => Err(self.fail(format!("unexpected end of file while reading {what}"))),
        }
    }

    fn section(&mut self, name: &str) -> Result<usize> {
        let (ln, line) = self.next(name)?;
        let mut p = line.split_whitespace();
        if p.next() != Some(name) {
            return Err(self.fail(format!("line {ln}: expected `{name}` section")));
        }
        p.next()
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| self.fail(format!("line {ln}: bad {name} count")))
    }
}

pub fn parse_mesh<T: Real>(text: &str, path: &Path) -> Result<Mesh<T>> {
    let mut lines = Lines {
        iter: text.lines().enumerate(),
        path,
    };

    let (_, header) = lines.next("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MESH_MAGIC) {
        return Err(lines.fail("missing mesh header".into()));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| lines.fail("missing format version".into()))?;
    if version != MESH_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            expected: MESH_FORMAT_VERSION,
        });
    }

    let (ln, domain_line) = lines.next("domain")?;
    let fields: Vec<&str> = domain_line.split_whitespace().collect();
    let domain = match fields.as_slice() {
        ["domain", "none"] => None,
        ["domain", r1, r2, c1, c2] => {
            let v = [r1, r2, c1, c2]
                .iter()
                .map(|s| parse_real::<T>(s))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| lines.fail(format!("line {ln}: bad domain values")))?;
            Some(OffsetCylinders {
                r1: v[0],
                r2: v[1],
                c1: v[2],
                c2: v[3],
            })
        }
        _ => return Err(lines.fail(format!("line {ln}: expected domain line"))),
    };

    let nv = lines.section("vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, line) = lines.next("vertex")?;
        let v: Vec<T> = line.split_whitespace().filter_map(parse_real::<T>).collect();
        if v.len() != 2 {
            return Err(lines.fail(format!("line {ln}: expected two coordinates")));
        }
        vertices.push([v[0], v[1]]);
    }

    let nt = lines.section("triangles")?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, line) = lines.next("triangle")?;
        let v: Vec<usize> = line.split_whitespace().filter_map(|s| s.parse().ok()).collect();
        if v.len() != 3 {
            return Err(lines.fail(format!("line {ln}: expected three vertex indices")));
        }
        triangles.push([v[0], v[1], v[2]]);
    }

    let nb = lines.section("boundary")?;
    let mut boundary_edges = Vec::with_capacity(nb);
    for _ in 0..nb {
        let (ln, line) = lines.next("boundary edge")?;
        let p: Vec<&str> = line.split_whitespace().collect();
        let edge = match p.as_slice() {
            [a, b, tag] => match (a.parse(), b.parse(), BoundaryTag::parse(tag)) {
                (Ok(a), Ok(b), Some(tag)) => BoundaryEdge { vertices: [a, b], tag },
                _ => return Err(lines.fail(format!("line {ln}: bad boundary edge"))),
            },
            _ => return Err(lines.fail(format!("line {ln}: bad boundary edge"))),
        };
        boundary_edges.push(edge);
    }
    let (ln, end) = lines.next("end marker")?;
    if end != "end" {
        return Err(lines.fail(format!("line {ln}: expected `end`")));
    }

    Mesh::new(vertices, triangles, boundary_edges, domain)
}

pub(crate) fn parse_real<T: Real>(s: &str) -> Option<T> {
    s.parse::<f64>().ok().and_then(T::from_f64)
}

/// Two counterclockwise triangles on the unit square `[0,1]^2`, all edges on
/// the boundary tagged as outer. Used by tiny-mesh oracles.
pub fn unit_square_mesh<T: Real>() -> Mesh<T> {
    let z = T::zero();
    let o = T::one();
    let vertices = vec![[z, z], [o, z], [o, o], [z, o]];
    let triangles = vec![[0, 1, 2], [0, 2, 3]];
    let tag = BoundaryTag::OuterCylinder;
    let boundary_edges = [[0, 1], [1, 2], [2, 3], [3, 0]]
        .into_iter()
        .map(|vertices| BoundaryEdge { vertices, tag })
        .collect();
    Mesh::new(vertices, triangles, boundary_edges, None).expect("unit square mesh is valid")
}

/// Structured `n x n` split-square mesh of `[0,1]^2` with every boundary edge
/// tagged outer.
pub fn structured_square_mesh<T: Real>(n: usize) -> Mesh<T> {
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([T::from_count(i) / T::from_count(n), T::from_count(j) / T::from_count(n)]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    let tag = BoundaryTag::OuterCylinder;
    let mut boundary_edges = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary_edges.push(BoundaryEdge {
            vertices: [idx(i, 0), idx(i + 1, 0)],
            tag,
        });
        boundary_edges.push(BoundaryEdge {
            vertices: [idx(n, i), idx(n, i + 1)],
            tag,
        });
        boundary_edges.push(BoundaryEdge {
            vertices: [idx(i + 1, n), idx(i, n)],
            tag,
        });
        boundary_edges.push(BoundaryEdge {
            vertices: [idx(0, i + 1), idx(0, i)],
            tag,
        });
    }
    Mesh::new(vertices, triangles, boundary_edges, None).expect("structured mesh is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_mesh(h: f64) -> Mesh<f64> {
        generate_offset_cylinder_mesh(1.0, 0.1, 0.5, 0.0, h).unwrap()
    }

    #[test]
    fn generated_mesh_has_positive_areas_and_bounded_diameter() {
        let mesh = reference_mesh(0.05);
        for t in 0..mesh.n_triangles() {
            assert!(mesh.signed_area(t) > 0.0);
        }
        assert!(mesh.max_diameter() <= 1.5 * 0.05, "diameter {}", mesh.max_diameter());
        assert!(mesh.max_boundary_defect() <= 1e-8);
    }

    #[test]
    fn area_converges_to_annulus_area() {
        let exact = 0.99 * std::f64::consts::PI;
        let mesh = reference_mesh(0.02);
        assert!((mesh.area() - exact).abs() / exact < 0.01);

        let errors: Vec<f64> = [0.08, 0.04, 0.02]
            .iter()
            .map(|&h| (reference_mesh(h).area() - exact).abs())
            .collect();
        assert!(errors[1] < errors[0] && errors[2] < errors[1], "{errors:?}");
    }

    #[test]
    fn inner_disk_crossing_outer_boundary_is_rejected() {
        let err = generate_offset_cylinder_mesh(1.0, 0.5, 0.6, 0.0, 0.05).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)), "{err}");
    }

    #[test]
    fn coarse_resolution_is_rejected() {
        let err = generate_offset_cylinder_mesh(1.0, 0.1, 0.5, 0.0, 0.2).unwrap_err();
        assert!(matches!(err, Error::Resolution { .. }), "{err}");
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(reference_mesh(0.08), reference_mesh(0.08));
    }

    #[test]
    fn inner_loop_length_and_orientation() {
        let mesh = reference_mesh(0.02);
        let edges = mesh.inner_boundary_edges().unwrap();
        let length: f64 = edges
            .iter()
            .map(|&[a, b]| dist(mesh.vertices()[a], mesh.vertices()[b]))
            .sum();
        let exact = 2.0 * std::f64::consts::PI * 0.1;
        assert!((length - exact).abs() / exact < 0.005, "{length}");

        // Discrete winding number about the inner center is +1.
        let c = [0.5, 0.0];
        let winding: f64 = edges
            .iter()
            .map(|&[a, b]| {
                let p = mesh.vertices()[a];
                let q = mesh.vertices()[b];
                let ta = (p[1] - c[1]).atan2(p[0] - c[0]);
                let tb = (q[1] - c[1]).atan2(q[0] - c[0]);
                let mut d = tb - ta;
                if d > std::f64::consts::PI {
                    d -= 2.0 * std::f64::consts::PI;
                } else if d < -std::f64::consts::PI {
                    d += 2.0 * std::f64::consts::PI;
                }
                d
            })
            .sum::<f64>()
            / (2.0 * std::f64::consts::PI);
        assert!((winding - 1.0).abs() < 1e-12, "{winding}");
        for w in edges.windows(2) {
            assert_eq!(w[0][1], w[1][0]);
        }
    }

    #[test]
    fn missing_inner_boundary_is_a_topology_error() {
        let mesh = unit_square_mesh::<f64>();
        assert!(matches!(mesh.inner_boundary_edges(), Err(Error::Topology(_))));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mesh");
        let mesh = reference_mesh(0.08);
        save_mesh(&mesh, &path).unwrap();
        let back: Mesh<f64> = load_mesh(&path).unwrap();
        assert_eq!(mesh, back);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mesh");
        let text = mesh_to_string(&reference_mesh(0.08));
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_mesh::<f64>(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn swapped_triangle_is_an_invariant_violation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mesh");
        let mesh = unit_square_mesh::<f64>();
        let text = mesh_to_string(&mesh).replace("\n0 1 2\n", "\n1 0 2\n");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_mesh::<f64>(&path), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn bumped_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mesh");
        let text = mesh_to_string(&unit_square_mesh::<f64>()).replacen("acrom-mesh 1", "acrom-mesh 2", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_mesh::<f64>(&path),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
    }

    #[test]
    fn single_precision_mesh_is_valid() {
        let mesh = generate_offset_cylinder_mesh(1.0f32, 0.1, 0.5, 0.0, 0.08).unwrap();
        assert!(mesh.validate().is_ok());
    }
}
