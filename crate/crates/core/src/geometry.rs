//! Planar triangle meshes, barycentric anchoring of off-node points and
//! centerline sampling.
//!
//! Nodal configurations are stored as flat slices `[x0, y0, x1, y1, ...]`
//! in millimetres; vertex `i` owns DOFs `2i` and `2i + 1`.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance (mm) within which a point still counts as inside a triangle.
pub const INSIDE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    /// Rotates by +90 degrees.
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Position of vertex `i` in a flat configuration vector.
#[inline]
pub fn node(q: &[f64], i: usize) -> Point2 {
    Point2::new(q[2 * i], q[2 * i + 1])
}

/// Planar triangulation with its outward-oriented boundary and anchored vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<[usize; 2]>,
    fixed: Vec<usize>,
    fixed_mask: Vec<bool>,
}

/// On-disk mesh layout. Key names are part of the file format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshFile {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<[usize; 2]>,
    pub fixed: Vec<usize>,
}

impl TriMesh {
    /// Builds a mesh and derives its boundary edges from the triangles.
    pub fn new(vertices: Vec<Point2>, triangles: Vec<[usize; 3]>, fixed: Vec<usize>) -> Result<Self> {
        let boundary = derive_boundary(&triangles);
        Self::with_boundary(vertices, triangles, boundary, fixed)
    }

    /// Builds a mesh from explicit boundary edges, checking them against the triangles.
    pub fn with_boundary(vertices: Vec<Point2>, triangles: Vec<[usize; 3]>, boundary_edges: Vec<[usize; 2]>, mut fixed: Vec<usize>) -> Result<Self> {
        let n = vertices.len();
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidMesh(format!("non-finite vertex {p:?}")));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!("triangle {t} references a missing vertex")));
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area <= 0.0 {
                return Err(Error::InvalidMesh(format!("triangle {t} is not counter-clockwise (signed area {area:e})")));
            }
        }
        let mut expected = derive_boundary(&triangles);
        let mut given = boundary_edges.clone();
        expected.sort_unstable();
        given.sort_unstable();
        if expected != given {
            return Err(Error::InvalidMesh("boundary edges do not match the edges incident to exactly one triangle".into()));
        }
        fixed.sort_unstable();
        fixed.dedup();
        if fixed.is_empty() {
            return Err(Error::InvalidMesh("at least one fixed vertex is required".into()));
        }
        if fixed.iter().any(|&i| i >= n) {
            return Err(Error::InvalidMesh("fixed vertex index out of range".into()));
        }
        let mut fixed_mask = vec![false; n];
        for &i in &fixed {
            fixed_mask[i] = true;
        }
        Ok(Self { vertices, triangles, boundary_edges, fixed, fixed_mask })
    }

    /// Rectangular grid `[0, length] x [0, height]` of `cols x rows` cells, each
    /// split into two right triangles. Cells for which `keep(col, row)` is false
    /// are left out, which is how chambers and notches are cut. Vertices on
    /// `x = 0` are fixed. Vertices are numbered column by column so the
    /// stiffness bandwidth stays proportional to `rows`.
    pub fn grid(length: f64, height: f64, cols: usize, rows: usize, keep: impl Fn(usize, usize) -> bool) -> Result<Self> {
        if cols == 0 || rows == 0 || !(length > 0.0) || !(height > 0.0) {
            return Err(Error::InvalidMesh("grid needs positive size and cell counts".into()));
        }
        let dx = length / cols as f64;
        let dy = height / rows as f64;
        let grid_index = |c: usize, r: usize| c * (rows + 1) + r;
        let mut used = vec![false; (cols + 1) * (rows + 1)];
        let mut raw_tris = Vec::with_capacity(2 * cols * rows);
        for c in 0..cols {
            for r in 0..rows {
                if !keep(c, r) {
                    continue;
                }
                let v00 = grid_index(c, r);
                let v10 = grid_index(c + 1, r);
                let v01 = grid_index(c, r + 1);
                let v11 = grid_index(c + 1, r + 1);
                raw_tris.push([v00, v10, v11]);
                raw_tris.push([v00, v11, v01]);
                for v in [v00, v10, v01, v11] {
                    used[v] = true;
                }
            }
        }
        let mut remap = vec![usize::MAX; used.len()];
        let mut vertices = Vec::new();
        let mut fixed = Vec::new();
        for c in 0..=cols {
            for r in 0..=rows {
                let g = grid_index(c, r);
                if used[g] {
                    remap[g] = vertices.len();
                    if c == 0 {
                        fixed.push(vertices.len());
                    }
                    // exact multiples keep the far edge at `length` bit for bit
                    let x = if c == cols { length } else { c as f64 * dx };
                    let y = if r == rows { height } else { r as f64 * dy };
                    vertices.push(Point2::new(x, y));
                }
            }
        }
        let triangles = raw_tris.iter().map(|t| [remap[t[0]], remap[t[1]], remap[t[2]]]).collect();
        Self::new(vertices, triangles, fixed)
    }

    pub fn from_file(file: MeshFile) -> Result<Self> {
        let vertices = file.vertices.iter().map(|v| Point2::new(v[0], v[1])).collect();
        Self::with_boundary(vertices, file.triangles, file.boundary_edges, file.fixed)
    }

    pub fn to_file(&self) -> MeshFile {
        MeshFile {
            vertices: self.vertices.iter().map(|p| [p.x, p.y]).collect(),
            triangles: self.triangles.clone(),
            boundary_edges: self.boundary_edges.clone(),
            fixed: self.fixed.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeshFile = serde_json::from_str(text).map_err(|e| Error::InvalidMesh(format!("mesh json: {e}")))?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("mesh serializes")
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    pub fn fixed_vertices(&self) -> &[usize] {
        &self.fixed
    }

    pub fn is_fixed(&self, vertex: usize) -> bool {
        self.fixed_mask[vertex]
    }

    pub fn is_fixed_dof(&self, dof: usize) -> bool {
        self.fixed_mask[dof / 2]
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn dof_count(&self) -> usize {
        2 * self.vertices.len()
    }

    /// Flat rest configuration.
    pub fn rest_positions(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn triangle_points(&self, t: usize, q: &[f64]) -> [Point2; 3] {
        let [a, b, c] = self.triangles[t];
        [node(q, a), node(q, b), node(q, c)]
    }

    /// Half bandwidth (in DOFs) of any matrix coupling the vertices of each triangle.
    pub fn half_bandwidth(&self) -> usize {
        self.triangles
            .iter()
            .map(|t| {
                let lo = t.iter().min().unwrap();
                let hi = t.iter().max().unwrap();
                2 * (hi - lo) + 1
            })
            .max()
            .unwrap_or(1)
    }

    /// Boundary edges grouped into closed, ordered loops. Loops are returned
    /// in order of their smallest edge index.
    pub fn boundary_loops(&self) -> Result<Vec<Vec<[usize; 2]>>> {
        let mut outgoing: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, e) in self.boundary_edges.iter().enumerate() {
            outgoing.entry(e[0]).or_default().push(k);
        }
        let mut visited = vec![false; self.boundary_edges.len()];
        let mut loops = Vec::new();
        for start in 0..self.boundary_edges.len() {
            if visited[start] {
                continue;
            }
            let mut current = start;
            let mut lp = Vec::new();
            loop {
                visited[current] = true;
                let e = self.boundary_edges[current];
                lp.push(e);
                let next = outgoing.get(&e[1]).and_then(|c| c.iter().copied().find(|&k| !visited[k] || k == start));
                match next {
                    Some(k) if k == start => break,
                    Some(k) => current = k,
                    None => return Err(Error::InvalidMesh(format!("boundary loop starting at edge {start} does not close"))),
                }
            }
            loops.push(lp);
        }
        Ok(loops)
    }
}

/// Twice-signed area halved: positive for counter-clockwise triangles.
pub fn signed_area(a: Point2, b: Point2, c: Point2) -> f64 {
    0.5 * (b - a).cross(c - a)
}

fn derive_boundary(triangles: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut count: BTreeMap<(usize, usize), (usize, [usize; 2])> = BTreeMap::new();
    for tri in triangles {
        for k in 0..3 {
            let e = [tri[k], tri[(k + 1) % 3]];
            let key = (e[0].min(e[1]), e[0].max(e[1]));
            count.entry(key).and_modify(|v| v.0 += 1).or_insert((1, e));
        }
    }
    count.into_values().filter(|(n, _)| *n == 1).map(|(_, e)| e).collect()
}

/// A point attached to a triangle through convex vertex weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarycentricAnchor {
    pub triangle: usize,
    pub weights: [f64; 3],
}

impl BarycentricAnchor {
    /// The vertex indices and weights of the host triangle.
    pub fn vertices(&self, mesh: &TriMesh) -> [(usize, f64); 3] {
        let t = mesh.triangles()[self.triangle];
        [(t[0], self.weights[0]), (t[1], self.weights[1]), (t[2], self.weights[2])]
    }
}

/// Raw barycentric weights of `p` with respect to triangle `(a, b, c)`.
pub fn raw_weights(a: Point2, b: Point2, c: Point2, p: Point2) -> [f64; 3] {
    let det = (b - a).cross(c - a);
    let w1 = (p - a).cross(c - a) / det;
    let w2 = (b - a).cross(p - a) / det;
    [1.0 - w1 - w2, w1, w2]
}

fn distance_to_segment(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    p.distance(a + ab * t)
}

/// Locates `p` in the rest mesh. Shared edges resolve to the lowest triangle index.
pub fn barycentric_coords(mesh: &TriMesh, p: Point2) -> Result<BarycentricAnchor> {
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let [a, b, c] = [mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]];
        let w = raw_weights(a, b, c, p);
        let inside = w.iter().all(|&x| x >= 0.0)
            || distance_to_segment(p, a, b).min(distance_to_segment(p, b, c)).min(distance_to_segment(p, c, a)) <= INSIDE_TOLERANCE;
        if inside {
            let mut clamped = w.map(|x| x.clamp(0.0, 1.0));
            let sum: f64 = clamped.iter().sum();
            for x in &mut clamped {
                *x /= sum;
            }
            return Ok(BarycentricAnchor { triangle: t, weights: clamped });
        }
    }
    Err(Error::PointOutsideMesh { x: p.x, y: p.y })
}

/// Evaluates an anchor under configuration `q`.
pub fn anchor_position(mesh: &TriMesh, anchor: &BarycentricAnchor, q: &[f64]) -> Point2 {
    anchor.vertices(mesh).iter().fold(Point2::default(), |acc, &(v, w)| acc + node(q, v) * w)
}

/// Ordered anchors at known arc-length coordinates along a path in the body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centerline {
    pub anchors: Vec<BarycentricAnchor>,
    pub arc_positions: Vec<f64>,
}

impl Centerline {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn positions(&self, mesh: &TriMesh, q: &[f64]) -> Vec<Point2> {
        self.anchors.iter().map(|a| anchor_position(mesh, a, q)).collect()
    }
}

/// Point at arc length `s` along a polyline.
pub fn point_at_arc(path: &[Point2], s: f64) -> Point2 {
    let mut remaining = s;
    for w in path.windows(2) {
        let seg = w[1].distance(w[0]);
        if remaining <= seg {
            return w[0] + (w[1] - w[0]) * (remaining / seg);
        }
        remaining -= seg;
    }
    *path.last().expect("non-empty path")
}

pub fn polyline_length(path: &[Point2]) -> f64 {
    path.windows(2).map(|w| w[1].distance(w[0])).sum()
}

/// Samples `n` anchors at equal arc-length spacing along `path`.
pub fn sample_centerline(mesh: &TriMesh, path: &[Point2], n: usize) -> Result<Centerline> {
    if n < 2 {
        return Err(Error::InvalidInput("centerline needs at least two samples".into()));
    }
    if path.len() < 2 {
        return Err(Error::InvalidInput("centerline path needs at least two points".into()));
    }
    let total = polyline_length(path);
    if !(total > 0.0) {
        return Err(Error::InvalidInput("centerline path has zero length".into()));
    }
    let mut anchors = Vec::with_capacity(n);
    let mut arc_positions = Vec::with_capacity(n);
    for k in 0..n {
        let s = if k == n - 1 { total } else { total * k as f64 / (n - 1) as f64 };
        anchors.push(barycentric_coords(mesh, point_at_arc(path, s))?);
        arc_positions.push(s);
    }
    Ok(Centerline { anchors, arc_positions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_triangle() -> TriMesh {
        TriMesh::new(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)], vec![[0, 1, 2]], vec![0]).unwrap()
    }

    fn assert_weights(a: &BarycentricAnchor, w: [f64; 3]) {
        for k in 0..3 {
            assert!((a.weights[k] - w[k]).abs() < 1e-12, "{:?} vs {:?}", a.weights, w);
        }
    }

    #[test]
    fn centroid_vertex_and_interior_weights() {
        let m = unit_triangle();
        let c = barycentric_coords(&m, Point2::new(1.0 / 3.0, 1.0 / 3.0)).unwrap();
        assert_weights(&c, [1.0 / 3.0; 3]);
        let v = barycentric_coords(&m, Point2::new(1.0, 0.0)).unwrap();
        assert_weights(&v, [0.0, 1.0, 0.0]);
        // 2x2 system by hand: p = a + w1 (b - a) + w2 (c - a) gives w1 = w2 = 0.25
        let p = barycentric_coords(&m, Point2::new(0.25, 0.25)).unwrap();
        assert_weights(&p, [0.5, 0.25, 0.25]);
    }

    #[test]
    fn outside_point_is_rejected_but_near_edge_is_clamped() {
        let m = unit_triangle();
        assert!(matches!(barycentric_coords(&m, Point2::new(1.0, 1.0)), Err(Error::PointOutsideMesh { .. })));
        let near = barycentric_coords(&m, Point2::new(0.5, -5e-7)).unwrap();
        assert!(near.weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
        assert!((near.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn anchor_evaluation() {
        let m = unit_triangle();
        let q = m.rest_positions();
        let p = Point2::new(0.2, 0.3);
        let a = barycentric_coords(&m, p).unwrap();
        assert!(anchor_position(&m, &a, &q).distance(p) < 1e-9);
        let shifted: Vec<f64> = q.chunks(2).flat_map(|c| [c[0] + 5.0, c[1]]).collect();
        let moved = anchor_position(&m, &a, &shifted);
        assert!(moved.distance(p + Point2::new(5.0, 0.0)) < 1e-12);
        let vertex = BarycentricAnchor { triangle: 0, weights: [1.0, 0.0, 0.0] };
        assert_eq!(anchor_position(&m, &vertex, &shifted), Point2::new(5.0, 0.0));
    }

    #[test]
    fn shared_edge_resolves_to_lowest_triangle() {
        let m = TriMesh::grid(2.0, 1.0, 2, 1, |_, _| true).unwrap();
        let a = barycentric_coords(&m, Point2::new(0.5, 0.5)).unwrap();
        assert_eq!(a.triangle, 0);
        let p = Point2::new(1.0, 0.5);
        let containing: Vec<usize> = m
            .triangles()
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                let w = raw_weights(m.vertices()[t[0]], m.vertices()[t[1]], m.vertices()[t[2]], p);
                w.iter().all(|&x| x >= -1e-12)
            })
            .map(|(i, _)| i)
            .collect();
        assert!(containing.len() >= 2);
        assert_eq!(barycentric_coords(&m, p).unwrap().triangle, containing[0]);
    }

    #[test]
    fn grid_boundary_forms_closed_loops() {
        let m = TriMesh::grid(10.0, 4.0, 10, 4, |c, r| !(3..7).contains(&c) || !(1..3).contains(&r)).unwrap();
        let loops = m.boundary_loops().unwrap();
        assert_eq!(loops.len(), 2);
        let outer: usize = loops.iter().map(|l| l.len()).max().unwrap();
        assert_eq!(outer, 2 * (10 + 4));
        // outward orientation: the signed area enclosed by the outer loop is positive
        let area = |l: &Vec<[usize; 2]>| -> f64 { l.iter().map(|e| 0.5 * m.vertices()[e[0]].cross(m.vertices()[e[1]])).sum() };
        let mut areas: Vec<f64> = loops.iter().map(area).collect();
        areas.sort_by(f64::total_cmp);
        assert!((areas[1] - 40.0).abs() < 1e-9);
        assert!((areas[0] + 8.0).abs() < 1e-9, "hole loop runs clockwise");
        assert_eq!(m.fixed_vertices().len(), 5);
    }

    #[test]
    fn mesh_validation() {
        let cw = TriMesh::new(vec![Point2::new(0.0, 0.0), Point2::new(0.0, 1.0), Point2::new(1.0, 0.0)], vec![[0, 1, 2]], vec![0]);
        assert!(matches!(cw, Err(Error::InvalidMesh(_))));
        let unanchored = TriMesh::new(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)], vec![[0, 1, 2]], vec![]);
        assert!(unanchored.is_err());
        let bad_boundary = TriMesh::with_boundary(
            vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)],
            vec![[0, 1, 2]],
            vec![[0, 1], [1, 2]],
            vec![0],
        );
        assert!(bad_boundary.is_err());
    }

    #[test]
    fn json_keys_and_round_trip() {
        let m = TriMesh::grid(3.0, 1.0, 3, 1, |_, _| true).unwrap();
        let text = m.to_json();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["vertices", "triangles", "boundary_edges", "fixed"] {
            assert!(value.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(TriMesh::from_json(&text).unwrap(), m);
    }

    #[test]
    fn centerline_spacing() {
        let m = TriMesh::grid(120.0, 6.0, 24, 2, |_, _| true).unwrap();
        let path = [Point2::new(0.0, 3.0), Point2::new(80.0, 3.0)];
        let c = sample_centerline(&m, &path, 8).unwrap();
        for (k, s) in c.arc_positions.iter().enumerate() {
            assert!((s - 80.0 * k as f64 / 7.0).abs() < 1e-12);
        }
        assert_eq!(*c.arc_positions.last().unwrap(), 80.0);
        let ends = sample_centerline(&m, &path, 2).unwrap();
        assert_eq!(ends.arc_positions, vec![0.0, 80.0]);
        let markers = sample_centerline(&m, &[Point2::new(0.0, 3.0), Point2::new(120.0, 3.0)], 11).unwrap();
        assert_eq!(markers.len(), 11);
        let sensed = markers.arc_positions.iter().filter(|&&s| s <= 84.0 + 1e-9).count();
        assert_eq!(sensed, 8);
        assert!(sample_centerline(&m, &[Point2::new(0.0, 3.0), Point2::new(130.0, 3.0)], 3).is_err());
    }
}
