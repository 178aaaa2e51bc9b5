//! Constraint Jacobian rows for force, pressure and length constraints, pose
//! effector rows, and the compliance matrix `W = H_e K⁻¹ H_fᵀ`.
//!
//! Effort units: force rows take λ in N; the pressure row takes λ in N/mm²
//! (so `Hᵀλ` is in N with the row in mm²); length rows take λ in N.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{row_dot, row_scatter, Efforts, ElasticBody, SparseRow, TangentStiffness};
use crate::geometry::{anchor_position, BarycentricAnchor, Point2, TriMesh};
use crate::linalg::{BandLdlt, SymBandMatrix};

/// Point force of magnitude λ along a fixed unit direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceConstraint {
    pub anchor: BarycentricAnchor,
    pub direction: Point2,
}

impl ForceConstraint {
    pub fn new(anchor: BarycentricAnchor, direction: Point2) -> Result<Self> {
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("force direction must be a unit vector, got {direction:?}")));
        }
        Ok(Self { anchor, direction })
    }
}

/// Row applying `λ · direction` at the anchor point.
pub fn force_row(mesh: &TriMesh, c: &ForceConstraint) -> SparseRow {
    let mut row = Vec::with_capacity(6);
    for (v, w) in c.anchor.vertices(mesh) {
        if w != 0.0 {
            row.push((2 * v, w * c.direction.x));
            row.push((2 * v + 1, w * c.direction.y));
        }
    }
    merge(row)
}

/// Uniform pressure on a chain of edges. Each edge `(a, b)` has its outward
/// normal on the right of `b − a`; that normal is the direction the pressure
/// pushes the wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureConstraint {
    pub edges: Vec<[usize; 2]>,
    /// Out-of-plane thickness (mm).
    pub thickness: f64,
}

impl PressureConstraint {
    pub fn new(mesh: &TriMesh, edges: Vec<[usize; 2]>, thickness: f64) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::InvalidInput("pressure constraint needs at least one edge".into()));
        }
        let boundary: BTreeMap<(usize, usize), ()> = mesh.boundary_edges().iter().map(|e| ((e[0], e[1]), ())).collect();
        let reversed = boundary.contains_key(&(edges[0][1], edges[0][0]));
        for (k, e) in edges.iter().enumerate() {
            let key = if reversed { (e[1], e[0]) } else { (e[0], e[1]) };
            if !boundary.contains_key(&key) {
                return Err(Error::InvalidInput(format!("chamber edge {k} {e:?} is not a consistently oriented boundary edge")));
            }
            if k > 0 && edges[k - 1][1] != e[0] {
                return Err(Error::InvalidInput(format!("chamber edges {} and {k} are not contiguous", k - 1)));
            }
        }
        Ok(Self { edges, thickness })
    }

    /// Chamber wall from a mesh boundary loop enclosing a cavity. Mesh
    /// boundary edges face out of the solid, so the loop is reversed to make
    /// the normals face from the cavity into the wall.
    pub fn from_cavity_loop(mesh: &TriMesh, cavity_loop: &[[usize; 2]], thickness: f64) -> Result<Self> {
        let edges = cavity_loop.iter().rev().map(|e| [e[1], e[0]]).collect();
        Self::new(mesh, edges, thickness)
    }

    pub fn is_closed(&self) -> bool {
        self.edges.first().map(|e| e[0]) == self.edges.last().map(|e| e[1])
    }
}

/// Pressure row at configuration `q`: each edge lumps `(ℓ t / 2) n` onto both endpoints.
pub fn pressure_row(c: &PressureConstraint, q: &[f64]) -> SparseRow {
    let mut row = Vec::with_capacity(4 * c.edges.len());
    let half_t = 0.5 * c.thickness;
    for &[a, b] in &c.edges {
        let ex = q[2 * b] - q[2 * a];
        let ey = q[2 * b + 1] - q[2 * a + 1];
        // ℓ n = (e_y, −e_x)
        let (nx, ny) = (half_t * ey, -half_t * ex);
        row.push((2 * a, nx));
        row.push((2 * a + 1, ny));
        row.push((2 * b, nx));
        row.push((2 * b + 1, ny));
    }
    merge(row)
}

/// Adds `−sym(∂(λ·row)/∂q)` of the pressure row to `k`. The row is linear in
/// `q`, so the Jacobian is constant; on a closed loop it is already symmetric.
pub fn add_pressure_stiffness(c: &PressureConstraint, lambda: f64, k: &mut SymBandMatrix) {
    let cc = 0.5 * c.thickness * lambda;
    let mut jac: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &[a, b] in &c.edges {
        for node in [a, b] {
            *jac.entry((2 * node, 2 * b + 1)).or_default() += cc;
            *jac.entry((2 * node, 2 * a + 1)).or_default() -= cc;
            *jac.entry((2 * node + 1, 2 * b)).or_default() -= cc;
            *jac.entry((2 * node + 1, 2 * a)).or_default() += cc;
        }
    }
    for (&(i, j), &v) in &jac {
        if i == j {
            k.add(i, i, -v);
        } else if i > j {
            let vt = jac.get(&(j, i)).copied().unwrap_or(0.0);
            k.add(i, j, -0.5 * (v + vt));
        } else if !jac.contains_key(&(j, i)) {
            k.add(i, j, -0.5 * v);
        }
    }
}

/// A chain of fixed-length segments between consecutive anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthConstraint {
    pub anchors: Vec<BarycentricAnchor>,
    pub rest_lengths: Vec<f64>,
}

impl LengthConstraint {
    /// Builds the chain with rest lengths measured in the rest configuration.
    pub fn from_rest(mesh: &TriMesh, anchors: Vec<BarycentricAnchor>) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::InvalidInput("length constraint needs at least two anchors".into()));
        }
        let rest = mesh.rest_positions();
        let mut rest_lengths = Vec::with_capacity(anchors.len() - 1);
        for (k, w) in anchors.windows(2).enumerate() {
            let l = anchor_position(mesh, &w[1], &rest).distance(anchor_position(mesh, &w[0], &rest));
            if !(l > 1e-9) {
                return Err(Error::DegenerateSegment { index: k, length: l });
            }
            rest_lengths.push(l);
        }
        Ok(Self { anchors, rest_lengths })
    }

    pub fn segment_count(&self) -> usize {
        self.rest_lengths.len()
    }

    pub fn current_lengths(&self, mesh: &TriMesh, q: &[f64]) -> Vec<f64> {
        self.anchors.windows(2).map(|w| anchor_position(mesh, &w[1], q).distance(anchor_position(mesh, &w[0], q))).collect()
    }

    /// Vertex coefficients `c_v` with `p_far − p_near = Σ c_v x_v`.
    fn coefficients(&self, mesh: &TriMesh, k: usize) -> Vec<(usize, f64)> {
        let mut c: BTreeMap<usize, f64> = BTreeMap::new();
        for (v, w) in self.anchors[k].vertices(mesh) {
            *c.entry(v).or_default() -= w;
        }
        for (v, w) in self.anchors[k + 1].vertices(mesh) {
            *c.entry(v).or_default() += w;
        }
        c.into_iter().filter(|&(_, w)| w != 0.0).collect()
    }

    fn direction(&self, mesh: &TriMesh, q: &[f64], k: usize) -> Result<(Point2, f64)> {
        let d = anchor_position(mesh, &self.anchors[k + 1], q) - anchor_position(mesh, &self.anchors[k], q);
        let l = d.norm();
        if !(l > 1e-9) {
            return Err(Error::DegenerateSegment { index: k, length: l });
        }
        Ok((d * (1.0 / l), l))
    }

    pub fn bandwidth(&self, mesh: &TriMesh) -> usize {
        (0..self.segment_count())
            .map(|k| {
                let c = self.coefficients(mesh, k);
                let lo = c.iter().map(|x| x.0).min().unwrap_or(0);
                let hi = c.iter().map(|x| x.0).max().unwrap_or(0);
                2 * (hi - lo) + 1
            })
            .max()
            .unwrap_or(0)
    }
}

/// One row per segment: the gradient of the segment length. Also returns the
/// violations `ℓ_k − L_k`. A positive λ pushes the two anchors apart, so a
/// layer held in tension carries negative λ.
pub fn length_rows(mesh: &TriMesh, c: &LengthConstraint, q: &[f64]) -> Result<(Vec<SparseRow>, Vec<f64>)> {
    let mut rows = Vec::with_capacity(c.segment_count());
    let mut violations = Vec::with_capacity(c.segment_count());
    for k in 0..c.segment_count() {
        let (n, l) = c.direction(mesh, q, k)?;
        let row = c.coefficients(mesh, k).into_iter().flat_map(|(v, w)| [(2 * v, w * n.x), (2 * v + 1, w * n.y)]).collect();
        rows.push(row);
        violations.push(l - c.rest_lengths[k]);
    }
    Ok((rows, violations))
}

/// Adds `−Σ λ_k ∇²ℓ_k` to a stiffness matrix.
pub fn add_length_stiffness(mesh: &TriMesh, c: &LengthConstraint, q: &[f64], lambda: &[f64], k: &mut SymBandMatrix) {
    for s in 0..c.segment_count() {
        let Ok((n, l)) = c.direction(mesh, q, s) else { continue };
        let p = [[(1.0 - n.x * n.x) / l, -n.x * n.y / l], [-n.x * n.y / l, (1.0 - n.y * n.y) / l]];
        let coeffs = c.coefficients(mesh, s);
        for (a, &(u, cu)) in coeffs.iter().enumerate() {
            for &(v, cv) in &coeffs[..=a] {
                for i in 0..2 {
                    for j in 0..2 {
                        let (gi, gj) = (2 * u + i, 2 * v + j);
                        if u == v && j > i {
                            continue;
                        }
                        k.add(gi, gj, -lambda[s] * cu * cv * p[i][j]);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectorKind {
    Position,
    Orientation,
}

/// A point (or its host element's orientation) tracked by the inverse problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEffector {
    pub anchor: BarycentricAnchor,
    pub kind: EffectorKind,
}

impl PoseEffector {
    pub fn width(&self) -> usize {
        match self.kind {
            EffectorKind::Position => 2,
            EffectorKind::Orientation => 1,
        }
    }
}

/// Effector rows: barycentric interpolation for positions, the gradient of
/// the host triangle's corotational angle for orientations.
pub fn effector_rows(body: &ElasticBody, e: &PoseEffector, q: &[f64]) -> Result<Vec<SparseRow>> {
    let mesh = body.mesh();
    match e.kind {
        EffectorKind::Position => {
            let mut rx = Vec::new();
            let mut ry = Vec::new();
            for (v, w) in e.anchor.vertices(mesh) {
                if w != 0.0 {
                    rx.push((2 * v, w));
                    ry.push((2 * v + 1, w));
                }
            }
            Ok(vec![rx, ry])
        }
        EffectorKind::Orientation => Ok(vec![body.element_rotation_gradient(e.anchor.triangle, q)?]),
    }
}

/// Current effector values: `(x, y)` in mm or the host rotation in rad.
pub fn effector_values(body: &ElasticBody, e: &PoseEffector, q: &[f64]) -> Result<Vec<f64>> {
    match e.kind {
        EffectorKind::Position => {
            let p = anchor_position(body.mesh(), &e.anchor, q);
            Ok(vec![p.x, p.y])
        }
        EffectorKind::Orientation => Ok(vec![body.element_rotation(e.anchor.triangle, q)?]),
    }
}

/// Dense effector-by-constraint compliance (mm per unit effort).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceMatrix {
    pub entries: DMatrix<f64>,
}

impl ComplianceMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }
}

fn project_row(mesh: &TriMesh, row: &[(usize, f64)]) -> SparseRow {
    row.iter().copied().filter(|&(i, _)| !mesh.is_fixed_dof(i)).collect()
}

fn solve_columns(mesh: &TriMesh, fac: &BandLdlt, rows: &[SparseRow]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|row| {
            let mut rhs = vec![0.0; fac.dim()];
            row_scatter(&project_row(mesh, row), 1.0, &mut rhs);
            fac.solve(&rhs)
        })
        .collect()
}

/// `W_ef = H_e K⁻¹ H_fᵀ`, one solve per constraint column, in column order.
pub fn compute_compliance(
    mesh: &TriMesh,
    k: &TangentStiffness,
    effector_rows: &[SparseRow],
    constraint_rows: &[SparseRow],
) -> Result<ComplianceMatrix> {
    let fac = k.factor()?;
    compliance_with_factor(mesh, &fac, effector_rows, constraint_rows, &[])
}

/// Compliance with holonomic rows `H_l` held fixed:
/// `W = H_e (K⁻¹ − K⁻¹H_lᵀ S⁻¹ H_l K⁻¹) H_fᵀ` with `S = H_l K⁻¹ H_lᵀ`.
pub fn compliance_with_factor(
    mesh: &TriMesh,
    fac: &BandLdlt,
    effector_rows: &[SparseRow],
    constraint_rows: &[SparseRow],
    holonomic_rows: &[SparseRow],
) -> Result<ComplianceMatrix> {
    let mut cols = solve_columns(mesh, fac, constraint_rows);
    if !holonomic_rows.is_empty() {
        let hl: Vec<SparseRow> = holonomic_rows.iter().map(|r| project_row(mesh, r)).collect();
        let yl = solve_columns(mesh, fac, &hl);
        let m = hl.len();
        let s = DMatrix::from_fn(m, m, |i, j| 0.5 * (row_dot(&hl[i], &yl[j]) + row_dot(&hl[j], &yl[i])));
        let chol = s.cholesky().ok_or_else(|| Error::SingularSystem("holonomic rows are dependent".into()))?;
        for col in cols.iter_mut() {
            let rhs = nalgebra::DVector::from_fn(m, |i, _| row_dot(&hl[i], col));
            let mu = chol.solve(&rhs);
            for (yk, &muk) in yl.iter().zip(mu.iter()) {
                for (c, y) in col.iter_mut().zip(yk) {
                    *c -= muk * y;
                }
            }
        }
    }
    let he: Vec<SparseRow> = effector_rows.iter().map(|r| project_row(mesh, r)).collect();
    let entries = DMatrix::from_fn(he.len(), cols.len(), |i, j| row_dot(&he[i], &cols[j]));
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite compliance".into()));
    }
    Ok(ComplianceMatrix { entries })
}

/// The constraint rows of a device. Row order: pressure (if any), forces,
/// then length segments (holonomic).
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub pressure: Option<PressureConstraint>,
    pub forces: Vec<ForceConstraint>,
    pub length: Option<LengthConstraint>,
    mesh: TriMesh,
}

impl ConstraintSet {
    pub fn new(mesh: &TriMesh, pressure: Option<PressureConstraint>, forces: Vec<ForceConstraint>, length: Option<LengthConstraint>) -> Self {
        Self { pressure, forces, length, mesh: mesh.clone() }
    }

    fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn pressure_count(&self) -> usize {
        usize::from(self.pressure.is_some())
    }

    pub fn applied_count(&self) -> usize {
        self.pressure_count() + self.forces.len()
    }

    pub fn length_count(&self) -> usize {
        self.length.as_ref().map_or(0, |l| l.segment_count())
    }

    /// Index of the first force row.
    pub fn force_offset(&self) -> usize {
        self.pressure_count()
    }

    /// Pressure and force rows at configuration `q`.
    pub fn applied_rows(&self, q: &[f64]) -> Vec<SparseRow> {
        let mesh = self.mesh();
        let mut rows = Vec::with_capacity(self.applied_count());
        if let Some(p) = &self.pressure {
            rows.push(pressure_row(p, q));
        }
        rows.extend(self.forces.iter().map(|f| force_row(mesh, f)));
        rows
    }
}

impl Efforts for ConstraintSet {
    fn row_count(&self) -> usize {
        self.applied_count() + self.length_count()
    }

    fn add_applied_load(&self, q: &[f64], lambda: &[f64], out: &mut [f64]) -> Result<()> {
        for (row, &l) in self.applied_rows(q).iter().zip(lambda) {
            row_scatter(row, l, out);
        }
        Ok(())
    }

    fn holonomic_indices(&self) -> Vec<usize> {
        let start = self.applied_count();
        (start..start + self.length_count()).collect()
    }

    fn holonomic(&self, q: &[f64]) -> Result<(Vec<SparseRow>, Vec<f64>)> {
        match &self.length {
            Some(l) => length_rows(self.mesh(), l, q),
            None => Ok((Vec::new(), Vec::new())),
        }
    }

    fn add_holonomic_stiffness(&self, q: &[f64], lambda: &[f64], k: &mut SymBandMatrix) {
        if let Some(l) = &self.length {
            add_length_stiffness(self.mesh(), l, q, &lambda[self.applied_count()..], k);
        }
    }

    fn add_load_stiffness(&self, _q: &[f64], lambda: &[f64], k: &mut SymBandMatrix) {
        if let Some(p) = &self.pressure {
            add_pressure_stiffness(p, lambda[0], k);
        }
    }

    fn holonomic_bandwidth(&self) -> usize {
        self.length.as_ref().map_or(0, |l| l.bandwidth(self.mesh()))
    }
}

fn merge(row: SparseRow) -> SparseRow {
    let mut m: BTreeMap<usize, f64> = BTreeMap::new();
    for (i, v) in row {
        *m.entry(i).or_default() += v;
    }
    m.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Material;
    use crate::geometry::barycentric_coords;

    fn strip() -> TriMesh {
        TriMesh::grid(20.0, 2.0, 10, 2, |_, _| true).unwrap()
    }

    fn vertex_anchor(mesh: &TriMesh, v: usize) -> BarycentricAnchor {
        barycentric_coords(mesh, mesh.vertices()[v]).unwrap()
    }

    #[test]
    fn force_row_vertex_and_split() {
        let m = strip();
        let a = BarycentricAnchor { triangle: 0, weights: [1.0, 0.0, 0.0] };
        let v0 = m.triangles()[0][0];
        let row = force_row(&m, &ForceConstraint::new(a, Point2::new(0.0, 1.0)).unwrap());
        assert_eq!(row, vec![(2 * v0, 0.0), (2 * v0 + 1, 1.0)]);
        let half = BarycentricAnchor { triangle: 0, weights: [0.5, 0.5, 0.0] };
        let t = m.triangles()[0];
        let row = force_row(&m, &ForceConstraint::new(half, Point2::new(1.0, 0.0)).unwrap());
        let x_entries: Vec<f64> = row.iter().filter(|(i, _)| i % 2 == 0).map(|x| x.1).collect();
        assert_eq!(x_entries, vec![0.5, 0.5]);
        assert!(row.iter().any(|&(i, v)| i == 2 * t[1] && v == 0.5));
        assert!(ForceConstraint::new(half, Point2::new(1.0, 1.0)).is_err());
    }

    #[test]
    fn force_row_virtual_work() {
        let m = strip();
        let p = Point2::new(7.3, 1.2);
        let c = ForceConstraint::new(barycentric_coords(&m, p).unwrap(), Point2::new(0.6, 0.8)).unwrap();
        let row = force_row(&m, &c);
        let q0 = m.rest_positions();
        let dq: Vec<f64> = (0..q0.len()).map(|i| ((i * 37 % 11) as f64 - 5.0) * 1e-2).collect();
        let q1: Vec<f64> = q0.iter().zip(&dq).map(|(a, b)| a + b).collect();
        let disp = anchor_position(&m, &c.anchor, &q1) - anchor_position(&m, &c.anchor, &q0);
        assert!((row_dot(&row, &dq) - c.direction.dot(disp)).abs() < 1e-14);
    }

    #[test]
    fn single_edge_pressure_lumping() {
        let m = TriMesh::new(vec![Point2::new(0.0, 0.0), Point2::new(2.0, 0.0), Point2::new(0.0, 2.0)], vec![[0, 1, 2]], vec![2]).unwrap();
        // edge 0 → 1 along +x: outward normal of the solid is (0, −1)
        let c = PressureConstraint::new(&m, vec![[0, 1]], 1.0).unwrap();
        let row = pressure_row(&c, &m.rest_positions());
        assert_eq!(row, vec![(0, 0.0), (1, -1.0), (2, 0.0), (3, -1.0)]);
        let mut load = vec![0.0; 6];
        row_scatter(&row, 2.0, &mut load);
        let mut single = vec![0.0; 6];
        row_scatter(&row, 1.0, &mut single);
        for (a, b) in load.iter().zip(&single) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn closed_chamber_has_zero_net_force() {
        let m = TriMesh::grid(12.0, 6.0, 6, 3, |c, r| !(2..4).contains(&c) || r != 1).unwrap();
        let loops = m.boundary_loops().unwrap();
        let cavity = loops.iter().min_by_key(|l| l.len()).unwrap();
        let c = PressureConstraint::from_cavity_loop(&m, cavity, 3.0).unwrap();
        assert!(c.is_closed());
        let mut q = m.rest_positions();
        for (i, v) in q.iter_mut().enumerate() {
            *v += 0.05 * ((i as f64) * 0.7).sin();
        }
        let mut f = vec![0.0; q.len()];
        row_scatter(&pressure_row(&c, &q), 0.0012, &mut f);
        let fx: f64 = f.iter().step_by(2).sum();
        let fy: f64 = f.iter().skip(1).step_by(2).sum();
        assert!(fx.abs() < 1e-9 && fy.abs() < 1e-9);
        // the wall is pushed away from the cavity centre
        let centre = Point2::new(6.0, 3.0);
        let work: f64 = (0..m.vertex_count()).map(|v| Point2::new(f[2 * v], f[2 * v + 1]).dot(m.vertices()[v] - centre)).sum();
        assert!(work > 0.0);
    }

    #[test]
    fn pressure_edges_must_be_contiguous_boundary() {
        let m = strip();
        let b = m.boundary_edges();
        assert!(PressureConstraint::new(&m, vec![b[0], b[3]], 1.0).is_err());
        assert!(PressureConstraint::new(&m, vec![[0, 7]], 1.0).is_err());
    }

    #[test]
    fn length_rows_gradient_and_invariance() {
        let m = strip();
        let anchors: Vec<_> = [0usize, 3, 6].iter().map(|&v| vertex_anchor(&m, v)).collect();
        let c = LengthConstraint::from_rest(&m, anchors).unwrap();
        let q0 = m.rest_positions();
        let (rows, g) = length_rows(&m, &c, &q0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        // vertices 0 and 3 lie on y = 0 at x = 0 and x = 2
        let mut r0 = rows[0].clone();
        r0.retain(|x| x.1 != 0.0);
        assert_eq!(r0, vec![(0, -1.0), (6, 1.0)]);
        let shift: Vec<f64> = (0..q0.len()).map(|i| if i % 2 == 0 { 0.3 } else { -0.7 }).collect();
        for row in &rows {
            assert!(row_dot(row, &shift).abs() < 1e-14);
        }
        let dq: Vec<f64> = (0..q0.len()).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.1).collect();
        let h = 1e-6;
        for (k, row) in rows.iter().enumerate() {
            let plus: Vec<f64> = q0.iter().zip(&dq).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = q0.iter().zip(&dq).map(|(a, b)| a - h * b).collect();
            let fd = (c.current_lengths(&m, &plus)[k] - c.current_lengths(&m, &minus)[k]) / (2.0 * h);
            assert!((fd - row_dot(row, &dq)).abs() < 1e-8);
        }
    }

    #[test]
    fn orientation_effector_rows() {
        let m = strip();
        let body = ElasticBody::new(m.clone(), Material::new(1e6, 0.3, 1.0).unwrap()).unwrap();
        let e = PoseEffector { anchor: barycentric_coords(&m, Point2::new(9.1, 0.7)).unwrap(), kind: EffectorKind::Orientation };
        let q0 = m.rest_positions();
        let row = &effector_rows(&body, &e, &q0).unwrap()[0];
        let theta: f64 = 1e-4;
        let centre = Point2::new(-13.0, 4.0);
        let (s, c) = theta.sin_cos();
        let dq: Vec<f64> = q0
            .chunks(2)
            .flat_map(|p| {
                let d = Point2::new(p[0], p[1]) - centre;
                let r = Point2::new(c * d.x - s * d.y, s * d.x + c * d.y) + centre;
                [r.x - p[0], r.y - p[1]]
            })
            .collect();
        assert!((row_dot(row, &dq) - theta).abs() < 1e-6 * theta.max(1e-6));
        let shift: Vec<f64> = (0..q0.len()).map(|i| if i % 2 == 0 { 1.5 } else { 0.2 }).collect();
        assert!(row_dot(row, &shift).abs() < 1e-14);
        let v = m.triangles()[0][1];
        let pe = PoseEffector { anchor: vertex_anchor(&m, v), kind: EffectorKind::Position };
        let rows = effector_rows(&body, &pe, &q0).unwrap();
        assert!(rows[0].iter().any(|&(i, w)| i == 2 * v && w == 1.0));
        assert!(rows[1].iter().any(|&(i, w)| i == 2 * v + 1 && w == 1.0));
        assert_eq!(rows[0].iter().filter(|x| x.1 != 0.0).count(), 1);
    }
}
