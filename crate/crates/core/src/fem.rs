//! Corotational constant-strain-triangle elasticity in plane strain and the
//! quasi-static equilibrium step.
//!
//! Units: positions in mm, forces in N. `Material::young_modulus` is stored
//! in Pa and converted to N/mm² (MPa) when element matrices are built.
//!
//! Each element extracts its rotation `R` from the polar decomposition of the
//! 2×2 deformation gradient, evaluates the linear element in the unrotated
//! frame and rotates the result back:
//!
//! ```text
//! u = Rᵀ x − X,   f = R K_e u,   W = ½ uᵀ K_e u
//! ```
//!
//! For an isotropic material the polar rotation makes `∂W/∂θ` vanish, so `f`
//! is exactly the gradient of `W` and the consistent tangent is the symmetric
//! Hessian `R K_e Rᵀ − W_θθ ∇θ ∇θᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{signed_area, Point2, TriMesh};
use crate::linalg::{BandLdlt, SymBandMatrix};

/// Pa → N/mm².
pub const PA_TO_N_PER_MM2: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Pa.
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    /// Out-of-plane thickness, mm.
    pub thickness: f64,
}

impl Material {
    pub fn new(young_modulus: f64, poisson_ratio: f64, thickness: f64) -> Result<Self> {
        let m = Self { young_modulus, poisson_ratio, thickness };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young_modulus > 0.0 && self.young_modulus.is_finite()) {
            return Err(Error::InvalidInput(format!("young modulus must be positive, got {}", self.young_modulus)));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(Error::InvalidInput(format!("poisson ratio must lie in [0, 0.5), got {}", self.poisson_ratio)));
        }
        if !(self.thickness > 0.0 && self.thickness.is_finite()) {
            return Err(Error::InvalidInput(format!("thickness must be positive, got {}", self.thickness)));
        }
        Ok(())
    }

    /// Young's modulus in N/mm².
    pub fn modulus(&self) -> f64 {
        self.young_modulus * PA_TO_N_PER_MM2
    }

    /// Plane-strain constitutive matrix in Voigt order `[xx, yy, xy (engineering)]`, N/mm².
    pub fn plane_strain_matrix(&self) -> [[f64; 3]; 3] {
        let e = self.modulus();
        let nu = self.poisson_ratio;
        let f = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
        [[f * (1.0 - nu), f * nu, 0.0], [f * nu, f * (1.0 - nu), 0.0], [0.0, 0.0, f * (1.0 - 2.0 * nu) / 2.0]]
    }
}

pub type Mat6 = [[f64; 6]; 6];

/// Shape-function gradients of a CST in its rest configuration, plus its area.
fn shape_gradients(rest: [Point2; 3]) -> Result<([Point2; 3], f64)> {
    let area = signed_area(rest[0], rest[1], rest[2]);
    if !(area > 1e-12) {
        return Err(Error::DegenerateElement { element: usize::MAX, area });
    }
    let [a, b, c] = rest;
    let inv2a = 1.0 / (2.0 * area);
    let grads = [Point2::new(b.y - c.y, c.x - b.x) * inv2a, Point2::new(c.y - a.y, a.x - c.x) * inv2a, Point2::new(a.y - b.y, b.x - a.x) * inv2a];
    Ok((grads, area))
}

/// Plane-strain CST stiffness `t·A·BᵀCB` for DOF order `[x0, y0, x1, y1, x2, y2]`.
pub fn element_stiffness(rest: [Point2; 3], material: &Material) -> Result<Mat6> {
    let (g, area) = shape_gradients(rest)?;
    let mut bmat = [[0.0; 6]; 3];
    for i in 0..3 {
        bmat[0][2 * i] = g[i].x;
        bmat[1][2 * i + 1] = g[i].y;
        bmat[2][2 * i] = g[i].y;
        bmat[2][2 * i + 1] = g[i].x;
    }
    let c = material.plane_strain_matrix();
    let scale = area * material.thickness;
    let mut k = [[0.0; 6]; 6];
    for (m, row) in k.iter_mut().enumerate() {
        for (n, v) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in 0..3 {
                for q in 0..3 {
                    s += bmat[p][m] * c[p][q] * bmat[q][n];
                }
            }
            *v = s * scale;
        }
    }
    Ok(k)
}

#[derive(Debug, Clone)]
struct Element {
    vertices: [usize; 3],
    rest: [f64; 6],
    grads: [Point2; 3],
    stiffness: Mat6,
}

/// Per-element kinematics at a configuration.
#[derive(Debug, Clone, Copy)]
struct Corotation {
    cos: f64,
    sin: f64,
    angle: f64,
    /// ∂θ/∂x over the six element DOFs.
    angle_gradient: [f64; 6],
}

/// A mesh with its material and precomputed rest-state element data.
#[derive(Debug, Clone)]
pub struct ElasticBody {
    mesh: TriMesh,
    material: Material,
    elements: Vec<Element>,
}

impl ElasticBody {
    pub fn new(mesh: TriMesh, material: Material) -> Result<Self> {
        material.validate()?;
        let mut elements = Vec::with_capacity(mesh.triangles().len());
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let rest_pts = [mesh.vertices()[tri[0]], mesh.vertices()[tri[1]], mesh.vertices()[tri[2]]];
            let (grads, _) = shape_gradients(rest_pts).map_err(|e| match e {
                Error::DegenerateElement { area, .. } => Error::DegenerateElement { element: t, area },
                other => other,
            })?;
            let stiffness = element_stiffness(rest_pts, &material)?;
            let rest = [rest_pts[0].x, rest_pts[0].y, rest_pts[1].x, rest_pts[1].y, rest_pts[2].x, rest_pts[2].y];
            elements.push(Element { vertices: *tri, rest, grads, stiffness });
        }
        Ok(Self { mesh, material, elements })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    pub fn dof_count(&self) -> usize {
        self.mesh.dof_count()
    }

    /// Same mesh with a different material.
    pub fn with_material(&self, material: Material) -> Result<Self> {
        Self::new(self.mesh.clone(), material)
    }

    fn element_dofs(&self, e: &Element, q: &[f64]) -> [f64; 6] {
        let [a, b, c] = e.vertices;
        [q[2 * a], q[2 * a + 1], q[2 * b], q[2 * b + 1], q[2 * c], q[2 * c + 1]]
    }

    fn corotation(&self, index: usize, x: &[f64; 6]) -> Result<Corotation> {
        let e = &self.elements[index];
        let pts = [Point2::new(x[0], x[1]), Point2::new(x[2], x[3]), Point2::new(x[4], x[5])];
        let area = signed_area(pts[0], pts[1], pts[2]);
        if !(area > 0.0) {
            return Err(Error::DegenerateElement { element: index, area });
        }
        // F[j][k] = Σ_i x_i^j ∂N_i/∂X_k
        let mut f = [[0.0; 2]; 2];
        for (i, p) in pts.iter().enumerate() {
            let g = e.grads[i];
            f[0][0] += p.x * g.x;
            f[0][1] += p.x * g.y;
            f[1][0] += p.y * g.x;
            f[1][1] += p.y * g.y;
        }
        let a = f[0][0] + f[1][1];
        let b = f[1][0] - f[0][1];
        let r2 = a * a + b * b;
        let angle = b.atan2(a);
        let (sin, cos) = angle.sin_cos();
        let d00 = -b / r2;
        let d11 = -b / r2;
        let d10 = a / r2;
        let d01 = -a / r2;
        let mut angle_gradient = [0.0; 6];
        for i in 0..3 {
            let g = e.grads[i];
            angle_gradient[2 * i] = d00 * g.x + d01 * g.y;
            angle_gradient[2 * i + 1] = d10 * g.x + d11 * g.y;
        }
        Ok(Corotation { cos, sin, angle, angle_gradient })
    }

    /// `Rᵀ x − X` in the element's unrotated frame.
    fn local_displacement(e: &Element, rot: &Corotation, x: &[f64; 6]) -> [f64; 6] {
        let mut u = [0.0; 6];
        for i in 0..3 {
            let (px, py) = (x[2 * i], x[2 * i + 1]);
            u[2 * i] = rot.cos * px + rot.sin * py - e.rest[2 * i];
            u[2 * i + 1] = -rot.sin * px + rot.cos * py - e.rest[2 * i + 1];
        }
        u
    }

    /// Rotation angle (rad) of triangle `t` relative to its rest orientation.
    pub fn element_rotation(&self, t: usize, q: &[f64]) -> Result<f64> {
        let x = self.element_dofs(&self.elements[t], q);
        Ok(self.corotation(t, &x)?.angle)
    }

    /// Gradient of the element rotation angle, as `(global dof, value)` pairs.
    pub fn element_rotation_gradient(&self, t: usize, q: &[f64]) -> Result<Vec<(usize, f64)>> {
        let e = &self.elements[t];
        let x = self.element_dofs(e, q);
        let rot = self.corotation(t, &x)?;
        Ok((0..6).map(|m| (2 * e.vertices[m / 2] + m % 2, rot.angle_gradient[m])).collect())
    }

    /// Total elastic energy (N·mm).
    pub fn energy(&self, q: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (t, e) in self.elements.iter().enumerate() {
            let x = self.element_dofs(e, q);
            let rot = self.corotation(t, &x)?;
            let u = Self::local_displacement(e, &rot, &x);
            let mut w = 0.0;
            for m in 0..6 {
                for n in 0..6 {
                    w += u[m] * e.stiffness[m][n] * u[n];
                }
            }
            total += 0.5 * w;
        }
        Ok(total)
    }

    /// Internal elastic forces `∂W/∂q` (N). Fixed DOFs are not projected out.
    pub fn internal_forces(&self, q: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; q.len()];
        for (t, e) in self.elements.iter().enumerate() {
            let x = self.element_dofs(e, q);
            let rot = self.corotation(t, &x)?;
            let u = Self::local_displacement(e, &rot, &x);
            let fl = mat_vec(&e.stiffness, &u);
            for i in 0..3 {
                let v = e.vertices[i];
                out[2 * v] += rot.cos * fl[2 * i] - rot.sin * fl[2 * i + 1];
                out[2 * v + 1] += rot.sin * fl[2 * i] + rot.cos * fl[2 * i + 1];
            }
        }
        Ok(out)
    }

    /// Consistent element tangent `∂f/∂x` computed as `R K Rᵀ + (∂f/∂θ) ∇θᵀ`,
    /// before any symmetrization.
    pub fn element_tangent(&self, t: usize, q: &[f64]) -> Result<Mat6> {
        let e = &self.elements[t];
        let x = self.element_dofs(e, q);
        let rot = self.corotation(t, &x)?;
        let u = Self::local_displacement(e, &rot, &x);
        let (c, s) = (rot.cos, rot.sin);
        // R K Rᵀ with R block-diagonal
        let rotate = |v: [f64; 2]| [c * v[0] - s * v[1], s * v[0] + c * v[1]];
        let mut k = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                let blk =
                    [[e.stiffness[2 * i][2 * j], e.stiffness[2 * i][2 * j + 1]], [e.stiffness[2 * i + 1][2 * j], e.stiffness[2 * i + 1][2 * j + 1]]];
                // R * blk * Rᵀ
                let rb = [rotate([blk[0][0], blk[1][0]]), rotate([blk[0][1], blk[1][1]])];
                let col0 = [rb[0][0], rb[0][1]];
                let col1 = [rb[1][0], rb[1][1]];
                for r in 0..2 {
                    // (R blk) Rᵀ: row r = [col0[r], col1[r]] · Rᵀ
                    k[2 * i + r][2 * j] = col0[r] * c - col1[r] * s;
                    k[2 * i + r][2 * j + 1] = col0[r] * s + col1[r] * c;
                }
            }
        }
        // ∂f/∂θ = dR K u + R K (dRᵀ x)
        let ku = mat_vec(&e.stiffness, &u);
        let mut drt_x = [0.0; 6];
        for i in 0..3 {
            let (px, py) = (x[2 * i], x[2 * i + 1]);
            drt_x[2 * i] = -s * px + c * py;
            drt_x[2 * i + 1] = -c * px - s * py;
        }
        let k_drt_x = mat_vec(&e.stiffness, &drt_x);
        let mut df = [0.0; 6];
        for i in 0..3 {
            let (a, b) = (ku[2 * i], ku[2 * i + 1]);
            let (p, r) = (k_drt_x[2 * i], k_drt_x[2 * i + 1]);
            df[2 * i] = -s * a - c * b + c * p - s * r;
            df[2 * i + 1] = c * a - s * b + s * p + c * r;
        }
        for m in 0..6 {
            for n in 0..6 {
                k[m][n] += df[m] * rot.angle_gradient[n];
            }
        }
        Ok(k)
    }

    /// Unprojected tangent stiffness with room for `extra_bandwidth` couplings.
    pub fn assemble_raw(&self, q: &[f64], half_bandwidth: usize) -> Result<SymBandMatrix> {
        let mut k = SymBandMatrix::zeros(q.len(), half_bandwidth.max(self.mesh.half_bandwidth()));
        for (t, e) in self.elements.iter().enumerate() {
            let ke = self.element_tangent(t, q)?;
            for m in 0..6 {
                let gm = 2 * e.vertices[m / 2] + m % 2;
                for n in 0..=m {
                    let gn = 2 * e.vertices[n / 2] + n % 2;
                    k.add(gm, gn, 0.5 * (ke[m][n] + ke[n][m]));
                }
            }
        }
        Ok(k)
    }

    /// Tangent stiffness with fixed-DOF rows and columns replaced by the identity.
    pub fn tangent_stiffness(&self, q: &[f64]) -> Result<TangentStiffness> {
        let raw = self.assemble_raw(q, 0)?;
        Ok(TangentStiffness::project(raw, &self.mesh))
    }
}

fn mat_vec(k: &Mat6, u: &[f64; 6]) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (m, row) in k.iter().enumerate() {
        out[m] = row.iter().zip(u).map(|(a, b)| a * b).sum();
    }
    out
}

/// Boundary-projected tangent stiffness (N/mm).
#[derive(Debug, Clone)]
pub struct TangentStiffness {
    pub matrix: SymBandMatrix,
}

impl TangentStiffness {
    pub fn project(mut matrix: SymBandMatrix, mesh: &TriMesh) -> Self {
        for &v in mesh.fixed_vertices() {
            matrix.set_identity_row(2 * v);
            matrix.set_identity_row(2 * v + 1);
        }
        Self { matrix }
    }

    pub fn dimension(&self) -> usize {
        self.matrix.dim()
    }

    pub fn factor(&self) -> Result<BandLdlt> {
        self.matrix.factor()
    }
}

/// Free functions mirroring the operation list; they build the element cache on each call.
pub fn internal_forces(mesh: &TriMesh, material: &Material, q: &[f64]) -> Result<Vec<f64>> {
    ElasticBody::new(mesh.clone(), *material)?.internal_forces(q)
}

pub fn assemble_tangent_stiffness(mesh: &TriMesh, material: &Material, q: &[f64]) -> Result<TangentStiffness> {
    ElasticBody::new(mesh.clone(), *material)?.tangent_stiffness(q)
}

/// Known external forces per DOF (N).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadVector {
    pub entries: Vec<f64>,
}

impl LoadVector {
    pub fn zeros(dofs: usize) -> Self {
        Self { entries: vec![0.0; dofs] }
    }

    /// Constant body force density (N/mm³) lumped equally to element vertices.
    pub fn body_force(mesh: &TriMesh, material: &Material, density: Point2) -> Self {
        let mut entries = vec![0.0; mesh.dof_count()];
        for tri in mesh.triangles() {
            let [a, b, c] = [mesh.vertices()[tri[0]], mesh.vertices()[tri[1]], mesh.vertices()[tri[2]]];
            let share = signed_area(a, b, c) * material.thickness / 3.0;
            for &v in tri {
                entries[2 * v] += density.x * share;
                entries[2 * v + 1] += density.y * share;
            }
        }
        let mut load = Self { entries };
        load.project(mesh);
        load
    }

    pub fn project(&mut self, mesh: &TriMesh) {
        for &v in mesh.fixed_vertices() {
            self.entries[2 * v] = 0.0;
            self.entries[2 * v + 1] = 0.0;
        }
    }
}

/// Nodal configuration, the configuration before the last step, and efforts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub q: Vec<f64>,
    pub q_prev: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl SystemState {
    pub fn at_rest(mesh: &TriMesh, effort_rows: usize) -> Self {
        let q = mesh.rest_positions();
        Self { q_prev: q.clone(), q, lambda: vec![0.0; effort_rows] }
    }
}

/// A sparse constraint row `Σ value · q[dof]`.
pub type SparseRow = Vec<(usize, f64)>;

pub fn row_dot(row: &[(usize, f64)], v: &[f64]) -> f64 {
    row.iter().map(|&(i, a)| a * v[i]).sum()
}

pub fn row_scatter(row: &[(usize, f64)], scale: f64, out: &mut [f64]) {
    for &(i, a) in row {
        out[i] += a * scale;
    }
}

/// Source of constraint efforts `Hᵀλ` for the equilibrium solve.
///
/// Rows are indexed consistently with `SystemState::lambda`. Applied rows
/// take their λ from the state; holonomic rows (`g(q) = 0`) have their λ
/// solved for during the step.
pub trait Efforts {
    fn row_count(&self) -> usize;

    /// Adds `Hᵀλ` of all applied (non-holonomic) rows at configuration `q`.
    fn add_applied_load(&self, q: &[f64], lambda: &[f64], out: &mut [f64]) -> Result<()>;

    /// Indices (into λ) of holonomic rows.
    fn holonomic_indices(&self) -> Vec<usize> {
        Vec::new()
    }

    /// Jacobian rows and violations `g(q)` of the holonomic rows.
    fn holonomic(&self, _q: &[f64]) -> Result<(Vec<SparseRow>, Vec<f64>)> {
        Ok((Vec::new(), Vec::new()))
    }

    /// Adds `−Σ λ_k ∇²g_k` of the holonomic rows to `k`.
    fn add_holonomic_stiffness(&self, _q: &[f64], _lambda: &[f64], _k: &mut SymBandMatrix) {}

    /// Adds `−∂(Hᵀλ)/∂q` (symmetrized) of configuration-dependent applied rows.
    fn add_load_stiffness(&self, _q: &[f64], _lambda: &[f64], _k: &mut SymBandMatrix) {}

    /// Half bandwidth needed by couplings introduced in `add_holonomic_stiffness`.
    fn holonomic_bandwidth(&self) -> usize {
        0
    }
}

/// Constant rows `H` with efforts taken from the state.
#[derive(Debug, Clone, Default)]
pub struct FixedEfforts {
    pub rows: Vec<SparseRow>,
}

impl Efforts for FixedEfforts {
    fn row_count(&self) -> usize {
        self.rows.len()
    }

    fn add_applied_load(&self, _q: &[f64], lambda: &[f64], out: &mut [f64]) -> Result<()> {
        for (row, &l) in self.rows.iter().zip(lambda) {
            row_scatter(row, l, out);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    /// Max-norm force residual (N).
    pub tolerance: f64,
    /// Max-norm holonomic violation (mm).
    pub holonomic_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, holonomic_tolerance: 1e-10, max_iterations: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub iterations: usize,
    pub residual: f64,
    pub violation: f64,
}

/// Newton iteration on `0 = P + Hᵀλ − F(q)` with holonomic rows enforced
/// through a Schur complement in constraint space. The tangent is refreshed
/// every iteration; fixed DOFs are never written.
pub fn quasi_static_step(
    body: &ElasticBody,
    state: &SystemState,
    loads: &LoadVector,
    efforts: &dyn Efforts,
    options: &StepOptions,
) -> Result<(SystemState, StepReport)> {
    let mesh = body.mesh();
    let n = body.dof_count();
    if state.q.len() != n || loads.entries.len() != n {
        return Err(Error::ShapeMismatch { expected: n, got: state.q.len().min(loads.entries.len()) });
    }
    if state.lambda.len() != efforts.row_count() {
        return Err(Error::ShapeMismatch { expected: efforts.row_count(), got: state.lambda.len() });
    }
    let free: Vec<bool> = (0..n).map(|i| !mesh.is_fixed_dof(i)).collect();
    let hidx = efforts.holonomic_indices();
    let mut q = state.q.clone();
    let mut lambda = state.lambda.clone();
    let mut residual = f64::INFINITY;
    let mut violation = 0.0;

    for iteration in 0..=options.max_iterations {
        let f = body.internal_forces(&q)?;
        let mut r: Vec<f64> = loads.entries.iter().zip(&f).map(|(p, fi)| p - fi).collect();
        efforts.add_applied_load(&q, &lambda, &mut r)?;
        let (rows, g) = efforts.holonomic(&q)?;
        for (row, &k) in rows.iter().zip(&hidx) {
            row_scatter(row, lambda[k], &mut r);
        }
        for (ri, &fr) in r.iter_mut().zip(&free) {
            if !fr {
                *ri = 0.0;
            }
        }
        residual = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        violation = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !residual.is_finite() {
            break;
        }
        if residual < options.tolerance && violation < options.holonomic_tolerance {
            let next = SystemState { q, q_prev: state.q.clone(), lambda };
            return Ok((next, StepReport { iterations: iteration, residual, violation }));
        }
        if iteration == options.max_iterations {
            break;
        }

        let mut k = body.assemble_raw(&q, efforts.holonomic_bandwidth())?;
        efforts.add_holonomic_stiffness(&q, &lambda, &mut k);
        efforts.add_load_stiffness(&q, &lambda, &mut k);
        let fac = TangentStiffness::project(k, mesh).factor()?;
        let mut dq = fac.solve(&r);
        if !rows.is_empty() {
            let projected: Vec<SparseRow> = rows.iter().map(|row| row.iter().copied().filter(|&(i, _)| free[i]).collect()).collect();
            let (dl, cols) = solve_holonomic(&fac, &projected, &g, &dq, n)?;
            for (c, &d) in cols.iter().zip(dl.iter()) {
                for i in 0..n {
                    dq[i] += c[i] * d;
                }
            }
            for (&k, d) in hidx.iter().zip(dl.iter()) {
                lambda[k] += d;
            }
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = q.iter().zip(&dq).zip(&free).map(|((x, d), &fr)| if fr { x + alpha * d } else { *x }).collect();
            if body.internal_forces(&trial).is_ok() {
                q = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // surface the inverted element
            body.internal_forces(&q.iter().zip(&dq).map(|(x, d)| x + d).collect::<Vec<_>>())?;
        }
    }
    Err(Error::NonConvergence { iterations: options.max_iterations, residual: residual.max(violation) })
}

/// Solves `S μ = −g − H a` with `S = H K⁻¹ Hᵀ`; returns `μ` and the columns `K⁻¹ Hᵀ`.
fn solve_holonomic(fac: &BandLdlt, rows: &[SparseRow], g: &[f64], a: &[f64], n: usize) -> Result<(DVector<f64>, Vec<Vec<f64>>)> {
    let m = rows.len();
    let cols: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| {
            let mut rhs = vec![0.0; n];
            row_scatter(row, 1.0, &mut rhs);
            fac.solve(&rhs)
        })
        .collect();
    let s = DMatrix::from_fn(m, m, |i, j| 0.5 * (row_dot(&rows[i], &cols[j]) + row_dot(&rows[j], &cols[i])));
    let rhs = DVector::from_fn(m, |i, _| -g[i] - row_dot(&rows[i], a));
    let mu = match s.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => s.lu().solve(&rhs).ok_or_else(|| Error::SingularSystem("holonomic constraint rows are dependent".into()))?,
    };
    Ok((mu, cols))
}
