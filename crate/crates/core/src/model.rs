//! A soft body with its constraint rows and pose effectors: forward solves
//! under prescribed efforts, and the inverse step that estimates unknown
//! forces from observed effector motion.

use crate::constraints::{compliance_with_factor, effector_rows, effector_values, ConstraintSet, EffectorKind, PoseEffector};
use crate::error::{Error, Result};
use crate::fem::{quasi_static_step, Efforts, ElasticBody, LoadVector, SparseRow, StepOptions, StepReport, SystemState, TangentStiffness};
use crate::geometry::Point2;
use crate::inverse::{solve_qp, QpProblem, QpSolution, DEFAULT_RIDGE};

use nalgebra::DVector;

pub const DEFAULT_FORCE_BOUND: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    /// Max QP + forward-solve rounds per call.
    pub max_rounds: usize,
    /// Stop once the effort update falls below `tolerance · (1 + |λ|∞)`.
    pub tolerance: f64,
    pub ridge: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { max_rounds: 20, tolerance: 1e-9, ridge: DEFAULT_RIDGE }
    }
}

#[derive(Debug, Clone)]
pub struct Estimate {
    /// Change of each force row over this call.
    pub delta_force: Vec<f64>,
    /// QP of the last round.
    pub qp: QpSolution,
    pub rounds: usize,
    pub converged: bool,
    pub step: StepReport,
}

#[derive(Debug, Clone)]
pub struct SoftBody {
    body: ElasticBody,
    constraints: ConstraintSet,
    effectors: Vec<PoseEffector>,
    loads: LoadVector,
    state: SystemState,
    force_bounds: Vec<(f64, f64)>,
    orientation_scale: f64,
    pub step_options: StepOptions,
    pub estimate_options: EstimateOptions,
    goal: Option<Vec<f64>>,
}

impl SoftBody {
    pub fn new(body: ElasticBody, constraints: ConstraintSet, effectors: Vec<PoseEffector>) -> Result<Self> {
        let ntri = body.mesh().triangles().len();
        if let Some(e) = effectors.iter().find(|e| e.anchor.triangle >= ntri) {
            return Err(Error::InvalidInput(format!("effector anchored to missing triangle {}", e.anchor.triangle)));
        }
        let state = SystemState::at_rest(body.mesh(), constraints.row_count());
        let loads = LoadVector::zeros(body.dof_count());
        let force_bounds = vec![(-DEFAULT_FORCE_BOUND, DEFAULT_FORCE_BOUND); constraints.forces.len()];
        Ok(Self {
            body,
            constraints,
            effectors,
            loads,
            state,
            force_bounds,
            orientation_scale: 1.0,
            step_options: StepOptions::default(),
            estimate_options: EstimateOptions::default(),
            goal: None,
        })
    }

    pub fn body(&self) -> &ElasticBody {
        &self.body
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn effectors(&self) -> &[PoseEffector] {
        &self.effectors
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn loads(&self) -> &LoadVector {
        &self.loads
    }

    pub fn set_loads(&mut self, mut loads: LoadVector) -> Result<()> {
        if loads.entries.len() != self.body.dof_count() {
            return Err(Error::ShapeMismatch { expected: self.body.dof_count(), got: loads.entries.len() });
        }
        loads.project(self.body.mesh());
        self.loads = loads;
        Ok(())
    }

    pub fn force_bounds(&self) -> &[(f64, f64)] {
        &self.force_bounds
    }

    pub fn set_force_bounds(&mut self, bounds: Vec<(f64, f64)>) -> Result<()> {
        if bounds.len() != self.constraints.forces.len() {
            return Err(Error::ShapeMismatch { expected: self.constraints.forces.len(), got: bounds.len() });
        }
        if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo <= hi) || *lo > 0.0 || *hi < 0.0) {
            return Err(Error::InvalidInput(format!("force bounds [{lo}, {hi}] must contain 0")));
        }
        self.force_bounds = bounds;
        Ok(())
    }

    /// Weight applied to orientation rows (mm per rad) in the inverse objective.
    pub fn set_orientation_scale(&mut self, scale: f64) -> Result<()> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput("orientation scale must be positive".into()));
        }
        self.orientation_scale = scale;
        Ok(())
    }

    /// Same device with a different material, back at rest.
    pub fn with_material(&self, material: crate::fem::Material) -> Result<Self> {
        let mut m = self.clone();
        m.body = self.body.with_material(material)?;
        m.reset();
        Ok(m)
    }

    pub fn reset(&mut self) {
        self.state = SystemState::at_rest(self.body.mesh(), self.constraints.row_count());
        self.goal = None;
    }

    pub fn effector_width(&self) -> usize {
        self.effectors.iter().map(|e| e.width()).sum()
    }

    /// Current effector values, concatenated in registration order.
    pub fn effector_values(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.effector_width());
        for e in &self.effectors {
            out.extend(effector_values(&self.body, e, &self.state.q)?);
        }
        Ok(out)
    }

    /// Pressure and force efforts currently applied.
    pub fn applied_efforts(&self) -> &[f64] {
        &self.state.lambda[..self.constraints.applied_count()]
    }

    /// Tension of each length segment.
    pub fn length_efforts(&self) -> &[f64] {
        &self.state.lambda[self.constraints.applied_count()..]
    }

    pub fn positions(&self, anchors: &crate::geometry::Centerline) -> Vec<Point2> {
        anchors.positions(self.body.mesh(), &self.state.q)
    }

    /// Equilibrium under the given pressure and force efforts. The state is
    /// left untouched on failure.
    pub fn solve_forward(&mut self, applied: &[f64]) -> Result<StepReport> {
        let na = self.constraints.applied_count();
        if applied.len() != na {
            return Err(Error::ShapeMismatch { expected: na, got: applied.len() });
        }
        let mut trial = self.state.clone();
        trial.lambda[..na].copy_from_slice(applied);
        let (next, report) = quasi_static_step(&self.body, &trial, &self.loads, &self.constraints, &self.step_options)?;
        self.state = next;
        self.goal = None;
        Ok(report)
    }

    fn scaled_effector_rows(&self, q: &[f64]) -> Result<Vec<SparseRow>> {
        let mut rows = Vec::with_capacity(self.effector_width());
        for e in &self.effectors {
            let mut r = effector_rows(&self.body, e, q)?;
            if e.kind == EffectorKind::Orientation {
                for row in &mut r {
                    row.iter_mut().for_each(|(_, v)| *v *= self.orientation_scale);
                }
            }
            rows.extend(r);
        }
        Ok(rows)
    }

    fn effector_scales(&self) -> Vec<f64> {
        self.effectors
            .iter()
            .flat_map(|e| {
                let s = if e.kind == EffectorKind::Orientation { self.orientation_scale } else { 1.0 };
                std::iter::repeat_n(s, e.width())
            })
            .collect()
    }

    /// Finds force changes that best explain an effector displacement
    /// `delta_shape`, with the pressure change known. Goals accumulate across
    /// calls, so each call drives the effectors toward the running sum of
    /// deltas rather than re-linearizing from scratch.
    pub fn estimate_step(&mut self, delta_shape: &[f64], pressure_delta: Option<f64>) -> Result<Estimate> {
        let width = self.effector_width();
        if delta_shape.len() != width {
            return Err(Error::ShapeMismatch { expected: width, got: delta_shape.len() });
        }
        let np = self.constraints.pressure_count();
        if np == 0 && pressure_delta.is_some_and(|d| d != 0.0) {
            return Err(Error::InvalidInput("pressure change given for a device without a chamber".into()));
        }
        let na = self.constraints.applied_count();
        let offset = self.constraints.force_offset();
        let start: Vec<f64> = self.state.lambda[offset..na].to_vec();
        let pressure_goal = (np == 1).then(|| self.state.lambda[0] + pressure_delta.unwrap_or(0.0));
        let mut goal = match self.goal.take() {
            Some(g) => g,
            None => self.effector_values()?,
        };
        for (g, d) in goal.iter_mut().zip(delta_shape) {
            *g += d;
        }
        let result = self.refine(&goal, pressure_goal, &start);
        self.goal = Some(goal);
        result
    }

    fn refine(&mut self, goal: &[f64], pressure_goal: Option<f64>, start: &[f64]) -> Result<Estimate> {
        let mesh = self.body.mesh().clone();
        let na = self.constraints.applied_count();
        let offset = self.constraints.force_offset();
        let scales = self.effector_scales();
        let opts = self.estimate_options;
        let mut last = None;
        let mut step = StepReport { iterations: 0, residual: 0.0, violation: 0.0 };
        for round in 1..=opts.max_rounds.max(1) {
            let q = self.state.q.clone();
            let mut k = self.body.assemble_raw(&q, self.constraints.holonomic_bandwidth())?;
            self.constraints.add_holonomic_stiffness(&q, &self.state.lambda, &mut k);
            self.constraints.add_load_stiffness(&q, &self.state.lambda, &mut k);
            let fac = TangentStiffness::project(k, &mesh).factor()?;
            let he = self.scaled_effector_rows(&q)?;
            let ha = self.constraints.applied_rows(&q);
            let (hl, _) = self.constraints.holonomic(&q)?;
            let w = compliance_with_factor(&mesh, &fac, &he, &ha, &hl)?;
            let current = self.effector_values()?;
            let target = DVector::from_iterator(goal.len(), goal.iter().zip(&current).zip(&scales).map(|((g, c), s)| (g - c) * s));
            let lambda = &self.state.lambda;
            let mut bounds = Vec::with_capacity(na);
            if offset == 1 {
                bounds.push((f64::NEG_INFINITY, f64::INFINITY));
            }
            for (j, &(lo, hi)) in self.force_bounds.iter().enumerate() {
                let l = lambda[offset + j];
                bounds.push(((lo - l).min(0.0), (hi - l).max(0.0)));
            }
            let mut problem = QpProblem::new(w.entries, target, bounds);
            problem.ridge = opts.ridge;
            if let Some(p) = pressure_goal {
                problem.equality.insert(0, p - lambda[0]);
            }
            let qp = solve_qp(&problem)?;
            let mut applied: Vec<f64> = lambda[..na].to_vec();
            for (a, d) in applied.iter_mut().zip(&qp.delta_lambda) {
                *a += d;
            }
            let scale = 1.0 + applied.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let update = qp.delta_lambda.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let converged = update <= opts.tolerance * scale;
            if update > 0.0 {
                let mut trial = self.state.clone();
                trial.lambda[..na].copy_from_slice(&applied);
                let (next, report) = quasi_static_step(&self.body, &trial, &self.loads, &self.constraints, &self.step_options)?;
                self.state = next;
                step = report;
            }
            last = Some((qp, round, converged));
            if converged {
                break;
            }
        }
        let (qp, rounds, converged) = last.expect("at least one round");
        let delta_force = self.state.lambda[offset..na].iter().zip(start).map(|(a, b)| a - b).collect();
        Ok(Estimate { delta_force, qp, rounds, converged, step })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ForceConstraint;
    use crate::fem::Material;
    use crate::geometry::{barycentric_coords, TriMesh};

    fn cantilever() -> SoftBody {
        let mesh = TriMesh::grid(60.0, 6.0, 20, 2, |_, _| true).unwrap();
        let body = ElasticBody::new(mesh.clone(), Material::new(5e6, 0.3, 10.0).unwrap()).unwrap();
        let tip = barycentric_coords(&mesh, Point2::new(60.0, 6.0)).unwrap();
        let force = ForceConstraint::new(tip, Point2::new(0.0, 1.0)).unwrap();
        let cs = ConstraintSet::new(&mesh, None, vec![force], None);
        let effectors = [20.0, 40.0, 60.0]
            .iter()
            .map(|&x| PoseEffector { anchor: barycentric_coords(&mesh, Point2::new(x, 3.0)).unwrap(), kind: EffectorKind::Position })
            .collect();
        SoftBody::new(body, cs, effectors).unwrap()
    }

    #[test]
    fn zero_delta_leaves_state_unchanged() {
        let mut m = cantilever();
        let before = m.state().clone();
        let est = m.estimate_step(&vec![0.0; m.effector_width()], None).unwrap();
        assert_eq!(est.delta_force, vec![0.0]);
        assert_eq!(m.state().q, before.q);
    }

    #[test]
    fn recovers_forward_force() {
        let mut truth = cantilever();
        let rest = truth.effector_values().unwrap();
        truth.solve_forward(&[1.0]).unwrap();
        let moved = truth.effector_values().unwrap();
        let delta: Vec<f64> = moved.iter().zip(&rest).map(|(a, b)| a - b).collect();
        let mut m = cantilever();
        let est = m.estimate_step(&delta, None).unwrap();
        assert!(est.converged);
        assert!((est.delta_force[0] - 1.0).abs() < 1e-6, "{:?}", est.delta_force);
    }

    #[test]
    fn pressure_without_chamber_is_rejected() {
        let mut m = cantilever();
        assert!(m.estimate_step(&[0.0; 6], Some(1.0)).is_err());
        assert!(matches!(m.estimate_step(&[0.0], None), Err(Error::ShapeMismatch { .. })));
    }
}
