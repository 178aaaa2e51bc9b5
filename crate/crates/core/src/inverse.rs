//! Box- and equality-constrained least squares over constraint efforts:
//!
//! ```text
//! min ‖W Δλ − Δδ‖² + ρ ‖Δλ‖²   s.t.  Δλ_i = v_i (i ∈ E),  lo ≤ Δλ ≤ hi
//! ```
//!
//! Solved with a primal active-set method on the normal equations. Equality
//! rows are eliminated up front; the ridge `ρ` keeps the reduced normal matrix
//! positive definite when effectors cannot distinguish some efforts.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-9;
/// Condition number of the reduced normal matrix above which a solution is flagged.
pub const ILL_CONDITIONED: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Compliance, effector rows by effort columns.
    pub compliance: DMatrix<f64>,
    /// Desired effector displacement.
    pub target: DVector<f64>,
    /// Efforts with prescribed values.
    pub equality: BTreeMap<usize, f64>,
    /// Per-effort `[min, max]`.
    pub bounds: Vec<(f64, f64)>,
    pub ridge: f64,
}

impl QpProblem {
    pub fn new(compliance: DMatrix<f64>, target: DVector<f64>, bounds: Vec<(f64, f64)>) -> Self {
        Self { compliance, target, equality: BTreeMap::new(), bounds, ridge: DEFAULT_RIDGE }
    }

    pub fn with_equality(mut self, index: usize, value: f64) -> Self {
        self.equality.insert(index, value);
        self
    }

    pub fn dim(&self) -> usize {
        self.compliance.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.bounds.len() != n {
            return Err(Error::ShapeMismatch { expected: n, got: self.bounds.len() });
        }
        if self.target.len() != self.compliance.nrows() {
            return Err(Error::ShapeMismatch { expected: self.compliance.nrows(), got: self.target.len() });
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo <= hi) {
                return Err(Error::InvalidInput(format!("bounds of effort {i} are inverted: [{lo}, {hi}]")));
            }
        }
        for (&i, &v) in &self.equality {
            if i >= n {
                return Err(Error::InvalidInput(format!("equality row {i} out of range")));
            }
            let (lo, hi) = self.bounds[i];
            if !(lo <= v && v <= hi) {
                return Err(Error::InvalidInput(format!("equality value {v} of effort {i} outside [{lo}, {hi}]")));
            }
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidInput("ridge must be non-negative".into()));
        }
        if self.compliance.iter().chain(self.target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite compliance or target".into()));
        }
        Ok(())
    }

    /// `‖W x − Δδ‖²`.
    pub fn residual_norm2(&self, x: &DVector<f64>) -> f64 {
        (&self.compliance * x - &self.target).norm_squared()
    }

    /// Full objective including the ridge term.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.residual_norm2(x) + self.ridge * x.norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub delta_lambda: Vec<f64>,
    /// Residual norm² `‖W Δλ − Δδ‖²` (ridge excluded).
    pub objective: f64,
    /// Efforts held at a bound (equality rows excluded).
    pub active_set: Vec<usize>,
    pub iterations: usize,
    /// Max violation of the stationarity and sign conditions.
    pub kkt_residual: f64,
    /// Condition number of the final reduced normal matrix `WᵀW` (ridge excluded).
    pub condition: f64,
    pub ill_conditioned: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Free,
    Lower,
    Upper,
    Fixed,
}

pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    p.validate()?;
    let n = p.dim();
    let w = &p.compliance;
    let mut g = w.transpose() * w;
    for i in 0..n {
        g[(i, i)] += p.ridge;
    }
    let c = -(w.transpose() * &p.target);

    let mut status = vec![Status::Free; n];
    let mut x = DVector::zeros(n);
    for i in 0..n {
        let (lo, hi) = p.bounds[i];
        if let Some(&v) = p.equality.get(&i) {
            x[i] = v;
            status[i] = Status::Fixed;
        } else if lo == hi || 0.0 <= lo {
            x[i] = lo;
            status[i] = Status::Lower;
        } else if 0.0 >= hi {
            x[i] = hi;
            status[i] = Status::Upper;
        }
    }

    let scale = 1.0 + g.amax() + c.amax();
    let max_changes = 100 * n.max(1);
    let mut iterations = 0;
    loop {
        if iterations > max_changes {
            let kkt = kkt_residual(&g, &c, &x, &status);
            return Err(Error::NonConvergence { iterations, residual: kkt });
        }
        iterations += 1;
        let free: Vec<usize> = (0..n).filter(|&i| status[i] == Status::Free).collect();
        let target_free = if free.is_empty() { DVector::zeros(0) } else { minimize_on(&g, &c, &x, &free)? };
        let step: DVector<f64> = DVector::from_iterator(free.len(), free.iter().enumerate().map(|(k, &i)| target_free[k] - x[i]));
        let xmax = 1.0 + x.amax();
        if step.amax() <= 1e-13 * xmax {
            for (k, &i) in free.iter().enumerate() {
                x[i] = target_free[k];
            }
            // release the bound with the most negative multiplier
            let grad = &g * &x + &c;
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..n {
                let mu = match status[i] {
                    Status::Lower if p.bounds[i].0 < p.bounds[i].1 => grad[i],
                    Status::Upper if p.bounds[i].0 < p.bounds[i].1 => -grad[i],
                    _ => continue,
                };
                if mu < -1e-12 * scale && worst.is_none_or(|(_, m)| mu < m) {
                    worst = Some((i, mu));
                }
            }
            match worst {
                Some((i, _)) => status[i] = Status::Free,
                None => break,
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for (k, &i) in free.iter().enumerate() {
            let (lo, hi) = p.bounds[i];
            let d = step[k];
            let ratio = if d < 0.0 {
                (lo - x[i]) / d
            } else if d > 0.0 {
                (hi - x[i]) / d
            } else {
                continue;
            };
            if ratio < alpha {
                alpha = ratio.max(0.0);
                blocking = Some((i, if d < 0.0 { Status::Lower } else { Status::Upper }));
            }
        }
        for (k, &i) in free.iter().enumerate() {
            x[i] += alpha * step[k];
            x[i] = x[i].clamp(p.bounds[i].0, p.bounds[i].1);
        }
        if let Some((i, s)) = blocking {
            x[i] = if s == Status::Lower { p.bounds[i].0 } else { p.bounds[i].1 };
            status[i] = s;
        }
    }

    let free: Vec<usize> = (0..n).filter(|&i| status[i] == Status::Free).collect();
    let condition = if free.is_empty() {
        1.0
    } else {
        let gff = DMatrix::from_fn(free.len(), free.len(), |a, b| g[(free[a], free[b])] - if a == b { p.ridge } else { 0.0 });
        let eig = gff.symmetric_eigen().eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0_f64), |(l, h), &v| (l.min(v.abs()), h.max(v.abs())));
        if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }
    };
    let kkt = kkt_residual(&g, &c, &x, &status);
    let active_set = (0..n).filter(|&i| matches!(status[i], Status::Lower | Status::Upper)).collect();
    Ok(QpSolution {
        objective: p.residual_norm2(&x),
        delta_lambda: x.iter().copied().collect(),
        active_set,
        iterations,
        kkt_residual: kkt,
        condition,
        ill_conditioned: condition > ILL_CONDITIONED,
    })
}

/// Minimizer of the quadratic over `free`, others held at `x`. One step of
/// iterative refinement tightens the stationarity residual.
fn minimize_on(g: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>, free: &[usize]) -> Result<DVector<f64>> {
    let m = free.len();
    let gff = DMatrix::from_fn(m, m, |a, b| g[(free[a], free[b])]);
    let mut rhs = DVector::from_fn(m, |a, _| -c[free[a]]);
    for j in 0..x.len() {
        if free.contains(&j) || x[j] == 0.0 {
            continue;
        }
        for (a, &i) in free.iter().enumerate() {
            rhs[a] -= g[(i, j)] * x[j];
        }
    }
    let chol = gff.clone().cholesky().ok_or_else(|| Error::SingularSystem("reduced normal matrix is not positive definite".into()))?;
    let mut sol = chol.solve(&rhs);
    let r = &rhs - &gff * &sol;
    sol += chol.solve(&r);
    Ok(sol)
}

/// Stationarity and sign violations of the objective gradient `2(Gx + c)`.
fn kkt_residual(g: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>, status: &[Status]) -> f64 {
    let grad = (g * x + c) * 2.0;
    status.iter().enumerate().fold(0.0_f64, |m, (i, s)| {
        let v = match s {
            Status::Free => grad[i].abs(),
            Status::Lower => (-grad[i]).max(0.0),
            Status::Upper => grad[i].max(0.0),
            Status::Fixed => 0.0,
        };
        m.max(v)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_target_gives_zero_efforts() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 2.0]);
        let p = QpProblem::new(w, DVector::zeros(2), vec![(-1.0, 1.0); 2]);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.delta_lambda, vec![0.0, 0.0]);
        assert_eq!(s.objective, 0.0);
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn scalar_clamped_least_squares() {
        let p = QpProblem::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 3.0), vec![(-1.0, 1.0)]);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.delta_lambda, vec![1.0]);
        assert!((s.objective - 1.0).abs() < 1e-12);
        assert_eq!(s.active_set, vec![0]);
        assert!(s.kkt_residual <= 1e-8);
    }

    #[test]
    fn equality_rows_are_exact() {
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 0.3, 0.2, 1.0, 0.5, 0.5]);
        let p = QpProblem::new(w, DVector::from_vec(vec![1.0, -2.0, 0.7]), vec![(-5.0, 5.0); 2]).with_equality(0, 0.1234);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.delta_lambda[0], 0.1234);
        assert!(s.kkt_residual <= 1e-8);
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let w = DMatrix::from_element(1, 1, 1.0);
        let inverted = QpProblem::new(w.clone(), DVector::from_element(1, 1.0), vec![(1.0, -1.0)]);
        assert!(solve_qp(&inverted).is_err());
        let outside = QpProblem::new(w.clone(), DVector::from_element(1, 1.0), vec![(-1.0, 1.0)]).with_equality(0, 2.0);
        assert!(solve_qp(&outside).is_err());
        let mismatch = QpProblem::new(w, DVector::from_element(1, 1.0), vec![]);
        assert!(matches!(solve_qp(&mismatch), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn rank_deficient_problem_is_flagged() {
        let w = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let p = QpProblem::new(w, DVector::from_element(1, 1.0), vec![(-10.0, 10.0); 2]);
        let s = solve_qp(&p).unwrap();
        assert!(s.ill_conditioned);
        assert!((s.delta_lambda[0] - 0.5).abs() < 1e-6 && (s.delta_lambda[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn bounds_excluding_zero() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let p = QpProblem::new(w, DVector::from_vec(vec![-3.0, 4.0]), vec![(1.0, 2.0), (0.5, 6.0)]);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.delta_lambda[0], 1.0);
        assert!((s.delta_lambda[1] - 4.0).abs() < 1e-8);
        assert_eq!(s.active_set, vec![0]);
    }
}
