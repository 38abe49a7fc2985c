//! Dense primal active-set solver for small convex QPs
//! `min 1/2 y'Hy + c'y  s.t.  a_k'y <= b_k`.
//!
//! `H` may be singular as long as every working set reached keeps the
//! reduced Hessian positive definite; the callers here guarantee that.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    pub coeffs: Vec<f64>,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone)]
pub(crate) struct QpSolution {
    pub y: DVector<f64>,
    /// Multiplier per constraint (zero for inactive ones).
    #[cfg_attr(not(test), allow(dead_code))]
    pub multipliers: Vec<f64>,
}

const MAX_ITERS: usize = 2000;

impl QuadraticProgram {
    fn row(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.constraints[k].coeffs)
    }

    fn slack(&self, k: usize, y: &DVector<f64>) -> f64 {
        self.constraints[k].bound - self.row(k).dot(y)
    }

    /// Solves from a feasible `start`; `working` must be linearly independent
    /// constraints active at `start`.
    pub fn solve(&self, start: DVector<f64>, mut working: Vec<usize>) -> Result<QpSolution> {
        let n = self.linear.len();
        let mut y = start;
        let scale = 1.0 + self.linear.amax() + self.hessian.amax();
        for _ in 0..MAX_ITERS {
            let w = working.len();
            let dim = n + w;
            let mut kkt = DMatrix::zeros(dim, dim);
            kkt.view_mut((0, 0), (n, n)).copy_from(&self.hessian);
            for (r, &k) in working.iter().enumerate() {
                for (c, &a) in self.constraints[k].coeffs.iter().enumerate() {
                    kkt[(n + r, c)] = a;
                    kkt[(c, n + r)] = a;
                }
            }
            let grad = &self.hessian * &y + &self.linear;
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&(-&grad));
            let sol = kkt.lu().solve(&rhs).ok_or_else(|| {
                Error::NonConvergence {
                    iterations: 0,
                    detail: "singular KKT system in active-set QP".into(),
                }
            })?;
            let step = sol.rows(0, n).into_owned();
            let lambda = sol.rows(n, w).into_owned();

            if step.amax() <= 1e-12 * (1.0 + y.amax()) {
                // stationary on the working set: check multiplier signs
                let drop = lambda
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l < -1e-10 * scale)
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(r, _)| r);
                match drop {
                    None => {
                        let mut multipliers = vec![0.0; self.constraints.len()];
                        for (r, &k) in working.iter().enumerate() {
                            multipliers[k] = lambda[r].max(0.0);
                        }
                        return Ok(QpSolution { y, multipliers });
                    }
                    Some(r) => {
                        working.remove(r);
                    }
                }
                continue;
            }

            // longest feasible step along `step`, blocked by the first constraint hit
            let mut alpha = 1.0;
            let mut blocking = None;
            for k in 0..self.constraints.len() {
                if working.contains(&k) {
                    continue;
                }
                let row = self.row(k);
                let rate = row.dot(&step);
                // rates that are rounding noise come from constraints dependent on the working set
                if rate <= 1e-12 * row.norm() * step.norm() {
                    continue;
                }
                let a = (self.slack(k, &y) / rate).max(0.0);
                if a < alpha {
                    alpha = a;
                    blocking = Some(k);
                }
            }
            y += alpha * &step;
            if let Some(k) = blocking {
                working.push(k);
            }
        }
        Err(Error::NonConvergence {
            iterations: MAX_ITERS,
            detail: "active-set QP iteration limit".into(),
        })
    }
}
