//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ xᵀ P x + qᵀ x + c0
//! subject to  l ≤ A x ≤ u
//! ```
//!
//! where rows with `l = u` are equalities and either side may be infinite.
//! `P = 0` is allowed, so linear programs go through the same path.

mod ipm;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

pub use ipm::solve_qp;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub c0: f64,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    /// Validates shapes, symmetry and positive semidefiniteness of `p`.
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        c0: f64,
        a: DMatrix<f64>,
        l: DVector<f64>,
        u: DVector<f64>,
    ) -> Result<Self> {
        let n = q.len();
        check_dim("QP P rows", n, p.nrows())?;
        check_dim("QP P cols", n, p.ncols())?;
        check_dim("QP A cols", n, a.ncols())?;
        check_dim("QP lower bounds", a.nrows(), l.len())?;
        check_dim("QP upper bounds", a.nrows(), u.len())?;
        if p.iter().chain(q.iter()).chain(a.iter()).any(|v| !v.is_finite()) || !c0.is_finite() {
            return Err(Error::InvalidInput("QP data must be finite".into()));
        }
        for i in 0..l.len() {
            if l[i].is_nan() || u[i].is_nan() || l[i] > u[i] || l[i] == f64::INFINITY || u[i] == f64::NEG_INFINITY {
                return Err(Error::InvalidInput(format!(
                    "row {i} has inconsistent bounds [{}, {}]",
                    l[i], u[i]
                )));
            }
        }
        let scale = p.amax().max(1.0);
        let sym_err = (&p - p.transpose()).amax();
        if sym_err > 1e-9 * scale {
            return Err(Error::InvalidInput(format!("P is not symmetric (error {sym_err:.3e})")));
        }
        if n > 0 {
            let sym = (&p + p.transpose()) * 0.5 + DMatrix::identity(n, n) * (1e-9 * scale);
            if sym.cholesky().is_none() {
                return Err(Error::InvalidInput("P is not positive semidefinite".into()));
            }
        }
        Ok(Self { p, q, c0, a, l, u })
    }

    /// Linear program `min qᵀx s.t. l ≤ Ax ≤ u`.
    pub fn linear(q: DVector<f64>, a: DMatrix<f64>, l: DVector<f64>, u: DVector<f64>) -> Result<Self> {
        let n = q.len();
        Self::new(DMatrix::zeros(n, n), q, 0.0, a, l, u)
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x) + self.c0
    }

    /// Largest bound violation of `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.a * x;
        (0..ax.len())
            .map(|i| (self.l[i] - ax[i]).max(ax[i] - self.u[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Substitutes fixed values for some variables and returns the reduced
    /// problem over the remaining ones.
    ///
    /// Rows left without free variables are checked against their bounds
    /// (with tolerance `1e-9`) and dropped.
    pub fn fix_variables(&self, fixed: &[(usize, f64)]) -> Result<FixedProblem> {
        let n = self.num_vars();
        let mut value = vec![None; n];
        for &(j, v) in fixed {
            if j >= n {
                return Err(Error::InvalidInput(format!("fixed index {j} out of range")));
            }
            value[j] = Some(v);
        }
        let kept: Vec<usize> = (0..n).filter(|&j| value[j].is_none()).collect();
        let xf = DVector::from_iterator(n, value.iter().map(|v| v.unwrap_or(0.0)));
        let nk = kept.len();

        let p_xf = &self.p * &xf;
        let c0 = self.c0 + self.q.dot(&xf) + 0.5 * xf.dot(&p_xf);
        let mut p = DMatrix::zeros(nk, nk);
        let mut q = DVector::zeros(nk);
        for (ki, &i) in kept.iter().enumerate() {
            q[ki] = self.q[i] + p_xf[i];
            for (kj, &j) in kept.iter().enumerate() {
                p[(ki, kj)] = self.p[(i, j)];
            }
        }

        let shift = &self.a * &xf;
        let mut rows = Vec::new();
        let mut trivially_infeasible = false;
        for r in 0..self.num_rows() {
            let has_free = kept.iter().any(|&j| self.a[(r, j)] != 0.0);
            let lo = self.l[r] - shift[r];
            let hi = self.u[r] - shift[r];
            if has_free {
                rows.push((r, lo, hi));
            } else if lo > 1e-9 || hi < -1e-9 {
                trivially_infeasible = true;
            }
        }
        let mut a = DMatrix::zeros(rows.len(), nk);
        let mut l = DVector::zeros(rows.len());
        let mut u = DVector::zeros(rows.len());
        for (k, &(r, lo, hi)) in rows.iter().enumerate() {
            for (kj, &j) in kept.iter().enumerate() {
                a[(k, kj)] = self.a[(r, j)];
            }
            l[k] = lo;
            u[k] = hi;
        }
        Ok(FixedProblem {
            problem: QpProblem { p, q, c0, a, l, u },
            kept,
            rows: rows.iter().map(|r| r.0).collect(),
            fixed_values: xf,
            trivially_infeasible,
        })
    }
}

/// Result of [`QpProblem::fix_variables`].
#[derive(Clone, Debug)]
pub struct FixedProblem {
    pub problem: QpProblem,
    /// Original index of each remaining variable.
    pub kept: Vec<usize>,
    /// Original index of each remaining row.
    pub rows: Vec<usize>,
    fixed_values: DVector<f64>,
    /// A dropped row was violated by the fixed values alone.
    pub trivially_infeasible: bool,
}

impl FixedProblem {
    /// Lifts a reduced-space point back to the full variable vector.
    pub fn expand(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut full = self.fixed_values.clone();
        for (k, &j) in self.kept.iter().enumerate() {
            full[j] = x[k];
        }
        full
    }

    pub fn expand_duals(&self, y: &DVector<f64>, total_rows: usize) -> DVector<f64> {
        let mut full = DVector::zeros(total_rows);
        for (k, &r) in self.rows.iter().enumerate() {
            full[r] = y[k];
        }
        full
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: DVector<f64>,
    /// Row multipliers: positive when the upper side is active, negative
    /// when the lower side is, so that `Px + q + Aᵀy = 0` at optimality.
    pub y: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QpSettings {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
    /// Iterations over which a primal residual must keep shrinking before
    /// infeasibility is suspected.
    pub stall_window: usize,
    /// Minimum normalised constraint violation that certifies infeasibility.
    pub infeasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_abs: 1e-8,
            tol_rel: 1e-8,
            max_iter: 200,
            stall_window: 10,
            infeasibility_tol: 1e-6,
        }
    }
}

/// Max-norm KKT residuals of a candidate primal/dual pair.
#[derive(Clone, Copy, Debug)]
pub struct KktResiduals {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    /// Magnitude of the largest term in the stationarity sum.
    pub scale: f64,
}

pub fn kkt_residuals(p: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> KktResiduals {
    let px = &p.p * x;
    let aty = p.a.transpose() * y;
    let stationarity = (&px + &p.q + &aty).amax();
    let scale = px.amax().max(p.q.amax()).max(aty.amax());
    let ax = &p.a * x;
    let mut complementarity: f64 = 0.0;
    for i in 0..ax.len() {
        let c = if y[i] > 0.0 {
            y[i] * (p.u[i] - ax[i])
        } else if y[i] < 0.0 {
            -y[i] * (ax[i] - p.l[i])
        } else {
            0.0
        };
        let c = if c.is_finite() { c.abs() } else { f64::INFINITY };
        complementarity = complementarity.max(c);
    }
    KktResiduals {
        primal: p.max_violation(x),
        stationarity,
        complementarity,
        scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indefinite() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let r = QpProblem::new(p, DVector::zeros(2), 0.0, DMatrix::zeros(0, 2), DVector::zeros(0), DVector::zeros(0));
        assert!(r.is_err());
    }

    #[test]
    fn rejects_asymmetric() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let r = QpProblem::new(p, DVector::zeros(2), 0.0, DMatrix::zeros(0, 2), DVector::zeros(0), DVector::zeros(0));
        assert!(r.is_err());
    }

    #[test]
    fn rejects_crossed_bounds() {
        let r = QpProblem::linear(
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 0.0),
        );
        assert!(r.is_err());
    }

    #[test]
    fn fixing_variables_shifts_costs_and_rows() {
        // ½(x0² + x1²) + x0 x1 + x0, row: 0 ≤ x0 + 2 x1 ≤ 4, row: 0 ≤ x1 ≤ 1
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let qp = QpProblem::new(
            p,
            DVector::from_column_slice(&[1.0, 0.0]),
            0.5,
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
            DVector::from_column_slice(&[0.0, 0.0]),
            DVector::from_column_slice(&[4.0, 1.0]),
        )
        .unwrap();
        let fixed = qp.fix_variables(&[(1, 1.0)]).unwrap();
        assert!(!fixed.trivially_infeasible);
        assert_eq!(fixed.kept, vec![0]);
        assert_eq!(fixed.rows, vec![0]);
        let x = DVector::from_element(1, 0.7);
        let full = fixed.expand(&x);
        assert!((fixed.problem.objective(&x) - qp.objective(&full)).abs() < 1e-14);
        assert_eq!(fixed.problem.l[0], -2.0);
        assert_eq!(fixed.problem.u[0], 2.0);

        let bad = qp.fix_variables(&[(1, 2.0)]).unwrap();
        assert!(bad.trivially_infeasible);
    }
}
