//! LQR synthesis through the discrete-time algebraic Riccati equation.
//!
//! The gain carries its own sign: the stabilising feedback is `u = K x`,
//! with `A + B K` Schur stable.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};

/// Residual `AᵀPA − P − AᵀPB (R + BᵀPB)⁻¹ BᵀPA + Q` in max-norm.
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    riccati_map(a, b, q, r, p).map(|next| (next - p).amax()).unwrap_or(f64::INFINITY)
}

fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let pa = p * a;
    let pb = p * b;
    let s = r + b.transpose() * &pb;
    let gain = s.cholesky()?.solve(&(pb.transpose() * a));
    let next = a.transpose() * &pa - a.transpose() * &pb * gain + q;
    Some((&next + next.transpose()) * 0.5)
}

fn validate(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    check_dim("A columns", n, a.ncols())?;
    check_dim("B rows", n, b.nrows())?;
    check_dim("Q rows", n, q.nrows())?;
    check_dim("Q columns", n, q.ncols())?;
    check_dim("R rows", b.ncols(), r.nrows())?;
    check_dim("R columns", b.ncols(), r.ncols())?;
    if (q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
        return Err(Error::InvalidInput("Q must be symmetric".into()));
    }
    let q_shift = q + DMatrix::identity(n, n) * (1e-12 * q.amax().max(1.0));
    if q_shift.cholesky().is_none() {
        return Err(Error::InvalidInput("Q must be positive semidefinite".into()));
    }
    if (r - r.transpose()).amax() > 1e-12 * r.amax().max(1.0) || r.clone().cholesky().is_none() {
        return Err(Error::InvalidInput("R must be symmetric positive definite".into()));
    }
    Ok(())
}

/// Riccati recursion `P ← AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA + Q` from `P₀ = Q`.
///
/// Stops once successive iterates differ by at most `tol` in max-norm, or
/// when rounding noise stops the step from shrinking and the equation
/// residual is already below `LqrDesign::RESIDUAL_TOL`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    validate(a, b, q, r)?;
    let mut p = q.clone();
    let mut best_step = f64::INFINITY;
    let mut since_best = 0;
    for _ in 0..max_iter {
        let next = riccati_map(a, b, q, r, &p)
            .ok_or_else(|| Error::NonConvergence("R + BᵀPB lost definiteness".into()))?;
        let step = (&next - &p).amax();
        p = next;
        if !step.is_finite() {
            break;
        }
        if step <= tol {
            return Ok(p);
        }
        if step < best_step {
            best_step = step;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= 20 && dare_residual(a, b, q, r, &p) <= LqrDesign::RESIDUAL_TOL {
                return Ok(p);
            }
        }
    }
    Err(Error::NonConvergence(format!(
        "Riccati recursion did not settle in {max_iter} iterations; (A, B) may be close to uncontrollable"
    )))
}

/// `K = −(R + BᵀPB)⁻¹ BᵀPA`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = r + b.transpose() * p * b;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("R + BᵀPB is not positive definite".into()))?;
    Ok(-chol.solve(&(b.transpose() * p * a)))
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct LqrDesign {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Spectral radius of `A + BK`.
    pub spectral_radius: f64,
    pub residual: f64,
}

impl LqrDesign {
    pub const RESIDUAL_TOL: f64 = 1e-8;

    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Self> {
        let p = solve_dare(a, b, q, r, 1e-10, 10_000)?;
        let k = lqr_gain(a, b, r, &p)?;
        let closed = a + b * &k;
        let rho = spectral_radius(&closed);
        let residual = dare_residual(a, b, q, r, &p);
        if residual > Self::RESIDUAL_TOL {
            return Err(Error::NonConvergence(format!("DARE residual {residual:.3e} too large")));
        }
        if rho >= 1.0 {
            return Err(Error::InvalidInput(format!(
                "closed loop is not Schur stable (spectral radius {rho:.6})"
            )));
        }
        Ok(Self {
            a: a.clone(),
            b: b.clone(),
            q: q.clone(),
            r: r.clone(),
            p,
            k,
            spectral_radius: rho,
            residual,
        })
    }

    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a + &self.b * &self.k
    }

    /// Distance of the closed-loop spectrum from the unit circle.
    pub fn stability_margin(&self) -> f64 {
        1.0 - self.spectral_radius
    }
}
