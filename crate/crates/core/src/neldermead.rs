//! Nelder–Mead simplex search with box bounds handled by the sinusoidal
//! change of variables `x = lb + (ub − lb)(sin z + 1)/2`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    pub max_evals: usize,
    /// Simplex diameter tolerance (in transformed coordinates).
    pub tol_x: f64,
    /// Spread of function values across the simplex.
    pub tol_f: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 4000,
            max_evals: 8000,
            tol_x: 1e-12,
            tol_f: 1e-14,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NelderMeadResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Unconstrained Nelder–Mead from `x0` with the usual initial simplex
/// (5% steps, 2.5e-4 for zero components).
pub fn nelder_mead<F>(f: F, x0: &DVector<f64>, opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let eval = |x: &DVector<f64>, evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.clone(), eval(x0, &mut evals)));
    for i in 0..n {
        let mut y = x0.clone();
        y[i] = if y[i] != 0.0 { 1.05 * y[i] } else { 2.5e-4 };
        let v = eval(&y, &mut evals);
        simplex.push((y, v));
    }
    let order = |s: &mut Vec<(DVector<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter && evals < opts.max_evals {
        let best = simplex[0].1;
        let spread_f = simplex.iter().map(|p| (p.1 - best).abs()).fold(0.0, f64::max);
        let spread_x = simplex
            .iter()
            .map(|p| (&p.0 - &simplex[0].0).amax())
            .fold(0.0, f64::max);
        if spread_f <= opts.tol_f && spread_x <= opts.tol_x {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid = simplex[..n].iter().fold(DVector::zeros(n), |acc, p| acc + &p.0) / n as f64;
        let worst = simplex[n].clone();
        let xr = &centroid * 2.0 - &worst.0;
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = &centroid * 3.0 - &worst.0 * 2.0;
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = &centroid * 1.5 - &worst.0 * 0.5;
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = &centroid * 0.5 + &worst.0 * 0.5;
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    p.0 = &x_best + (&p.0 - &x_best) * 0.5;
                    p.1 = eval(&p.0, &mut evals);
                }
            }
        }
        order(&mut simplex);
    }
    let (x, value) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        value,
        iterations,
        evaluations: evals,
        converged,
    }
}

/// Bounded variables map through a sine; all bounds must be finite.
pub struct BoundTransform {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl BoundTransform {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        check_dim("search bounds", lo.len(), hi.len())?;
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
            return Err(Error::InvalidInput("search bounds must be finite with lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn to_bounded(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(z.len(), |i, _| {
            let x = self.lo[i] + (self.hi[i] - self.lo[i]) * (z[i].sin() + 1.0) * 0.5;
            x.clamp(self.lo[i], self.hi[i])
        })
    }

    pub fn to_free(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| {
            let w = self.hi[i] - self.lo[i];
            let s = if w > 0.0 { 2.0 * (x[i] - self.lo[i]) / w - 1.0 } else { 0.0 };
            2.0 * std::f64::consts::PI + s.clamp(-1.0, 1.0).asin()
        })
    }
}

/// Minimises `f` over the box `[lo, hi]` from `x0`.
pub fn nelder_mead_bounded<F>(
    f: F,
    x0: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult>
where
    F: Fn(&DVector<f64>) -> f64,
{
    check_dim("search start", lo.len(), x0.len())?;
    let t = BoundTransform::new(lo.clone(), hi.clone())?;
    let z0 = t.to_free(x0);
    let mut res = nelder_mead(|z| f(&t.to_bounded(z)), &z0, opts);
    res.x = t.to_bounded(&res.x);
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(f, &DVector::from_vec(vec![-1.2, 1.0]), &NelderMeadOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bound_active() {
        let f = |x: &DVector<f64>| (x[0] - 3.0).powi(2) + (x[1] + 0.25).powi(2);
        let lo = DVector::from_vec(vec![-1.0, -1.0]);
        let hi = DVector::from_vec(vec![1.0, 1.0]);
        let r = nelder_mead_bounded(f, &DVector::zeros(2), &lo, &hi, &NelderMeadOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] + 0.25).abs() < 1e-6);
    }

    #[test]
    fn transform_round_trip() {
        let t = BoundTransform::new(DVector::from_vec(vec![-2.0, 0.0]), DVector::from_vec(vec![3.0, 1.0])).unwrap();
        let x = DVector::from_vec(vec![0.7, 0.2]);
        assert!((t.to_bounded(&t.to_free(&x)) - x).amax() < 1e-12);
    }
}
