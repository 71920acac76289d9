//! Steady-state targets, disturbance bounds, robust invariant sets and the
//! terminal set.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{encode_network, prune_stable, var_vec, Affine, EncodingPlan, ModelBuilder, Relaxation};
use crate::error::{check_dim, Error, Result};
use crate::miqp::{solve_miqp, MiqpSettings, MiqpStatus};
use crate::neldermead::{nelder_mead_bounded, NelderMeadOptions};
use crate::network::{classify_neurons, LayerBounds, ReluNetwork};
use crate::plant::LinearModel;
use crate::polytope::{BoxSet, Polytope};

/// Equality residual above which an exact target is flagged.
pub const EXACT_RESIDUAL_TOL: f64 = 1e-6;
/// Equality residual above which a search target is flagged.
pub const SEARCH_RESIDUAL_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMethod {
    Exact,
    Search,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetStatus {
    Optimal,
    /// Returned point leaves a residual above tolerance or the search hit a limit.
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyTarget {
    #[serde(with = "crate::serde_vec")]
    pub x: DVector<f64>,
    #[serde(with = "crate::serde_vec")]
    pub u: DVector<f64>,
    /// `f_nn(x*, u*)`.
    #[serde(with = "crate::serde_vec")]
    pub f: DVector<f64>,
    /// Max-norm residual of `(I − A)x − Bu − Df = 0`, `Cx = y_r`.
    pub residual: f64,
    pub objective: f64,
    pub status: TargetStatus,
    pub method: TargetMethod,
}

/// Everything the steady-state problem needs.
#[derive(Clone, Copy, Debug)]
pub struct TargetProblem<'a> {
    pub model: &'a LinearModel,
    pub net: &'a ReluNetwork,
    pub y_r: &'a DVector<f64>,
    pub r_s: &'a DMatrix<f64>,
    pub state_box: &'a BoxSet,
    pub input_box: &'a BoxSet,
}

impl TargetProblem<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.model.states();
        let m = self.model.inputs();
        check_dim("network input", n + m, self.net.input_dim())?;
        check_dim("network output", self.model.residual_dim(), self.net.output_dim())?;
        check_dim("reference", self.model.outputs(), self.y_r.len())?;
        check_dim("R_s", m, self.r_s.nrows())?;
        check_dim("R_s", m, self.r_s.ncols())?;
        check_dim("state box", n, self.state_box.dim())?;
        check_dim("input box", m, self.input_box.dim())?;
        Ok(())
    }

    fn joint(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        DVector::from_fn(n + u.len(), |i, _| if i < n { x[i] } else { u[i - n] })
    }

    /// Stacked residual of the steady-state equations.
    pub fn residual_vector(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.net.forward(&self.joint(x, u))?;
        let n = self.model.states();
        let dyn_res = x - self.model.step(x, u, &f);
        let out_res = &self.model.c * x - self.y_r;
        Ok(DVector::from_fn(n + out_res.len(), |i, _| if i < n { dyn_res[i] } else { out_res[i - n] }))
    }

    fn finish(&self, x: DVector<f64>, u: DVector<f64>, method: TargetMethod, tol: f64) -> Result<SteadyTarget> {
        let f = self.net.forward(&self.joint(&x, &u))?;
        let residual = self.residual_vector(&x, &u)?.amax();
        let objective = u.dot(&(self.r_s * &u));
        let status = if residual <= tol {
            TargetStatus::Optimal
        } else {
            warn!("steady-state residual {residual:.3e} exceeds {tol:.0e}");
            TargetStatus::Warning
        };
        Ok(SteadyTarget {
            x,
            u,
            f,
            residual,
            objective,
            status,
            method,
        })
    }
}

/// Solves the steady-state problem with the network replaced by its exact
/// mixed-integer encoding.
pub fn steady_state_exact(problem: &TargetProblem<'_>, settings: &MiqpSettings) -> Result<SteadyTarget> {
    problem.validate()?;
    let model = problem.model;
    let n = model.states();
    let m = model.inputs();
    let s = model.residual_dim();
    let joint = problem.state_box.product(problem.input_box);
    let bounds = problem.net.propagate_bounds(&joint.lo, &joint.hi)?;
    let plan = prune_stable(&EncodingPlan::uniform(&bounds, Relaxation::Exact), &classify_neurons(&bounds));

    let mut b = ModelBuilder::new();
    let xs = var_vec(b.add_vars(n), n);
    let us = var_vec(b.add_vars(m), m);
    b.constrain_vec(&xs, &problem.state_box.lo, &problem.state_box.hi);
    b.constrain_vec(&us, &problem.input_box.lo, &problem.input_box.hi);
    let input: Vec<Affine> = xs.iter().chain(&us).cloned().collect();
    let enc = encode_network(&mut b, problem.net, &bounds, &plan, &input)?;
    let fs = var_vec(b.add_vars(s), s);
    for (fj, out) in fs.iter().zip(&enc.output) {
        b.equal(&fj.plus(-1.0, out), 0.0);
    }
    b.constrain_vec(&fs, &bounds.output_lo, &bounds.output_hi);
    for i in 0..n {
        let mut row = xs[i].clone();
        for j in 0..n {
            row.axpy(-model.a[(i, j)], &xs[j]);
        }
        for j in 0..m {
            row.axpy(-model.b[(i, j)], &us[j]);
        }
        for j in 0..s {
            row.axpy(-model.d[(i, j)], &fs[j]);
        }
        b.equal(&row, 0.0);
    }
    let ys = crate::encoding::mat_vec(&model.c, &xs, None);
    for (yi, r) in ys.iter().zip(problem.y_r.iter()) {
        b.equal(yi, *r);
    }
    b.add_cost(&us, &DVector::zeros(m), problem.r_s)?;
    let miqp = b.build_miqp()?;
    debug!(
        "steady-state MIQP: {} vars, {} rows, {} binaries",
        miqp.base.num_vars(),
        miqp.base.num_rows(),
        miqp.binaries.len()
    );
    let sol = solve_miqp(&miqp, settings);
    match sol.status {
        MiqpStatus::Infeasible => Err(Error::Infeasible(format!(
            "no admissible steady state for reference {:?} within the state and input boxes",
            problem.y_r.as_slice()
        ))),
        MiqpStatus::NodeLimit if sol.x.is_empty() => Err(Error::NonConvergence(
            "steady-state MIQP hit the node limit without an incumbent".into(),
        )),
        status => {
            let x = DVector::from_iterator(n, xs.iter().map(|e| e.eval(&sol.x)));
            let u = DVector::from_iterator(m, us.iter().map(|e| e.eval(&sol.x)));
            let mut t = problem.finish(x, u, TargetMethod::Exact, EXACT_RESIDUAL_TOL)?;
            if status == MiqpStatus::NodeLimit {
                t.status = TargetStatus::Warning;
            }
            Ok(t)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    pub penalty_weight: f64,
    pub restarts: usize,
    pub seed: u64,
    pub nelder_mead: NelderMeadOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            penalty_weight: 1e6,
            restarts: 8,
            seed: 0,
            nelder_mead: NelderMeadOptions::default(),
        }
    }
}

/// Bounded Nelder–Mead on `‖u‖²_{R_s} + penalty·‖residual‖²` over `X × U`.
/// Restarts alternate between the best point so far and seeded random
/// points.
pub fn steady_state_search(problem: &TargetProblem<'_>, opts: &SearchOptions) -> Result<SteadyTarget> {
    problem.validate()?;
    if !(opts.penalty_weight >= 0.0) {
        return Err(Error::InvalidInput("penalty weight must be non-negative".into()));
    }
    let n = problem.model.states();
    let joint = problem.state_box.product(problem.input_box);
    let objective = |v: &DVector<f64>| -> f64 {
        let x = v.rows(0, n).into_owned();
        let u = v.rows(n, v.len() - n).into_owned();
        let cost = u.dot(&(problem.r_s * &u));
        if opts.penalty_weight == 0.0 {
            return cost;
        }
        match problem.residual_vector(&x, &u) {
            Ok(r) => cost + opts.penalty_weight * r.norm_squared(),
            Err(_) => f64::INFINITY,
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for round in 0..=opts.restarts {
        let start = match (&best, round) {
            (None, _) => joint.center(),
            (Some((x, _)), r) if r % 2 == 1 => x.clone(),
            _ => DVector::from_fn(joint.dim(), |i, _| rng.random_range(joint.lo[i]..=joint.hi[i])),
        };
        let res = nelder_mead_bounded(objective, &start, &joint.lo, &joint.hi, &opts.nelder_mead)?;
        if best.as_ref().is_none_or(|b| res.value < b.1) {
            best = Some((res.x, res.value));
        }
    }
    let (v, _) = best.expect("at least one search round");
    let x = v.rows(0, n).into_owned();
    let u = v.rows(n, v.len() - n).into_owned();
    let tol = if opts.penalty_weight == 0.0 { f64::INFINITY } else { SEARCH_RESIDUAL_TOL };
    problem.finish(x, u, TargetMethod::Search, tol)
}

/// `[f̲ − f*, f̄ − f*]`.
pub fn disturbance_box(bounds: &LayerBounds, f_star: &DVector<f64>) -> Result<BoxSet> {
    check_dim("steady-state network output", bounds.output_lo.len(), f_star.len())?;
    for i in 0..f_star.len() {
        if f_star[i] < bounds.output_lo[i] - 1e-9 || f_star[i] > bounds.output_hi[i] + 1e-9 {
            return Err(Error::InvalidInput(format!(
                "target output {} lies outside the network output bounds [{}, {}]",
                f_star[i], bounds.output_lo[i], bounds.output_hi[i]
            )));
        }
    }
    Ok(BoxSet {
        lo: &bounds.output_lo - f_star,
        hi: &bounds.output_hi - f_star,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RpiOptions {
    /// Slack allowed when a new row is tested for redundancy.
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for RpiOptions {
    fn default() -> Self {
        Self {
            eps: 1e-9,
            max_iter: 500,
        }
    }
}

fn box_rows(rows: &mut Vec<(DVector<f64>, f64)>, m: &DMatrix<f64>, b: &BoxSet) -> Result<()> {
    for i in 0..m.nrows() {
        let r = m.row(i).transpose();
        if r.amax() == 0.0 {
            if b.lo[i] > 0.0 || b.hi[i] < 0.0 {
                return Err(Error::EmptySet("steady state violates a constant constraint".into()));
            }
            continue;
        }
        if b.hi[i].is_finite() {
            rows.push((r.clone(), b.hi[i]));
        }
        if b.lo[i].is_finite() {
            rows.push((-r, -b.lo[i]));
        }
    }
    Ok(())
}

fn from_rows(rows: &[(DVector<f64>, f64)], n: usize) -> Result<Polytope> {
    let h_mat = DMatrix::from_fn(rows.len(), n, |r, c| rows[r].0[c]);
    let h = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    Polytope::new(h_mat, h)
}

/// Robust positively invariant set for `δx⁺ = A_s δx + w`, `w ∈ w_box`,
/// inside `Ω₀ = {δx : x* + δx ∈ X, u* + K δx ∈ U}`. Pass `None` for
/// `input_box` to leave the input rows out of `Ω₀`.
#[allow(clippy::too_many_arguments)]
pub fn compute_rpi(
    a_s: &DMatrix<f64>,
    k: &DMatrix<f64>,
    state_box: &BoxSet,
    input_box: Option<&BoxSet>,
    x_star: &DVector<f64>,
    u_star: &DVector<f64>,
    w_box: &BoxSet,
    opts: &RpiOptions,
) -> Result<Polytope> {
    let n = a_s.nrows();
    check_dim("A_s columns", n, a_s.ncols())?;
    check_dim("state box", n, state_box.dim())?;
    check_dim("disturbance box", n, w_box.dim())?;
    check_dim("x*", n, x_star.len())?;
    check_dim("K columns", n, k.ncols())?;
    if w_box.lo.iter().chain(w_box.hi.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("disturbance box must be bounded".into()));
    }
    let mut rows = Vec::new();
    box_rows(&mut rows, &DMatrix::identity(n, n), &state_box.shifted(x_star))?;
    if let Some(ub) = input_box {
        check_dim("input box", k.nrows(), ub.dim())?;
        check_dim("u*", k.nrows(), u_star.len())?;
        box_rows(&mut rows, k, &ub.shifted(u_star))?;
    }
    let mut omega = from_rows(&rows, n)?;
    if omega.is_empty() {
        return Err(Error::EmptySet("initial admissible set is empty".into()));
    }
    omega = omega.remove_redundant()?;

    for iter in 0..opts.max_iter {
        let pre = &omega.h_mat * a_s;
        let mut added = Vec::new();
        for j in 0..omega.num_rows() {
            let row = pre.row(j).transpose();
            let offset = omega.h[j] - w_box.support(omega.h_mat.row(j).transpose().as_slice());
            let scale = offset.abs().max(1.0);
            if row.amax() <= 1e-14 * omega.h_mat.row(j).amax() {
                if offset < -opts.eps * scale {
                    return Err(Error::EmptySet(format!(
                        "disturbance exceeds the admissible set at iteration {iter}"
                    )));
                }
                continue;
            }
            let redundant = omega.support(&row).is_some_and(|v| v <= offset + opts.eps * scale);
            if !redundant {
                added.push((row, offset));
            }
        }
        debug!("rpi iteration {iter}: {} rows, {} new", omega.num_rows(), added.len());
        if added.is_empty() {
            return Ok(omega);
        }
        let mut all: Vec<(DVector<f64>, f64)> = (0..omega.num_rows())
            .map(|j| (omega.h_mat.row(j).transpose(), omega.h[j]))
            .collect();
        all.extend(added);
        let next = from_rows(&all, n)?;
        if next.is_empty() {
            return Err(Error::EmptySet(format!(
                "robust invariant set is empty (iteration {iter}); the disturbance is too large for the constraints"
            )));
        }
        omega = next.remove_redundant()?;
    }
    Err(Error::NonConvergence(format!(
        "robust invariant set iteration did not terminate in {} steps",
        opts.max_iter
    )))
}

/// `{x : Hx ≤ h + Hx*}`.
pub fn terminal_set(rpi: &Polytope, x_star: &DVector<f64>) -> Polytope {
    rpi.translated(x_star)
}
