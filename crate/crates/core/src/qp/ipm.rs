//! Mehrotra predictor-corrector interior-point method.
//!
//! Internally every finite side of every row becomes either an equality
//! `E x = e` or a one-sided inequality `G x + s = g, s ≥ 0`, each row scaled
//! to unit max-norm. Infeasibility is certified by a phase-1 problem that
//! minimises the largest normalised violation.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use super::{QpProblem, QpSettings, QpSolution, QpStatus};

const REG_PRIMAL: f64 = 1e-10;
const REG_DUAL: f64 = 1e-10;
const DIVERGENCE: f64 = 1e10;
const APPROX_FACTOR: f64 = 1e2;

#[derive(Clone, Debug)]
struct SparseRow {
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl SparseRow {
    fn dot(&self, x: &DVector<f64>) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&j, &v)| v * x[j]).sum()
    }

    fn axpy_into(&self, alpha: f64, out: &mut DVector<f64>) {
        for (&j, &v) in self.idx.iter().zip(&self.val) {
            out[j] += alpha * v;
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct RowOrigin {
    row: usize,
    /// Multiplier that maps the internal dual back to the caller's row.
    factor: f64,
}

/// Problem in internal form.
#[derive(Clone, Debug)]
struct Standard {
    n: usize,
    p: DMatrix<f64>,
    q: DVector<f64>,
    eq: Vec<SparseRow>,
    e: DVector<f64>,
    /// Origins for positive and negative equality multipliers.
    eq_origin: Vec<(RowOrigin, RowOrigin)>,
    ineq: Vec<SparseRow>,
    g: DVector<f64>,
    ineq_origin: Vec<RowOrigin>,
}

impl Standard {
    /// Returns `None` when a row with no coefficients has inconsistent bounds.
    fn from_problem(prob: &QpProblem) -> Option<Self> {
        let n = prob.num_vars();
        let cost_scale = 1.0 / prob.p.amax().max(prob.q.amax()).max(1.0);
        let mut std = Standard {
            n,
            p: &prob.p * cost_scale,
            q: &prob.q * cost_scale,
            eq: Vec::new(),
            e: DVector::zeros(0),
            eq_origin: Vec::new(),
            ineq: Vec::new(),
            g: DVector::zeros(0),
            ineq_origin: Vec::new(),
        };
        let mut e = Vec::new();
        let mut g = Vec::new();
        for r in 0..prob.num_rows() {
            let row = prob.a.row(r);
            let norm = row.amax();
            let (lo, hi) = (prob.l[r], prob.u[r]);
            if norm == 0.0 {
                if lo > 1e-12 || hi < -1e-12 {
                    return None;
                }
                continue;
            }
            let mut idx = Vec::new();
            let mut val = Vec::new();
            for j in 0..n {
                if row[j] != 0.0 {
                    idx.push(j);
                    val.push(row[j] / norm);
                }
            }
            let factor = 1.0 / (norm * cost_scale);
            if lo == hi {
                std.eq.push(SparseRow { idx, val });
                e.push(hi / norm);
                std.eq_origin.push((RowOrigin { row: r, factor }, RowOrigin { row: r, factor: -factor }));
                continue;
            }
            if hi.is_finite() {
                std.ineq.push(SparseRow {
                    idx: idx.clone(),
                    val: val.clone(),
                });
                g.push(hi / norm);
                std.ineq_origin.push(RowOrigin { row: r, factor });
            }
            if lo.is_finite() {
                std.ineq.push(SparseRow {
                    idx,
                    val: val.iter().map(|v| -v).collect(),
                });
                g.push(-lo / norm);
                std.ineq_origin.push(RowOrigin { row: r, factor: -factor });
            }
        }
        std.e = DVector::from_vec(e);
        std.g = DVector::from_vec(g);
        std.merge_opposite_rows()?;
        Some(std)
    }

    /// Turns pairs `a·x ≤ g`, `−a·x ≤ −g` into one equality row. Pairs whose
    /// offsets contradict each other make the problem infeasible (`None`).
    fn merge_opposite_rows(&mut self) -> Option<()> {
        let mut groups: HashMap<&[usize], Vec<usize>> = HashMap::new();
        for (i, row) in self.ineq.iter().enumerate() {
            groups.entry(&row.idx).or_default().push(i);
        }
        let opposite = |a: &SparseRow, b: &SparseRow| a.val.iter().zip(&b.val).all(|(x, y)| (x + y).abs() <= 1e-12);
        let mut pairs = Vec::new();
        let mut used = vec![false; self.ineq.len()];
        for members in groups.values() {
            for (k, &i) in members.iter().enumerate() {
                if used[i] {
                    continue;
                }
                for &j in &members[k + 1..] {
                    if used[j] || !opposite(&self.ineq[i], &self.ineq[j]) {
                        continue;
                    }
                    let slack = self.g[i] + self.g[j];
                    let tol = 1e-11 * self.g[i].abs().max(1.0);
                    if slack < -tol {
                        return None;
                    }
                    if slack <= tol {
                        used[i] = true;
                        used[j] = true;
                        pairs.push((i, j));
                        break;
                    }
                }
            }
        }
        if pairs.is_empty() {
            return Some(());
        }
        pairs.sort_unstable();
        let mut e: Vec<f64> = self.e.iter().copied().collect();
        for &(i, j) in &pairs {
            self.eq.push(self.ineq[i].clone());
            e.push(0.5 * (self.g[i] - self.g[j]));
            self.eq_origin.push((self.ineq_origin[i], self.ineq_origin[j]));
        }
        let keep: Vec<usize> = (0..self.ineq.len()).filter(|&i| !used[i]).collect();
        self.ineq = keep.iter().map(|&i| self.ineq[i].clone()).collect();
        self.ineq_origin = keep.iter().map(|&i| self.ineq_origin[i]).collect();
        self.g = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.g[i]));
        self.e = DVector::from_vec(e);
        Some(())
    }

    fn mul_g(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.ineq.len(), self.ineq.iter().map(|r| r.dot(x)))
    }

    fn mul_e(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.eq.len(), self.eq.iter().map(|r| r.dot(x)))
    }

    fn mul_gt(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (r, &vi) in self.ineq.iter().zip(v.iter()) {
            if vi != 0.0 {
                r.axpy_into(vi, &mut out);
            }
        }
        out
    }

    fn mul_et(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (r, &vi) in self.eq.iter().zip(v.iter()) {
            if vi != 0.0 {
                r.axpy_into(vi, &mut out);
            }
        }
        out
    }

    /// `P + Gᵀ diag(w) G`.
    fn hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.p.clone();
        for (row, &wi) in self.ineq.iter().zip(w.iter()) {
            for (a, &ia) in row.idx.iter().enumerate() {
                let va = wi * row.val[a];
                for (b, &ib) in row.idx.iter().enumerate() {
                    m[(ia, ib)] += va * row.val[b];
                }
            }
        }
        m
    }
}

enum Factor {
    Chol(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

/// Regularised factorisation of `[M Eᵀ; E 0]`.
struct KktSystem<'a> {
    std: &'a Standard,
    m: DMatrix<f64>,
    factor: Factor,
    reg: f64,
}

impl<'a> KktSystem<'a> {
    fn new(std: &'a Standard, m: DMatrix<f64>) -> Option<Self> {
        let n = std.n;
        let me = std.eq.len();
        let mut reg = REG_PRIMAL;
        for _ in 0..6 {
            let factor = if me == 0 {
                let mut mr = m.clone();
                for i in 0..n {
                    mr[(i, i)] += reg;
                }
                mr.cholesky().map(Factor::Chol)
            } else {
                let mut k = DMatrix::zeros(n + me, n + me);
                k.view_mut((0, 0), (n, n)).copy_from(&m);
                for i in 0..n {
                    k[(i, i)] += reg;
                }
                for (r, row) in std.eq.iter().enumerate() {
                    for (&j, &v) in row.idx.iter().zip(&row.val) {
                        k[(n + r, j)] = v;
                        k[(j, n + r)] = v;
                    }
                    k[(n + r, n + r)] = -REG_DUAL;
                }
                let lu = k.lu();
                if lu.is_invertible() {
                    Some(Factor::Lu(lu))
                } else {
                    None
                }
            };
            if let Some(factor) = factor {
                return Some(Self { std, m, factor, reg });
            }
            reg *= 100.0;
        }
        None
    }

    fn raw_solve(&self, rx: &DVector<f64>, ry: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.std.n;
        match &self.factor {
            Factor::Chol(c) => (c.solve(rx), DVector::zeros(0)),
            Factor::Lu(lu) => {
                let mut rhs = DVector::zeros(n + ry.len());
                rhs.rows_mut(0, n).copy_from(rx);
                rhs.rows_mut(n, ry.len()).copy_from(ry);
                let sol = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(n + ry.len()));
                (sol.rows(0, n).into_owned(), sol.rows(n, ry.len()).into_owned())
            }
        }
    }

    /// Solves the unregularised system with two steps of iterative refinement.
    fn solve(&self, rx: &DVector<f64>, ry: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (mut dx, mut dy) = self.raw_solve(rx, ry);
        for _ in 0..2 {
            let res_x = rx - (&self.m * &dx + self.std.mul_et(&dy));
            let res_y = ry - self.std.mul_e(&dx);
            if res_x.amax().max(res_y.amax()) < 1e-14 * (1.0 + rx.amax().max(ry.amax())) {
                break;
            }
            let (cx, cy) = self.raw_solve(&res_x, &res_y);
            dx += cx;
            dy += cy;
        }
        let _ = self.reg;
        (dx, dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CoreStatus {
    Converged,
    /// Stopped early, but the best iterate is within `APPROX_FACTOR` of every tolerance.
    Approximate,
    Stalled,
    Diverged,
    IterLimit,
}

struct CoreResult {
    status: CoreStatus,
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    iterations: usize,
}

fn step_to_boundary(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha: f64 = 1.0;
    for (a, d) in v.iter().zip(dv.iter()) {
        if *d < 0.0 {
            alpha = alpha.min(-a / d);
        }
    }
    alpha
}

fn run_ipm(std: &Standard, settings: &QpSettings, start: Option<&DVector<f64>>) -> CoreResult {
    let n = std.n;
    let mi = std.ineq.len();
    let me = std.eq.len();

    // Starting point: least-squares fit of the inequalities, then shift the
    // slacks and multipliers into the positive orthant.
    let ones = DVector::from_element(mi, 1.0);
    let (mut x, mut y) = match start {
        Some(x0) => (x0.clone(), DVector::zeros(me)),
        None => {
            let Some(kkt) = KktSystem::new(std, std.hessian(&ones)) else {
                return CoreResult {
                    status: CoreStatus::IterLimit,
                    x: DVector::zeros(n),
                    y: DVector::zeros(me),
                    z: DVector::zeros(mi),
                    iterations: 0,
                };
            };
            kkt.solve(&(std.mul_gt(&std.g) - &std.q), &std.e)
        }
    };
    let mut s = &std.g - std.mul_g(&x);
    let mut z = -s.clone();
    if mi > 0 {
        let smin = s.min();
        if smin < 1e-2 {
            s.add_scalar_mut(1.0 - smin.min(0.0));
            s.apply(|v| *v = v.max(1e-2));
        }
        let zmin = z.min();
        if zmin < 1e-2 {
            z.add_scalar_mut(1.0 - zmin.min(0.0));
            z.apply(|v| *v = v.max(1e-2));
        }
    }

    let mut pres_history: Vec<f64> = Vec::new();
    let mut best: Option<(f64, DVector<f64>, DVector<f64>, DVector<f64>)> = None;
    let mut status = CoreStatus::IterLimit;
    let mut iterations = 0;
    for iter in 0..settings.max_iter {
        iterations = iter;
        let px = &std.p * &x;
        let gtz = std.mul_gt(&z);
        let ety = std.mul_et(&y);
        let r_d = &px + &std.q + &gtz + &ety;
        let gx = std.mul_g(&x);
        let ex = std.mul_e(&x);
        let r_g = &gx + &s - &std.g;
        let r_e = &ex - &std.e;

        let mut pres_ratio: f64 = 0.0;
        let mut pres: f64 = 0.0;
        for i in 0..mi {
            let tol = settings.tol_abs + settings.tol_rel * gx[i].abs().max(std.g[i].abs());
            pres_ratio = pres_ratio.max(r_g[i].abs() / tol);
            pres = pres.max(r_g[i].abs());
        }
        for i in 0..me {
            let tol = settings.tol_abs + settings.tol_rel * ex[i].abs().max(std.e[i].abs());
            pres_ratio = pres_ratio.max(r_e[i].abs() / tol);
            pres = pres.max(r_e[i].abs());
        }
        let dscale = px.amax().max(std.q.amax()).max(gtz.amax()).max(ety.amax());
        let dres_ratio = r_d.amax() / (settings.tol_abs + settings.tol_rel * dscale);
        let gap = s.dot(&z);
        let pobj = 0.5 * x.dot(&px) + std.q.dot(&x);
        let gap_ratio = gap / (settings.tol_abs + settings.tol_rel * pobj.abs());
        let (pres_ok, dres_ok, gap_ok) = (pres_ratio <= 1.0, dres_ratio <= 1.0, gap_ratio <= 1.0);
        let merit = pres_ratio.max(dres_ratio).max(gap_ratio);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, x.clone(), y.clone(), z.clone()));
        }
        if pres_ok && dres_ok && gap_ok {
            status = CoreStatus::Converged;
            break;
        }
        if x.amax() > DIVERGENCE || z.iter().any(|v| *v > DIVERGENCE * 1e4) {
            status = CoreStatus::Diverged;
            break;
        }
        pres_history.push(pres);
        let w = settings.stall_window;
        if iter >= w && pres > settings.infeasibility_tol * 1e-2 && pres > 0.5 * pres_history[iter - w] {
            status = CoreStatus::Stalled;
            break;
        }

        let wdiag = DVector::from_iterator(mi, s.iter().zip(z.iter()).map(|(si, zi)| zi / si));
        let Some(kkt) = KktSystem::new(std, std.hessian(&wdiag)) else {
            status = CoreStatus::Stalled;
            break;
        };
        let mu = if mi > 0 { gap / mi as f64 } else { 0.0 };

        // rhs for a given complementarity target r_sz.
        let direction = |r_sz: &DVector<f64>| {
            let corr = DVector::from_iterator(
                mi,
                (0..mi).map(|i| (z[i] * r_g[i] - r_sz[i]) / s[i]),
            );
            let rx = -&r_d - std.mul_gt(&corr);
            let ry = -&r_e;
            let (dx, dy) = kkt.solve(&rx, &ry);
            let gdx = std.mul_g(&dx);
            let dz = DVector::from_iterator(mi, (0..mi).map(|i| wdiag[i] * gdx[i] + corr[i]));
            let ds = DVector::from_iterator(mi, (0..mi).map(|i| -r_g[i] - gdx[i]));
            (dx, dy, dz, ds)
        };

        let sz = s.component_mul(&z);
        let (dx, dy, dz, ds) = if mi == 0 {
            direction(&sz)
        } else {
            let (_, _, dz_a, ds_a) = direction(&sz);
            let alpha_a = step_to_boundary(&s, &ds_a).min(step_to_boundary(&z, &dz_a));
            let mu_a = (&s + &ds_a * alpha_a).dot(&(&z + &dz_a * alpha_a)) / mi as f64;
            let sigma = (mu_a / mu).powi(3).clamp(0.0, 1.0);
            let target = DVector::from_iterator(
                mi,
                (0..mi).map(|i| sz[i] + ds_a[i] * dz_a[i] - sigma * mu),
            );
            direction(&target)
        };
        let alpha = if mi == 0 {
            1.0
        } else {
            (0.99 * step_to_boundary(&s, &ds).min(step_to_boundary(&z, &dz))).min(1.0)
        };
        x += &dx * alpha;
        y += &dy * alpha;
        z += &dz * alpha;
        s += &ds * alpha;
        if mi > 0 {
            // Keep strictly interior.
            s.apply(|v| *v = v.max(1e-300));
            z.apply(|v| *v = v.max(1e-300));
        }
    }
    if status != CoreStatus::Converged && status != CoreStatus::Diverged {
        if let Some((merit, bx, by, bz)) = best {
            if merit <= APPROX_FACTOR {
                return CoreResult {
                    status: CoreStatus::Approximate,
                    x: bx,
                    y: by,
                    z: bz,
                    iterations,
                };
            }
        }
    }
    CoreResult {
        status,
        x,
        y,
        z,
        iterations,
    }
}

/// Phase-1 problem `min t s.t. Gx - t ≤ g, |Ex - e| ≤ t, t ≥ 0`; returns
/// `(t*, x)` when it converges.
fn phase_one(std: &Standard, settings: &QpSettings) -> Option<(f64, DVector<f64>)> {
    let n = std.n;
    let mut p = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        p[(i, i)] = 1e-10;
    }
    let mut q = DVector::zeros(n + 1);
    q[n] = 1.0;
    let with_t = |row: &SparseRow, sign: f64| {
        let mut idx: Vec<usize> = row.idx.clone();
        let mut val: Vec<f64> = row.val.iter().map(|v| sign * v).collect();
        idx.push(n);
        val.push(-1.0);
        SparseRow { idx, val }
    };
    let mut ineq = Vec::new();
    let mut g = Vec::new();
    for (row, &gi) in std.ineq.iter().zip(std.g.iter()) {
        ineq.push(with_t(row, 1.0));
        g.push(gi);
    }
    for (row, &ei) in std.eq.iter().zip(std.e.iter()) {
        ineq.push(with_t(row, 1.0));
        g.push(ei);
        ineq.push(with_t(row, -1.0));
        g.push(-ei);
    }
    ineq.push(SparseRow {
        idx: vec![n],
        val: vec![-1.0],
    });
    g.push(0.0);
    let origin = vec![RowOrigin { row: 0, factor: 0.0 }; ineq.len()];
    let phase = Standard {
        n: n + 1,
        p,
        q,
        eq: Vec::new(),
        e: DVector::zeros(0),
        eq_origin: Vec::new(),
        ineq,
        g: DVector::from_vec(g),
        ineq_origin: origin,
    };
    let inner = QpSettings {
        max_iter: settings.max_iter.max(100),
        stall_window: settings.max_iter.max(100),
        ..*settings
    };
    let res = run_ipm(&phase, &inner, None);
    if matches!(res.status, CoreStatus::Converged | CoreStatus::Approximate) {
        Some((res.x[n].max(0.0), res.x.rows(0, n).into_owned()))
    } else {
        None
    }
}

fn finish(prob: &QpProblem, std: &Standard, core: &CoreResult, status: QpStatus) -> QpSolution {
    let mut y = DVector::zeros(prob.num_rows());
    for (o, &zi) in std.ineq_origin.iter().zip(core.z.iter()) {
        y[o.row] += o.factor * zi;
    }
    for ((pos, neg), &yi) in std.eq_origin.iter().zip(core.y.iter()) {
        if yi >= 0.0 {
            y[pos.row] += pos.factor * yi;
        } else {
            y[neg.row] -= neg.factor * yi;
        }
    }
    QpSolution {
        status,
        objective: prob.objective(&core.x),
        x: core.x.clone(),
        y,
        iterations: core.iterations,
    }
}

fn failed(prob: &QpProblem, status: QpStatus, x: DVector<f64>, iterations: usize) -> QpSolution {
    QpSolution {
        status,
        objective: if status == QpStatus::Infeasible {
            f64::INFINITY
        } else {
            prob.objective(&x)
        },
        y: DVector::zeros(prob.num_rows()),
        x,
        iterations,
    }
}

/// Solves a convex QP.
///
/// Returns `Optimal` once primal, dual and gap residuals of the internally
/// scaled problem are within `tol_abs + tol_rel·scale`. When progress stalls
/// a phase-1 problem decides between `Infeasible` and the other outcomes.
pub fn solve_qp(prob: &QpProblem, settings: &QpSettings) -> QpSolution {
    let n = prob.num_vars();
    let Some(std) = Standard::from_problem(prob) else {
        return failed(prob, QpStatus::Infeasible, DVector::zeros(n), 0);
    };
    let core = run_ipm(&std, settings, None);
    if matches!(core.status, CoreStatus::Converged | CoreStatus::Approximate) {
        return finish(prob, &std, &core, QpStatus::Optimal);
    }
    let diverged = core.status == CoreStatus::Diverged;
    match phase_one(&std, settings) {
        Some((t, _)) if t > settings.infeasibility_tol => {
            failed(prob, QpStatus::Infeasible, core.x, core.iterations)
        }
        Some((_, x_feas)) => {
            if diverged {
                return failed(prob, QpStatus::Unbounded, core.x, core.iterations);
            }
            // Feasible but the first run got stuck: retry from a feasible point.
            let retry = run_ipm(&std, settings, Some(&x_feas));
            match retry.status {
                CoreStatus::Converged | CoreStatus::Approximate => finish(prob, &std, &retry, QpStatus::Optimal),
                CoreStatus::Diverged => failed(prob, QpStatus::Unbounded, retry.x, retry.iterations),
                _ => failed(prob, QpStatus::IterLimit, retry.x, core.iterations + retry.iterations),
            }
        }
        None => failed(prob, QpStatus::IterLimit, core.x, core.iterations),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::kkt_residuals;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn clamped_minimum() {
        let prob = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            0.0,
            DMatrix::identity(2, 2),
            dv(&[1.0, 1.0]),
            dv(&[f64::INFINITY, f64::INFINITY]),
        )
        .unwrap();
        let sol = solve_qp(&prob, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-7 && (sol.x[1] - 1.0).abs() < 1e-7);
        assert!((sol.objective - 1.0).abs() < 1e-7);
        // lower side active → negative multipliers
        assert!(sol.y[0] < 0.0 && sol.y[1] < 0.0);
    }

    #[test]
    fn symmetric_equality_projection() {
        let prob = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::zeros(2),
            0.0,
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            dv(&[2.0]),
            dv(&[2.0]),
        )
        .unwrap();
        let sol = solve_qp(&prob, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-8 && (sol.x[1] - 1.0).abs() < 1e-8);
        let kkt = kkt_residuals(&prob, &sol.x, &sol.y);
        assert!(kkt.stationarity < 1e-8);
    }

    #[test]
    fn linear_program() {
        // max x + y over the unit simplex corner box
        let prob = QpProblem::linear(
            dv(&[-1.0, -1.0]),
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 2.0]),
            dv(&[0.0, 0.0, f64::NEG_INFINITY]),
            dv(&[1.0, 1.0, 2.0]),
        )
        .unwrap();
        let sol = solve_qp(&prob, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.objective + 1.5).abs() < 1e-7, "{}", sol.objective);
    }

    #[test]
    fn detects_infeasible() {
        let prob = QpProblem::linear(
            dv(&[1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            dv(&[2.0, f64::NEG_INFINITY]),
            dv(&[f64::INFINITY, 1.0]),
        )
        .unwrap();
        let sol = solve_qp(&prob, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded_lp() {
        let prob = QpProblem::linear(
            dv(&[-1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            dv(&[0.0]),
            dv(&[1.0]),
        )
        .unwrap();
        let sol = solve_qp(&prob, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Unbounded);
    }

    #[test]
    fn inconsistent_empty_row_is_infeasible() {
        let prob = QpProblem::linear(dv(&[1.0]), DMatrix::zeros(1, 1), dv(&[1.0]), dv(&[2.0])).unwrap();
        assert_eq!(solve_qp(&prob, &QpSettings::default()).status, QpStatus::Infeasible);
    }

    #[test]
    fn deterministic_bitwise() {
        let prob = QpProblem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            dv(&[-1.0, 0.4]),
            0.0,
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]),
            dv(&[-1.0, 0.2]),
            dv(&[0.5, 3.0]),
        )
        .unwrap();
        let a = solve_qp(&prob, &QpSettings::default());
        let b = solve_qp(&prob, &QpSettings::default());
        assert_eq!(a.x.as_slice(), b.x.as_slice());
        assert_eq!(a.iterations, b.iterations);
    }
}
