//! Affine expressions over decision variables, a small QP/MIQP model
//! builder, and the mixed-integer and triangle encodings of ReLU layers.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Result};
use crate::miqp::MiqpProblem;
use crate::network::{relu, LayerBounds, NeuronStatus, NeuronStatusMap, ReluNetwork};
use crate::qp::QpProblem;

const CONSTANT_ROW_TOL: f64 = 1e-9;

/// `coef · x + constant`; coefficients past the end of `coef` are zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Affine {
    pub coef: Vec<f64>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self { coef: Vec::new(), constant: c }
    }

    pub fn var(j: usize) -> Self {
        let mut coef = vec![0.0; j + 1];
        coef[j] = 1.0;
        Self { coef, constant: 0.0 }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Affine) {
        if alpha == 0.0 {
            return;
        }
        if self.coef.len() < other.coef.len() {
            self.coef.resize(other.coef.len(), 0.0);
        }
        for (a, b) in self.coef.iter_mut().zip(&other.coef) {
            *a += alpha * b;
        }
        self.constant += alpha * other.constant;
    }

    pub fn plus(&self, alpha: f64, other: &Affine) -> Affine {
        let mut out = self.clone();
        out.axpy(alpha, other);
        out
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.constant + self.coef.iter().enumerate().map(|(j, c)| c * x[j]).sum::<f64>()
    }

    pub fn is_constant(&self) -> bool {
        self.coef.iter().all(|c| *c == 0.0)
    }
}

pub fn constant_vec(v: &DVector<f64>) -> Vec<Affine> {
    v.iter().map(|&c| Affine::constant(c)).collect()
}

pub fn var_vec(first: usize, len: usize) -> Vec<Affine> {
    (first..first + len).map(Affine::var).collect()
}

/// `M v + offset`.
pub fn mat_vec(m: &DMatrix<f64>, v: &[Affine], offset: Option<&DVector<f64>>) -> Vec<Affine> {
    (0..m.nrows())
        .map(|r| {
            let mut acc = Affine::constant(offset.map_or(0.0, |o| o[r]));
            for (c, e) in v.iter().enumerate() {
                acc.axpy(m[(r, c)], e);
            }
            acc
        })
        .collect()
}

pub fn add_vec(a: &[Affine], alpha: f64, b: &[Affine]) -> Vec<Affine> {
    a.iter().zip(b).map(|(x, y)| x.plus(alpha, y)).collect()
}

pub fn eval_vec(v: &[Affine], x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().map(|e| e.eval(x)))
}

#[derive(Clone, Debug)]
struct Row {
    expr: Affine,
    lo: f64,
    hi: f64,
}

#[derive(Clone, Debug)]
struct Quadratic {
    exprs: Vec<Affine>,
    target: DVector<f64>,
    weight: DMatrix<f64>,
}

/// Accumulates variables, two-sided rows `lo ≤ expr ≤ hi`, and weighted
/// squared-error cost terms, then emits a `QpProblem`.
#[derive(Clone, Debug, Default)]
pub struct ModelBuilder {
    num_vars: usize,
    rows: Vec<Row>,
    costs: Vec<Quadratic>,
    binaries: Vec<usize>,
    infeasible_constant: bool,
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn binaries(&self) -> &[usize] {
        &self.binaries
    }

    pub fn add_var(&mut self) -> usize {
        self.num_vars += 1;
        self.num_vars - 1
    }

    pub fn add_vars(&mut self, count: usize) -> usize {
        self.num_vars += count;
        self.num_vars - count
    }

    /// New variable restricted to `[0, 1]` and declared binary.
    pub fn add_binary(&mut self) -> usize {
        let j = self.add_var();
        self.constrain(&Affine::var(j), 0.0, 1.0);
        self.binaries.push(j);
        j
    }

    /// Adds `lo ≤ expr ≤ hi`. Constant expressions are checked immediately
    /// instead of producing a row.
    pub fn constrain(&mut self, expr: &Affine, lo: f64, hi: f64) {
        if expr.is_constant() {
            if expr.constant < lo - CONSTANT_ROW_TOL || expr.constant > hi + CONSTANT_ROW_TOL {
                self.infeasible_constant = true;
            }
            return;
        }
        self.rows.push(Row {
            expr: expr.clone(),
            lo,
            hi,
        });
    }

    pub fn constrain_vec(&mut self, exprs: &[Affine], lo: &DVector<f64>, hi: &DVector<f64>) {
        for (i, e) in exprs.iter().enumerate() {
            self.constrain(e, lo[i], hi[i]);
        }
    }

    pub fn equal(&mut self, expr: &Affine, value: f64) {
        self.constrain(expr, value, value);
    }

    /// Adds `(v − target)ᵀ W (v − target)` to the cost.
    pub fn add_cost(&mut self, exprs: &[Affine], target: &DVector<f64>, weight: &DMatrix<f64>) -> Result<()> {
        check_dim("cost target", exprs.len(), target.len())?;
        check_dim("cost weight", exprs.len(), weight.nrows())?;
        check_dim("cost weight", exprs.len(), weight.ncols())?;
        self.costs.push(Quadratic {
            exprs: exprs.to_vec(),
            target: target.clone(),
            weight: weight.clone(),
        });
        Ok(())
    }

    /// True when a constant row was violated while building.
    pub fn has_infeasible_constant(&self) -> bool {
        self.infeasible_constant
    }

    pub fn build_qp(&self) -> Result<QpProblem> {
        let n = self.num_vars;
        let mut p = DMatrix::zeros(n, n);
        let mut q = DVector::zeros(n);
        let mut c0 = 0.0;
        for term in &self.costs {
            let k = term.exprs.len();
            let mut jac = DMatrix::zeros(k, n);
            let mut off = DVector::zeros(k);
            for (r, e) in term.exprs.iter().enumerate() {
                for (c, v) in e.coef.iter().enumerate() {
                    jac[(r, c)] = *v;
                }
                off[r] = e.constant - term.target[r];
            }
            let wj = &term.weight * &jac;
            p += (jac.transpose() * &wj) * 2.0;
            q += wj.transpose() * &off * 2.0;
            c0 += off.dot(&(&term.weight * &off));
        }
        p = (&p + p.transpose()) * 0.5;

        let extra = usize::from(self.infeasible_constant);
        let m = self.rows.len() + extra;
        let mut a = DMatrix::zeros(m, n);
        let mut l = DVector::zeros(m);
        let mut u = DVector::zeros(m);
        for (r, row) in self.rows.iter().enumerate() {
            for (c, v) in row.expr.coef.iter().enumerate() {
                a[(r, c)] = *v;
            }
            l[r] = row.lo - row.expr.constant;
            u[r] = row.hi - row.expr.constant;
        }
        if self.infeasible_constant {
            // 0 ≥ 1 keeps the violated constant visible to the solver.
            l[m - 1] = 1.0;
            u[m - 1] = f64::INFINITY;
        }
        QpProblem::new(p, q, c0, a, l, u)
    }

    pub fn build_miqp(&self) -> Result<MiqpProblem> {
        MiqpProblem::new(self.build_qp()?, self.binaries.clone())
    }
}

/// How one hidden neuron is represented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NeuronEncoding {
    /// `z = 0`, substituted.
    Zero,
    /// `z = ẑ`, substituted.
    Identity,
    /// Binary indicator with big-M rows from the pre-activation bounds.
    BigM,
    /// Triangle over-approximation.
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relaxation {
    Exact,
    Triangle,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EncodingPlan {
    pub layers: Vec<Vec<NeuronEncoding>>,
}

impl EncodingPlan {
    /// Every neuron gets the generic encoding, stable or not.
    pub fn uniform(bounds: &LayerBounds, relaxation: Relaxation) -> Self {
        let enc = match relaxation {
            Relaxation::Exact => NeuronEncoding::BigM,
            Relaxation::Triangle => NeuronEncoding::Triangle,
        };
        Self {
            layers: bounds.pre_lo.iter().map(|l| vec![enc; l.len()]).collect(),
        }
    }

    pub fn count(&self, enc: NeuronEncoding) -> usize {
        self.layers.iter().flatten().filter(|e| **e == enc).count()
    }
}

/// Replaces the encoding of strictly inactive neurons by `z = 0` and of
/// strictly active neurons by `z = ẑ`.
pub fn prune_stable(plan: &EncodingPlan, status: &NeuronStatusMap) -> EncodingPlan {
    let layers = plan
        .layers
        .iter()
        .zip(&status.layers)
        .map(|(encs, stats)| {
            encs.iter()
                .zip(stats)
                .map(|(e, s)| match s {
                    NeuronStatus::StrictlyInactive => NeuronEncoding::Zero,
                    NeuronStatus::StrictlyActive => NeuronEncoding::Identity,
                    NeuronStatus::Unstable => *e,
                })
                .collect()
        })
        .collect();
    EncodingPlan { layers }
}

/// Expressions produced by encoding one network evaluation.
#[derive(Clone, Debug)]
pub struct NetworkEncoding {
    pub pre: Vec<Vec<Affine>>,
    pub post: Vec<Vec<Affine>>,
    pub output: Vec<Affine>,
    pub binaries: Vec<usize>,
}

/// Triangle slope `(φ(û) − φ(l̂)) / (û − l̂)`, zero when `l̂ = û`.
pub fn triangle_slope(lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (relu(hi) - relu(lo)) / (hi - lo)
    } else {
        0.0
    }
}

/// Encodes `net(input)` into `builder` following `plan`. `input` must lie in
/// the box used to compute `bounds` for the encoding to be exact.
pub fn encode_network(
    builder: &mut ModelBuilder,
    net: &ReluNetwork,
    bounds: &LayerBounds,
    plan: &EncodingPlan,
    input: &[Affine],
) -> Result<NetworkEncoding> {
    check_dim("network input expressions", net.input_dim(), input.len())?;
    check_dim("encoding plan layers", net.hidden_layers().len(), plan.layers.len())?;
    let mut pre_all = Vec::new();
    let mut post_all = Vec::new();
    let mut binaries = Vec::new();
    let mut current = input.to_vec();
    for (i, layer) in net.hidden_layers().iter().enumerate() {
        check_dim("encoding plan neurons", layer.outputs(), plan.layers[i].len())?;
        let pre = mat_vec(&layer.weights, &current, Some(&layer.bias));
        let mut post = Vec::with_capacity(pre.len());
        for (j, zhat) in pre.iter().enumerate() {
            let lo = bounds.pre_lo[i][j];
            let hi = bounds.pre_hi[i][j];
            let z = match plan.layers[i][j] {
                NeuronEncoding::Zero => Affine::constant(0.0),
                NeuronEncoding::Identity => zhat.clone(),
                NeuronEncoding::BigM => {
                    let zj = Affine::var(builder.add_var());
                    let d = builder.add_binary();
                    binaries.push(d);
                    let dv = Affine::var(d);
                    builder.constrain(&zj, 0.0, f64::INFINITY);
                    builder.constrain(&zj.plus(-1.0, zhat), 0.0, f64::INFINITY);
                    // z ≤ ẑ − l̂(1 − δ)
                    let row = zj.plus(-1.0, zhat).plus(-lo, &dv);
                    builder.constrain(&row, f64::NEG_INFINITY, -lo);
                    // z ≤ û δ
                    builder.constrain(&zj.plus(-hi, &dv), f64::NEG_INFINITY, 0.0);
                    zj
                }
                NeuronEncoding::Triangle => {
                    let zj = Affine::var(builder.add_var());
                    let a = triangle_slope(lo, hi);
                    builder.constrain(&zj, 0.0, f64::INFINITY);
                    builder.constrain(&zj.plus(-1.0, zhat), 0.0, f64::INFINITY);
                    // z ≤ a(ẑ − l̂) + φ(l̂)
                    builder.constrain(&zj.plus(-a, zhat), f64::NEG_INFINITY, relu(lo) - a * lo);
                    zj
                }
            };
            post.push(z);
        }
        pre_all.push(pre);
        post_all.push(post.clone());
        current = post;
    }
    let out_layer = net.output_layer();
    let output = mat_vec(&out_layer.weights, &current, Some(&out_layer.bias));
    Ok(NetworkEncoding {
        pre: pre_all,
        post: post_all,
        output,
        binaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miqp::{solve_miqp, MiqpSettings, MiqpStatus};
    use crate::network::{classify_neurons, Layer};
    use crate::qp::{solve_qp, QpSettings, QpStatus};

    fn abs_net() -> ReluNetwork {
        ReluNetwork::new(vec![
            Layer::new(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), DVector::zeros(2)).unwrap(),
            Layer::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::zeros(1)).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn affine_algebra() {
        let e = Affine::var(2).plus(3.0, &Affine::constant(1.0)).plus(-2.0, &Affine::var(0));
        let x = DVector::from_vec(vec![1.0, 5.0, 4.0]);
        assert_eq!(e.eval(&x), 4.0 + 3.0 - 2.0);
        let m = DMatrix::from_row_slice(1, 2, &[2.0, -1.0]);
        let v = mat_vec(&m, &[Affine::var(0), Affine::constant(2.0)], Some(&DVector::from_element(1, 0.5)));
        assert_eq!(v[0].eval(&x), 2.0 - 2.0 + 0.5);
    }

    #[test]
    fn cost_matches_weighted_norm() {
        let mut b = ModelBuilder::new();
        let x0 = b.add_vars(2);
        let exprs = vec![Affine::var(x0).plus(1.0, &Affine::constant(1.0)), Affine::var(x0 + 1)];
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let t = DVector::from_vec(vec![0.3, -0.2]);
        b.add_cost(&exprs, &t, &w).unwrap();
        let qp = b.build_qp().unwrap();
        let x = DVector::from_vec(vec![0.7, 1.1]);
        let e = DVector::from_vec(vec![1.7 - 0.3, 1.1 + 0.2]);
        assert!((qp.objective(&x) - e.dot(&(&w * &e))).abs() < 1e-12);
    }

    #[test]
    fn violated_constant_row_is_infeasible() {
        let mut b = ModelBuilder::new();
        b.add_var();
        b.constrain(&Affine::constant(2.0), 0.0, 1.0);
        assert!(b.has_infeasible_constant());
        let sol = solve_qp(&b.build_qp().unwrap(), &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn big_m_recovers_abs() {
        for &x in &[-0.7, 0.4, 0.0, 1.0] {
            let net = abs_net();
            let bounds = net.propagate_bounds(&DVector::from_element(1, -1.0), &DVector::from_element(1, 1.0)).unwrap();
            let plan = EncodingPlan::uniform(&bounds, Relaxation::Exact);
            let mut b = ModelBuilder::new();
            let enc = encode_network(&mut b, &net, &bounds, &plan, &[Affine::constant(x)]).unwrap();
            assert_eq!(enc.binaries.len(), 2);
            // Minimise the output; exactness means the only feasible value is |x|.
            b.add_cost(&enc.output, &DVector::from_element(1, -10.0), &DMatrix::identity(1, 1)).unwrap();
            let sol = solve_miqp(&b.build_miqp().unwrap(), &MiqpSettings::default());
            assert_eq!(sol.status, MiqpStatus::Optimal);
            assert!((enc.output[0].eval(&sol.x) - x.abs()).abs() < 1e-6);
        }
    }

    #[test]
    fn triangle_contains_relu_graph() {
        let (lo, hi) = (-1.0, 3.0);
        let a = triangle_slope(lo, hi);
        assert_eq!(a, 0.75);
        for i in 0..=40 {
            let zh = lo + (hi - lo) * i as f64 / 40.0;
            let z = relu(zh);
            assert!(z <= a * (zh - lo) + relu(lo) + 1e-12);
        }
        assert_eq!(triangle_slope(0.5, 0.5), 0.0);
    }

    #[test]
    fn pruning_replaces_stable_neurons() {
        let net = ReluNetwork::new(vec![
            Layer::new(
                DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]),
                DVector::from_vec(vec![-5.0, 5.0, 0.0]),
            )
            .unwrap(),
            Layer::new(DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]), DVector::zeros(1)).unwrap(),
        ])
        .unwrap();
        let bounds = net.propagate_bounds(&DVector::from_element(1, -1.0), &DVector::from_element(1, 1.0)).unwrap();
        let plan = prune_stable(&EncodingPlan::uniform(&bounds, Relaxation::Exact), &classify_neurons(&bounds));
        assert_eq!(
            plan.layers[0],
            vec![NeuronEncoding::Zero, NeuronEncoding::Identity, NeuronEncoding::BigM]
        );
        let mut b = ModelBuilder::new();
        let enc = encode_network(&mut b, &net, &bounds, &plan, &[Affine::constant(0.5)]).unwrap();
        assert_eq!(enc.binaries.len(), 1);
        assert!(enc.post[0][0].is_constant() && enc.post[0][0].constant == 0.0);
        assert_eq!(enc.post[0][1], enc.pre[0][1]);
    }
}
