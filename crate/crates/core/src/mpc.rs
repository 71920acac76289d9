//! Dual-mode MPC: the stabilising law `u = K(x − x*) + u* + c` with the
//! correction sequence `c(1..N)` chosen by one of three formulations.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::encoding::{
    add_vec, constant_vec, encode_network, eval_vec, mat_vec, var_vec, Affine, EncodingPlan, ModelBuilder,
    NetworkEncoding, Relaxation,
};
use crate::error::{check_dim, Error, Result};
use crate::miqp::{solve_miqp, MiqpProblem, MiqpSettings, MiqpStatus};
use crate::network::{classify_neurons, LayerBounds, NeuronStatusMap, ReluNetwork};
use crate::plant::LinearModel;
use crate::polytope::{BoxSet, Polytope};
use crate::qp::{solve_qp, QpProblem, QpStatus};
use crate::regulator::LqrDesign;
use crate::target::{
    compute_rpi, disturbance_box, steady_state_exact, steady_state_search, terminal_set, RpiOptions, SearchOptions,
    SteadyTarget, TargetMethod, TargetProblem, TargetStatus,
};

pub use crate::encoding::prune_stable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mip,
    Lr,
    Elr,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mip, Method::Lr, Method::Elr];

    pub fn relaxation(self) -> Relaxation {
        match self {
            Method::Mip => Relaxation::Exact,
            Method::Lr | Method::Elr => Relaxation::Triangle,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mip => "mip",
            Method::Lr => "lr",
            Method::Elr => "elr",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mip" => Ok(Method::Mip),
            "lr" => Ok(Method::Lr),
            "elr" => Ok(Method::Elr),
            other => Err(Error::InvalidInput(format!("unknown method `{other}` (expected mip, lr or elr)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Output-deviation weight, used by `Elr` only.
    pub phi: DMatrix<f64>,
    pub r_s: DMatrix<f64>,
    pub method: Method,
    /// Substitute stable neurons instead of encoding them.
    pub prune: bool,
    pub miqp: MiqpSettings,
    /// Sampling time in seconds.
    pub ts: f64,
}

impl MpcConfig {
    pub fn validate(&self, n: usize, m: usize, s: usize) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        for (name, mat, dim) in [("Q", &self.q, n), ("R", &self.r, m), ("Phi", &self.phi, s), ("R_s", &self.r_s, m)] {
            check_dim(name, dim, mat.nrows())?;
            check_dim(name, dim, mat.ncols())?;
        }
        let psd = |m: &DMatrix<f64>, strict: bool| {
            let sym = (m + m.transpose()) * 0.5;
            let min = sym.symmetric_eigenvalues().min();
            if strict {
                min > 0.0
            } else {
                min >= -1e-12 * sym.amax().max(1.0)
            }
        };
        if !psd(&self.q, false) || !psd(&self.phi, false) {
            return Err(Error::InvalidInput("Q and Phi must be positive semidefinite".into()));
        }
        if !psd(&self.r, true) || !psd(&self.r_s, true) {
            return Err(Error::InvalidInput("R and R_s must be positive definite".into()));
        }
        Ok(())
    }
}

/// Options for [`ControllerState::design`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignOptions {
    pub target_method: TargetMethod,
    pub search: SearchOptions,
    pub rpi: RpiOptions,
    /// Include `u* + Kδx ∈ U` in the initial set of the invariant-set iteration.
    pub terminal_input_rows: bool,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            target_method: TargetMethod::Exact,
            search: SearchOptions::default(),
            rpi: RpiOptions::default(),
            terminal_input_rows: true,
        }
    }
}

/// Everything a control step needs. Immutable during a run.
#[derive(Clone, Debug)]
pub struct ControllerState {
    pub model: LinearModel,
    pub net: ReluNetwork,
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    pub bounds: LayerBounds,
    pub status: NeuronStatusMap,
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub target: SteadyTarget,
    pub terminal: Polytope,
    pub config: MpcConfig,
}

impl ControllerState {
    /// Assembles a controller from precomputed parts; bounds and neuron
    /// status are derived from the state and input boxes.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: LinearModel,
        net: ReluNetwork,
        state_box: BoxSet,
        input_box: BoxSet,
        k: DMatrix<f64>,
        p: DMatrix<f64>,
        target: SteadyTarget,
        terminal: Polytope,
        config: MpcConfig,
    ) -> Result<Self> {
        let n = model.states();
        let m = model.inputs();
        let s = model.residual_dim();
        check_dim("network input", n + m, net.input_dim())?;
        check_dim("network output", s, net.output_dim())?;
        check_dim("state box", n, state_box.dim())?;
        check_dim("input box", m, input_box.dim())?;
        check_dim("K rows", m, k.nrows())?;
        check_dim("K columns", n, k.ncols())?;
        check_dim("P", n, p.nrows())?;
        check_dim("P", n, p.ncols())?;
        check_dim("x*", n, target.x.len())?;
        check_dim("u*", m, target.u.len())?;
        check_dim("f*", s, target.f.len())?;
        check_dim("terminal set", n, terminal.dim())?;
        config.validate(n, m, s)?;
        let joint = state_box.product(&input_box);
        let bounds = net.propagate_bounds(&joint.lo, &joint.hi)?;
        let status = classify_neurons(&bounds);
        Ok(Self {
            model,
            net,
            state_box,
            input_box,
            bounds,
            status,
            k,
            p,
            target,
            terminal,
            config,
        })
    }

    /// Full offline design: LQR gain and terminal weight, steady-state target
    /// for `y_r`, and the terminal set from the robust invariant set of the
    /// error system.
    pub fn design(
        model: LinearModel,
        net: ReluNetwork,
        state_box: BoxSet,
        input_box: BoxSet,
        y_r: &DVector<f64>,
        config: MpcConfig,
        opts: &DesignOptions,
    ) -> Result<Self> {
        config.validate(model.states(), model.inputs(), model.residual_dim())?;
        let lqr = LqrDesign::new(&model.a, &model.b, &config.q, &config.r)?;
        let problem = TargetProblem {
            model: &model,
            net: &net,
            y_r,
            r_s: &config.r_s,
            state_box: &state_box,
            input_box: &input_box,
        };
        let target = match opts.target_method {
            TargetMethod::Exact => steady_state_exact(&problem, &config.miqp)?,
            TargetMethod::Search => steady_state_search(&problem, &opts.search)?,
        };
        if target.status == TargetStatus::Warning {
            warn!("steady-state target residual {:.3e}", target.residual);
        }
        let joint = state_box.product(&input_box);
        let bounds = net.propagate_bounds(&joint.lo, &joint.hi)?;
        let w_box = disturbance_box(&bounds, &target.f)?.image(&model.d);
        let rpi = compute_rpi(
            &lqr.closed_loop(),
            &lqr.k,
            &state_box,
            opts.terminal_input_rows.then_some(&input_box),
            &target.x,
            &target.u,
            &w_box,
            &opts.rpi,
        )?;
        debug!("terminal set with {} rows", rpi.num_rows());
        let terminal = terminal_set(&rpi, &target.x);
        Self::new(model, net, state_box, input_box, lqr.k, lqr.p, target, terminal, config)
    }

    pub fn with_method(&self, method: Method) -> Self {
        let mut s = self.clone();
        s.config.method = method;
        s
    }

    /// Stabilising part `K(x − x*) + u*`.
    pub fn feedback(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.k * (x - &self.target.x) + &self.target.u
    }

    pub fn plan(&self, method: Method) -> EncodingPlan {
        let plan = EncodingPlan::uniform(&self.bounds, method.relaxation());
        if self.config.prune {
            prune_stable(&plan, &self.status)
        } else {
            plan
        }
    }
}

/// An assembled MPC instance and the expressions needed to read back a
/// solution.
#[derive(Clone, Debug)]
pub struct MpcEncoding {
    pub method: Method,
    pub problem: QpProblem,
    pub binaries: Vec<usize>,
    pub plan: EncodingPlan,
    /// `c(k)`, `k = 1..N`.
    pub policy: Vec<Vec<Affine>>,
    /// `x(k)`, `k = 1..N+1`.
    pub states: Vec<Vec<Affine>>,
    /// `u(k)`, `k = 1..N`.
    pub inputs: Vec<Vec<Affine>>,
    /// Network outputs `f(k)`, `k = 1..N`, each an explicit variable.
    pub outputs: Vec<Vec<Affine>>,
    pub networks: Vec<NetworkEncoding>,
}

impl MpcEncoding {
    pub fn miqp(&self) -> Result<MiqpProblem> {
        MiqpProblem::new(self.problem.clone(), self.binaries.clone())
    }

    pub fn decode(&self, sol: &DVector<f64>) -> Prediction {
        let ev = |v: &Vec<Vec<Affine>>| v.iter().map(|e| eval_vec(e, sol)).collect::<Vec<_>>();
        Prediction {
            policy: ev(&self.policy),
            states: ev(&self.states),
            inputs: ev(&self.inputs),
            outputs: ev(&self.outputs),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    #[serde(with = "crate::serde_vec::many")]
    pub policy: Vec<DVector<f64>>,
    #[serde(with = "crate::serde_vec::many")]
    pub states: Vec<DVector<f64>>,
    #[serde(with = "crate::serde_vec::many")]
    pub inputs: Vec<DVector<f64>>,
    #[serde(with = "crate::serde_vec::many")]
    pub outputs: Vec<DVector<f64>>,
}

fn build(state: &ControllerState, x_t: &DVector<f64>, method: Method) -> Result<MpcEncoding> {
    let model = &state.model;
    let n = model.states();
    let m = model.inputs();
    let s = model.residual_dim();
    check_dim("current state", n, x_t.len())?;
    let cfg = &state.config;
    let target = &state.target;
    let plan = state.plan(method);

    let mut b = ModelBuilder::new();
    let policy: Vec<Vec<Affine>> = (0..cfg.horizon).map(|_| var_vec(b.add_vars(m), m)).collect();
    let mut states = vec![constant_vec(x_t)];
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut networks = Vec::new();
    let neg_x_star = -&target.x;
    for k in 0..cfg.horizon {
        let x = states[k].clone();
        if k > 0 {
            b.constrain_vec(&x, &state.state_box.lo, &state.state_box.hi);
        }
        let dx = mat_vec(&DMatrix::identity(n, n), &x, Some(&neg_x_star));
        let u = add_vec(&mat_vec(&state.k, &dx, Some(&target.u)), 1.0, &policy[k]);
        b.constrain_vec(&u, &state.input_box.lo, &state.input_box.hi);
        let z0: Vec<Affine> = x.iter().chain(&u).cloned().collect();
        let enc = encode_network(&mut b, &state.net, &state.bounds, &plan, &z0)?;
        let f = var_vec(b.add_vars(s), s);
        for (fj, out) in f.iter().zip(&enc.output) {
            b.equal(&fj.plus(-1.0, out), 0.0);
        }
        b.constrain_vec(&f, &state.bounds.output_lo, &state.bounds.output_hi);
        let next = add_vec(
            &add_vec(&mat_vec(&model.a, &x, None), 1.0, &mat_vec(&model.b, &u, None)),
            1.0,
            &mat_vec(&model.d, &f, None),
        );
        b.add_cost(&x, &target.x, &cfg.q)?;
        b.add_cost(&u, &target.u, &cfg.r)?;
        if method == Method::Elr {
            b.add_cost(&f, &target.f, &cfg.phi)?;
        }
        inputs.push(u);
        outputs.push(f);
        networks.push(enc);
        states.push(next);
    }
    let last = states.last().expect("horizon ≥ 1").clone();
    b.constrain_vec(&last, &state.state_box.lo, &state.state_box.hi);
    let hx = mat_vec(&state.terminal.h_mat, &last, None);
    for (row, h) in hx.iter().zip(state.terminal.h.iter()) {
        b.constrain(row, f64::NEG_INFINITY, *h);
    }
    b.add_cost(&last, &target.x, &state.p)?;
    let problem = b.build_qp()?;
    Ok(MpcEncoding {
        method,
        problem,
        binaries: b.binaries().to_vec(),
        plan,
        policy,
        states,
        inputs,
        outputs,
        networks,
    })
}

/// Exact mixed-integer formulation.
pub fn build_mip(state: &ControllerState, x_t: &DVector<f64>) -> Result<MpcEncoding> {
    build(state, x_t, Method::Mip)
}

/// Triangle relaxation with the nominal cost.
pub fn build_lr(state: &ControllerState, x_t: &DVector<f64>) -> Result<MpcEncoding> {
    build(state, x_t, Method::Lr)
}

/// Triangle relaxation with the output-deviation penalty added to the cost.
pub fn build_elr(state: &ControllerState, x_t: &DVector<f64>) -> Result<MpcEncoding> {
    build(state, x_t, Method::Elr)
}

pub fn build_for(state: &ControllerState, x_t: &DVector<f64>, method: Method) -> Result<MpcEncoding> {
    build(state, x_t, method)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Optimal,
    /// Branch and bound stopped at the node limit with a feasible incumbent.
    NodeLimit,
    Infeasible,
    /// Solver ended without a usable verdict.
    Failed,
}

impl StepStatus {
    pub fn has_input(self) -> bool {
        matches!(self, StepStatus::Optimal | StepStatus::NodeLimit)
    }
}

impl fmt::Display for StepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepStatus::Optimal => "optimal",
            StepStatus::NodeLimit => "node_limit",
            StepStatus::Infeasible => "infeasible",
            StepStatus::Failed => "failed",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StepResult {
    /// Applied input; `None` unless the status carries a solution.
    pub u: Option<DVector<f64>>,
    pub prediction: Option<Prediction>,
    pub objective: f64,
    pub status: StepStatus,
    /// Wall-clock seconds for building and solving.
    pub solve_time: f64,
    pub nodes: usize,
    pub binaries: usize,
    pub diagnostics: String,
}

/// One receding-horizon step with the configured method.
pub fn control_step(state: &ControllerState, x_t: &DVector<f64>) -> Result<StepResult> {
    let start = Instant::now();
    let method = state.config.method;
    let enc = build(state, x_t, method)?;
    let (status, sol, objective, nodes, diag) = if method == Method::Mip {
        let miqp = enc.miqp()?;
        let res = solve_miqp(&miqp, &state.config.miqp);
        let status = match res.status {
            MiqpStatus::Optimal => StepStatus::Optimal,
            MiqpStatus::NodeLimit if !res.x.is_empty() => StepStatus::NodeLimit,
            MiqpStatus::NodeLimit => StepStatus::Failed,
            MiqpStatus::Infeasible => StepStatus::Infeasible,
        };
        let diag = format!(
            "{} binaries, {} nodes, gap {:.2e}, {} numerical failures",
            enc.binaries.len(),
            res.nodes,
            res.gap,
            res.numerical_failures
        );
        (status, res.x, res.objective, res.nodes, diag)
    } else {
        let res = solve_qp(&enc.problem, &state.config.miqp.qp);
        let status = match res.status {
            QpStatus::Optimal => StepStatus::Optimal,
            QpStatus::Infeasible => StepStatus::Infeasible,
            QpStatus::Unbounded | QpStatus::IterLimit => StepStatus::Failed,
        };
        let diag = format!("qp {:?} after {} iterations", res.status, res.iterations);
        (status, res.x, res.objective, 0, diag)
    };
    let solve_time = start.elapsed().as_secs_f64();
    let (u, prediction) = if status.has_input() {
        let pred = enc.decode(&sol);
        let u = state.feedback(x_t) + &pred.policy[0];
        (Some(u), Some(pred))
    } else {
        debug!("step without solution: {status} ({diag})");
        (None, None)
    };
    Ok(StepResult {
        u,
        prediction,
        objective: if status.has_input() { objective } else { f64::NAN },
        status,
        solve_time,
        nodes,
        binaries: enc.binaries.len(),
        diagnostics: diag,
    })
}
