#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nnmpc::miqp::MiqpSettings;
use nnmpc::mpc::{ControllerState, Method, MpcConfig};
use nnmpc::network::{Layer, ReluNetwork};
use nnmpc::plant::PendulumParams;
use nnmpc::polytope::BoxSet;
use nnmpc::regulator::LqrDesign;
use nnmpc::target::{SteadyTarget, TargetMethod, TargetStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn pendulum_boxes() -> (BoxSet, BoxSet) {
    let half_pi = std::f64::consts::FRAC_PI_2;
    (
        BoxSet::symmetric(&[half_pi, 5.0]),
        BoxSet::symmetric(&[3.0]),
    )
}

pub fn random_network(rng: &mut ChaCha8Rng, shape: &[usize], bias: f64) -> ReluNetwork {
    let layers = shape
        .windows(2)
        .map(|w| {
            let s = 1.0 / w[0] as f64;
            let weights = DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-1.0..1.0) * s.sqrt() * 2.0);
            let b = DVector::from_fn(w[1], |_, _| rng.random_range(-bias..bias));
            Layer::new(weights, b).unwrap()
        })
        .collect();
    ReluNetwork::new(layers).unwrap()
}

/// Plain interval propagation, independent of the library's.
pub fn interval_signs(net: &ReluNetwork, lo: &DVector<f64>, hi: &DVector<f64>) -> Vec<Vec<Option<bool>>> {
    let mut lo = lo.clone();
    let mut hi = hi.clone();
    let mut signs = Vec::new();
    for layer in net.hidden_layers() {
        let w = &layer.weights;
        let (mut nl, mut nh) = (layer.bias.clone(), layer.bias.clone());
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                let (a, b) = (w[(r, c)] * lo[c], w[(r, c)] * hi[c]);
                nl[r] += a.min(b);
                nh[r] += a.max(b);
            }
        }
        signs.push(
            (0..nl.len())
                .map(|j| {
                    if nh[j] <= 0.0 {
                        Some(false)
                    } else if nl[j] >= 0.0 {
                        Some(true)
                    } else {
                        None
                    }
                })
                .collect(),
        );
        lo = nl.map(|v| v.max(0.0));
        hi = nh.map(|v| v.max(0.0));
    }
    signs
}

pub fn unstable_count(net: &ReluNetwork, joint: &BoxSet) -> usize {
    interval_signs(net, &joint.lo, &joint.hi)
        .iter()
        .flatten()
        .filter(|s| s.is_none())
        .count()
}

pub fn mpc_config(method: Method, prune: bool) -> MpcConfig {
    MpcConfig {
        horizon: 1,
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 1.0])),
        r: DMatrix::identity(1, 1),
        phi: DMatrix::identity(1, 1) * 10.0,
        r_s: DMatrix::identity(1, 1),
        method,
        prune,
        miqp: MiqpSettings {
            gap_tol: 1e-9,
            ..MiqpSettings::default()
        },
        ts: 0.1,
    }
}

pub struct Instance {
    pub state: ControllerState,
    pub x_t: DVector<f64>,
}

/// Pendulum-shaped one-step MPC with a random network. The terminal set is
/// a box around a random reference point and `x_t` is drawn until the
/// problem is feasible.
pub fn random_instance(seed: u64, max_unstable: usize, need_stable: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = PendulumParams::default().linear_model();
    let (xbox, ubox) = pendulum_boxes();
    let joint = xbox.product(&ubox);
    let net = loop {
        let depth = rng.random_range(1..=2);
        let mut shape = vec![3];
        for _ in 0..depth {
            shape.push(rng.random_range(3..=8));
        }
        shape.push(1);
        let net = random_network(&mut rng, &shape, 4.0);
        let signs = interval_signs(&net, &joint.lo, &joint.hi);
        let unstable = signs.iter().flatten().filter(|s| s.is_none()).count();
        let stable = signs.iter().flatten().count() - unstable;
        if unstable >= 1 && unstable <= max_unstable && (!need_stable || stable >= 1) {
            break net;
        }
    };
    let cfg = mpc_config(Method::Mip, true);
    let lqr = LqrDesign::new(&model.a, &model.b, &cfg.q, &cfg.r).unwrap();
    let x_star = DVector::from_vec(vec![rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0)]);
    let u_star = DVector::from_vec(vec![rng.random_range(-1.0..1.0)]);
    let mut z = x_star.clone().insert_rows(2, 1, 0.0);
    z[2] = u_star[0];
    let f_star = net.forward(&z).unwrap();
    let target = SteadyTarget {
        x: x_star.clone(),
        u: u_star,
        f: f_star,
        residual: 0.0,
        objective: 0.0,
        status: TargetStatus::Optimal,
        method: TargetMethod::Exact,
    };
    let half = DVector::from_vec(vec![rng.random_range(0.2..1.0), rng.random_range(1.0..4.0)]);
    let terminal = BoxSet::new(&x_star - &half, &x_star + &half).unwrap().to_polytope();
    let state = ControllerState::new(model, net, xbox, ubox, lqr.k, lqr.p, target, terminal, cfg).unwrap();
    loop {
        let x_t = DVector::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0)]);
        if pattern_oracle(&state, &x_t, false).is_some() {
            return Instance { state, x_t };
        }
    }
}

/// Quantity affine in the scalar correction `c`: `slope·c + offset`.
#[derive(Clone)]
struct Lin {
    slope: DVector<f64>,
    offset: DVector<f64>,
}

impl Lin {
    fn map(&self, m: &DMatrix<f64>, b: Option<&DVector<f64>>) -> Lin {
        let mut offset = m * &self.offset;
        if let Some(b) = b {
            offset += b;
        }
        Lin {
            slope: m * &self.slope,
            offset,
        }
    }
}

/// Interval of `c` allowed by `slope·c + offset ≤ 0` rows.
struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    fn le_zero(&mut self, slope: f64, offset: f64) {
        if slope.abs() < 1e-13 {
            if offset > 1e-12 {
                self.lo = f64::INFINITY;
            }
        } else if slope > 0.0 {
            self.hi = self.hi.min(-offset / slope);
        } else {
            self.lo = self.lo.max(-offset / slope);
        }
    }

    fn within(&mut self, l: &Lin, lo: &DVector<f64>, hi: &DVector<f64>) {
        for i in 0..l.slope.len() {
            self.le_zero(l.slope[i], l.offset[i] - hi[i]);
            self.le_zero(-l.slope[i], lo[i] - l.offset[i]);
        }
    }
}

/// Scalar quadratic `a c² + b c + k`.
#[derive(Default)]
struct Quad {
    a: f64,
    b: f64,
    k: f64,
}

impl Quad {
    fn add(&mut self, l: &Lin, target: &DVector<f64>, w: &DMatrix<f64>) {
        let d = &l.offset - target;
        self.a += l.slope.dot(&(w * &l.slope));
        self.b += 2.0 * l.slope.dot(&(w * &d));
        self.k += d.dot(&(w * &d));
    }
}

/// Exact optimum of the one-step, single-input MPC by enumerating the
/// activation patterns of the undetermined neurons. On each pattern the
/// network is affine in `c`, the feasible set is an interval and the cost a
/// convex parabola. Returns `(objective, c)`.
pub fn pattern_oracle(state: &ControllerState, x_t: &DVector<f64>, with_phi: bool) -> Option<(f64, f64)> {
    assert_eq!(state.config.horizon, 1);
    assert_eq!(state.model.inputs(), 1);
    let joint = state.state_box.product(&state.input_box);
    let signs = interval_signs(&state.net, &joint.lo, &joint.hi);
    let free: Vec<(usize, usize)> = signs
        .iter()
        .enumerate()
        .flat_map(|(i, l)| l.iter().enumerate().filter(|(_, s)| s.is_none()).map(move |(j, _)| (i, j)))
        .collect();
    assert!(free.len() <= 16);
    let tgt = &state.target;
    let u0 = &state.k * (x_t - &tgt.x) + &tgt.u;
    let u = Lin {
        slope: DVector::from_element(1, 1.0),
        offset: u0,
    };
    let n = x_t.len();
    let z0 = Lin {
        slope: DVector::from_fn(n + 1, |i, _| if i == n { 1.0 } else { 0.0 }),
        offset: DVector::from_fn(n + 1, |i, _| if i < n { x_t[i] } else { u.offset[0] }),
    };
    let mut best: Option<(f64, f64)> = None;
    for mask in 0u32..(1u32 << free.len()) {
        let mut iv = Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        };
        iv.within(&u, &state.input_box.lo, &state.input_box.hi);
        let mut z = z0.clone();
        for (li, layer) in state.net.hidden_layers().iter().enumerate() {
            let mut pre = z.map(&layer.weights, Some(&layer.bias));
            for j in 0..pre.slope.len() {
                let active = match signs[li][j] {
                    Some(s) => s,
                    None => {
                        let bit = free.iter().position(|&p| p == (li, j)).unwrap();
                        (mask >> bit) & 1 == 1
                    }
                };
                if active {
                    iv.le_zero(-pre.slope[j], -pre.offset[j]);
                } else {
                    iv.le_zero(pre.slope[j], pre.offset[j]);
                    pre.slope[j] = 0.0;
                    pre.offset[j] = 0.0;
                }
            }
            z = pre;
        }
        let out = state.net.output_layer();
        let f = z.map(&out.weights, Some(&out.bias));
        iv.within(&f, &state.bounds.output_lo, &state.bounds.output_hi);
        let m = &state.model;
        let x2 = Lin {
            slope: &m.b * &u.slope + &m.d * &f.slope,
            offset: &m.a * x_t + &m.b * &u.offset + &m.d * &f.offset,
        };
        iv.within(&x2, &state.state_box.lo, &state.state_box.hi);
        let t = &state.terminal;
        let hx = x2.map(&t.h_mat, None);
        iv.within(&hx, &DVector::from_element(t.h.len(), f64::NEG_INFINITY), &t.h);
        if iv.lo > iv.hi + 1e-12 {
            continue;
        }
        let mut q = Quad::default();
        let dx = x_t - &tgt.x;
        q.k += dx.dot(&(&state.config.q * &dx));
        q.add(&u, &tgt.u, &state.config.r);
        q.add(&x2, &tgt.x, &state.p);
        if with_phi {
            q.add(&f, &tgt.f, &state.config.phi);
        }
        let c = if q.a > 0.0 { -q.b / (2.0 * q.a) } else { iv.lo };
        let c = c.clamp(iv.lo, iv.hi.max(iv.lo));
        let v = q.a * c * c + q.b * c + q.k;
        if best.is_none_or(|(bv, _)| v < bv) {
            best = Some((v, c));
        }
    }
    best
}

/// `[x; u]` as one network input.
pub fn joint_input(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied())
}
