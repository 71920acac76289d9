mod common;

use std::sync::OnceLock;

use nalgebra::DVector;
use nnmpc::closed_loop::{metrics, plant_step, simulate, PlantModel};
use nnmpc::config::RunConfig;
use nnmpc::mpc::{ControllerState, DesignOptions, Method};
use nnmpc::network::ReluNetwork;
use nnmpc::plant::PendulumParams;
use nnmpc::target::{steady_state_exact, steady_state_search, SearchOptions, TargetProblem, TargetStatus};
use nnmpc::trainer::generate_dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn interior() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.reference.y_r = vec![0.25];
    cfg.terminal.input_rows = false;
    cfg
}

/// One hidden layer of 50 on 20000 samples, trained once per binary.
fn trained() -> &'static (ReluNetwork, f64) {
    static NET: OnceLock<(ReluNetwork, f64)> = OnceLock::new();
    NET.get_or_init(|| {
        let out = interior().train_network(&[50]).unwrap();
        (out.report.network, out.grid_rmse)
    })
}

#[test]
fn trained_network_fits_the_residual() {
    let (net, rmse) = trained();
    let (xbox, ubox) = common::pendulum_boxes();
    let joint = xbox.product(&ubox);
    let t = |b: usize, v: usize| joint.lo[b] + v as f64 / 20.0 * (joint.hi[b] - joint.lo[b]);
    let mut sq = 0.0;
    let mut count = 0;
    for i in 0..=20 {
        for j in 0..=20 {
            for k in 0..=20 {
                let z = DVector::from_vec(vec![t(0, i), t(1, j), t(2, k)]);
                let truth = 9.8 * z[0].sin() - 0.01 * z[1];
                sq += (net.forward(&z).unwrap()[0] - truth).powi(2);
                count += 1;
            }
        }
    }
    let own = (sq / count as f64).sqrt();
    assert!(own < 0.05, "grid rmse {own}");
    assert!((own - rmse).abs() < 1e-9, "{own} vs {rmse}");
}

#[test]
fn saved_network_reproduces_forward_exactly() {
    let (net, _) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    net.save(&path).unwrap();
    let back = ReluNetwork::load(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..1000 {
        let z = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
        assert_eq!(net.forward(&z).unwrap(), back.forward(&z).unwrap());
    }
}

#[test]
fn dataset_samples_lie_in_the_boxes() {
    let cfg = RunConfig::default();
    let data = generate_dataset(&cfg.plant(), &cfg.state_box(), &cfg.input_box(), 5000, 3).unwrap();
    let joint = cfg.state_box().product(&cfg.input_box());
    for r in 0..data.len() {
        let z = data.inputs.row(r).transpose();
        assert!(joint.contains(&z, 0.0));
        let truth = 9.8 * z[0].sin() - 0.01 * z[1];
        assert!((data.targets[(r, 0)] - truth).abs() < 1e-12);
    }
}

#[test]
fn search_agrees_with_exact_target() {
    let (net, _) = trained();
    let cfg = interior();
    let model = cfg.plant().model;
    let mpc = cfg.mpc_config().unwrap();
    let (xb, ub) = (cfg.state_box(), cfg.input_box());
    let problem = TargetProblem {
        model: &model,
        net,
        y_r: &cfg.y_r(),
        r_s: &mpc.r_s,
        state_box: &xb,
        input_box: &ub,
    };
    let exact = steady_state_exact(&problem, &mpc.miqp).unwrap();
    let search = steady_state_search(&problem, &SearchOptions::default()).unwrap();
    assert_eq!(exact.status, TargetStatus::Optimal);
    assert!((exact.x[0] - 0.25).abs() < 1e-6);
    assert!((&exact.x - &search.x).amax() < 1e-3, "{} vs {}", exact.x, search.x);
    assert!((&exact.u - &search.u).amax() < 1e-3, "{} vs {}", exact.u, search.u);
    let steady = &model.a * &exact.x + &model.b * &exact.u + &model.d * net.forward(&common::joint_input(&exact.x, &exact.u)).unwrap();
    assert!((steady - &exact.x).amax() < 1e-6);
}

#[test]
fn plant_step_matches_model_plus_residual() {
    let params = PendulumParams::default();
    let plant = PlantModel::pendulum(params);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..1000 {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0f64..2.0));
        let u = DVector::from_element(1, rng.random_range(-3.0..3.0));
        let direct = DVector::from_vec(vec![
            x[0] + 0.1 * x[1],
            x[1] + 0.1 * (9.8 * x[0].sin() - 0.01 * x[1] + u[0]),
        ]);
        let split = plant.model.step(&x, &u, &plant.residual(&x));
        let stepped = plant_step(&plant, &x, &u);
        assert!((&stepped - &direct).amax() < 1e-12);
        assert!((&stepped - &split).amax() < 1e-12);
    }
}

#[test]
fn zero_network_holds_the_target_on_the_linear_plant() {
    let cfg = interior();
    let net = ReluNetwork::constant(3, &[4], &[0.0]);
    let model = cfg.plant().model;
    let ctrl = ControllerState::design(
        model.clone(),
        net,
        cfg.state_box(),
        cfg.input_box(),
        &cfg.y_r(),
        cfg.mpc_config().unwrap(),
        &DesignOptions::default(),
    )
    .unwrap();
    let x0 = ctrl.target.x.clone();
    for method in Method::ALL {
        let traj = simulate(&ctrl.with_method(method), &PlantModel::linear(model.clone()), &x0, 20).unwrap();
        assert!(traj.halted.is_none());
        for x in &traj.states {
            assert!((x - &x0).amax() < 1e-6, "{method}: {x}");
        }
        for u in &traj.inputs {
            assert!((u - &ctrl.target.u).amax() < 1e-6);
        }
        assert!(metrics(&traj, &cfg.y_r()).steady_error_pct < 1e-3);
    }
}

#[test]
fn closed_loop_is_deterministic_and_respects_inputs() {
    let (net, _) = trained();
    let mut cfg = interior();
    cfg.reference.y_r = vec![0.1];
    cfg.mpc.steps = 30;
    let ctrl = cfg.controller(net.clone()).unwrap();
    for method in Method::ALL {
        let c = ctrl.with_method(method);
        let a = simulate(&c, &cfg.plant(), &cfg.x0(), cfg.mpc.steps).unwrap();
        let b = simulate(&c, &cfg.plant(), &cfg.x0(), cfg.mpc.steps).unwrap();
        assert!(a.halted.is_none(), "{method}: {:?}", a.halted);
        assert_eq!(a.states, b.states);
        assert_eq!(a.inputs, b.inputs);
        for u in &a.inputs {
            assert!(u[0].abs() <= 3.0 + 1e-6);
        }
    }
}
