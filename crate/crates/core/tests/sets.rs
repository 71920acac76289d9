mod common;

use nalgebra::{DMatrix, DVector};
use nnmpc::plant::PendulumParams;
use nnmpc::polytope::{BoxSet, Polytope};
use nnmpc::regulator::LqrDesign;
use nnmpc::target::{compute_rpi, disturbance_box, RpiOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_polytope(rng: &mut ChaCha8Rng, rows: usize) -> Polytope {
    let h_mat = DMatrix::from_fn(rows, 2, |_, _| rng.random_range(-1.0..1.0));
    let h = DVector::from_fn(rows, |_, _| rng.random_range(0.2..2.0));
    Polytope::new(h_mat, h).unwrap()
}

fn margin(p: &Polytope, x: &DVector<f64>) -> f64 {
    p.max_violation(x)
}

/// Rejection sample from the bounding box of `p`.
fn sample_inside(rng: &mut ChaCha8Rng, p: &Polytope, bb: &BoxSet) -> DVector<f64> {
    loop {
        let x = DVector::from_fn(bb.dim(), |i, _| rng.random_range(bb.lo[i]..=bb.hi[i]));
        if p.contains(&x) {
            return x;
        }
    }
}

#[test]
fn redundancy_removal_keeps_membership() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let p = random_polytope(&mut rng, 12);
        let q = p.remove_redundant().unwrap();
        assert!(q.num_rows() <= p.num_rows());
        for _ in 0..10_000 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-6.0..6.0));
            let v = margin(&p, &x);
            if v.abs() < 1e-7 {
                continue;
            }
            assert_eq!(v <= 0.0, q.max_violation(&x) <= 0.0, "{x}");
        }
    }
}

fn check_invariance(
    rng: &mut ChaCha8Rng,
    a_s: &DMatrix<f64>,
    rpi: &Polytope,
    w_box: &BoxSet,
    state_box: &BoxSet,
    samples: usize,
) {
    let bb = rpi.bounding_box().unwrap();
    let corners = w_box.vertices();
    for i in 0..samples {
        let dx = sample_inside(rng, rpi, &bb);
        assert!(state_box.contains(&dx, 1e-9));
        let w = if i % 2 == 0 {
            corners[rng.random_range(0..corners.len())].clone()
        } else {
            DVector::from_fn(w_box.dim(), |j, _| rng.random_range(w_box.lo[j]..=w_box.hi[j]))
        };
        let next = a_s * &dx + &w;
        assert!(rpi.max_violation(&next) <= 1e-7, "left the set: {next}");
    }
}

#[test]
fn pendulum_error_set_is_invariant() {
    let model = PendulumParams::default().linear_model();
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1e5, 1e2]));
    let r = DMatrix::identity(1, 1);
    let lqr = LqrDesign::new(&model.a, &model.b, &q, &r).unwrap();
    let (xbox, _) = common::pendulum_boxes();
    let x_star = DVector::from_vec(vec![0.25, 0.0]);
    let w_box = BoxSet::symmetric(&[0.1]).image(&model.d);
    let rpi = compute_rpi(
        &lqr.closed_loop(),
        &lqr.k,
        &xbox,
        None,
        &x_star,
        &DVector::zeros(1),
        &w_box,
        &RpiOptions::default(),
    )
    .unwrap();
    assert!(rpi.contains(&DVector::zeros(2)));
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    check_invariance(&mut rng, &lqr.closed_loop(), &rpi, &w_box, &xbox.shifted(&x_star), 1000);
}

#[test]
fn input_rows_keep_feedback_admissible() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let a_s = DMatrix::from_row_slice(2, 2, &[0.6, 0.3, -0.2, 0.5]);
    let k = DMatrix::from_row_slice(1, 2, &[-0.8, 0.4]);
    let xbox = BoxSet::symmetric(&[2.0, 2.0]);
    let ubox = BoxSet::symmetric(&[1.0]);
    let x_star = DVector::from_vec(vec![0.3, -0.1]);
    let u_star = DVector::from_vec(vec![0.2]);
    let w_box = BoxSet::symmetric(&[0.1, 0.05]);
    let rpi = compute_rpi(&a_s, &k, &xbox, Some(&ubox), &x_star, &u_star, &w_box, &RpiOptions::default()).unwrap();
    let bb = rpi.bounding_box().unwrap();
    for _ in 0..1000 {
        let dx = sample_inside(&mut rng, &rpi, &bb);
        assert!(xbox.contains(&(&x_star + &dx), 1e-9));
        assert!(ubox.contains(&(&u_star + &k * &dx), 1e-9));
    }
    check_invariance(&mut rng, &a_s, &rpi, &w_box, &xbox.shifted(&x_star), 1000);
}

#[test]
fn disturbance_box_covers_network_deviation() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let (xbox, ubox) = common::pendulum_boxes();
    let joint = xbox.product(&ubox);
    for _ in 0..5 {
        let net = common::random_network(&mut rng, &[3, 8, 8, 1], 1.0);
        let bounds = net.propagate_bounds(&joint.lo, &joint.hi).unwrap();
        let z_star = DVector::from_fn(3, |i, _| rng.random_range(joint.lo[i]..=joint.hi[i]));
        let f_star = net.forward(&z_star).unwrap();
        let w = disturbance_box(&bounds, &f_star).unwrap();
        for _ in 0..10_000 {
            let z = DVector::from_fn(3, |i, _| rng.random_range(joint.lo[i]..=joint.hi[i]));
            assert!(w.contains(&(net.forward(&z).unwrap() - &f_star), 1e-9));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_stable_systems_give_invariant_sets(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a_s = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let rho = a_s.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
        a_s *= rng.random_range(0.2..0.9) / rho.max(1e-3);
        let w_box = BoxSet::symmetric(&[rng.random_range(0.01..0.1), rng.random_range(0.01..0.1)]);
        let xbox = BoxSet::symmetric(&[1.0, 1.0]);
        let zero = DVector::zeros(2);
        let rpi = compute_rpi(&a_s, &DMatrix::zeros(1, 2), &xbox, None, &zero, &DVector::zeros(1), &w_box, &RpiOptions::default());
        if let Ok(rpi) = rpi {
            check_invariance(&mut rng, &a_s, &rpi, &w_box, &xbox, 200);
        }
    }
}
