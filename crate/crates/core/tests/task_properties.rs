use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::{rngs::StdRng, Rng, SeedableRng};
use wbc_core::dynamics::{compute_dynamics, GeneralizedState};
use wbc_core::hqp::{HqpSolver, Task};
use wbc_core::model::{bundled_hexapod, load_model};
use wbc_core::tasks::*;
use wbc_core::terrain::TerrainParams;

#[test]
fn stopping_bound_brings_joint_to_rest_at_the_limit() {
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..100 {
        let dt_loop = rng.random_range(0.001..0.03);
        let horizon = 10.0 * dt_loop;
        let v = rng.random_range(0.01..2.0);
        let q_max = 1.0;
        let q = q_max - 0.5 * v * horizon;
        let (_, acc) = acceleration_bounds(q, v, -1.0, q_max, dt_loop);
        let q_end = q + horizon * v + 0.5 * horizon * horizon * acc;
        let v_end = v + horizon * acc;
        assert!((q_end - q_max).abs() < 1e-12);
        assert!(v_end.abs() < 1e-9);
        // from any start the bound lands exactly on the limit after the horizon
        let q0 = rng.random_range(-0.5..0.9);
        let (_, acc) = acceleration_bounds(q0, v, -1.0, q_max, dt_loop);
        assert!((q0 + horizon * v + 0.5 * horizon * horizon * acc - q_max).abs() < 1e-12);
    }
}

#[test]
fn static_stance_satisfies_dynamic_consistency() {
    let model = bundled_hexapod();
    let state = GeneralizedState::standing(&model, 0.16);
    let terms = compute_dynamics(&model, &state).unwrap();
    let layout = DecisionLayout::for_model(&model);
    // base rows: J_bᵀ F = h_b, minimum-norm forces; joint rows give τ
    let jt = terms.foot_jacobian.transpose();
    let jb = jt.rows(0, 6).into_owned();
    let f = jb.clone().pseudo_inverse(1e-12).unwrap() * terms.bias.rows(0, 6);
    let tau = terms.bias.rows(6, 18) - jt.rows(6, 18) * &f;
    let mut x = DVector::zeros(layout.dim());
    x.rows_mut(layout.forces().start, 18).copy_from(&f);
    x.rows_mut(layout.tau().start, 18).copy_from(&tau);
    let t1 = task_dynamic_consistency(&layout, &terms, &[true; 6]);
    assert!(t1.equality_residual(&x).amax() <= 1e-8);
}

#[test]
fn pyramid_rows_agree_with_direct_cap() {
    let mut rng = StdRng::seed_from_u64(5);
    let layout = DecisionLayout::new(0, 1);
    for _ in 0..2000 {
        let p = TerrainParams {
            mu: rng.random_range(0.0..1.0),
            cohesion: rng.random_range(0.0..500.0),
            shear_modulus: rng.random_range(1e-4..1e-2),
            ..TerrainParams::flat()
        };
        let r = 0.02;
        let xi_max = rng.random_range(0.0..0.01);
        let delta_max = rng.random_range(0.0..0.01);
        let bounds = compute_force_bounds(&p, &[r], &[true], &[0.0], xi_max, delta_max);
        let t = task_ft_interaction(&layout, &bounds, &[true]);
        let fz = rng.random_range(-20.0..600.0);
        let fx = rng.random_range(-200.0..200.0);
        let fy = rng.random_range(-200.0..200.0);
        let mut x = DVector::zeros(layout.dim());
        x[6] = fx;
        x[7] = fy;
        x[8] = fz;
        let violation = (&t.d * &x - &t.f).max();
        // direct evaluation of the cap with F_z substituted
        let decay = (-1.43 * xi_max / p.shear_modulus).exp();
        let s = (1.0 - decay) / (1.0 + decay);
        let cap = FRAC_1_SQRT_2 * (PI * r * r * p.cohesion + p.mu * fz) * s;
        let fz_max = (PI * r * p.k_c + PI * r * r * p.k_phi) * delta_max;
        let margin = [cap - fx.abs(), cap - fy.abs(), fz, fz_max - fz]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if margin.abs() < 1e-9 {
            continue;
        }
        assert_eq!(violation <= 0.0, margin > 0.0, "fx {fx} fy {fy} fz {fz} cap {cap}");
    }
}

#[test]
fn swing_feet_are_pinned_to_zero_force() {
    let layout = DecisionLayout::new(0, 2);
    let b = compute_force_bounds(&TerrainParams::flat(), &[0.02; 2], &[true, false], &[0.0; 2], 0.004, 0.005);
    let t = task_ft_interaction(&layout, &b, &[true, false]);
    let mut x = DVector::zeros(layout.dim());
    x[6 + 2] = 100.0;
    assert_eq!(t.inequality_violation(&x).amax(), 0.0);
    for k in 0..3 {
        let mut y = x.clone();
        y[9 + k] = 1.0;
        assert!((t.inequality_violation(&y).amax() - 1.0).abs() < 1e-15);
    }
}

const ARM: &str = r#"
schema_version = 1
name = "arm"
gravity = 0.0

[[link]]
name = "base"
joint = "floating"
mass = 1.0e9
inertia = { ixx = 1.0e9, iyy = 1.0e9, izz = 1.0e9 }

[[link]]
name = "arm"
parent = "base"
joint = "revolute"
axis = [0.0, 1.0, 0.0]
mass = 2.0
com = [0.0, 0.0, -0.5]
inertia = { ixx = 1.0e-3, iyy = 1.0e-3, izz = 1.0e-3 }
limits = { q_min = -3.0, q_max = 3.0, v_max = 10.0, tau_min = -1.0e4, tau_max = 1.0e4 }
"#;

#[test]
fn closed_loop_step_response_matches_second_order_system() {
    let model = load_model(ARM).unwrap();
    let layout = DecisionLayout::for_model(&model);
    let (kp, kd): (f64, f64) = (100.0, 10.0);
    let target = DVector::from_element(1, 0.3);
    let mut state = GeneralizedState::zero(&model);
    let mut solver = HqpSolver::default();
    let dt = 1e-4;
    let steps = 10_000;
    // q̈ = kp (a − q) − kd q̇ from rest: ζ = 0.5, ω = 10
    let omega: f64 = kp.sqrt();
    let zeta = kd / (2.0 * omega);
    let wd = omega * (1.0 - zeta * zeta).sqrt();
    let analytic = |t: f64| 0.3 * (1.0 - (-zeta * omega * t).exp() * ((wd * t).cos() + zeta * omega / wd * (wd * t).sin()));
    let mut worst: f64 = 0.0;
    for k in 0..steps {
        let terms = compute_dynamics(&model, &state).unwrap();
        let tasks: Vec<Task> = vec![
            task_dynamic_consistency(&layout, &terms, &[]),
            task_joint_tracking(&layout, &target, &state, &DVector::from_element(1, kp), &DVector::from_element(1, kd)),
        ];
        let sol = solver.solve(&tasks, layout.dim()).unwrap();
        let qdd = sol.x.rows(0, layout.nv()).into_owned();
        // the joint follows the commanded acceleration through the torque
        let tau = sol.x[layout.tau().start];
        let forward = terms.mass_matrix.clone().cholesky().unwrap().solve(&{
            let mut g = -&terms.bias;
            g[6] += tau;
            g
        });
        assert!((forward[6] - qdd[6]).abs() < 1e-6 * (1.0 + qdd[6].abs()));
        state.v += &forward * dt;
        let v = state.v.clone();
        state.integrate_configuration(&v, dt);
        worst = worst.max((state.q[0] - analytic((k + 1) as f64 * dt)).abs());
    }
    assert!(worst < 1e-3, "max deviation {worst}");
}

#[test]
fn tasks_built_for_random_states_have_consistent_shapes() {
    let model = bundled_hexapod();
    let layout = DecisionLayout::for_model(&model);
    let mut rng = StdRng::seed_from_u64(9);
    for _ in 0..20 {
        let mut state = GeneralizedState::standing(&model, 0.16);
        for j in 0..18 {
            state.q[j] += rng.random_range(-0.2..0.2);
            state.v[6 + j] = rng.random_range(-1.0..1.0);
        }
        let contact: Vec<bool> = (0..6).map(|_| rng.random_bool(0.5)).collect();
        let terms = compute_dynamics(&model, &state).unwrap();
        let t5 = task_contact_motion(&layout, &terms, &contact);
        assert_eq!(t5.a.nrows(), 3 * contact.iter().filter(|&&c| c).count());
        let t2 = task_kinematic_limits_from_model(&layout, &model, &state, 0.02);
        assert_eq!(t2.d.shape(), (36, layout.dim()));
        let dm: DMatrix<f64> = t2.d.clone();
        assert!(dm.iter().all(|v| v.abs() == 1.0 || *v == 0.0));
    }
}
