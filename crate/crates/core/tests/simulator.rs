use nalgebra::DVector;
use wbc_core::dynamics::energy;
use wbc_core::experiment::RunMetrics;
use wbc_core::model::bundled_hexapod;
use wbc_core::sim::{run_scenario, Overrides, Scenario, Simulator, SimError};
use wbc_core::terrain::TerrainParams;

fn csv_bytes(s: &Scenario) -> Vec<u8> {
    let out = run_scenario(s).unwrap();
    let mut buf = Vec::new();
    out.trajectory.write_csv(&mut buf).unwrap();
    buf
}

#[test]
fn free_fall_follows_gravity_and_keeps_energy() {
    let model = bundled_hexapod();
    let dt = 0.005;
    let mut sim = Simulator::new(model.clone(), TerrainParams::flat(), dt, 10.0);
    let (k0, p0) = energy(&model, sim.state()).unwrap();
    let z0 = sim.state().base_position.z;
    let tau = DVector::zeros(model.n_joints());
    let steps = (1.0 / dt) as usize;
    for k in 1..=steps {
        let out = sim.step(&tau).unwrap();
        assert!(out.forces.iter().all(|f| f.norm() == 0.0));
        let t = k as f64 * dt;
        let z = sim.state().base_position.z;
        assert!((z - (z0 - 0.5 * 9.81 * t * t)).abs() < 1e-4, "t {t}: z {z}");
    }
    let (k1, p1) = energy(&model, sim.state()).unwrap();
    assert!(((k1 + p1) - (k0 + p0)).abs() <= 1e-4);
}

#[test]
fn identical_scenarios_give_identical_trajectories() {
    let mut s = Scenario::bundled("walk_flat").unwrap();
    s.apply(&Overrides { duration: Some(0.5), ..Default::default() }).unwrap();
    s.initial_joint_noise = 0.01;
    assert_eq!(csv_bytes(&s), csv_bytes(&s));
    let mut other = s.clone();
    other.seed += 1;
    assert_ne!(csv_bytes(&s), csv_bytes(&other));
}

#[test]
fn standing_has_no_safety_events() {
    let s = Scenario::bundled("standing").unwrap();
    let out = run_scenario(&s).unwrap();
    let r = &out.report;
    assert_eq!((r.slip_events, r.torque_events, r.collision_events), (0, 0, 0), "{}", r.to_text());
    assert_eq!(r.fallback_ticks, 0);
}

#[test]
fn follower_runs_every_ratio_ticks() {
    for (rate, dt, ratio) in [(50.0, 0.005, 4), (100.0, 0.001, 10), (500.0, 0.002, 1)] {
        let mut s = Scenario::bundled("standing").unwrap();
        let o = Overrides { duration: Some(0.2), rate: Some(rate), physics_dt: Some(dt), ..Default::default() };
        s.apply(&o).unwrap();
        assert_eq!(s.ticks_per_update().unwrap(), ratio);
        let out = run_scenario(&s).unwrap();
        let ticks: Vec<usize> = out.follower_log.iter().map(|f| f.tick).collect();
        assert_eq!(ticks, (0..s.n_ticks()).step_by(ratio).collect::<Vec<_>>());
        // zero-order hold: torque changes only on follower ticks
        for w in out.trajectory.ticks.windows(2).enumerate() {
            let (k, pair) = w;
            if (k + 1) % ratio != 0 {
                assert_eq!(pair[0].tau, pair[1].tau);
            }
        }
    }
}

#[test]
fn contact_forces_push_and_only_through_contact() {
    let mut s = Scenario::bundled("walk_flat").unwrap();
    s.apply(&Overrides { duration: Some(2.0), ..Default::default() }).unwrap();
    let out = run_scenario(&s).unwrap();
    for t in &out.trajectory.ticks {
        for (i, f) in t.forces.iter().enumerate() {
            let n = s.terrain.ground.normal(t.feet[i].x, t.feet[i].y);
            assert!(f.dot(&n) >= 0.0, "t {}: foot {i} pulls: {f}", t.time);
            if !t.contact[i] {
                assert_eq!(f.norm(), 0.0, "t {}: airborne foot {i} has force {f}", t.time);
            }
        }
    }
}

#[test]
fn flat_walk_advances_and_tracks() {
    let s = Scenario::bundled("walk_flat").unwrap();
    let out = run_scenario(&s).unwrap();
    let m = RunMetrics::compute("walk", "", "", &s, &out.trajectory);
    assert!((m.distance - 3.0).abs() <= 0.5, "distance {}", m.distance);
    assert_eq!(out.report.torque_events, 0);
    assert!(m.mean_tracking_error < 0.05, "tracking {}", m.mean_tracking_error);
    // hard rows hold at every solved tick
    for f in &out.follower_log {
        if f.output.fell_back() {
            continue;
        }
        let hard = &f.output.levels[0];
        assert!(!hard.relaxed && hard.inequality_residual <= 1e-8, "tick {}", f.tick);
        for (j, joint) in s.model.joints.iter().enumerate() {
            let tau = f.output.tau[j];
            assert!(tau <= joint.limits.tau_max + 1e-8 && tau >= joint.limits.tau_min - 1e-8);
        }
    }
}

#[test]
fn divergence_is_reported_with_its_tick() {
    let mut s = Scenario::bundled("standing").unwrap();
    s.apply(&Overrides { duration: Some(1.0), ..Default::default() }).unwrap();
    // a huge stiff floor launched from deep penetration blows up
    s.initial_height = 0.0;
    s.terrain.k_phi *= 1e9;
    s.terrain.k_c *= 1e9;
    match run_scenario(&s) {
        Err(SimError::NumericalDivergence { tick, time }) => assert!((time - tick as f64 * s.physics_dt).abs() < 1e-12),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.report.to_text())),
    }
}
