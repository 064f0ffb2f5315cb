//! Closed-loop simulation: forward dynamics with terramechanics contact,
//! the whole-body follower at its control rate, trajectory recording and
//! safety metrics.
//!
//! Each physics step computes the dynamics at the current state, updates
//! per-foot contact bookkeeping, runs the follower on its ticks (torques are
//! held in between), resolves contact forces, then integrates: velocity
//! first, configuration with the mean of old and new velocity. The mean
//! makes constant-force motion exact, so free flight conserves energy to
//! round-off, and a stuck foot does not creep.

pub mod contact;
pub mod safety;
pub mod scenario;
pub mod trajectory;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{rngs::StdRng, Rng, SeedableRng};
use thiserror::Error;

use crate::dynamics::{applied_force, compute_dynamics, factor_mass, DynamicsError, DynamicsTerms, GeneralizedState};
use crate::follower::{joint_ranges, Command, ContactSource, Follower, FollowerError, FollowerOutput, GaitError, GaitGenerator};
use crate::model::RobotModel;
use crate::terrain::{update_contact_state, ContactPoint, TerrainParams};

pub use contact::{solve_contacts, ActiveContact, ContactSolution, ContactSolverOptions};
pub use safety::{measure_slip, measure_slip_with, stance_segments, SafetyReport, SafetyThresholds, StanceSlip};
pub use scenario::{CommandSegment, Overrides, Scenario, ScenarioError, BUNDLED_SCENARIOS};
pub use trajectory::{quaternion_of, TickRecord, Trajectory, TrajectoryError};

/// Generalized velocity magnitude treated as divergence.
pub const DIVERGENCE_SPEED: f64 = 1e3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error(transparent)]
    Follower(#[from] FollowerError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("numerical divergence at tick {tick} (t = {time:.3} s)")]
    NumericalDivergence { tick: usize, time: f64 },
    #[error("follower fell back on {failures} of {ticks} control ticks")]
    SolverFailureBudgetExceeded { failures: usize, ticks: usize },
}

/// One follower update as seen by the simulator.
#[derive(Debug, Clone)]
pub struct FollowerTick {
    pub tick: usize,
    pub time: f64,
    pub reference: DVector<f64>,
    pub output: FollowerOutput,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub report: SafetyReport,
    pub follower_log: Vec<FollowerTick>,
}

/// Forces produced by one physics step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// World-frame ground reaction force per foot.
    pub forces: Vec<Vector3<f64>>,
    pub contact: Vec<bool>,
    pub terms: DynamicsTerms,
}

pub struct Simulator {
    model: RobotModel,
    terrain: TerrainParams,
    dt: f64,
    state: GeneralizedState,
    contacts: Vec<Option<ContactPoint>>,
    normal_forces: Vec<f64>,
    contact_options: ContactSolverOptions,
}

impl Simulator {
    /// Robot in its nominal posture with the base `height` above the ground
    /// at the origin.
    pub fn new(model: RobotModel, terrain: TerrainParams, dt: f64, height: f64) -> Self {
        let ground = terrain.ground.height(0.0, 0.0);
        let state = GeneralizedState::standing(&model, ground + height);
        let c = model.n_feet();
        Self {
            model,
            terrain,
            dt,
            state,
            contacts: vec![None; c],
            normal_forces: vec![0.0; c],
            contact_options: ContactSolverOptions::default(),
        }
    }

    pub fn state(&self) -> &GeneralizedState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut GeneralizedState {
        &mut self.state
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    /// Normal force per foot from the last step.
    pub fn normal_forces(&self) -> &[f64] {
        &self.normal_forces
    }

    /// Dynamics at the current state plus refreshed contact bookkeeping.
    pub fn sense(&mut self) -> Result<(DynamicsTerms, Vec<bool>), SimError> {
        let terms = compute_dynamics(&self.model, &self.state)?;
        for i in 0..self.model.n_feet() {
            let p = terms.foot_position(i);
            let v = terms.foot_velocity(i);
            self.contacts[i] = update_contact_state(&self.terrain, &p, &v, self.contacts[i].as_ref(), self.dt);
        }
        let flags = self.contacts.iter().map(Option::is_some).collect();
        Ok((terms, flags))
    }

    /// Advances one physics step under joint torques `tau`, using dynamics
    /// `terms` from [`Simulator::sense`] at the current state.
    pub fn advance(&mut self, terms: &DynamicsTerms, tau: &DVector<f64>) -> Result<Vec<Vector3<f64>>, SimError> {
        let h = self.dt;
        let c = self.model.n_feet();
        let nv = self.model.nv();
        let chol = factor_mass(&terms.mass_matrix)?;
        let a_free = chol.solve(&applied_force(terms, tau, &DVector::zeros(3 * c)));
        let v_free = &self.state.v + &a_free * h;

        let active: Vec<ActiveContact> = (0..c)
            .filter_map(|i| self.contacts[i].map(|cp| ActiveContact::new(i, self.model.feet[i].radius, cp)))
            .collect();
        let mut forces = vec![Vector3::zeros(); c];
        let v_new = if active.is_empty() {
            v_free
        } else {
            let k = active.len();
            let mut jc = DMatrix::zeros(3 * k, nv);
            for (r, a) in active.iter().enumerate() {
                let rows = a.frame * terms.foot_jacobian.rows(3 * a.foot, 3);
                jc.rows_mut(3 * r, 3).copy_from(&rows);
            }
            let minv_jt = chol.solve(&jc.transpose());
            let g = (&jc * &minv_jt) * h;
            let u_free = &jc * &v_free;
            let sol = solve_contacts(&self.terrain, &active, &u_free, &g, h, &self.contact_options);
            let mut stacked = DVector::zeros(3 * k);
            for (r, a) in active.iter().enumerate() {
                stacked.fixed_rows_mut::<3>(3 * r).copy_from(&sol.local[r]);
                forces[a.foot] = sol.world_force(&active, r);
            }
            v_free + minv_jt * stacked * h
        };
        for i in 0..c {
            self.normal_forces[i] = self.contacts[i].map_or(0.0, |cp| cp.normal.dot(&forces[i]));
        }
        let mean = (&self.state.v + &v_new) * 0.5;
        self.state.integrate_configuration(&mean, h);
        self.state.v = v_new;
        Ok(forces)
    }

    /// Senses and advances in one call.
    pub fn step(&mut self, tau: &DVector<f64>) -> Result<StepOutcome, SimError> {
        let (terms, contact) = self.sense()?;
        let forces = self.advance(&terms, tau)?;
        Ok(StepOutcome { forces, contact, terms })
    }
}

fn approach(current: f64, target: f64, max_step: f64) -> f64 {
    current + (target - current).clamp(-max_step, max_step)
}

/// Feet the follower treats as stance. A grounded foot scheduled to swing is
/// released only once every scheduled-stance foot has touched down, so the
/// body is never left without support during the tripod handover.
pub fn contact_flags(sensed: &[bool], scheduled: &[bool]) -> Vec<bool> {
    let landed = sensed.iter().zip(scheduled).all(|(&s, &st)| s || !st);
    sensed.iter().zip(scheduled).map(|(&s, &st)| s && (st || !landed)).collect()
}

/// Runs a scenario to completion.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, SimError> {
    scenario.validate()?;
    let model = scenario.model.clone();
    let n = model.n_joints();
    let c = model.n_feet();
    let dt = scenario.physics_dt;
    let ratio = scenario.ticks_per_update()?;
    let gait = GaitGenerator::new(&model, scenario.gait.clone())?
        .with_joint_ranges(joint_ranges(&model, scenario.follower.hip_rom));
    let mut follower = Follower::new(model.clone(), scenario.follower.clone())?;
    let mut sim = Simulator::new(model.clone(), scenario.terrain.clone(), dt, scenario.initial_height);
    if scenario.initial_joint_noise > 0.0 {
        let mut rng = StdRng::seed_from_u64(scenario.seed);
        let a = scenario.initial_joint_noise;
        for j in 0..n {
            sim.state_mut().q[j] += rng.random_range(-a..=a);
        }
    }

    let mut trajectory = Trajectory::new(
        model.joints.iter().map(|j| j.name.clone()).collect(),
        model.feet.iter().map(|f| f.name.clone()).collect(),
    );
    let mut follower_log = Vec::new();
    let mut tau = DVector::zeros(n);
    let mut reference = DVector::from_vec(model.nominal_posture());
    let mut fallback = false;
    let mut failures = 0;
    let mut updates = 0;
    let mut cmd = Command::ZERO;
    let [lin_acc, yaw_acc] = scenario.command_accel;

    for tick in 0..scenario.n_ticks() {
        let t = tick as f64 * dt;
        let target = scenario.command_at(t);
        cmd = Command::new(
            approach(cmd.v_x, target.v_x, lin_acc * dt),
            approach(cmd.v_y, target.v_y, lin_acc * dt),
            approach(cmd.omega_z, target.omega_z, yaw_acc * dt),
        );
        let (terms, contact) = sim.sense()?;
        if tick % ratio == 0 {
            let sample = gait.sample(t, &cmd)?;
            reference = sample.joints.clone();
            let sensed: Vec<bool> = match scenario.follower.contact_source {
                ContactSource::Truth => contact.clone(),
                ContactSource::ForceThreshold(th) => sim.normal_forces().iter().map(|&f| f > th).collect(),
            };
            let flags = contact_flags(&sensed, &sample.stance);
            let normal = sim.normal_forces().to_vec();
            let out = follower.step(sim.state(), &reference, &flags, &scenario.terrain, &normal)?;
            tau = out.tau.clone();
            fallback = out.fell_back();
            failures += fallback as usize;
            updates += 1;
            follower_log.push(FollowerTick { tick, time: t, reference: reference.clone(), output: out });
        }
        let state = sim.state().clone();
        let forces = sim.advance(&terms, &tau)?;
        trajectory.ticks.push(TickRecord {
            time: t,
            base_position: state.base_position,
            base_orientation: quaternion_of(&state.base_rotation),
            q: state.q.iter().copied().collect(),
            v: state.v.iter().copied().collect(),
            tau: tau.iter().copied().collect(),
            reference: reference.iter().copied().collect(),
            forces,
            feet: (0..c).map(|i| terms.foot_position(i)).collect(),
            contact,
            fallback,
        });
        let v = &sim.state().v;
        if !v.iter().all(|x| x.is_finite()) || v.amax() > DIVERGENCE_SPEED {
            return Err(SimError::NumericalDivergence { tick, time: t });
        }
    }
    if failures as f64 > scenario.failure_budget * updates as f64 {
        return Err(SimError::SolverFailureBudgetExceeded { failures, ticks: updates });
    }
    let terrain = scenario.terrain.clone();
    let stances = measure_slip_with(&trajectory, safety::CONTACT_DEBOUNCE_TICKS, |p| terrain.ground.normal(p.x, p.y));
    let report = SafetyReport::from_trajectory(&model, &trajectory, scenario.safety, stances);
    Ok(RunOutput { trajectory, report, follower_log })
}
