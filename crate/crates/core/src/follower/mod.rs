//! Whole-body follower: one control tick turns a joint reference into joint
//! torques by solving the prioritized task stack.
//!
//! | priority | training       | deployment              |
//! |----------|----------------|-------------------------|
//! | 0        | T1, T2, T3     | T1, T2, T3              |
//! | 1        | T4             | T4                      |
//! | 2        |                | T5, T6                  |
//! | 3        |                | T7                      |

pub mod gait;

use std::f64::consts::PI;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{compute_dynamics, DynamicsError, DynamicsTerms, GeneralizedState};
use crate::hqp::{HqpError, HqpOptions, HqpSolver, LevelReport, Task};
use crate::model::RobotModel;
use crate::tasks::*;
use crate::terrain::TerrainParams;

pub use gait::{gait_reference, Command, GaitConfig, GaitError, GaitGenerator, GaitSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Training,
    Deployment,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "training" => Ok(Mode::Training),
            "deployment" => Ok(Mode::Deployment),
            other => Err(format!("unknown mode `{other}` (expected training or deployment)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Training => "training",
            Mode::Deployment => "deployment",
        })
    }
}

/// Where stance flags for constraint building come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactSource {
    /// Simulator ground truth.
    Truth,
    /// Simulated normal force above this threshold (N).
    ForceThreshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowerConfig {
    pub mode: Mode,
    pub kp: DVector<f64>,
    pub kd: DVector<f64>,
    /// Control rate (Hz).
    pub rate: f64,
    /// Friction coefficient used in the force constraints; `None` takes the
    /// terrain's own value.
    pub mu: Option<f64>,
    /// Include the friction-pyramid rows of the foot-terrain force task.
    pub friction_constraint: bool,
    pub xi_xy_max: f64,
    pub delta_max: f64,
    /// Total hip-yaw range of motion centred on the nominal angle (rad).
    pub hip_rom: Option<f64>,
    pub contact_source: ContactSource,
}

pub const DEFAULT_KP: f64 = 100.0;
pub const DEFAULT_KD: f64 = 10.0;
pub const TRAINING_RATE: f64 = 50.0;
pub const DEPLOYMENT_RATE: f64 = 500.0;

/// Tie-break weight on the six base accelerations relative to the other
/// decision variables. With unit weights the cheapest way to satisfy the
/// dynamics without a contact task is a free-falling base with near-zero
/// contact forces; this weight makes carrying the body on the feet cheaper.
pub const BASE_ACCELERATION_TIE_BREAK: f64 = 1e4;

impl FollowerConfig {
    /// Defaults: gains 100/10, 50 Hz, terrain μ, ξ_xy_max = 4 mm, δ_max = 5 mm.
    pub fn new(model: &RobotModel, mode: Mode) -> Self {
        let n = model.n_joints();
        Self {
            mode,
            kp: DVector::from_element(n, DEFAULT_KP),
            kd: DVector::from_element(n, DEFAULT_KD),
            rate: TRAINING_RATE,
            mu: None,
            friction_constraint: true,
            xi_xy_max: 0.004,
            delta_max: 0.005,
            hip_rom: None,
            contact_source: ContactSource::Truth,
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn validate(&self, model: &RobotModel) -> Result<(), FollowerError> {
        let n = model.n_joints();
        if self.kp.len() != n || self.kd.len() != n {
            return Err(FollowerError::Config(format!("gain vectors must have {n} entries")));
        }
        if self.kp.iter().chain(self.kd.iter()).any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(FollowerError::Config("gains must be finite and non-negative".into()));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(FollowerError::Config("control rate must be positive".into()));
        }
        if let Some(mu) = self.mu {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(FollowerError::Config("mu override must be non-negative".into()));
            }
        }
        if !(self.xi_xy_max >= 0.0) || !(self.delta_max >= 0.0) {
            return Err(FollowerError::Config("xi_xy_max and delta_max must be non-negative".into()));
        }
        if let Some(rom) = self.hip_rom {
            if !(rom > 0.0 && rom < 2.0 * PI) {
                return Err(FollowerError::Config("hip ROM must lie in (0, 2π)".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum FollowerError {
    #[error("follower config invalid: {0}")]
    Config(String),
    #[error("{what} has length {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("reference for joint {joint} is {offset} rad away from the measured angle")]
    ReferenceOutOfRange { joint: usize, offset: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Result of one control tick.
#[derive(Debug, Clone)]
pub struct FollowerOutput {
    /// Joint torques to apply.
    pub tau: DVector<f64>,
    /// Full decision vector `[q̈, F, τ]`; zero when the tick fell back.
    pub x: DVector<f64>,
    pub qdd: DVector<f64>,
    pub forces: DVector<f64>,
    pub levels: Vec<LevelReport>,
    /// Stance flags the constraints were built with.
    pub contact: Vec<bool>,
    /// Force bounds behind the foot-terrain rows, when that task was built.
    pub bounds: Option<FootForceBounds>,
    /// Cascade failure that triggered the damping fallback.
    pub failure: Option<HqpError>,
}

impl FollowerOutput {
    pub fn fell_back(&self) -> bool {
        self.failure.is_some()
    }
}

/// Joint position ranges after applying a hip range-of-motion override.
pub fn joint_ranges(model: &RobotModel, hip_rom: Option<f64>) -> Vec<(f64, f64)> {
    let mut ranges: Vec<(f64, f64)> = model.joints.iter().map(|j| (j.limits.q_min, j.limits.q_max)).collect();
    if let Some(rom) = hip_rom {
        for leg in &model.legs {
            let j = leg.joints[0];
            let nominal = model.joints[j].nominal;
            let (lo, hi) = ranges[j];
            ranges[j] = (lo.max(nominal - 0.5 * rom), hi.min(nominal + 0.5 * rom));
        }
    }
    ranges
}

/// Inputs shared by the task builders for one tick.
pub struct TickInputs<'a> {
    pub state: &'a GeneralizedState,
    pub terms: &'a DynamicsTerms,
    pub reference: &'a DVector<f64>,
    pub contact: &'a [bool],
    pub terrain: &'a TerrainParams,
    /// Latest normal-force estimate per foot.
    pub normal_forces: &'a [f64],
}

pub struct Follower {
    model: RobotModel,
    config: FollowerConfig,
    layout: DecisionLayout,
    ranges: Vec<(f64, f64)>,
    radii: Vec<f64>,
    solver: HqpSolver,
}

impl Follower {
    pub fn new(model: RobotModel, config: FollowerConfig) -> Result<Self, FollowerError> {
        config.validate(&model)?;
        let layout = DecisionLayout::for_model(&model);
        let ranges = joint_ranges(&model, config.hip_rom);
        let radii = model.feet.iter().map(|f| f.radius).collect();
        let mut weights = DVector::from_element(layout.dim(), 1.0);
        weights.rows_mut(0, 6).fill(BASE_ACCELERATION_TIE_BREAK);
        let options = HqpOptions { tie_break_weights: Some(weights), ..HqpOptions::default() };
        Ok(Self { model, config, layout, ranges, radii, solver: HqpSolver::new(options) })
    }

    pub fn config(&self) -> &FollowerConfig {
        &self.config
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn layout(&self) -> DecisionLayout {
        self.layout
    }

    /// Effective joint ranges used by the kinematic-limit task.
    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    /// Terrain parameters as seen by the constraints (μ override applied).
    pub fn constraint_terrain(&self, terrain: &TerrainParams) -> TerrainParams {
        let mut t = terrain.clone();
        if let Some(mu) = self.config.mu {
            t.mu = mu;
        }
        t
    }

    /// Force bounds for the current contact set, with terrain normals at the
    /// feet.
    pub fn force_bounds(&self, inputs: &TickInputs) -> FootForceBounds {
        let terrain = self.constraint_terrain(inputs.terrain);
        let mut bounds = compute_force_bounds(
            &terrain,
            &self.radii,
            inputs.contact,
            inputs.normal_forces,
            self.config.xi_xy_max,
            self.config.delta_max,
        );
        bounds.normals = (0..self.model.n_feet())
            .map(|i| {
                let p: Vector3<f64> = inputs.terms.foot_position(i);
                terrain.ground.normal(p.x, p.y)
            })
            .collect();
        bounds
    }

    /// Task stack for the configured mode.
    pub fn build_tasks(&self, inputs: &TickInputs) -> (Vec<Task>, Option<FootForceBounds>) {
        let l = &self.layout;
        let mut tasks = vec![
            task_dynamic_consistency(l, inputs.terms, inputs.contact),
            task_kinematic_limits(l, &self.ranges, inputs.state, self.config.period()),
            task_torque_limits(l, &self.model),
            task_joint_tracking(l, inputs.reference, inputs.state, &self.config.kp, &self.config.kd),
        ];
        let mut bounds = None;
        if self.config.mode == Mode::Deployment {
            tasks.push(task_contact_motion(l, inputs.terms, inputs.contact));
            let mut b = self.force_bounds(inputs);
            b.friction = self.config.friction_constraint;
            tasks.push(task_ft_interaction(l, &b, inputs.contact));
            bounds = Some(b);
            tasks.push(task_body_stabilization(l));
        }
        (tasks, bounds)
    }

    /// Damping-only torque `−k_d∘q̇`, clipped to the actuator limits.
    pub fn fallback_torque(&self, state: &GeneralizedState) -> DVector<f64> {
        let mut tau = -self.config.kd.component_mul(&state.qdot());
        for (j, joint) in self.model.joints.iter().enumerate() {
            tau[j] = tau[j].clamp(joint.limits.tau_min, joint.limits.tau_max);
        }
        tau
    }

    /// One control tick. `normal_forces` feeds the tangential-cap estimate
    /// reported in the force bounds.
    pub fn step(
        &mut self,
        state: &GeneralizedState,
        reference: &DVector<f64>,
        contact: &[bool],
        terrain: &TerrainParams,
        normal_forces: &[f64],
    ) -> Result<FollowerOutput, FollowerError> {
        let n = self.model.n_joints();
        let c = self.model.n_feet();
        if reference.len() != n {
            return Err(FollowerError::DimensionMismatch { what: "reference", expected: n, got: reference.len() });
        }
        if contact.len() != c {
            return Err(FollowerError::DimensionMismatch { what: "contact flags", expected: c, got: contact.len() });
        }
        if normal_forces.len() != c {
            return Err(FollowerError::DimensionMismatch { what: "normal forces", expected: c, got: normal_forces.len() });
        }
        for j in 0..n {
            let offset = reference[j] - state.q[j];
            if !(offset.abs() <= 2.0 * PI) {
                return Err(FollowerError::ReferenceOutOfRange { joint: j, offset });
            }
        }
        let terms = compute_dynamics(&self.model, state)?;
        let inputs = TickInputs { state, terms: &terms, reference, contact, terrain, normal_forces };
        let (tasks, bounds) = self.build_tasks(&inputs);
        let solved = self.solver.solve(&tasks, self.layout.dim()).and_then(|sol| {
            if sol.x.iter().all(|v| v.is_finite()) {
                Ok(sol)
            } else {
                Err(HqpError::Qp(crate::qp::QpError::NonFinite))
            }
        });
        let contact = contact.to_vec();
        Ok(match solved {
            Ok(sol) => {
                let (qdd, forces, tau) = self.layout.split(&sol.x);
                FollowerOutput { tau, x: sol.x, qdd, forces, levels: sol.levels, contact, bounds, failure: None }
            }
            Err(e) => {
                log::warn!("whole-body follower fell back to damping: {e}");
                self.solver.reset();
                let d = self.layout.dim();
                FollowerOutput {
                    tau: self.fallback_torque(state),
                    x: DVector::zeros(d),
                    qdd: DVector::zeros(self.layout.nv()),
                    forces: DVector::zeros(3 * c),
                    levels: Vec::new(),
                    contact,
                    bounds,
                    failure: Some(e),
                }
            }
        })
    }
}
