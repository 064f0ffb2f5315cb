//! Scripted tripod gait standing in for a learned locomotion policy.
//!
//! Foot targets are generated in the body frame. Stance feet move against
//! the commanded body twist, swing feet return along a minimum-jerk profile
//! with a smooth lift, and each leg's joint reference comes from closed-form
//! inverse kinematics of a yaw–pitch–pitch leg.
//!
//! Given joint ranges, the stride is shortened until every joint reference
//! over the whole cycle stays inside them; the body then moves slower than
//! commanded rather than asking for motions the follower must refuse.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{foot_positions, GeneralizedState};
use crate::model::{JointKind, RobotModel};

#[derive(Debug, Error, PartialEq)]
pub enum GaitError {
    #[error("leg {leg}: {reason}")]
    UnsupportedLeg { leg: String, reason: String },
    #[error("gait config invalid: {0}")]
    InvalidConfig(String),
    #[error("command {0:?} exceeds the configured caps")]
    CommandOutOfRange([f64; 3]),
}

/// Body-frame twist command `(v_x, v_y, ω_z)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub v_x: f64,
    pub v_y: f64,
    pub omega_z: f64,
}

impl Command {
    pub const ZERO: Command = Command { v_x: 0.0, v_y: 0.0, omega_z: 0.0 };

    pub fn new(v_x: f64, v_y: f64, omega_z: f64) -> Self {
        Self { v_x, v_y, omega_z }
    }

    pub fn is_zero(&self) -> bool {
        self.v_x == 0.0 && self.v_y == 0.0 && self.omega_z == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitConfig {
    /// Full gait cycle (s).
    pub period: f64,
    /// Peak swing lift (m).
    pub step_height: f64,
    /// Feet lift fully once the command's foot speed reaches this (m/s).
    pub lift_speed: f64,
    pub max_linear_speed: f64,
    pub max_yaw_rate: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        Self { period: 0.5, step_height: 0.04, lift_speed: 0.05, max_linear_speed: 1.5, max_yaw_rate: 2.0 }
    }
}

impl GaitConfig {
    pub fn validate(&self) -> Result<(), GaitError> {
        let positive = [("period", self.period), ("lift_speed", self.lift_speed)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GaitError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.step_height >= 0.0) || !(self.max_linear_speed >= 0.0) || !(self.max_yaw_rate >= 0.0) {
            return Err(GaitError::InvalidConfig("step_height and caps must be non-negative".into()));
        }
        Ok(())
    }
}

/// Geometry of one yaw–pitch–pitch leg, extracted from the model.
#[derive(Debug, Clone)]
struct LegGeometry {
    joints: [usize; 3],
    hip_origin: Vector3<f64>,
    hip_rotation: Matrix3<f64>,
    coxa: f64,
    femur: f64,
    tibia: f64,
    group: usize,
}

/// Result of inverse kinematics for one leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegSolution {
    pub angles: [f64; 3],
    /// The target lay outside the workspace and was pulled onto its boundary.
    pub out_of_reach: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitSample {
    /// Joint reference `a_t`.
    pub joints: DVector<f64>,
    /// Body-frame foot targets.
    pub feet: Vec<Vector3<f64>>,
    /// Scheduled stance flags.
    pub stance: Vec<bool>,
    /// Legs whose target was clamped to the workspace.
    pub out_of_reach: Vec<bool>,
    /// Fraction of the commanded stride in use (1 unless joint ranges bind).
    pub stride_scale: f64,
}

impl GaitSample {
    pub fn any_out_of_reach(&self) -> bool {
        self.out_of_reach.iter().any(|&b| b)
    }
}

#[derive(Debug, Clone)]
pub struct GaitGenerator {
    config: GaitConfig,
    legs: Vec<LegGeometry>,
    nominal_feet: Vec<Vector3<f64>>,
    nominal: DVector<f64>,
    ranges: Option<Vec<(f64, f64)>>,
}

/// Fraction of each joint range's half-width kept clear by the references.
pub const RANGE_MARGIN: f64 = 0.1;

/// Phase samples per cycle when checking references against joint ranges.
const RANGE_SAMPLES: usize = 16;

fn along_x(v: &Vector3<f64>) -> bool {
    v.y.abs() <= 1e-12 && v.z.abs() <= 1e-12 && v.x > 0.0
}

fn min_jerk(u: f64) -> f64 {
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

impl GaitGenerator {
    pub fn new(model: &RobotModel, config: GaitConfig) -> Result<Self, GaitError> {
        config.validate()?;
        let mut legs = Vec::with_capacity(model.legs.len());
        for leg in &model.legs {
            let bad = |reason: &str| GaitError::UnsupportedLeg { leg: leg.name.clone(), reason: reason.into() };
            let links: Vec<&crate::model::Link> = leg.joints.iter().map(|&j| &model.links[model.joints[j].link]).collect();
            let foot = &model.feet[leg.foot];
            let expected_axes = [Vector3::z(), Vector3::y(), Vector3::y()];
            for (l, axis) in links.iter().zip(expected_axes) {
                match l.joint {
                    JointKind::Revolute { axis: a } if (a - axis).norm() <= 1e-12 => {}
                    _ => return Err(bad("expects yaw, pitch, pitch joint axes")),
                }
            }
            if links[0].parent != Some(0) {
                return Err(bad("hip must attach to the base"));
            }
            let leg_links = [model.joints[leg.joints[0]].link, model.joints[leg.joints[1]].link, model.joints[leg.joints[2]].link];
            if links[1].parent != Some(leg_links[0]) || links[2].parent != Some(leg_links[1]) || foot.link != leg_links[2] {
                return Err(bad("joints must form a chain ending at the foot"));
            }
            for l in &links[1..] {
                if !along_x(&l.origin_xyz) || l.origin_rpy.norm() > 1e-12 {
                    return Err(bad("segments must lie along the link x axis"));
                }
            }
            if !along_x(&foot.offset) {
                return Err(bad("foot offset must lie along the tibia x axis"));
            }
            legs.push(LegGeometry {
                joints: leg.joints,
                hip_origin: links[0].origin_xyz,
                hip_rotation: links[0].origin_rot,
                coxa: links[1].origin_xyz.x,
                femur: links[2].origin_xyz.x,
                tibia: foot.offset.x,
                group: leg.group,
            });
        }
        let nominal = DVector::from_vec(model.nominal_posture());
        let mut at_origin = GeneralizedState::zero(model);
        at_origin.q = nominal.clone();
        let all_feet = foot_positions(model, &at_origin);
        let nominal_feet = model.legs.iter().map(|l| all_feet[l.foot]).collect();
        Ok(Self { config, legs, nominal_feet, nominal, ranges: None })
    }

    /// Keeps joint references inside `ranges` (one per model joint), less
    /// [`RANGE_MARGIN`], by shortening the stride.
    pub fn with_joint_ranges(mut self, ranges: Vec<(f64, f64)>) -> Self {
        self.ranges = Some(ranges);
        self
    }

    pub fn config(&self) -> &GaitConfig {
        &self.config
    }

    /// Body-frame foot positions of the nominal posture, one per leg.
    pub fn nominal_feet(&self) -> &[Vector3<f64>] {
        &self.nominal_feet
    }

    /// Closed-form inverse kinematics of leg `leg` for a body-frame target.
    /// Targets outside the annular workspace are projected onto it.
    pub fn inverse_kinematics(&self, leg: usize, target: &Vector3<f64>) -> LegSolution {
        let g = &self.legs[leg];
        let p = g.hip_rotation.transpose() * (target - g.hip_origin);
        let yaw = p.y.atan2(p.x);
        let r = p.x.hypot(p.y) - g.coxa;
        let down = -p.z;
        let (l2, l3) = (g.femur, g.tibia);
        let cos_knee = (r * r + down * down - l2 * l2 - l3 * l3) / (2.0 * l2 * l3);
        let out_of_reach = !(-1.0..=1.0).contains(&cos_knee);
        let knee = cos_knee.clamp(-1.0, 1.0).acos();
        let pitch = down.atan2(r) - (l3 * knee.sin()).atan2(l2 + l3 * knee.cos());
        LegSolution { angles: [yaw, pitch, knee], out_of_reach }
    }

    /// Body-frame foot position for leg joint angles.
    pub fn forward_kinematics(&self, leg: usize, angles: &[f64; 3]) -> Vector3<f64> {
        let g = &self.legs[leg];
        let [yaw, pitch, knee] = *angles;
        let reach = g.coxa + g.femur * pitch.cos() + g.tibia * (pitch + knee).cos();
        let z = -(g.femur * pitch.sin() + g.tibia * (pitch + knee).sin());
        g.hip_origin + g.hip_rotation * Vector3::new(reach * yaw.cos(), reach * yaw.sin(), z)
    }

    /// Body-frame target of leg `i` at cycle phase `phase` (stance while
    /// below one half) for body twist `cmd` scaled by `scale`.
    fn leg_target(&self, i: usize, phase: f64, cmd: &Command, scale: f64) -> Vector3<f64> {
        let c = &self.config;
        let p0 = self.nominal_feet[i];
        // ground velocity seen from the body at this foot
        let foot_speed = Vector3::new(cmd.v_x - cmd.omega_z * p0.y, cmd.v_y + cmd.omega_z * p0.x, 0.0) * scale;
        let stride = foot_speed * (0.5 * c.period);
        let lift = c.step_height * (foot_speed.norm() / c.lift_speed).min(1.0);
        if phase < 0.5 {
            p0 + stride * (0.5 - phase / 0.5)
        } else {
            let u = (phase - 0.5) / 0.5;
            let bump = 16.0 * u * u * (1.0 - u) * (1.0 - u);
            p0 + stride * (min_jerk(u) - 0.5) + Vector3::z() * (lift * bump)
        }
    }

    fn stride_fits(&self, ranges: &[(f64, f64)], cmd: &Command, scale: f64) -> bool {
        (0..self.legs.len()).all(|i| {
            let g = &self.legs[i];
            (0..=RANGE_SAMPLES).all(|k| {
                let sol = self.inverse_kinematics(i, &self.leg_target(i, k as f64 / RANGE_SAMPLES as f64, cmd, scale));
                !sol.out_of_reach
                    && g.joints.iter().zip(sol.angles).all(|(&j, a)| {
                        let (lo, hi) = ranges[j];
                        let margin = RANGE_MARGIN * 0.5 * (hi - lo);
                        a >= lo + margin && a <= hi - margin
                    })
            })
        })
    }

    /// Largest fraction of the commanded stride whose references stay inside
    /// the joint ranges (1 without ranges).
    pub fn stride_scale(&self, cmd: &Command) -> f64 {
        let Some(ranges) = &self.ranges else { return 1.0 };
        if cmd.is_zero() || self.stride_fits(ranges, cmd, 1.0) {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            if self.stride_fits(ranges, cmd, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Reference at time `t` for body twist `cmd`.
    pub fn sample(&self, t: f64, cmd: &Command) -> Result<GaitSample, GaitError> {
        let c = &self.config;
        if cmd.v_x.hypot(cmd.v_y) > c.max_linear_speed + 1e-12 || cmd.omega_z.abs() > c.max_yaw_rate + 1e-12 {
            return Err(GaitError::CommandOutOfRange([cmd.v_x, cmd.v_y, cmd.omega_z]));
        }
        let n_legs = self.legs.len();
        let scale = self.stride_scale(cmd);
        let mut joints = self.nominal.clone();
        let mut feet = Vec::with_capacity(n_legs);
        let mut stance = Vec::with_capacity(n_legs);
        let mut out_of_reach = Vec::with_capacity(n_legs);
        for (i, g) in self.legs.iter().enumerate() {
            let phase = (t / c.period + 0.5 * g.group as f64).rem_euclid(1.0);
            let target = self.leg_target(i, phase, cmd, scale);
            let sol = if cmd.is_zero() {
                LegSolution { angles: [self.nominal[g.joints[0]], self.nominal[g.joints[1]], self.nominal[g.joints[2]]], out_of_reach: false }
            } else {
                self.inverse_kinematics(i, &target)
            };
            for k in 0..3 {
                joints[g.joints[k]] = sol.angles[k];
            }
            feet.push(target);
            stance.push(phase < 0.5 || cmd.is_zero());
            out_of_reach.push(sol.out_of_reach);
        }
        Ok(GaitSample { joints, feet, stance, out_of_reach, stride_scale: scale })
    }
}

/// Joint reference of the default tripod gait for `model`.
pub fn gait_reference(t: f64, command: &Command, model: &RobotModel) -> Result<DVector<f64>, GaitError> {
    Ok(GaitGenerator::new(model, GaitConfig::default())?.sample(t, command)?.joints)
}
