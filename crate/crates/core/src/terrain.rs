//! Terramechanics foot-terrain interaction.
//!
//! Normal force follows a Bekker-type pressure-sinkage law with damping,
//! tangential force a Janosi-type shear law whose logistic factor saturates
//! at the Coulomb-plus-cohesion cap:
//!
//! ```text
//! F_N = πR²(k_c/R + k_φ) δ^m + b_N δ̇                      (clamped at 0)
//! F_T = (πR²a + μ F_N) (1 − e^{−1.43ξ/K}) / (1 + e^{−1.43ξ/K}) + b_T ξ̇
//! ```

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Tangential speed below which the slip direction is held from the
/// previous step.
pub const SLIP_DIRECTION_HOLD_SPEED: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TerrainError {
    #[error("invalid terrain parameter {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown terrain preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundProfile {
    Flat { height: f64 },
    /// Plane through the origin rising along +x.
    Slope { angle: f64 },
    /// Staircase rising along +x, first riser at `start`.
    Stairs { rise: f64, run: f64, start: f64 },
}

impl GroundProfile {
    pub fn height(&self, x: f64, _y: f64) -> f64 {
        match *self {
            GroundProfile::Flat { height } => height,
            GroundProfile::Slope { angle } => angle.tan() * x,
            GroundProfile::Stairs { rise, run, start } => {
                if x < start {
                    0.0
                } else {
                    rise * (((x - start) / run).floor() + 1.0)
                }
            }
        }
    }

    /// Height gradient (∂z/∂x, ∂z/∂y).
    pub fn gradient(&self, _x: f64, _y: f64) -> Vector2<f64> {
        match *self {
            GroundProfile::Slope { angle } => Vector2::new(angle.tan(), 0.0),
            _ => Vector2::zeros(),
        }
    }

    /// Outward unit normal.
    pub fn normal(&self, x: f64, y: f64) -> Vector3<f64> {
        let g = self.gradient(x, y);
        Vector3::new(-g.x, -g.y, 1.0).normalize()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainParams {
    /// Cohesion modulus k_c.
    pub k_c: f64,
    /// Internal friction modulus k_φ.
    pub k_phi: f64,
    pub b_n: f64,
    /// Cohesion stress a (Pa).
    pub cohesion: f64,
    pub mu: f64,
    /// Shear deformation modulus K (m).
    pub shear_modulus: f64,
    pub b_t: f64,
    /// Sinkage exponent m.
    pub sinkage_exponent: f64,
    pub ground: GroundProfile,
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self::flat()
    }
}

impl TerrainParams {
    /// Stiff, high-friction ground with negligible sinkage.
    pub fn flat() -> Self {
        Self {
            k_c: 1.0e5,
            k_phi: 7.5e7,
            b_n: 1500.0,
            cohesion: 0.0,
            mu: 0.8,
            shear_modulus: 1.0e-3,
            b_t: 50.0,
            sinkage_exponent: 1.0,
            ground: GroundProfile::Flat { height: 0.0 },
        }
    }

    pub fn low_friction(mu: f64) -> Self {
        Self { mu, ..Self::flat() }
    }

    pub fn slope(angle: f64) -> Self {
        Self { ground: GroundProfile::Slope { angle }, ..Self::flat() }
    }

    pub fn stairs(rise: f64, run: f64) -> Self {
        Self { ground: GroundProfile::Stairs { rise, run, start: 0.3 }, ..Self::flat() }
    }

    /// Builds a preset by name: `flat`, `low_friction`, `slope`, `stairs`.
    /// `arg` supplies μ, angle (rad), or (rise, run) respectively.
    pub fn preset(name: &str, args: &[f64]) -> Result<Self, TerrainError> {
        let get = |i: usize, default: f64| args.get(i).copied().unwrap_or(default);
        let p = match name {
            "flat" => Self::flat(),
            "low_friction" => Self::low_friction(get(0, 0.3)),
            "slope" => Self::slope(get(0, 0.1)),
            "stairs" => Self::stairs(get(0, 0.03), get(1, 0.3)),
            other => return Err(TerrainError::UnknownPreset(other.to_string())),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TerrainError> {
        let positive = [("k_c", self.k_c), ("k_phi", self.k_phi), ("shear_modulus", self.shear_modulus), ("sinkage_exponent", self.sinkage_exponent)];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TerrainError::Invalid { field, reason: format!("must be > 0, got {v}") });
            }
        }
        let nonneg = [("b_n", self.b_n), ("b_t", self.b_t), ("cohesion", self.cohesion), ("mu", self.mu)];
        for (field, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TerrainError::Invalid { field, reason: format!("must be >= 0, got {v}") });
            }
        }
        Ok(())
    }

    /// Combined sinkage stiffness πR²(k_c/R + k_φ).
    pub fn sinkage_stiffness(&self, radius: f64) -> f64 {
        PI * radius * radius * (self.k_c / radius + self.k_phi)
    }

    /// Normal force for penetration `delta` and penetration rate `rate`.
    pub fn normal_force(&self, radius: f64, delta: f64, rate: f64) -> f64 {
        let d = delta.max(0.0);
        (self.sinkage_stiffness(radius) * d.powf(self.sinkage_exponent) + self.b_n * rate).max(0.0)
    }

    /// Logistic shear factor `(1 − e^{−1.43ξ/K}) / (1 + e^{−1.43ξ/K})`.
    pub fn shear_factor(&self, xi: f64) -> f64 {
        let e = (-1.43 * xi / self.shear_modulus).exp();
        (1.0 - e) / (1.0 + e)
    }

    /// Static part of the tangential force, `(πR²a + μF_N)·s(ξ)`.
    pub fn static_shear(&self, radius: f64, f_n: f64, xi: f64) -> f64 {
        (PI * radius * radius * self.cohesion + self.mu * f_n) * self.shear_factor(xi)
    }
}

/// Contact bookkeeping for one foot while it touches the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPoint {
    /// Penetration depth δ (m).
    pub delta: f64,
    /// Penetration rate δ̇ (m/s).
    pub delta_rate: f64,
    /// Tangential path length since touchdown ξ (m).
    pub xi: f64,
    /// Tangential slip speed ξ̇ (m/s).
    pub xi_rate: f64,
    /// Unit slip direction in the tangent plane.
    pub slip_direction: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// Foot position at this update, for path accumulation.
    pub position: Vector3<f64>,
}

/// Normal and tangential force magnitudes for a contact point.
pub fn contact_force(params: &TerrainParams, radius: f64, cp: &ContactPoint) -> (f64, f64) {
    let f_n = params.normal_force(radius, cp.delta, cp.delta_rate);
    let f_t = params.static_shear(radius, f_n, cp.xi) + params.b_t * cp.xi_rate.abs();
    (f_n, f_t)
}

/// World-frame force vector: `F_N` along the normal plus `F_T` against the
/// slip direction.
pub fn contact_force_vector(params: &TerrainParams, radius: f64, cp: &ContactPoint) -> Vector3<f64> {
    let (f_n, f_t) = contact_force(params, radius, cp);
    cp.normal * f_n - cp.slip_direction * f_t
}

/// Advances the contact state of one foot. Returns `None` while airborne.
pub fn update_contact_state(
    params: &TerrainParams,
    foot_pos: &Vector3<f64>,
    foot_vel: &Vector3<f64>,
    prev: Option<&ContactPoint>,
    dt: f64,
) -> Option<ContactPoint> {
    debug_assert!(dt > 0.0);
    let (x, y) = (foot_pos.x, foot_pos.y);
    let z_g = params.ground.height(x, y);
    if foot_pos.z > z_g {
        return None;
    }
    let normal = params.ground.normal(x, y);
    let grad = params.ground.gradient(x, y);
    let delta = z_g - foot_pos.z;
    let delta_rate = grad.x * foot_vel.x + grad.y * foot_vel.y - foot_vel.z;
    let v_t = foot_vel - normal * normal.dot(foot_vel);
    let speed = v_t.norm();
    let (xi, held) = match prev {
        Some(p) => {
            let step = foot_pos - p.position;
            let tangential = step - normal * normal.dot(&step);
            (p.xi + tangential.norm(), p.slip_direction)
        }
        None => (0.0, Vector3::zeros()),
    };
    let slip_direction = if speed >= SLIP_DIRECTION_HOLD_SPEED { v_t / speed } else { held };
    Some(ContactPoint { delta, delta_rate, xi, xi_rate: speed, slip_direction, normal, position: *foot_pos })
}
