//! Robot description: kinematic tree, link inertias, actuator limits and
//! foot frames, loaded from a TOML document.
//!
//! The first link is always the floating base. Every other link hangs off a
//! parent with a smaller index through a revolute or fixed joint, so the link
//! list is already in topological order and the recursive dynamics passes can
//! sweep it front to back (or back to front) without building an explicit
//! traversal.
//!
//! ```toml
//! schema_version = 1
//! name = "pendulum"
//!
//! [[link]]
//! name = "base"
//! joint = "floating"
//! mass = 1.0e9
//! inertia = { ixx = 1.0e9, iyy = 1.0e9, izz = 1.0e9 }
//!
//! [[link]]
//! name = "arm"
//! parent = "base"
//! joint = "revolute"
//! axis = [0.0, 1.0, 0.0]
//! mass = 2.0
//! com = [0.0, 0.0, -0.5]
//! inertia = { ixx = 1.0e-9, iyy = 1.0e-9, izz = 1.0e-9 }
//! limits = { q_min = -3.0, q_max = 3.0, v_max = 10.0, tau_min = -50.0, tau_max = 50.0 }
//! ```

use std::collections::HashMap;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version written by [`RobotModel::to_config_text`] and accepted by the loader.
pub const SCHEMA_VERSION: u32 = 1;

const DEFAULT_GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("robot config parse error: {0}")]
    Parse(String),
    #[error("robot config invalid: {field}: {reason}")]
    Validation { field: String, reason: String },
}

impl ModelError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JointKind {
    Floating,
    /// Rotation about a unit axis expressed in the child link frame.
    Revolute { axis: Vector3<f64> },
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub q_min: f64,
    pub q_max: f64,
    pub v_max: f64,
    pub tau_min: f64,
    pub tau_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    pub joint: JointKind,
    /// Joint frame origin in the parent frame.
    pub origin_xyz: Vector3<f64>,
    /// Joint frame orientation in the parent frame (roll, pitch, yaw).
    pub origin_rpy: Vector3<f64>,
    pub origin_rot: Matrix3<f64>,
    pub mass: f64,
    /// Centre of mass in the link frame.
    pub com: Vector3<f64>,
    /// Rotational inertia about the centre of mass, link frame.
    pub inertia: Matrix3<f64>,
    /// Position of this link's joint in the actuated joint vector.
    pub joint_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub link: usize,
    pub limits: JointLimits,
    /// Joint angle of the nominal standing posture.
    pub nominal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Foot {
    pub name: String,
    pub link: usize,
    /// Sole point in the link frame.
    pub offset: Vector3<f64>,
    pub radius: f64,
}

/// Three-joint leg (hip yaw, hip pitch, knee) ending in a foot.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub name: String,
    /// Indices into the actuated joint vector.
    pub joints: [usize; 3],
    pub foot: usize,
    /// Gait group (0 or 1 for a tripod gait).
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub gravity: f64,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub feet: Vec<Foot>,
    pub legs: Vec<Leg>,
}

impl RobotModel {
    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn n_feet(&self) -> usize {
        self.feet.len()
    }

    /// Dimension of the generalized velocity, `6 + n`.
    pub fn nv(&self) -> usize {
        6 + self.joints.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn nominal_posture(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.nominal).collect()
    }

    /// Children lists derived from the parent indices.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.links.len()];
        for (i, l) in self.links.iter().enumerate() {
            if let Some(p) = l.parent {
                out[p].push(i);
            }
        }
        out
    }

    /// Serializes back into the configuration format. Reloading the output
    /// yields a model equal to `self`.
    pub fn to_config_text(&self) -> String {
        let raw = RawConfig {
            schema_version: SCHEMA_VERSION,
            name: self.name.clone(),
            gravity: Some(self.gravity),
            link: self
                .links
                .iter()
                .map(|l| {
                    let (joint, axis) = match l.joint {
                        JointKind::Floating => ("floating", None),
                        JointKind::Revolute { axis } => ("revolute", Some(axis.into())),
                        JointKind::Fixed => ("fixed", None),
                    };
                    let joint_rec = l.joint_index.map(|j| &self.joints[j]);
                    RawLink {
                        name: l.name.clone(),
                        parent: l.parent.map(|p| self.links[p].name.clone()),
                        joint: joint.to_string(),
                        axis,
                        xyz: Some(l.origin_xyz.into()),
                        rpy: Some(l.origin_rpy.into()),
                        mass: l.mass,
                        com: Some(l.com.into()),
                        inertia: RawInertia {
                            ixx: l.inertia[(0, 0)],
                            iyy: l.inertia[(1, 1)],
                            izz: l.inertia[(2, 2)],
                            ixy: l.inertia[(0, 1)],
                            ixz: l.inertia[(0, 2)],
                            iyz: l.inertia[(1, 2)],
                        },
                        limits: joint_rec.map(|j| RawLimits {
                            q_min: j.limits.q_min,
                            q_max: j.limits.q_max,
                            v_max: j.limits.v_max,
                            tau_min: j.limits.tau_min,
                            tau_max: j.limits.tau_max,
                        }),
                        nominal: joint_rec.map(|j| j.nominal),
                    }
                })
                .collect(),
            foot: self
                .feet
                .iter()
                .map(|f| RawFoot {
                    name: f.name.clone(),
                    link: self.links[f.link].name.clone(),
                    offset: f.offset.into(),
                    radius: f.radius,
                })
                .collect(),
            leg: self
                .legs
                .iter()
                .map(|leg| RawLeg {
                    name: leg.name.clone(),
                    joints: leg.joints.map(|j| self.joints[j].name.clone()),
                    foot: self.feet[leg.foot].name.clone(),
                    group: leg.group,
                })
                .collect(),
        };
        toml::to_string(&raw).expect("robot model serializes")
    }
}

/// Bundled 18-DOF hexapod description.
pub const HEXAPOD_CONFIG: &str = include_str!("../data/hexapod.toml");

pub fn bundled_hexapod() -> RobotModel {
    load_model(HEXAPOD_CONFIG).expect("bundled hexapod config is valid")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gravity: Option<f64>,
    link: Vec<RawLink>,
    #[serde(default)]
    foot: Vec<RawFoot>,
    #[serde(default)]
    leg: Vec<RawLeg>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
    joint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xyz: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rpy: Option<[f64; 3]>,
    mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    com: Option<[f64; 3]>,
    inertia: RawInertia,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    limits: Option<RawLimits>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nominal: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInertia {
    ixx: f64,
    iyy: f64,
    izz: f64,
    #[serde(default)]
    ixy: f64,
    #[serde(default)]
    ixz: f64,
    #[serde(default)]
    iyz: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLimits {
    q_min: f64,
    q_max: f64,
    v_max: f64,
    tau_min: f64,
    tau_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFoot {
    name: String,
    link: String,
    offset: [f64; 3],
    radius: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLeg {
    name: String,
    joints: [String; 3],
    foot: String,
    #[serde(default)]
    group: usize,
}

pub fn rpy_to_matrix(rpy: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::from_euler_angles(rpy.x, rpy.y, rpy.z).into_inner()
}

fn finite3(v: &[f64; 3], field: &str) -> Result<Vector3<f64>, ModelError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(Vector3::from(*v))
    } else {
        Err(ModelError::invalid(field, "non-finite value"))
    }
}

/// Parses and validates a robot description.
pub fn load_model(config_text: &str) -> Result<RobotModel, ModelError> {
    let raw: RawConfig =
        toml::from_str(config_text).map_err(|e| ModelError::Parse(e.to_string()))?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(ModelError::invalid(
            "schema_version",
            format!("unsupported version {} (expected {SCHEMA_VERSION})", raw.schema_version),
        ));
    }
    let gravity = raw.gravity.unwrap_or(DEFAULT_GRAVITY);
    if !(gravity.is_finite() && gravity >= 0.0) {
        return Err(ModelError::invalid("gravity", "must be finite and >= 0"));
    }
    if raw.link.is_empty() {
        return Err(ModelError::invalid("link", "at least the floating base is required"));
    }

    let mut index_of: HashMap<&str, usize> = HashMap::new();
    let mut links = Vec::with_capacity(raw.link.len());
    let mut joints = Vec::new();

    for (i, rl) in raw.link.iter().enumerate() {
        let field = format!("link[{i}] '{}'", rl.name);
        if index_of.insert(rl.name.as_str(), i).is_some() {
            return Err(ModelError::invalid(field, "duplicate link name"));
        }
        let parent = match (&rl.parent, i) {
            (None, 0) => None,
            (Some(_), 0) => {
                return Err(ModelError::invalid(field, "the first link is the floating base and has no parent"))
            }
            (None, _) => return Err(ModelError::invalid(format!("{field}.parent"), "missing parent")),
            (Some(p), _) => match index_of.get(p.as_str()) {
                Some(&pi) if pi < i => Some(pi),
                Some(_) => {
                    return Err(ModelError::invalid(format!("{field}.parent"), "parent must precede child (cycle)"))
                }
                None => {
                    let reason = if raw.link.iter().any(|l| &l.name == p) {
                        format!("parent '{p}' is declared later (cycle or non-topological order)")
                    } else {
                        format!("unknown parent '{p}'")
                    };
                    return Err(ModelError::invalid(format!("{field}.parent"), reason));
                }
            },
        };

        let joint = match rl.joint.as_str() {
            "floating" if i == 0 => JointKind::Floating,
            "floating" => return Err(ModelError::invalid(format!("{field}.joint"), "only the first link may float")),
            _ if i == 0 => return Err(ModelError::invalid(format!("{field}.joint"), "the first link must be floating")),
            "fixed" => JointKind::Fixed,
            "revolute" => {
                let axis = rl
                    .axis
                    .ok_or_else(|| ModelError::invalid(format!("{field}.axis"), "revolute joint needs an axis"))?;
                let axis = finite3(&axis, &format!("{field}.axis"))?;
                let norm = axis.norm();
                if norm < 1e-12 {
                    return Err(ModelError::invalid(format!("{field}.axis"), "zero axis"));
                }
                JointKind::Revolute { axis: axis / norm }
            }
            other => return Err(ModelError::invalid(format!("{field}.joint"), format!("unknown joint type '{other}'"))),
        };

        if !(rl.mass.is_finite() && rl.mass > 0.0) {
            return Err(ModelError::invalid(format!("{field}.mass"), "must be > 0"));
        }
        let ri = &rl.inertia;
        let inertia = Matrix3::new(ri.ixx, ri.ixy, ri.ixz, ri.ixy, ri.iyy, ri.iyz, ri.ixz, ri.iyz, ri.izz);
        if inertia.iter().any(|x| !x.is_finite()) || inertia.cholesky().is_none() {
            return Err(ModelError::invalid(format!("{field}.inertia"), "must be symmetric positive definite"));
        }
        let origin_xyz = finite3(&rl.xyz.unwrap_or([0.0; 3]), &format!("{field}.xyz"))?;
        let origin_rpy = finite3(&rl.rpy.unwrap_or([0.0; 3]), &format!("{field}.rpy"))?;
        let com = finite3(&rl.com.unwrap_or([0.0; 3]), &format!("{field}.com"))?;

        let joint_index = if let JointKind::Revolute { .. } = joint {
            let lim = rl
                .limits
                .as_ref()
                .ok_or_else(|| ModelError::invalid(format!("{field}.limits"), "revolute joint needs limits"))?;
            let jf = format!("joint '{}'", rl.name);
            if !(lim.q_min < lim.q_max) {
                return Err(ModelError::invalid(
                    format!("{jf}.limits"),
                    format!("q_min ({}) must be < q_max ({})", lim.q_min, lim.q_max),
                ));
            }
            if !(lim.tau_min < 0.0 && lim.tau_max > 0.0) {
                return Err(ModelError::invalid(
                    format!("{jf}.limits"),
                    format!("need tau_min < 0 < tau_max (got {}, {})", lim.tau_min, lim.tau_max),
                ));
            }
            if !(lim.v_max > 0.0) {
                return Err(ModelError::invalid(format!("{jf}.limits"), "v_max must be > 0"));
            }
            let nominal = rl.nominal.unwrap_or(0.5 * (lim.q_min + lim.q_max));
            if !(lim.q_min..=lim.q_max).contains(&nominal) {
                return Err(ModelError::invalid(format!("{jf}.nominal"), "outside [q_min, q_max]"));
            }
            joints.push(Joint {
                name: rl.name.clone(),
                link: i,
                limits: JointLimits {
                    q_min: lim.q_min,
                    q_max: lim.q_max,
                    v_max: lim.v_max,
                    tau_min: lim.tau_min,
                    tau_max: lim.tau_max,
                },
                nominal,
            });
            Some(joints.len() - 1)
        } else {
            if rl.limits.is_some() || rl.nominal.is_some() {
                return Err(ModelError::invalid(field, "limits/nominal only apply to revolute joints"));
            }
            None
        };

        links.push(Link {
            name: rl.name.clone(),
            parent,
            joint,
            origin_rot: rpy_to_matrix(&origin_rpy),
            origin_xyz,
            origin_rpy,
            mass: rl.mass,
            com,
            inertia,
            joint_index,
        });
    }

    let mut feet = Vec::with_capacity(raw.foot.len());
    for (i, rf) in raw.foot.iter().enumerate() {
        let field = format!("foot[{i}] '{}'", rf.name);
        let link = *index_of
            .get(rf.link.as_str())
            .ok_or_else(|| ModelError::invalid(format!("{field}.link"), format!("unknown link '{}'", rf.link)))?;
        if !(rf.radius.is_finite() && rf.radius > 0.0) {
            return Err(ModelError::invalid(format!("{field}.radius"), "must be > 0"));
        }
        if feet.iter().any(|f: &Foot| f.name == rf.name) {
            return Err(ModelError::invalid(field, "duplicate foot name"));
        }
        feet.push(Foot {
            name: rf.name.clone(),
            link,
            offset: finite3(&rf.offset, &format!("{field}.offset"))?,
            radius: rf.radius,
        });
    }
    if 3 * feet.len() > 6 + joints.len() {
        return Err(ModelError::invalid(
            "foot",
            format!("{} feet give {} contact rows, more than the {} velocity coordinates", feet.len(), 3 * feet.len(), 6 + joints.len()),
        ));
    }

    let mut legs = Vec::with_capacity(raw.leg.len());
    for (i, rl) in raw.leg.iter().enumerate() {
        let field = format!("leg[{i}] '{}'", rl.name);
        let mut js = [0usize; 3];
        for (k, jn) in rl.joints.iter().enumerate() {
            js[k] = joints
                .iter()
                .position(|j| &j.name == jn)
                .ok_or_else(|| ModelError::invalid(format!("{field}.joints"), format!("unknown joint '{jn}'")))?;
        }
        let foot = feet
            .iter()
            .position(|f| f.name == rl.foot)
            .ok_or_else(|| ModelError::invalid(format!("{field}.foot"), format!("unknown foot '{}'", rl.foot)))?;
        legs.push(Leg {
            name: rl.name.clone(),
            joints: js,
            foot,
            group: rl.group,
        });
    }

    Ok(RobotModel {
        name: raw.name,
        gravity,
        links,
        joints,
        feet,
        legs,
    })
}
