//! Scenario files (`.scn`, TOML): robot, terrain, follower settings, gait
//! command schedule and run length.
//!
//! ```toml
//! schema_version = 1
//! name = "walk_flat"
//! duration = 10.0
//! physics_dt = 0.005
//!
//! [terrain]
//! preset = "flat"
//!
//! [follower]
//! mode = "deployment"
//! rate = 50.0
//!
//! [[command]]
//! t = 0.0
//! vx = 0.3
//! ```

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::safety::SafetyThresholds;
use crate::follower::{Command, ContactSource, FollowerConfig, GaitConfig, Mode};
use crate::model::{bundled_hexapod, load_model, ModelError, RobotModel};
use crate::terrain::{TerrainError, TerrainParams};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// Scenarios shipped with the crate, by file name.
pub const BUNDLED_SCENARIOS: &[(&str, &str)] = &[
    ("standing.scn", include_str!("../../scenarios/standing.scn")),
    ("walk_flat.scn", include_str!("../../scenarios/walk_flat.scn")),
    ("walk_lowfriction.scn", include_str!("../../scenarios/walk_lowfriction.scn")),
    ("walk_rom.scn", include_str!("../../scenarios/walk_rom.scn")),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario invalid: {0}")]
    Invalid(String),
    #[error("scenario robot: {0}")]
    Model(#[from] ModelError),
    #[error("scenario terrain: {0}")]
    Terrain(#[from] TerrainError),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandSegment {
    pub start: f64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: RobotModel,
    pub terrain_preset: String,
    pub terrain: TerrainParams,
    pub follower: FollowerConfig,
    pub gait: GaitConfig,
    /// Piecewise-constant commands, sorted by start time.
    pub commands: Vec<CommandSegment>,
    pub duration: f64,
    pub physics_dt: f64,
    pub seed: u64,
    /// Base height above the ground at the start.
    pub initial_height: f64,
    /// Uniform joint-angle perturbation of the initial posture (rad).
    pub initial_joint_noise: f64,
    /// Rate limits applied to command changes (m/s², rad/s²).
    pub command_accel: [f64; 2],
    /// Start of the window used for steady-state metrics (s).
    pub settle_time: f64,
    /// Largest tolerated fraction of follower ticks that fall back.
    pub failure_budget: f64,
    pub safety: SafetyThresholds,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: u32,
    name: String,
    #[serde(default)]
    robot: Option<String>,
    duration: f64,
    #[serde(default = "default_dt")]
    physics_dt: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    initial_height: Option<f64>,
    #[serde(default)]
    initial_joint_noise: f64,
    #[serde(default)]
    settle_time: Option<f64>,
    #[serde(default)]
    failure_budget: Option<f64>,
    #[serde(default)]
    command_accel: Option<[f64; 2]>,
    terrain: RawTerrain,
    #[serde(default)]
    follower: RawFollower,
    #[serde(default)]
    gait: GaitConfig,
    #[serde(default)]
    command: Vec<RawCommand>,
    #[serde(default)]
    safety: SafetyThresholds,
}

fn default_dt() -> f64 {
    0.005
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerrain {
    preset: String,
    #[serde(default)]
    args: Vec<f64>,
    k_c: Option<f64>,
    k_phi: Option<f64>,
    b_n: Option<f64>,
    cohesion: Option<f64>,
    mu: Option<f64>,
    shear_modulus: Option<f64>,
    b_t: Option<f64>,
    sinkage_exponent: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
enum Gain {
    Uniform(f64),
    PerJoint(Vec<f64>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFollower {
    mode: Option<Mode>,
    rate: Option<f64>,
    kp: Option<Gain>,
    kd: Option<Gain>,
    mu: Option<f64>,
    friction_constraint: Option<bool>,
    xi_xy_max: Option<f64>,
    delta_max: Option<f64>,
    hip_rom_deg: Option<f64>,
    contact_source: Option<ContactSource>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCommand {
    t: f64,
    #[serde(default)]
    vx: f64,
    #[serde(default)]
    vy: f64,
    #[serde(default)]
    wz: f64,
}

fn gain(g: Option<Gain>, n: usize, default: f64, what: &str) -> Result<DVector<f64>, ScenarioError> {
    match g {
        None => Ok(DVector::from_element(n, default)),
        Some(Gain::Uniform(v)) => Ok(DVector::from_element(n, v)),
        Some(Gain::PerJoint(v)) if v.len() == n => Ok(DVector::from_vec(v)),
        Some(Gain::PerJoint(v)) => Err(ScenarioError::Invalid(format!("{what} lists {} gains for {n} joints", v.len()))),
    }
}

impl Scenario {
    /// Parses scenario text; a relative `robot` path resolves against
    /// `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if raw.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(ScenarioError::Invalid(format!("unsupported schema_version {}", raw.schema_version)));
        }
        let model = match raw.robot.as_deref() {
            None | Some("hexapod") => bundled_hexapod(),
            Some(path) => {
                let p = match base_dir {
                    Some(dir) => dir.join(path),
                    None => Path::new(path).to_path_buf(),
                };
                let text = std::fs::read_to_string(&p).map_err(|source| ScenarioError::Io { path: p.display().to_string(), source })?;
                load_model(&text)?
            }
        };
        let t = raw.terrain;
        let mut terrain = TerrainParams::preset(&t.preset, &t.args)?;
        let overrides = [
            (&mut terrain.k_c, t.k_c),
            (&mut terrain.k_phi, t.k_phi),
            (&mut terrain.b_n, t.b_n),
            (&mut terrain.cohesion, t.cohesion),
            (&mut terrain.mu, t.mu),
            (&mut terrain.shear_modulus, t.shear_modulus),
            (&mut terrain.b_t, t.b_t),
            (&mut terrain.sinkage_exponent, t.sinkage_exponent),
        ];
        for (field, value) in overrides {
            if let Some(v) = value {
                *field = v;
            }
        }

        let f = raw.follower;
        let n = model.n_joints();
        let mut follower = FollowerConfig::new(&model, f.mode.unwrap_or(Mode::Deployment));
        follower.kp = gain(f.kp, n, follower.kp[0], "kp")?;
        follower.kd = gain(f.kd, n, follower.kd[0], "kd")?;
        if let Some(r) = f.rate {
            follower.rate = r;
        }
        follower.mu = f.mu;
        if let Some(b) = f.friction_constraint {
            follower.friction_constraint = b;
        }
        if let Some(v) = f.xi_xy_max {
            follower.xi_xy_max = v;
        }
        if let Some(v) = f.delta_max {
            follower.delta_max = v;
        }
        follower.hip_rom = f.hip_rom_deg.map(f64::to_radians);
        if let Some(c) = f.contact_source {
            follower.contact_source = c;
        }

        let mut commands: Vec<CommandSegment> = raw
            .command
            .iter()
            .map(|c| CommandSegment { start: c.t, command: Command::new(c.vx, c.vy, c.wz) })
            .collect();
        commands.sort_by(|a, b| a.start.total_cmp(&b.start));

        let s = Scenario {
            name: raw.name,
            model,
            terrain_preset: t.preset,
            terrain,
            follower,
            gait: raw.gait,
            commands,
            duration: raw.duration,
            physics_dt: raw.physics_dt,
            seed: raw.seed,
            initial_height: raw.initial_height.unwrap_or(0.16),
            initial_joint_noise: raw.initial_joint_noise,
            command_accel: raw.command_accel.unwrap_or([1.0, 2.0]),
            settle_time: raw.settle_time.unwrap_or(1.0),
            failure_budget: raw.failure_budget.unwrap_or(0.01),
            safety: raw.safety,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, path.parent())
    }

    /// A bundled scenario by file name (`standing.scn`, ...).
    pub fn bundled(name: &str) -> Option<Self> {
        BUNDLED_SCENARIOS
            .iter()
            .find(|(n, _)| *n == name || n.trim_end_matches(".scn") == name)
            .map(|(_, text)| Self::parse(text, None).expect("bundled scenario is valid"))
    }

    /// Physics ticks per follower update.
    pub fn ticks_per_update(&self) -> Result<usize, ScenarioError> {
        let ratio = self.follower.period() / self.physics_dt;
        let rounded = ratio.round();
        if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio {
            return Err(ScenarioError::Invalid(format!(
                "physics step {} does not divide the follower period {}",
                self.physics_dt,
                self.follower.period()
            )));
        }
        Ok(rounded as usize)
    }

    pub fn n_ticks(&self) -> usize {
        (self.duration / self.physics_dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive".into());
        }
        if !(self.physics_dt > 0.0 && self.physics_dt.is_finite()) {
            return bad("physics_dt must be positive".into());
        }
        if !(self.initial_joint_noise >= 0.0) || !(self.settle_time >= 0.0) || !(self.failure_budget >= 0.0) {
            return bad("initial_joint_noise, settle_time and failure_budget must be non-negative".into());
        }
        if self.command_accel.iter().any(|a| !(*a > 0.0)) {
            return bad("command_accel entries must be positive".into());
        }
        if self.commands.iter().any(|c| !(c.start >= 0.0)) {
            return bad("command times must be non-negative".into());
        }
        self.terrain.validate()?;
        self.follower.validate(&self.model).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.gait.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let caps = (self.gait.max_linear_speed, self.gait.max_yaw_rate);
        for c in &self.commands {
            if c.command.v_x.hypot(c.command.v_y) > caps.0 || c.command.omega_z.abs() > caps.1 {
                return bad(format!("command at t = {} exceeds the gait caps", c.start));
            }
        }
        self.ticks_per_update()?;
        Ok(())
    }

    /// Commanded twist at time `t` (before rate limiting).
    pub fn command_at(&self, t: f64) -> Command {
        self.commands.iter().rev().find(|c| c.start <= t).map_or(Command::ZERO, |c| c.command)
    }

    /// Applies command-line style overrides, logging each change.
    pub fn apply(&mut self, o: &Overrides) -> Result<(), ScenarioError> {
        if let Some(m) = o.mode {
            log::info!("override mode: {} -> {m}", self.follower.mode);
            self.follower.mode = m;
        }
        if let Some(mu) = o.mu {
            log::info!("override mu: {mu:?}");
            match mu {
                Some(v) => {
                    self.follower.mu = Some(v);
                    self.follower.friction_constraint = true;
                }
                None => self.follower.friction_constraint = false,
            }
        }
        if let Some(rom) = o.hip_rom {
            log::info!("override hip ROM: {rom:?} rad");
            self.follower.hip_rom = rom;
        }
        if let Some(d) = o.duration {
            log::info!("override duration: {} -> {d}", self.duration);
            self.duration = d;
        }
        if let Some(s) = o.seed {
            log::info!("override seed: {} -> {s}", self.seed);
            self.seed = s;
        }
        if let Some(r) = o.rate {
            log::info!("override rate: {} -> {r}", self.follower.rate);
            self.follower.rate = r;
        }
        if let Some(dt) = o.physics_dt {
            log::info!("override physics step: {} -> {dt}", self.physics_dt);
            self.physics_dt = dt;
        }
        self.validate()
    }
}

/// Scenario field overrides; `Some(None)` switches a constraint off.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<Mode>,
    /// Friction coefficient for the force constraints; `Some(None)` drops
    /// the friction-pyramid rows.
    pub mu: Option<Option<f64>>,
    /// Hip range of motion (rad); `Some(None)` removes the override.
    pub hip_rom: Option<Option<f64>>,
    pub duration: Option<f64>,
    pub seed: Option<u64>,
    pub rate: Option<f64>,
    pub physics_dt: Option<f64>,
}
