//! Experiment harness: single runs and parameter sweeps with on-disk
//! results, per-run metrics and a verification pass that recomputes
//! summaries from the trajectory CSVs.
//!
//! A run directory holds `manifest.toml`, one trajectory CSV and one safety
//! report per run, and (for sweeps) `summary.csv`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::follower::{joint_ranges, Mode};
use crate::sim::{
    measure_slip_with, run_scenario, safety, Overrides, SafetyReport, Scenario, ScenarioError, SimError, Trajectory,
    TrajectoryError,
};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Relative tolerance used when comparing recomputed metrics.
pub const VERIFY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Trajectory { path: String, source: TrajectoryError },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("bad value `{value}` for {param}: {message}")]
    Value { param: String, value: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, message: impl ToString) -> ExperimentError {
    ExperimentError::Format { path: path.display().to_string(), message: message.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Mu,
    HipRom,
    Mode,
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mu" => Ok(Self::Mu),
            "hip_rom" | "hip-rom" => Ok(Self::HipRom),
            "mode" => Ok(Self::Mode),
            other => Err(format!("unknown sweep parameter `{other}` (expected mu, hip_rom or mode)")),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mu => "mu",
            Self::HipRom => "hip_rom",
            Self::Mode => "mode",
        })
    }
}

/// One setting of a swept parameter. Hip ROM is in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepValue {
    Mu(Option<f64>),
    HipRomDeg(Option<f64>),
    Mode(Mode),
}

/// Parses `none` or a finite number.
pub fn parse_optional(s: &str) -> Result<Option<f64>, String> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is neither a number nor `none`"))?;
    if !v.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok(Some(v))
}

impl SweepValue {
    pub fn parse(param: SweepParam, s: &str) -> Result<Self, ExperimentError> {
        let err = |message: String| ExperimentError::Value { param: param.to_string(), value: s.to_string(), message };
        Ok(match param {
            SweepParam::Mu => Self::Mu(parse_optional(s).map_err(err)?),
            SweepParam::HipRom => Self::HipRomDeg(parse_optional(s).map_err(err)?),
            SweepParam::Mode => Self::Mode(s.trim().parse().map_err(err)?),
        })
    }

    pub fn param(&self) -> SweepParam {
        match self {
            Self::Mu(_) => SweepParam::Mu,
            Self::HipRomDeg(_) => SweepParam::HipRom,
            Self::Mode(_) => SweepParam::Mode,
        }
    }

    /// The setting with the constraint switched off.
    pub fn baseline(param: SweepParam) -> Self {
        match param {
            SweepParam::Mu => Self::Mu(None),
            SweepParam::HipRom => Self::HipRomDeg(None),
            SweepParam::Mode => Self::Mode(Mode::Training),
        }
    }

    pub fn label(&self) -> String {
        let opt = |v: &Option<f64>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        match self {
            Self::Mu(v) | Self::HipRomDeg(v) => opt(v),
            Self::Mode(m) => m.to_string(),
        }
    }

    pub fn overrides(&self) -> Overrides {
        match *self {
            Self::Mu(v) => Overrides { mu: Some(v), ..Default::default() },
            Self::HipRomDeg(v) => Overrides { hip_rom: Some(v.map(f64::to_radians)), ..Default::default() },
            Self::Mode(m) => Overrides { mode: Some(m), ..Default::default() },
        }
    }
}

/// Values to run for a sweep: the baseline first (unless listed), then the
/// given values in order, without duplicates.
pub fn sweep_values(param: SweepParam, values: &[SweepValue]) -> Vec<SweepValue> {
    let mut out = Vec::new();
    let base = SweepValue::baseline(param);
    if !values.contains(&base) {
        out.push(base);
    }
    for v in values {
        if !out.contains(v) {
            out.push(*v);
        }
    }
    out
}

/// Command-line style scenario overrides in text form, stored in manifests
/// so a run can be rebuilt exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Number or `none`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<String>,
    /// Degrees or `none`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hip_rom: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub physics_dt: Option<f64>,
}

impl OverrideSpec {
    pub fn to_overrides(&self) -> Result<Overrides, ExperimentError> {
        let value_err = |param: &str, value: &str, message: String| ExperimentError::Value {
            param: param.into(),
            value: value.into(),
            message,
        };
        let mode = match &self.mode {
            Some(m) => Some(m.parse::<Mode>().map_err(|e| value_err("mode", m, e))?),
            None => None,
        };
        let mu = match &self.mu {
            Some(s) => Some(parse_optional(s).map_err(|e| value_err("mu", s, e))?),
            None => None,
        };
        let hip_rom = match &self.hip_rom {
            Some(s) => Some(parse_optional(s).map_err(|e| value_err("hip_rom", s, e))?.map(f64::to_radians)),
            None => None,
        };
        Ok(Overrides {
            mode,
            mu,
            hip_rom,
            duration: self.duration,
            seed: self.seed,
            rate: self.rate,
            physics_dt: self.physics_dt,
        })
    }

    /// Folds a sweep value on top of these overrides.
    pub fn with_value(&self, value: &SweepValue) -> Self {
        let mut o = self.clone();
        match value {
            SweepValue::Mu(_) => o.mu = Some(value.label()),
            SweepValue::HipRomDeg(_) => o.hip_rom = Some(value.label()),
            SweepValue::Mode(_) => o.mode = Some(value.label()),
        }
        o
    }
}

/// Scenario source kept verbatim in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSource {
    pub text: String,
    /// Directory for resolving a relative robot path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_dir: Option<PathBuf>,
}

impl ScenarioSource {
    /// Reads a scenario file; a bare bundled name (`walk_flat` or
    /// `walk_flat.scn`) is used when no such file exists.
    pub fn resolve(path_or_name: &str) -> Result<Self, ExperimentError> {
        let path = Path::new(path_or_name);
        if path.exists() {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let base_dir = path.parent().map(|p| p.to_path_buf()).filter(|p| !p.as_os_str().is_empty());
            return Ok(Self { text, base_dir });
        }
        crate::sim::scenario::BUNDLED_SCENARIOS
            .iter()
            .find(|(n, _)| *n == path_or_name || n.trim_end_matches(".scn") == path_or_name)
            .map(|(_, text)| Self { text: text.to_string(), base_dir: None })
            .ok_or_else(|| ExperimentError::Scenario(ScenarioError::Io {
                path: path_or_name.to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or bundled scenario"),
            }))
    }

    pub fn build(&self, overrides: &OverrideSpec) -> Result<Scenario, ExperimentError> {
        let mut s = Scenario::parse(&self.text, self.base_dir.as_deref())?;
        s.apply(&overrides.to_overrides()?)?;
        Ok(s)
    }
}

/// Scalar results of one run, as stored in `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: String,
    pub param: String,
    pub value: String,
    pub seed: u64,
    /// Base displacement along the command direction over the whole run (m).
    pub distance: f64,
    /// Base progress along the command direction per gait cycle after the
    /// settle time (m).
    pub effective_step_length: f64,
    pub stances: usize,
    pub mean_slip: f64,
    pub max_slip: f64,
    pub slip_events: usize,
    pub torque_events: usize,
    pub max_torque: f64,
    pub collision_events: usize,
    /// Largest |q - nominal| over hip joints and all ticks (rad).
    pub hip_max_deviation: f64,
    /// Largest hip excursion outside the commanded hip range (rad).
    pub hip_range_excess: f64,
    /// Mean |q - reference| over joints and ticks after the settle time (rad).
    pub mean_tracking_error: f64,
    pub fallback_ticks: usize,
}

impl RunMetrics {
    /// Derives all metrics from a scenario and its recorded trajectory.
    pub fn compute(run: &str, param: &str, value: &str, scenario: &Scenario, traj: &Trajectory) -> Self {
        let model = &scenario.model;
        let terrain = scenario.terrain.clone();
        let stances = measure_slip_with(traj, safety::CONTACT_DEBOUNCE_TICKS, |p| terrain.ground.normal(p.x, p.y));
        let report = SafetyReport::from_trajectory(model, traj, scenario.safety, stances);

        let settle = scenario.settle_time;
        let dir = {
            let c = scenario.command_at(settle.min(scenario.duration));
            let h = c.v_x.hypot(c.v_y);
            if h > 0.0 {
                [c.v_x / h, c.v_y / h]
            } else {
                [0.0, 0.0]
            }
        };
        let along = |k: usize| {
            let p = traj.ticks[k].base_position;
            dir[0] * p.x + dir[1] * p.y
        };
        let last = traj.ticks.len().saturating_sub(1);
        let (distance, effective_step_length) = if traj.ticks.is_empty() {
            (0.0, 0.0)
        } else {
            let first_settled = traj.ticks.iter().position(|t| t.time >= settle - 1e-12).unwrap_or(last);
            let elapsed = traj.ticks[last].time - traj.ticks[first_settled].time;
            let cycles = elapsed / scenario.gait.period;
            let step = if cycles > 0.0 { (along(last) - along(first_settled)) / cycles } else { 0.0 };
            (along(last) - along(0), step)
        };

        let hips: Vec<usize> = model.legs.iter().map(|l| l.joints[0]).collect();
        let ranges = joint_ranges(model, scenario.follower.hip_rom);
        let mut hip_max_deviation = 0.0f64;
        let mut hip_range_excess = 0.0f64;
        for t in &traj.ticks {
            for &j in &hips {
                let q = t.q[j];
                hip_max_deviation = hip_max_deviation.max((q - model.joints[j].nominal).abs());
                hip_range_excess = hip_range_excess.max((ranges[j].0 - q).max(q - ranges[j].1).max(0.0));
            }
        }

        let mut err_sum = 0.0;
        let mut err_count = 0usize;
        for t in traj.ticks.iter().filter(|t| t.time >= settle - 1e-12) {
            for (q, r) in t.q.iter().zip(&t.reference) {
                err_sum += (q - r).abs();
                err_count += 1;
            }
        }

        Self {
            run: run.to_string(),
            param: param.to_string(),
            value: value.to_string(),
            seed: scenario.seed,
            distance,
            effective_step_length,
            stances: report.stances.len(),
            mean_slip: report.mean_slip,
            max_slip: report.max_slip,
            slip_events: report.slip_events,
            torque_events: report.torque_events,
            max_torque: report.max_torque,
            collision_events: report.collision_events,
            hip_max_deviation,
            hip_range_excess,
            mean_tracking_error: if err_count > 0 { err_sum / err_count as f64 } else { 0.0 },
            fallback_ticks: report.fallback_ticks,
        }
    }

    /// Field-by-field comparison; returns the names of fields that differ.
    pub fn mismatches(&self, other: &Self, rel_tol: f64) -> Vec<&'static str> {
        let close = |a: f64, b: f64| (a - b).abs() <= rel_tol * (1.0 + a.abs().max(b.abs()));
        let mut out = Vec::new();
        let mut check = |name: &'static str, ok: bool| {
            if !ok {
                out.push(name);
            }
        };
        check("run", self.run == other.run);
        check("param", self.param == other.param);
        check("value", self.value == other.value);
        check("seed", self.seed == other.seed);
        check("distance", close(self.distance, other.distance));
        check("effective_step_length", close(self.effective_step_length, other.effective_step_length));
        check("stances", self.stances == other.stances);
        check("mean_slip", close(self.mean_slip, other.mean_slip));
        check("max_slip", close(self.max_slip, other.max_slip));
        check("slip_events", self.slip_events == other.slip_events);
        check("torque_events", self.torque_events == other.torque_events);
        check("max_torque", close(self.max_torque, other.max_torque));
        check("collision_events", self.collision_events == other.collision_events);
        check("hip_max_deviation", close(self.hip_max_deviation, other.hip_max_deviation));
        check("hip_range_excess", close(self.hip_range_excess, other.hip_range_excess));
        check("mean_tracking_error", close(self.mean_tracking_error, other.mean_tracking_error));
        check("fallback_ticks", self.fallback_ticks == other.fallback_ticks);
        out
    }
}

/// Per-value means over seeds, in first-seen value order.
pub fn mean_by_value(rows: &[RunMetrics]) -> Vec<RunMetrics> {
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.value) {
            order.push(r.value.clone());
        }
    }
    order
        .iter()
        .map(|v| {
            let group: Vec<&RunMetrics> = rows.iter().filter(|r| &r.value == v).collect();
            let k = group.len() as f64;
            let mean = |f: fn(&RunMetrics) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / k;
            let max = |f: fn(&RunMetrics) -> f64| group.iter().map(|r| f(r)).fold(0.0, f64::max);
            let total = |f: fn(&RunMetrics) -> usize| group.iter().map(|r| f(r)).sum::<usize>();
            RunMetrics {
                run: format!("mean_{v}"),
                param: group[0].param.clone(),
                value: v.clone(),
                seed: group[0].seed,
                distance: mean(|r| r.distance),
                effective_step_length: mean(|r| r.effective_step_length),
                stances: total(|r| r.stances),
                mean_slip: mean(|r| r.mean_slip),
                max_slip: max(|r| r.max_slip),
                slip_events: total(|r| r.slip_events),
                torque_events: total(|r| r.torque_events),
                max_torque: max(|r| r.max_torque),
                collision_events: total(|r| r.collision_events),
                hip_max_deviation: max(|r| r.hip_max_deviation),
                hip_range_excess: max(|r| r.hip_range_excess),
                mean_tracking_error: mean(|r| r.mean_tracking_error),
                fallback_ticks: total(|r| r.fallback_ticks),
            }
        })
        .collect()
}

/// One entry of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub name: String,
    /// Swept value label; empty for a single run.
    pub value: String,
    pub overrides: OverrideSpec,
    pub trajectory: String,
    pub report: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<SweepParam>,
    pub scenario: ScenarioSource,
    pub runs: Vec<RunEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, ExperimentError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        toml::from_str(&text).map_err(|e| format_err(&path, e))
    }

    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(|e| format_err(&path, e))?;
        fs::write(&path, text).map_err(io_err(&path))
    }
}

fn write_outputs(dir: &Path, entry: &RunEntry, traj: &Trajectory, report: &SafetyReport) -> Result<(), ExperimentError> {
    let tpath = dir.join(&entry.trajectory);
    let file = fs::File::create(&tpath).map_err(io_err(&tpath))?;
    traj.write_csv(std::io::BufWriter::new(file))
        .map_err(|source| ExperimentError::Trajectory { path: tpath.display().to_string(), source })?;
    let rpath = dir.join(&entry.report);
    fs::write(&rpath, report.to_text()).map_err(io_err(&rpath))
}

fn read_trajectory(path: &Path) -> Result<Trajectory, ExperimentError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Trajectory::read_csv(std::io::BufReader::new(file))
        .map_err(|source| ExperimentError::Trajectory { path: path.display().to_string(), source })
}

/// Result of a single run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub entry: RunEntry,
    pub report: SafetyReport,
    pub metrics: RunMetrics,
}

/// Runs one scenario and writes `trajectory.csv`, `report.toml` and the
/// manifest into `out`.
pub fn run_to_dir(source: &ScenarioSource, overrides: &OverrideSpec, out: &Path) -> Result<RunResult, ExperimentError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let scenario = source.build(overrides)?;
    let entry = RunEntry {
        name: "run".into(),
        value: String::new(),
        overrides: overrides.clone(),
        trajectory: "trajectory.csv".into(),
        report: "report.toml".into(),
    };
    let manifest = Manifest { kind: "run".into(), param: None, scenario: source.clone(), runs: vec![entry.clone()] };
    manifest.write(out)?;
    let result = run_scenario(&scenario)?;
    write_outputs(out, &entry, &result.trajectory, &result.report)?;
    let metrics = RunMetrics::compute(&entry.name, "", "", &scenario, &result.trajectory);
    Ok(RunResult { entry, report: result.report, metrics })
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub values: Vec<SweepValue>,
    /// Seeds per value; empty means the scenario's own seed.
    pub seeds: Vec<u64>,
    pub overrides: OverrideSpec,
    pub jobs: usize,
}

#[derive(Debug)]
pub struct SweepOutcome {
    /// Metrics for every run that completed, in run order.
    pub rows: Vec<RunMetrics>,
    /// Runs that failed, with their errors.
    pub failures: Vec<(String, ExperimentError)>,
}

/// Runs every (value, seed) pair, writing per-run outputs and
/// `summary.csv` into `out`. Completed runs are kept when others fail.
pub fn sweep_to_dir(source: &ScenarioSource, config: &SweepConfig, out: &Path) -> Result<SweepOutcome, ExperimentError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let values = sweep_values(config.param, &config.values);
    let seeds: Vec<Option<u64>> =
        if config.seeds.is_empty() { vec![config.overrides.seed] } else { config.seeds.iter().map(|&s| Some(s)).collect() };
    let mut entries = Vec::new();
    for v in &values {
        for s in &seeds {
            let mut o = config.overrides.with_value(v);
            o.seed = *s;
            let seed_tag = s.map_or_else(String::new, |s| format!("_s{s}"));
            let name = format!("run{:02}_{}_{}{}", entries.len(), config.param, v.label(), seed_tag);
            entries.push(RunEntry {
                trajectory: format!("{name}.csv"),
                report: format!("{name}_report.toml"),
                name,
                value: v.label(),
                overrides: o,
            });
        }
    }
    // Validate every configuration before spending time on any run.
    for e in &entries {
        source.build(&e.overrides)?;
    }
    let manifest = Manifest { kind: "sweep".into(), param: Some(config.param), scenario: source.clone(), runs: entries.clone() };
    manifest.write(out)?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunMetrics, ExperimentError>>>> =
        Mutex::new((0..entries.len()).map(|_| None).collect());
    let jobs = config.jobs.clamp(1, entries.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(entry) = entries.get(i) else { break };
                log::info!("sweep run {} started", entry.name);
                let r = (|| {
                    let scenario = source.build(&entry.overrides)?;
                    let res = run_scenario(&scenario)?;
                    write_outputs(out, entry, &res.trajectory, &res.report)?;
                    Ok(RunMetrics::compute(&entry.name, &config.param.to_string(), &entry.value, &scenario, &res.trajectory))
                })();
                match &r {
                    Ok(_) => log::info!("sweep run {} finished", entry.name),
                    Err(e) => log::warn!("sweep run {} failed: {e}", entry.name),
                }
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (entry, r) in entries.iter().zip(results.into_inner().expect("results lock")) {
        match r.expect("every run reports") {
            Ok(m) => rows.push(m),
            Err(e) => failures.push((entry.name.clone(), e)),
        }
    }
    write_summary(&out.join(SUMMARY_FILE), &rows)?;
    Ok(SweepOutcome { rows, failures })
}

pub fn write_summary(path: &Path, rows: &[RunMetrics]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| format_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_summary(path: &Path) -> Result<Vec<RunMetrics>, ExperimentError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e))?;
    r.deserialize().collect::<Result<Vec<RunMetrics>, _>>().map_err(|e| format_err(path, e))
}

/// Outcome of re-deriving results from the stored trajectories.
#[derive(Debug, Default)]
pub struct VerifyReport {
    pub checked: usize,
    pub mismatches: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Recomputes the safety report of every run (and, for sweeps, every
/// summary row) from the trajectory CSVs and compares with what is stored.
pub fn verify_dir(dir: &Path) -> Result<VerifyReport, ExperimentError> {
    let manifest = Manifest::read(dir)?;
    let summary = match manifest.kind.as_str() {
        "sweep" => Some(read_summary(&dir.join(SUMMARY_FILE))?),
        "run" => None,
        other => return Err(format_err(&dir.join(MANIFEST_FILE), format!("unknown kind `{other}`"))),
    };
    let param = manifest.param.map(|p| p.to_string()).unwrap_or_default();
    let mut out = VerifyReport::default();
    for entry in &manifest.runs {
        let tpath = dir.join(&entry.trajectory);
        let stored_row = summary.as_ref().and_then(|rows| rows.iter().find(|r| r.run == entry.name));
        if summary.is_some() && stored_row.is_none() && !tpath.exists() {
            // A failed sweep run leaves neither output nor row.
            continue;
        }
        let scenario = manifest.scenario.build(&entry.overrides)?;
        let traj = read_trajectory(&tpath)?;
        let metrics = RunMetrics::compute(&entry.name, &param, &entry.value, &scenario, &traj);

        let rpath = dir.join(&entry.report);
        let text = fs::read_to_string(&rpath).map_err(io_err(&rpath))?;
        let stored: SafetyReport = toml::from_str(&text).map_err(|e| format_err(&rpath, e))?;
        let recomputed = SafetyReport::from_trajectory(
            &scenario.model,
            &traj,
            scenario.safety,
            measure_slip_with(&traj, safety::CONTACT_DEBOUNCE_TICKS, |p| scenario.terrain.ground.normal(p.x, p.y)),
        );
        out.checked += 1;
        if !reports_match(&stored, &recomputed) {
            out.mismatches.push(format!("{}: safety report differs from trajectory", entry.report));
        }
        if summary.is_some() {
            match stored_row {
                None => out.mismatches.push(format!("{}: no summary row", entry.name)),
                Some(row) => {
                    let diff = row.mismatches(&metrics, VERIFY_TOLERANCE);
                    if !diff.is_empty() {
                        out.mismatches.push(format!("{}: summary fields differ: {}", entry.name, diff.join(", ")));
                    }
                }
            }
        }
    }
    if let Some(rows) = &summary {
        for r in rows {
            if !manifest.runs.iter().any(|e| e.name == r.run) {
                out.mismatches.push(format!("{}: summary row without a run", r.run));
            }
        }
    }
    Ok(out)
}

fn reports_match(a: &SafetyReport, b: &SafetyReport) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= VERIFY_TOLERANCE * (1.0 + x.abs().max(y.abs()));
    a.slip_events == b.slip_events
        && a.torque_events == b.torque_events
        && a.collision_events == b.collision_events
        && a.fallback_ticks == b.fallback_ticks
        && close(a.max_slip, b.max_slip)
        && close(a.mean_slip, b.mean_slip)
        && close(a.max_torque, b.max_torque)
        && close(a.max_limit_excess, b.max_limit_excess)
        && a.stances.len() == b.stances.len()
        && a.stances.iter().zip(&b.stances).all(|(s, t)| {
            s.foot == t.foot && s.start_tick == t.start_tick && s.end_tick == t.end_tick && close(s.slip, t.slip)
        })
}
