//! Hazard metrics: foot slip per stance phase, torque excursions and joint
//! limit excursions, each counted once per incident.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::trajectory::Trajectory;
use crate::model::RobotModel;

/// Ticks a raw contact flag must hold before the stance segmentation
/// follows it.
pub const CONTACT_DEBOUNCE_TICKS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyThresholds {
    /// Per-stance slip distance counted as an event (m).
    pub slip: f64,
    /// Torque magnitude counted as an event (N·m).
    pub torque: f64,
    /// Tolerance on the torque threshold for solver round-off (N·m).
    pub torque_tolerance: f64,
    /// An excursion ends once |τ| falls below this fraction of the threshold.
    pub torque_release: f64,
    /// Joint-limit overshoot counted as a collision (rad).
    pub joint_margin: f64,
}

impl Default for SafetyThresholds {
    fn default() -> Self {
        Self { slip: 0.04, torque: 20.0, torque_tolerance: 1e-8, torque_release: 0.95, joint_margin: 1e-3 }
    }
}

/// One debounced stance phase of one foot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceSlip {
    pub foot: usize,
    pub start_tick: usize,
    /// Last tick of the phase (inclusive).
    pub end_tick: usize,
    pub start_time: f64,
    pub end_time: f64,
    /// Tangential path length of the foot during the phase (m).
    pub slip: f64,
    /// Whether the phase was still running when the trajectory ended.
    pub open: bool,
}

/// Debounced stance intervals `[start, end]` from raw per-tick flags: gaps
/// shorter than `debounce` ticks are bridged, then contact runs shorter
/// than `debounce` ticks are dropped.
pub fn stance_segments(flags: &[bool], debounce: usize) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if flags[i] {
            let s = i;
            while i < flags.len() && flags[i] {
                i += 1;
            }
            runs.push((s, i - 1));
        } else {
            i += 1;
        }
    }
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for r in runs {
        match merged.last_mut() {
            Some(last) if r.0 - last.1 - 1 < debounce => last.1 = r.1,
            _ => merged.push(r),
        }
    }
    merged.retain(|(s, e)| e - s + 1 >= debounce);
    merged
}

/// Per-stance slip distances: the tangential path length of each foot's
/// world position over each stance phase, with `normal` giving the ground
/// normal at a point.
pub fn measure_slip_with<F>(traj: &Trajectory, debounce: usize, normal: F) -> Vec<StanceSlip>
where
    F: Fn(&Vector3<f64>) -> Vector3<f64>,
{
    let n_ticks = traj.ticks.len();
    let mut out = Vec::new();
    for foot in 0..traj.foot_names.len() {
        let flags: Vec<bool> = traj.ticks.iter().map(|t| t.contact[foot]).collect();
        for (s, e) in stance_segments(&flags, debounce) {
            let mut slip = 0.0;
            for k in s..e {
                let a = traj.ticks[k].feet[foot];
                let b = traj.ticks[k + 1].feet[foot];
                let n = normal(&a);
                let step = b - a;
                slip += (step - n * n.dot(&step)).norm();
            }
            out.push(StanceSlip {
                foot,
                start_tick: s,
                end_tick: e,
                start_time: traj.ticks[s].time,
                end_time: traj.ticks[e].time,
                slip,
                open: e + 1 == n_ticks,
            });
        }
    }
    out.sort_by(|a, b| a.start_tick.cmp(&b.start_tick).then(a.foot.cmp(&b.foot)));
    out
}

/// Per-stance slip on level ground with the default debounce.
pub fn measure_slip(traj: &Trajectory) -> Vec<StanceSlip> {
    measure_slip_with(traj, CONTACT_DEBOUNCE_TICKS, |_| Vector3::z())
}

/// Number of excursions of `values` (per tick, per channel) with hysteresis:
/// an excursion starts when `start(v)` holds and ends once `clear(v)` holds.
fn count_excursions<S, C>(series: &[Vec<f64>], channels: usize, start: S, clear: C) -> usize
where
    S: Fn(usize, f64) -> bool,
    C: Fn(usize, f64) -> bool,
{
    let mut count = 0;
    for ch in 0..channels {
        let mut active = false;
        for row in series {
            let v = row[ch];
            if !active && start(ch, v) {
                active = true;
                count += 1;
            } else if active && clear(ch, v) {
                active = false;
            }
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub thresholds: SafetyThresholds,
    pub slip_events: usize,
    pub max_slip: f64,
    pub mean_slip: f64,
    pub torque_events: usize,
    pub max_torque: f64,
    pub collision_events: usize,
    /// Largest overshoot beyond a joint limit (rad, 0 when none).
    pub max_limit_excess: f64,
    pub fallback_ticks: usize,
    pub stances: Vec<StanceSlip>,
    /// Largest |τ| at each tick.
    #[serde(skip)]
    pub torque_trace: Vec<f64>,
    /// Largest joint-limit overshoot at each tick.
    #[serde(skip)]
    pub limit_trace: Vec<f64>,
}

impl SafetyReport {
    pub fn from_trajectory(model: &RobotModel, traj: &Trajectory, thresholds: SafetyThresholds, stances: Vec<StanceSlip>) -> Self {
        let n = model.n_joints();
        let taus: Vec<Vec<f64>> = traj.ticks.iter().map(|t| t.tau.clone()).collect();
        let qs: Vec<Vec<f64>> = traj.ticks.iter().map(|t| t.q.clone()).collect();
        let limits: Vec<(f64, f64)> = model.joints.iter().map(|j| (j.limits.q_min, j.limits.q_max)).collect();
        let excess = |j: usize, q: f64| (limits[j].0 - q).max(q - limits[j].1).max(0.0);

        let th = thresholds;
        let torque_events = count_excursions(
            &taus,
            n,
            |_, t| t.abs() > th.torque + th.torque_tolerance,
            |_, t| t.abs() < th.torque_release * th.torque,
        );
        let collision_events = count_excursions(&qs, n, |j, q| excess(j, q) > th.joint_margin, |j, q| excess(j, q) <= th.joint_margin);
        let torque_trace: Vec<f64> = taus.iter().map(|r| r.iter().fold(0.0f64, |m, t| m.max(t.abs()))).collect();
        let limit_trace: Vec<f64> =
            qs.iter().map(|r| r.iter().enumerate().fold(0.0f64, |m, (j, &q)| m.max(excess(j, q)))).collect();
        let closed: Vec<f64> = stances.iter().map(|s| s.slip).collect();
        let mean_slip = if closed.is_empty() { 0.0 } else { closed.iter().sum::<f64>() / closed.len() as f64 };
        Self {
            thresholds,
            slip_events: stances.iter().filter(|s| s.slip > th.slip).count(),
            max_slip: closed.iter().fold(0.0, |m: f64, &s| m.max(s)),
            mean_slip,
            torque_events,
            max_torque: torque_trace.iter().fold(0.0, |m: f64, &t| m.max(t)),
            collision_events,
            max_limit_excess: limit_trace.iter().fold(0.0, |m: f64, &t| m.max(t)),
            fallback_ticks: traj.ticks.iter().filter(|t| t.fallback).count(),
            stances,
            torque_trace,
            limit_trace,
        }
    }

    pub fn total_events(&self) -> usize {
        self.slip_events + self.torque_events + self.collision_events
    }

    /// Structured text form (TOML).
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("safety report serializes")
    }
}
