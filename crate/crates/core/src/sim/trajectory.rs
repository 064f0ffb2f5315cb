//! Per-tick trajectory records and their CSV form.
//!
//! Column order: `time`, base position `base_x..z`, base orientation
//! quaternion `quat_w, quat_x, quat_y, quat_z`, joint angles `q_<joint>`,
//! base velocity `v_base_x..z` (world) and `w_base_x..z` (body), joint rates
//! `qd_<joint>`, applied torques `tau_<joint>`, joint references
//! `ref_<joint>`, ground reaction forces `f_<foot>_x..z`, foot positions
//! `p_<foot>_x..z`, contact flags `contact_<foot>` (0/1), and `fallback`
//! (1 when the torque came from the damping fallback).

use std::io::{Read, Write};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trajectory csv header: {0}")]
    Header(String),
    #[error("trajectory csv row {row}: {reason}")]
    Row { row: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub time: f64,
    pub base_position: Vector3<f64>,
    /// `(w, x, y, z)`.
    pub base_orientation: [f64; 4],
    pub q: Vec<f64>,
    /// `[ẋ_base (world), ω_base (body), q̇_j]`.
    pub v: Vec<f64>,
    pub tau: Vec<f64>,
    pub reference: Vec<f64>,
    /// World-frame ground reaction force per foot.
    pub forces: Vec<Vector3<f64>>,
    pub feet: Vec<Vector3<f64>>,
    pub contact: Vec<bool>,
    pub fallback: bool,
}

impl TickRecord {
    pub fn base_rotation(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.base_orientation;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner()
    }
}

pub fn quaternion_of(r: &Matrix3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_matrix(r);
    [q.w, q.i, q.j, q.k]
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub joint_names: Vec<String>,
    pub foot_names: Vec<String>,
    pub ticks: Vec<TickRecord>,
}

impl Trajectory {
    pub fn new(joint_names: Vec<String>, foot_names: Vec<String>) -> Self {
        Self { joint_names, foot_names, ticks: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["time", "base_x", "base_y", "base_z", "quat_w", "quat_x", "quat_y", "quat_z"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(self.joint_names.iter().map(|j| format!("q_{j}")));
        h.extend(["v_base_x", "v_base_y", "v_base_z", "w_base_x", "w_base_y", "w_base_z"].iter().map(|s| s.to_string()));
        h.extend(self.joint_names.iter().map(|j| format!("qd_{j}")));
        h.extend(self.joint_names.iter().map(|j| format!("tau_{j}")));
        h.extend(self.joint_names.iter().map(|j| format!("ref_{j}")));
        for prefix in ["f", "p"] {
            for f in &self.foot_names {
                for axis in ["x", "y", "z"] {
                    h.push(format!("{prefix}_{f}_{axis}"));
                }
            }
        }
        h.extend(self.foot_names.iter().map(|f| format!("contact_{f}")));
        h.push("fallback".into());
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TrajectoryError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        let mut row: Vec<String> = Vec::new();
        for t in &self.ticks {
            row.clear();
            row.push(t.time.to_string());
            row.extend(t.base_position.iter().map(f64::to_string));
            row.extend(t.base_orientation.iter().map(f64::to_string));
            for v in [&t.q, &t.v, &t.tau, &t.reference] {
                row.extend(v.iter().map(f64::to_string));
            }
            for v in [&t.forces, &t.feet] {
                row.extend(v.iter().flat_map(|p| p.iter().map(f64::to_string).collect::<Vec<_>>()));
            }
            row.extend(t.contact.iter().map(|&c| if c { "1" } else { "0" }.to_string()));
            row.push(if t.fallback { "1" } else { "0" }.into());
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, TrajectoryError> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let joint_names: Vec<String> =
            header.iter().filter_map(|h| h.strip_prefix("q_").map(String::from)).collect();
        let foot_names: Vec<String> =
            header.iter().filter_map(|h| h.strip_prefix("contact_").map(String::from)).collect();
        let traj = Trajectory::new(joint_names, foot_names);
        if traj.header() != header {
            return Err(TrajectoryError::Header("columns do not follow the trajectory schema".into()));
        }
        let (n, c) = (traj.joint_names.len(), traj.foot_names.len());
        let mut traj = traj;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let nums: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| TrajectoryError::Row { row, reason: e.to_string() })?;
            let mut at = 0;
            let mut take = |k: usize| {
                let s = nums[at..at + k].to_vec();
                at += k;
                s
            };
            let time = take(1)[0];
            let bp = take(3);
            let quat = take(4);
            let q = take(n);
            let v = take(6 + n);
            let tau = take(n);
            let reference = take(n);
            let vecs = |s: Vec<f64>| s.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect::<Vec<_>>();
            let forces = vecs(take(3 * c));
            let feet = vecs(take(3 * c));
            let flag = |x: f64| -> Result<bool, TrajectoryError> {
                match x {
                    0.0 => Ok(false),
                    1.0 => Ok(true),
                    _ => Err(TrajectoryError::Row { row, reason: format!("flag {x} is not 0 or 1") }),
                }
            };
            let contact = take(c).into_iter().map(flag).collect::<Result<Vec<_>, _>>()?;
            let fallback = flag(take(1)[0])?;
            traj.ticks.push(TickRecord {
                time,
                base_position: Vector3::new(bp[0], bp[1], bp[2]),
                base_orientation: [quat[0], quat[1], quat[2], quat[3]],
                q,
                v,
                tau,
                reference,
                forces,
                feet,
                contact,
                fallback,
            });
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let mut t = Trajectory::new(vec!["a".into(), "b".into()], vec!["f".into()]);
        for k in 0..3 {
            let x = k as f64 * 0.1 + 1.0 / 3.0;
            t.ticks.push(TickRecord {
                time: k as f64 * 0.005,
                base_position: Vector3::new(x, -x, 0.16),
                base_orientation: [1.0, 0.0, 0.0, 0.0],
                q: vec![x, 2.0 * x],
                v: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, x, -x],
                tau: vec![1e-17, -20.0],
                reference: vec![0.0, std::f64::consts::PI],
                forces: vec![Vector3::new(0.0, 1.5, 49.0)],
                feet: vec![Vector3::new(0.3, 0.1, -1e-4)],
                contact: vec![k % 2 == 0],
                fallback: k == 1,
            });
        }
        t
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_foreign_columns() {
        let err = Trajectory::read_csv("time,x\n0,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TrajectoryError::Header(_)));
    }
}
