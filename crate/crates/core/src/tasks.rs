//! Builders for the prioritized whole-body tasks over the decision vector
//! `x = [q̈, F_grf, τ_j]`.
//!
//! | task | kind       | priority |
//! |------|------------|----------|
//! | T1 dynamic consistency | equality | 0 |
//! | T2 kinematic limits    | inequality | 0 |
//! | T3 torque limits       | inequality | 0 |
//! | T4 joint tracking      | equality | 1 |
//! | T5 contact motion      | equality | 2 |
//! | T6 foot-terrain forces | inequality | 2 |
//! | T7 body stabilization  | equality | 3 |

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::ops::Range;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::dynamics::{DynamicsTerms, GeneralizedState};
use crate::hqp::Task;
use crate::model::RobotModel;
use crate::terrain::TerrainParams;

pub const T1_DYNAMICS: &str = "T1 dynamic consistency";
pub const T2_KINEMATIC_LIMITS: &str = "T2 kinematic limits";
pub const T3_TORQUE_LIMITS: &str = "T3 torque limits";
pub const T4_JOINT_TRACKING: &str = "T4 joint tracking";
pub const T5_CONTACT_MOTION: &str = "T5 contact motion";
pub const T6_FOOT_FORCES: &str = "T6 foot-terrain forces";
pub const T7_BODY_STABILIZATION: &str = "T7 body stabilization";

pub const PRIORITY_HARD: u32 = 0;
pub const PRIORITY_TRACKING: u32 = 1;
pub const PRIORITY_CONTACT: u32 = 2;
pub const PRIORITY_BODY: u32 = 3;

/// Index map of the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionLayout {
    pub n_joints: usize,
    pub n_feet: usize,
}

impl DecisionLayout {
    pub fn new(n_joints: usize, n_feet: usize) -> Self {
        Self { n_joints, n_feet }
    }

    pub fn for_model(model: &RobotModel) -> Self {
        Self::new(model.n_joints(), model.n_feet())
    }

    pub fn nv(&self) -> usize {
        6 + self.n_joints
    }

    pub fn dim(&self) -> usize {
        self.nv() + 3 * self.n_feet + self.n_joints
    }

    pub fn qdd(&self) -> Range<usize> {
        0..self.nv()
    }

    pub fn forces(&self) -> Range<usize> {
        self.nv()..self.nv() + 3 * self.n_feet
    }

    pub fn force(&self, foot: usize) -> Range<usize> {
        let s = self.nv() + 3 * foot;
        s..s + 3
    }

    pub fn tau(&self) -> Range<usize> {
        let s = self.nv() + 3 * self.n_feet;
        s..s + self.n_joints
    }

    pub fn joint_acc(&self, j: usize) -> usize {
        6 + j
    }

    pub fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let r = |r: Range<usize>| x.rows(r.start, r.len()).into_owned();
        (r(self.qdd()), r(self.forces()), r(self.tau()))
    }
}

/// Per-foot force limits implied by the terrain model.
#[derive(Debug, Clone, PartialEq)]
pub struct FootForceBounds {
    pub f_xy_max: Vec<f64>,
    pub f_z_max: Vec<f64>,
    pub xi_xy_max: f64,
    pub delta_max: f64,
    pub mu: f64,
    /// Cohesive shear capacity `πR²a` per foot.
    pub cohesion_force: Vec<f64>,
    /// Logistic shear factor at `xi_xy_max`.
    pub shear_factor: f64,
    /// Terrain normal per foot (world frame).
    pub normals: Vec<Vector3<f64>>,
    /// Whether the tangential friction-pyramid rows are built.
    pub friction: bool,
}

/// Force bounds for the given contact set. `f_z_estimate` feeds the
/// tangential cap reported in `f_xy_max`; the constraint rows themselves are
/// linear in the optimized normal force.
pub fn compute_force_bounds(
    terrain: &TerrainParams,
    radii: &[f64],
    contact: &[bool],
    f_z_estimate: &[f64],
    xi_xy_max: f64,
    delta_max: f64,
) -> FootForceBounds {
    let c = contact.len();
    assert_eq!(radii.len(), c);
    assert_eq!(f_z_estimate.len(), c);
    // (1 − e^{−x})/(1 + e^{−x}) = tanh(x/2)
    let s = (0.715 * xi_xy_max.max(0.0) / terrain.shear_modulus).tanh();
    let cohesion_force: Vec<f64> = radii.iter().map(|r| PI * r * r * terrain.cohesion).collect();
    let f_xy_max = (0..c)
        .map(|i| FRAC_1_SQRT_2 * (cohesion_force[i] + terrain.mu * f_z_estimate[i].max(0.0)) * s)
        .collect();
    let f_z_max = (0..c)
        .map(|i| {
            if contact[i] {
                let r = radii[i];
                (PI * r * terrain.k_c + PI * r * r * terrain.k_phi) * delta_max.max(0.0).powf(terrain.sinkage_exponent)
            } else {
                0.0
            }
        })
        .collect();
    FootForceBounds {
        f_xy_max,
        f_z_max,
        xi_xy_max,
        delta_max,
        mu: terrain.mu,
        cohesion_force,
        shear_factor: s,
        normals: vec![Vector3::z(); c],
        friction: true,
    }
}

fn selector(rows: &[(usize, f64)], dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), dim);
    for (r, &(c, v)) in rows.iter().enumerate() {
        m[(r, c)] = v;
    }
    m
}

/// Contact-masked foot Jacobian: rows of airborne feet are zeroed so their
/// force columns drop out of the dynamics.
fn masked_jacobian(terms: &DynamicsTerms, contact: &[bool]) -> DMatrix<f64> {
    let mut j = terms.foot_jacobian.clone();
    for (i, &c) in contact.iter().enumerate() {
        if !c {
            j.rows_mut(3 * i, 3).fill(0.0);
        }
    }
    j
}

/// T1: `M q̈ − Jᵀ F − S_j τ = −h`.
pub fn task_dynamic_consistency(layout: &DecisionLayout, terms: &DynamicsTerms, contact: &[bool]) -> Task {
    let nv = layout.nv();
    let mut a = DMatrix::zeros(nv, layout.dim());
    a.view_mut((0, 0), (nv, nv)).copy_from(&terms.mass_matrix);
    let jt = masked_jacobian(terms, contact).transpose();
    a.view_mut((0, layout.forces().start), (nv, 3 * layout.n_feet)).copy_from(&(-jt));
    for j in 0..layout.n_joints {
        a[(6 + j, layout.tau().start + j)] = -1.0;
    }
    Task::equality(T1_DYNAMICS, PRIORITY_HARD, a, -&terms.bias)
}

/// Joint acceleration bounds that let each joint stop within `10·dt_loop`:
/// `q̈_max = 2/Δt²·(q_max − q − Δt q̇)`, likewise for `q̈_min`.
pub fn acceleration_bounds(q: f64, qd: f64, q_min: f64, q_max: f64, dt_loop: f64) -> (f64, f64) {
    let horizon = 10.0 * dt_loop;
    let k = 2.0 / (horizon * horizon);
    (k * (q_min - q - horizon * qd), k * (q_max - q - horizon * qd))
}

/// T2 with explicit position limits (`ranges[j] = (q_min, q_max)`).
pub fn task_kinematic_limits(layout: &DecisionLayout, ranges: &[(f64, f64)], state: &GeneralizedState, dt_loop: f64) -> Task {
    assert!(dt_loop > 0.0);
    let n = layout.n_joints;
    let mut rows = Vec::with_capacity(2 * n);
    let mut f = DVector::zeros(2 * n);
    let qd = state.qdot();
    for j in 0..n {
        let (lo, hi) = acceleration_bounds(state.q[j], qd[j], ranges[j].0, ranges[j].1, dt_loop);
        rows.push((layout.joint_acc(j), 1.0));
        f[2 * j] = hi;
        rows.push((layout.joint_acc(j), -1.0));
        f[2 * j + 1] = -lo;
    }
    Task::inequality(T2_KINEMATIC_LIMITS, PRIORITY_HARD, selector(&rows, layout.dim()), f)
}

/// T2 using the model's own joint ranges.
pub fn task_kinematic_limits_from_model(layout: &DecisionLayout, model: &RobotModel, state: &GeneralizedState, dt_loop: f64) -> Task {
    let ranges: Vec<(f64, f64)> = model.joints.iter().map(|j| (j.limits.q_min, j.limits.q_max)).collect();
    task_kinematic_limits(layout, &ranges, state, dt_loop)
}

/// T3: `τ ≤ τ_max`, `−τ ≤ −τ_min`.
pub fn task_torque_limits(layout: &DecisionLayout, model: &RobotModel) -> Task {
    let n = layout.n_joints;
    let mut rows = Vec::with_capacity(2 * n);
    let mut f = DVector::zeros(2 * n);
    for (j, joint) in model.joints.iter().enumerate() {
        let col = layout.tau().start + j;
        rows.push((col, 1.0));
        f[2 * j] = joint.limits.tau_max;
        rows.push((col, -1.0));
        f[2 * j + 1] = -joint.limits.tau_min;
    }
    Task::inequality(T3_TORQUE_LIMITS, PRIORITY_HARD, selector(&rows, layout.dim()), f)
}

/// PD joint acceleration target `k_p∘(a_t − q) − k_d∘q̇`.
pub fn tracking_acceleration(a_t: &DVector<f64>, state: &GeneralizedState, kp: &DVector<f64>, kd: &DVector<f64>) -> DVector<f64> {
    kp.component_mul(&(a_t - &state.q)) - kd.component_mul(&state.qdot())
}

/// T4: `S_jᵀ q̈ = q̈_j*`.
pub fn task_joint_tracking(layout: &DecisionLayout, a_t: &DVector<f64>, state: &GeneralizedState, kp: &DVector<f64>, kd: &DVector<f64>) -> Task {
    let rows: Vec<(usize, f64)> = (0..layout.n_joints).map(|j| (layout.joint_acc(j), 1.0)).collect();
    let b = tracking_acceleration(a_t, state, kp, kd);
    Task::equality(T4_JOINT_TRACKING, PRIORITY_TRACKING, selector(&rows, layout.dim()), b)
}

/// T5: `J_i q̈ = −(J̇q̇)_i` for every stance foot.
pub fn task_contact_motion(layout: &DecisionLayout, terms: &DynamicsTerms, contact: &[bool]) -> Task {
    let stance: Vec<usize> = (0..layout.n_feet).filter(|&i| contact[i]).collect();
    let nv = layout.nv();
    let mut a = DMatrix::zeros(3 * stance.len(), layout.dim());
    let mut b = DVector::zeros(3 * stance.len());
    for (k, &i) in stance.iter().enumerate() {
        a.view_mut((3 * k, 0), (3, nv)).copy_from(&terms.foot_jacobian.rows(3 * i, 3));
        b.rows_mut(3 * k, 3).copy_from(&(-terms.foot_drift.rows(3 * i, 3)));
    }
    Task::equality(T5_CONTACT_MOTION, PRIORITY_CONTACT, a, b)
}

/// Tangent basis orthogonal to `n`, aligned with world x where possible.
pub fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let t1 = (Vector3::x() - n * n.x).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// T6: inscribed friction pyramid scaled by the shear factor (when
/// `bounds.friction`), normal cap and unilateral rows for stance feet;
/// zero-force rows for swing feet.
pub fn task_ft_interaction(layout: &DecisionLayout, bounds: &FootForceBounds, contact: &[bool]) -> Task {
    let dim = layout.dim();
    let stance = contact.iter().filter(|&&c| c).count();
    let pyramid = if bounds.friction { 4 } else { 0 };
    let rows = (2 + pyramid) * stance + 6 * (layout.n_feet - stance);
    debug_assert!(stance <= layout.n_feet);
    let mut d = DMatrix::zeros(rows, dim);
    let mut f = DVector::zeros(rows);
    let s = bounds.shear_factor;
    let mut r = 0;
    for i in 0..layout.n_feet {
        let col = layout.force(i).start;
        if contact[i] {
            let n = bounds.normals[i];
            let (t1, t2) = tangent_basis(&n);
            let cap = FRAC_1_SQRT_2 * bounds.cohesion_force[i] * s;
            let slope = FRAC_1_SQRT_2 * bounds.mu * s;
            for t in [t1, -t1, t2, -t2].into_iter().take(pyramid) {
                let row = t - n * slope;
                for k in 0..3 {
                    d[(r, col + k)] = row[k];
                }
                f[r] = cap;
                r += 1;
            }
            for k in 0..3 {
                d[(r, col + k)] = n[k];
                d[(r + 1, col + k)] = -n[k];
            }
            f[r] = bounds.f_z_max[i];
            f[r + 1] = 0.0;
            r += 2;
        } else {
            for k in 0..3 {
                d[(r, col + k)] = 1.0;
                d[(r + 1, col + k)] = -1.0;
                r += 2;
            }
        }
    }
    Task::inequality(T6_FOOT_FORCES, PRIORITY_CONTACT, d, f)
}

/// T7: base roll and pitch angular acceleration and vertical acceleration
/// held at zero.
pub fn task_body_stabilization(layout: &DecisionLayout) -> Task {
    let a = selector(&[(3, 1.0), (4, 1.0), (2, 1.0)], layout.dim());
    Task::equality(T7_BODY_STABILIZATION, PRIORITY_BODY, a, DVector::zeros(3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::compute_dynamics;
    use crate::model::bundled_hexapod;

    fn hexapod_setup() -> (RobotModel, GeneralizedState, DynamicsTerms, DecisionLayout) {
        let model = bundled_hexapod();
        let state = GeneralizedState::standing(&model, 0.16);
        let terms = compute_dynamics(&model, &state).unwrap();
        let layout = DecisionLayout::for_model(&model);
        (model, state, terms, layout)
    }

    #[test]
    fn layout_covers_decision_vector() {
        let l = DecisionLayout::new(18, 6);
        assert_eq!(l.dim(), 24 + 18 + 18);
        assert_eq!(l.qdd().end, l.forces().start);
        assert_eq!(l.forces().end, l.tau().start);
        assert_eq!(l.tau().end, l.dim());
    }

    #[test]
    fn every_task_has_full_width() {
        let (model, state, terms, layout) = hexapod_setup();
        let contact = [true, false, true, false, true, false];
        let bounds = compute_force_bounds(&TerrainParams::flat(), &[0.02; 6], &contact, &[50.0; 6], 0.004, 0.005);
        let a_t = state.q.clone();
        let k = DVector::from_element(18, 1.0);
        let tasks = [
            task_dynamic_consistency(&layout, &terms, &contact),
            task_kinematic_limits_from_model(&layout, &model, &state, 0.02),
            task_torque_limits(&layout, &model),
            task_joint_tracking(&layout, &a_t, &state, &k, &k),
            task_contact_motion(&layout, &terms, &contact),
            task_ft_interaction(&layout, &bounds, &contact),
            task_body_stabilization(&layout),
        ];
        for t in &tasks {
            assert_eq!(t.a.ncols(), layout.dim(), "{}", t.label);
            assert_eq!(t.d.ncols(), layout.dim(), "{}", t.label);
        }
        assert_eq!(tasks[4].a.nrows(), 9);
        assert_eq!(tasks[5].d.nrows(), 36);
    }

    #[test]
    fn zero_decision_leaves_gravity_unbalanced() {
        let (_, _, terms, layout) = hexapod_setup();
        let t = task_dynamic_consistency(&layout, &terms, &[true; 6]);
        let r = t.equality_residual(&DVector::zeros(layout.dim()));
        assert!((r.norm() - terms.bias.norm()).abs() < 1e-12);
    }

    #[test]
    fn joint_at_upper_limit_at_rest_gets_zero_acceleration_bound() {
        let (lo, hi) = acceleration_bounds(1.0, 0.0, -1.0, 1.0, 0.02);
        assert_eq!(hi, 0.0);
        assert!(lo < 0.0);
        let (lo, hi) = acceleration_bounds(0.0, 0.0, -1.0, 1.0, 0.002);
        assert!((hi + lo).abs() < 1e-9 && hi > 1e3);
    }

    #[test]
    fn torque_limit_margin() {
        let (model, _, _, layout) = hexapod_setup();
        let t = task_torque_limits(&layout, &model);
        let mut x = DVector::zeros(layout.dim());
        assert!(t.inequality_violation(&x).amax() == 0.0);
        x[layout.tau().start + 4] = model.joints[4].limits.tau_max + 1.0;
        let v = t.inequality_violation(&x);
        assert!((v.amax() - 1.0).abs() < 1e-12);
        assert_eq!(v.iter().filter(|&&e| e > 0.0).count(), 1);
    }

    #[test]
    fn proportional_target() {
        let (_, state, _, layout) = hexapod_setup();
        let mut a_t = state.q.clone();
        a_t[7] += 0.1;
        let t = task_joint_tracking(&layout, &a_t, &state, &DVector::from_element(18, 100.0), &DVector::zeros(18));
        for j in 0..18 {
            let want = if j == 7 { 10.0 } else { 0.0 };
            assert!((t.b[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn contact_motion_rows_only_for_stance_feet() {
        let (_, _, terms, layout) = hexapod_setup();
        assert_eq!(task_contact_motion(&layout, &terms, &[false; 6]).a.nrows(), 0);
        let t = task_contact_motion(&layout, &terms, &[true; 6]);
        assert!(t.b.amax() < 1e-15);
    }

    #[test]
    fn force_bound_cases() {
        let p = TerrainParams::flat();
        let b = compute_force_bounds(&p, &[0.02; 2], &[true, false], &[100.0, 100.0], 0.0, 0.005);
        assert_eq!(b.f_xy_max, vec![0.0, 0.0]);
        assert_eq!(b.f_z_max[1], 0.0);
        let far = compute_force_bounds(&p, &[0.02; 2], &[true, true], &[100.0, 100.0], 1.0, 0.005);
        assert!((far.f_xy_max[0] - FRAC_1_SQRT_2 * p.mu * 100.0).abs() < 1e-9);
    }

    #[test]
    fn frictionless_pyramid_forbids_tangential_force() {
        let p = TerrainParams { mu: 0.0, cohesion: 0.0, ..TerrainParams::flat() };
        let layout = DecisionLayout::new(0, 1);
        let b = compute_force_bounds(&p, &[0.02], &[true], &[10.0], 0.004, 0.005);
        let t = task_ft_interaction(&layout, &b, &[true]);
        let mut x = DVector::zeros(layout.dim());
        x[6 + 2] = 50.0;
        assert_eq!(t.inequality_violation(&x).amax(), 0.0);
        x[6] = 1e-3;
        assert!(t.inequality_violation(&x).amax() > 0.0);
    }

    #[test]
    fn body_selector_arithmetic() {
        let layout = DecisionLayout::new(18, 6);
        let t = task_body_stabilization(&layout);
        let mut x = DVector::zeros(layout.dim());
        assert_eq!(t.equality_residual(&x).norm(), 0.0);
        x[2] = 1.0;
        assert_eq!(t.equality_residual(&x).norm(), 1.0);
        x[0] = 5.0;
        x[5] = 5.0;
        assert_eq!(t.equality_residual(&x).norm(), 1.0);
    }
}
