//! Floating-base rigid-body dynamics.
//!
//! Spatial quantities are expressed in the world frame about the world
//! origin, with motion vectors ordered `[angular; linear]`. Working in a single
//! frame means no per-link Plücker transforms are needed: joint motion
//! subspaces, inertias and Jacobian columns can all be used directly.
//!
//! Generalized velocity layout is `[ẋ_base (world), ω_base (body), q̇_j]`.
//! The base reference point is the origin of the base link frame; the
//! bundled robot places the base body's centre of mass there.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use thiserror::Error;

use crate::model::{JointKind, RobotModel};

/// Mass matrices whose estimated condition number exceeds this are rejected.
pub const MAX_MASS_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("base orientation is not a rotation matrix (error {0:e})")]
    NotRotation(f64),
    #[error("mass matrix singular (condition estimate {0:e})")]
    SingularMass(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedState {
    pub base_position: Vector3<f64>,
    pub base_rotation: Matrix3<f64>,
    pub q: DVector<f64>,
    /// `[ẋ_base (world), ω_base (body), q̇_j]`, length `6 + n`.
    pub v: DVector<f64>,
}

impl GeneralizedState {
    pub fn zero(model: &RobotModel) -> Self {
        Self {
            base_position: Vector3::zeros(),
            base_rotation: Matrix3::identity(),
            q: DVector::zeros(model.n_joints()),
            v: DVector::zeros(model.nv()),
        }
    }

    /// Nominal posture at rest with the base at `height`.
    pub fn standing(model: &RobotModel, height: f64) -> Self {
        let mut s = Self::zero(model);
        s.base_position.z = height;
        s.q = DVector::from_vec(model.nominal_posture());
        s
    }

    pub fn qdot(&self) -> DVector<f64> {
        self.v.rows(6, self.v.len() - 6).into_owned()
    }

    pub fn base_linear_velocity(&self) -> Vector3<f64> {
        self.v.fixed_rows::<3>(0).into_owned()
    }

    pub fn base_angular_velocity(&self) -> Vector3<f64> {
        self.v.fixed_rows::<3>(3).into_owned()
    }

    pub fn check(&self, model: &RobotModel) -> Result<(), DynamicsError> {
        if self.q.len() != model.n_joints() {
            return Err(DynamicsError::DimensionMismatch { what: "q_j", expected: model.n_joints(), got: self.q.len() });
        }
        if self.v.len() != model.nv() {
            return Err(DynamicsError::DimensionMismatch { what: "v", expected: model.nv(), got: self.v.len() });
        }
        let r = &self.base_rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max().max((r.determinant() - 1.0).abs());
        if !(err <= 1e-9) {
            return Err(DynamicsError::NotRotation(err));
        }
        Ok(())
    }

    /// Projects the base orientation back onto SO(3).
    pub fn renormalize(&mut self) {
        let rot = Rotation3::from_matrix_eps(&self.base_rotation, 1e-12, 20, Rotation3::identity());
        self.base_rotation = rot.into_inner();
    }

    /// Configuration advanced by the velocity-like vector `dv` over `dt`:
    /// base position in the world frame, orientation through the exponential
    /// map of the body-frame rotation vector, joints additively.
    pub fn integrate_configuration(&mut self, dv: &DVector<f64>, dt: f64) {
        self.base_position += dv.fixed_rows::<3>(0) * dt;
        let w: Vector3<f64> = dv.fixed_rows::<3>(3) * dt;
        self.base_rotation *= Rotation3::new(w).into_inner();
        let n = self.q.len();
        self.q += dv.rows(6, n) * dt;
        self.renormalize();
    }
}

/// Quantities entering the equations of motion
/// `M q̈ + h = S_j τ_j + Jᵀ F_grf`.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub mass_matrix: DMatrix<f64>,
    pub bias: DVector<f64>,
    /// Stacked foot Jacobians, `3c × (6 + n)`, world-frame linear velocity.
    pub foot_jacobian: DMatrix<f64>,
    /// `J̇ q̇`, length `3c`.
    pub foot_drift: DVector<f64>,
    pub foot_positions: DVector<f64>,
    pub foot_velocities: DVector<f64>,
}

impl DynamicsTerms {
    pub fn n_feet(&self) -> usize {
        self.foot_positions.len() / 3
    }

    pub fn foot_position(&self, i: usize) -> Vector3<f64> {
        self.foot_positions.fixed_rows::<3>(3 * i).into_owned()
    }

    pub fn foot_velocity(&self, i: usize) -> Vector3<f64> {
        self.foot_velocities.fixed_rows::<3>(3 * i).into_owned()
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn ang(v: &Vector6<f64>) -> Vector3<f64> {
    v.fixed_rows::<3>(0).into_owned()
}

fn lin(v: &Vector6<f64>) -> Vector3<f64> {
    v.fixed_rows::<3>(3).into_owned()
}

fn motion(w: Vector3<f64>, v: Vector3<f64>) -> Vector6<f64> {
    Vector6::new(w.x, w.y, w.z, v.x, v.y, v.z)
}

/// Motion-vector cross product `v ×ₘ m`.
fn cross_motion(v: &Vector6<f64>, m: &Vector6<f64>) -> Vector6<f64> {
    let (w, vl) = (ang(v), lin(v));
    motion(w.cross(&ang(m)), w.cross(&lin(m)) + vl.cross(&ang(m)))
}

/// Force-vector cross product `v ×_f f`.
fn cross_force(v: &Vector6<f64>, f: &Vector6<f64>) -> Vector6<f64> {
    let (w, vl) = (ang(v), lin(v));
    motion(w.cross(&ang(f)) + vl.cross(&lin(f)), w.cross(&lin(f)))
}

/// Spatial inertia about the world origin of a body with mass `m`, world
/// centre of mass `c` and world-frame rotational inertia `ic` about `c`.
fn spatial_inertia(m: f64, c: &Vector3<f64>, ic: &Matrix3<f64>) -> Matrix6<f64> {
    let cx = skew(c);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(ic - m * cx * cx));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(m * cx));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(m * cx.transpose()));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * m));
    out
}

/// Per-link world poses, motion subspaces, inertias and velocities.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub rotation: Vec<Matrix3<f64>>,
    pub position: Vec<Vector3<f64>>,
    /// Spatial motion subspace of each link's revolute joint.
    subspace: Vec<Option<Vector6<f64>>>,
    /// Columns map the six base velocity coordinates to base spatial velocity.
    base_subspace: [Vector6<f64>; 6],
    inertia: Vec<Matrix6<f64>>,
    velocity: Vec<Vector6<f64>>,
}

impl Kinematics {
    pub fn new(model: &RobotModel, state: &GeneralizedState) -> Self {
        let nl = model.links.len();
        let mut rotation = Vec::with_capacity(nl);
        let mut position = Vec::with_capacity(nl);
        let mut subspace = Vec::with_capacity(nl);
        let mut inertia = Vec::with_capacity(nl);
        let mut velocity: Vec<Vector6<f64>> = Vec::with_capacity(nl);

        let rb = state.base_rotation;
        let xb = state.base_position;
        let mut base_subspace = [Vector6::zeros(); 6];
        for k in 0..3 {
            base_subspace[k] = motion(Vector3::zeros(), Vector3::ith(k, 1.0));
            let axis = rb.column(k).into_owned();
            base_subspace[3 + k] = motion(axis, xb.cross(&axis));
        }

        for (_i, link) in model.links.iter().enumerate() {
            let (r, p, s) = match (link.parent, link.joint) {
                (None, _) => (rb, xb, None),
                (Some(pi), joint) => {
                    let rp = rotation[pi];
                    let p: Vector3<f64> = position[pi] + rp * link.origin_xyz;
                    let r0 = rp * link.origin_rot;
                    match joint {
                        JointKind::Revolute { axis } => {
                            let qi = state.q[link.joint_index.expect("revolute joint has an index")];
                            let r = r0 * Rotation3::new(axis * qi).into_inner();
                            let z = r0 * axis;
                            (r, p, Some(motion(z, p.cross(&z))))
                        }
                        _ => (r0, p, None),
                    }
                }
            };
            let c = p + r * link.com;
            inertia.push(spatial_inertia(link.mass, &c, &(r * link.inertia * r.transpose())));
            let vel = match link.parent {
                None => base_subspace
                    .iter()
                    .enumerate()
                    .fold(Vector6::zeros(), |acc, (k, col)| acc + col * state.v[k]),
                Some(pi) => {
                    let mut v = velocity[pi];
                    if let (Some(s), Some(j)) = (s, link.joint_index) {
                        v += s * state.v[6 + j];
                    }
                    v
                }
            };
            rotation.push(r);
            position.push(p);
            subspace.push(s);
            velocity.push(vel);
        }
        Self { rotation, position, subspace, base_subspace, inertia, velocity }
    }

    pub fn point_position(&self, link: usize, offset: &Vector3<f64>) -> Vector3<f64> {
        self.position[link] + self.rotation[link] * offset
    }

    pub fn point_velocity(&self, link: usize, p: &Vector3<f64>) -> Vector3<f64> {
        let v = &self.velocity[link];
        lin(v) + ang(v).cross(p)
    }
}

/// Spatial accelerations of every link for the given `qdd`; `gravity` adds
/// the fictitious upward base acceleration used by Newton–Euler.
fn link_accelerations(
    model: &RobotModel,
    kin: &Kinematics,
    state: &GeneralizedState,
    qdd: &DVector<f64>,
    gravity: bool,
) -> Vec<Vector6<f64>> {
    let mut acc: Vec<Vector6<f64>> = Vec::with_capacity(model.links.len());
    for (i, link) in model.links.iter().enumerate() {
        let a = match link.parent {
            None => {
                let mut a = kin
                    .base_subspace
                    .iter()
                    .enumerate()
                    .fold(Vector6::zeros(), |s, (k, col)| s + col * qdd[k]);
                // time derivative of the base subspace: ẋ_b × ω_world
                let xdot = state.base_linear_velocity();
                let w_world = state.base_rotation * state.base_angular_velocity();
                a += motion(Vector3::zeros(), xdot.cross(&w_world));
                if gravity {
                    a += motion(Vector3::zeros(), Vector3::new(0.0, 0.0, model.gravity));
                }
                a
            }
            Some(pi) => {
                let mut a = acc[pi];
                if let (Some(s), Some(j)) = (kin.subspace[i], link.joint_index) {
                    a += s * qdd[6 + j] + cross_motion(&kin.velocity[i], &(s * state.v[6 + j]));
                }
                a
            }
        };
        acc.push(a);
    }
    acc
}

fn rnea_with(
    model: &RobotModel,
    kin: &Kinematics,
    state: &GeneralizedState,
    qdd: &DVector<f64>,
    gravity: bool,
) -> DVector<f64> {
    let acc = link_accelerations(model, kin, state, qdd, gravity);
    let mut force: Vec<Vector6<f64>> = (0..model.links.len())
        .map(|i| {
            let iv = kin.inertia[i] * kin.velocity[i];
            kin.inertia[i] * acc[i] + cross_force(&kin.velocity[i], &iv)
        })
        .collect();
    let mut tau = DVector::zeros(model.nv());
    for i in (0..model.links.len()).rev() {
        let link = &model.links[i];
        match link.parent {
            None => {
                for (k, col) in kin.base_subspace.iter().enumerate() {
                    tau[k] = col.dot(&force[i]);
                }
            }
            Some(pi) => {
                if let (Some(s), Some(j)) = (kin.subspace[i], link.joint_index) {
                    tau[6 + j] = s.dot(&force[i]);
                }
                let fi = force[i];
                force[pi] += fi;
            }
        }
    }
    tau
}

/// Generalized forces required to produce `qdd` (recursive Newton–Euler,
/// gravity included, no contact forces).
pub fn inverse_dynamics(
    model: &RobotModel,
    state: &GeneralizedState,
    qdd: &DVector<f64>,
) -> Result<DVector<f64>, DynamicsError> {
    state.check(model)?;
    if qdd.len() != model.nv() {
        return Err(DynamicsError::DimensionMismatch { what: "qdd", expected: model.nv(), got: qdd.len() });
    }
    let kin = Kinematics::new(model, state);
    Ok(rnea_with(model, &kin, state, qdd, true))
}

/// Joint-space inertia by the composite-rigid-body algorithm.
fn crba(model: &RobotModel, kin: &Kinematics) -> DMatrix<f64> {
    let nv = model.nv();
    let nl = model.links.len();
    let mut composite = kin.inertia.clone();
    for i in (1..nl).rev() {
        let p = model.links[i].parent.expect("non-root link has a parent");
        let ci = composite[i];
        composite[p] += ci;
    }
    let mut m = DMatrix::zeros(nv, nv);
    for i in (0..nl).rev() {
        let link = &model.links[i];
        if let (Some(s), Some(j)) = (kin.subspace[i], link.joint_index) {
            let col = 6 + j;
            let f = composite[i] * s;
            m[(col, col)] = s.dot(&f);
            let mut k = link.parent;
            while let Some(a) = k {
                let anc = &model.links[a];
                match anc.parent {
                    None => {
                        for (r, bs) in kin.base_subspace.iter().enumerate() {
                            m[(r, col)] = bs.dot(&f);
                            m[(col, r)] = m[(r, col)];
                        }
                    }
                    Some(_) => {
                        if let (Some(sa), Some(ja)) = (kin.subspace[a], anc.joint_index) {
                            m[(6 + ja, col)] = sa.dot(&f);
                            m[(col, 6 + ja)] = m[(6 + ja, col)];
                        }
                    }
                }
                k = anc.parent;
            }
        }
    }
    for r in 0..6 {
        let f = composite[0] * kin.base_subspace[r];
        for c in 0..6 {
            m[(c, r)] = kin.base_subspace[c].dot(&f);
        }
    }
    m
}

pub fn mass_matrix(model: &RobotModel, state: &GeneralizedState) -> Result<DMatrix<f64>, DynamicsError> {
    state.check(model)?;
    Ok(crba(model, &Kinematics::new(model, state)))
}

/// World-frame linear Jacobian of a point fixed to `link`.
fn point_jacobian(model: &RobotModel, kin: &Kinematics, link: usize, p: &Vector3<f64>) -> nalgebra::Matrix3xX<f64> {
    let mut jac = nalgebra::Matrix3xX::zeros(model.nv());
    let column = |s: &Vector6<f64>| lin(s) + ang(s).cross(p);
    let mut k = Some(link);
    while let Some(i) = k {
        let l = &model.links[i];
        match l.parent {
            None => {
                for (c, bs) in kin.base_subspace.iter().enumerate() {
                    jac.set_column(c, &column(bs));
                }
            }
            Some(_) => {
                if let (Some(s), Some(j)) = (kin.subspace[i], l.joint_index) {
                    jac.set_column(6 + j, &column(&s));
                }
            }
        }
        k = l.parent;
    }
    jac
}

pub fn foot_positions(model: &RobotModel, state: &GeneralizedState) -> Vec<Vector3<f64>> {
    let kin = Kinematics::new(model, state);
    model.feet.iter().map(|f| kin.point_position(f.link, &f.offset)).collect()
}

pub fn compute_dynamics(model: &RobotModel, state: &GeneralizedState) -> Result<DynamicsTerms, DynamicsError> {
    state.check(model)?;
    let kin = Kinematics::new(model, state);
    let nv = model.nv();
    let c = model.n_feet();
    let zero = DVector::zeros(nv);
    let mass_matrix = crba(model, &kin);
    let bias = rnea_with(model, &kin, state, &zero, true);
    let drift_acc = link_accelerations(model, &kin, state, &zero, false);

    let mut foot_jacobian = DMatrix::zeros(3 * c, nv);
    let mut foot_drift = DVector::zeros(3 * c);
    let mut foot_positions = DVector::zeros(3 * c);
    let mut foot_velocities = DVector::zeros(3 * c);
    for (i, foot) in model.feet.iter().enumerate() {
        let p = kin.point_position(foot.link, &foot.offset);
        let vp = kin.point_velocity(foot.link, &p);
        let jac = point_jacobian(model, &kin, foot.link, &p);
        foot_jacobian.view_mut((3 * i, 0), (3, nv)).copy_from(&jac);
        let a = &drift_acc[foot.link];
        let w = ang(&kin.velocity[foot.link]);
        let drift = lin(a) + ang(a).cross(&p) + w.cross(&vp);
        foot_drift.fixed_rows_mut::<3>(3 * i).copy_from(&drift);
        foot_positions.fixed_rows_mut::<3>(3 * i).copy_from(&p);
        foot_velocities.fixed_rows_mut::<3>(3 * i).copy_from(&vp);
    }
    Ok(DynamicsTerms { mass_matrix, bias, foot_jacobian, foot_drift, foot_positions, foot_velocities })
}

/// Cholesky factor of the mass matrix with a cheap condition estimate from
/// the factor's diagonal.
pub fn factor_mass(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, DynamicsError> {
    let chol = m.clone().cholesky().ok_or(DynamicsError::SingularMass(f64::INFINITY))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d.abs()), hi.max(d.abs())));
    let cond = (hi / lo).powi(2);
    if !(cond <= MAX_MASS_CONDITION) {
        return Err(DynamicsError::SingularMass(cond));
    }
    Ok(chol)
}

/// Generalized force `S_j τ_j + Jᵀ F − h`.
pub fn applied_force(terms: &DynamicsTerms, tau_j: &DVector<f64>, f_grf: &DVector<f64>) -> DVector<f64> {
    let mut rhs = -&terms.bias;
    rhs += terms.foot_jacobian.tr_mul(f_grf);
    let n = tau_j.len();
    let mut tail = rhs.rows_mut(6, n);
    tail += tau_j;
    rhs
}

/// `q̈ = M⁻¹ (S_j τ_j + Jᵀ F_grf − h)`.
pub fn forward_dynamics(
    model: &RobotModel,
    state: &GeneralizedState,
    tau_j: &DVector<f64>,
    f_grf: &DVector<f64>,
) -> Result<DVector<f64>, DynamicsError> {
    if tau_j.len() != model.n_joints() {
        return Err(DynamicsError::DimensionMismatch { what: "tau_j", expected: model.n_joints(), got: tau_j.len() });
    }
    if f_grf.len() != 3 * model.n_feet() {
        return Err(DynamicsError::DimensionMismatch { what: "F_grf", expected: 3 * model.n_feet(), got: f_grf.len() });
    }
    let terms = compute_dynamics(model, state)?;
    let chol = factor_mass(&terms.mass_matrix)?;
    Ok(chol.solve(&applied_force(&terms, tau_j, f_grf)))
}

/// Kinetic and gravitational potential energy.
pub fn energy(model: &RobotModel, state: &GeneralizedState) -> Result<(f64, f64), DynamicsError> {
    let m = mass_matrix(model, state)?;
    let kinetic = 0.5 * state.v.dot(&(&m * &state.v));
    let kin = Kinematics::new(model, state);
    let potential = model
        .links
        .iter()
        .enumerate()
        .map(|(i, l)| l.mass * model.gravity * kin.point_position(i, &l.com).z)
        .sum();
    Ok((kinetic, potential))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bundled_hexapod, load_model};
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn pendulum() -> RobotModel {
        load_model(crate::model::tests::PENDULUM).unwrap()
    }

    fn random_state(model: &RobotModel, rng: &mut StdRng) -> GeneralizedState {
        let mut s = GeneralizedState::standing(model, 0.2);
        s.base_position += Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.1..0.1));
        let rv = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-3.0..3.0));
        s.base_rotation = Rotation3::new(rv).into_inner();
        for q in s.q.iter_mut() {
            *q += rng.random_range(-0.3..0.3);
        }
        for v in s.v.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        s
    }

    #[test]
    fn zero_velocity_bias_is_gravity() {
        let model = bundled_hexapod();
        let mut rng = StdRng::seed_from_u64(3);
        let mut s = random_state(&model, &mut rng);
        s.v.fill(0.0);
        let t = compute_dynamics(&model, &s).unwrap();
        let mg = model.total_mass() * model.gravity;
        assert!((t.bias[0]).abs() < 1e-9 && (t.bias[1]).abs() < 1e-9);
        assert!((t.bias[2] - mg).abs() < 1e-9, "{}", t.bias[2]);
        // bias equals the gradient of potential energy: compare with gravity-only RNEA
        let kin = Kinematics::new(&model, &s);
        let grav_only = rnea_with(&model, &kin, &s, &DVector::zeros(model.nv()), true);
        assert!((grav_only - &t.bias).amax() < 1e-12);
    }

    #[test]
    fn pendulum_matches_hand_dynamics() {
        let model = pendulum();
        let (m1, l, g) = (2.0, 0.5, 9.81);
        for &theta in &[0.0, 0.3, -1.1, 2.0] {
            let mut s = GeneralizedState::zero(&model);
            s.q[0] = theta;
            let t = compute_dynamics(&model, &s).unwrap();
            assert!((t.mass_matrix[(6, 6)] - (m1 * l * l + 1e-9)).abs() < 1e-9);
            assert!((t.bias[6] - m1 * g * l * theta.sin()).abs() < 1e-9, "{} vs {}", t.bias[6], m1 * g * l * theta.sin());
        }
    }

    #[test]
    fn mass_matrix_columns_match_unit_acceleration_rnea() {
        let model = bundled_hexapod();
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..5 {
            let s = random_state(&model, &mut rng);
            let kin = Kinematics::new(&model, &s);
            let m = crba(&model, &kin);
            let h = rnea_with(&model, &kin, &s, &DVector::zeros(model.nv()), true);
            assert!((&m - m.transpose()).amax() < 1e-12);
            for k in 0..model.nv() {
                let mut e = DVector::zeros(model.nv());
                e[k] = 1.0;
                let col = rnea_with(&model, &kin, &s, &e, true) - &h;
                assert!((col - m.column(k)).amax() < 1e-8, "column {k}");
            }
            assert!(factor_mass(&m).is_ok());
        }
    }

    fn perturbed(model: &RobotModel, s: &GeneralizedState, k: usize, eps: f64) -> GeneralizedState {
        let mut d = DVector::zeros(model.nv());
        d[k] = eps;
        let mut out = s.clone();
        out.integrate_configuration(&d, 1.0);
        out
    }

    #[test]
    fn foot_jacobian_matches_central_differences() {
        let model = bundled_hexapod();
        let mut rng = StdRng::seed_from_u64(5);
        let s = random_state(&model, &mut rng);
        let t = compute_dynamics(&model, &s).unwrap();
        let eps = 1e-6;
        for k in 0..model.nv() {
            let plus = foot_positions(&model, &perturbed(&model, &s, k, eps));
            let minus = foot_positions(&model, &perturbed(&model, &s, k, -eps));
            for f in 0..model.n_feet() {
                let fd = (plus[f] - minus[f]) / (2.0 * eps);
                let col = t.foot_jacobian.fixed_view::<3, 1>(3 * f, k);
                assert!((fd - col).amax() < 1e-6, "foot {f} coord {k}: {fd:?} vs {col:?}");
            }
        }
        // J v reproduces the foot velocities
        assert!((&t.foot_jacobian * &s.v - &t.foot_velocities).amax() < 1e-12);
    }

    #[test]
    fn foot_drift_matches_time_derivative_of_foot_velocity() {
        let model = bundled_hexapod();
        let mut rng = StdRng::seed_from_u64(8);
        let s = random_state(&model, &mut rng);
        let zero_tau = DVector::zeros(model.n_joints());
        let zero_f = DVector::zeros(3 * model.n_feet());
        let qdd = forward_dynamics(&model, &s, &zero_tau, &zero_f).unwrap();
        let t = compute_dynamics(&model, &s).unwrap();
        let eps = 1e-5;
        // second-order Taylor step of the unforced trajectory, forward and back
        let shifted = |sign: f64| {
            let h = sign * eps;
            let mut st = s.clone();
            let dv = &s.v * h + &qdd * (0.5 * h * h);
            st.integrate_configuration(&dv, 1.0);
            st.v = &s.v + &qdd * h;
            compute_dynamics(&model, &st).unwrap().foot_velocities
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
        let predicted = &t.foot_drift + &t.foot_jacobian * &qdd;
        assert!((fd - predicted).amax() < 1e-4);
    }

    #[test]
    fn unforced_fall_accelerates_with_gravity() {
        let model = bundled_hexapod();
        let s = GeneralizedState::standing(&model, 1.0);
        let qdd = forward_dynamics(&model, &s, &DVector::zeros(18), &DVector::zeros(18)).unwrap();
        assert!((qdd[2] + model.gravity).abs() < 1e-9);
        assert!(qdd.rows(3, model.nv() - 3).amax() < 1e-9);
        assert!(qdd[0].abs() < 1e-9 && qdd[1].abs() < 1e-9);
    }

    /// Contact forces supplying the unactuated base rows of `q`, least squares.
    fn base_balancing_forces(t: &DynamicsTerms, q: &DVector<f64>) -> DVector<f64> {
        let jb_t = t.foot_jacobian.columns(0, 6).transpose();
        jb_t.svd(true, true).solve(&q.rows(0, 6).into_owned(), 1e-12).unwrap()
    }

    #[test]
    fn inverse_forward_round_trip() {
        let model = bundled_hexapod();
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..5 {
            let s = random_state(&model, &mut rng);
            let target = DVector::from_fn(model.nv(), |_, _| rng.random_range(-2.0..2.0));
            let t = compute_dynamics(&model, &s).unwrap();
            let needed = inverse_dynamics(&model, &s, &target).unwrap();
            let f = base_balancing_forces(&t, &needed);
            let tau = needed.rows(6, 18) - t.foot_jacobian.columns(6, 18).tr_mul(&f);
            let qdd = forward_dynamics(&model, &s, &tau, &f).unwrap();
            assert!((qdd - target).amax() < 1e-8);
        }
    }

    #[test]
    fn static_force_balance_holds_the_robot_still() {
        let model = bundled_hexapod();
        let s = GeneralizedState::standing(&model, 0.16);
        let t = compute_dynamics(&model, &s).unwrap();
        let f = base_balancing_forces(&t, &t.bias);
        let tau = t.bias.rows(6, 18) - t.foot_jacobian.columns(6, 18).tr_mul(&f);
        let qdd = forward_dynamics(&model, &s, &tau, &f).unwrap();
        assert!(qdd.norm() <= 1e-6, "{}", qdd.norm());
        // vertical support adds up to the weight
        let fz: f64 = (0..6).map(|i| f[3 * i + 2]).sum();
        assert!((fz - model.total_mass() * model.gravity).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let model = bundled_hexapod();
        let mut s = GeneralizedState::zero(&model);
        s.q = DVector::zeros(3);
        assert!(matches!(compute_dynamics(&model, &s), Err(DynamicsError::DimensionMismatch { .. })));
        let s = GeneralizedState::zero(&model);
        assert!(matches!(
            forward_dynamics(&model, &s, &DVector::zeros(2), &DVector::zeros(18)),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn singular_mass_detected() {
        let mut m = DMatrix::identity(4, 4);
        m[(3, 3)] = 1e-14;
        assert!(matches!(factor_mass(&m), Err(DynamicsError::SingularMass(_))));
    }
}
