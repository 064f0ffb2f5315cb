//! Per-step contact resolution.
//!
//! Contact forces for one physics step are found by projected Gauss–Seidel
//! over the stance feet, with the normal law of the terrain model evaluated
//! at the end-of-step penetration and the shear law acting as a stick/slip
//! limit: a foot sticks while the force needed to hold it stays inside the
//! mobilized shear capacity `(πR²a + μF_N)·s(ξ)`, and otherwise slides with
//! that capacity plus tangential damping opposing the slip.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};

use crate::tasks::tangent_basis;
use crate::terrain::{ContactPoint, TerrainParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSolverOptions {
    pub max_sweeps: usize,
    /// Stop when no force component moves by more than this (N).
    pub tolerance: f64,
}

impl Default for ContactSolverOptions {
    fn default() -> Self {
        Self { max_sweeps: 200, tolerance: 1e-9 }
    }
}

/// One foot touching the ground during the step.
#[derive(Debug, Clone)]
pub struct ActiveContact {
    pub foot: usize,
    pub radius: f64,
    pub point: ContactPoint,
    /// Rows `t1, t2, n` of the contact frame.
    pub frame: Matrix3<f64>,
}

impl ActiveContact {
    pub fn new(foot: usize, radius: f64, point: ContactPoint) -> Self {
        let n = point.normal;
        let (t1, t2) = tangent_basis(&n);
        let frame = Matrix3::from_rows(&[t1.transpose(), t2.transpose(), n.transpose()]);
        Self { foot, radius, point, frame }
    }
}

/// Contact-frame forces `(F_t1, F_t2, F_n)` and whether each foot stuck.
#[derive(Debug, Clone)]
pub struct ContactSolution {
    pub local: Vec<Vector3<f64>>,
    pub sticking: Vec<bool>,
    pub sweeps: usize,
}

impl ContactSolution {
    pub fn world_force(&self, contacts: &[ActiveContact], k: usize) -> Vector3<f64> {
        contacts[k].frame.transpose() * self.local[k]
    }
}

/// Solves for contact forces given the free end-of-step contact velocities
/// `u_free` (contact frames, stacked) and the step Delassus matrix
/// `g = h·J M⁻¹ Jᵀ` in the same frames. `h` is the step length.
pub fn solve_contacts(
    terrain: &TerrainParams,
    contacts: &[ActiveContact],
    u_free: &DVector<f64>,
    g: &DMatrix<f64>,
    h: f64,
    options: &ContactSolverOptions,
) -> ContactSolution {
    let k = contacts.len();
    let mut force = vec![Vector3::zeros(); k];
    let mut sticking = vec![true; k];
    // current contact velocity u = u_free + G F, kept up to date
    let mut u = u_free.clone();
    let mut sweeps = 0;
    for sweep in 0..options.max_sweeps {
        sweeps = sweep + 1;
        let mut change: f64 = 0.0;
        for (c, contact) in contacts.iter().enumerate() {
            let r = 3 * c;
            let old = force[c];
            let block = g.fixed_view::<3, 3>(r, r).into_owned();
            // velocity with this contact's own force removed
            let w = u.fixed_rows::<3>(r) - block * old;
            let (f, stick) = solve_single(terrain, contact, &w, &block, h);
            let delta = f - old;
            if delta != Vector3::zeros() {
                u += g.columns(r, 3) * delta;
            }
            force[c] = f;
            sticking[c] = stick;
            change = change.max(delta.amax());
        }
        if change <= options.tolerance {
            break;
        }
    }
    ContactSolution { local: force, sticking, sweeps }
}

fn solve_single(
    terrain: &TerrainParams,
    contact: &ActiveContact,
    w: &Vector3<f64>,
    g: &Matrix3<f64>,
    h: f64,
) -> (Vector3<f64>, bool) {
    let p = &contact.point;
    let r = contact.radius;
    // penetration changes by −h·(u_n + u_n⁺)/(2 n_z): trapezoidal position update
    let nz = p.normal.z.max(1e-6);
    let u_n0 = -p.delta_rate * nz;
    let stiffness = terrain.sinkage_stiffness(r);
    let m = terrain.sinkage_exponent;
    let bearing = stiffness * p.delta.powf(m);
    let slope = if m == 1.0 { stiffness } else { m * stiffness * p.delta.max(1e-6).powf(m - 1.0) };
    let c0 = bearing - slope * h * u_n0 / (2.0 * nz);
    let c1 = slope * h / (2.0 * nz) + terrain.b_n / nz;

    // tangential force from the previous sweep enters the normal velocity
    let g_tt = g.fixed_view::<2, 2>(0, 0).into_owned();
    let g_tn = g.fixed_view::<2, 1>(0, 2).into_owned();
    let g_nt = g.fixed_view::<1, 2>(2, 0).into_owned();
    let g_nn = g[(2, 2)];

    let mut f_t = Vector2::zeros();
    let mut f_n = 0.0;
    let mut stick = true;
    // a few alternations between the normal and tangential sub-problems
    for _ in 0..4 {
        let w_n = w.z + (g_nt * f_t)[0];
        f_n = ((c0 - c1 * w_n) / (1.0 + c1 * g_nn)).max(0.0);
        if f_n == 0.0 {
            f_t = Vector2::zeros();
            stick = false;
            break;
        }
        let w_t = Vector2::new(w.x, w.y) + g_tn * f_n;
        let cap = terrain.static_shear(r, f_n, p.xi);
        let (ft, st) = tangential(terrain, &w_t, &g_tt, cap);
        f_t = ft;
        stick = st;
    }
    (Vector3::new(f_t.x, f_t.y, f_n), stick)
}

/// Stick if the holding force fits inside `cap`, else slide with `cap`
/// plus damping `b_T·|u_t|` against the slip velocity.
fn tangential(terrain: &TerrainParams, w_t: &Vector2<f64>, g_tt: &Matrix2<f64>, cap: f64) -> (Vector2<f64>, bool) {
    let hold = match g_tt.try_inverse() {
        Some(inv) => -(inv * w_t),
        None => Vector2::zeros(),
    };
    if hold.norm() <= cap {
        return (hold, true);
    }
    let b_t = terrain.b_t;
    let damped = Matrix2::identity() + g_tt * b_t;
    let damped_inv = damped.try_inverse().unwrap_or_else(Matrix2::identity);
    let mut dir = if w_t.norm() > 0.0 { w_t.normalize() } else { Vector2::zeros() };
    let mut f = -dir * cap;
    for _ in 0..8 {
        // u = w + G F with F = −cap·d − b_T·u
        let u = damped_inv * (w_t - g_tt * dir * cap);
        f = -dir * cap - u * b_t;
        let speed = u.norm();
        if speed <= 1e-12 {
            break;
        }
        let next = u / speed;
        if (next - dir).norm() <= 1e-12 {
            break;
        }
        dir = next;
    }
    (f, false)
}
