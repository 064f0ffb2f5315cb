//! Brute-force reference solvers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{rngs::StdRng, Rng, SeedableRng};
use wbc_core::hqp::Task;
use wbc_core::qp::QpProblem;

/// Orthonormal null-space basis and minimum-norm particular solution of
/// `A x = b` via the pseudo-inverse.
pub fn nullspace(a: &DMatrix<f64>, b: &DVector<f64>, d: usize) -> (DVector<f64>, DMatrix<f64>) {
    if a.nrows() == 0 {
        return (DVector::zeros(d), DMatrix::identity(d, d));
    }
    // eigen-decomposition of AᵀA: eigenvectors with zero eigenvalue span the null space
    let ata = a.tr_mul(a);
    let eig = ata.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax().max(1e-300);
    let mut cols = Vec::new();
    for k in 0..d {
        if eig.eigenvalues[k] <= 1e-12 * top {
            cols.push(eig.eigenvectors.column(k).into_owned());
        }
    }
    let z = if cols.is_empty() { DMatrix::zeros(d, 0) } else { DMatrix::from_columns(&cols) };
    let pinv = a.clone().pseudo_inverse(1e-10 * a.amax().max(1e-300)).unwrap();
    (pinv * b, z)
}

/// Enumerates every subset of inequality rows, solves the KKT system on
/// each, and returns the lowest-objective point that is primal and dual
/// feasible. `None` if no subset qualifies.
pub fn enumerate_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
) -> Option<DVector<f64>> {
    let d = g.len();
    let (x0, z) = nullspace(a_eq, b_eq, d);
    let r = z.ncols();
    let hr = z.transpose() * h * &z;
    let gr = z.transpose() * (h * &x0 + g);
    let c = a_in * &z;
    let e = b_in - a_in * &x0;
    let m = c.nrows();
    assert!(m <= 16, "enumeration oracle limited to 16 rows");
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if rows.len() > r {
            continue;
        }
        let k = rows.len();
        let mut kkt = DMatrix::zeros(r + k, r + k);
        kkt.view_mut((0, 0), (r, r)).copy_from(&hr);
        let mut rhs = DVector::zeros(r + k);
        rhs.rows_mut(0, r).copy_from(&(-&gr));
        for (j, &i) in rows.iter().enumerate() {
            for col in 0..r {
                kkt[(r + j, col)] = c[(i, col)];
                kkt[(col, r + j)] = c[(i, col)];
            }
            rhs[r + j] = e[i];
        }
        if r + k == 0 {
            if m == 0 || e.min() >= -1e-9 {
                let obj = 0.5 * x0.dot(&(h * &x0)) + g.dot(&x0);
                best = Some((obj, x0.clone()));
            }
            continue;
        }
        let svd = kkt.clone().svd(false, false);
        if svd.singular_values.min() < 1e-13 * svd.singular_values.max().max(1.0) {
            continue;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let y = sol.rows(0, r).into_owned();
        let lambda = sol.rows(r, k);
        let lam_scale = 1.0 + lambda.amax();
        if lambda.iter().any(|&l| l < -1e-9 * lam_scale) {
            continue;
        }
        let scale = 1.0 + e.amax() + c.amax() * y.amax();
        if m > 0 && (&c * &y - &e).max() > 1e-9 * scale {
            continue;
        }
        let x = &x0 + &z * &y;
        let obj = 0.5 * x.dot(&(h * &x)) + g.dot(&x);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, x));
        }
    }
    best.map(|(_, x)| x)
}

pub struct RefTask {
    pub priority: u32,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub d: DMatrix<f64>,
    pub f: DVector<f64>,
}

/// Sequential lexicographic solve with explicit slack variables, each level
/// handed to [`enumerate_qp`]. Returns `x*` and the per-level slack `v*`.
pub fn sequential_hqp(tasks: &[RefTask], d: usize, eps: f64) -> (DVector<f64>, Vec<DVector<f64>>) {
    let mut prios: Vec<u32> = tasks.iter().map(|t| t.priority).collect();
    prios.sort_unstable();
    prios.dedup();
    let mut eq_rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut in_rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut x = DVector::zeros(d);
    let mut slacks = Vec::new();
    for p in prios {
        let lvl: Vec<&RefTask> = tasks.iter().filter(|t| t.priority == p).collect();
        let mut a_rows = Vec::new();
        let mut d_rows = Vec::new();
        for t in &lvl {
            for i in 0..t.a.nrows() {
                a_rows.push((t.a.row(i).transpose(), t.b[i]));
            }
            for i in 0..t.d.nrows() {
                d_rows.push((t.d.row(i).transpose(), t.f[i]));
            }
        }
        let m = d_rows.len();
        let n = d + m;
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for (row, bi) in &a_rows {
            let mut hx = h.view_mut((0, 0), (d, d));
            hx += row * row.transpose();
            let mut gx = g.rows_mut(0, d);
            gx -= row * *bi;
        }
        for i in 0..d {
            h[(i, i)] += eps;
        }
        for i in d..n {
            h[(i, i)] = 1.0;
        }
        let mut a_eq = DMatrix::zeros(eq_rows.len(), n);
        let mut b_eq = DVector::zeros(eq_rows.len());
        for (k, (row, bi)) in eq_rows.iter().enumerate() {
            a_eq.view_mut((k, 0), (1, d)).copy_from(&row.transpose());
            b_eq[k] = *bi;
        }
        let total = in_rows.len() + 2 * m;
        let mut a_in = DMatrix::zeros(total, n);
        let mut b_in = DVector::zeros(total);
        for (k, (row, fi)) in in_rows.iter().enumerate() {
            a_in.view_mut((k, 0), (1, d)).copy_from(&row.transpose());
            b_in[k] = *fi;
        }
        let base = in_rows.len();
        for (j, (row, fi)) in d_rows.iter().enumerate() {
            a_in.view_mut((base + j, 0), (1, d)).copy_from(&row.transpose());
            a_in[(base + j, d + j)] = -1.0;
            b_in[base + j] = *fi;
            a_in[(base + m + j, d + j)] = -1.0;
        }
        let z = enumerate_qp(&h, &g, &a_eq, &b_eq, &a_in, &b_in).expect("slack level always feasible");
        x = z.rows(0, d).into_owned();
        let v = z.rows(d, m).into_owned();
        for (row, bi) in a_rows {
            let _ = bi;
            let val = row.dot(&x);
            eq_rows.push((row, val));
        }
        for (j, (row, fi)) in d_rows.into_iter().enumerate() {
            let realized = (row.dot(&x) - fi).max(v[j]).max(0.0);
            in_rows.push((row, fi + realized));
        }
        slacks.push(v);
    }
    (x, slacks)
}

pub fn random_matrix(rng: &mut StdRng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Strictly convex problem whose constraints are feasible by construction.
pub fn random_problem(seed: u64) -> QpProblem {
    let mut rng = StdRng::seed_from_u64(seed);
    let d = rng.random_range(1..=6);
    let m = rng.random_range(0..=8);
    let p = rng.random_range(0..=d.min(2));
    let b = random_matrix(&mut rng, d, d);
    let h = b.tr_mul(&b) + DMatrix::identity(d, d) * 0.1;
    let g = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
    let x_feas = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let a_eq = random_matrix(&mut rng, p, d);
    let b_eq = &a_eq * &x_feas;
    let a_in = random_matrix(&mut rng, m, d);
    let margin = DVector::from_fn(m, |_, _| rng.random_range(0.0..0.5));
    let b_in = &a_in * &x_feas + margin;
    QpProblem::new(h, g).equalities(a_eq, b_eq).inequalities(a_in, b_in)
}

pub fn random_tasks(rng: &mut StdRng, d: usize, levels: u32) -> Vec<Task> {
    let mut tasks = Vec::new();
    for p in 0..levels {
        let n = rng.random_range(0..=3);
        let m = rng.random_range(0..=3);
        let a = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let dm = DMatrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0));
        let f = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        tasks.push(Task { label: format!("level{p}"), priority: p, a, b, d: dm, f });
    }
    tasks
}

pub fn reference(tasks: &[Task]) -> Vec<RefTask> {
    tasks
        .iter()
        .map(|t| RefTask { priority: t.priority, a: t.a.clone(), b: t.b.clone(), d: t.d.clone(), f: t.f.clone() })
        .collect()
}

pub fn hqp_setup(seed: u64) -> (usize, Vec<Task>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let d = rng.random_range(1..=5);
    (d, random_tasks(&mut rng, d, 3))
}
