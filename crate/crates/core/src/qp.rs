//! Dense convex QP by a primal active-set method.
//!
//! ```text
//! minimize   ½ xᵀ H x + gᵀ x
//! subject to A_eq x  = b_eq
//!            A_in x <= b_in
//! ```
//!
//! Equalities are eliminated up front: a full SVD of `A_eq` gives a particular
//! solution and an orthonormal null-space basis `Z`, so redundant or
//! rank-deficient equality rows (common once higher priority levels are
//! frozen) are harmless. The inequality phase then runs in the reduced
//! coordinates `x = x₀ + Z y`, starting from a feasible point found by a
//! phase-one problem when the initial guess violates any row.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("Hessian not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("non-finite problem data")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem; add rows with [`Self::equalities`] and
    /// [`Self::inequalities`].
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let d = gradient.len();
        Self {
            hessian,
            gradient,
            a_eq: DMatrix::zeros(0, d),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, d),
            b_in: DVector::zeros(0),
        }
    }

    pub fn equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    fn validate(&self) -> Result<(), QpError> {
        let d = self.dim();
        let dims = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(QpError::DimensionMismatch(format!("{what} is {got:?}, expected {want:?}")))
            }
        };
        dims("H", self.hessian.shape(), (d, d))?;
        dims("A_eq", self.a_eq.shape(), (self.b_eq.len(), d))?;
        dims("A_in", self.a_in.shape(), (self.b_in.len(), d))?;
        let all_finite = self.hessian.iter().chain(self.gradient.iter()).chain(self.a_eq.iter())
            .chain(self.b_eq.iter()).chain(self.a_in.iter()).chain(self.b_in.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(QpError::NonFinite);
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-10 * self.hessian.amax().max(1.0) {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(())
    }
}

/// Initial guess for a solve; `x` need not be feasible.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub x: Option<DVector<f64>>,
    /// Inequality rows to try as the initial working set.
    pub active_set: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub stationarity_tol: f64,
    /// Defaults to `10 (d + m)` when unset.
    pub max_iterations: Option<usize>,
    /// Diagonal shift added when H is only semidefinite.
    pub regularization: f64,
    pub warm_start: Option<WarmStart>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            stationarity_tol: 1e-8,
            max_iterations: None,
            regularization: 1e-9,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// Inequality rows in the final working set, ascending.
    pub active_set: Vec<usize>,
    pub objective: f64,
    /// One multiplier per inequality row (zero off the working set).
    pub multipliers_in: DVector<f64>,
    /// Least-squares equality multipliers from the stationarity condition.
    pub multipliers_eq: DVector<f64>,
    /// Diagonal shift that was added to H (0 when H was already definite).
    pub regularization: f64,
    pub iterations: usize,
}

/// Positive definite to working precision: Cholesky succeeds and the
/// smallest pivot is not negligible against the largest.
fn is_definite(h: &DMatrix<f64>) -> bool {
    if h.nrows() == 0 {
        return true;
    }
    match h.clone().cholesky() {
        None => false,
        Some(ch) => {
            let diag = ch.l_dirty().diagonal();
            let lo = diag.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let hi = diag.iter().fold(0.0f64, |a, &b| a.max(b));
            lo * lo > 1e-14 * hi.max(1.0) * hi.max(1.0)
        }
    }
}

/// Particular solution and orthonormal null-space basis of `A x = b`, or
/// `None` when the rows are inconsistent.
fn equality_reduction(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let (p, d) = a.shape();
    if p == 0 {
        return Some((DVector::zeros(d), DMatrix::identity(d, d)));
    }
    let svd = faer::Mat::<f64>::from_fn(p, d, |i, j| a[(i, j)]).svd().ok()?;
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let s = s.column_vector();
    let k_max = p.min(d);
    let sigma_max = (0..k_max).map(|k| s[k]).fold(0.0, f64::max);
    let cut = 1e-10 * sigma_max.max(1e-300);
    let mut x0 = DVector::zeros(d);
    let mut null = Vec::new();
    for k in 0..d {
        if k < k_max && s[k] > cut && sigma_max > 0.0 {
            let coef = (0..p).map(|i| u[(i, k)] * b[i]).sum::<f64>() / s[k];
            for j in 0..d {
                x0[j] += v[(j, k)] * coef;
            }
        } else {
            null.push(k);
        }
    }
    let residual = (a * &x0 - b).amax();
    if residual > tol * (1.0 + b.amax()) {
        return None;
    }
    let z = DMatrix::from_fn(d, null.len(), |j, c| v[(j, null[c])]);
    Some((x0, z))
}

struct ActiveSetOutcome {
    y: DVector<f64>,
    working: Vec<usize>,
    lambda: Vec<f64>,
    status: QpStatus,
    iterations: usize,
}

/// Solves the equality-constrained step `min ½pᵀHp + gradᵀp, C_W p = 0`.
fn eqp_step(h: &DMatrix<f64>, grad: &DVector<f64>, c: &DMatrix<f64>, working: &[usize]) -> Option<(DVector<f64>, Vec<f64>)> {
    eqp(h, grad, c, working, None)
}

/// `min ½yᵀHy + gᵀy` subject to `C_W y = e_W` (or `C_W y = 0` without `e`).
fn eqp(
    h: &DMatrix<f64>,
    grad: &DVector<f64>,
    c: &DMatrix<f64>,
    working: &[usize],
    e: Option<&DVector<f64>>,
) -> Option<(DVector<f64>, Vec<f64>)> {
    let r = h.nrows();
    let w = working.len();
    if r + w == 0 {
        return Some((DVector::zeros(0), Vec::new()));
    }
    let mut kkt = DMatrix::zeros(r + w, r + w);
    kkt.view_mut((0, 0), (r, r)).copy_from(h);
    for (k, &i) in working.iter().enumerate() {
        for j in 0..r {
            kkt[(r + k, j)] = c[(i, j)];
            kkt[(j, r + k)] = c[(i, j)];
        }
    }
    let mut rhs = DVector::zeros(r + w);
    rhs.rows_mut(0, r).copy_from(&(-grad));
    if let Some(e) = e {
        for (k, &i) in working.iter().enumerate() {
            rhs[r + k] = e[i];
        }
    }
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, r).into_owned(), sol.rows(r, w).iter().copied().collect()))
}

/// Primal active-set iterations from a feasible `y`.
#[allow(clippy::too_many_arguments)]
fn active_set(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    e: &DVector<f64>,
    usable: &[bool],
    mut y: DVector<f64>,
    mut working: Vec<usize>,
    max_iter: usize,
    stat_tol: f64,
) -> ActiveSetOutcome {
    let m = c.nrows();
    let mut in_working = vec![false; m];
    for &i in &working {
        in_working[i] = true;
    }
    let mut iterations = 0;
    // tight rows found dependent on the working set; they cannot block while
    // that set is intact
    let mut exempt: Vec<usize> = Vec::new();
    // consecutive zero-length steps; past a threshold, smallest-index rules
    // replace the greedy choices so degenerate vertices cannot cycle
    let mut stalled = 0usize;
    // after a full unblocked step the iterate is stationary on the working
    // set; a further step would be pure round-off
    let mut full_step = false;
    // a row dropped for a negative multiplier that blocks the very next step
    // at zero length had a spurious sign; it is kept from then on
    let mut just_dropped: Option<usize> = None;
    let mut kept: Vec<usize> = Vec::new();
    loop {
        let bland = stalled > 10;
        let grad = h * &y + g;
        let (p, lambda) = match eqp_step(h, &grad, c, &working) {
            Some(s) => s,
            None => {
                // dependent working set: shed the newest row and step past it
                if let Some(i) = working.pop() {
                    in_working[i] = false;
                    exempt.push(i);
                    iterations += 1;
                    if iterations >= max_iter {
                        return ActiveSetOutcome { y, working, lambda: Vec::new(), status: QpStatus::MaxIterations, iterations };
                    }
                    continue;
                }
                return ActiveSetOutcome { y, working, lambda: Vec::new(), status: QpStatus::MaxIterations, iterations };
            }
        };
        let php = p.dot(&(h * &p));
        let f = 0.5 * y.dot(&(h * &y)) + g.dot(&y);
        let negligible = full_step || p.amax() <= 1e-11 * (1.0 + y.amax()) || php <= 1e-16 * (1.0 + f.abs());
        full_step = false;
        if negligible {
            let lambda_max = lambda.iter().fold(0.0f64, |a, l| a.max(l.abs()));
            let noise = 1e3 * f64::EPSILON * (h.amax() * y.amax() + g.amax() + lambda_max);
            let dual_tol = (stat_tol * grad.amax()).max(noise);
            let negative = lambda.iter().enumerate().filter(|(k, &l)| l < -dual_tol && !kept.contains(&working[*k]));
            let most_negative = if bland {
                negative.min_by_key(|(k, _)| working[*k]).map(|(k, _)| k)
            } else {
                negative.min_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k)
            };
            match most_negative {
                None => {
                    return ActiveSetOutcome { y, working, lambda, status: QpStatus::Optimal, iterations };
                }
                Some(k) => {
                    let i = working.remove(k);
                    in_working[i] = false;
                    exempt.clear();
                    just_dropped = Some(i);
                }
            }
        } else {
            let mut alpha = 1.0;
            let mut blocking = None;
            for i in 0..m {
                if in_working[i] || !usable[i] || exempt.contains(&i) {
                    continue;
                }
                let row = c.row(i);
                let cp = row.dot(&p.transpose());
                if cp > 1e-13 * row.norm() * p.norm() {
                    let slack = (e[i] - row.dot(&y.transpose())).max(0.0);
                    let a = slack / cp;
                    if a < alpha {
                        alpha = a;
                        blocking = Some(i);
                    }
                }
            }
            if alpha <= 1e-14 && blocking.is_some() && blocking == just_dropped {
                kept.extend(blocking);
            }
            just_dropped = None;
            if alpha <= 1e-14 {
                stalled += 1;
            } else {
                stalled = 0;
            }
            y.axpy(alpha, &p, 1.0);
            match blocking {
                Some(i) => {
                    working.push(i);
                    in_working[i] = true;
                }
                None => full_step = true,
            }
        }
        iterations += 1;
        if iterations >= max_iter {
            let grad = h * &y + g;
            let lambda = eqp_step(h, &grad, c, &working).map(|s| s.1).unwrap_or_default();
            return ActiveSetOutcome { y, working, lambda, status: QpStatus::MaxIterations, iterations };
        }
    }
}

fn max_violation(c: &DMatrix<f64>, e: &DVector<f64>, usable: &[bool], y: &DVector<f64>) -> f64 {
    if c.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    let r = c * y - e;
    r.iter().zip(usable).filter(|(_, &u)| u).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max)
}

/// Phase one: a point of `{y : C y <= e}` near `y0`, or `None` if the rows
/// cannot be satisfied within `tol`.
fn find_feasible(
    c: &DMatrix<f64>,
    e: &DVector<f64>,
    usable: &[bool],
    y0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> (Option<DVector<f64>>, usize) {
    let (m, r) = c.shape();
    let rho = 1e-8;
    // variables (y, t): min ½ρ‖y − y0‖² + ½ρ t² + t  s.t.  C y − t <= e,  −t <= 0
    let mut h = DMatrix::identity(r + 1, r + 1) * rho;
    h[(r, r)] = rho;
    let mut g = DVector::zeros(r + 1);
    g.rows_mut(0, r).copy_from(&(-rho * y0));
    g[r] = 1.0;
    let mut c1 = DMatrix::zeros(m + 1, r + 1);
    c1.view_mut((0, 0), (m, r)).copy_from(c);
    for i in 0..m {
        c1[(i, r)] = -1.0;
    }
    c1[(m, r)] = -1.0;
    let mut e1 = DVector::zeros(m + 1);
    e1.rows_mut(0, m).copy_from(e);
    let mut usable1 = usable.to_vec();
    usable1.push(true);
    let t0 = max_violation(c, e, usable, y0).max(0.0);
    let mut start = DVector::zeros(r + 1);
    start.rows_mut(0, r).copy_from(y0);
    start[r] = t0;
    let out = active_set(&h, &g, &c1, &e1, &usable1, start, Vec::new(), max_iter, 1e-12);
    let y = out.y.rows(0, r).into_owned();
    if max_violation(c, e, usable, &y) <= tol {
        (Some(y), out.iterations)
    } else {
        (None, out.iterations)
    }
}

fn infeasible(problem: &QpProblem, x: DVector<f64>, reg: f64, iterations: usize) -> QpSolution {
    QpSolution {
        objective: problem.objective(&x),
        x,
        status: QpStatus::Infeasible,
        active_set: Vec::new(),
        multipliers_in: DVector::zeros(problem.b_in.len()),
        multipliers_eq: DVector::zeros(problem.b_eq.len()),
        regularization: reg,
        iterations,
    }
}

/// Solves `problem`. Malformed input is an `Err`; infeasibility and the
/// iteration cap are reported through [`QpSolution::status`].
pub fn solve_qp(problem: &QpProblem, options: &SolverOptions) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let d = problem.dim();
    let m = problem.b_in.len();
    let max_iter = options.max_iterations.unwrap_or(10 * (d + m)).max(1);

    let mut h = (&problem.hessian + problem.hessian.transpose()) * 0.5;
    let mut reg = 0.0;
    if !is_definite(&h) {
        reg = options.regularization;
        for i in 0..d {
            h[(i, i)] += reg;
        }
    }

    let Some((x0, z)) = equality_reduction(&problem.a_eq, &problem.b_eq, options.feasibility_tol) else {
        return Ok(infeasible(problem, DVector::zeros(d), reg, 0));
    };
    let r = z.ncols();
    let hr = z.tr_mul(&(&h * &z));
    let gr = z.tr_mul(&(&h * &x0 + &problem.gradient));
    let c = &problem.a_in * &z;
    let e = &problem.b_in - &problem.a_in * &x0;

    // rows that do not depend on the free coordinates are either always
    // satisfied or make the problem infeasible
    let mut usable = vec![true; m];
    for i in 0..m {
        let scale = 1.0 + problem.a_in.row(i).amax();
        if c.row(i).amax() <= 1e-12 * scale {
            usable[i] = false;
            let magnitude = 1.0 + problem.b_in[i].abs().max(problem.a_in.row(i).dot(&x0.transpose()).abs());
            if e[i] < -options.feasibility_tol * magnitude {
                return Ok(infeasible(problem, x0, reg, 0));
            }
        }
    }

    let warm = options.warm_start.as_ref();
    let y_start = match warm.and_then(|w| w.x.as_ref()) {
        Some(xw) if xw.len() == d => z.tr_mul(&(xw - &x0)),
        _ => DVector::zeros(r),
    };

    let mut iterations = 0;
    let y_feasible = if max_violation(&c, &e, &usable, &y_start) <= options.feasibility_tol {
        y_start
    } else {
        let (found, it) = find_feasible(&c, &e, &usable, &y_start, options.feasibility_tol, max_iter);
        iterations += it;
        match found {
            Some(y) => y,
            None => return Ok(infeasible(problem, &x0 + &z * &y_start, reg, iterations)),
        }
    };

    // initial working set: warm-start rows that are tight at the start point
    let mut working: Vec<usize> = Vec::new();
    if let Some(w) = warm {
        let resid = &c * &y_feasible - &e;
        for &i in &w.active_set {
            if i < m && usable[i] && !working.contains(&i) && resid[i].abs() <= options.feasibility_tol * 10.0 {
                working.push(i);
            }
        }
        working.truncate(r);
    }

    let mut out = active_set(&hr, &gr, &c, &e, &usable, y_feasible, working, max_iter.saturating_sub(iterations).max(1), options.stationarity_tol);
    iterations += out.iterations;
    if out.status == QpStatus::Optimal {
        // Re-solve on the final working set directly so the answer depends
        // only on that set and not on the path taken to reach it.
        let mut sorted = out.working.clone();
        sorted.sort_unstable();
        if let Some((y, lambda)) = eqp(&hr, &gr, &c, &sorted, Some(&e)) {
            if max_violation(&c, &e, &usable, &y) <= options.feasibility_tol {
                out.y = y;
                out.lambda = lambda;
                out.working = sorted;
            }
        }
    }
    let x = &x0 + &z * &out.y;

    let mut multipliers_in = DVector::zeros(m);
    for (k, &i) in out.working.iter().enumerate() {
        if let Some(l) = out.lambda.get(k) {
            multipliers_in[i] = *l;
        }
    }
    let multipliers_eq = if problem.b_eq.is_empty() {
        DVector::zeros(0)
    } else {
        let resid = &problem.hessian * &x + &problem.gradient + problem.a_in.tr_mul(&multipliers_in);
        problem
            .a_eq
            .transpose()
            .svd(true, true)
            .solve(&(-resid), 1e-12)
            .unwrap_or_else(|_| DVector::zeros(problem.b_eq.len()))
    };
    let mut active_set = out.working.clone();
    active_set.sort_unstable();
    Ok(QpSolution {
        objective: problem.objective(&x),
        x,
        status: out.status,
        active_set,
        multipliers_in,
        multipliers_eq,
        regularization: reg,
        iterations,
    })
}
