//! Hierarchical QP by the accumulated-constraint cascade.
//!
//! Tasks are grouped by priority (0 first). Level `p` minimizes
//! `½‖A_p x − b_p‖² + ½‖v_p‖² + ½ε‖x‖²` subject to `D_p x − f_p ≤ v_p`,
//! `v_p ≥ 0`, and the frozen outcome of every higher level:
//! `A_k x = A_k x*_k` and `D_k x ≤ f_k + v*_k`.
//!
//! Each level is first tried with its own inequalities as hard rows. When
//! that QP is feasible and none of those rows carries a positive
//! multiplier, the slack problem has the same minimizer with `v = 0`;
//! otherwise the full slack problem over `(x, v)` is solved.
//!
//! The tie-break term picks the minimum-norm `x` among lexicographic optima.
//! [`HqpOptions::tie_break_weights`] turns it into a weighted norm.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::qp::{solve_qp, QpError, QpProblem, QpStatus, SolverOptions, WarmStart};

#[derive(Debug, Clone)]
pub struct Task {
    pub label: String,
    pub priority: u32,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub d: DMatrix<f64>,
    pub f: DVector<f64>,
}

impl Task {
    pub fn equality(label: impl Into<String>, priority: u32, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let dim = a.ncols();
        Self { label: label.into(), priority, a, b, d: DMatrix::zeros(0, dim), f: DVector::zeros(0) }
    }

    pub fn inequality(label: impl Into<String>, priority: u32, d: DMatrix<f64>, f: DVector<f64>) -> Self {
        let dim = d.ncols();
        Self { label: label.into(), priority, a: DMatrix::zeros(0, dim), b: DVector::zeros(0), d, f }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn equality_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    /// `max(0, D x − f)` row by row.
    pub fn inequality_violation(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.d * x - &self.f).map(|v| v.max(0.0))
    }

    fn check(&self, dim: usize) -> Result<(), HqpError> {
        let ok = self.a.ncols() == dim
            && self.d.ncols() == dim
            && self.a.nrows() == self.b.len()
            && self.d.nrows() == self.f.len();
        if ok {
            Ok(())
        } else {
            Err(HqpError::DimensionMismatch { label: self.label.clone(), expected: dim })
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HqpError {
    #[error("no tasks given")]
    NoTasks,
    #[error("task `{label}` does not have {expected} columns or its blocks are inconsistent")]
    DimensionMismatch { label: String, expected: usize },
    #[error("priority level {priority} is infeasible ({status:?})")]
    LevelInfeasible { priority: u32, status: QpStatus },
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone)]
pub struct LevelReport {
    pub priority: u32,
    pub labels: Vec<String>,
    /// `‖A x* − b‖₂` of the stacked level.
    pub equality_residual: f64,
    /// `‖v*‖₂` of the stacked level.
    pub inequality_residual: f64,
    pub slack: DVector<f64>,
    pub status: QpStatus,
    /// Whether the slack problem had to be solved.
    pub relaxed: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct HqpSolution {
    pub x: DVector<f64>,
    pub levels: Vec<LevelReport>,
}

impl HqpSolution {
    pub fn level(&self, priority: u32) -> Option<&LevelReport> {
        self.levels.iter().find(|l| l.priority == priority)
    }
}

#[derive(Debug, Clone)]
pub struct HqpOptions {
    pub regularization: f64,
    /// Diagonal weights `W` of the tie-break term `½ε xᵀWx`; identity when
    /// absent.
    pub tie_break_weights: Option<DVector<f64>>,
    /// Own-row multipliers below this count as inactive when deciding
    /// whether a level needs its slack problem.
    pub multiplier_tol: f64,
    pub qp: SolverOptions,
}

impl Default for HqpOptions {
    fn default() -> Self {
        Self { regularization: 1e-9, tie_break_weights: None, multiplier_tol: 1e-14, qp: SolverOptions::default() }
    }
}

fn vstack(blocks: &[(&DMatrix<f64>, &DVector<f64>)], dim: usize) -> (DMatrix<f64>, DVector<f64>) {
    let rows: usize = blocks.iter().map(|(m, _)| m.nrows()).sum();
    let mut a = DMatrix::zeros(rows, dim);
    let mut b = DVector::zeros(rows);
    let mut r = 0;
    for (m, v) in blocks {
        a.view_mut((r, 0), (m.nrows(), dim)).copy_from(*m);
        b.rows_mut(r, v.len()).copy_from(*v);
        r += m.nrows();
    }
    (a, b)
}

/// Frozen constraints accumulated from solved levels.
struct Frozen {
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
}

impl Frozen {
    fn new(dim: usize) -> Self {
        Self { a_eq: DMatrix::zeros(0, dim), b_eq: DVector::zeros(0), a_in: DMatrix::zeros(0, dim), b_in: DVector::zeros(0) }
    }

    fn push(&mut self, a: &DMatrix<f64>, b: &DVector<f64>, d: &DMatrix<f64>, f: &DVector<f64>) {
        let dim = self.a_eq.ncols();
        let (ae, be) = vstack(&[(&self.a_eq, &self.b_eq), (a, b)], dim);
        let (ai, bi) = vstack(&[(&self.a_in, &self.b_in), (d, f)], dim);
        self.a_eq = ae;
        self.b_eq = be;
        self.a_in = ai;
        self.b_in = bi;
    }

    fn satisfied_by(&self, x: &DVector<f64>, tol: f64) -> bool {
        let eq = self.b_eq.is_empty() || (&self.a_eq * x - &self.b_eq).amax() <= tol * (1.0 + self.b_eq.amax());
        let ineq = self.b_in.is_empty() || (&self.a_in * x - &self.b_in).max() <= tol;
        eq && ineq
    }
}

struct LevelOutcome {
    x: DVector<f64>,
    slack: DVector<f64>,
    status: QpStatus,
    relaxed: bool,
    iterations: usize,
    active_set: Vec<usize>,
}

fn solve_level(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    d: &DMatrix<f64>,
    f: &DVector<f64>,
    frozen: &Frozen,
    start: &DVector<f64>,
    warm: &LevelWarm,
    options: &HqpOptions,
) -> Result<LevelOutcome, QpError> {
    let dim = a.ncols();
    let m_own = d.nrows();
    let mut h = a.tr_mul(a);
    for i in 0..dim {
        let w = options.tie_break_weights.as_ref().map_or(1.0, |w| w[i]);
        h[(i, i)] += options.regularization * w;
    }
    let g = -a.tr_mul(b);

    let (a_in, b_in) = vstack(&[(&frozen.a_in, &frozen.b_in), (d, f)], dim);
    let hard = QpProblem::new(h.clone(), g.clone())
        .equalities(frozen.a_eq.clone(), frozen.b_eq.clone())
        .inequalities(a_in, b_in);
    let n_frozen = frozen.b_in.len();
    let first = if warm.relaxed && m_own > 0 {
        None
    } else {
        let qp_opts = SolverOptions {
            warm_start: Some(WarmStart { x: Some(start.clone()), active_set: warm.active_set.clone() }),
            ..options.qp.clone()
        };
        Some(solve_qp(&hard, &qp_opts)?)
    };
    if let Some(first) = first.as_ref().filter(|s| {
        s.status == QpStatus::Optimal && (0..m_own).all(|i| s.multipliers_in[n_frozen + i] <= options.multiplier_tol)
    }) {
        let first = first.clone();
        let slack = (d * &first.x - f).map(|v| v.max(0.0));
        return Ok(LevelOutcome {
            x: first.x,
            slack,
            status: QpStatus::Optimal,
            relaxed: false,
            iterations: first.iterations,
            active_set: first.active_set,
        });
    }

    // slack problem over z = (x, v)
    let n = dim + m_own;
    let mut hz = DMatrix::zeros(n, n);
    hz.view_mut((0, 0), (dim, dim)).copy_from(&h);
    for i in dim..n {
        hz[(i, i)] = 1.0;
    }
    let mut gz = DVector::zeros(n);
    gz.rows_mut(0, dim).copy_from(&g);
    let mut a_eq = DMatrix::zeros(frozen.b_eq.len(), n);
    a_eq.view_mut((0, 0), (frozen.b_eq.len(), dim)).copy_from(&frozen.a_eq);
    let rows = n_frozen + 2 * m_own;
    let mut a_in = DMatrix::zeros(rows, n);
    let mut b_in = DVector::zeros(rows);
    a_in.view_mut((0, 0), (n_frozen, dim)).copy_from(&frozen.a_in);
    b_in.rows_mut(0, n_frozen).copy_from(&frozen.b_in);
    a_in.view_mut((n_frozen, 0), (m_own, dim)).copy_from(d);
    b_in.rows_mut(n_frozen, m_own).copy_from(f);
    for i in 0..m_own {
        a_in[(n_frozen + i, dim + i)] = -1.0;
        a_in[(n_frozen + m_own + i, dim + i)] = -1.0;
    }
    let x_start = match &first {
        Some(s) if s.status == QpStatus::Optimal => s.x.clone(),
        _ => start.clone(),
    };
    let mut z0 = DVector::zeros(n);
    z0.rows_mut(0, dim).copy_from(&x_start);
    z0.rows_mut(dim, m_own).copy_from(&(d * &x_start - f).map(|v| v.max(0.0)));
    let relaxed = QpProblem::new(hz, gz).equalities(a_eq, frozen.b_eq.clone()).inequalities(a_in, b_in);
    let warm_set = if warm.relaxed { warm.active_set.clone() } else { Vec::new() };
    let opts = SolverOptions { warm_start: Some(WarmStart { x: Some(z0), active_set: warm_set }), ..options.qp.clone() };
    let sol = solve_qp(&relaxed, &opts)?;
    let x = sol.x.rows(0, dim).into_owned();
    // the frozen bound must hold at x itself, so take the larger of v and the realized violation
    let realized = (d * &x - f).map(|v| v.max(0.0));
    let slack = sol.x.rows(dim, m_own).map(|v| v.max(0.0)).zip_map(&realized, f64::max);
    Ok(LevelOutcome {
        x,
        slack,
        status: sol.status,
        relaxed: true,
        iterations: first.map_or(0, |s| s.iterations) + sol.iterations,
        active_set: sol.active_set,
    })
}

/// What a level looked like on the previous solve.
#[derive(Debug, Clone, Default)]
struct LevelWarm {
    relaxed: bool,
    active_set: Vec<usize>,
}

/// Stateful cascade that warm-starts each tick from the previous solution.
#[derive(Debug, Clone, Default)]
pub struct HqpSolver {
    pub options: HqpOptions,
    warm_x: Option<DVector<f64>>,
    warm_levels: Vec<LevelWarm>,
}

impl HqpSolver {
    pub fn new(options: HqpOptions) -> Self {
        Self { options, warm_x: None, warm_levels: Vec::new() }
    }

    pub fn reset(&mut self) {
        self.warm_x = None;
        self.warm_levels.clear();
    }

    pub fn set_warm_start(&mut self, x: DVector<f64>) {
        self.warm_x = Some(x);
    }

    pub fn solve(&mut self, tasks: &[Task], dim: usize) -> Result<HqpSolution, HqpError> {
        if tasks.is_empty() {
            return Err(HqpError::NoTasks);
        }
        for t in tasks {
            t.check(dim)?;
        }
        if let Some(w) = &self.options.tie_break_weights {
            if w.len() != dim || w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(HqpError::DimensionMismatch { label: "tie-break weights".into(), expected: dim });
            }
        }
        let mut priorities: Vec<u32> = tasks.iter().map(|t| t.priority).collect();
        priorities.sort_unstable();
        priorities.dedup();

        let mut frozen = Frozen::new(dim);
        let mut x = match &self.warm_x {
            Some(w) if w.len() == dim => w.clone(),
            _ => DVector::zeros(dim),
        };
        let mut levels = Vec::with_capacity(priorities.len());
        let mut actives = Vec::with_capacity(priorities.len());
        for (li, &p) in priorities.iter().enumerate() {
            let members: Vec<&Task> = tasks.iter().filter(|t| t.priority == p).collect();
            let eq: Vec<_> = members.iter().map(|t| (&t.a, &t.b)).collect();
            let ineq: Vec<_> = members.iter().map(|t| (&t.d, &t.f)).collect();
            let (a, b) = vstack(&eq, dim);
            let (d, f) = vstack(&ineq, dim);

            // prefer the caller's warm start when it respects the frozen rows
            let start = match &self.warm_x {
                Some(w) if li > 0 && w.len() == dim && frozen.satisfied_by(w, self.options.qp.feasibility_tol) => w.clone(),
                _ => x.clone(),
            };
            let warm = self.warm_levels.get(li).cloned().unwrap_or_default();
            let out = solve_level(&a, &b, &d, &f, &frozen, &start, &warm, &self.options)?;
            if out.status != QpStatus::Optimal {
                return Err(HqpError::LevelInfeasible { priority: p, status: out.status });
            }
            x = out.x;
            let f_relaxed = &f + &out.slack;
            let ax = &a * &x;
            levels.push(LevelReport {
                priority: p,
                labels: members.iter().map(|t| t.label.clone()).collect(),
                equality_residual: (&ax - &b).norm(),
                inequality_residual: out.slack.norm(),
                slack: out.slack.clone(),
                status: out.status,
                relaxed: out.relaxed,
                iterations: out.iterations,
            });
            // stay on the slack formulation while the level keeps needing it
            actives.push(LevelWarm { relaxed: out.relaxed && out.slack.amax() > 1e-12, active_set: out.active_set });
            frozen.push(&a, &ax, &d, &f_relaxed);
        }
        self.warm_x = Some(x.clone());
        self.warm_levels = actives;
        Ok(HqpSolution { x, levels })
    }
}

/// One-shot cascade with default options and no warm start.
pub fn solve_hierarchy(tasks: &[Task], dim: usize) -> Result<HqpSolution, HqpError> {
    HqpSolver::default().solve(tasks, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, v))
    }

    #[test]
    fn square_equality_is_solved_exactly() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let s = solve_hierarchy(&[Task::equality("t", 0, a.clone(), b.clone())], 2).unwrap();
        let exact = a.lu().solve(&b).unwrap();
        assert!((&s.x - exact).amax() < 1e-7);
        assert!(s.levels[0].equality_residual < 1e-6);
    }

    #[test]
    fn higher_priority_wins() {
        let (a, b1) = scalar(1.0);
        let (_, b2) = scalar(2.0);
        let s = solve_hierarchy(&[Task::equality("low", 1, a.clone(), b2), Task::equality("high", 0, a, b1)], 1).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-8);
        assert!((s.levels[1].equality_residual - 1.0).abs() < 1e-8);
        assert_eq!(s.levels[0].labels, vec!["high".to_string()]);
    }

    #[test]
    fn conflicting_inequality_is_relaxed_and_frozen() {
        // level 0: x <= 1 and x >= 3 conflict; the slack split puts x at 2
        let d = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let f = DVector::from_vec(vec![1.0, -3.0]);
        let (a, b) = scalar(10.0);
        let s = solve_hierarchy(&[Task::inequality("box", 0, d, f), Task::equality("pull", 1, a, b)], 1).unwrap();
        assert!(s.levels[0].relaxed);
        assert!((s.x[0] - 2.0).abs() < 1e-8);
        assert!((s.levels[0].inequality_residual - 2f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn same_priority_tasks_share_a_level() {
        let (a, b) = scalar(1.0);
        let (_, b2) = scalar(3.0);
        let s = solve_hierarchy(&[Task::equality("a", 0, a.clone(), b), Task::equality("b", 0, a, b2)], 1).unwrap();
        assert_eq!(s.levels.len(), 1);
        assert!((s.x[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn bad_dimensions_rejected() {
        let (a, b) = scalar(1.0);
        assert!(matches!(solve_hierarchy(&[Task::equality("t", 0, a, b)], 2), Err(HqpError::DimensionMismatch { .. })));
        assert_eq!(solve_hierarchy(&[], 2).unwrap_err(), HqpError::NoTasks);
    }
}
