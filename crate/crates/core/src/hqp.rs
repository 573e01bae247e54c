//! Hierarchical QP cascade.
//!
//! Each priority level is solved as one QP over `x = [y; w]`, with the joint
//! velocity substituted as `qdot*_{p-1} + Z_{p-1} y`, where the columns of
//! `Z_{p-1}` are an orthonormal basis of `range(N_{p-1})`, so that the level
//! can only act in the null space of every task above it. Inequalities
//! of processed levels are carried down with their optimal slacks frozen.

use nalgebra::{DMatrix, DVector, Dyn, SVD};

use crate::qp::{solve_qp, KktResiduals, QpError, QpProblem, QpSettings};
use crate::tasks::{ConstraintSpec, TaskSpec};

/// Relaxation of frozen inequality bounds on lower levels.
pub const FROZEN_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HqpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("level {level}: {source}")]
    Qp { level: usize, source: QpError },
    #[error("invalid stack: {0}")]
    InvalidStack(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorityLevel {
    /// Priority index, 1 = highest.
    pub priority: usize,
    pub tasks: Vec<TaskSpec>,
    pub constraints: Vec<ConstraintSpec>,
}

impl PriorityLevel {
    pub fn new(priority: usize) -> Self {
        Self { priority, tasks: vec![], constraints: vec![] }
    }

    pub fn with_task(mut self, task: TaskSpec) -> Self {
        self.tasks.push(task);
        self
    }

    pub fn with_constraint(mut self, constraint: ConstraintSpec) -> Self {
        self.constraints.push(constraint);
        self
    }

    fn constraint_rows(&self) -> usize {
        self.constraints.iter().map(ConstraintSpec::rows).sum()
    }

    /// Stacked Jacobian of the tasks that carry weight; these rows consume null space.
    pub fn task_jacobian(&self, n: usize) -> DMatrix<f64> {
        let active: Vec<&TaskSpec> = self.tasks.iter().filter(|t| t.weight > 0.0).collect();
        let rows = active.iter().map(|t| t.rows()).sum();
        let mut jac = DMatrix::zeros(rows, n);
        let mut r = 0;
        for t in active {
            jac.rows_mut(r, t.rows()).copy_from(&t.jacobian);
            r += t.rows();
        }
        jac
    }

    fn stacked_constraints(&self, n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let rows = self.constraint_rows();
        let mut c = DMatrix::zeros(rows, n);
        let mut d = DVector::zeros(rows);
        let mut r = 0;
        for con in &self.constraints {
            c.rows_mut(r, con.rows()).copy_from(&con.matrix);
            d.rows_mut(r, con.rows()).copy_from(&con.bound);
            r += con.rows();
        }
        (c, d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskStack {
    pub levels: Vec<PriorityLevel>,
    pub n: usize,
}

impl TaskStack {
    pub fn new(n: usize) -> Self {
        Self { levels: vec![], n }
    }

    pub fn push(&mut self, level: PriorityLevel) {
        self.levels.push(level);
    }

    pub fn validate(&self) -> Result<(), HqpError> {
        let mut last = 0;
        for level in &self.levels {
            if level.priority <= last {
                return Err(HqpError::InvalidStack(format!("priority {} does not follow {last}", level.priority)));
            }
            last = level.priority;
            if level.tasks.is_empty() && level.constraints.is_empty() {
                return Err(HqpError::InvalidStack(format!("level {} is empty", level.priority)));
            }
            for t in &level.tasks {
                if t.cols() != self.n || t.residual.len() != t.rows() {
                    return Err(HqpError::Dimension(format!(
                        "task '{}' is {}x{} with {} residuals, stack has n = {}",
                        t.label,
                        t.rows(),
                        t.cols(),
                        t.residual.len(),
                        self.n
                    )));
                }
                if t.feedforward.as_ref().is_some_and(|f| f.len() != t.rows()) {
                    return Err(HqpError::Dimension(format!("task '{}' feedforward length", t.label)));
                }
                if !(t.weight >= 0.0) || !t.is_finite() {
                    return Err(HqpError::InvalidStack(format!("task '{}' has invalid entries", t.label)));
                }
            }
            for c in &level.constraints {
                if c.matrix.ncols() != self.n || c.bound.len() != c.rows() {
                    return Err(HqpError::Dimension(format!("constraint '{}' shape", c.label)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HqpSettings {
    /// Regularization weight on the level variable.
    pub k_d: f64,
    /// Slack weight.
    pub k_w: f64,
    /// Relative singular-value cutoff of the projector pseudo-inverse.
    pub pinv_tol: f64,
    pub qp: QpSettings,
}

impl Default for HqpSettings {
    fn default() -> Self {
        Self { k_d: 1e-3, k_w: 1e4, pinv_tol: 1e-8, qp: QpSettings::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelDiagnostics {
    pub priority: usize,
    pub objective: f64,
    pub kkt: KktResiduals,
    pub iterations: usize,
    /// Rank of the projected task rows removed from the null space at this level.
    pub rank: usize,
}

/// A processed inequality block with its frozen slack.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenConstraint {
    pub matrix: DMatrix<f64>,
    pub bound: DVector<f64>,
    pub slack: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeState {
    /// Null-space projector of all processed levels, `Z Z^T`.
    pub projector: DMatrix<f64>,
    /// Orthonormal basis `Z` of that null space (n x r).
    pub basis: DMatrix<f64>,
    /// Accumulated joint velocity of all processed levels.
    pub solution: DVector<f64>,
    pub frozen: Vec<FrozenConstraint>,
    pub diagnostics: Vec<LevelDiagnostics>,
}

impl CascadeState {
    pub fn new(n: usize) -> Self {
        Self {
            projector: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            solution: DVector::zeros(n),
            frozen: vec![],
            diagnostics: vec![],
        }
    }
}

/// Per-level QP solutions of a previous cascade, used to seed the next one.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WarmStart {
    levels: Vec<DVector<f64>>,
}

impl WarmStart {
    fn get(&self, level: usize, dim: usize) -> Option<&DVector<f64>> {
        self.levels.get(level).filter(|x| x.len() == dim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HqpSolution {
    pub qdot: DVector<f64>,
    pub state: CascadeState,
    pub warm_start: WarmStart,
}

/// `N_prev (I - J^+ J)` with `J = j_stack * N_prev`, SVD-truncated at `tol * sigma_max`.
pub fn null_space_projector(j_stack: &DMatrix<f64>, prev: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (_, basis) = null_space_basis(j_stack, &range_basis(prev), tol);
    &basis * basis.transpose()
}

/// Orthonormal basis of the range of a symmetric projector.
fn range_basis(projector: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (projector + projector.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    eig.eigenvectors.select_columns(&keep)
}

/// Restrict `basis` to the directions it spans that `j_stack` does not see.
/// Returns the numerical rank of `j_stack * basis` and the new basis.
fn null_space_basis(j_stack: &DMatrix<f64>, basis: &DMatrix<f64>, tol: f64) -> (usize, DMatrix<f64>) {
    let r = basis.ncols();
    if r == 0 || j_stack.nrows() == 0 {
        return (0, basis.clone());
    }
    let (rank, row_projector) = row_space_projector(&(j_stack * basis), tol);
    if rank == 0 {
        return (0, basis.clone());
    }
    if rank == r {
        return (rank, DMatrix::zeros(basis.nrows(), 0));
    }
    // I - P is an exact projector with eigenvalues 0 and 1.
    let complement = DMatrix::identity(r, r) - row_projector;
    let eig = ((&complement + complement.transpose()) * 0.5).symmetric_eigen();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(r - rank);
    order.sort_unstable();
    (rank, basis * eig.eigenvectors.select_columns(&order))
}

/// SVD whose factors reproduce `j`.
///
/// nalgebra's bidiagonal iteration at machine-epsilon convergence can return
/// inconsistent factors for exactly rank-deficient input, so the result is
/// checked and the convergence threshold loosened until it recomposes.
fn checked_svd(j: &DMatrix<f64>) -> SVD<f64, Dyn, Dyn> {
    let scale = j.amax().max(f64::MIN_POSITIVE);
    let mut last = None;
    for eps in [f64::EPSILON, 1e-14, 1e-13, 1e-12, 1e-10] {
        let Some(svd) = j.clone().try_svd(true, true, eps, 0) else { continue };
        let err = svd.clone().recompose().map_or(f64::INFINITY, |m| (m - j).amax());
        if err <= 1e-12 * scale {
            return svd;
        }
        log::debug!("svd at eps {eps:e} recomposes with error {err:e}");
        last = Some(svd);
    }
    last.unwrap_or_else(|| j.clone().svd(true, true))
}

/// Orthogonal projector onto the row space of `j` and its numerical rank.
fn row_space_projector(j: &DMatrix<f64>, tol: f64) -> (usize, DMatrix<f64>) {
    let n = j.ncols();
    if j.nrows() == 0 {
        return (0, DMatrix::zeros(n, n));
    }
    let svd = checked_svd(j);
    let v_t = svd.v_t.expect("requested V^T");
    let sigma_max = svd.singular_values.max();
    if !(sigma_max > 0.0) {
        return (0, DMatrix::zeros(n, n));
    }
    let mut p = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol * sigma_max {
            let v = v_t.row(i);
            p += v.transpose() * v;
            rank += 1;
        }
    }
    (rank, p)
}

/// Layout of an assembled level QP.
#[derive(Clone, Debug, PartialEq)]
pub struct AssembledLevel {
    pub problem: QpProblem,
    /// Null-space coordinates `y` (first block of `x`); `qdot = qdot* + Z y`.
    pub coords: usize,
    /// Slack variables of the level's own constraints (second block of `x`).
    pub slacks: usize,
}

/// Build the QP of `level` under the cascade `state`.
pub fn assemble_level(
    level: &PriorityLevel,
    state: &CascadeState,
    settings: &HqpSettings,
) -> Result<AssembledLevel, HqpError> {
    let n = state.solution.len();
    let z = &state.basis;
    let r = z.ncols();
    let k = level.constraint_rows();
    let dim = r + k;
    let acc = &state.solution;

    let mut hessian = DMatrix::zeros(dim, dim);
    let mut linear = DVector::zeros(dim);
    for i in 0..r {
        hessian[(i, i)] = settings.k_d;
    }
    for task in &level.tasks {
        if task.cols() != n {
            return Err(HqpError::Dimension(format!(
                "task '{}' has {} columns, expected {n}",
                task.label,
                task.cols()
            )));
        }
        if task.weight == 0.0 {
            continue;
        }
        let a = &task.jacobian * z;
        let b = task.target() - &task.jacobian * acc;
        let mut hyy = hessian.view_mut((0, 0), (r, r));
        hyy += a.transpose() * &a * task.weight;
        let mut ly = linear.rows_mut(0, r);
        ly -= a.transpose() * b * task.weight;
    }
    for i in r..dim {
        hessian[(i, i)] = settings.k_w;
    }

    // Own constraints with free slacks, then processed levels with frozen slacks.
    let frozen_rows: usize = state.frozen.iter().map(|f| f.bound.len()).sum();
    let rows = k + frozen_rows;
    let mut cmat = DMatrix::zeros(rows, dim);
    let mut dvec = DVector::zeros(rows);
    if k > 0 {
        let (c, d) = level.stacked_constraints(n);
        if c.ncols() != n {
            return Err(HqpError::Dimension("constraint columns".into()));
        }
        cmat.view_mut((0, 0), (k, r)).copy_from(&(&c * z));
        for i in 0..k {
            cmat[(i, r + i)] = -1.0;
        }
        dvec.rows_mut(0, k).copy_from(&(d - &c * acc));
    }
    let mut row = k;
    for f in &state.frozen {
        let m = f.bound.len();
        cmat.view_mut((row, 0), (m, r)).copy_from(&(&f.matrix * z));
        let rhs = &f.bound + &f.slack - &f.matrix * acc;
        for i in 0..m {
            // Round-off from earlier levels can leave the current iterate a hair
            // outside. The margin keeps an interior when frozen bounds pin the
            // remaining null space to a single point.
            let v = rhs[i];
            let v = if v < 0.0 && v > -1e-8 { 0.0 } else { v };
            dvec[row + i] = v + FROZEN_MARGIN;
        }
        row += m;
    }
    Ok(AssembledLevel { problem: QpProblem::new(hessian, linear, cmat, dvec), coords: r, slacks: k })
}

/// Solve every level in priority order and recompose the joint velocity.
pub fn solve_hqp(stack: &TaskStack, settings: &HqpSettings, warm: Option<&WarmStart>) -> Result<HqpSolution, HqpError> {
    stack.validate()?;
    let n = stack.n;
    let mut state = CascadeState::new(n);
    let mut next_warm = WarmStart::default();

    for (idx, level) in stack.levels.iter().enumerate() {
        let assembled = assemble_level(level, &state, settings)?;
        let seed = warm.and_then(|w| w.get(idx, assembled.problem.dim()));
        let sol = solve_qp(&assembled.problem, &settings.qp, seed)
            .map_err(|source| HqpError::Qp { level: level.priority, source })?;

        let step = sol.x.rows(0, assembled.coords);
        let new_solution = &state.basis * step + &state.solution;
        if assembled.slacks > 0 {
            let (c, d) = level.stacked_constraints(n);
            let achieved = &c * &new_solution - &d;
            let w = sol.x.rows(assembled.coords, assembled.slacks);
            let slack = achieved.zip_map(&w, f64::max);
            state.frozen.push(FrozenConstraint { matrix: c, bound: d, slack });
        }

        let (rank, basis) = null_space_basis(&level.task_jacobian(n), &state.basis, settings.pinv_tol);
        state.projector = &basis * basis.transpose();
        state.basis = basis;
        state.solution = new_solution;
        state.diagnostics.push(LevelDiagnostics {
            priority: level.priority,
            objective: assembled.problem.objective(&sol.x),
            kkt: sol.kkt,
            iterations: sol.iterations,
            rank,
        });
        next_warm.levels.push(sol.x);
    }
    Ok(HqpSolution { qdot: state.solution.clone(), state, warm_start: next_warm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn task(j: DMatrix<f64>, r: Vec<f64>) -> TaskSpec {
        TaskSpec::new(j, DVector::from_vec(r), 1.0, "t")
    }

    #[test]
    fn axis_aligned_projector() {
        let j = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let n = null_space_projector(&j, &DMatrix::identity(3, 3), 1e-8);
        assert_relative_eq!(n, DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0])), epsilon = 1e-15);
    }

    #[test]
    fn full_rank_leaves_nothing() {
        let j = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0]);
        let n = null_space_projector(&j, &DMatrix::identity(3, 3), 1e-8);
        assert!(n.amax() < 1e-12);
    }

    #[test]
    fn exact_least_squares_level() {
        let settings = HqpSettings { k_d: 0.0, ..Default::default() };
        let level = PriorityLevel::new(1).with_task(task(DMatrix::identity(2, 2), vec![1.0, 0.0]));
        let a = assemble_level(&level, &CascadeState::new(2), &settings).unwrap();
        let sol = solve_qp(&a.problem, &QpSettings::default(), None).unwrap();
        assert_relative_eq!(sol.x, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn zero_weight_task_is_invisible() {
        let settings = HqpSettings::default();
        let base = PriorityLevel::new(1).with_task(task(DMatrix::identity(2, 2), vec![1.0, -2.0]));
        let muted =
            base.clone().with_task(task(DMatrix::from_row_slice(1, 2, &[3.0, 1.0]), vec![5.0]).with_weight(0.0));
        let a = assemble_level(&base, &CascadeState::new(2), &settings).unwrap();
        let b = assemble_level(&muted, &CascadeState::new(2), &settings).unwrap();
        assert_eq!(a.problem, b.problem);
    }

    #[test]
    fn two_level_toy() {
        let settings = HqpSettings { k_d: 1e-9, ..Default::default() };
        let mut stack = TaskStack::new(2);
        stack.push(PriorityLevel::new(1).with_task(task(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), vec![1.0])));
        stack.push(PriorityLevel::new(2).with_task(task(DMatrix::identity(2, 2), vec![0.0, 0.0])));
        let sol = solve_hqp(&stack, &settings, None).unwrap();
        assert_relative_eq!(sol.qdot, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-6);
    }

    #[test]
    fn empty_null_space_shields_lower_levels() {
        let settings = HqpSettings::default();
        let j1 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]);
        let mut top = TaskStack::new(2);
        top.push(PriorityLevel::new(1).with_task(task(j1.clone(), vec![0.3, -0.1])));
        let alone = solve_hqp(&top, &settings, None).unwrap();
        let mut full = top.clone();
        full.push(PriorityLevel::new(2).with_task(task(DMatrix::identity(2, 2), vec![4.0, 4.0])));
        let both = solve_hqp(&full, &settings, None).unwrap();
        assert_relative_eq!(alone.qdot, both.qdot, epsilon = 1e-12);
    }

    #[test]
    fn constraint_only_level_freezes_slacks() {
        let settings = HqpSettings::default();
        let mut stack = TaskStack::new(2);
        // |qdot| <= 0.5 hard, then ask for qdot = (2, 0).
        let c = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let d = DVector::from_element(4, 0.5);
        stack.push(PriorityLevel::new(1).with_constraint(ConstraintSpec::new(c, d, "box")));
        stack.push(PriorityLevel::new(2).with_task(task(DMatrix::identity(2, 2), vec![2.0, 0.0])));
        let sol = solve_hqp(&stack, &settings, None).unwrap();
        assert_relative_eq!(sol.qdot[0], 0.5, epsilon = 1e-9 + FROZEN_MARGIN);
        assert!(sol.state.frozen[0].slack.amax() < 1e-9);
    }

    #[test]
    fn rejects_out_of_order_levels() {
        let mut stack = TaskStack::new(1);
        stack.push(PriorityLevel::new(2).with_task(task(DMatrix::identity(1, 1), vec![0.0])));
        stack.push(PriorityLevel::new(1).with_task(task(DMatrix::identity(1, 1), vec![0.0])));
        assert!(matches!(solve_hqp(&stack, &HqpSettings::default(), None), Err(HqpError::InvalidStack(_))));
    }

    #[test]
    fn zero_weights_give_zero_velocity() {
        let mut stack = TaskStack::new(3);
        let t = task(DMatrix::identity(3, 3), vec![1.0, 2.0, 3.0]).with_weight(0.0);
        stack.push(PriorityLevel::new(1).with_task(t.clone()));
        stack.push(PriorityLevel::new(2).with_task(t));
        let sol = solve_hqp(&stack, &HqpSettings::default(), None).unwrap();
        assert_eq!(sol.qdot, DVector::zeros(3));
    }
}
