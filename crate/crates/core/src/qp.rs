//! Dense strictly convex QP:
//!
//! ```text
//!     minimize   1/2 x' Q x + c' x
//!     subject to C x <= d
//! ```
//!
//! Solved with the Goldfarb–Idnani dual active-set method. The iterate starts
//! at the unconstrained minimizer and violated constraints are added one at a
//! time, dropping any whose multiplier would turn negative. Each step
//! refactorizes `L^-1 N` (with `Q = L L'` and `N` the active normals) from
//! scratch; the problems built by the cascade are small enough that the
//! incremental Givens updates of the original method are not worth their
//! bookkeeping.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("hessian is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("iteration limit reached after {} iterations", best.iterations)]
    MaxIterations { best: Box<QpSolution> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub bounds: DVector<f64>,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, constraints: DMatrix<f64>, bounds: DVector<f64>) -> Self {
        Self { hessian, linear, constraints, bounds }
    }

    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self { hessian, linear, constraints: DMatrix::zeros(0, n), bounds: DVector::zeros(0) }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.bounds.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Largest constraint violation `max(C x - d)`, or `-inf` without constraints.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.constraints * x - &self.bounds).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        if self.hessian.shape() != (n, n) {
            return Err(QpError::Dimension(format!("hessian {:?} vs {n} variables", self.hessian.shape())));
        }
        if self.constraints.ncols() != n || self.constraints.nrows() != self.bounds.len() {
            return Err(QpError::Dimension(format!(
                "constraints {:?} vs {} bounds, {n} variables",
                self.constraints.shape(),
                self.bounds.len()
            )));
        }
        let scale = self.hessian.amax().max(1.0);
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(())
    }

    /// KKT residuals of a primal/dual pair.
    pub fn kkt(&self, x: &DVector<f64>, multipliers: &DVector<f64>) -> KktResiduals {
        let grad = &self.hessian * x + &self.linear + self.constraints.transpose() * multipliers;
        let slack = &self.constraints * x - &self.bounds;
        KktResiduals {
            stationarity: grad.amax(),
            primal: slack.iter().copied().fold(0.0, f64::max),
            complementarity: multipliers.dot(&slack).abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    /// `|Q x + c + C' lambda|_inf`
    pub stationarity: f64,
    /// `max(C x - d, 0)`
    pub primal: f64,
    /// `|lambda' (C x - d)|`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub multipliers: DVector<f64>,
    /// Recomputed from `(x, multipliers)`.
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub active_set: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 4000 }
    }
}

/// Solve `problem`. A warm start point seeds which violated constraints are
/// added first; it never changes the minimizer.
pub fn solve_qp(
    problem: &QpProblem,
    settings: &QpSettings,
    warm_start: Option<&DVector<f64>>,
) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let n = problem.dim();
    let k = problem.num_constraints();
    let chol = Cholesky::new(problem.hessian.clone()).ok_or(QpError::NotPositiveDefinite)?;
    let lower = chol.l();

    let mut x = -chol.solve(&problem.linear);
    if k == 0 {
        let multipliers = DVector::zeros(0);
        let kkt = problem.kkt(&x, &multipliers);
        return Ok(QpSolution { x, multipliers, kkt, iterations: 0, active_set: vec![] });
    }

    // Normals of the `>=` form: n_j' x >= b_j with n_j = -C_j', b_j = -d_j.
    // Precompute L^-1 n_j for every constraint.
    let scaled_normals: Vec<DVector<f64>> = (0..k)
        .map(|j| {
            let nj: DVector<f64> = -problem.constraints.row(j).transpose();
            lower.solve_lower_triangular(&nj).expect("cholesky factor is nonsingular")
        })
        .collect();

    // Violations are judged relative to the size of the terms in C x - d.
    let feas_tol = settings.tol * 1e-2;
    let abs_constraints = problem.constraints.abs();
    let priority: Vec<bool> = match warm_start {
        Some(x0) if x0.len() == n => {
            let slack = &problem.constraints * x0 - &problem.bounds;
            slack.iter().zip(problem.bounds.iter()).map(|(s, d)| *s >= -1e-7 * (1.0 + d.abs())).collect()
        }
        _ => vec![false; k],
    };

    let mut active: Vec<usize> = Vec::new();
    let mut tolerated: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;

    let finish = |x: DVector<f64>, active: &[usize], u: &[f64], iterations: usize| {
        let mut multipliers = DVector::zeros(k);
        for (&j, &uj) in active.iter().zip(u) {
            multipliers[j] = uj.max(0.0);
        }
        let kkt = problem.kkt(&x, &multipliers);
        QpSolution { x, multipliers, kkt, iterations, active_set: active.to_vec() }
    };

    loop {
        // Step 1: pick a violated constraint, warm-start candidates first.
        let slack = &problem.bounds - &problem.constraints * &x;
        let term_scale = &abs_constraints * x.abs();
        let mut chosen: Option<(usize, f64)> = None;
        for pass_priority in [true, false] {
            for j in 0..k {
                if active.contains(&j) || tolerated.contains(&j) || (pass_priority && !priority[j]) {
                    continue;
                }
                let tol_j = feas_tol * (1.0 + problem.bounds[j].abs() + term_scale[j]);
                if slack[j] < -tol_j && chosen.is_none_or(|(_, s)| slack[j] < s) {
                    chosen = Some((j, slack[j]));
                }
            }
            if chosen.is_some() {
                break;
            }
        }
        let Some((p, _)) = chosen else {
            return Ok(finish(x, &active, &u, iterations));
        };

        let np: DVector<f64> = -problem.constraints.row(p).transpose();
        let bp = -problem.bounds[p];
        let dp = &scaled_normals[p];
        let mut u_plus = u.clone();
        u_plus.push(0.0);

        // Step 2: move toward satisfying constraint p.
        loop {
            iterations += 1;
            if iterations > settings.max_iter {
                let best = finish(x, &active, &u, iterations);
                return Err(QpError::MaxIterations { best: Box::new(best) });
            }
            let (z, r) = step_directions(&lower, &scaled_normals, &active, dp);

            // Partial step: largest t keeping active multipliers nonnegative.
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (i, &ri) in r.iter().enumerate() {
                if ri > 0.0 {
                    let ratio = u_plus[i] / ri;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(i);
                    }
                }
            }
            // Full step: reach the constraint boundary.
            let curvature = z.dot(&np);
            let t2 = if z.amax() > 1e-14 * (1.0 + x.amax()) && curvature > 0.0 {
                -(np.dot(&x) - bp) / curvature
            } else {
                f64::INFINITY
            };

            if t1.is_infinite() && t2.is_infinite() {
                // A dependent normal that is violated only at round-off level
                // (degenerate parallel bounds) is satisfied within tolerance.
                let violation = bp - np.dot(&x);
                let untouched = u_plus.last().is_some_and(|&up| up == 0.0);
                if untouched && violation <= settings.tol * (1.0 + bp.abs() + np.abs().dot(&x.abs())) {
                    u_plus.pop();
                    u = u_plus;
                    tolerated.push(p);
                    break;
                }
                return Err(QpError::Infeasible);
            }
            if t2.is_infinite() {
                // Normal is dependent on the active set: shift multipliers and drop one.
                let l = drop_at.expect("finite partial step has a blocking index");
                for (i, ri) in r.iter().enumerate() {
                    u_plus[i] -= t1 * ri;
                }
                *u_plus.last_mut().unwrap() += t1;
                active.remove(l);
                u_plus.remove(l);
                continue;
            }
            let full = t2 <= t1;
            let t = if full { t2 } else { t1 };
            x += &z * t;
            for (i, ri) in r.iter().enumerate() {
                u_plus[i] -= t * ri;
            }
            *u_plus.last_mut().unwrap() += t;
            if full {
                active.push(p);
                u = u_plus;
                tolerated.clear();
                // Incremental updates drift on ill-conditioned problems; x is the
                // optimum on the active set, so recompute it there.
                if let Some((xr, ur)) = active_set_point(problem, &active) {
                    if ur.iter().all(|&v| v >= 0.0) {
                        x = xr;
                        u = ur;
                    }
                }
                break;
            }
            let l = drop_at.expect("partial step has a blocking index");
            active.remove(l);
            u_plus.remove(l);
        }
    }
}

/// Minimizer and multipliers of the problem with the `active` constraints held
/// as equalities, from the KKT system with one round of iterative refinement.
fn active_set_point(problem: &QpProblem, active: &[usize]) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = problem.dim();
    let q = active.len();
    // [ H  C_A' ] [x]   [-c ]
    // [ C_A  0  ] [l] = [d_A]
    let mut kkt = DMatrix::zeros(n + q, n + q);
    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
    let mut rhs = DVector::zeros(n + q);
    rhs.rows_mut(0, n).copy_from(&(-&problem.linear));
    for (col, &j) in active.iter().enumerate() {
        let row = problem.constraints.row(j);
        kkt.view_mut((n + col, 0), (1, n)).copy_from(&row);
        kkt.view_mut((0, n + col), (n, 1)).copy_from(&row.transpose());
        rhs[n + col] = problem.bounds[j];
    }
    let lu = kkt.clone().full_piv_lu();
    let mut sol = lu.solve(&rhs)?;
    let residual = &rhs - &kkt * &sol;
    sol += lu.solve(&residual)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, q).iter().copied().collect()))
}

/// Primal direction `z` and dual direction `r` for adding a constraint whose
/// scaled normal is `dp`, given the current active set.
fn step_directions(
    lower: &DMatrix<f64>,
    scaled_normals: &[DVector<f64>],
    active: &[usize],
    dp: &DVector<f64>,
) -> (DVector<f64>, Vec<f64>) {
    let n = dp.len();
    let upper = lower.transpose();
    if active.is_empty() {
        let z = upper.solve_upper_triangular(dp).expect("nonsingular");
        return (z, vec![]);
    }
    let q = active.len();
    let mut b = DMatrix::zeros(n, q);
    for (col, &j) in active.iter().enumerate() {
        b.set_column(col, &scaled_normals[j]);
    }
    let qr = b.qr();
    let q1 = qr.q();
    let r_mat = qr.r();
    let d1 = q1.transpose() * dp;
    let d_perp = dp - &q1 * &d1;
    let z = upper.solve_upper_triangular(&d_perp).expect("nonsingular");
    let r = r_mat
        .solve_upper_triangular(&d1)
        .unwrap_or_else(|| DVector::<f64>::zeros_generic(Dyn(q), nalgebra::Const::<1>));
    (z, r.iter().copied().collect())
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Random strictly convex problem with a known interior point `x0`.
    fn random_problem(seed: u64) -> (QpProblem, DVector<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=8);
        let k = rng.gen_range(0..=12);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let hessian = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
        let linear = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        let constraints = DMatrix::from_fn(k, n, |_, _| rng.gen_range(-1.0..1.0));
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let bounds = &constraints * &x0 + DVector::from_fn(k, |_, _| rng.gen_range(0.0..0.5));
        (QpProblem::new(hessian, linear, constraints, bounds), x0)
    }

    proptest! {
        #[test]
        fn no_feasible_sample_does_better(seed in any::<u64>()) {
            let (problem, x0) = random_problem(seed);
            let sol = solve_qp(&problem, &QpSettings::default(), None).unwrap();
            prop_assert!(sol.kkt.max() < 1e-8);
            let best = problem.objective(&sol.x);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let mut tried = 0;
            while tried < 10_000 {
                let lambda = rng.gen_range(0.0..1.0);
                let noise = DVector::from_fn(problem.dim(), |_, _| rng.gen_range(-0.5..0.5));
                let y = &sol.x * lambda + &x0 * (1.0 - lambda) + noise * (1.0 - lambda);
                if problem.max_violation(&y) <= 0.0 {
                    prop_assert!(problem.objective(&y) >= best - 1e-9);
                }
                tried += 1;
            }
        }

        #[test]
        fn argmin_ignores_objective_scale(seed in any::<u64>(), alpha in 0.01..100.0f64) {
            let (problem, _) = random_problem(seed);
            let scaled = QpProblem::new(&problem.hessian * alpha, &problem.linear * alpha, problem.constraints.clone(), problem.bounds.clone());
            let a = solve_qp(&problem, &QpSettings::default(), None).unwrap();
            let b = solve_qp(&scaled, &QpSettings::default(), None).unwrap();
            prop_assert!((&a.x - &b.x).amax() < 1e-8 * a.x.amax().max(1.0));
        }

        #[test]
        fn warm_start_never_moves_the_solution(seed in any::<u64>(), warm in prop::collection::vec(-2.0..2.0f64, 8)) {
            let (problem, _) = random_problem(seed);
            let cold = solve_qp(&problem, &QpSettings::default(), None).unwrap();
            let seed_point = DVector::from_column_slice(&warm[..problem.dim()]);
            let hot = solve_qp(&problem, &QpSettings::default(), Some(&seed_point)).unwrap();
            prop_assert!((&cold.x - &hot.x).amax() < 1e-8 * cold.x.amax().max(1.0));
            let again = solve_qp(&problem, &QpSettings::default(), Some(&cold.x)).unwrap();
            prop_assert!((&cold.x - &again.x).amax() < 1e-8 * cold.x.amax().max(1.0));
        }
    }
}
