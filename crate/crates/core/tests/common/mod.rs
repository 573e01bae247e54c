//! Oracles for the acceptance suite, written against first principles rather
//! than the library's own helpers.

use hqp_core::scenario::{load_scenario, ScenarioConfig, StepRecord};
use hqp_core::{KinematicChain, QpProblem};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use std::path::PathBuf;

pub fn bundled(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/scenarios").join(format!("{name}.json"));
    load_scenario(path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn random_q(chain: &KinematicChain, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_iterator(
        chain.dof(),
        chain.limits().iter().map(|l| {
            let (lo, hi) = (l.lower.max(-3.0), l.upper.min(3.0));
            lo + (hi - lo) * rng.gen_range(0.05..0.95)
        }),
    )
}

pub fn unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() < 1.0 {
            return v.normalize();
        }
    }
}

// ---------------------------------------------------------------------------
// Statistics from a raw series

pub fn max_of(series: &[StepRecord], f: impl Fn(&StepRecord) -> f64) -> f64 {
    series.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_of(series: &[StepRecord], f: impl Fn(&StepRecord) -> f64) -> f64 {
    series.iter().map(f).fold(f64::INFINITY, f64::min)
}

pub fn mean_of(series: &[StepRecord], f: impl Fn(&StepRecord) -> f64) -> f64 {
    series.iter().map(f).sum::<f64>() / series.len() as f64
}

/// Index of the first sample after the blend peak at which `beta_a` is back to zero.
pub fn release_index(series: &[StepRecord]) -> Option<usize> {
    let peak = series.iter().position(|r| r.beta_a > 0.0)?;
    series[peak..].iter().position(|r| r.beta_a == 0.0).map(|i| i + peak)
}

// ---------------------------------------------------------------------------
// Differentiation

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(a: &Vector3<f64>, b: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let s = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (a + ab * s - p).norm()
}

/// Central-difference gradient of a scalar function of `q`.
pub fn fd_gradient(q: &DVector<f64>, h: f64, f: impl Fn(&DVector<f64>) -> f64) -> DVector<f64> {
    let mut probe = q.clone();
    DVector::from_iterator(
        q.len(),
        (0..q.len()).map(|j| {
            probe[j] = q[j] + h;
            let plus = f(&probe);
            probe[j] = q[j] - h;
            let minus = f(&probe);
            probe[j] = q[j];
            (plus - minus) / (2.0 * h)
        }),
    )
}

/// Fourth-order central-difference gradient.
pub fn fd_gradient4(q: &DVector<f64>, h: f64, f: impl Fn(&DVector<f64>) -> f64) -> DVector<f64> {
    let mut probe = q.clone();
    DVector::from_iterator(
        q.len(),
        (0..q.len()).map(|j| {
            let mut at = |s: f64| {
                probe[j] = q[j] + s * h;
                let v = f(&probe);
                probe[j] = q[j];
                v
            };
            (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
        }),
    )
}

fn unskew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Spatial velocity Jacobian of the end effector (linear velocity of its
/// origin, then world angular velocity) from central differences of the pose.
pub fn fd_twist_jacobian(chain: &KinematicChain, q: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = chain.dof();
    let r0 = chain.end_effector_pose(q).unwrap().rotation;
    let mut jac = DMatrix::zeros(6, n);
    let mut probe = q.clone();
    for j in 0..n {
        probe[j] = q[j] + h;
        let plus = chain.end_effector_pose(&probe).unwrap();
        probe[j] = q[j] - h;
        let minus = chain.end_effector_pose(&probe).unwrap();
        probe[j] = q[j];
        let lin = (plus.translation - minus.translation) / (2.0 * h);
        let ang = unskew(&((plus.rotation - minus.rotation) * r0.transpose())) / (2.0 * h);
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(&ang);
    }
    jac
}

/// Yoshikawa index `sqrt(det(J J^T))` of a 6×n Jacobian.
pub fn manipulability(jac: &DMatrix<f64>) -> f64 {
    (jac * jac.transpose()).determinant().max(0.0).sqrt()
}

pub fn row(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}

/// `|a - b|_F / |b|_F`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------------------
// QP oracles

/// Stationarity, primal and dual feasibility and complementarity of
/// `(x, lambda)` for `min 1/2 x'Hx + c'x s.t. Cx <= d`.
pub fn kkt_residual(p: &QpProblem, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let stationarity = (&p.hessian * x + &p.linear + p.constraints.transpose() * lambda).amax();
    let slack = &p.constraints * x - &p.bounds;
    let primal = slack.iter().copied().fold(0.0, f64::max);
    let dual = lambda.iter().map(|l| (-l).max(0.0)).fold(0.0, f64::max);
    let complementarity = lambda.iter().zip(slack.iter()).map(|(l, s)| (l * s).abs()).fold(0.0, f64::max);
    stationarity.max(primal).max(dual).max(complementarity)
}

/// Minimizer from accelerated projected gradient on the dual
/// `min_{l >= 0} 1/2 (c + C'l)' H^-1 (c + C'l) + d'l`, with `x(l) = -H^-1 (c + C'l)`.
pub fn projected_gradient_qp(p: &QpProblem, iterations: usize) -> DVector<f64> {
    let chol = p.hessian.clone().cholesky().expect("positive definite");
    let x_of = |l: &DVector<f64>| -chol.solve(&(&p.linear + p.constraints.transpose() * l));
    let k = p.bounds.len();
    if k == 0 {
        return x_of(&DVector::zeros(0));
    }
    let m = &p.constraints * chol.solve(&p.constraints.transpose());
    let lipschitz = m.symmetric_eigenvalues().max().max(f64::MIN_POSITIVE);
    let step = 1.0 / lipschitz;
    let mut l = DVector::<f64>::zeros(k);
    let mut y = l.clone();
    let mut t = 1.0_f64;
    let dual = |l: &DVector<f64>| {
        let g = &p.linear + p.constraints.transpose() * l;
        0.5 * g.dot(&chol.solve(&g)) + p.bounds.dot(l)
    };
    let mut last = dual(&l);
    for _ in 0..iterations {
        let grad = &p.bounds - &p.constraints * x_of(&y);
        let next = (&y - grad * step).map(|v| v.max(0.0));
        let value = dual(&next);
        if value > last {
            // Restart momentum when the objective goes up.
            t = 1.0;
            y = l.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &l) * ((t - 1.0) / t_next);
        if (&next - &l).amax() <= 1e-15 * (1.0 + next.amax()) {
            l = next;
            break;
        }
        l = next;
        t = t_next;
        last = value;
    }
    x_of(&l)
}

/// Random strictly convex QP with a known feasible point at which about a
/// fifth of the constraints are tight.
pub fn random_qp(rng: &mut impl Rng) -> QpProblem {
    let n = rng.gen_range(1..=10);
    let k = rng.gen_range(0..=16);
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let hessian = m.transpose() * &m + DMatrix::identity(n, n) * rng.gen_range(0.05..1.0);
    let linear = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let constraints = DMatrix::from_fn(k, n, |_, _| rng.gen_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
    let bounds =
        &constraints * &x0 + DVector::from_fn(k, |_, _| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) });
    QpProblem::new(hessian, linear, constraints, bounds)
}
