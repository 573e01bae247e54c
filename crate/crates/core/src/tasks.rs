//! Task and constraint builders: RCM, pose tracking, collision avoidance,
//! manipulability maximization and joint limits, plus the transition gain
//! that blends tracking and collision avoidance.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{self, GeometryError, Segment};
use crate::kinematics::{log6, KinematicChain, KinematicsError, Pose};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("chain has no tool axis")]
    NoToolAxis,
    #[error("capsule link {0} does not exist")]
    NoSuchLink(usize),
    #[error("obstacle lies on the axis of link {link}; repulsion direction undefined")]
    ObstacleOnAxis { link: usize },
    #[error("joint {joint} at {value} is outside its limits [{lower}, {upper}]")]
    JointOutOfLimits { joint: usize, value: f64, lower: f64, upper: f64 },
}

/// Controller gains and thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainConfig {
    /// Residual gain of the RCM task (1/s).
    pub k_r_rcm: f64,
    /// Residual gain of the tracking task (1/s).
    pub k_r_tracking: f64,
    /// Residual gain of the collision task (1/s).
    pub k_r_collision: f64,
    /// Joint-velocity regularization weight.
    pub k_d: f64,
    /// Slack weight.
    pub k_w: f64,
    /// Control period (s).
    pub dt: f64,
    /// Clearance at which the transition gain starts to rise (m).
    pub eps_c: f64,
    /// Buffer added to `eps_c` for entering a collision pair into the stack (m).
    pub alpha_c: f64,
    /// RCM deviation below which the RCM row is switched off (m).
    pub rcm_tolerance: f64,
    /// Central-difference step for the manipulability gradient (rad).
    pub manipulability_fd_step: f64,
    /// How far a joint may sit outside its limits before it is an error.
    pub limit_tolerance: f64,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            k_r_rcm: 5.0,
            k_r_tracking: 5.0,
            k_r_collision: 5.0,
            k_d: 1e-3,
            k_w: 1e4,
            dt: 0.01,
            eps_c: 0.025,
            alpha_c: 0.005,
            rcm_tolerance: 1e-9,
            manipulability_fd_step: 1e-6,
            limit_tolerance: 1e-6,
        }
    }
}

impl GainConfig {
    /// Distance below which a collision pair enters the stack.
    pub fn activation_distance(&self) -> f64 {
        self.eps_c + self.alpha_c
    }

    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            (self.dt > 0.0, "dt must be > 0"),
            (self.eps_c > 0.0, "eps_c must be > 0"),
            (self.alpha_c >= 0.0, "alpha_c must be >= 0"),
            (self.k_w > 0.0, "k_w must be > 0"),
            (self.k_d >= 0.0, "k_d must be >= 0"),
            (self.k_r_rcm > 0.0, "k_r_rcm must be > 0"),
            (self.k_r_tracking > 0.0, "k_r_tracking must be > 0"),
            (self.k_r_collision > 0.0, "k_r_collision must be > 0"),
            (self.rcm_tolerance >= 0.0, "rcm_tolerance must be >= 0"),
            (self.manipulability_fd_step > 0.0, "manipulability_fd_step must be > 0"),
            (self.limit_tolerance >= 0.0, "limit_tolerance must be >= 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err((*msg).to_string()),
            None => Ok(()),
        }
    }
}

/// Least-squares rows `weight/2 * |J qdot - (gain * r + feedforward)|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
    /// Task weight `K_t`.
    pub weight: f64,
    /// Residual gain `K_r`.
    pub gain: f64,
    /// Desired task-space rate added to the closed-loop term.
    pub feedforward: Option<DVector<f64>>,
    pub label: String,
}

impl TaskSpec {
    pub fn new(jacobian: DMatrix<f64>, residual: DVector<f64>, gain: f64, label: impl Into<String>) -> Self {
        debug_assert_eq!(jacobian.nrows(), residual.len());
        Self { jacobian, residual, weight: 1.0, gain, feedforward: None, label: label.into() }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_feedforward(mut self, rate: DVector<f64>) -> Self {
        self.feedforward = Some(rate);
        self
    }

    pub fn rows(&self) -> usize {
        self.jacobian.nrows()
    }

    pub fn cols(&self) -> usize {
        self.jacobian.ncols()
    }

    /// Desired task rate `K_r r (+ feedforward)`.
    pub fn target(&self) -> DVector<f64> {
        let mut b = &self.residual * self.gain;
        if let Some(ff) = &self.feedforward {
            b += ff;
        }
        b
    }

    pub fn is_finite(&self) -> bool {
        self.jacobian.iter().chain(self.residual.iter()).all(|v| v.is_finite())
    }
}

/// Inequality block `C qdot <= d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSpec {
    pub matrix: DMatrix<f64>,
    pub bound: DVector<f64>,
    pub label: String,
}

impl ConstraintSpec {
    pub fn new(matrix: DMatrix<f64>, bound: DVector<f64>, label: impl Into<String>) -> Self {
        debug_assert_eq!(matrix.nrows(), bound.len());
        Self { matrix, bound, label: label.into() }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Poses and frame-origin Jacobians at one configuration, shared by all builders.
#[derive(Clone, Debug)]
pub struct ChainState<'a> {
    pub chain: &'a KinematicChain,
    pub q: DVector<f64>,
    pub poses: Vec<Pose>,
    origin_jacobians: Vec<DMatrix<f64>>,
}

impl<'a> ChainState<'a> {
    pub fn new(chain: &'a KinematicChain, q: &DVector<f64>) -> Result<Self, KinematicsError> {
        let poses = chain.forward_kinematics(q)?;
        let origin_jacobians = chain.origin_jacobians(&poses);
        Ok(Self { chain, q: q.clone(), poses, origin_jacobians })
    }

    pub fn end_effector(&self) -> &Pose {
        &self.poses[self.chain.end_effector]
    }

    /// World segment of the tool axis and the Jacobians of its endpoints.
    pub fn tool_axis(&self) -> Result<(Segment, DMatrix<f64>, DMatrix<f64>), TaskError> {
        let axis = self.chain.tool_axis.ok_or(TaskError::NoToolAxis)?;
        let pose = &self.poses[axis.frame];
        let a = pose.transform_point(&axis.a);
        let b = pose.transform_point(&axis.b);
        let seg = Segment::new(a, b)?;
        let ja = self.chain.jacobian_from_poses(&self.poses, axis.frame, &a, false);
        let jb = self.chain.jacobian_from_poses(&self.poses, axis.frame, &b, false);
        Ok((seg, ja, jb))
    }

    /// World segment of capsule `link` (frame origin to frame origin).
    pub fn link_segment(&self, link: usize) -> Result<(Segment, f64), TaskError> {
        let c = self.chain.capsules.get(link).ok_or(TaskError::NoSuchLink(link))?;
        let seg = Segment::new(self.poses[c.frame_a].translation, self.poses[c.frame_b].translation)?;
        Ok((seg, c.radius))
    }

    fn link_jacobians(&self, link: usize) -> Result<(&DMatrix<f64>, &DMatrix<f64>), TaskError> {
        let c = self.chain.capsules.get(link).ok_or(TaskError::NoSuchLink(link))?;
        Ok((&self.origin_jacobians[c.frame_a], &self.origin_jacobians[c.frame_b]))
    }

    /// RCM deviation `p_e = p_trocar - p_rcm`.
    pub fn rcm_deviation(&self, trocar: &Vector3<f64>) -> Result<Vector3<f64>, TaskError> {
        let (seg, _, _) = self.tool_axis()?;
        Ok(trocar - geometry::closest_point_on_segment(&seg, trocar)?.point)
    }
}

pub fn rcm_task(
    chain: &KinematicChain,
    q: &DVector<f64>,
    trocar: &Vector3<f64>,
    gains: &GainConfig,
) -> Result<TaskSpec, TaskError> {
    rcm_task_at(&ChainState::new(chain, q)?, trocar, gains)
}

pub fn rcm_task_at(state: &ChainState, trocar: &Vector3<f64>, gains: &GainConfig) -> Result<TaskSpec, TaskError> {
    let n = state.chain.dof();
    let (seg, ja, jb) = state.tool_axis()?;
    let moving = geometry::moving_closest_point(&seg, &ja, &jb, trocar)?;
    // p_e points from the tool axis to the trocar, so -p_e^T dp_rcm/dq = d|p_e|/dq.
    let deviation = trocar - moving.closest.point;
    let norm = deviation.norm();
    if norm < gains.rcm_tolerance || norm == 0.0 {
        return Ok(TaskSpec::new(DMatrix::zeros(1, n), DVector::zeros(1), gains.k_r_rcm, "rcm"));
    }
    let unit = deviation / norm;
    let jac = -(unit.transpose() * &moving.jacobian);
    Ok(TaskSpec::new(
        DMatrix::from_row_slice(1, n, jac.as_slice()),
        DVector::from_element(1, -norm),
        gains.k_r_rcm,
        "rcm",
    ))
}

pub fn tracking_task(
    chain: &KinematicChain,
    q: &DVector<f64>,
    desired: &Pose,
    gains: &GainConfig,
) -> Result<TaskSpec, TaskError> {
    tracking_task_at(&ChainState::new(chain, q)?, desired, gains)
}

pub fn tracking_task_at(state: &ChainState, desired: &Pose, gains: &GainConfig) -> Result<TaskSpec, TaskError> {
    let ee = state.chain.end_effector;
    let jac = state.chain.jacobian_from_poses(&state.poses, ee, &state.poses[ee].translation, true);
    let err = log6(&(desired * &state.poses[ee].inverse())).to_vector();
    Ok(TaskSpec::new(jac, DVector::from_column_slice(err.as_slice()), gains.k_r_tracking, "tracking"))
}

/// Collision task for capsule `link` against a point obstacle `obstacle`.
pub fn collision_task(
    chain: &KinematicChain,
    q: &DVector<f64>,
    obstacle: &Vector3<f64>,
    link: usize,
    gains: &GainConfig,
) -> Result<TaskSpec, TaskError> {
    collision_task_at(&ChainState::new(chain, q)?, obstacle, link, gains)
}

pub fn collision_task_at(
    state: &ChainState,
    obstacle: &Vector3<f64>,
    link: usize,
    gains: &GainConfig,
) -> Result<TaskSpec, TaskError> {
    let n = state.chain.dof();
    let (seg, _) = state.link_segment(link)?;
    let (ja, jb) = state.link_jacobians(link)?;
    let moving = geometry::moving_closest_point(&seg, ja, jb, obstacle)?;
    let d = moving.closest.point - obstacle;
    let dist = d.norm();
    if dist < 1e-9 {
        return Err(TaskError::ObstacleOnAxis { link });
    }
    let jac = (d / dist).transpose() * &moving.jacobian;
    Ok(TaskSpec::new(
        DMatrix::from_row_slice(1, n, jac.as_slice()),
        DVector::from_element(1, dist),
        gains.k_r_collision,
        format!("collision[{link}]"),
    ))
}

/// Collision task for capsule `link` against another segment (e.g. a second tool).
/// The obstacle is held fixed; its nearest point acts as the point obstacle.
pub fn collision_task_segment_at(
    state: &ChainState,
    obstacle: &Segment,
    link: usize,
    gains: &GainConfig,
) -> Result<TaskSpec, TaskError> {
    let (seg, _) = state.link_segment(link)?;
    let pair = geometry::segment_segment_closest(&seg, obstacle)?;
    collision_task_at(state, &pair.on_second, link, gains)
}

/// `sqrt(det(J J^T))`, with round-off negatives clamped to zero.
pub fn manipulability(jacobian: &DMatrix<f64>) -> f64 {
    let jjt = jacobian * jacobian.transpose();
    jjt.determinant().max(0.0).sqrt()
}

/// Manipulability of the full 6×n Jacobian of `frame`.
pub fn manipulability_index(chain: &KinematicChain, q: &DVector<f64>, frame: usize) -> Result<f64, TaskError> {
    Ok(manipulability(&chain.geometric_jacobian(q, frame)?))
}

/// Manipulability of a row subset of the Jacobian of `frame` (e.g. `[0, 1]` for planar position).
pub fn manipulability_index_rows(
    chain: &KinematicChain,
    q: &DVector<f64>,
    frame: usize,
    rows: &[usize],
) -> Result<f64, TaskError> {
    let jac = chain.geometric_jacobian(q, frame)?;
    Ok(manipulability(&jac.select_rows(rows)))
}

/// Central-difference gradient of the end-effector manipulability.
pub fn manipulability_gradient(chain: &KinematicChain, q: &DVector<f64>, step: f64) -> Result<DVector<f64>, TaskError> {
    let ee = chain.end_effector;
    let mut grad = DVector::zeros(q.len());
    let mut probe = q.clone();
    for j in 0..q.len() {
        probe[j] = q[j] + step;
        let plus = manipulability_index(chain, &probe, ee)?;
        probe[j] = q[j] - step;
        let minus = manipulability_index(chain, &probe, ee)?;
        probe[j] = q[j];
        grad[j] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// `min |dt grad(m)^T qdot - m|^2`: one row pushing manipulability upward.
pub fn manipulability_task(
    chain: &KinematicChain,
    q: &DVector<f64>,
    gains: &GainConfig,
) -> Result<TaskSpec, TaskError> {
    let m = manipulability_index(chain, q, chain.end_effector)?;
    let grad = manipulability_gradient(chain, q, gains.manipulability_fd_step)?;
    let jac = DMatrix::from_row_slice(1, q.len(), (grad * gains.dt).as_slice());
    Ok(TaskSpec::new(jac, DVector::from_element(1, m), 1.0, "manipulability"))
}

/// Position and velocity limits as `[I; -I] qdot <= [qbar; -qlow]`.
///
/// Joints slightly outside their range (within `limit_tolerance`) are treated
/// as sitting on the limit.
pub fn joint_limit_constraint(
    chain: &KinematicChain,
    q: &DVector<f64>,
    gains: &GainConfig,
) -> Result<ConstraintSpec, TaskError> {
    let n = chain.dof();
    if q.len() != n {
        return Err(KinematicsError::Dimension { expected: n, got: q.len() }.into());
    }
    let mut matrix = DMatrix::zeros(2 * n, n);
    let mut bound = DVector::zeros(2 * n);
    for (j, lim) in chain.limits().iter().enumerate() {
        let mut value = q[j];
        if value < lim.lower - gains.limit_tolerance || value > lim.upper + gains.limit_tolerance || !value.is_finite()
        {
            return Err(TaskError::JointOutOfLimits { joint: j, value, lower: lim.lower, upper: lim.upper });
        }
        if value < lim.lower || value > lim.upper {
            log::warn!("joint {j} at {value} clamped into [{}, {}]", lim.lower, lim.upper);
            value = value.clamp(lim.lower, lim.upper);
        }
        let upper = ((lim.upper - value) / gains.dt).min(lim.velocity);
        let lower = ((lim.lower - value) / gains.dt).max(-lim.velocity);
        matrix[(j, j)] = 1.0;
        matrix[(n + j, j)] = -1.0;
        bound[j] = upper;
        bound[n + j] = -lower;
    }
    Ok(ConstraintSpec::new(matrix, bound, "joint_limits"))
}

/// `clamp(1 - d / eps_c, 0, 1)`.
pub fn transition_gain(distance: f64, gains: &GainConfig) -> f64 {
    (1.0 - distance / gains.eps_c).clamp(0.0, 1.0)
}

/// Tracking and collision weights for a transition gain: `(1 - beta, beta)`.
pub fn blend_weights(beta: f64) -> (f64, f64) {
    (1.0 - beta, beta)
}
