use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::se3::{rotation_about, Pose};
use super::KinematicsError;

const AXIS_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
    /// Rigid attachment; consumes no joint coordinate.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: f64,
    pub upper: f64,
    pub velocity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub kind: JointKind,
    /// Unit axis in the joint's own frame.
    pub axis: Vector3<f64>,
    /// Transform from the parent frame to this joint at zero displacement.
    pub origin: Pose,
    pub limits: JointLimits,
}

impl Joint {
    fn motion(&self, q: f64) -> Pose {
        match self.kind {
            JointKind::Revolute => Pose::new(rotation_about(&self.axis, q), Vector3::zeros()),
            JointKind::Prismatic => Pose::from_translation(self.axis * q),
            JointKind::Fixed => Pose::identity(),
        }
    }
}

/// A capsule spanning the origins of two frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub frame_a: usize,
    pub frame_b: usize,
    pub radius: f64,
}

/// The tool shaft line, given as two points in one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToolAxis {
    pub frame: usize,
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

/// Serial chain. Frame 0 is the base; frame `i + 1` is the frame after joint `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain {
    joints: Vec<Joint>,
    /// Joint-coordinate index of each joint (`None` for fixed joints).
    coordinate: Vec<Option<usize>>,
    dof: usize,
    pub base: Pose,
    pub end_effector: usize,
    pub tool_axis: Option<ToolAxis>,
    pub capsules: Vec<Capsule>,
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Serialize, Deserialize)]
struct OriginFile {
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct JointFile {
    kind: JointKind,
    #[serde(default = "default_axis")]
    axis: [f64; 3],
    origin: OriginFile,
    #[serde(default)]
    limits: Option<JointLimits>,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Serialize, Deserialize)]
struct ToolAxisFile {
    frame: usize,
    a: [f64; 3],
    b: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainFile {
    joints: Vec<JointFile>,
    end_effector: usize,
    #[serde(default)]
    tool_axis: Option<ToolAxisFile>,
    #[serde(default)]
    capsules: Vec<Capsule>,
}

impl KinematicChain {
    /// Parse and validate a chain description (JSON).
    pub fn from_json(text: &str) -> Result<Self, KinematicsError> {
        let file: ChainFile = serde_json::from_str(text).map_err(|e| KinematicsError::Parse(e.to_string()))?;
        let mut joints = Vec::with_capacity(file.joints.len());
        for (i, j) in file.joints.into_iter().enumerate() {
            let limits = match (j.kind, j.limits) {
                (_, Some(l)) => l,
                (JointKind::Fixed, None) => JointLimits { lower: 0.0, upper: 0.0, velocity: 0.0 },
                (_, None) => return Err(KinematicsError::Validation(format!("missing limits, joint {i}"))),
            };
            joints.push(Joint {
                kind: j.kind,
                axis: Vector3::from(j.axis),
                origin: Pose::from_xyz_rpy(j.origin.xyz, j.origin.rpy),
                limits,
            });
        }
        let tool_axis =
            file.tool_axis.map(|t| ToolAxis { frame: t.frame, a: Vector3::from(t.a), b: Vector3::from(t.b) });
        Self::new(joints, file.end_effector, tool_axis, file.capsules)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, KinematicsError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| KinematicsError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let joints = self
            .joints
            .iter()
            .map(|j| {
                let (roll, pitch, yaw) = rpy_of(&j.origin.rotation);
                JointFile {
                    kind: j.kind,
                    axis: j.axis.into(),
                    origin: OriginFile { xyz: j.origin.translation.into(), rpy: [roll, pitch, yaw] },
                    limits: (j.kind != JointKind::Fixed).then_some(j.limits),
                }
            })
            .collect();
        let file = ChainFile {
            joints,
            end_effector: self.end_effector,
            tool_axis: self.tool_axis.map(|t| ToolAxisFile { frame: t.frame, a: t.a.into(), b: t.b.into() }),
            capsules: self.capsules.clone(),
        };
        serde_json::to_string_pretty(&file).expect("chain serializes")
    }

    /// Build a chain from parts, enforcing every model invariant.
    pub fn new(
        joints: Vec<Joint>,
        end_effector: usize,
        tool_axis: Option<ToolAxis>,
        capsules: Vec<Capsule>,
    ) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::Validation("chain has no joints".into()));
        }
        let mut coordinate = Vec::with_capacity(joints.len());
        let mut dof = 0;
        for (i, j) in joints.iter().enumerate() {
            if j.kind == JointKind::Fixed {
                coordinate.push(None);
                continue;
            }
            if (j.axis.norm() - 1.0).abs() > AXIS_TOLERANCE {
                return Err(KinematicsError::Validation(format!("non-unit axis, joint {i}")));
            }
            let l = &j.limits;
            if !(l.lower < l.upper) {
                return Err(KinematicsError::Validation(format!("inverted limits, joint {i}")));
            }
            if !(l.velocity > 0.0) {
                return Err(KinematicsError::Validation(format!("non-positive velocity limit, joint {i}")));
            }
            coordinate.push(Some(dof));
            dof += 1;
        }
        if dof == 0 {
            return Err(KinematicsError::Validation("chain has no movable joints".into()));
        }
        let frames = joints.len() + 1;
        if end_effector >= frames {
            return Err(KinematicsError::Validation(format!(
                "end effector frame {end_effector} out of range (0..{frames})"
            )));
        }
        if let Some(t) = &tool_axis {
            if t.frame >= frames {
                return Err(KinematicsError::Validation(format!("tool axis frame {} out of range", t.frame)));
            }
            if (t.b - t.a).norm() <= 1e-9 {
                return Err(KinematicsError::Validation("degenerate tool axis".into()));
            }
        }
        for (k, c) in capsules.iter().enumerate() {
            if c.frame_a >= frames || c.frame_b >= frames {
                return Err(KinematicsError::Validation(format!("capsule {k} frame out of range")));
            }
            if !(c.radius >= 0.0) {
                return Err(KinematicsError::Validation(format!("negative radius, capsule {k}")));
            }
        }
        Ok(Self { joints, coordinate, dof, base: Pose::identity(), end_effector, tool_axis, capsules })
    }

    pub fn with_base(mut self, base: Pose) -> Self {
        self.base = base;
        self
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    /// Number of joint coordinates.
    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn frame_count(&self) -> usize {
        self.joints.len() + 1
    }

    /// Limits of the movable joints, in coordinate order.
    pub fn limits(&self) -> Vec<JointLimits> {
        self.joints.iter().filter(|j| j.kind != JointKind::Fixed).map(|j| j.limits).collect()
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<(), KinematicsError> {
        if q.len() != self.dof {
            return Err(KinematicsError::Dimension { expected: self.dof, got: q.len() });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(KinematicsError::NonFinite);
        }
        Ok(())
    }

    fn check_frame(&self, frame: usize) -> Result<(), KinematicsError> {
        if frame >= self.frame_count() {
            return Err(KinematicsError::Frame { frame, count: self.frame_count() });
        }
        Ok(())
    }

    /// World pose of every frame, base first.
    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<Vec<Pose>, KinematicsError> {
        self.check_q(q)?;
        Ok(self.frames_unchecked(q))
    }

    fn frames_unchecked(&self, q: &DVector<f64>) -> Vec<Pose> {
        let mut poses = Vec::with_capacity(self.frame_count());
        let mut current = self.base;
        poses.push(current);
        for (joint, coord) in self.joints.iter().zip(&self.coordinate) {
            let value = coord.map_or(0.0, |c| q[c]);
            current = current * joint.origin * joint.motion(value);
            poses.push(current);
        }
        poses
    }

    pub fn end_effector_pose(&self, q: &DVector<f64>) -> Result<Pose, KinematicsError> {
        Ok(self.forward_kinematics(q)?[self.end_effector])
    }

    /// 6×n world-frame Jacobian of `frame` (linear rows, then angular rows).
    pub fn geometric_jacobian(&self, q: &DVector<f64>, frame: usize) -> Result<DMatrix<f64>, KinematicsError> {
        self.check_q(q)?;
        self.check_frame(frame)?;
        let poses = self.frames_unchecked(q);
        Ok(self.jacobian_from_poses(&poses, frame, &poses[frame].translation, true))
    }

    /// 3×n linear Jacobian of a point rigidly attached to `frame`.
    pub fn point_jacobian(
        &self,
        q: &DVector<f64>,
        frame: usize,
        local: &Vector3<f64>,
    ) -> Result<DMatrix<f64>, KinematicsError> {
        self.check_q(q)?;
        self.check_frame(frame)?;
        let poses = self.frames_unchecked(q);
        let p = poses[frame].transform_point(local);
        Ok(self.jacobian_from_poses(&poses, frame, &p, false))
    }

    /// Jacobian of world point `p` moving with `frame`, reusing precomputed poses.
    pub(crate) fn jacobian_from_poses(
        &self,
        poses: &[Pose],
        frame: usize,
        p: &Vector3<f64>,
        angular: bool,
    ) -> DMatrix<f64> {
        let rows = if angular { 6 } else { 3 };
        let mut jac = DMatrix::zeros(rows, self.dof);
        // Joint i moves frames i+1.. ; only joints i < frame affect `frame`.
        for (i, (joint, coord)) in self.joints.iter().zip(&self.coordinate).enumerate().take(frame) {
            let Some(col) = *coord else { continue };
            let pose = &poses[i + 1];
            let z = pose.rotation * joint.axis;
            match joint.kind {
                JointKind::Revolute => {
                    let lin = z.cross(&(p - pose.translation));
                    jac.fixed_view_mut::<3, 1>(0, col).copy_from(&lin);
                    if angular {
                        jac.fixed_view_mut::<3, 1>(3, col).copy_from(&z);
                    }
                }
                JointKind::Prismatic => {
                    jac.fixed_view_mut::<3, 1>(0, col).copy_from(&z);
                }
                JointKind::Fixed => {}
            }
        }
        jac
    }

    /// Poses plus a point Jacobian for each frame origin, shared by the task builders.
    pub(crate) fn origin_jacobians(&self, poses: &[Pose]) -> Vec<DMatrix<f64>> {
        (0..self.frame_count()).map(|f| self.jacobian_from_poses(poses, f, &poses[f].translation, false)).collect()
    }
}

fn rpy_of(r: &nalgebra::Matrix3<f64>) -> (f64, f64, f64) {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    if pitch.cos().abs() < 1e-12 {
        (0.0, pitch, (-r[(0, 1)]).atan2(r[(1, 1)]))
    } else {
        (r[(2, 1)].atan2(r[(2, 2)]), pitch, r[(1, 0)].atan2(r[(0, 0)]))
    }
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn bundled() -> KinematicChain {
        KinematicChain::from_json(crate::BUNDLED_CHAIN).unwrap()
    }

    /// Map unit-interval samples into the joint ranges, clipped to one turn.
    fn within_limits(chain: &KinematicChain, u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            chain.dof(),
            chain.limits().iter().zip(u).map(|(l, s)| {
                let (lo, hi) = (l.lower.max(-PI), l.upper.min(PI));
                lo + s * (hi - lo)
            }),
        )
    }

    fn unit_samples() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0..1.0f64, 10)
    }

    fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax() / b.amax().max(1e-12)
    }

    fn numeric_point_jacobian(
        chain: &KinematicChain,
        q: &DVector<f64>,
        frame: usize,
        local: &Vector3<f64>,
    ) -> DMatrix<f64> {
        let h = 1e-6;
        let mut jac = DMatrix::zeros(3, chain.dof());
        for j in 0..chain.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[j] += h;
            qm[j] -= h;
            let p = chain.forward_kinematics(&qp).unwrap()[frame].transform_point(local);
            let m = chain.forward_kinematics(&qm).unwrap()[frame].transform_point(local);
            jac.set_column(j, &((p - m) / (2.0 * h)));
        }
        jac
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn fk_composes_at_any_junction(u in unit_samples(), split in 1usize..12) {
            let chain = bundled();
            let q = within_limits(&chain, &u);
            let split = split.min(chain.joints().len() - 1);
            let (head, tail) = chain.joints().split_at(split);
            let a = KinematicChain::new(head.to_vec(), split, None, vec![]).unwrap();
            let b = KinematicChain::new(tail.to_vec(), tail.len(), None, vec![]).unwrap();
            let qa = q.rows(0, a.dof()).into_owned();
            let qb = q.rows(a.dof(), b.dof()).into_owned();
            let full = chain.forward_kinematics(&q).unwrap();
            let junction = a.forward_kinematics(&qa).unwrap()[split];
            for (j, pose) in b.forward_kinematics(&qb).unwrap().iter().enumerate() {
                let composed = junction * *pose;
                prop_assert!(composed.distance(&full[split + j]) < 1e-12);
            }
        }

        #[test]
        fn jacobians_match_central_differences(
            u in unit_samples(),
            frame in 1usize..12,
            local in prop::array::uniform3(-0.1..0.1f64),
        ) {
            let chain = bundled();
            let q = within_limits(&chain, &u);
            let frame = frame.min(chain.frame_count() - 1);
            let geometric = chain.geometric_jacobian(&q, frame).unwrap();
            let numeric = crate::check::fd_jacobian(&chain, &q, frame, 1e-6).unwrap();
            prop_assert!(relative_error(&geometric, &numeric) < 1e-5);
            let local = Vector3::from(local);
            let point = chain.point_jacobian(&q, frame, &local).unwrap();
            prop_assert!(relative_error(&point, &numeric_point_jacobian(&chain, &q, frame, &local)) < 1e-5);
        }
    }
}
