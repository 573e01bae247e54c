//! Serial-chain kinematics: chain model, forward kinematics, Jacobians and
//! the SE(3) maps used by the pose-tracking residual.

mod chain;
pub mod se3;

pub use chain::{Capsule, Joint, JointKind, JointLimits, KinematicChain, ToolAxis};
pub use se3::{exp6, log6, Pose, Twist};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("dimension mismatch: expected {expected} joint values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("frame {frame} out of range (chain has {count} frames)")]
    Frame { frame: usize, count: usize },
    #[error("joint vector has non-finite entries")]
    NonFinite,
}
