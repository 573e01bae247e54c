//! Hierarchical quadratic-programming inverse kinematics for redundant
//! manipulators that insert a tool through a fixed pivot.
//!
//! The controller stacks, in priority order, joint position/velocity limits,
//! a remote-center-of-motion task, pose tracking blended with collision
//! avoidance, and manipulability maximization. Each level is a dense QP solved
//! in the null space of the levels above it.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod cli;
pub mod geometry;
pub mod hqp;
pub mod kinematics;
pub mod qp;
pub mod scenario;
pub mod tasks;

pub use hqp::{solve_hqp, HqpSettings, PriorityLevel, TaskStack};
pub use kinematics::{KinematicChain, Pose, Twist};
pub use qp::{solve_qp, QpProblem, QpSettings, QpSolution};
pub use tasks::{ConstraintSpec, GainConfig, TaskSpec};

/// Bundled 7-DOF arm carrying a 3-DOF surgical tool.
pub const BUNDLED_CHAIN: &str = include_str!("../data/chains/arm7_tool3.json");
