//! Scenario configuration, closed-loop simulation and per-run metrics.

mod config;
mod metrics;
mod sim;

pub use config::{
    load_scenario, parse_scenario, resolve, ChainEntry, ChainSetup, Motion, MotionSpec, Obstacle, ObstacleSpec,
    OriginSpec, ScenarioConfig, ScenarioFile, StackLayout, TaskKind, Trajectory, TrajectorySpec, TrocarSpec,
    WorldObstacle, DEFAULT_DT,
};
pub use metrics::{compute_metrics, read_series_csv, write_series_csv, MetricsSummary, StepRecord};
pub use sim::{run_scenario, step_controller, ChainReport, RunReport, Simulation, StepOutput};

use crate::hqp::HqpError;
use crate::kinematics::KinematicsError;
use crate::tasks::TaskError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error at {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("chain {chain}, t = {t}: {source}")]
    Task { chain: usize, t: f64, source: TaskError },
    #[error("chain {chain}, t = {t}: solver failed: {source}")]
    Solver { chain: usize, t: f64, source: HqpError },
    #[error("empty series")]
    EmptySeries,
}
