use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use super::ScenarioError;
use crate::geometry::Segment;
use crate::kinematics::se3::log_so3;
use crate::kinematics::{KinematicChain, Pose};
use crate::tasks::GainConfig;

pub const DEFAULT_DT: f64 = 0.01;

// ---------------------------------------------------------------------------
// File schema

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginSpec {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl OriginSpec {
    pub fn pose(&self) -> Pose {
        Pose::from_xyz_rpy(self.xyz, self.rpy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrocarSpec {
    Point([f64; 3]),
    /// Point on the tool axis at `q0`, as a fraction from `a` to `b`.
    OnShaft {
        shaft_fraction: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// Hold `pose`, or the initial end-effector pose when omitted.
    Fixed {
        #[serde(default)]
        pose: Option<OriginSpec>,
    },
    /// Circle traversed at constant speed with the initial orientation held.
    /// Without `center`, the circle is placed so that it starts at the initial
    /// end-effector position.
    Circle {
        #[serde(default)]
        center: Option<[f64; 3]>,
        normal: [f64; 3],
        radius: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainEntry {
    /// Chain file, relative to the scenario file.
    pub file: PathBuf,
    #[serde(default)]
    pub base: OriginSpec,
    pub q0: Vec<f64>,
    pub trocar: TrocarSpec,
    pub trajectory: TrajectorySpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionSpec {
    #[default]
    Static,
    /// Piecewise-linear path, held at the ends.
    Waypoints { times: Vec<f64>, positions: Vec<[f64; 3]> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleSpec {
    Sphere {
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        motion: MotionSpec,
    },
    /// A capsule of another chain in the scenario.
    Capsule { chain: usize, capsule: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Limits,
    Rcm,
    Tracking,
    Collision,
    Manipulability,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackLayout {
    /// Priority levels, highest first.
    pub levels: Vec<Vec<TaskKind>>,
    pub rcm_weight: f64,
    pub manipulability_weight: f64,
}

impl Default for StackLayout {
    fn default() -> Self {
        use TaskKind::*;
        Self {
            levels: vec![vec![Limits], vec![Rcm], vec![Tracking, Collision], vec![Manipulability]],
            rcm_weight: 1.0,
            manipulability_weight: 0.05,
        }
    }
}

impl StackLayout {
    pub fn contains(&self, kind: TaskKind) -> bool {
        self.levels.iter().flatten().any(|&k| k == kind)
    }

    pub fn without(&self, kind: TaskKind) -> Self {
        let levels = self
            .levels
            .iter()
            .map(|l| l.iter().copied().filter(|&k| k != kind).collect::<Vec<_>>())
            .filter(|l| !l.is_empty())
            .collect();
        Self { levels, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub chains: Vec<ChainEntry>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub gains: GainConfig,
    #[serde(default)]
    pub stack: StackLayout,
    pub duration: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    /// Write measured solve times into the per-step CSV (makes it run-dependent).
    #[serde(default)]
    pub record_timing: bool,
}

// ---------------------------------------------------------------------------
// Resolved configuration

#[derive(Clone, Debug, PartialEq)]
pub enum Trajectory {
    Fixed(Pose),
    Circle {
        center: Vector3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
        radius: f64,
        period: f64,
        phase: f64,
        rotation: Matrix3<f64>,
    },
}

impl Trajectory {
    pub fn pose_at(&self, t: f64) -> Pose {
        match self {
            Trajectory::Fixed(p) => *p,
            Trajectory::Circle { center, u, v, radius, period, phase, rotation } => {
                let angle = TAU * t / period + phase;
                Pose::new(*rotation, center + (u * angle.cos() + v * angle.sin()) * *radius)
            }
        }
    }

    /// Average spatial velocity `(p_dot, omega)` over `[t, t + dt]`.
    pub fn rate(&self, t: f64, dt: f64) -> DVector<f64> {
        let a = self.pose_at(t);
        let b = self.pose_at(t + dt);
        let lin = (b.translation - a.translation) / dt;
        let ang = log_so3(&(b.rotation * a.rotation.transpose())) / dt;
        DVector::from_vec(vec![lin.x, lin.y, lin.z, ang.x, ang.y, ang.z])
    }
}

/// In-plane basis for a circle with the given unit normal.
fn circle_basis(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let seed = if normal.x.abs() > 0.9 { Vector3::y() } else { Vector3::x() };
    let u = (seed - normal * seed.dot(normal)).normalize();
    (u, normal.cross(&u))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainSetup {
    pub chain: KinematicChain,
    pub q0: DVector<f64>,
    pub trocar: Vector3<f64>,
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Motion {
    Static,
    Waypoints { times: Vec<f64>, positions: Vec<Vector3<f64>> },
}

impl Motion {
    pub fn position(&self, start: &Vector3<f64>, t: f64) -> Vector3<f64> {
        match self {
            Motion::Static => *start,
            Motion::Waypoints { times, positions } => {
                if t <= times[0] {
                    return positions[0];
                }
                let last = times.len() - 1;
                if t >= times[last] {
                    return positions[last];
                }
                let i = times.partition_point(|&ti| ti <= t) - 1;
                let s = (t - times[i]) / (times[i + 1] - times[i]);
                positions[i] + (positions[i + 1] - positions[i]) * s
            }
        }
    }

    /// Largest speed along the path (m/s).
    pub fn max_speed(&self) -> f64 {
        match self {
            Motion::Static => 0.0,
            Motion::Waypoints { times, positions } => times
                .windows(2)
                .zip(positions.windows(2))
                .map(|(t, p)| (p[1] - p[0]).norm() / (t[1] - t[0]))
                .fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Obstacle {
    Sphere { center: Vector3<f64>, radius: f64, motion: Motion },
    Capsule { chain: usize, capsule: usize },
}

/// An obstacle resolved at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WorldObstacle {
    Sphere { center: Vector3<f64>, radius: f64 },
    Capsule { owner: usize, segment: Segment, radius: f64 },
}

impl WorldObstacle {
    /// Whether chain `chain` should avoid this obstacle.
    pub fn applies_to(&self, chain: usize) -> bool {
        match self {
            WorldObstacle::Sphere { .. } => true,
            WorldObstacle::Capsule { owner, .. } => *owner != chain,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub chains: Vec<ChainSetup>,
    pub obstacles: Vec<Obstacle>,
    pub gains: GainConfig,
    pub layout: StackLayout,
    pub duration: f64,
    pub dt: f64,
    pub record_timing: bool,
}

impl ScenarioConfig {
    /// Number of control steps: `floor(duration / dt)`.
    pub fn steps(&self) -> usize {
        ((self.duration / self.dt) * (1.0 + 1e-12)).floor() as usize
    }

    /// Override the number of steps by adjusting the duration.
    pub fn set_steps(&mut self, steps: usize) {
        self.duration = steps as f64 * self.dt;
    }

    pub fn set_dt(&mut self, dt: f64) {
        self.dt = dt;
        self.gains.dt = dt;
    }

    pub fn disable(&mut self, kind: TaskKind) {
        self.layout = self.layout.without(kind);
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scenario(&text, base_dir)
}

/// Parse scenario JSON; chain file paths resolve against `base_dir`.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de)
        .map_err(|e| ScenarioError::Parse(format!("{}: {}", e.path(), e.inner())))?;
    resolve(file, |p| {
        let full = base_dir.join(p);
        KinematicChain::from_file(&full)
    })
}

/// Validate a parsed file and resolve chains through `load_chain`.
pub fn resolve(
    file: ScenarioFile,
    mut load_chain: impl FnMut(&Path) -> Result<KinematicChain, crate::kinematics::KinematicsError>,
) -> Result<ScenarioConfig, ScenarioError> {
    let invalid = |field: String, msg: &str| ScenarioError::Validation(format!("{field}: {msg}"));

    let dt = file.dt.unwrap_or(DEFAULT_DT);
    if !(dt > 0.0) {
        return Err(invalid("dt".into(), "must be > 0"));
    }
    if !(file.duration >= 0.0) {
        return Err(invalid("duration".into(), "must be >= 0"));
    }
    let mut gains = file.gains;
    gains.dt = dt;
    gains.validate().map_err(|m| invalid("gains".into(), &m))?;
    if file.chains.is_empty() || file.chains.len() > 2 {
        return Err(invalid("chains".into(), "expected one or two chains"));
    }
    if file.stack.levels.is_empty() || file.stack.levels.iter().any(Vec::is_empty) {
        return Err(invalid("stack.levels".into(), "levels must be non-empty"));
    }
    if !(file.stack.rcm_weight >= 0.0) || !(file.stack.manipulability_weight >= 0.0) {
        return Err(invalid("stack".into(), "weights must be >= 0"));
    }

    let mut chains = Vec::with_capacity(file.chains.len());
    for (i, entry) in file.chains.iter().enumerate() {
        let field = |name: &str| format!("chains[{i}].{name}");
        let chain =
            load_chain(&entry.file).map_err(|e| invalid(field("file"), &e.to_string()))?.with_base(entry.base.pose());
        if entry.q0.len() != chain.dof() {
            return Err(invalid(field("q0"), &format!("expected {} values, got {}", chain.dof(), entry.q0.len())));
        }
        let q0 = DVector::from_column_slice(&entry.q0);
        for (j, lim) in chain.limits().iter().enumerate() {
            if !(q0[j] >= lim.lower && q0[j] <= lim.upper) {
                return Err(invalid(field(&format!("q0[{j}]")), "outside joint limits"));
            }
        }
        let poses = chain.forward_kinematics(&q0).map_err(|e| invalid(field("q0"), &e.to_string()))?;
        let ee = poses[chain.end_effector];

        let trocar = match &entry.trocar {
            TrocarSpec::Point(p) => Vector3::from(*p),
            TrocarSpec::OnShaft { shaft_fraction } => {
                let axis = chain.tool_axis.ok_or_else(|| invalid(field("trocar"), "chain has no tool axis"))?;
                let pose = &poses[axis.frame];
                pose.transform_point(&(axis.a + (axis.b - axis.a) * *shaft_fraction))
            }
        };

        let trajectory = match &entry.trajectory {
            TrajectorySpec::Fixed { pose } => Trajectory::Fixed(pose.as_ref().map_or(ee, OriginSpec::pose)),
            TrajectorySpec::Circle { center, normal, radius, period, phase } => {
                if !(*radius > 0.0) {
                    return Err(invalid(field("trajectory.radius"), "must be > 0"));
                }
                if !(*period > 0.0) {
                    return Err(invalid(field("trajectory.period"), "must be > 0"));
                }
                let n = Vector3::from(*normal);
                if !(n.norm() > 1e-9) {
                    return Err(invalid(field("trajectory.normal"), "must be nonzero"));
                }
                let n = n.normalize();
                let (u, v) = circle_basis(&n);
                let center = match center {
                    Some(c) => Vector3::from(*c),
                    None => ee.translation - (u * phase.cos() + v * phase.sin()) * *radius,
                };
                Trajectory::Circle {
                    center,
                    u,
                    v,
                    radius: *radius,
                    period: *period,
                    phase: *phase,
                    rotation: ee.rotation,
                }
            }
        };
        chains.push(ChainSetup { chain, q0, trocar, trajectory });
    }

    let mut obstacles = Vec::with_capacity(file.obstacles.len());
    for (k, o) in file.obstacles.iter().enumerate() {
        let field = |name: &str| format!("obstacles[{k}].{name}");
        obstacles.push(match o {
            ObstacleSpec::Sphere { center, radius, motion } => {
                if !(*radius >= 0.0) {
                    return Err(invalid(field("radius"), "must be >= 0"));
                }
                let motion = match motion {
                    MotionSpec::Static => Motion::Static,
                    MotionSpec::Waypoints { times, positions } => {
                        if times.is_empty() || times.len() != positions.len() {
                            return Err(invalid(
                                field("motion"),
                                "times and positions must be non-empty and equal length",
                            ));
                        }
                        if times.windows(2).any(|w| !(w[1] > w[0])) {
                            return Err(invalid(field("motion.times"), "must be strictly increasing"));
                        }
                        Motion::Waypoints {
                            times: times.clone(),
                            positions: positions.iter().map(|p| Vector3::from(*p)).collect(),
                        }
                    }
                };
                Obstacle::Sphere { center: Vector3::from(*center), radius: *radius, motion }
            }
            ObstacleSpec::Capsule { chain, capsule } => {
                let owner = chains.get(*chain).ok_or_else(|| invalid(field("chain"), "no such chain"))?;
                if *capsule >= owner.chain.capsules.len() {
                    return Err(invalid(field("capsule"), "no such capsule"));
                }
                Obstacle::Capsule { chain: *chain, capsule: *capsule }
            }
        });
    }

    Ok(ScenarioConfig {
        name: file.name,
        chains,
        obstacles,
        gains,
        layout: file.stack,
        duration: file.duration,
        dt,
        record_timing: file.record_timing,
    })
}
