use nalgebra::DVector;
use serde::Serialize;
use std::path::Path;
use std::time::Instant;

use super::config::{ChainSetup, Obstacle, ScenarioConfig, StackLayout, TaskKind, WorldObstacle};
use super::metrics::{compute_metrics, write_series_csv, MetricsSummary, StepRecord};
use super::ScenarioError;
use crate::geometry::{capsule_clearance, closest_point_on_segment};
use crate::hqp::{solve_hqp, HqpSettings, PriorityLevel, TaskStack, WarmStart};
use crate::qp::QpSettings;
use crate::tasks::{
    self, collision_task_at, collision_task_segment_at, joint_limit_constraint, manipulability, rcm_task_at,
    tracking_task_at, transition_gain, ChainState, GainConfig, TaskError, TaskSpec,
};

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub qdot: DVector<f64>,
    pub record: StepRecord,
    pub warm_start: WarmStart,
}

fn hqp_settings(gains: &GainConfig) -> HqpSettings {
    HqpSettings { k_d: gains.k_d, k_w: gains.k_w, qp: QpSettings::default(), ..Default::default() }
}

struct Pair {
    clearance: f64,
    task: Option<TaskSpec>,
}

fn collision_pairs(
    state: &ChainState,
    index: usize,
    obstacles: &[WorldObstacle],
    gains: &GainConfig,
    build: bool,
) -> Result<Vec<Pair>, TaskError> {
    let mut pairs = Vec::new();
    for link in 0..state.chain.capsules.len() {
        let (seg, radius) = state.link_segment(link)?;
        for obstacle in obstacles.iter().filter(|o| o.applies_to(index)) {
            let clearance = match obstacle {
                WorldObstacle::Sphere { center, radius: r } => {
                    (closest_point_on_segment(&seg, center)?.point - center).norm() - radius - r
                }
                WorldObstacle::Capsule { segment, radius: r, .. } => capsule_clearance(&seg, radius, segment, *r)?,
            };
            let task = if build && clearance < gains.activation_distance() {
                let beta = transition_gain(clearance, gains);
                let task = match obstacle {
                    WorldObstacle::Sphere { center, .. } => collision_task_at(state, center, link, gains)?,
                    WorldObstacle::Capsule { segment, .. } => collision_task_segment_at(state, segment, link, gains)?,
                };
                Some(task.with_weight(beta))
            } else {
                None
            };
            pairs.push(Pair { clearance, task });
        }
    }
    Ok(pairs)
}

/// One control step for chain `index` at configuration `q` and time `t`.
#[allow(clippy::too_many_arguments)]
pub fn step_controller(
    setup: &ChainSetup,
    index: usize,
    q: &DVector<f64>,
    t: f64,
    obstacles: &[WorldObstacle],
    gains: &GainConfig,
    layout: &StackLayout,
    warm: Option<&WarmStart>,
) -> Result<StepOutput, ScenarioError> {
    let task_err = |source| ScenarioError::Task { chain: index, t, source };
    let chain = &setup.chain;
    let state = ChainState::new(chain, q).map_err(|e| task_err(e.into()))?;
    let desired = setup.trajectory.pose_at(t);
    let ee = *state.end_effector();
    let ee_jac = chain.jacobian_from_poses(&state.poses, chain.end_effector, &ee.translation, true);
    let rcm_err = state.rcm_deviation(&setup.trocar).map_err(task_err)?.norm();

    let pairs =
        collision_pairs(&state, index, obstacles, gains, layout.contains(TaskKind::Collision)).map_err(task_err)?;
    let min_clearance = pairs.iter().map(|p| p.clearance).fold(f64::INFINITY, f64::min);
    let beta_a = pairs.iter().filter_map(|p| p.task.as_ref()).map(|t| t.weight).fold(0.0, f64::max);

    let mut stack = TaskStack::new(chain.dof());
    for (i, kinds) in layout.levels.iter().enumerate() {
        let mut level = PriorityLevel::new(i + 1);
        for kind in kinds {
            match kind {
                TaskKind::Limits => {
                    level = level.with_constraint(joint_limit_constraint(chain, q, gains).map_err(task_err)?);
                }
                TaskKind::Rcm => {
                    let task = rcm_task_at(&state, &setup.trocar, gains).map_err(task_err)?;
                    level = level.with_task(task.with_weight(layout.rcm_weight));
                }
                TaskKind::Tracking => {
                    let task = tracking_task_at(&state, &desired, gains).map_err(task_err)?;
                    let ff = setup.trajectory.rate(t, gains.dt);
                    level = level.with_task(task.with_feedforward(ff).with_weight(1.0 - beta_a));
                }
                TaskKind::Collision => {
                    for task in pairs.iter().filter_map(|p| p.task.clone()) {
                        level = level.with_task(task);
                    }
                }
                TaskKind::Manipulability => {
                    let task = tasks::manipulability_task(chain, q, gains).map_err(task_err)?;
                    level = level.with_task(task.with_weight(layout.manipulability_weight));
                }
            }
        }
        if !level.tasks.is_empty() || !level.constraints.is_empty() {
            stack.push(level);
        }
    }

    let solution = solve_hqp(&stack, &hqp_settings(gains), warm).map_err(|source| ScenarioError::Solver {
        chain: index,
        t,
        source,
    })?;
    let record = StepRecord {
        t,
        q: q.clone(),
        ee_err_m: (desired.translation - ee.translation).norm(),
        rcm_err_m: rcm_err,
        mu: manipulability(&ee_jac),
        min_clearance_m: min_clearance,
        beta_a,
        solve_ms: 0.0,
    };
    Ok(StepOutput { qdot: solution.qdot, record, warm_start: solution.warm_start })
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainReport {
    pub dof: usize,
    #[serde(skip)]
    pub series: Vec<StepRecord>,
    pub summary: MetricsSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub name: String,
    pub dt: f64,
    pub chains: Vec<ChainReport>,
    /// Set when the run halted early.
    pub failure: Option<String>,
    pub safety_violations: Vec<String>,
}

impl RunReport {
    /// Write `chain{i}_steps.csv` and `chain{i}_summary.json` for every chain.
    pub fn write(&self, dir: &Path) -> Result<(), ScenarioError> {
        let io = |e: std::io::Error| ScenarioError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        for (i, c) in self.chains.iter().enumerate() {
            std::fs::write(dir.join(format!("chain{i}_steps.csv")), write_series_csv(&c.series, c.dof)).map_err(io)?;
            let json = serde_json::to_string_pretty(&c.summary).expect("summary serializes");
            std::fs::write(dir.join(format!("chain{i}_summary.json")), json + "\n").map_err(io)?;
        }
        Ok(())
    }
}

/// Closed-loop simulation of every chain in a scenario. Chains are stepped
/// synchronously: each sees the others at their configuration from the start
/// of the step.
#[derive(Clone, Debug)]
pub struct Simulation {
    config: ScenarioConfig,
    q: Vec<DVector<f64>>,
    warm: Vec<Option<WarmStart>>,
    step: usize,
    series: Vec<Vec<StepRecord>>,
    wall_ms: Vec<f64>,
    failure: Option<String>,
    safety: Vec<String>,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Self {
        let n = config.chains.len();
        let q = config.chains.iter().map(|c| c.q0.clone()).collect();
        Self {
            config,
            q,
            warm: vec![None; n],
            step: 0,
            series: vec![vec![]; n],
            wall_ms: vec![0.0; n],
            failure: None,
            safety: vec![],
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.config.dt
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.failure.is_some() || self.step >= self.config.steps()
    }

    pub fn q(&self, chain: usize) -> &DVector<f64> {
        &self.q[chain]
    }

    pub fn series(&self, chain: usize) -> &[StepRecord] {
        &self.series[chain]
    }

    pub fn failure(&self) -> Option<&str> {
        self.failure.as_deref()
    }

    /// Penetrations and joint-limit excursions seen so far.
    pub fn safety_violations(&self) -> &[String] {
        &self.safety
    }

    /// Obstacles at time `t`, with tool capsules taken at the current configuration.
    pub fn world_obstacles(&self, t: f64) -> Result<Vec<WorldObstacle>, ScenarioError> {
        let mut world = Vec::with_capacity(self.config.obstacles.len());
        for o in &self.config.obstacles {
            world.push(match o {
                Obstacle::Sphere { center, radius, motion } => {
                    WorldObstacle::Sphere { center: motion.position(center, t), radius: *radius }
                }
                Obstacle::Capsule { chain, capsule } => {
                    let setup = &self.config.chains[*chain];
                    let state = ChainState::new(&setup.chain, &self.q[*chain])?;
                    let (segment, radius) = state.link_segment(*capsule).map_err(|source| ScenarioError::Task {
                        chain: *chain,
                        t,
                        source,
                    })?;
                    WorldObstacle::Capsule { owner: *chain, segment, radius }
                }
            });
        }
        Ok(world)
    }

    /// Advance every chain by one control period.
    pub fn step(&mut self) -> Result<(), ScenarioError> {
        let t = self.time();
        let world = self.world_obstacles(t)?;
        let cfg = &self.config;
        let mut outputs = Vec::with_capacity(cfg.chains.len());
        for (i, setup) in cfg.chains.iter().enumerate() {
            let start = Instant::now();
            let out = step_controller(setup, i, &self.q[i], t, &world, &cfg.gains, &cfg.layout, self.warm[i].as_ref())?;
            outputs.push((out, start.elapsed().as_secs_f64() * 1e3));
        }
        for (i, (mut out, ms)) in outputs.into_iter().enumerate() {
            let chain = &cfg.chains[i].chain;
            if out.record.min_clearance_m < 0.0 {
                self.safety.push(format!("chain {i}, t = {t}: penetration {} m", -out.record.min_clearance_m));
            }
            let mut q = &self.q[i] + &out.qdot * cfg.dt;
            for (j, lim) in chain.limits().iter().enumerate() {
                let tol = cfg.gains.limit_tolerance;
                if q[j] < lim.lower - tol || q[j] > lim.upper + tol {
                    self.safety.push(format!("chain {i}, t = {t}: joint {j} at {} outside limits", q[j]));
                }
                q[j] = q[j].clamp(lim.lower, lim.upper);
            }
            self.wall_ms[i] += ms;
            if cfg.record_timing {
                out.record.solve_ms = ms;
            }
            self.series[i].push(out.record);
            self.q[i] = q;
            self.warm[i] = Some(out.warm_start);
        }
        self.step += 1;
        Ok(())
    }

    /// Step until the configured duration is reached or a step fails.
    pub fn run(&mut self) {
        while !self.is_finished() {
            if let Err(e) = self.step() {
                log::error!("halting at step {}: {e}", self.step);
                self.failure = Some(e.to_string());
            }
        }
    }

    pub fn report(&self) -> RunReport {
        let chains = self
            .series
            .iter()
            .zip(&self.wall_ms)
            .zip(&self.config.chains)
            .map(|((series, wall), setup)| {
                let mut summary = compute_metrics(series).unwrap_or_default();
                summary.wall_ms_per_step = if series.is_empty() { 0.0 } else { wall / series.len() as f64 };
                ChainReport { dof: setup.chain.dof(), series: series.clone(), summary }
            })
            .collect();
        RunReport {
            name: self.config.name.clone(),
            dt: self.config.dt,
            chains,
            failure: self.failure.clone(),
            safety_violations: self.safety.clone(),
        }
    }
}

/// Run a scenario to completion (or to the first failing step).
pub fn run_scenario(config: &ScenarioConfig) -> RunReport {
    let mut sim = Simulation::new(config.clone());
    sim.run();
    sim.report()
}
