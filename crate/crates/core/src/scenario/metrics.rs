use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use super::ScenarioError;

/// One row of the per-step log. Quantities are evaluated at `t`, before the
/// step's velocity is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub ee_err_m: f64,
    pub rcm_err_m: f64,
    pub mu: f64,
    /// Smallest capsule clearance; infinite when there is nothing to avoid.
    pub min_clearance_m: f64,
    pub beta_a: f64,
    pub solve_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub steps: usize,
    pub avg_ee_err_m: f64,
    pub std_ee_err_m: f64,
    pub max_ee_err_m: f64,
    pub avg_rcm_err_m: f64,
    pub std_rcm_err_m: f64,
    pub max_rcm_err_m: f64,
    pub avg_mu: f64,
    pub std_mu: f64,
    pub min_mu: f64,
    /// `None` when the run had no obstacles.
    pub min_clearance_m: Option<f64>,
    pub max_beta_a: f64,
    pub wall_ms_per_step: f64,
    /// Fraction of initial steps excluded from the end-effector statistics.
    pub transient_fraction: f64,
}

pub const TRANSIENT_FRACTION: f64 = 0.05;

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn max(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, f64::max)
}

/// Summary statistics of a recorded series.
///
/// End-effector statistics skip the first 5 % of steps (the initial
/// convergence transient); all other statistics use every step. Standard
/// deviations are sample deviations. `wall_ms_per_step` is the mean of the
/// `solve_ms` column.
pub fn compute_metrics(series: &[StepRecord]) -> Result<MetricsSummary, ScenarioError> {
    if series.is_empty() {
        return Err(ScenarioError::EmptySeries);
    }
    let skip = ((series.len() as f64) * TRANSIENT_FRACTION).floor() as usize;
    let ee: Vec<f64> = series[skip..].iter().map(|r| r.ee_err_m).collect();
    let rcm: Vec<f64> = series.iter().map(|r| r.rcm_err_m).collect();
    let mu: Vec<f64> = series.iter().map(|r| r.mu).collect();
    let (avg_ee, std_ee) = mean_std(&ee);
    let (avg_rcm, std_rcm) = mean_std(&rcm);
    let (avg_mu, std_mu) = mean_std(&mu);
    let min_clearance = series.iter().map(|r| r.min_clearance_m).fold(f64::INFINITY, f64::min);
    let (wall, _) = mean_std(&series.iter().map(|r| r.solve_ms).collect::<Vec<_>>());
    Ok(MetricsSummary {
        steps: series.len(),
        avg_ee_err_m: avg_ee,
        std_ee_err_m: std_ee,
        max_ee_err_m: max(ee.iter().copied()),
        avg_rcm_err_m: avg_rcm,
        std_rcm_err_m: std_rcm,
        max_rcm_err_m: max(rcm.iter().copied()),
        avg_mu,
        std_mu,
        min_mu: mu.iter().copied().fold(f64::INFINITY, f64::min),
        min_clearance_m: min_clearance.is_finite().then_some(min_clearance),
        max_beta_a: max(series.iter().map(|r| r.beta_a)),
        wall_ms_per_step: wall,
        transient_fraction: TRANSIENT_FRACTION,
    })
}

pub fn csv_header(dof: usize) -> String {
    let mut h = String::from("t");
    for i in 0..dof {
        write!(h, ",q{i}").unwrap();
    }
    h.push_str(",ee_err_m,rcm_err_m,mu,min_clearance_m,beta_a,solve_ms");
    h
}

/// Per-step CSV. Values use shortest round-trip formatting, so parsing the
/// file back reproduces every number exactly.
pub fn write_series_csv(series: &[StepRecord], dof: usize) -> String {
    let mut out = csv_header(dof);
    out.push('\n');
    for r in series {
        write!(out, "{}", r.t).unwrap();
        for v in r.q.iter() {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{},{},{},{},{},{}", r.ee_err_m, r.rcm_err_m, r.mu, r.min_clearance_m, r.beta_a, r.solve_ms)
            .unwrap();
    }
    out
}

pub fn read_series_csv(text: &str) -> Result<Vec<StepRecord>, ScenarioError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(ScenarioError::EmptySeries)?;
    let cols = header.split(',').count();
    if cols < 7 {
        return Err(ScenarioError::Parse(format!("csv header: expected at least 7 columns, got {cols}")));
    }
    let dof = cols - 7;
    let mut series = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let values: Vec<f64> = line
            .split(',')
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| ScenarioError::Parse(format!("csv line {}: {e}", i + 2)))?;
        if values.len() != cols {
            return Err(ScenarioError::Parse(format!("csv line {}: expected {cols} values", i + 2)));
        }
        let tail = &values[1 + dof..];
        series.push(StepRecord {
            t: values[0],
            q: DVector::from_column_slice(&values[1..1 + dof]),
            ee_err_m: tail[0],
            rcm_err_m: tail[1],
            mu: tail[2],
            min_clearance_m: tail[3],
            beta_a: tail[4],
            solve_ms: tail[5],
        });
    }
    Ok(series)
}
