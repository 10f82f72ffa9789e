//! File formats for single runs.
//!
//! Trajectory CSV columns, in order: `step, t, q0..q{n-1}, qd0..qd{n-1},
//! min_clearance, target_error, accel_norm, metric_condition`. The metric
//! condition of the final row is empty because no acceleration is computed
//! there.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{limit_violations, RunOutcome, Verdict};
use super::scenario::{Built, Scenario};
use super::Strategy;
use crate::error::Result;

pub fn trajectory_csv(out: &RunOutcome) -> String {
    let traj = &out.trajectory;
    let n = traj.states.first().map(|s| s.q.len()).unwrap_or(0);
    let mut csv = String::from("step,t");
    for i in 0..n {
        write!(csv, ",q{i}").unwrap();
    }
    for i in 0..n {
        write!(csv, ",qd{i}").unwrap();
    }
    csv.push_str(",min_clearance,target_error,accel_norm,metric_condition\n");
    for (s, d) in traj.states.iter().zip(&traj.diagnostics) {
        write!(csv, "{},{:.6}", s.step, s.t).unwrap();
        for v in s.q.iter().chain(s.qdot.iter()) {
            write!(csv, ",{v:.12e}").unwrap();
        }
        write!(csv, ",{:.9e},{:.9e},{:.9e},", d.min_clearance, d.target_error, d.accel_norm).unwrap();
        if d.metric_condition.is_finite() {
            write!(csv, "{:.6e}", d.metric_condition).unwrap();
        }
        csv.push('\n');
    }
    csv
}

/// JSON summary written next to a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub strategy: String,
    pub verdict: Verdict,
    pub message: String,
    pub seed: u64,
    pub dt: f64,
    pub steps: usize,
    pub final_time: f64,
    pub final_error: f64,
    pub min_clearance: f64,
    pub path_length: f64,
    pub limit_violations: usize,
    pub final_q: Vec<f64>,
}

impl RunSummary {
    pub fn new(scenario: &Scenario, strategy: Strategy, built: &Built, out: &RunOutcome) -> Result<Self> {
        let traj = &out.trajectory;
        let last = traj.states.last();
        Ok(Self {
            scenario: scenario.name.clone(),
            strategy: strategy.to_string(),
            verdict: out.verdict,
            message: out.message.clone(),
            seed: scenario.seed,
            dt: traj.dt,
            steps: last.map(|s| s.step).unwrap_or(0),
            final_time: last.map(|s| s.t).unwrap_or(0.0),
            final_error: traj.final_error(),
            min_clearance: traj.min_clearance(),
            path_length: traj.path_length(&built.model)?,
            limit_violations: limit_violations(&built.limits, traj) + usize::from(out.limit_violation),
            final_q: last.map(|s| s.q.as_slice().to_vec()).unwrap_or_default(),
        })
    }

    pub fn to_json(&self) -> String {
        // non-finite numbers become null
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}
