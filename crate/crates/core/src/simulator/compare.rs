//! Batch comparison of combination strategies over a set of scenarios.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::{limit_violations, Strategy, Verdict};
use crate::error::{Error, Result};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "RMP_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub strategy: String,
    pub verdict: Verdict,
    pub steps: usize,
    pub final_error: f64,
    pub path_length: f64,
    pub min_clearance: f64,
    pub limit_violations: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub runs: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub divergences: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub mean_path_length: f64,
    pub mean_min_clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<StrategySummary>,
}

/// The three strategies plus a sweep of C-space weights for the
/// scaled-identity baseline.
pub fn default_strategies() -> Vec<Strategy> {
    vec![
        Strategy::MetricWeighted,
        Strategy::ScaledIdentity { cspace_weight: 0.1 },
        Strategy::ScaledIdentity { cspace_weight: 1.0 },
        Strategy::ScaledIdentity { cspace_weight: 10.0 },
        Strategy::Superposition,
    ]
}

pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

fn run_one(s: &Scenario, strategy: Strategy) -> Result<RunRecord> {
    let (built, out) = s.run_with(strategy)?;
    let traj = &out.trajectory;
    Ok(RunRecord {
        scenario: s.name.clone(),
        strategy: strategy.to_string(),
        verdict: out.verdict,
        steps: traj.states.last().map(|s| s.step).unwrap_or(0),
        final_error: traj.final_error(),
        path_length: traj.path_length(&built.model)?,
        min_clearance: traj.min_clearance(),
        limit_violations: limit_violations(&built.limits, traj) + usize::from(out.limit_violation),
        message: out.message.clone(),
    })
}

fn summarize(records: &[RunRecord], strategies: &[Strategy]) -> Vec<StrategySummary> {
    strategies
        .iter()
        .map(|st| {
            let label = st.to_string();
            let rs: Vec<&RunRecord> = records.iter().filter(|r| r.strategy == label).collect();
            let count = |v: Verdict| rs.iter().filter(|r| r.verdict == v).count();
            let runs = rs.len();
            let mean = |f: &dyn Fn(&RunRecord) -> f64| {
                if runs == 0 {
                    f64::NAN
                } else {
                    rs.iter().map(|r| f(r)).sum::<f64>() / runs as f64
                }
            };
            let successes = count(Verdict::Success);
            let collisions = count(Verdict::Collision);
            StrategySummary {
                strategy: label,
                runs,
                successes,
                collisions,
                timeouts: count(Verdict::Timeout),
                divergences: count(Verdict::Divergence),
                success_rate: successes as f64 / runs.max(1) as f64,
                collision_rate: collisions as f64 / runs.max(1) as f64,
                mean_path_length: mean(&|r| r.path_length),
                mean_min_clearance: mean(&|r| r.min_clearance),
            }
        })
        .collect()
}

/// Runs every (scenario, strategy) pair. Scenarios are validated up front;
/// runs execute in parallel and are reported in scenario-major order.
pub fn batch_compare(scenarios: &[Scenario], strategies: &[Strategy], threads: Option<usize>) -> Result<BatchReport> {
    if scenarios.is_empty() {
        return Err(Error::Config("batch is empty".into()));
    }
    if strategies.is_empty() {
        return Err(Error::Config("no strategies selected".into()));
    }
    for s in scenarios {
        s.build().map_err(|e| Error::Config(format!("scenario '{}': {e}", s.name)))?;
    }
    let jobs: Vec<(usize, Strategy)> = (0..scenarios.len())
        .flat_map(|i| strategies.iter().map(move |&st| (i, st)))
        .collect();
    let work = || -> Result<Vec<RunRecord>> {
        jobs.par_iter().map(|&(i, st)| run_one(&scenarios[i], st)).collect()
    };
    let records = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let summaries = summarize(&records, strategies);
    Ok(BatchReport { records, summaries })
}

impl BatchReport {
    pub fn summary(&self, strategy: &str) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.strategy == strategy)
    }

    pub fn records_csv(&self) -> String {
        let mut out = String::from("scenario,strategy,verdict,steps,final_error,path_length,min_clearance,limit_violations,message\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{:.6e},{:.6},{:.6},{},\"{}\"",
                r.scenario,
                r.strategy,
                r.verdict,
                r.steps,
                r.final_error,
                r.path_length,
                r.min_clearance,
                r.limit_violations,
                r.message.replace('"', "'")
            )
            .unwrap();
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "strategy,runs,successes,collisions,timeouts,divergences,success_rate,collision_rate,mean_path_length,mean_min_clearance\n",
        );
        for s in &self.summaries {
            writeln!(
                out,
                "{},{},{},{},{},{},{:.4},{:.4},{:.6},{:.6}",
                s.strategy,
                s.runs,
                s.successes,
                s.collisions,
                s.timeouts,
                s.divergences,
                s.success_rate,
                s.collision_rate,
                s.mean_path_length,
                s.mean_min_clearance
            )
            .unwrap();
        }
        out
    }

    pub fn human_summary(&self) -> String {
        let mut out = String::new();
        let scenes = self.records.iter().map(|r| &r.scenario).collect::<std::collections::BTreeSet<_>>().len();
        writeln!(out, "{} scenes, {} runs", scenes, self.records.len()).unwrap();
        writeln!(
            out,
            "{:<22} {:>8} {:>10} {:>8} {:>8} {:>10} {:>10}",
            "strategy", "success", "collision", "timeout", "diverge", "path", "clearance"
        )
        .unwrap();
        for s in &self.summaries {
            writeln!(
                out,
                "{:<22} {:>7.0}% {:>9.0}% {:>8} {:>8} {:>10.3} {:>10.3}",
                s.strategy,
                100.0 * s.success_rate,
                100.0 * s.collision_rate,
                s.timeouts,
                s.divergences,
                s.mean_path_length,
                s.mean_min_clearance
            )
            .unwrap();
        }
        out
    }
}
