//! Closed-loop integration of a policy tree, with collision and goal
//! monitoring, plus the baseline combination strategies used for comparison.

pub mod compare;
pub mod generator;
pub mod output;
pub mod scenario;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::algebra::{accumulate, pull, MapEval, UnresolvedRmp};
use crate::error::{Error, Result};
use crate::joint_limits::{apply_joint_limits, SigmoidLimitMap};
use crate::kinematics::ChainModel;
use crate::matops::{condition_number, max_eigenvalue, pinv, Matrix, Vector};
use crate::policies::PolicyRole;
use crate::tree::RmpTree;

/// How leaf policies are combined into one configuration-space acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Metric-weighted combination followed by the joint-limit resolution.
    MetricWeighted,
    /// Each pulled-back metric replaced by `β I`, `β` its largest eigenvalue.
    /// Configuration-space policies get `β` scaled by `cspace_weight`.
    ScaledIdentity { cspace_weight: f64 },
    /// Unweighted sum of `J⁺ f` over policies.
    Superposition,
}

impl Strategy {
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::MetricWeighted => write!(f, "metric_weighted"),
            Strategy::ScaledIdentity { cspace_weight } if *cspace_weight == 1.0 => write!(f, "scaled_identity"),
            Strategy::ScaledIdentity { cspace_weight } => write!(f, "scaled_identity@{cspace_weight}"),
            Strategy::Superposition => write!(f, "superposition"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts `metric_weighted`, `scaled_identity`, `scaled_identity@W` and
    /// `superposition` (camelCase spellings too).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, weight) = match s.split_once('@') {
            Some((h, w)) => {
                let w: f64 = w
                    .parse()
                    .map_err(|_| Error::Config(format!("bad C-space weight in strategy '{s}'")))?;
                if !(w.is_finite() && w > 0.0) {
                    return Err(Error::Config(format!("C-space weight must be positive in '{s}'")));
                }
                (h, Some(w))
            }
            None => (s, None),
        };
        let strategy = match head {
            "metric_weighted" | "metricWeighted" => Strategy::MetricWeighted,
            "scaled_identity" | "scaledIdentity" => Strategy::ScaledIdentity {
                cspace_weight: weight.unwrap_or(1.0),
            },
            "superposition" => Strategy::Superposition,
            _ => return Err(Error::Config(format!("unknown strategy '{s}'"))),
        };
        if weight.is_some() && !matches!(strategy, Strategy::ScaledIdentity { .. }) {
            return Err(Error::Config(format!("only scaled_identity takes a weight: '{s}'")));
        }
        Ok(strategy)
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Resolved acceleration plus the condition number of the metric it was
/// resolved with.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub accel: Vector,
    pub metric_condition: f64,
}

/// Configuration-space acceleration under `strategy`. Every strategy ends in
/// the joint-limit resolution so limits are handled identically.
pub fn strategy_accel(
    tree: &RmpTree,
    limits: &SigmoidLimitMap,
    strategy: Strategy,
    q: &Vector,
    qdot: &Vector,
) -> Result<Resolved> {
    let n = tree.root_dim();
    let combined = match strategy {
        Strategy::MetricWeighted => tree.evaluate_root(q, qdot)?,
        Strategy::ScaledIdentity { cspace_weight } => {
            let mut acc = UnresolvedRmp::zero(n);
            for t in tree.leaf_terms(q, qdot)? {
                let me = MapEval::new(Vector::zeros(t.jacobian.nrows()), t.jacobian)?;
                let pulled = pull(&me, &t.rmp)?;
                let mut beta = max_eigenvalue(&pulled.metric);
                if beta <= 0.0 {
                    continue;
                }
                if t.role == PolicyRole::ConfigurationSpace {
                    beta *= cspace_weight;
                }
                accumulate(
                    &mut acc,
                    &UnresolvedRmp {
                        force: pulled.accel * beta,
                        metric: Matrix::identity(n, n) * beta,
                    },
                )?;
            }
            acc
        }
        Strategy::Superposition => {
            let mut force = Vector::zeros(n);
            for t in tree.leaf_terms(q, qdot)? {
                force += pinv(&t.jacobian)? * &t.rmp.accel;
            }
            UnresolvedRmp {
                force,
                metric: Matrix::identity(n, n),
            }
        }
    };
    let out = apply_joint_limits(limits, &combined, q, qdot)?;
    Ok(Resolved {
        metric_condition: condition_number(&out.metric),
        accel: out.accel,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub q: Vector,
    pub qdot: Vector,
    pub t: f64,
    pub step: usize,
}

impl SimState {
    pub fn at_rest(q: Vector) -> Self {
        let n = q.len();
        Self {
            q,
            qdot: Vector::zeros(n),
            t: 0.0,
            step: 0,
        }
    }
}

/// Semi-implicit Euler: velocity first, then position with the new velocity.
pub fn euler_update(state: &SimState, qdd: &Vector, dt: f64) -> SimState {
    let qdot = &state.qdot + qdd * dt;
    let q = &state.q + &qdot * dt;
    SimState {
        q,
        qdot,
        t: (state.step + 1) as f64 * dt,
        step: state.step + 1,
    }
}

/// Advances the state with the limit-aware step when the map asks for it,
/// otherwise with [`euler_update`].
pub fn limited_update(state: &SimState, qdd: &Vector, dt: f64, limits: &SigmoidLimitMap) -> Result<SimState> {
    if !limits.chart_integration {
        return Ok(euler_update(state, qdd, dt));
    }
    let (q, qdot) = limits.chart_step(&state.q, &state.qdot, qdd, dt)?;
    Ok(SimState {
        q,
        qdot,
        t: (state.step + 1) as f64 * dt,
        step: state.step + 1,
    })
}

pub fn step(
    state: &SimState,
    tree: &RmpTree,
    limits: &SigmoidLimitMap,
    dt: f64,
    strategy: Strategy,
) -> Result<SimState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let r = strategy_accel(tree, limits, strategy, &state.q, &state.qdot)?;
    if !r.accel.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("policy acceleration"));
    }
    limited_update(state, &r.accel, dt, limits)
}

/// Sphere obstacle; planar scenes use `z = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Obstacle {
    pub fn center3(&self) -> Result<Vector3<f64>> {
        match self.center.as_slice() {
            [x, y] => Ok(Vector3::new(*x, *y, 0.0)),
            [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
            _ => Err(Error::Config(format!(
                "obstacle center needs 2 or 3 coordinates, got {}",
                self.center.len()
            ))),
        }
    }
}

/// What counts as having arrived.
#[derive(Debug, Clone, PartialEq)]
pub enum GoalCheck {
    /// Tool-frame origin within `tolerance` of `target`.
    EndEffector { target: Vector3<f64>, tolerance: f64 },
    /// Every joint within `tolerance` of `q`.
    Configuration { q: Vector, tolerance: f64 },
}

#[derive(Debug, Clone)]
pub struct Monitor {
    pub model: Arc<ChainModel>,
    pub obstacles: Vec<(Vector3<f64>, f64)>,
    pub self_pairs: Vec<(usize, usize)>,
    pub goal: GoalCheck,
    pub success_speed: f64,
}

impl Monitor {
    /// Smallest signed gap between any body sphere and any obstacle (or
    /// monitored body pair); infinite when nothing is monitored.
    pub fn min_clearance(&self, q: &Vector) -> Result<f64> {
        let pts = self.model.body_positions(q)?;
        let mut best = f64::INFINITY;
        for (p, b) in pts.iter().zip(&self.model.body_points) {
            for (c, r) in &self.obstacles {
                best = best.min((p - c).norm() - r - b.radius);
            }
        }
        for &(i, j) in &self.self_pairs {
            let bi = &self.model.body_points[i];
            let bj = &self.model.body_points[j];
            best = best.min((pts[i] - pts[j]).norm() - bi.radius - bj.radius);
        }
        Ok(best)
    }

    pub fn target_error(&self, q: &Vector) -> Result<f64> {
        match &self.goal {
            GoalCheck::EndEffector { target, .. } => Ok((self.model.end_effector(q)? - target).norm()),
            GoalCheck::Configuration { q: goal, .. } => Ok((q - goal).amax()),
        }
    }

    pub fn tolerance(&self) -> f64 {
        match &self.goal {
            GoalCheck::EndEffector { tolerance, .. } | GoalCheck::Configuration { tolerance, .. } => *tolerance,
        }
    }

    pub fn reached(&self, s: &SimState) -> Result<bool> {
        Ok(self.target_error(&s.q)? <= self.tolerance() && s.qdot.norm() <= self.success_speed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Success,
    Collision,
    Timeout,
    Divergence,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Success => "success",
            Verdict::Collision => "collision",
            Verdict::Timeout => "timeout",
            Verdict::Divergence => "divergence",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub min_clearance: f64,
    pub target_error: f64,
    pub accel_norm: f64,
    pub metric_condition: f64,
}

/// States in time order with one diagnostics record per state. The last
/// state has no acceleration computed, so its `accel_norm` is zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<SimState>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn min_clearance(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.min_clearance).fold(f64::INFINITY, f64::min)
    }

    pub fn final_error(&self) -> f64 {
        self.diagnostics.last().map(|d| d.target_error).unwrap_or(f64::NAN)
    }

    /// Length of the tool-frame path.
    pub fn path_length(&self, model: &ChainModel) -> Result<f64> {
        let mut len = 0.0;
        let mut prev: Option<Vector3<f64>> = None;
        for s in &self.states {
            let p = model.end_effector(&s.q)?;
            if let Some(pp) = prev {
                len += (p - pp).norm();
            }
            prev = Some(p);
        }
        Ok(len)
    }

    pub fn append(&mut self, mut other: Trajectory) {
        let offset = self.states.last().map(|s| s.step + 1).unwrap_or(0);
        for s in &mut other.states {
            s.step += offset;
            s.t = s.step as f64 * self.dt;
        }
        self.states.extend(other.states);
        self.diagnostics.extend(other.diagnostics);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_err")]
    pub success_error: f64,
    #[serde(default = "d_speed")]
    pub success_speed: f64,
}

fn d_dt() -> f64 {
    5e-3
}
fn d_steps() -> usize {
    4000
}
fn d_err() -> f64 {
    1e-2
}
fn d_speed() -> f64 {
    1e-2
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: d_dt(),
            steps: d_steps(),
            success_error: d_err(),
            success_speed: d_speed(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub verdict: Verdict,
    pub message: String,
    pub limit_violation: bool,
}

/// Integrates until success, collision, divergence or the step budget runs
/// out. Success is checked before the first step.
pub fn simulate(
    tree: &RmpTree,
    limits: &SigmoidLimitMap,
    monitor: &Monitor,
    start: SimState,
    strategy: Strategy,
    dt: f64,
    steps: usize,
) -> Result<RunOutcome> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let mut traj = Trajectory {
        dt,
        states: Vec::with_capacity(steps + 1),
        diagnostics: Vec::with_capacity(steps + 1),
    };
    let mut state = start;
    let finish = |mut traj: Trajectory, state: SimState, diag: StepDiagnostics, verdict, message: String, lv| {
        traj.states.push(state);
        traj.diagnostics.push(diag);
        RunOutcome {
            trajectory: traj,
            verdict,
            message,
            limit_violation: lv,
        }
    };
    loop {
        let clearance = monitor.min_clearance(&state.q)?;
        let error = monitor.target_error(&state.q)?;
        let mut diag = StepDiagnostics {
            min_clearance: clearance,
            target_error: error,
            accel_norm: 0.0,
            metric_condition: f64::NAN,
        };
        let finite = state.q.iter().chain(state.qdot.iter()).all(|v| v.is_finite());
        if !finite {
            return Ok(finish(traj, state, diag, Verdict::Divergence, "non-finite state".into(), false));
        }
        if clearance <= 0.0 {
            let msg = format!("body clearance {clearance:.4} at t = {:.3}", state.t);
            return Ok(finish(traj, state, diag, Verdict::Collision, msg, false));
        }
        if monitor.reached(&state)? {
            let msg = format!("target error {error:.2e} at t = {:.3}", state.t);
            return Ok(finish(traj, state, diag, Verdict::Success, msg, false));
        }
        if state.step >= steps {
            let msg = format!("target error {error:.2e} after {steps} steps");
            return Ok(finish(traj, state, diag, Verdict::Timeout, msg, false));
        }
        if let Err(e) = limits.check_inside(&state.q) {
            return Ok(finish(traj, state, diag, Verdict::Divergence, e.to_string(), true));
        }
        let r = match strategy_accel(tree, limits, strategy, &state.q, &state.qdot) {
            Ok(r) if r.accel.iter().all(|v| v.is_finite()) => r,
            Ok(_) => {
                return Ok(finish(traj, state, diag, Verdict::Divergence, "non-finite acceleration".into(), false))
            }
            Err(e) => return Ok(finish(traj, state, diag, Verdict::Divergence, e.to_string(), false)),
        };
        diag.accel_norm = r.accel.norm();
        diag.metric_condition = r.metric_condition;
        let next = match limited_update(&state, &r.accel, dt, limits) {
            Ok(n) => n,
            Err(e) => return Ok(finish(traj, state, diag, Verdict::Divergence, e.to_string(), false)),
        };
        traj.states.push(state);
        traj.diagnostics.push(diag);
        state = next;
    }
}

/// Counts joint values outside the open limit interval over a trajectory.
pub fn limit_violations(limits: &SigmoidLimitMap, traj: &Trajectory) -> usize {
    traj.states
        .iter()
        .map(|s| (0..s.q.len()).filter(|&i| !(s.q[i] > limits.lower[i] && s.q[i] < limits.upper[i])).count())
        .sum()
}
