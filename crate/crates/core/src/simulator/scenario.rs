//! Scenario files: robot, obstacles, policy list, limit and integrator
//! settings. A scenario is validated and assembled into a policy tree before
//! anything is integrated.

use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{simulate, GoalCheck, IntegratorConfig, Monitor, Obstacle, RunOutcome, SimState, Strategy, Trajectory, Verdict};
use crate::error::{check_dim, Error, Result};
use crate::joint_limits::{LimitParams, SigmoidLimitMap};
use crate::kinematics::{
    arm7, axis_target_map, body_point_map, default_body_points, end_effector_map, planar2, planar3,
    self_collision_pairs, Axis, ChainModel, LinkPointMap, PointDifferenceMap,
};
use crate::matops::Vector;
use crate::policies::{
    defaults, AttractorParams, AttractorPolicy, CollisionParams, CollisionPolicy, RedundancyParams,
    RedundancyPolicy, RetractPolicy, SeparationPolicy, WristRetractMap,
};
use crate::tree::RmpTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    /// `planar2`, `planar3` or `arm7`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainModel>,
    /// Body points per link when they are generated rather than listed.
    #[serde(default = "d_per_link")]
    pub points_per_link: usize,
    #[serde(default = "d_point_radius")]
    pub point_radius: f64,
}

fn d_per_link() -> usize {
    1
}
fn d_point_radius() -> f64 {
    0.05
}

impl RobotSpec {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: Some(name.to_string()),
            chain: None,
            points_per_link: d_per_link(),
            point_radius: d_point_radius(),
        }
    }

    pub fn model(&self) -> Result<ChainModel> {
        if self.points_per_link == 0 {
            return Err(Error::Config("robot.points_per_link must be at least 1".into()));
        }
        let model = match (&self.preset, &self.chain) {
            (Some(p), None) => match p.as_str() {
                "planar3" => planar3(self.points_per_link, self.point_radius),
                "arm7" => arm7(self.points_per_link, self.point_radius),
                "planar2" => {
                    let mut m = planar2();
                    m.body_points = default_body_points(&m.joints, m.tip, self.points_per_link, self.point_radius);
                    m
                }
                other => return Err(Error::Config(format!("unknown robot preset '{other}'"))),
            },
            (None, Some(c)) => {
                let mut m = c.clone();
                if m.body_points.is_empty() {
                    m.body_points = default_body_points(&m.joints, m.tip, self.points_per_link, self.point_radius);
                }
                m
            }
            _ => return Err(Error::Config("robot needs exactly one of 'preset' or 'chain'".into())),
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qdot: Option<Vec<f64>>,
    /// Uniform perturbation of `q` drawn from the scenario seed.
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttractorGains {
    #[serde(default = "d_gain_p")]
    pub gain_p: f64,
    #[serde(default = "d_gain_d")]
    pub gain_d: f64,
    #[serde(default = "d_alpha")]
    pub soft_norm_scale: f64,
    #[serde(default = "d_sigma_h")]
    pub metric_sigma_h: f64,
    #[serde(default = "d_sigma_w")]
    pub metric_sigma_w: f64,
}

fn d_gain_p() -> f64 {
    defaults::GAIN_P
}
fn d_gain_d() -> f64 {
    defaults::GAIN_D
}
fn d_alpha() -> f64 {
    defaults::SOFT_NORM_SCALE
}
fn d_sigma_h() -> f64 {
    defaults::METRIC_SIGMA_H
}
fn d_sigma_w() -> f64 {
    defaults::METRIC_SIGMA_W
}
fn d_unit() -> f64 {
    1.0
}
fn d_min_gap() -> usize {
    2
}
fn d_retract_gain() -> f64 {
    4.0
}
fn d_retract_damping() -> f64 {
    4.0
}
fn d_blend_sigma() -> f64 {
    0.5
}

impl Default for AttractorGains {
    fn default() -> Self {
        Self {
            gain_p: d_gain_p(),
            gain_d: d_gain_d(),
            soft_norm_scale: d_alpha(),
            metric_sigma_h: d_sigma_h(),
            metric_sigma_w: d_sigma_w(),
        }
    }
}

impl AttractorGains {
    pub fn params(&self, target: Vec<f64>) -> AttractorParams {
        AttractorParams {
            target,
            gain_p: self.gain_p,
            gain_d: self.gain_d,
            soft_norm_scale: self.soft_norm_scale,
            metric_sigma_h: self.metric_sigma_h,
            metric_sigma_w: self.metric_sigma_w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkPoint {
    pub link: usize,
    #[serde(default)]
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Attractor on a link point (the tool origin by default) or, with
    /// `axis`, on the tip of that link axis.
    Attractor {
        target: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        link: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offset: Option<[f64; 3]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        axis: Option<Axis>,
        #[serde(default)]
        gains: AttractorGains,
    },
    /// One collision policy per (body point, obstacle) pair.
    Collision {
        #[serde(default)]
        params: CollisionParams,
        /// Use the point-obstacle form with the stretched metric.
        #[serde(default)]
        simple: bool,
        /// Restrict to these body points; all when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        points: Option<Vec<usize>>,
    },
    SelfCollision {
        #[serde(default)]
        params: CollisionParams,
        #[serde(default = "d_min_gap")]
        min_link_gap: usize,
    },
    Redundancy {
        /// Joint-range midpoints when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rest: Option<Vec<f64>>,
        #[serde(default = "d_gain_p")]
        gain_p: f64,
        #[serde(default = "d_gain_d")]
        gain_d: f64,
        #[serde(default = "d_unit")]
        metric_weight: f64,
    },
    Retract {
        target: Vec<f64>,
        #[serde(default = "d_retract_gain")]
        gain: f64,
        #[serde(default = "d_retract_damping")]
        damping: f64,
    },
    /// Pulls the wrist toward the forearm while far from `retracted_pose`,
    /// then toward its retracted position; optionally also attracts the
    /// elbow to its retracted position.
    WristRetract {
        retracted_pose: Vec<f64>,
        wrist: LinkPoint,
        forearm: LinkPoint,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        elbow: Option<LinkPoint>,
        #[serde(default = "d_blend_sigma")]
        sigma: f64,
        #[serde(default)]
        gains: AttractorGains,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GoalSpec {
    EndEffector {
        target: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerance: Option<f64>,
    },
    Configuration {
        q: Vec<f64>,
        #[serde(default = "d_cfg_tol")]
        tolerance: f64,
    },
}

fn d_cfg_tol() -> f64 {
    0.05
}

/// Navigation by splicing: retract from the start, replay a retract recorded
/// from `goal_pose` backward, then finish with the scenario's own policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpliceSpec {
    pub retract_pose: Vec<f64>,
    pub goal_pose: Vec<f64>,
    #[serde(default = "d_retract_gain")]
    pub gain: f64,
    #[serde(default = "d_retract_damping")]
    pub damping: f64,
    /// Joint tolerance for considering the retract pose reached.
    #[serde(default = "d_splice_tol")]
    pub tolerance: f64,
}

fn d_splice_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub robot: RobotSpec,
    pub start: StartSpec,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub policies: Vec<PolicySpec>,
    #[serde(default)]
    pub limits: LimitParams,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<GoalSpec>,
    #[serde(default = "d_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splice: Option<SpliceSpec>,
    /// Marks retract fixtures expected to succeed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solvable: Option<bool>,
}

fn d_strategy() -> Strategy {
    Strategy::MetricWeighted
}

/// A scenario assembled into runnable parts.
#[derive(Debug, Clone)]
pub struct Built {
    pub model: Arc<ChainModel>,
    pub tree: RmpTree,
    pub limits: SigmoidLimitMap,
    pub monitor: Monitor,
    pub start: SimState,
}

fn point3(v: &[f64], what: &str) -> Result<Vector3<f64>> {
    match v {
        [x, y] => Ok(Vector3::new(*x, *y, 0.0)),
        [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
        _ => Err(Error::Config(format!("{what} needs 2 or 3 coordinates, got {}", v.len()))),
    }
}

fn finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} contains a non-finite value")))
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn model(&self) -> Result<ChainModel> {
        self.robot.model()
    }

    fn obstacle_list(&self) -> Result<Vec<(Vector3<f64>, f64)>> {
        self.obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| {
                if !(o.radius.is_finite() && o.radius >= 0.0) {
                    return Err(Error::Config(format!("obstacle {i} radius must be >= 0")));
                }
                finite(&o.center, "obstacle center")?;
                Ok((o.center3()?, o.radius))
            })
            .collect()
    }

    fn goal_check(&self, model: &ChainModel) -> Result<GoalCheck> {
        let tol = self.integrator.success_error;
        match &self.goal {
            Some(GoalSpec::EndEffector { target, tolerance }) => Ok(GoalCheck::EndEffector {
                target: point3(target, "goal target")?,
                tolerance: tolerance.unwrap_or(tol),
            }),
            Some(GoalSpec::Configuration { q, tolerance }) => {
                check_dim("goal configuration", model.dof(), q.len())?;
                Ok(GoalCheck::Configuration {
                    q: Vector::from_column_slice(q),
                    tolerance: *tolerance,
                })
            }
            None => {
                for p in &self.policies {
                    if let PolicySpec::Attractor {
                        target,
                        link,
                        offset: None,
                        axis: None,
                        ..
                    } = p
                    {
                        if link.is_none_or(|l| l == model.dof()) {
                            return Ok(GoalCheck::EndEffector {
                                target: point3(target, "attractor target")?,
                                tolerance: tol,
                            });
                        }
                    }
                }
                for p in &self.policies {
                    if let PolicySpec::Retract { target, .. } = p {
                        check_dim("retract target", model.dof(), target.len())?;
                        return Ok(GoalCheck::Configuration {
                            q: Vector::from_column_slice(target),
                            tolerance: d_cfg_tol(),
                        });
                    }
                }
                Err(Error::Config(
                    "no goal given and none can be inferred (add 'goal' or a tool attractor)".into(),
                ))
            }
        }
    }

    fn start_state(&self, model: &ChainModel) -> Result<SimState> {
        check_dim("start.q", model.dof(), self.start.q.len())?;
        finite(&self.start.q, "start.q")?;
        let mut q = Vector::from_column_slice(&self.start.q);
        if self.start.jitter != 0.0 {
            if !(self.start.jitter.is_finite() && self.start.jitter > 0.0) {
                return Err(Error::Config("start.jitter must be >= 0".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            for v in q.iter_mut() {
                *v += rng.random_range(-self.start.jitter..=self.start.jitter);
            }
        }
        let qdot = match &self.start.qdot {
            Some(v) => {
                check_dim("start.qdot", model.dof(), v.len())?;
                finite(v, "start.qdot")?;
                Vector::from_column_slice(v)
            }
            None => Vector::zeros(model.dof()),
        };
        Ok(SimState { q, qdot, t: 0.0, step: 0 })
    }

    fn check_integrator(&self) -> Result<()> {
        let c = &self.integrator;
        if !(c.dt.is_finite() && c.dt > 0.0) {
            return Err(Error::Config(format!("integrator.dt must be positive, got {}", c.dt)));
        }
        if !(c.success_error > 0.0 && c.success_speed > 0.0) {
            return Err(Error::Config("success thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Built> {
        self.check_integrator()?;
        let model = Arc::new(self.model()?);
        let limits = SigmoidLimitMap::new(model.lower_limits(), model.upper_limits(), &self.limits)?;
        let obstacles = self.obstacle_list()?;
        let tree = build_tree(&model, &obstacles, &self.policies)?;
        let goal = self.goal_check(&model)?;
        let start = self.start_state(&model)?;
        limits.check_inside(&start.q)?;
        let self_pairs = self
            .policies
            .iter()
            .find_map(|p| match p {
                PolicySpec::SelfCollision { min_link_gap, .. } => Some(self_collision_pairs(&model, *min_link_gap)),
                _ => None,
            })
            .unwrap_or_default();
        let monitor = Monitor {
            model: model.clone(),
            obstacles,
            self_pairs,
            goal,
            success_speed: self.integrator.success_speed,
        };
        if let Some(s) = &self.splice {
            for (what, v) in [("splice.retract_pose", &s.retract_pose), ("splice.goal_pose", &s.goal_pose)] {
                check_dim(what, model.dof(), v.len())?;
                limits.check_inside(&Vector::from_column_slice(v))?;
            }
        }
        Ok(Built {
            model,
            tree,
            limits,
            monitor,
            start,
        })
    }

    /// Runs the scenario with an explicit strategy.
    pub fn run_with(&self, strategy: Strategy) -> Result<(Built, RunOutcome)> {
        let built = self.build()?;
        let outcome = match &self.splice {
            None => simulate(
                &built.tree,
                &built.limits,
                &built.monitor,
                built.start.clone(),
                strategy,
                self.integrator.dt,
                self.integrator.steps,
            )?,
            Some(s) => self.run_spliced(&built, s, strategy)?,
        };
        Ok((built, outcome))
    }

    pub fn run(&self) -> Result<(Built, RunOutcome)> {
        self.run_with(self.strategy)
    }

    fn run_spliced(&self, built: &Built, s: &SpliceSpec, strategy: Strategy) -> Result<RunOutcome> {
        let dt = self.integrator.dt;
        let steps = self.integrator.steps;
        let mut retract_policies: Vec<PolicySpec> = self
            .policies
            .iter()
            .filter(|p| matches!(p, PolicySpec::Collision { .. } | PolicySpec::SelfCollision { .. }))
            .cloned()
            .collect();
        retract_policies.push(PolicySpec::Retract {
            target: s.retract_pose.clone(),
            gain: s.gain,
            damping: s.damping,
        });
        let retract_tree = build_tree(&built.model, &built.monitor.obstacles, &retract_policies)?;
        let retract_monitor = Monitor {
            goal: GoalCheck::Configuration {
                q: Vector::from_column_slice(&s.retract_pose),
                tolerance: s.tolerance,
            },
            ..built.monitor.clone()
        };

        let forward = simulate(&retract_tree, &built.limits, &retract_monitor, built.start.clone(), strategy, dt, steps)?;
        if forward.verdict != Verdict::Success {
            let message = format!("retract from start: {} ({})", forward.verdict, forward.message);
            return Ok(RunOutcome {
                trajectory: self.rediagnose(built, forward.trajectory)?,
                verdict: forward.verdict,
                message,
                limit_violation: forward.limit_violation,
            });
        }

        let goal_start = SimState::at_rest(Vector::from_column_slice(&s.goal_pose));
        let recorded = simulate(&retract_tree, &built.limits, &retract_monitor, goal_start.clone(), strategy, dt, steps)?;
        if recorded.verdict != Verdict::Success {
            let message = format!("retract from goal pose: {} ({})", recorded.verdict, recorded.message);
            let mut traj = forward.trajectory;
            traj.append(recorded.trajectory);
            return Ok(RunOutcome {
                trajectory: self.rediagnose(built, traj)?,
                verdict: recorded.verdict,
                message,
                limit_violation: recorded.limit_violation,
            });
        }
        let replay = reverse(&recorded.trajectory);

        let finish = simulate(&built.tree, &built.limits, &built.monitor, goal_start, strategy, dt, steps)?;
        let mut traj = forward.trajectory;
        // the forward phase ends on the retract pose; drop its duplicate
        traj.states.pop();
        traj.diagnostics.pop();
        traj.append(replay);
        traj.states.pop();
        traj.diagnostics.pop();
        traj.append(finish.trajectory);
        Ok(RunOutcome {
            trajectory: self.rediagnose(built, traj)?,
            verdict: finish.verdict,
            message: format!("spliced: {}", finish.message),
            limit_violation: finish.limit_violation,
        })
    }

    /// Recomputes clearance and target error against the scenario's own goal.
    fn rediagnose(&self, built: &Built, mut traj: Trajectory) -> Result<Trajectory> {
        for (s, d) in traj.states.iter().zip(traj.diagnostics.iter_mut()) {
            d.min_clearance = built.monitor.min_clearance(&s.q)?;
            d.target_error = built.monitor.target_error(&s.q)?;
        }
        Ok(traj)
    }
}

/// Time-reversed copy: positions in reverse order with negated velocities.
fn reverse(traj: &Trajectory) -> Trajectory {
    let n = traj.states.len();
    let mut states = Vec::with_capacity(n);
    let mut diagnostics = Vec::with_capacity(n);
    for k in 0..n {
        let i = n - 1 - k;
        let src = &traj.states[i];
        // to first order, q_i is reached from q_{i+1} with velocity -q̇_{i+1}
        let qdot = if i + 1 < n {
            -&traj.states[i + 1].qdot
        } else {
            -&src.qdot
        };
        states.push(SimState {
            q: src.q.clone(),
            qdot,
            t: k as f64 * traj.dt,
            step: k,
        });
        diagnostics.push(traj.diagnostics[i]);
    }
    Trajectory {
        dt: traj.dt,
        states,
        diagnostics,
    }
}

/// Assembles the policy tree for a chain, an obstacle set and a policy list.
pub fn build_tree(model: &Arc<ChainModel>, obstacles: &[(Vector3<f64>, f64)], policies: &[PolicySpec]) -> Result<RmpTree> {
    let n = model.dof();
    let mut tree = RmpTree::new(n);
    // one node per body point, shared by all obstacle policies on that point
    let mut point_nodes: Vec<Option<usize>> = vec![None; model.body_points.len()];
    for spec in policies {
        match spec {
            PolicySpec::Attractor {
                target,
                link,
                offset,
                axis,
                gains,
            } => {
                let t = point3(target, "attractor target")?;
                let link = link.unwrap_or(n);
                let map: LinkPointMap = match axis {
                    Some(a) => {
                        if offset.is_some() {
                            return Err(Error::Config("attractor takes either 'axis' or 'offset', not both".into()));
                        }
                        axis_target_map(model, link, *a)?
                    }
                    None if link == n && offset.is_none() => end_effector_map(model),
                    None => LinkPointMap::new(model.clone(), link, offset.unwrap_or([0.0; 3]))?,
                };
                let params = gains.params(t.as_slice().to_vec());
                params.validate()?;
                tree.add_leaf(RmpTree::ROOT, Arc::new(map), Arc::new(AttractorPolicy(params)))?;
            }
            PolicySpec::Collision { params, simple, points } => {
                params.validate()?;
                let selected: Vec<usize> = match points {
                    Some(p) => p.clone(),
                    None => (0..model.body_points.len()).collect(),
                };
                for &i in &selected {
                    let bp = model.body_points.get(i).ok_or(Error::IndexOutOfRange {
                        what: "body point",
                        index: i,
                        len: model.body_points.len(),
                    })?;
                    let node = match point_nodes[i] {
                        Some(id) => id,
                        None => {
                            let id = tree.add_child(RmpTree::ROOT, Arc::new(body_point_map(model, i)?))?;
                            point_nodes[i] = Some(id);
                            id
                        }
                    };
                    for (c, r) in obstacles {
                        let mut p = CollisionPolicy::new(*c, r + bp.radius, params.clone())?;
                        p.simple = *simple;
                        tree.attach(node, Arc::new(p))?;
                    }
                }
            }
            PolicySpec::SelfCollision { params, min_link_gap } => {
                params.validate()?;
                for (i, j) in self_collision_pairs(model, *min_link_gap) {
                    let a = &model.body_points[i];
                    let b = &model.body_points[j];
                    let map = PointDifferenceMap {
                        a: LinkPointMap::new(model.clone(), a.link, a.offset)?,
                        b: LinkPointMap::new(model.clone(), b.link, b.offset)?,
                    };
                    let policy = SeparationPolicy {
                        clearance: a.radius + b.radius,
                        params: params.clone(),
                    };
                    tree.add_leaf(RmpTree::ROOT, Arc::new(map), Arc::new(policy))?;
                }
            }
            PolicySpec::Redundancy {
                rest,
                gain_p,
                gain_d,
                metric_weight,
            } => {
                let rest = match rest {
                    Some(r) => {
                        check_dim("redundancy rest", n, r.len())?;
                        r.clone()
                    }
                    None => model.mid_pose().as_slice().to_vec(),
                };
                let params = RedundancyParams {
                    rest,
                    rest_velocity: None,
                    gain_p: *gain_p,
                    gain_d: *gain_d,
                    metric_weight: *metric_weight,
                };
                params.validate()?;
                tree.attach(RmpTree::ROOT, Arc::new(RedundancyPolicy(params)))?;
            }
            PolicySpec::Retract { target, gain, damping } => {
                check_dim("retract target", n, target.len())?;
                finite(target, "retract target")?;
                if !(*gain > 0.0 && *damping >= 0.0) {
                    return Err(Error::Config("retract gain must be positive and damping non-negative".into()));
                }
                tree.attach(
                    RmpTree::ROOT,
                    Arc::new(RetractPolicy {
                        target: Vector::from_column_slice(target),
                        gain: *gain,
                        damping: *damping,
                    }),
                )?;
            }
            PolicySpec::WristRetract {
                retracted_pose,
                wrist,
                forearm,
                elbow,
                sigma,
                gains,
            } => {
                check_dim("wrist retract pose", n, retracted_pose.len())?;
                let pose = Vector::from_column_slice(retracted_pose);
                let map = WristRetractMap::new(
                    model,
                    (wrist.link, wrist.offset),
                    (forearm.link, forearm.offset),
                    pose.clone(),
                    *sigma,
                )?;
                let params = gains.params(vec![0.0; 3]);
                params.validate()?;
                tree.add_leaf(RmpTree::ROOT, Arc::new(map), Arc::new(AttractorPolicy(params)))?;
                if let Some(e) = elbow {
                    let elbow_map = LinkPointMap::new(model.clone(), e.link, e.offset)?;
                    let target = {
                        use crate::taskmap::DifferentiableMap;
                        elbow_map.eval(&pose)?.value
                    };
                    let params = gains.params(target.as_slice().to_vec());
                    tree.add_leaf(RmpTree::ROOT, Arc::new(elbow_map), Arc::new(AttractorPolicy(params)))?;
                }
            }
        }
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple() -> Scenario {
        Scenario::from_json(
            r#"{
                "name": "t",
                "robot": {"preset": "planar3"},
                "start": {"q": [0.3, 0.4, 0.5]},
                "policies": [
                    {"type": "attractor", "target": [1.5, 1.5]},
                    {"type": "redundancy"}
                ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = r#"{"name": "t", "robot": {"preset": "planar3"}, "start": {"q": [0,0,0]}, "policies": [], "bogus": 1}"#;
        assert!(matches!(Scenario::from_json(bad), Err(Error::Config(_))));
        let bad_policy = r#"{"name": "t", "robot": {"preset": "planar3"}, "start": {"q": [0,0,0]},
            "policies": [{"type": "attractor", "target": [1, 1], "gian_p": 3}]}"#;
        let err = Scenario::from_json(bad_policy).unwrap_err().to_string();
        assert!(err.contains("gian_p"), "{err}");
    }

    #[test]
    fn round_trip_is_identical() {
        let s = simple();
        let again = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn goal_inferred_from_tool_attractor() {
        let b = simple().build().unwrap();
        assert!(matches!(b.monitor.goal, GoalCheck::EndEffector { .. }));
        assert_eq!(b.tree.num_policies(), 2);
    }

    #[test]
    fn start_outside_limits_rejected() {
        let mut s = simple();
        s.start.q = vec![3.5, 0.0, 0.0];
        assert!(matches!(s.build(), Err(Error::OutsideLimits { .. })));
    }

    #[test]
    fn reversal_negates_velocity() {
        let traj = Trajectory {
            dt: 0.1,
            states: (0..3)
                .map(|k| SimState {
                    q: Vector::from_element(1, k as f64),
                    qdot: Vector::from_element(1, 10.0),
                    t: k as f64 * 0.1,
                    step: k,
                })
                .collect(),
            diagnostics: vec![
                super::super::StepDiagnostics {
                    min_clearance: 1.0,
                    target_error: 0.0,
                    accel_norm: 0.0,
                    metric_condition: 1.0
                };
                3
            ],
        };
        let r = reverse(&traj);
        assert_eq!(r.states[0].q[0], 2.0);
        assert_eq!(r.states[2].q[0], 0.0);
        assert_eq!(r.states[1].qdot[0], -10.0);
    }
}
