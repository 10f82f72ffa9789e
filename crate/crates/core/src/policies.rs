//! Leaf motion policies and the helpers they share.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::algebra::{MapEval, RmpEval};
use crate::error::{check_dim, Error, Result};
use crate::kinematics::{ChainModel, LinkPointMap};
use crate::matops::{symmetrize, Matrix, Vector};
use crate::taskmap::{DifferentiableMap, SphereDistanceMap};

pub mod defaults {
    pub const GAIN_P: f64 = 10.0;
    pub const GAIN_D: f64 = 6.3;
    pub const SOFT_NORM_SCALE: f64 = 10.0;
    pub const METRIC_SIGMA_H: f64 = 0.3;
    pub const METRIC_SIGMA_W: f64 = 1.0;
    pub const REPULSION_GAIN: f64 = 8.0;
    pub const REPULSION_SCALE: f64 = 0.2;
    pub const DAMPING_GAIN: f64 = 2.0;
    pub const DAMPING_SCALE: f64 = 0.2;
    pub const EPSILON: f64 = 1e-3;
    pub const WEIGHT_RADIUS: f64 = 0.5;
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")))
    }
}

/// Smooth stand-in for `|γ|`: `γ + log(1 + exp(-2αγ)) / α`.
pub fn soft_v(gamma: f64, alpha: f64) -> f64 {
    if gamma >= 0.0 {
        gamma + (-2.0 * alpha * gamma).exp().ln_1p() / alpha
    } else {
        -gamma + (2.0 * alpha * gamma).exp().ln_1p() / alpha
    }
}

/// `v / soft_v(|v|, α)`: unit-like for large `v`, vanishing smoothly at 0.
pub fn soft_normalize(v: &Vector, alpha: f64) -> Vector {
    v / soft_v(v.norm(), alpha)
}

/// `weight * (β s sᵀ + (1 - β) I)` with `s = soft_normalize(v, α)`.
pub fn stretched_metric(v: &Vector, beta: f64, weight: f64, alpha: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("beta must lie in [0, 1], got {beta}")));
    }
    let n = v.len();
    let s = soft_normalize(v, alpha);
    Ok((&s * s.transpose() * beta + Matrix::identity(n, n) * (1.0 - beta)) * weight)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttractorParams {
    pub target: Vec<f64>,
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

impl AttractorParams {
    pub fn new(target: Vec<f64>) -> Self {
        Self {
            target,
            gain_p: defaults::GAIN_P,
            gain_d: defaults::GAIN_D,
            soft_norm_scale: defaults::SOFT_NORM_SCALE,
            metric_sigma_h: defaults::METRIC_SIGMA_H,
            metric_sigma_w: defaults::METRIC_SIGMA_W,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attractor target"));
        }
        non_negative("gain_p", self.gain_p)?;
        non_negative("gain_d", self.gain_d)?;
        positive("soft_norm_scale", self.soft_norm_scale)?;
        positive("metric_sigma_h", self.metric_sigma_h)?;
        positive("metric_sigma_w", self.metric_sigma_w)
    }
}

/// Attractor toward `target` with a metric that stretches along the policy
/// direction near the goal and fades with distance.
pub fn attractor_rmp(p: &AttractorParams, z: &Vector, zdot: &Vector) -> Result<RmpEval> {
    check_dim("attractor position", p.target.len(), z.len())?;
    check_dim("attractor velocity", p.target.len(), zdot.len())?;
    let diff = Vector::from_column_slice(&p.target) - z;
    let dist = diff.norm();
    let accel = soft_normalize(&diff, p.soft_norm_scale) * p.gain_p - zdot * p.gain_d;
    let beta = 1.0 - (-dist * dist / (2.0 * p.metric_sigma_h * p.metric_sigma_h)).exp();
    let weight = (-dist / p.metric_sigma_w).exp();
    let metric = stretched_metric(&accel, beta, weight, p.soft_norm_scale)?;
    RmpEval::new(accel, metric)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionParams {
    #[serde(default = "d_rep_gain")]
    pub repulsion_gain: f64,
    #[serde(default = "d_rep_scale")]
    pub repulsion_scale: f64,
    #[serde(default = "d_damp_gain")]
    pub damping_gain: f64,
    #[serde(default = "d_damp_scale")]
    pub damping_scale: f64,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
    #[serde(default = "d_radius")]
    pub weight_radius: f64,
    /// Blend between an isotropic metric (0) and one stretched along the
    /// policy output (1).
    #[serde(default)]
    pub stretch: f64,
    #[serde(default = "d_alpha")]
    pub soft_norm_scale: f64,
}

fn d_rep_gain() -> f64 {
    defaults::REPULSION_GAIN
}
fn d_rep_scale() -> f64 {
    defaults::REPULSION_SCALE
}
fn d_damp_gain() -> f64 {
    defaults::DAMPING_GAIN
}
fn d_damp_scale() -> f64 {
    defaults::DAMPING_SCALE
}
fn d_eps() -> f64 {
    defaults::EPSILON
}
fn d_radius() -> f64 {
    defaults::WEIGHT_RADIUS
}

impl Default for CollisionParams {
    fn default() -> Self {
        Self {
            repulsion_gain: defaults::REPULSION_GAIN,
            repulsion_scale: defaults::REPULSION_SCALE,
            damping_gain: defaults::DAMPING_GAIN,
            damping_scale: defaults::DAMPING_SCALE,
            epsilon: defaults::EPSILON,
            weight_radius: defaults::WEIGHT_RADIUS,
            stretch: 0.0,
            soft_norm_scale: defaults::SOFT_NORM_SCALE,
        }
    }
}

impl CollisionParams {
    pub fn validate(&self) -> Result<()> {
        non_negative("repulsion_gain", self.repulsion_gain)?;
        positive("repulsion_scale", self.repulsion_scale)?;
        non_negative("damping_gain", self.damping_gain)?;
        positive("damping_scale", self.damping_scale)?;
        positive("epsilon", self.epsilon)?;
        positive("weight_radius", self.weight_radius)?;
        positive("soft_norm_scale", self.soft_norm_scale)?;
        if !(0.0..=1.0).contains(&self.stretch) {
            return Err(Error::InvalidParameter(format!(
                "stretch must lie in [0, 1], got {}",
                self.stretch
            )));
        }
        Ok(())
    }
}

/// `(1 - s/r)²` on `[0, r]`, zero beyond `r`.
pub fn collision_weight(s: f64, r: f64) -> f64 {
    if s >= r {
        0.0
    } else {
        let t = 1.0 - s / r;
        t * t
    }
}

/// `max{0, -ẋᵀ∇d} (∇d ∇dᵀ) ẋ`.
pub fn obstacle_projection_outer(grad: &Vector, xdot: &Vector) -> Vector {
    let s = grad.dot(xdot);
    let gate = (-s).max(0.0);
    grad * (gate * s)
}

/// `-(max{0, -ẋᵀ∇d})² ∇d`. Agrees with [`obstacle_projection_outer`].
pub fn obstacle_projection(grad: &Vector, xdot: &Vector) -> Vector {
    let gate = (-grad.dot(xdot)).max(0.0);
    grad * (-gate * gate)
}

/// Obstacle avoidance in the ambient space of a distance function:
/// exponential repulsion along `∇d` plus damping of the approach velocity.
/// The projected velocity points toward the obstacle, so the damping term is
/// applied with a negative sign to decelerate approach. Distances below zero
/// are clamped to zero in the damping denominator.
pub fn collision_rmp(p: &CollisionParams, d_eval: &MapEval, xdot: &Vector) -> Result<RmpEval> {
    check_dim("distance value", 1, d_eval.value.len())?;
    let n = d_eval.domain_dim();
    check_dim("collision velocity", n, xdot.len())?;
    let d = d_eval.value[0];
    let grad = d_eval.jacobian.row(0).transpose();
    let repulsion = &grad * (p.repulsion_gain * (-d / p.repulsion_scale).exp());
    let damping_scale = p.damping_gain / (d.max(0.0) / p.damping_scale + p.epsilon);
    let damping = obstacle_projection(&grad, xdot) * (-damping_scale);
    let accel = repulsion + damping;
    let metric = stretched_metric(&accel, p.stretch, collision_weight(d, p.weight_radius), p.soft_norm_scale)?;
    RmpEval::new(accel, metric)
}

/// Point-obstacle form: `α(d) v̂ - β(d) v̂v̂ᵀ ẋ` with metric `w(d) s(f) s(f)ᵀ`,
/// where `v = x - center` and `d = |v| - radius`. `α` and `β` reuse the
/// repulsion and damping profiles of [`collision_rmp`].
pub fn collision_rmp_simple(
    p: &CollisionParams,
    x: &Vector,
    xdot: &Vector,
    center: &Vector,
    radius: f64,
) -> Result<RmpEval> {
    check_dim("obstacle center", x.len(), center.len())?;
    check_dim("collision velocity", x.len(), xdot.len())?;
    let v = x - center;
    let norm = v.norm();
    if norm <= 1e-12 {
        return Err(Error::Singular("obstacle direction at the obstacle center"));
    }
    let vhat = v / norm;
    let d = norm - radius;
    let push = p.repulsion_gain * (-d / p.repulsion_scale).exp();
    let damp = p.damping_gain / (d.max(0.0) / p.damping_scale + p.epsilon);
    let accel = &vhat * (push - damp * vhat.dot(xdot));
    let metric = stretched_metric(&accel, 1.0, collision_weight(d, p.weight_radius), p.soft_norm_scale)?;
    RmpEval::new(accel, metric)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedundancyParams {
    pub rest: Vec<f64>,
    #[serde(default)]
    pub rest_velocity: Option<Vec<f64>>,
    #[serde(default = "d_gain_p")]
    pub gain_p: f64,
    #[serde(default = "d_gain_d")]
    pub gain_d: f64,
    /// Scale of the identity metric.
    #[serde(default = "d_unit")]
    pub metric_weight: f64,
}

fn d_unit() -> f64 {
    1.0
}

impl RedundancyParams {
    pub fn new(rest: Vec<f64>) -> Self {
        Self {
            rest,
            rest_velocity: None,
            gain_p: defaults::GAIN_P,
            gain_d: defaults::GAIN_D,
            metric_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = &self.rest_velocity {
            check_dim("rest velocity", self.rest.len(), v.len())?;
        }
        non_negative("gain_p", self.gain_p)?;
        non_negative("gain_d", self.gain_d)?;
        positive("metric_weight", self.metric_weight)
    }
}

/// C-space spring-damper `γp(q0 - q) + γd(q̇0 - q̇)` with a (scaled) identity
/// metric.
pub fn redundancy_rmp(p: &RedundancyParams, q: &Vector, qdot: &Vector) -> Result<RmpEval> {
    let n = p.rest.len();
    check_dim("redundancy position", n, q.len())?;
    check_dim("redundancy velocity", n, qdot.len())?;
    let rest_vel = match &p.rest_velocity {
        Some(v) => Vector::from_column_slice(v),
        None => Vector::zeros(n),
    };
    let accel = (Vector::from_column_slice(&p.rest) - q) * p.gain_p + (rest_vel - qdot) * p.gain_d;
    RmpEval::new(accel, Matrix::identity(n, n) * p.metric_weight)
}

/// C-space retract attractor `gain (qr - q) - damping q̇`, identity metric.
pub fn retract_rmp(qr: &Vector, gain: f64, damping: f64, q: &Vector, qdot: &Vector) -> Result<RmpEval> {
    check_dim("retract position", qr.len(), q.len())?;
    check_dim("retract velocity", qr.len(), qdot.len())?;
    let n = qr.len();
    RmpEval::new((qr - q) * gain - qdot * damping, Matrix::identity(n, n))
}

/// Wrist-retract task map `x_w(q) - [(1 - b) x_f(q) + b x_r]` with
/// `b = exp(-|q - qr|² / 2σ²)`. Far from the retracted pose the wrist is
/// pulled toward the forearm; close to it the target becomes the wrist's
/// retracted position.
#[derive(Debug, Clone)]
pub struct WristRetractMap {
    pub wrist: LinkPointMap,
    pub forearm: LinkPointMap,
    pub retracted_wrist: Vector,
    pub retracted_pose: Vector,
    pub sigma: f64,
}

impl WristRetractMap {
    pub fn new(
        model: &Arc<ChainModel>,
        wrist: (usize, [f64; 3]),
        forearm: (usize, [f64; 3]),
        retracted_pose: Vector,
        sigma: f64,
    ) -> Result<Self> {
        positive("sigma", sigma)?;
        check_dim("retracted pose", model.dof(), retracted_pose.len())?;
        let wrist = LinkPointMap::new(model.clone(), wrist.0, wrist.1)?;
        let forearm = LinkPointMap::new(model.clone(), forearm.0, forearm.1)?;
        let retracted_wrist = wrist.eval(&retracted_pose)?.value;
        Ok(Self {
            wrist,
            forearm,
            retracted_wrist,
            retracted_pose,
            sigma,
        })
    }

    pub fn blend(&self, q: &Vector) -> f64 {
        let e = q - &self.retracted_pose;
        (-e.norm_squared() / (2.0 * self.sigma * self.sigma)).exp()
    }
}

impl DifferentiableMap for WristRetractMap {
    fn domain_dim(&self) -> usize {
        self.retracted_pose.len()
    }
    fn codomain_dim(&self) -> usize {
        3
    }
    fn eval(&self, q: &Vector) -> Result<MapEval> {
        let w = self.wrist.eval(q)?;
        let f = self.forearm.eval(q)?;
        let b = self.blend(q);
        let grad_b = (q - &self.retracted_pose) * (-b / (self.sigma * self.sigma));
        let value = &w.value - (&f.value * (1.0 - b) + &self.retracted_wrist * b);
        let jacobian = &w.jacobian - &f.jacobian * (1.0 - b) - (&self.retracted_wrist - &f.value) * grad_b.transpose();
        MapEval::new(value, jacobian)
    }
}

/// Which combination role a leaf plays; the scaled-identity baseline treats
/// configuration-space leaves separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyRole {
    Task,
    ConfigurationSpace,
}

/// A policy attached to a node of the policy tree.
pub trait LeafPolicy: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &Vector, xdot: &Vector) -> Result<RmpEval>;
    fn role(&self) -> PolicyRole {
        PolicyRole::Task
    }
    fn name(&self) -> &'static str;
}

pub type SharedPolicy = Arc<dyn LeafPolicy>;

#[derive(Debug, Clone)]
pub struct AttractorPolicy(pub AttractorParams);

impl LeafPolicy for AttractorPolicy {
    fn dim(&self) -> usize {
        self.0.target.len()
    }
    fn evaluate(&self, x: &Vector, xdot: &Vector) -> Result<RmpEval> {
        attractor_rmp(&self.0, x, xdot)
    }
    fn name(&self) -> &'static str {
        "attractor"
    }
}

/// Collision policy for a point against a sphere (or circle in the plane).
/// `clearance` is subtracted from the center distance, so it should be the
/// obstacle radius plus the body-point radius.
#[derive(Debug, Clone)]
pub struct CollisionPolicy {
    pub distance: SphereDistanceMap,
    pub params: CollisionParams,
    pub simple: bool,
}

impl CollisionPolicy {
    pub fn new(center: Vector3<f64>, clearance: f64, params: CollisionParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            distance: SphereDistanceMap::new(Vector::from_column_slice(center.as_slice()), clearance)?,
            params,
            simple: false,
        })
    }
}

impl LeafPolicy for CollisionPolicy {
    fn dim(&self) -> usize {
        self.distance.domain_dim()
    }
    fn evaluate(&self, x: &Vector, xdot: &Vector) -> Result<RmpEval> {
        if self.simple {
            return collision_rmp_simple(&self.params, x, xdot, &self.distance.center, self.distance.radius);
        }
        let d = self.distance.eval(x)?;
        collision_rmp(&self.params, &d, xdot)
    }
    fn name(&self) -> &'static str {
        "collision"
    }
}

/// Collision between two body points, living on their difference vector.
#[derive(Debug, Clone)]
pub struct SeparationPolicy {
    pub clearance: f64,
    pub params: CollisionParams,
}

impl LeafPolicy for SeparationPolicy {
    fn dim(&self) -> usize {
        3
    }
    fn evaluate(&self, x: &Vector, xdot: &Vector) -> Result<RmpEval> {
        let d = SphereDistanceMap::new(Vector::zeros(3), self.clearance)?.eval(x)?;
        collision_rmp(&self.params, &d, xdot)
    }
    fn name(&self) -> &'static str {
        "self_collision"
    }
}

#[derive(Debug, Clone)]
pub struct RedundancyPolicy(pub RedundancyParams);

impl LeafPolicy for RedundancyPolicy {
    fn dim(&self) -> usize {
        self.0.rest.len()
    }
    fn evaluate(&self, x: &Vector, xdot: &Vector) -> Result<RmpEval> {
        redundancy_rmp(&self.0, x, xdot)
    }
    fn role(&self) -> PolicyRole {
        PolicyRole::ConfigurationSpace
    }
    fn name(&self) -> &'static str {
        "redundancy"
    }
}

#[derive(Debug, Clone)]
pub struct RetractPolicy {
    pub target: Vector,
    pub gain: f64,
    pub damping: f64,
}

impl LeafPolicy for RetractPolicy {
    fn dim(&self) -> usize {
        self.target.len()
    }
    fn evaluate(&self, x: &Vector, xdot: &Vector) -> Result<RmpEval> {
        retract_rmp(&self.target, self.gain, self.damping, x, xdot)
    }
    fn role(&self) -> PolicyRole {
        PolicyRole::ConfigurationSpace
    }
    fn name(&self) -> &'static str {
        "retract"
    }
}

/// Replays a fixed RMP regardless of state; used by tests and oracles.
#[derive(Debug, Clone)]
pub struct ConstantPolicy(pub RmpEval);

impl LeafPolicy for ConstantPolicy {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn evaluate(&self, _x: &Vector, _xdot: &Vector) -> Result<RmpEval> {
        Ok(self.0.clone())
    }
    fn name(&self) -> &'static str {
        "constant"
    }
}

/// Wraps a policy and negates its metric. Only useful as a negative control
/// for the PSD checks.
#[derive(Debug, Clone)]
pub struct NegatedMetric(pub SharedPolicy);

impl LeafPolicy for NegatedMetric {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn evaluate(&self, x: &Vector, xdot: &Vector) -> Result<RmpEval> {
        let r = self.0.evaluate(x, xdot)?;
        Ok(RmpEval {
            accel: r.accel,
            metric: symmetrize(&(-r.metric)),
        })
    }
    fn role(&self) -> PolicyRole {
        self.0.role()
    }
    fn name(&self) -> &'static str {
        self.0.name()
    }
}
