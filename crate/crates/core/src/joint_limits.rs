//! Joint limits through a per-joint logistic map `q = (u_hi - l) σ(u) + l`.
//!
//! The combined configuration-space policy is pulled into the unconstrained
//! coordinates, regularized there, and pushed back. The Jacobian of the map
//! vanishes at the limits, so accelerations toward a limit are suppressed.

use serde::{Deserialize, Serialize};

use crate::algebra::{RmpEval, UnresolvedRmp};
use crate::error::{check_dim, Error, Result};
use crate::matops::{symmetrize, Matrix, Vector};

/// Fraction of the joint range kept clear of each limit before evaluating
/// the map, so round-off never reaches the logit singularity.
pub const GUARD_BAND: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitParams {
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_sharpness")]
    pub velocity_sharpness: f64,
    #[serde(default = "d_reg_p")]
    pub gain_p: f64,
    #[serde(default = "d_reg_d")]
    pub gain_d: f64,
    /// Regulator target; joint-range midpoints when absent.
    #[serde(default)]
    pub rest: Option<Vec<f64>>,
    /// Take position steps in the unconstrained coordinates.
    #[serde(default = "d_true")]
    pub chart_integration: bool,
}

fn d_true() -> bool {
    true
}

fn d_lambda() -> f64 {
    0.1
}
fn d_sharpness() -> f64 {
    10.0
}
fn d_reg_p() -> f64 {
    1.0
}
fn d_reg_d() -> f64 {
    2.0
}

impl Default for LimitParams {
    fn default() -> Self {
        Self {
            lambda: d_lambda(),
            velocity_sharpness: d_sharpness(),
            gain_p: d_reg_p(),
            gain_d: d_reg_d(),
            rest: None,
            chart_integration: true,
        }
    }
}

/// Diagonal of the velocity-aware limit Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitJacobian {
    pub diag: Vector,
}

impl LimitJacobian {
    pub fn matrix(&self) -> Matrix {
        Matrix::from_diagonal(&self.diag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidLimitMap {
    pub lower: Vector,
    pub upper: Vector,
    pub velocity_sharpness: f64,
    pub lambda: f64,
    pub gain_p: f64,
    pub gain_d: f64,
    pub rest: Vector,
    pub chart_integration: bool,
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl SigmoidLimitMap {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, params: &LimitParams) -> Result<Self> {
        check_dim("upper limits", lower.len(), upper.len())?;
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidParameter(format!("joint {i}: need lower < upper, got ({l}, {u})")));
            }
        }
        for (name, v) in [("lambda", params.lambda), ("velocity_sharpness", params.velocity_sharpness)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("gain_p", params.gain_p), ("gain_d", params.gain_d)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        let lower = Vector::from_vec(lower);
        let upper = Vector::from_vec(upper);
        let rest = match &params.rest {
            Some(r) => {
                check_dim("regulator rest pose", lower.len(), r.len())?;
                let r = Vector::from_column_slice(r);
                for i in 0..r.len() {
                    if !(r[i] > lower[i] && r[i] < upper[i]) {
                        return Err(Error::OutsideLimits {
                            joint: i,
                            value: r[i],
                            lower: lower[i],
                            upper: upper[i],
                        });
                    }
                }
                r
            }
            None => (&lower + &upper) * 0.5,
        };
        Ok(Self {
            lower,
            upper,
            velocity_sharpness: params.velocity_sharpness,
            lambda: params.lambda,
            gain_p: params.gain_p,
            gain_d: params.gain_d,
            rest,
            chart_integration: params.chart_integration,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self) -> Vector {
        &self.upper - &self.lower
    }

    pub fn sigmoid_forward(&self, u: &Vector) -> Result<Vector> {
        check_dim("sigmoid input", self.dim(), u.len())?;
        Ok(Vector::from_fn(self.dim(), |i, _| {
            (self.upper[i] - self.lower[i]) * logistic(u[i]) + self.lower[i]
        }))
    }

    pub fn sigmoid_inverse(&self, q: &Vector) -> Result<Vector> {
        self.check_inside(q)?;
        Ok(Vector::from_fn(self.dim(), |i, _| {
            let s = (q[i] - self.lower[i]) / (self.upper[i] - self.lower[i]);
            (s / (1.0 - s)).ln()
        }))
    }

    /// Rejects states at or beyond a limit.
    pub fn check_inside(&self, q: &Vector) -> Result<()> {
        check_dim("joint vector", self.dim(), q.len())?;
        for i in 0..q.len() {
            if !(q[i] > self.lower[i] && q[i] < self.upper[i]) {
                return Err(Error::OutsideLimits {
                    joint: i,
                    value: q[i],
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    /// `q` moved at least `GUARD_BAND` of the range inside each limit.
    pub fn guarded(&self, q: &Vector) -> Result<Vector> {
        self.check_inside(q)?;
        Ok(Vector::from_fn(self.dim(), |i, _| {
            let band = GUARD_BAND * (self.upper[i] - self.lower[i]);
            q[i].clamp(self.lower[i] + band, self.upper[i] - band)
        }))
    }

    /// `d_i = (q_i - l_i)(u_i - q_i) / (u_i - l_i)`, the map's derivative
    /// expressed in joint coordinates.
    pub fn plain_diagonal(&self, q: &Vector) -> Result<Vector> {
        let q = self.guarded(q)?;
        Ok(Vector::from_fn(self.dim(), |i, _| {
            (q[i] - self.lower[i]) * (self.upper[i] - q[i]) / (self.upper[i] - self.lower[i])
        }))
    }

    pub fn plain_jacobian(&self, q: &Vector) -> Result<Matrix> {
        Ok(Matrix::from_diagonal(&self.plain_diagonal(q)?))
    }

    /// Blends `d_i` against 1: near a limit and moving toward it the entry
    /// approaches `d_i`; moving away it approaches 1.
    pub fn directional_jacobian(&self, q: &Vector, qdot: &Vector) -> Result<LimitJacobian> {
        check_dim("joint velocity", self.dim(), qdot.len())?;
        let qg = self.guarded(q)?;
        let d = self.plain_diagonal(q)?;
        let diag = Vector::from_fn(self.dim(), |i, _| {
            let s = (qg[i] - self.lower[i]) / (self.upper[i] - self.lower[i]);
            let a = logistic(self.velocity_sharpness * qdot[i]);
            s * (a * d[i] + (1.0 - a)) + (1.0 - s) * ((1.0 - a) * d[i] + a)
        });
        Ok(LimitJacobian { diag })
    }

    /// Second-order term of the map in joint coordinates:
    /// `q̈ = d ü + (1 - 2s) q̇² / d`.
    pub fn curvature(&self, q: &Vector, qdot: &Vector) -> Result<Vector> {
        check_dim("joint velocity", self.dim(), qdot.len())?;
        let qg = self.guarded(q)?;
        let d = self.plain_diagonal(q)?;
        Ok(Vector::from_fn(self.dim(), |i, _| {
            let s = (qg[i] - self.lower[i]) / (self.upper[i] - self.lower[i]);
            (1.0 - 2.0 * s) * qdot[i] * qdot[i] / d[i]
        }))
    }

    /// Semi-implicit Euler step whose position update runs through the
    /// map: `u = σ⁻¹(q)` advances by `q̇⁺ dt / d` and is mapped back. This
    /// agrees with `q + q̇⁺ dt` to first order in `dt` and never leaves the
    /// open limit interval.
    pub fn chart_step(&self, q: &Vector, qdot: &Vector, qdd: &Vector, dt: f64) -> Result<(Vector, Vector)> {
        check_dim("joint velocity", self.dim(), qdot.len())?;
        check_dim("joint acceleration", self.dim(), qdd.len())?;
        let qg = self.guarded(q)?;
        let d = self.plain_diagonal(q)?;
        let qdot_next = qdot + qdd * dt;
        let q_next = Vector::from_fn(self.dim(), |i, _| {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            let w = hi - lo;
            let s = (qg[i] - lo) / w;
            let u = (s / (1.0 - s)).ln();
            let u_next = u + qdot_next[i] * dt / d[i];
            let band = GUARD_BAND * w;
            (qg[i] + w * (logistic(u_next) - logistic(u))).clamp(lo + band, hi - band)
        });
        Ok((q_next, qdot_next))
    }

    /// Regulator acceleration in the unconstrained space,
    /// `D⁻¹(γp(q0 - q) - γd q̇)`.
    pub fn regulator(&self, q: &Vector, qdot: &Vector, d: &Vector) -> Vector {
        let joint = (&self.rest - q) * self.gain_p - qdot * self.gain_d;
        joint.component_div(d)
    }

    pub fn apply(&self, combined: &UnresolvedRmp, q: &Vector, qdot: &Vector) -> Result<RmpEval> {
        apply_joint_limits(self, combined, q, qdot)
    }
}

/// Resolves the combined configuration-space policy through the limit map:
/// accel `D (D A D + λI)⁻¹ (D f + λ h)` and metric `A + λ D⁻²`.
pub fn apply_joint_limits(
    map: &SigmoidLimitMap,
    combined: &UnresolvedRmp,
    q: &Vector,
    qdot: &Vector,
) -> Result<RmpEval> {
    let n = map.dim();
    check_dim("combined policy", n, combined.dim())?;
    let jac = map.directional_jacobian(q, qdot)?;
    let d = &jac.diag;
    let h = map.regulator(q, qdot, d);
    let scaled = Matrix::from_fn(n, n, |i, j| d[i] * combined.metric[(i, j)] * d[j]);
    let system = symmetrize(&scaled) + Matrix::identity(n, n) * map.lambda;
    let rhs = combined.force.component_mul(d) + h * map.lambda;
    let x = solve_spd(system, &rhs)?;
    let accel = x.component_mul(d);
    let inv_d2 = Vector::from_fn(n, |i, _| map.lambda / (d[i] * d[i]));
    let metric = symmetrize(&(&combined.metric + Matrix::from_diagonal(&inv_d2)));
    RmpEval::new(accel, metric)
}

fn solve_spd(system: Matrix, rhs: &Vector) -> Result<Vector> {
    if let Some(ch) = system.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    system
        .lu()
        .solve(rhs)
        .ok_or(Error::Singular("regularized joint-limit system"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{resolve, unresolve};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn map3() -> SigmoidLimitMap {
        SigmoidLimitMap::new(vec![-1.0, -2.0, 0.0], vec![1.0, 2.0, 3.0], &LimitParams::default()).unwrap()
    }

    #[test]
    fn forward_examples() {
        let m = map3();
        assert_eq!(m.sigmoid_forward(&Vector::zeros(3)).unwrap(), v(&[0.0, 0.0, 1.5]));
        let big = m.sigmoid_forward(&Vector::from_element(3, 50.0)).unwrap();
        assert!((big - &m.upper).amax() < 1e-12);
    }

    #[test]
    fn round_trip() {
        let m = map3();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let u = Vector::from_fn(3, |_, _| rng.random_range(-20.0..20.0));
            let back = m.sigmoid_inverse(&m.sigmoid_forward(&u).unwrap()).unwrap();
            // near saturation the logit amplifies the last bit of q by 1/(s(1-s))
            let tol = Vector::from_fn(3, |i, _| 1e-9 * (1.0 + (u[i].abs() - 14.0).max(0.0).exp()));
            for i in 0..3 {
                assert!((back[i] - u[i]).abs() <= tol[i], "u {} back {}", u[i], back[i]);
            }
        }
    }

    #[test]
    fn plain_jacobian_examples() {
        let m = map3();
        let d = m.plain_diagonal(&v(&[0.0, 0.0, 1.5])).unwrap();
        assert_eq!(d, v(&[0.5, 1.0, 0.75]));
        let near = m.plain_diagonal(&v(&[1.0 - 1e-6, 0.0, 1.5])).unwrap();
        assert!(near[0] <= 1e-5 * 2.0);
        assert!(matches!(m.plain_diagonal(&v(&[1.0, 0.0, 1.5])), Err(Error::OutsideLimits { joint: 0, .. })));
        assert!(m.plain_diagonal(&v(&[0.0, -3.0, 1.5])).is_err());
    }

    #[test]
    fn plain_jacobian_matches_sigmoid_derivative() {
        let m = map3();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let u = Vector::from_fn(3, |_, _| rng.random_range(-4.0..4.0));
            let q = m.sigmoid_forward(&u).unwrap();
            let d = m.plain_diagonal(&q).unwrap();
            let h = 1e-6;
            for i in 0..3 {
                let mut up = u.clone();
                let mut um = u.clone();
                up[i] += h;
                um[i] -= h;
                let fd = (m.sigmoid_forward(&up).unwrap()[i] - m.sigmoid_forward(&um).unwrap()[i]) / (2.0 * h);
                assert!((fd - d[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn directional_blend_endpoints() {
        let m = map3();
        let q = v(&[1.0 - 1e-4, 0.0, 1.5]);
        let d = m.plain_diagonal(&q).unwrap();
        let toward = m.directional_jacobian(&q, &v(&[5.0, 0.0, 0.0])).unwrap();
        assert!((toward.diag[0] - d[0]).abs() < 1e-3);
        let away = m.directional_jacobian(&q, &v(&[-5.0, 0.0, 0.0])).unwrap();
        assert!((away.diag[0] - 1.0).abs() < 1e-3);
        let still = m.directional_jacobian(&q, &Vector::zeros(3)).unwrap();
        for i in 0..3 {
            assert_eq!(still.diag[i], (d[i] + 1.0) / 2.0);
        }
    }

    #[test]
    fn directional_entries_bounded() {
        let m = map3();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let q = m.sigmoid_forward(&Vector::from_fn(3, |_, _| rng.random_range(-15.0..15.0))).unwrap();
            let qd = Vector::from_fn(3, |_, _| rng.random_range(-10.0..10.0));
            if m.check_inside(&q).is_err() {
                continue;
            }
            let d = m.plain_diagonal(&q).unwrap();
            let dt = m.directional_jacobian(&q, &qd).unwrap();
            for i in 0..3 {
                assert!(dt.diag[i] > 0.0 && dt.diag[i] <= d[i].max(1.0) + 1e-15);
            }
        }
    }

    fn random_unresolved(rng: &mut ChaCha8Rng, n: usize) -> UnresolvedRmp {
        let b = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let metric = &b * b.transpose() + Matrix::identity(n, n) * 0.1;
        let force = Vector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        UnresolvedRmp::new(force, metric).unwrap()
    }

    #[test]
    fn matches_dense_oracle_midrange() {
        let m = map3();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = v(&[0.0, 0.0, 1.5]);
        let qd = v(&[0.2, -0.1, 0.3]);
        for _ in 0..50 {
            let c = random_unresolved(&mut rng, 3);
            let out = apply_joint_limits(&m, &c, &q, &qd).unwrap();
            let dd = m.directional_jacobian(&q, &qd).unwrap().matrix();
            let h = m.regulator(&q, &qd, &dd.diagonal());
            let lhs = &dd * &c.metric * &dd + Matrix::identity(3, 3) * m.lambda;
            let rhs = &dd * &c.force + h * m.lambda;
            let x = lhs.try_inverse().unwrap() * rhs;
            assert!((out.accel - &dd * x).amax() < 1e-10);
        }
    }

    #[test]
    fn vanishing_regularizer_recovers_resolution() {
        let params = LimitParams {
            lambda: 1e-10,
            ..LimitParams::default()
        };
        let m = SigmoidLimitMap::new(vec![-1.0, -2.0, 0.0], vec![1.0, 2.0, 3.0], &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = v(&[0.3, -0.5, 2.0]);
        for _ in 0..50 {
            let c = random_unresolved(&mut rng, 3);
            let out = apply_joint_limits(&m, &c, &q, &Vector::zeros(3)).unwrap();
            let plain = resolve(&c).unwrap();
            assert!((out.accel - plain.accel).amax() < 1e-6);
        }
    }

    #[test]
    fn near_limit_suppression() {
        let params = LimitParams {
            gain_p: 0.0,
            gain_d: 0.0,
            ..LimitParams::default()
        };
        let m = SigmoidLimitMap::new(vec![-1.0, -1.0], vec![1.0, 1.0], &params).unwrap();
        let q = v(&[1.0 - 1e-3, 0.0]);
        let qd = v(&[1.0, 0.0]);
        let push = RmpEval::new(v(&[5.0, 1.0]), Matrix::identity(2, 2)).unwrap();
        let out = apply_joint_limits(&m, &unresolve(&push), &q, &qd).unwrap();
        assert!(out.accel[0].abs() <= 1e-2 * push.accel[0].abs());
    }

    #[test]
    fn output_metric_psd_and_rest_checked() {
        let m = map3();
        let c = UnresolvedRmp::new(Vector::zeros(3), Matrix::zeros(3, 3)).unwrap();
        let out = apply_joint_limits(&m, &c, &v(&[0.9, 1.9, 0.1]), &v(&[1.0, 1.0, -1.0])).unwrap();
        assert!(crate::matops::is_psd(&out.metric, 1e-9).unwrap());
        let bad = LimitParams {
            rest: Some(vec![5.0, 0.0, 1.0]),
            ..LimitParams::default()
        };
        assert!(SigmoidLimitMap::new(vec![-1.0, -2.0, 0.0], vec![1.0, 2.0, 3.0], &bad).is_err());
    }

    #[test]
    fn zero_policy_gives_regulator_response() {
        let m = map3();
        let q = v(&[0.5, 1.0, 0.5]);
        let qd = Vector::zeros(3);
        let c = UnresolvedRmp::new(Vector::zeros(3), Matrix::zeros(3, 3)).unwrap();
        let out = apply_joint_limits(&m, &c, &q, &qd).unwrap();
        // with A = 0 the solve collapses to D h = γp (q0 - q) - γd q̇
        let expected = (&m.rest - &q) * m.gain_p;
        assert!((out.accel - expected).amax() < 1e-12);
    }

    #[test]
    fn chart_step_stays_inside_and_matches_euler_to_first_order() {
        let m = map3();
        let q = v(&[0.95, -1.99, 2.9]);
        let huge = v(&[50.0, -80.0, 40.0]);
        let (q1, _) = m.chart_step(&q, &huge, &huge, 1e-2).unwrap();
        m.check_inside(&q1).unwrap();

        let q = v(&[0.1, 0.3, 1.4]);
        let qd = v(&[0.4, -0.2, 0.7]);
        let a = v(&[1.0, 2.0, -3.0]);
        for dt in [1e-2, 1e-3] {
            let (q1, qd1) = m.chart_step(&q, &qd, &a, dt).unwrap();
            let euler = &q + (&qd + &a * dt) * dt;
            assert_eq!(qd1, &qd + &a * dt);
            // second-order discrepancy: halving dt by 10 shrinks it ~100x
            assert!((q1 - euler).amax() < 2.0 * dt * dt);
        }
    }

    #[test]
    fn chart_step_at_rest_is_exact() {
        let m = map3();
        let q = v(&[0.3, -1.2, 2.5]);
        let z = Vector::zeros(3);
        let (q1, qd1) = m.chart_step(&q, &z, &z, 5e-3).unwrap();
        assert_eq!(q1, q);
        assert_eq!(qd1, z);
    }
}
