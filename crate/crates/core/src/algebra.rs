//! Motion-policy algebra: addition, resolution, pullback and pushforward of
//! RMPs, in both the resolved `(accel, metric)` form and the unresolved
//! `(metric * accel, metric)` force form.
//!
//! The unresolved form is closed under addition and Jacobian-transpose pullback
//! without any matrix inversion, so tree evaluation stays in that form until a
//! single generalized inverse at the root.

use crate::error::{check_dim, Error, Result};
use crate::matops::{self, Matrix, Vector};

/// Instantaneous RMP: desired acceleration paired with a PSD metric.
#[derive(Debug, Clone, PartialEq)]
pub struct RmpEval {
    pub accel: Vector,
    pub metric: Matrix,
}

/// Force-form RMP `[metric * accel, metric]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnresolvedRmp {
    pub force: Vector,
    pub metric: Matrix,
}

/// Evaluation of a task map at a point: value, Jacobian and optionally the
/// curvature term `J̇ q̇`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapEval {
    pub value: Vector,
    pub jacobian: Matrix,
    pub curvature: Option<Vector>,
}

fn check_square_metric(metric: &Matrix, dim: usize, context: &'static str) -> Result<()> {
    if !metric.is_square() {
        return Err(Error::NotSquare {
            rows: metric.nrows(),
            cols: metric.ncols(),
        });
    }
    check_dim(context, dim, metric.nrows())
}

impl RmpEval {
    pub fn new(accel: Vector, metric: Matrix) -> Result<Self> {
        check_square_metric(&metric, accel.len(), "rmp metric")?;
        matops::ensure_finite_vector(&accel, "rmp acceleration")?;
        matops::ensure_finite_matrix(&metric, "rmp metric")?;
        Ok(Self { accel, metric })
    }

    /// `(0, 0)` in dimension `dim`: contributes nothing to a sum.
    pub fn zero(dim: usize) -> Self {
        Self {
            accel: Vector::zeros(dim),
            metric: Matrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.accel.len()
    }

    pub fn is_finite(&self) -> bool {
        self.accel.iter().all(|v| v.is_finite()) && self.metric.iter().all(|v| v.is_finite())
    }
}

impl UnresolvedRmp {
    pub fn new(force: Vector, metric: Matrix) -> Result<Self> {
        check_square_metric(&metric, force.len(), "unresolved rmp metric")?;
        matops::ensure_finite_vector(&force, "unresolved rmp force")?;
        matops::ensure_finite_matrix(&metric, "unresolved rmp metric")?;
        Ok(Self { force, metric })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            force: Vector::zeros(dim),
            metric: Matrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.force.len()
    }
}

impl MapEval {
    pub fn new(value: Vector, jacobian: Matrix) -> Result<Self> {
        check_dim("map jacobian rows", value.len(), jacobian.nrows())?;
        Ok(Self {
            value,
            jacobian,
            curvature: None,
        })
    }

    pub fn with_curvature(mut self, curvature: Vector) -> Result<Self> {
        check_dim("map curvature", self.value.len(), curvature.len())?;
        self.curvature = Some(curvature);
        Ok(self)
    }

    pub fn codomain_dim(&self) -> usize {
        self.jacobian.nrows()
    }

    pub fn domain_dim(&self) -> usize {
        self.jacobian.ncols()
    }

    /// Identity map evaluated at `x`.
    pub fn identity(x: &Vector) -> Self {
        Self {
            value: x.clone(),
            jacobian: Matrix::identity(x.len(), x.len()),
            curvature: None,
        }
    }
}

/// `(A f, A)`: canonical representative of the equivalence class.
pub fn unresolve(r: &RmpEval) -> UnresolvedRmp {
    UnresolvedRmp {
        force: &r.metric * &r.accel,
        metric: r.metric.clone(),
    }
}

/// `(G⁺ f̃, G)`.
pub fn resolve(u: &UnresolvedRmp) -> Result<RmpEval> {
    let inv = matops::pinv(&u.metric)?;
    Ok(RmpEval {
        accel: inv * &u.force,
        metric: u.metric.clone(),
    })
}

/// Componentwise sum of force and metric.
pub fn add_unresolved(a: &UnresolvedRmp, b: &UnresolvedRmp) -> Result<UnresolvedRmp> {
    check_dim("add_unresolved", a.dim(), b.dim())?;
    Ok(UnresolvedRmp {
        force: &a.force + &b.force,
        metric: &a.metric + &b.metric,
    })
}

/// In-place accumulation, same arithmetic as [`add_unresolved`].
pub fn accumulate(acc: &mut UnresolvedRmp, u: &UnresolvedRmp) -> Result<()> {
    check_dim("accumulate", acc.dim(), u.dim())?;
    acc.force += &u.force;
    acc.metric += &u.metric;
    Ok(())
}

/// Metric-weighted average of two RMPs.
pub fn add(a: &RmpEval, b: &RmpEval) -> Result<RmpEval> {
    check_dim("add", a.dim(), b.dim())?;
    resolve(&add_unresolved(&unresolve(a), &unresolve(b))?)
}

/// Metric-weighted average of a non-empty collection.
pub fn sum(policies: &[RmpEval]) -> Result<RmpEval> {
    let (first, rest) = policies.split_first().ok_or(Error::EmptySum)?;
    let mut acc = unresolve(first);
    for p in rest {
        accumulate(&mut acc, &unresolve(p))?;
    }
    resolve(&acc)
}

/// `[Jᵀ f̃, Jᵀ G J]` in the domain of the map.
pub fn pull_unresolved(map: &MapEval, u: &UnresolvedRmp) -> Result<UnresolvedRmp> {
    check_dim("pullback codomain", map.codomain_dim(), u.dim())?;
    let jt = map.jacobian.transpose();
    let metric = matops::symmetrize(&(&jt * &u.metric * &map.jacobian));
    Ok(UnresolvedRmp {
        force: jt * &u.force,
        metric,
    })
}

/// `((JᵀAJ)⁺ JᵀA f, JᵀAJ)`.
pub fn pull(map: &MapEval, r: &RmpEval) -> Result<RmpEval> {
    check_dim("pullback codomain", map.codomain_dim(), r.dim())?;
    resolve(&pull_unresolved(map, &unresolve(r))?)
}

/// Which factor ordering the pushforward metric uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PushMetric {
    /// `(J⁺)ᵀ B J⁺`: inverts the pullback metric for full-row-rank `J`.
    #[default]
    TransposeOuter,
    /// `J⁺ B (J⁺)ᵀ`: only dimensionally consistent for square `J`.
    TransposeInner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PushOptions {
    /// Add the map's `J̇ q̇` term to the pushed acceleration when present.
    pub include_curvature: bool,
    pub metric: PushMetric,
}

/// `(J h, (J⁺)ᵀ B J⁺)` with the default options.
pub fn push(map: &MapEval, r: &RmpEval) -> Result<RmpEval> {
    push_with(map, r, PushOptions::default())
}

pub fn push_with(map: &MapEval, r: &RmpEval, opts: PushOptions) -> Result<RmpEval> {
    check_dim("pushforward domain", map.domain_dim(), r.dim())?;
    let j = &map.jacobian;
    let mut accel = j * &r.accel;
    if opts.include_curvature {
        if let Some(c) = &map.curvature {
            accel += c;
        }
    }
    let jp = matops::pinv(j)?;
    let metric = match opts.metric {
        PushMetric::TransposeOuter => jp.transpose() * &r.metric * &jp,
        PushMetric::TransposeInner => {
            check_dim("inner-ordered pushforward needs square J", j.nrows(), j.ncols())?;
            &jp * &r.metric * jp.transpose()
        }
    };
    Ok(RmpEval {
        accel,
        metric: matops::symmetrize(&metric),
    })
}

/// `Σ ½‖f_i − J_i q̈‖²_{A_i}`: the quadratic whose minimizer is the
/// combined pulled-back policy.
pub fn motion_cost(terms: &[(Matrix, RmpEval)], qdd: &Vector) -> f64 {
    terms
        .iter()
        .map(|(j, r)| {
            let e = &r.accel - j * qdd;
            0.5 * e.dot(&(&r.metric * &e))
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::{diag, max_abs};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + Matrix::identity(n, n) * 0.1
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
        Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0))
    }

    fn close(a: &Vector, b: &Vector, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn identity_metrics_average() {
        let f = v(&[1.0, 2.0]);
        let g = v(&[3.0, -2.0]);
        let i = Matrix::identity(2, 2);
        let r = add(&RmpEval::new(f, i.clone()).unwrap(), &RmpEval::new(g, i.clone()).unwrap()).unwrap();
        assert!(close(&r.accel, &v(&[2.0, 0.0]), 1e-14));
        assert_eq!(r.metric, i * 2.0);
    }

    #[test]
    fn zero_metric_contributes_nothing() {
        let a = RmpEval::new(v(&[1.0, -1.0]), diag(&[2.0, 0.0])).unwrap();
        let z = RmpEval::new(v(&[100.0, 7.0]), Matrix::zeros(2, 2)).unwrap();
        let r = add(&a, &z).unwrap();
        // A⁺A f drops the null-space component
        assert!(close(&r.accel, &v(&[1.0, 0.0]), 1e-14));
        let full = RmpEval::new(v(&[1.0, -1.0]), diag(&[2.0, 3.0])).unwrap();
        let r = add(&full, &z).unwrap();
        assert!(close(&r.accel, &full.accel, 1e-14));
    }

    #[test]
    fn complementary_rank_one_metrics() {
        let a = RmpEval::new(v(&[1.0, 0.0]), diag(&[1.0, 0.0])).unwrap();
        let b = RmpEval::new(v(&[0.0, 1.0]), diag(&[0.0, 1.0])).unwrap();
        let r = add(&a, &b).unwrap();
        assert!(close(&r.accel, &v(&[1.0, 1.0]), 1e-14));
        assert_eq!(r.metric, Matrix::identity(2, 2));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = RmpEval::zero(2);
        let b = RmpEval::zero(3);
        assert!(matches!(add(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn scalar_weights_reduce_to_weighted_mean() {
        let fs = [v(&[1.0, 0.0, 2.0]), v(&[-1.0, 4.0, 0.5]), v(&[3.0, 3.0, 3.0])];
        let ws = [0.5, 2.0, 1.5];
        let rs: Vec<_> = fs
            .iter()
            .zip(ws)
            .map(|(f, w)| RmpEval::new(f.clone(), Matrix::identity(3, 3) * w).unwrap())
            .collect();
        let s = sum(&rs).unwrap();
        let expected = fs.iter().zip(ws).fold(Vector::zeros(3), |acc, (f, w)| acc + f * w) / 4.0;
        assert!(close(&s.accel, &expected, 1e-13));
    }

    #[test]
    fn single_element_sum_is_unchanged() {
        let r = RmpEval::new(v(&[0.5, -0.25]), diag(&[2.0, 4.0])).unwrap();
        let s = sum(std::slice::from_ref(&r)).unwrap();
        assert!(close(&s.accel, &r.accel, 1e-15));
        assert_eq!(s.metric, r.metric);
    }

    #[test]
    fn empty_sum_rejected() {
        assert_eq!(sum(&[]), Err(Error::EmptySum));
    }

    #[test]
    fn sum_matches_left_fold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rs: Vec<_> = (0..6)
            .map(|_| RmpEval::new(rand_vec(&mut rng, 4), rand_spd(&mut rng, 4)).unwrap())
            .collect();
        let s = sum(&rs).unwrap();
        let fold = rs[1..].iter().fold(rs[0].clone(), |acc, r| add(&acc, r).unwrap());
        assert!(close(&s.accel, &fold.accel, 1e-9));
    }

    #[test]
    fn resolve_diagonal() {
        let u = UnresolvedRmp::new(v(&[2.0, 0.0]), diag(&[2.0, 1.0])).unwrap();
        assert!(close(&resolve(&u).unwrap().accel, &v(&[1.0, 0.0]), 1e-15));
    }

    #[test]
    fn resolve_drops_null_space_force() {
        // G = diag(3, 0) has null space e2; a force along e2 is invisible.
        let g = diag(&[3.0, 0.0]);
        let u = UnresolvedRmp::new(v(&[6.0, 5.0]), g.clone()).unwrap();
        let r = resolve(&u).unwrap();
        let (col, _) = matops::projector_checks(&g).unwrap();
        assert!(close(&r.accel, &(col * v(&[2.0, 5.0])), 1e-14));
        assert!(close(&r.accel, &v(&[2.0, 0.0]), 1e-14));
    }

    #[test]
    fn resolve_unresolve_round_trip() {
        let r = RmpEval::new(v(&[1.0, 2.0]), diag(&[1.0, 0.0])).unwrap();
        let back = resolve(&unresolve(&r)).unwrap();
        assert!(close(&back.accel, &v(&[1.0, 0.0]), 1e-15));
        let r = RmpEval::new(v(&[1.0, 2.0]), diag(&[1.0, 5.0])).unwrap();
        assert!(close(&resolve(&unresolve(&r)).unwrap().accel, &r.accel, 1e-14));
    }

    #[test]
    fn unresolved_addition_is_literal() {
        let a = UnresolvedRmp::new(v(&[1.0]), Matrix::from_element(1, 1, 2.0)).unwrap();
        let b = UnresolvedRmp::new(v(&[3.0]), Matrix::from_element(1, 1, 4.0)).unwrap();
        let s = add_unresolved(&a, &b).unwrap();
        assert_eq!(s.force, v(&[4.0]));
        assert_eq!(s.metric, Matrix::from_element(1, 1, 6.0));
        let z = UnresolvedRmp::zero(1);
        assert_eq!(add_unresolved(&a, &z).unwrap(), a);
    }

    #[test]
    fn unresolved_and_resolved_addition_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..=6 {
            let a = RmpEval::new(rand_vec(&mut rng, n), rand_spd(&mut rng, n)).unwrap();
            let b = RmpEval::new(rand_vec(&mut rng, n), rand_spd(&mut rng, n)).unwrap();
            let via_u = resolve(&add_unresolved(&unresolve(&a), &unresolve(&b)).unwrap()).unwrap();
            let direct = add(&a, &b).unwrap();
            assert!(close(&via_u.accel, &direct.accel, 1e-9));
        }
    }

    #[test]
    fn pull_through_identity() {
        let r = RmpEval::new(v(&[1.0, -3.0]), diag(&[2.0, 1.0])).unwrap();
        let m = MapEval::identity(&v(&[0.0, 0.0]));
        let p = pull(&m, &r).unwrap();
        assert!(close(&p.accel, &r.accel, 1e-14));
        assert!(max_abs(&(&p.metric - &r.metric)) < 1e-15);
    }

    #[test]
    fn pull_through_coordinate_projection() {
        // J = [1 0], A = [1], f = [a]: JᵀAJ = diag(1, 0), JᵀAf = (a, 0).
        let a = 2.5;
        let map = MapEval::new(v(&[0.0]), Matrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        let r = RmpEval::new(v(&[a]), Matrix::from_element(1, 1, 1.0)).unwrap();
        let p = pull(&map, &r).unwrap();
        assert!(close(&p.accel, &v(&[a, 0.0]), 1e-15));
        assert_eq!(p.metric, diag(&[1.0, 0.0]));
        let pu = resolve(&pull_unresolved(&map, &unresolve(&r)).unwrap()).unwrap();
        assert!(close(&pu.accel, &p.accel, 1e-15));
    }

    #[test]
    fn full_row_rank_pull_is_pseudoinverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let j = Matrix::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
            let r = RmpEval::new(rand_vec(&mut rng, 3), rand_spd(&mut rng, 3)).unwrap();
            let map = MapEval::new(Vector::zeros(3), j.clone()).unwrap();
            let p = pull(&map, &r).unwrap();
            let simple = matops::pinv(&j).unwrap() * &r.accel;
            assert!(close(&p.accel, &simple, 1e-8));
        }
    }

    #[test]
    fn push_and_pull_invert() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let j = Matrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
            let map = MapEval::new(Vector::zeros(3), j.clone()).unwrap();
            let r = RmpEval::new(rand_vec(&mut rng, 3), rand_spd(&mut rng, 3)).unwrap();
            let back = push(&map, &pull(&map, &r).unwrap()).unwrap();
            assert!(close(&back.accel, &r.accel, 1e-8));
            assert!(max_abs(&(&back.metric - &r.metric)) < 1e-8);
        }
    }

    #[test]
    fn push_through_identity_and_curvature_toggle() {
        let r = RmpEval::new(v(&[1.0, 2.0]), diag(&[3.0, 4.0])).unwrap();
        let map = MapEval::identity(&v(&[0.0, 0.0])).with_curvature(v(&[0.5, 0.5])).unwrap();
        let p = push(&map, &r).unwrap();
        assert!(close(&p.accel, &r.accel, 1e-15));
        assert!(max_abs(&(&p.metric - &r.metric)) < 1e-14);
        let opts = PushOptions {
            include_curvature: true,
            ..Default::default()
        };
        let pc = push_with(&map, &r, opts).unwrap();
        assert!(close(&pc.accel, &v(&[1.5, 2.5]), 1e-15));
    }

    #[test]
    fn both_push_metric_orders_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let j = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)) + Matrix::identity(3, 3);
        let map = MapEval::new(Vector::zeros(3), j).unwrap();
        let r = RmpEval::new(rand_vec(&mut rng, 3), rand_spd(&mut rng, 3)).unwrap();
        for metric in [PushMetric::TransposeOuter, PushMetric::TransposeInner] {
            let p = push_with(&map, &r, PushOptions { include_curvature: false, metric }).unwrap();
            assert_eq!(p.metric, p.metric.transpose());
            assert!(matops::is_psd(&p.metric, 1e-9).unwrap());
        }
        let wide = MapEval::new(Vector::zeros(2), Matrix::zeros(2, 3)).unwrap();
        let opts = PushOptions {
            include_curvature: false,
            metric: PushMetric::TransposeInner,
        };
        assert!(push_with(&wide, &r, opts).is_err());
    }

    #[test]
    fn motion_cost_is_minimized_by_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let terms: Vec<(Matrix, RmpEval)> = (0..4)
            .map(|_| {
                let j = Matrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
                (j, RmpEval::new(rand_vec(&mut rng, 2), rand_spd(&mut rng, 2)).unwrap())
            })
            .collect();
        let pulled: Vec<_> = terms
            .iter()
            .map(|(j, r)| pull(&MapEval::new(Vector::zeros(2), j.clone()).unwrap(), r).unwrap())
            .collect();
        let best = sum(&pulled).unwrap().accel;
        let c0 = motion_cost(&terms, &best);
        for _ in 0..20 {
            let perturbed = &best + rand_vec(&mut rng, 3) * 1e-3;
            assert!(motion_cost(&terms, &perturbed) >= c0);
        }
    }
}
