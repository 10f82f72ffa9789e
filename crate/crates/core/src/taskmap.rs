//! Differentiable task maps: evaluation of value and Jacobian, composition,
//! a finite-difference Jacobian checker, the weighted cylindrical-coordinate
//! map and sphere distance maps.

use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::MapEval;
use crate::error::{check_dim, Error, Result};
use crate::matops::{Matrix, Vector};

/// Central-difference step used for Jacobian verification and numerical curvature.
pub const FD_STEP: f64 = 1e-6;

/// A smooth map between Euclidean spaces with an analytic Jacobian.
pub trait DifferentiableMap: Send + Sync + Debug {
    fn domain_dim(&self) -> usize;
    fn codomain_dim(&self) -> usize;

    /// Value and Jacobian at `x`.
    fn eval(&self, x: &Vector) -> Result<MapEval>;

    /// Like [`eval`](Self::eval), additionally filling the curvature term
    /// `J̇ ẋ`. The default differentiates the Jacobian numerically along `xdot`.
    fn eval_with_velocity(&self, x: &Vector, xdot: &Vector) -> Result<MapEval> {
        check_dim("map velocity", self.domain_dim(), xdot.len())?;
        let e = self.eval(x)?;
        let speed = xdot.norm();
        if speed == 0.0 {
            let k = e.codomain_dim();
            return e.with_curvature(Vector::zeros(k));
        }
        // J̇ ẋ = d/dt J(x + t ẋ) ẋ at t = 0
        let h = FD_STEP / speed.max(1.0);
        let jp = self.eval(&(x + xdot * h))?.jacobian;
        let jm = self.eval(&(x - xdot * h))?.jacobian;
        let curvature = (jp - jm) * xdot / (2.0 * h);
        e.with_curvature(curvature)
    }
}

pub type SharedMap = Arc<dyn DifferentiableMap>;

/// `x ↦ x`.
#[derive(Debug, Clone)]
pub struct IdentityMap {
    pub dim: usize,
}

impl DifferentiableMap for IdentityMap {
    fn domain_dim(&self) -> usize {
        self.dim
    }
    fn codomain_dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &Vector) -> Result<MapEval> {
        check_dim("identity map input", self.dim, x.len())?;
        Ok(MapEval::identity(x))
    }
    fn eval_with_velocity(&self, x: &Vector, xdot: &Vector) -> Result<MapEval> {
        check_dim("identity map velocity", self.dim, xdot.len())?;
        self.eval(x)?.with_curvature(Vector::zeros(self.dim))
    }
}

/// `x ↦ M x + b`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub matrix: Matrix,
    pub offset: Vector,
}

impl AffineMap {
    pub fn new(matrix: Matrix, offset: Vector) -> Result<Self> {
        check_dim("affine offset", matrix.nrows(), offset.len())?;
        Ok(Self { matrix, offset })
    }

    pub fn linear(matrix: Matrix) -> Self {
        let offset = Vector::zeros(matrix.nrows());
        Self { matrix, offset }
    }
}

impl DifferentiableMap for AffineMap {
    fn domain_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn codomain_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn eval(&self, x: &Vector) -> Result<MapEval> {
        check_dim("affine map input", self.matrix.ncols(), x.len())?;
        MapEval::new(&self.matrix * x + &self.offset, self.matrix.clone())
    }
    fn eval_with_velocity(&self, x: &Vector, xdot: &Vector) -> Result<MapEval> {
        check_dim("affine map velocity", self.matrix.ncols(), xdot.len())?;
        self.eval(x)?.with_curvature(Vector::zeros(self.matrix.nrows()))
    }
}

/// `outer ∘ inner`.
#[derive(Debug, Clone)]
pub struct ComposedMap {
    inner: SharedMap,
    outer: SharedMap,
}

/// Chains two maps; the Jacobian is `J_outer · J_inner`.
pub fn compose(inner: SharedMap, outer: SharedMap) -> Result<ComposedMap> {
    check_dim("compose", inner.codomain_dim(), outer.domain_dim())?;
    Ok(ComposedMap { inner, outer })
}

impl DifferentiableMap for ComposedMap {
    fn domain_dim(&self) -> usize {
        self.inner.domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.outer.codomain_dim()
    }
    fn eval(&self, x: &Vector) -> Result<MapEval> {
        let a = self.inner.eval(x)?;
        let b = self.outer.eval(&a.value)?;
        MapEval::new(b.value, &b.jacobian * &a.jacobian)
    }
    fn eval_with_velocity(&self, x: &Vector, xdot: &Vector) -> Result<MapEval> {
        let a = self.inner.eval_with_velocity(x, xdot)?;
        let mid_velocity = &a.jacobian * xdot;
        let b = self.outer.eval_with_velocity(&a.value, &mid_velocity)?;
        let zero_a = Vector::zeros(a.codomain_dim());
        let zero_b = Vector::zeros(b.codomain_dim());
        let curvature = &b.jacobian * a.curvature.as_ref().unwrap_or(&zero_a)
            + b.curvature.as_ref().unwrap_or(&zero_b);
        MapEval::new(b.value, &b.jacobian * &a.jacobian)?.with_curvature(curvature)
    }
}

fn unit3(v: &Vector, what: &'static str) -> Result<Vector> {
    check_dim(what, 3, v.len())?;
    let n = v.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::InvalidParameter(format!("{what} must be a non-zero finite vector")));
    }
    Ok(v / n)
}

fn cross(a: &Vector, b: &Vector) -> Vector {
    Vector::from_column_slice(&[
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])
}

/// Weighted cylindrical coordinates `W (r, θ, z)` about an axis.
///
/// `θ` is measured in `(-π, π]` from a fixed reference direction perpendicular
/// to the axis, so the branch cut lies opposite that direction.
#[derive(Debug, Clone)]
pub struct CylindricalMap {
    axis_point: Vector,
    axis_direction: Vector,
    weights: [f64; 3],
    reference: Vector,
    binormal: Vector,
}

/// Inputs closer than this to the axis are rejected.
pub const CYLINDER_AXIS_EPS: f64 = 1e-9;

impl CylindricalMap {
    pub fn new(axis_point: Vector, axis_direction: Vector, weights: [f64; 3]) -> Result<Self> {
        check_dim("cylinder axis point", 3, axis_point.len())?;
        let axis = unit3(&axis_direction, "cylinder axis direction")?;
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidParameter("cylinder weights must be positive".into()));
        }
        // reference: the coordinate axis least aligned with the cylinder axis,
        // with its axial component removed
        let k = (0..3)
            .min_by(|&i, &j| axis[i].abs().total_cmp(&axis[j].abs()))
            .unwrap();
        let mut e = Vector::zeros(3);
        e[k] = 1.0;
        let reference = (&e - &axis * axis.dot(&e)).normalize();
        let binormal = cross(&axis, &reference);
        Ok(Self {
            axis_point,
            axis_direction: axis,
            weights,
            reference,
            binormal,
        })
    }

    pub fn axis_direction(&self) -> &Vector {
        &self.axis_direction
    }

    /// Unweighted `(r, θ, z)`.
    pub fn coordinates(&self, x: &Vector) -> Result<[f64; 3]> {
        check_dim("cylindrical map input", 3, x.len())?;
        let p = x - &self.axis_point;
        let u = p.dot(&self.reference);
        let w = p.dot(&self.binormal);
        let r = u.hypot(w);
        if r <= CYLINDER_AXIS_EPS {
            return Err(Error::Singular("cylindrical angle on the axis"));
        }
        Ok([r, w.atan2(u), p.dot(&self.axis_direction)])
    }
}

impl DifferentiableMap for CylindricalMap {
    fn domain_dim(&self) -> usize {
        3
    }
    fn codomain_dim(&self) -> usize {
        3
    }
    fn eval(&self, x: &Vector) -> Result<MapEval> {
        let [r, theta, z] = self.coordinates(x)?;
        let p = x - &self.axis_point;
        let u = p.dot(&self.reference);
        let w = p.dot(&self.binormal);
        let radial = (&self.reference * u + &self.binormal * w) / r;
        let angular = (&self.binormal * u - &self.reference * w) / (r * r);
        let mut j = Matrix::zeros(3, 3);
        j.set_row(0, &(radial.transpose() * self.weights[0]));
        j.set_row(1, &(angular.transpose() * self.weights[1]));
        j.set_row(2, &(self.axis_direction.transpose() * self.weights[2]));
        let value = Vector::from_column_slice(&[
            self.weights[0] * r,
            self.weights[1] * theta,
            self.weights[2] * z,
        ]);
        MapEval::new(value, j)
    }
}

/// Signed distance to a sphere (circle in the plane): `‖x − c‖ − radius`.
/// Negative inside.
#[derive(Debug, Clone)]
pub struct SphereDistanceMap {
    pub center: Vector,
    pub radius: f64,
}

impl SphereDistanceMap {
    pub fn new(center: Vector, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::InvalidParameter(format!("sphere radius {radius} must be >= 0")));
        }
        Ok(Self { center, radius })
    }

    /// Closest point on the sphere, `x − d(x) ∇d(x)`.
    pub fn closest_point(&self, x: &Vector) -> Result<Vector> {
        let e = self.eval(x)?;
        Ok(x - e.jacobian.row(0).transpose() * e.value[0])
    }
}

impl DifferentiableMap for SphereDistanceMap {
    fn domain_dim(&self) -> usize {
        self.center.len()
    }
    fn codomain_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &Vector) -> Result<MapEval> {
        check_dim("distance map input", self.center.len(), x.len())?;
        let diff = x - &self.center;
        let n = diff.norm();
        if n <= 1e-12 {
            return Err(Error::Singular("distance gradient at the sphere center"));
        }
        let grad = diff / n;
        MapEval::new(Vector::from_element(1, n - self.radius), Matrix::from_row_slice(1, grad.len(), grad.as_slice()))
    }
}

/// Outcome of a finite-difference Jacobian check.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    pub samples: usize,
    pub skipped: usize,
    /// Max over samples of `max|J − J_fd| / max(1, max|J_fd|)`.
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Central-difference Jacobian of `map` at `x`.
pub fn numeric_jacobian(map: &dyn DifferentiableMap, x: &Vector, step: f64) -> Result<Matrix> {
    let n = map.domain_dim();
    check_dim("numeric jacobian input", n, x.len())?;
    let mut j = Matrix::zeros(map.codomain_dim(), n);
    for c in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += step;
        xm[c] -= step;
        let col = (map.eval(&xp)?.value - map.eval(&xm)?.value) / (2.0 * step);
        j.set_column(c, &col);
    }
    Ok(j)
}

/// Relative Jacobian error at a single point.
pub fn jacobian_error_at(map: &dyn DifferentiableMap, x: &Vector) -> Result<f64> {
    let analytic = map.eval(x)?.jacobian;
    let numeric = numeric_jacobian(map, x, FD_STEP)?;
    let scale = numeric.amax().max(1.0);
    Ok((analytic - numeric).amax() / scale)
}

/// Checks the Jacobian at the given points. Points where the map (or a
/// difference stencil) is undefined are counted as skipped.
pub fn check_jacobian_at(map: &dyn DifferentiableMap, points: &[Vector], tol: f64) -> JacobianReport {
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    let mut skipped = 0;
    for x in points {
        match jacobian_error_at(map, x) {
            Ok(e) => {
                worst = worst.max(if e.is_nan() { f64::INFINITY } else { e });
                samples += 1;
            }
            Err(_) => skipped += 1,
        }
    }
    JacobianReport {
        samples,
        skipped,
        max_rel_error: worst,
        tol,
        passed: samples > 0 && worst <= tol,
    }
}

/// Draws `samples` points uniformly from `[-2, 2]^n` and checks the Jacobian.
pub fn check_jacobian(map: &dyn DifferentiableMap, samples: usize, tol: f64, seed: u64) -> JacobianReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = map.domain_dim();
    let points: Vec<Vector> = (0..samples)
        .map(|_| Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)))
        .collect();
    check_jacobian_at(map, &points, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    /// (x, y) ↦ (sin x · y, x² + exp(y), x y)
    #[derive(Debug)]
    struct Wavy;
    impl DifferentiableMap for Wavy {
        fn domain_dim(&self) -> usize {
            2
        }
        fn codomain_dim(&self) -> usize {
            3
        }
        fn eval(&self, x: &Vector) -> Result<MapEval> {
            let (a, b) = (x[0], x[1]);
            MapEval::new(
                v(&[a.sin() * b, a * a + b.exp(), a * b]),
                Matrix::from_row_slice(3, 2, &[a.cos() * b, a.sin(), 2.0 * a, b.exp(), b, a]),
            )
        }
    }

    /// (p, q, r) ↦ (p q, cos r)
    #[derive(Debug)]
    struct Squash;
    impl DifferentiableMap for Squash {
        fn domain_dim(&self) -> usize {
            3
        }
        fn codomain_dim(&self) -> usize {
            2
        }
        fn eval(&self, x: &Vector) -> Result<MapEval> {
            MapEval::new(
                v(&[x[0] * x[1], x[2].cos()]),
                Matrix::from_row_slice(2, 3, &[x[1], x[0], 0.0, 0.0, 0.0, -x[2].sin()]),
            )
        }
    }

    #[derive(Debug)]
    struct Corrupted(Wavy);
    impl DifferentiableMap for Corrupted {
        fn domain_dim(&self) -> usize {
            2
        }
        fn codomain_dim(&self) -> usize {
            3
        }
        fn eval(&self, x: &Vector) -> Result<MapEval> {
            let mut e = self.0.eval(x)?;
            e.jacobian[(1, 0)] += 0.01;
            Ok(e)
        }
    }

    #[test]
    fn compose_with_identity_is_pointwise_equal() {
        let m: SharedMap = Arc::new(Wavy);
        let c = compose(Arc::new(IdentityMap { dim: 2 }), m.clone()).unwrap();
        let x = v(&[0.3, -0.7]);
        assert_eq!(c.eval(&x).unwrap().value, m.eval(&x).unwrap().value);
        assert_eq!(c.eval(&x).unwrap().jacobian, m.eval(&x).unwrap().jacobian);
    }

    #[test]
    fn compose_linear_maps_multiplies() {
        let a = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let b = Matrix::from_row_slice(1, 2, &[2.0, -4.0]);
        let c = compose(Arc::new(AffineMap::linear(a.clone())), Arc::new(AffineMap::linear(b.clone()))).unwrap();
        let e = c.eval(&v(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(e.jacobian, &b * &a);
    }

    #[test]
    fn compose_rejects_mismatched_dims() {
        let r = compose(Arc::new(Wavy), Arc::new(Wavy));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn composed_jacobian_matches_finite_differences() {
        let c = compose(Arc::new(Wavy), Arc::new(Squash)).unwrap();
        let report = check_jacobian(&c, 100, 1e-5, 1);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn linear_map_check_is_tight() {
        let a = AffineMap::new(Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]), v(&[1.0, -1.0])).unwrap();
        let report = check_jacobian(&a, 20, 1e-5, 2);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn corrupted_jacobian_fails_check() {
        let report = check_jacobian(&Corrupted(Wavy), 20, 1e-5, 3);
        assert!(!report.passed);
    }

    #[test]
    fn cylindrical_canonical_frame() {
        let m = CylindricalMap::new(v(&[0.0, 0.0, 0.0]), v(&[0.0, 0.0, 2.0]), [1.0, 1.0, 1.0]).unwrap();
        assert!((m.axis_direction().norm() - 1.0).abs() < 1e-12);
        let [r, theta, z] = m.coordinates(&v(&[1.0, 0.0, 0.0])).unwrap();
        assert!((r - 1.0).abs() < 1e-15 && theta.abs() < 1e-15 && z.abs() < 1e-15);
        let [_, theta, z] = m.coordinates(&v(&[0.0, 2.0, 0.5])).unwrap();
        assert!((theta - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((z - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cylindrical_weighting_scales_rows() {
        let axis = v(&[0.2, -0.3, 1.0]);
        let base = CylindricalMap::new(v(&[0.1, 0.0, 0.0]), axis.clone(), [1.0, 1.0, 1.0]).unwrap();
        let weighted = CylindricalMap::new(v(&[0.1, 0.0, 0.0]), axis, [10.0, 1.0, 1.0]).unwrap();
        let x = v(&[0.7, 0.4, -0.2]);
        let jb = base.eval(&x).unwrap().jacobian;
        let jw = weighted.eval(&x).unwrap().jacobian;
        for c in 0..3 {
            assert!((jw[(0, c)] - 10.0 * jb[(0, c)]).abs() < 1e-14);
            assert_eq!(jw[(1, c)], jb[(1, c)]);
        }
    }

    #[test]
    fn cylindrical_jacobian_matches_finite_differences() {
        let m = CylindricalMap::new(v(&[0.5, -0.2, 0.1]), v(&[1.0, 1.0, 0.5]), [3.0, 0.5, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut points = Vec::new();
        while points.len() < 100 {
            let x = Vector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            // stay clear of the axis and of the angular branch cut
            if let Ok([r, theta, _]) = m.coordinates(&x) {
                if r > 0.1 && theta.abs() < 3.0 {
                    points.push(x);
                }
            }
        }
        let report = check_jacobian_at(&m, &points, 1e-5);
        assert_eq!(report.samples, 100);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn cylindrical_on_axis_rejected() {
        let m = CylindricalMap::new(v(&[0.0, 0.0, 0.0]), v(&[0.0, 0.0, 1.0]), [1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(m.eval(&v(&[0.0, 0.0, 3.0])), Err(Error::Singular(_))));
    }

    #[test]
    fn sphere_distance_basics() {
        let s = SphereDistanceMap::new(v(&[0.0, 0.0, 0.0]), 1.0).unwrap();
        let e = s.eval(&v(&[2.0, 0.0, 0.0])).unwrap();
        assert_eq!(e.value[0], 1.0);
        assert_eq!(e.jacobian, Matrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]));
        assert_eq!(s.eval(&v(&[0.0, -1.0, 0.0])).unwrap().value[0], 0.0);
        assert!(s.eval(&v(&[0.0, 0.0, 0.0])).is_err());
        // penetration yields negative distance
        assert!(s.eval(&v(&[0.5, 0.0, 0.0])).unwrap().value[0] < 0.0);
    }

    #[test]
    fn closest_point_lies_on_sphere() {
        let s = SphereDistanceMap::new(v(&[0.3, -0.1, 0.4]), 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let x = Vector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let p = s.closest_point(&x).unwrap();
            assert!(((&p - &s.center).norm() - 0.7).abs() < 1e-10);
            let g = s.eval(&x).unwrap().jacobian;
            assert!((g.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn numeric_curvature_of_linear_map_vanishes() {
        let c = compose(Arc::new(AffineMap::linear(Matrix::identity(2, 2) * 3.0)), Arc::new(Wavy)).unwrap();
        let e = c.eval_with_velocity(&v(&[0.1, 0.2]), &v(&[1.0, -1.0])).unwrap();
        assert!(e.curvature.is_some());
        let a = AffineMap::linear(Matrix::identity(2, 2));
        let e = a.eval_with_velocity(&v(&[0.1, 0.2]), &v(&[1.0, -1.0])).unwrap();
        assert_eq!(e.curvature.unwrap(), Vector::zeros(2));
    }
}
