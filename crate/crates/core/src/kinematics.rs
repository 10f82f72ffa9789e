//! Serial revolute chains: forward kinematics, frame elements and the task
//! maps built on them (body points, axis tips, point differences).
//!
//! Planar arms are ordinary 3D chains whose joint axes are all `z`, so every
//! point stays in the `xy`-plane.

use std::sync::Arc;

use nalgebra::{Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::algebra::MapEval;
use crate::error::{check_dim, Error, Result};
use crate::matops::{Matrix, Vector};
use crate::taskmap::DifferentiableMap;

/// A revolute joint. `origin`/`rpy` place the joint frame relative to the
/// previous link frame; the joint then rotates about `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Joint {
    pub axis: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    pub lower: f64,
    pub upper: f64,
}

/// A collision sphere rigidly attached to a link frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyPoint {
    pub link: usize,
    pub offset: [f64; 3],
    pub radius: f64,
}

/// Serial chain. Link `k < n` is the frame after joint `k`; link `n` is the
/// tool frame, offset by `tip` from the last joint frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainModel {
    pub joints: Vec<Joint>,
    pub tip: [f64; 3],
    #[serde(default)]
    pub body_points: Vec<BodyPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Frame elements of a link: origin, rotation columns and their Jacobians.
#[derive(Debug, Clone)]
pub struct FrameEval {
    pub origin: Vector3<f64>,
    pub axes: [Vector3<f64>; 3],
    pub origin_jacobian: Matrix,
    pub axis_jacobians: [Matrix; 3],
}

struct Pose {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

/// World-frame poses of every link plus each joint's world axis and origin.
struct ChainState {
    links: Vec<Pose>,
    joint_axes: Vec<Vector3<f64>>,
    joint_origins: Vec<Vector3<f64>>,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl ChainModel {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Number of link frames including the tool frame.
    pub fn num_links(&self) -> usize {
        self.joints.len() + 1
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.lower).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.upper).collect()
    }

    /// Joint-range midpoints.
    pub fn mid_pose(&self) -> Vector {
        Vector::from_iterator(self.dof(), self.joints.iter().map(|j| 0.5 * (j.lower + j.upper)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::Config("a chain needs at least one joint".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            let n = v3(j.axis).norm();
            if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("joint {i} axis must be unit length (norm {n})")));
            }
            if !(j.lower < j.upper) {
                return Err(Error::Config(format!(
                    "joint {i} limits must satisfy lower < upper ({} >= {})",
                    j.lower, j.upper
                )));
            }
        }
        for (i, p) in self.body_points.iter().enumerate() {
            if p.link >= self.num_links() {
                return Err(Error::Config(format!(
                    "body point {i} references link {} but the chain has {} links",
                    p.link,
                    self.num_links()
                )));
            }
            if !(p.radius >= 0.0) {
                return Err(Error::Config(format!("body point {i} radius must be >= 0")));
            }
        }
        Ok(())
    }

    fn state(&self, q: &Vector) -> Result<ChainState> {
        check_dim("joint vector", self.dof(), q.len())?;
        let mut rotation = Rotation3::identity();
        let mut translation = Vector3::zeros();
        let mut links = Vec::with_capacity(self.num_links());
        let mut joint_axes = Vec::with_capacity(self.dof());
        let mut joint_origins = Vec::with_capacity(self.dof());
        for (joint, &angle) in self.joints.iter().zip(q.iter()) {
            translation += rotation * v3(joint.origin);
            rotation *= Rotation3::from_euler_angles(joint.rpy[0], joint.rpy[1], joint.rpy[2]);
            let axis = Unit::new_normalize(v3(joint.axis));
            joint_axes.push(rotation * axis.into_inner());
            joint_origins.push(translation);
            rotation *= Rotation3::from_axis_angle(&axis, angle);
            links.push(Pose { rotation, translation });
        }
        links.push(Pose {
            rotation,
            translation: translation + rotation * v3(self.tip),
        });
        Ok(ChainState {
            links,
            joint_axes,
            joint_origins,
        })
    }

    fn check_link(&self, link: usize) -> Result<()> {
        if link < self.num_links() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                what: "link",
                index: link,
                len: self.num_links(),
            })
        }
    }

    /// Jacobian of a world point rigidly attached to `link`.
    fn point_jacobian(&self, s: &ChainState, link: usize, p: &Vector3<f64>) -> Matrix {
        let mut j = Matrix::zeros(3, self.dof());
        let movers = link.min(self.dof() - 1) + 1;
        for c in 0..movers {
            let col = s.joint_axes[c].cross(&(p - s.joint_origins[c]));
            j.fixed_view_mut::<3, 1>(0, c).copy_from(&col);
        }
        j
    }

    /// World position of a point given in `link` coordinates, and its Jacobian.
    pub fn link_point(&self, q: &Vector, link: usize, offset: &Vector3<f64>) -> Result<(Vector3<f64>, Matrix)> {
        self.check_link(link)?;
        let s = self.state(q)?;
        let pose = &s.links[link];
        let p = pose.translation + pose.rotation * offset;
        let j = self.point_jacobian(&s, link, &p);
        Ok((p, j))
    }

    /// World positions of every body point.
    pub fn body_positions(&self, q: &Vector) -> Result<Vec<Vector3<f64>>> {
        let s = self.state(q)?;
        Ok(self
            .body_points
            .iter()
            .map(|b| {
                let pose = &s.links[b.link];
                pose.translation + pose.rotation * v3(b.offset)
            })
            .collect())
    }

    /// Tool-frame origin.
    pub fn end_effector(&self, q: &Vector) -> Result<Vector3<f64>> {
        Ok(self.state(q)?.links[self.dof()].translation)
    }
}

/// Frame elements of `link` at `q`.
pub fn forward_frame(model: &ChainModel, q: &Vector, link: usize) -> Result<FrameEval> {
    model.check_link(link)?;
    let s = model.state(q)?;
    let pose = &s.links[link];
    let origin = pose.translation;
    let origin_jacobian = model.point_jacobian(&s, link, &origin);
    let axes = [0, 1, 2].map(|i| pose.rotation.matrix().column(i).into_owned());
    let movers = link.min(model.dof() - 1) + 1;
    let axis_jacobians = axes.map(|a| {
        let mut j = Matrix::zeros(3, model.dof());
        for c in 0..movers {
            let col = s.joint_axes[c].cross(&a);
            j.fixed_view_mut::<3, 1>(0, c).copy_from(&col);
        }
        j
    });
    Ok(FrameEval {
        origin,
        axes,
        origin_jacobian,
        axis_jacobians,
    })
}

/// `q ↦` world position of a point fixed in a link frame.
#[derive(Debug, Clone)]
pub struct LinkPointMap {
    model: Arc<ChainModel>,
    link: usize,
    offset: Vector3<f64>,
}

impl LinkPointMap {
    pub fn new(model: Arc<ChainModel>, link: usize, offset: [f64; 3]) -> Result<Self> {
        model.check_link(link)?;
        Ok(Self {
            model,
            link,
            offset: v3(offset),
        })
    }

    pub fn link(&self) -> usize {
        self.link
    }
}

impl DifferentiableMap for LinkPointMap {
    fn domain_dim(&self) -> usize {
        self.model.dof()
    }
    fn codomain_dim(&self) -> usize {
        3
    }
    fn eval(&self, q: &Vector) -> Result<MapEval> {
        let (p, j) = self.model.link_point(q, self.link, &self.offset)?;
        MapEval::new(Vector::from_column_slice(p.as_slice()), j)
    }
}

/// Map from `q` to the world position of body point `point`.
pub fn body_point_map(model: &Arc<ChainModel>, point: usize) -> Result<LinkPointMap> {
    let b = model.body_points.get(point).ok_or(Error::IndexOutOfRange {
        what: "body point",
        index: point,
        len: model.body_points.len(),
    })?;
    LinkPointMap::new(model.clone(), b.link, b.offset)
}

/// Map from `q` to the tip of a unit axis of `link`, `t + a_axis`.
pub fn axis_target_map(model: &Arc<ChainModel>, link: usize, axis: Axis) -> Result<LinkPointMap> {
    let mut offset = [0.0; 3];
    offset[axis.index()] = 1.0;
    LinkPointMap::new(model.clone(), link, offset)
}

/// Tool-frame origin as a task map.
pub fn end_effector_map(model: &Arc<ChainModel>) -> LinkPointMap {
    LinkPointMap::new(model.clone(), model.dof(), [0.0; 3]).expect("tool link always exists")
}

/// `q ↦ a(q) − b(q)`, used for body-point pairs.
#[derive(Debug, Clone)]
pub struct PointDifferenceMap {
    pub a: LinkPointMap,
    pub b: LinkPointMap,
}

impl DifferentiableMap for PointDifferenceMap {
    fn domain_dim(&self) -> usize {
        self.a.domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        3
    }
    fn eval(&self, q: &Vector) -> Result<MapEval> {
        let ea = self.a.eval(q)?;
        let eb = self.b.eval(q)?;
        MapEval::new(ea.value - eb.value, ea.jacobian - eb.jacobian)
    }
}

/// Body-point index pairs eligible for self-collision: links at least
/// `min_link_gap` apart.
pub fn self_collision_pairs(model: &ChainModel, min_link_gap: usize) -> Vec<(usize, usize)> {
    let pts = &model.body_points;
    let mut pairs = Vec::new();
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            if pts[i].link.abs_diff(pts[j].link) >= min_link_gap {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Body points spaced evenly along each link (at `(k + 0.5) / per_link` of its
/// length) plus one at the tool origin.
pub fn default_body_points(joints: &[Joint], tip: [f64; 3], per_link: usize, radius: f64) -> Vec<BodyPoint> {
    let mut pts = Vec::new();
    for link in 0..joints.len() {
        let next = if link + 1 < joints.len() {
            joints[link + 1].origin
        } else {
            tip
        };
        let len = v3(next).norm();
        if len == 0.0 {
            continue;
        }
        for k in 0..per_link {
            let s = (k as f64 + 0.5) / per_link as f64;
            pts.push(BodyPoint {
                link,
                offset: [next[0] * s, next[1] * s, next[2] * s],
                radius,
            });
        }
    }
    pts.push(BodyPoint {
        link: joints.len(),
        offset: [0.0; 3],
        radius,
    });
    pts
}

/// Planar three-link arm with unit links, joint limits ±2.6 rad (base ±2.9).
pub fn planar3(points_per_link: usize, point_radius: f64) -> ChainModel {
    let z = [0.0, 0.0, 1.0];
    let joints = vec![
        Joint { axis: z, origin: [0.0; 3], rpy: [0.0; 3], lower: -2.9, upper: 2.9 },
        Joint { axis: z, origin: [1.0, 0.0, 0.0], rpy: [0.0; 3], lower: -2.6, upper: 2.6 },
        Joint { axis: z, origin: [1.0, 0.0, 0.0], rpy: [0.0; 3], lower: -2.6, upper: 2.6 },
    ];
    let tip = [1.0, 0.0, 0.0];
    let body_points = default_body_points(&joints, tip, points_per_link, point_radius);
    ChainModel { joints, tip, body_points }
}

/// Planar two-link arm with unit links.
pub fn planar2() -> ChainModel {
    let z = [0.0, 0.0, 1.0];
    let joints = vec![
        Joint { axis: z, origin: [0.0; 3], rpy: [0.0; 3], lower: -3.0, upper: 3.0 },
        Joint { axis: z, origin: [1.0, 0.0, 0.0], rpy: [0.0; 3], lower: -3.0, upper: 3.0 },
    ];
    let tip = [1.0, 0.0, 0.0];
    let body_points = default_body_points(&joints, tip, 1, 0.05);
    ChainModel { joints, tip, body_points }
}

/// Seven-joint arm: axis-aligned 3-DOF shoulder (z, y, x), 1-DOF elbow (y),
/// axis-aligned 3-DOF wrist (x, y, z). Upper arm and forearm are 1.0 long
/// along `x`; the hand adds 0.25.
pub fn arm7(points_per_link: usize, point_radius: f64) -> ChainModel {
    let (x, y, z) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
    let j = |axis: [f64; 3], origin: [f64; 3], lower: f64, upper: f64| Joint {
        axis,
        origin,
        rpy: [0.0; 3],
        lower,
        upper,
    };
    let joints = vec![
        j(z, [0.0; 3], -2.9, 2.9),
        j(y, [0.0; 3], -2.0, 2.0),
        j(x, [0.0; 3], -2.9, 2.9),
        j(y, [1.0, 0.0, 0.0], -2.7, 2.7),
        j(x, [1.0, 0.0, 0.0], -2.9, 2.9),
        j(y, [0.0; 3], -2.0, 2.0),
        j(z, [0.0; 3], -2.9, 2.9),
    ];
    let tip = [0.25, 0.0, 0.0];
    let body_points = default_body_points(&joints, tip, points_per_link, point_radius);
    ChainModel { joints, tip, body_points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskmap::check_jacobian;
    use std::f64::consts::FRAC_PI_2;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn planar_two_link_stretched() {
        let m = planar2();
        let f = forward_frame(&m, &v(&[0.0, 0.0]), 2).unwrap();
        assert!((f.origin - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-15);
        let f = forward_frame(&m, &v(&[FRAC_PI_2, 0.0]), 2).unwrap();
        assert!((f.origin - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn out_of_range_link_rejected() {
        let m = planar2();
        assert!(matches!(
            forward_frame(&m, &v(&[0.0, 0.0]), 3),
            Err(Error::IndexOutOfRange { .. })
        ));
        let m = Arc::new(m);
        assert!(body_point_map(&m, 99).is_err());
        assert!(axis_target_map(&m, 5, Axis::X).is_err());
    }

    #[test]
    fn frame_jacobians_match_finite_differences() {
        let m = arm7(1, 0.05);
        let mut rng_q = 0.1;
        for link in 0..m.num_links() {
            let q = Vector::from_fn(7, |i, _| ((i as f64 + 1.0) * 0.37 + rng_q).sin());
            rng_q += 0.2;
            let f = forward_frame(&m, &q, link).unwrap();
            let h = 1e-6;
            for c in 0..7 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[c] += h;
                qm[c] -= h;
                let fp = forward_frame(&m, &qp, link).unwrap();
                let fm = forward_frame(&m, &qm, link).unwrap();
                let d_origin = (fp.origin - fm.origin) / (2.0 * h);
                let col = f.origin_jacobian.column(c);
                for r in 0..3 {
                    assert!((d_origin[r] - col[r]).abs() < 1e-5);
                }
                for a in 0..3 {
                    let d_axis = (fp.axes[a] - fm.axes[a]) / (2.0 * h);
                    for r in 0..3 {
                        assert!((d_axis[r] - f.axis_jacobians[a][(r, c)]).abs() < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn axes_stay_orthonormal() {
        let m = arm7(1, 0.05);
        for k in 0..50 {
            let q = Vector::from_fn(7, |i, _| (k as f64 * 0.31 + i as f64).cos() * 2.0);
            let f = forward_frame(&m, &q, 7).unwrap();
            for i in 0..3 {
                assert!((f.axes[i].norm() - 1.0).abs() < 1e-9);
                for j in (i + 1)..3 {
                    assert!(f.axes[i].dot(&f.axes[j]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn anchored_base_point_is_constant() {
        let mut m = planar2();
        m.body_points = vec![BodyPoint { link: 0, offset: [0.0; 3], radius: 0.1 }];
        let m = Arc::new(m);
        let map = body_point_map(&m, 0).unwrap();
        let e = map.eval(&v(&[0.7, -1.1])).unwrap();
        assert_eq!(e.value, Vector::zeros(3));
        assert!(e.jacobian.amax() < 1e-15);
    }

    #[test]
    fn end_effector_point_matches_frame_origin() {
        let m = Arc::new(planar3(1, 0.05));
        let last = m.body_points.len() - 1;
        let map = body_point_map(&m, last).unwrap();
        let q = v(&[0.3, -0.4, 1.2]);
        let e = map.eval(&q).unwrap();
        let f = forward_frame(&m, &q, 3).unwrap();
        assert!((e.value - Vector::from_column_slice(f.origin.as_slice())).amax() < 1e-15);
        assert!((e.jacobian - f.origin_jacobian).amax() < 1e-15);
    }

    #[test]
    fn body_point_jacobians_pass_check() {
        let m = Arc::new(arm7(2, 0.05));
        for i in 0..m.body_points.len() {
            let map = body_point_map(&m, i).unwrap();
            let r = check_jacobian(&map, 100, 1e-5, i as u64);
            assert!(r.passed, "point {i}: {r:?}");
        }
    }

    #[test]
    fn planar_heading_axis_offset() {
        let m = Arc::new(planar3(1, 0.05));
        let q = v(&[0.0, 0.0, 0.0]);
        let tip = axis_target_map(&m, 3, Axis::X).unwrap().eval(&q).unwrap().value;
        assert!((tip - v(&[4.0, 0.0, 0.0])).amax() < 1e-15);
        let r = check_jacobian(&axis_target_map(&m, 3, Axis::Y).unwrap(), 50, 1e-5, 4);
        assert!(r.passed);
    }

    #[test]
    fn origin_and_two_axes_constrain_the_frame() {
        let m = Arc::new(arm7(1, 0.05));
        let q = v(&[0.3, -0.5, 0.8, 1.1, -0.4, 0.6, 0.2]);
        let origin = end_effector_map(&m).eval(&q).unwrap().jacobian;
        let ax = axis_target_map(&m, 7, Axis::X).unwrap().eval(&q).unwrap().jacobian;
        let ay = axis_target_map(&m, 7, Axis::Y).unwrap().eval(&q).unwrap().jacobian;
        let mut stacked = Matrix::zeros(9, 7);
        stacked.view_mut((0, 0), (3, 7)).copy_from(&origin);
        stacked.view_mut((3, 0), (3, 7)).copy_from(&ax);
        stacked.view_mut((6, 0), (3, 7)).copy_from(&ay);
        // a rigid frame has 6 degrees of freedom
        assert_eq!(stacked.rank(1e-9), 6);
    }

    #[test]
    fn velocity_consistency() {
        let m = Arc::new(planar3(1, 0.05));
        let map = end_effector_map(&m);
        let q = v(&[0.2, 0.9, -0.3]);
        let qd = v(&[0.5, -1.0, 0.25]);
        let eps = 1e-6;
        let fd = (map.eval(&(&q + &qd * eps)).unwrap().value - map.eval(&(&q - &qd * eps)).unwrap().value)
            / (2.0 * eps);
        let an = map.eval(&q).unwrap().jacobian * &qd;
        assert!((fd - an).amax() < 1e-5);
    }

    #[test]
    fn self_collision_pairs_skip_neighbours() {
        let m = planar3(1, 0.05);
        // links 0, 1, 2 midpoints and the tool point on link 3
        assert_eq!(self_collision_pairs(&m, 2), vec![(0, 2), (0, 3), (1, 3)]);
    }

    #[test]
    fn validation_catches_bad_models() {
        let mut m = planar2();
        m.joints[0].lower = 4.0;
        assert!(m.validate().is_err());
        let mut m = planar2();
        m.joints[1].axis = [0.0, 0.0, 2.0];
        assert!(m.validate().is_err());
        assert!(planar3(2, 0.1).validate().is_ok());
        assert!(arm7(1, 0.1).validate().is_ok());
    }
}
