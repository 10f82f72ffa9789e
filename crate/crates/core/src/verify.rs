//! Invariant suites that can run outside the test harness. Each check draws
//! random instances from a seeded generator, reports the worst error against
//! its tolerance, and names the seed that reproduces it.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{
    add_unresolved, pull, pull_unresolved, push, resolve, unresolve, MapEval, RmpEval, UnresolvedRmp,
};
use crate::error::{Error, Result};
use crate::joint_limits::{apply_joint_limits, LimitParams, SigmoidLimitMap};
use crate::kinematics::{arm7, axis_target_map, body_point_map, end_effector_map, planar3, Axis, ChainModel};
use crate::matops::{is_psd, pinv, Matrix, Vector};
use crate::policies::{
    collision_weight, obstacle_projection, obstacle_projection_outer, soft_v, AttractorParams, AttractorPolicy,
    CollisionParams, CollisionPolicy, NegatedMetric, RedundancyParams, RedundancyPolicy, SharedPolicy,
};
use crate::taskmap::{check_jacobian, AffineMap, DifferentiableMap, IdentityMap, SharedMap};
use crate::tree::RmpTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Algebra,
    Kinematics,
    Limits,
    Controllers,
    Tree,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Algebra, Suite::Kinematics, Suite::Limits, Suite::Controllers, Suite::Tree];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Algebra => "algebra",
            Suite::Kinematics => "kinematics",
            Suite::Limits => "limits",
            Suite::Controllers => "controllers",
            Suite::Tree => "tree",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `"all"` or a single suite name.
pub fn parse_selector(s: &str) -> Result<Vec<Suite>> {
    if s == "all" {
        return Ok(Suite::ALL.to_vec());
    }
    Suite::ALL
        .iter()
        .copied()
        .find(|x| x.name() == s)
        .map(|x| vec![x])
        .ok_or_else(|| Error::Config(format!("unknown suite '{s}' (expected all, algebra, kinematics, limits, controllers or tree)")))
}

/// Deliberate corruption used as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Every policy metric is negated before use.
    NegatedMetric,
}

impl FromStr for Fault {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negated-metric" | "negated_metric" => Ok(Fault::NegatedMetric),
            _ => Err(Error::Config(format!("unknown fault '{s}' (expected negated-metric)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 1, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub suite: Suite,
    pub invariant: &'static str,
    pub samples: usize,
    pub tolerance: f64,
    pub max_error: f64,
    pub passed: bool,
    pub seed: u64,
    /// First failure, if any.
    pub detail: Option<String>,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}/{}: {} samples, max error {:.3e}, tolerance {:.1e}, seed {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.invariant,
            self.samples,
            self.max_error,
            self.tolerance,
            self.seed
        )?;
        if let Some(d) = &self.detail {
            write!(f, " ({d})")?;
        }
        Ok(())
    }
}

/// Accumulates the worst error of one invariant.
struct Check {
    outcome: CheckOutcome,
}

impl Check {
    fn new(suite: Suite, invariant: &'static str, tolerance: f64, seed: u64) -> Self {
        Self {
            outcome: CheckOutcome {
                suite,
                invariant,
                samples: 0,
                tolerance,
                max_error: 0.0,
                passed: true,
                seed,
                detail: None,
            },
        }
    }

    fn record(&mut self, error: f64) {
        let o = &mut self.outcome;
        o.samples += 1;
        let e = if error.is_nan() { f64::INFINITY } else { error };
        o.max_error = o.max_error.max(e);
        if e > o.tolerance && o.passed {
            o.passed = false;
            o.detail = Some(format!("first failure at sample {}", o.samples - 1));
        }
    }

    fn fail(&mut self, why: String) {
        self.outcome.samples += 1;
        self.outcome.max_error = f64::INFINITY;
        if self.outcome.passed {
            self.outcome.passed = false;
            self.outcome.detail = Some(why);
        }
    }

    fn finish(self) -> CheckOutcome {
        self.outcome
    }
}

/// Runs the selected suites in order.
pub fn run(suites: &[Suite], opts: &VerifyOptions) -> Vec<CheckOutcome> {
    suites
        .iter()
        .flat_map(|s| match s {
            Suite::Algebra => algebra_suite(opts),
            Suite::Kinematics => kinematics_suite(opts),
            Suite::Limits => limits_suite(opts),
            Suite::Controllers => controllers_suite(opts),
            Suite::Tree => tree_suite(opts),
        })
        .collect()
}

fn rng_for(opts: &VerifyOptions, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    rng
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn rand_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Gram matrix `BᵀB` of a random `k × n` factor; rank `min(k, n)`.
fn rand_gram(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix {
    let b = rand_matrix(rng, k, n);
    b.transpose() * b
}

/// Entries on a coarse dyadic grid, so sums and products of a few of them
/// are exact in floating point.
fn dyadic_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-16i32..=16) as f64 / 8.0)
}

fn metric_sign(opts: &VerifyOptions) -> f64 {
    match opts.fault {
        Some(Fault::NegatedMetric) => -1.0,
        None => 1.0,
    }
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn rel_v(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Smallest eigenvalue clipped at zero, as a positive violation.
fn psd_violation(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    let min = sym.symmetric_eigen().eigenvalues.min();
    (-min).max(0.0) / m.amax().max(1.0)
}

fn algebra_suite(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let s = Suite::Algebra;
    let seed = opts.seed;
    let sign = metric_sign(opts);
    let mut out = Vec::new();

    let mut psd = Check::new(s, "metric PSD", 1e-9, seed);
    let mut comm = Check::new(s, "commutativity (exact)", 0.0, seed);
    let mut assoc_u = Check::new(s, "unresolved associativity (exact)", 0.0, seed);
    let mut assoc_r = Check::new(s, "resolved associativity", 1e-9, seed);
    let mut linear = Check::new(s, "pullback linearity", 1e-9, seed);
    let mut compose = Check::new(s, "composition associativity", 1e-9, seed);
    let mut rng = rng_for(opts, 1);
    for _ in 0..1000 {
        let n = rng.random_range(1..=7);
        let m = rng.random_range(1..=7);
        let dy = |rng: &mut ChaCha8Rng| {
            let b = dyadic_matrix(rng, n + 1, n);
            UnresolvedRmp {
                force: dyadic_matrix(rng, n, 1).column(0).into_owned(),
                metric: b.transpose() * b * sign,
            }
        };
        let (a, b, c) = (dy(&mut rng), dy(&mut rng), dy(&mut rng));
        for u in [&a, &b, &c] {
            match is_psd(&u.metric, 1e-9) {
                Ok(true) => psd.record(0.0),
                _ => psd.record(psd_violation(&u.metric)),
            }
        }
        let ab = add_unresolved(&a, &b).unwrap();
        let ba = add_unresolved(&b, &a).unwrap();
        comm.record((&ab.force - &ba.force).amax().max((&ab.metric - &ba.metric).amax()));
        let l = add_unresolved(&ab, &c).unwrap();
        let r = add_unresolved(&a, &add_unresolved(&b, &c).unwrap()).unwrap();
        assoc_u.record((&l.force - &r.force).amax().max((&l.metric - &r.metric).amax()));

        // resolved form with generic reals and full-rank metrics
        let gen = |rng: &mut ChaCha8Rng| RmpEval {
            accel: rand_vector(rng, n, 3.0),
            metric: rand_gram(rng, n, n + 2) * sign,
        };
        let (x, y, z) = (gen(&mut rng), gen(&mut rng), gen(&mut rng));
        let sum2 = |p: &RmpEval, q: &RmpEval| resolve(&add_unresolved(&unresolve(p), &unresolve(q))?);
        match (|| -> Result<(RmpEval, RmpEval)> {
            Ok((sum2(&sum2(&x, &y)?, &z)?, sum2(&x, &sum2(&y, &z)?)?))
        })() {
            Ok((l, r)) => assoc_r.record(rel_v(&l.accel, &r.accel).max(rel(&l.metric, &r.metric))),
            Err(e) => assoc_r.fail(e.to_string()),
        }

        // pullback linearity and composition through two random linear maps
        let k = rng.random_range(1..=7);
        let j1 = MapEval::new(Vector::zeros(m), rand_matrix(&mut rng, m, k)).unwrap();
        let j2 = MapEval::new(Vector::zeros(n), rand_matrix(&mut rng, n, m)).unwrap();
        let ua = UnresolvedRmp {
            force: rand_vector(&mut rng, n, 3.0),
            metric: rand_gram(&mut rng, n, n) * sign,
        };
        let ub = UnresolvedRmp {
            force: rand_vector(&mut rng, n, 3.0),
            metric: rand_gram(&mut rng, n, n) * sign,
        };
        let lhs = pull_unresolved(&j2, &add_unresolved(&ua, &ub).unwrap()).unwrap();
        let rhs = add_unresolved(&pull_unresolved(&j2, &ua).unwrap(), &pull_unresolved(&j2, &ub).unwrap()).unwrap();
        linear.record(rel_v(&lhs.force, &rhs.force).max(rel(&lhs.metric, &rhs.metric)));
        let both = MapEval::new(Vector::zeros(n), &j2.jacobian * &j1.jacobian).unwrap();
        let once = pull_unresolved(&both, &ua).unwrap();
        let twice = pull_unresolved(&j1, &pull_unresolved(&j2, &ua).unwrap()).unwrap();
        compose.record(rel_v(&once.force, &twice.force).max(rel(&once.metric, &twice.metric)));
    }
    out.extend([psd, comm, assoc_u, assoc_r, linear, compose].map(Check::finish));

    let mut inv = Check::new(s, "push after pull is identity (full row rank)", 1e-8, seed);
    let mut simple = Check::new(s, "pulled accel equals J⁺f (full row rank)", 1e-8, seed);
    let mut rng = rng_for(opts, 2);
    for _ in 0..500 {
        let m = rng.random_range(1..=6);
        let n = rng.random_range(m..=7);
        let jm = rand_matrix(&mut rng, m, n);
        // error in these identities grows with the squared condition number
        if crate::matops::condition_number(&jm) > 100.0 {
            continue;
        }
        let j = MapEval::new(Vector::zeros(m), jm).unwrap();
        let r = RmpEval {
            accel: rand_vector(&mut rng, m, 3.0),
            metric: (rand_gram(&mut rng, m, m) + Matrix::identity(m, m) * 0.1) * sign,
        };
        match pull(&j, &r).and_then(|p| Ok((push(&j, &p)?, p))) {
            Ok((back, pulled)) => {
                inv.record(rel_v(&back.accel, &r.accel).max(rel(&back.metric, &r.metric)));
                let jp = pinv(&j.jacobian).unwrap();
                simple.record(rel_v(&pulled.accel, &(jp * &r.accel)));
            }
            Err(e) => {
                inv.fail(e.to_string());
                simple.fail(e.to_string());
            }
        }
    }
    out.push(inv.finish());
    out.push(simple.finish());
    out
}

fn kinematics_suite(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let s = Suite::Kinematics;
    let mut out = Vec::new();
    let models: [(&str, Arc<ChainModel>); 2] = [("planar3", Arc::new(planar3(3, 0.05))), ("arm7", Arc::new(arm7(2, 0.05)))];
    let mut jac = Check::new(s, "Jacobians match finite differences", 1e-5, opts.seed);
    for (stream, (_, model)) in models.iter().enumerate() {
        let mut maps: Vec<Box<dyn DifferentiableMap>> = vec![Box::new(end_effector_map(model))];
        for p in 0..model.body_points.len() {
            maps.push(Box::new(body_point_map(model, p).unwrap()));
        }
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            maps.push(Box::new(axis_target_map(model, model.dof(), axis).unwrap()));
        }
        for (k, m) in maps.iter().enumerate() {
            let rep = check_jacobian(m.as_ref(), 20, 1e-5, opts.seed ^ ((stream as u64) << 32 | k as u64));
            for _ in 0..rep.samples {
                jac.record(0.0);
            }
            jac.record(rep.max_rel_error);
        }
    }
    out.push(jac.finish());

    let mut ortho = Check::new(s, "frame axes orthonormal", 1e-12, opts.seed);
    let model = &models[1].1;
    let mut rng = rng_for(opts, 3);
    for _ in 0..200 {
        let q = rand_vector(&mut rng, model.dof(), 2.0);
        for link in 0..model.num_links() {
            let f = crate::kinematics::forward_frame(model, &q, link).unwrap();
            let r = nalgebra::Matrix3::from_columns(&f.axes);
            ortho.record((r.transpose() * r - nalgebra::Matrix3::identity()).amax());
        }
    }
    out.push(ortho.finish());
    out
}

fn limits_suite(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let s = Suite::Limits;
    let seed = opts.seed;
    let sign = metric_sign(opts);
    let map = SigmoidLimitMap::new(vec![-2.9, -2.0, 0.0], vec![2.9, 2.0, 3.0], &LimitParams::default()).unwrap();
    let mut rng = rng_for(opts, 4);

    let mut round = Check::new(s, "sigmoid round trip", 1e-9, seed);
    for _ in 0..1000 {
        let u = rand_vector(&mut rng, 3, 20.0);
        match map.sigmoid_forward(&u).and_then(|q| map.sigmoid_inverse(&q)) {
            // near saturation the logit amplifies the last bit of q by
            // 1/(s(1-s)), so the error is scaled by that growth past |u| = 14
            Ok(back) => round.record(
                (0..3)
                    .map(|i| (back[i] - u[i]).abs() / (1.0 + (u[i].abs() - 14.0).max(0.0).exp()))
                    .fold(0.0, f64::max),
            ),
            Err(e) => round.fail(e.to_string()),
        }
    }

    let mut fd = Check::new(s, "limit Jacobian matches finite differences", 1e-6, seed);
    for _ in 0..200 {
        let u = rand_vector(&mut rng, 3, 5.0);
        let h = 1e-6;
        let q = map.sigmoid_forward(&u).unwrap();
        let d = map.plain_diagonal(&q).unwrap();
        for i in 0..3 {
            let mut up = u.clone();
            let mut um = u.clone();
            up[i] += h;
            um[i] -= h;
            let num = (map.sigmoid_forward(&up).unwrap()[i] - map.sigmoid_forward(&um).unwrap()[i]) / (2.0 * h);
            fd.record((num - d[i]).abs());
        }
    }

    let mut psd = Check::new(s, "metric PSD", 1e-9, seed);
    let mut dense = Check::new(s, "regularized resolution matches dense solve", 1e-9, seed);
    for _ in 0..300 {
        let q = Vector::from_fn(3, |i, _| {
            let w = map.upper[i] - map.lower[i];
            map.lower[i] + w * rng.random_range(0.01..0.99)
        });
        let qd = rand_vector(&mut rng, 3, 2.0);
        let c = UnresolvedRmp {
            force: rand_vector(&mut rng, 3, 3.0),
            metric: {
                let k = rng.random_range(1..=4);
                rand_gram(&mut rng, 3, k) * sign
            },
        };
        match apply_joint_limits(&map, &c, &q, &qd) {
            Ok(out) => {
                psd.record(psd_violation(&out.metric));
                let dd = map.directional_jacobian(&q, &qd).unwrap().matrix();
                let h = map.regulator(&q, &qd, &dd.diagonal());
                let lhs = &dd * &c.metric * &dd + Matrix::identity(3, 3) * map.lambda;
                let rhs = &dd * &c.force + h * map.lambda;
                match lhs.lu().solve(&rhs) {
                    Some(x) => dense.record(rel_v(&out.accel, &(&dd * x))),
                    None => dense.fail("dense system singular".into()),
                }
            }
            Err(e) => {
                psd.fail(e.to_string());
                dense.fail(e.to_string());
            }
        }
    }

    let mut contain = Check::new(s, "chart step stays inside limits", 0.0, seed);
    for _ in 0..1000 {
        let q = Vector::from_fn(3, |i, _| {
            let w = map.upper[i] - map.lower[i];
            map.lower[i] + w * rng.random_range(1e-6..1.0 - 1e-6)
        });
        let qd = rand_vector(&mut rng, 3, 50.0);
        let a = rand_vector(&mut rng, 3, 500.0);
        match map.chart_step(&q, &qd, &a, 1e-2) {
            Ok((q1, _)) => contain.record(if map.check_inside(&q1).is_ok() { 0.0 } else { 1.0 }),
            Err(e) => contain.fail(e.to_string()),
        }
    }
    [round, fd, psd, dense, contain].map(Check::finish).to_vec()
}

fn controllers_suite(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let s = Suite::Controllers;
    let seed = opts.seed;
    let mut rng = rng_for(opts, 5);

    let mut sv = Check::new(s, "soft_v value, slope and asymptote", 1e-9, seed);
    for alpha in [0.5, 1.0, 10.0, 50.0] {
        sv.record((soft_v(0.0, alpha) - std::f64::consts::LN_2 / alpha).abs());
        let h = 1e-6;
        sv.record(((soft_v(h, alpha) - soft_v(-h, alpha)) / (2.0 * h)).abs());
        let g = 50.0 / alpha;
        sv.record(((soft_v(g + 1.0, alpha) - soft_v(g, alpha)) - 1.0).abs());
    }

    let mut pobs = Check::new(s, "obstacle projection dual forms agree", 1e-12, seed);
    for _ in 0..1000 {
        let n = rng.random_range(1..=3);
        let g = rand_vector(&mut rng, n, 1.0);
        let g = if g.norm() > 1e-6 { g.normalize() } else { continue };
        let v = rand_vector(&mut rng, n, 2.0);
        pobs.record((obstacle_projection(&g, &v) - obstacle_projection_outer(&g, &v)).amax());
    }

    let mut wr = Check::new(s, "collision weight endpoints", 0.0, seed);
    for r in [0.1, 0.5, 2.0] {
        wr.record((collision_weight(0.0, r) - 1.0).abs());
        wr.record(collision_weight(r, r).abs());
        wr.record(collision_weight(2.0 * r, r).abs());
        // zero slope at r, from the left
        let h = 1e-7 * r;
        wr.record(((collision_weight(r, r) - collision_weight(r - h, r)) / h).abs().max(0.0) * if h > 0.0 { 0.0 } else { 1.0 });
    }

    let mut psd = Check::new(s, "metric PSD", 1e-9, seed);
    let mut bound = Check::new(s, "attractor accel bounded by gains", 1e-12, seed);
    let policies = controller_samples(opts);
    for _ in 0..300 {
        for p in &policies {
            let x = rand_vector(&mut rng, p.dim(), 2.0);
            let xd = rand_vector(&mut rng, p.dim(), 2.0);
            match p.evaluate(&x, &xd) {
                Ok(r) => {
                    psd.record(psd_violation(&r.metric));
                    if p.name() == "attractor" {
                        let gp = crate::policies::defaults::GAIN_P;
                        let gd = crate::policies::defaults::GAIN_D;
                        bound.record((r.accel.norm() - (gp + gd * xd.norm())).max(0.0));
                    }
                }
                Err(e) => psd.fail(e.to_string()),
            }
        }
    }
    [sv, pobs, wr, psd, bound].map(Check::finish).to_vec()
}

fn controller_samples(opts: &VerifyOptions) -> Vec<SharedPolicy> {
    let ps: Vec<SharedPolicy> = vec![
        Arc::new(AttractorPolicy(AttractorParams::new(vec![0.5, -0.3, 1.0]))),
        Arc::new(
            CollisionPolicy::new(Vector3::new(0.3, 0.2, 0.0), 0.4, CollisionParams::default()).expect("valid defaults"),
        ),
        Arc::new(
            CollisionPolicy::new(
                Vector3::new(-0.5, 0.1, 0.2),
                0.3,
                CollisionParams {
                    stretch: 0.8,
                    ..CollisionParams::default()
                },
            )
            .expect("valid parameters"),
        ),
        Arc::new(RedundancyPolicy(RedundancyParams::new(vec![0.0, 0.5, -0.5]))),
    ];
    match opts.fault {
        Some(Fault::NegatedMetric) => ps.into_iter().map(|p| Arc::new(NegatedMetric(p)) as SharedPolicy).collect(),
        None => ps,
    }
}

fn tree_suite(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let s = Suite::Tree;
    let seed = opts.seed;
    let sign = metric_sign(opts);
    let mut rng = rng_for(opts, 6);

    let mut psd = Check::new(s, "metric PSD", 1e-9, seed);
    let mut path = Check::new(s, "evaluation order independence", 1e-9, seed);
    let mut optimal = Check::new(s, "root resolution matches dense least squares", 1e-8, seed);
    for _ in 0..100 {
        let (tree, terms) = random_tree(&mut rng, 7, sign);
        let q = rand_vector(&mut rng, 7, 1.0);
        let qd = rand_vector(&mut rng, 7, 1.0);
        let root = match tree.evaluate_root(&q, &qd) {
            Ok(r) => r,
            Err(e) => {
                path.fail(e.to_string());
                continue;
            }
        };
        psd.record(psd_violation(&root.metric));
        let other = tree.evaluate_root_shuffled(&q, &qd, &mut rng).unwrap();
        path.record(rel_v(&other.force, &root.force).max(rel(&other.metric, &root.metric)));

        // dense oracle: minimize Σ ‖f_i − J_i q̈‖²_{A_i}
        let mut normal = Matrix::zeros(7, 7);
        let mut rhs = Vector::zeros(7);
        for (j, r) in &terms {
            normal += j.transpose() * &r.metric * j;
            rhs += j.transpose() * &r.metric * &r.accel;
        }
        let x_dense = pinv(&normal).unwrap() * &rhs;
        let x_tree = resolve(&root).unwrap().accel;
        let e = &x_tree - &x_dense;
        let scale = (x_dense.dot(&(&normal * &x_dense))).abs().sqrt().max(1.0);
        optimal.record(e.dot(&(&normal * &e)).abs().sqrt() / scale);
    }
    [psd, path, optimal].map(Check::finish).to_vec()
}

/// Random two-level tree of linear maps with constant leaves. Returns the
/// tree and each leaf's composed Jacobian paired with its RMP.
fn random_tree(rng: &mut ChaCha8Rng, n: usize, sign: f64) -> (RmpTree, Vec<(Matrix, RmpEval)>) {
    let mut tree = RmpTree::new(n);
    let mut terms = Vec::new();
    let mut nodes: Vec<(usize, Matrix)> = vec![(RmpTree::ROOT, Matrix::identity(n, n))];
    for _ in 0..rng.random_range(1..=4) {
        let &(parent, ref pj) = &nodes[rng.random_range(0..nodes.len())];
        let pj = pj.clone();
        let pdim = pj.nrows();
        let m = rng.random_range(1..=6);
        let a = rand_matrix(rng, m, pdim);
        let map: SharedMap = Arc::new(AffineMap::linear(a.clone()));
        let id = tree.add_child(parent, map).unwrap();
        nodes.push((id, a * pj));
    }
    for _ in 0..rng.random_range(1..=12) {
        let (node, j) = nodes[rng.random_range(0..nodes.len())].clone();
        let m = j.nrows();
        let r = RmpEval {
            accel: rand_vector(rng, m, 3.0),
            metric: {
                let k = rng.random_range(1..=m + 1);
                rand_gram(rng, m, k) * sign
            },
        };
        tree.attach(node, Arc::new(crate::policies::ConstantPolicy(r.clone()))).unwrap();
        terms.push((j, r));
    }
    // an identity edge exercises the trivial map path
    let id = tree.add_child(RmpTree::ROOT, Arc::new(IdentityMap { dim: n })).unwrap();
    let r = RmpEval {
        accel: rand_vector(rng, n, 1.0),
        metric: Matrix::identity(n, n) * 0.01 * sign,
    };
    tree.attach(id, Arc::new(crate::policies::ConstantPolicy(r.clone()))).unwrap();
    terms.push((Matrix::identity(n, n), r));
    (tree, terms)
}

/// True when every outcome passed.
pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}
