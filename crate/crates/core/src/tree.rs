//! Tree of task spaces. Each edge carries a differentiable map from the
//! parent space to the child space; policies attach to any node. Evaluation
//! pushes `(x, ẋ = J ẋ_parent)` down the tree and pulls policies back up in
//! the unresolved form, so the only pseudoinverse happens at the root.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::algebra::{accumulate, add_unresolved, pull_unresolved, unresolve, MapEval, RmpEval, UnresolvedRmp};
use crate::error::{check_dim, Error, Result};
use crate::joint_limits::{apply_joint_limits, SigmoidLimitMap};
use crate::matops::{Matrix, Vector};
use crate::policies::{PolicyRole, SharedPolicy};
use crate::taskmap::SharedMap;

pub type NodeId = usize;

#[derive(Debug, Clone)]
struct Node {
    dim: usize,
    edge: Option<SharedMap>,
    children: Vec<NodeId>,
    policies: Vec<SharedPolicy>,
}

#[derive(Debug, Clone)]
pub struct RmpTree {
    nodes: Vec<Node>,
}

/// A leaf policy evaluated at its node, with the Jacobian of the composed
/// map from the root to that node.
#[derive(Debug, Clone)]
pub struct LeafTerm {
    pub node: NodeId,
    pub name: &'static str,
    pub role: PolicyRole,
    pub jacobian: Matrix,
    pub rmp: RmpEval,
}

impl RmpTree {
    pub const ROOT: NodeId = 0;

    pub fn new(root_dim: usize) -> Self {
        Self {
            nodes: vec![Node {
                dim: root_dim,
                edge: None,
                children: Vec::new(),
                policies: Vec::new(),
            }],
        }
    }

    pub fn root_dim(&self) -> usize {
        self.nodes[0].dim
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_policies(&self) -> usize {
        self.nodes.iter().map(|n| n.policies.len()).sum()
    }

    pub fn node_dim(&self, node: NodeId) -> Result<usize> {
        self.node(node).map(|n| n.dim)
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id).ok_or(Error::IndexOutOfRange {
            what: "tree node",
            index: id,
            len: self.nodes.len(),
        })
    }

    pub fn add_child(&mut self, parent: NodeId, map: SharedMap) -> Result<NodeId> {
        let pdim = self.node(parent)?.dim;
        check_dim("edge map domain", pdim, map.domain_dim())?;
        let id = self.nodes.len();
        self.nodes.push(Node {
            dim: map.codomain_dim(),
            edge: Some(map),
            children: Vec::new(),
            policies: Vec::new(),
        });
        self.nodes[parent].children.push(id);
        Ok(id)
    }

    pub fn attach(&mut self, node: NodeId, policy: SharedPolicy) -> Result<()> {
        let dim = self.node(node)?.dim;
        check_dim("policy dimension", dim, policy.dim())?;
        self.nodes[node].policies.push(policy);
        Ok(())
    }

    /// Child with a new map and a single policy in one call.
    pub fn add_leaf(&mut self, parent: NodeId, map: SharedMap, policy: SharedPolicy) -> Result<NodeId> {
        let id = self.add_child(parent, map)?;
        self.attach(id, policy)?;
        Ok(id)
    }

    fn check_root_state(&self, q: &Vector, qdot: &Vector) -> Result<()> {
        check_dim("root position", self.root_dim(), q.len())?;
        check_dim("root velocity", self.root_dim(), qdot.len())
    }

    /// Pulls every policy back to the root and sums in the unresolved form.
    pub fn evaluate_root(&self, q: &Vector, qdot: &Vector) -> Result<UnresolvedRmp> {
        self.check_root_state(q, qdot)?;
        self.eval_node(Self::ROOT, q, qdot)
    }

    fn eval_node(&self, id: NodeId, x: &Vector, xdot: &Vector) -> Result<UnresolvedRmp> {
        let node = &self.nodes[id];
        let mut acc = UnresolvedRmp::zero(node.dim);
        for p in &node.policies {
            accumulate(&mut acc, &unresolve(&p.evaluate(x, xdot)?))?;
        }
        for &c in &node.children {
            let map = self.nodes[c].edge.as_ref().expect("non-root nodes have an edge");
            let me = map.eval(x)?;
            let child_v = &me.jacobian * xdot;
            let child = self.eval_node(c, &me.value, &child_v)?;
            accumulate(&mut acc, &pull_unresolved(&me, &child)?)?;
        }
        Ok(acc)
    }

    /// Same result as [`evaluate_root`](Self::evaluate_root), but at every node
    /// the contributions are shuffled and merged in random pairs.
    pub fn evaluate_root_shuffled<R: Rng + ?Sized>(&self, q: &Vector, qdot: &Vector, rng: &mut R) -> Result<UnresolvedRmp> {
        self.check_root_state(q, qdot)?;
        self.eval_node_shuffled(Self::ROOT, q, qdot, rng)
    }

    fn eval_node_shuffled<R: Rng + ?Sized>(&self, id: NodeId, x: &Vector, xdot: &Vector, rng: &mut R) -> Result<UnresolvedRmp> {
        let node = &self.nodes[id];
        let mut parts = Vec::new();
        let mut children = node.children.clone();
        children.shuffle(rng);
        for &c in &children {
            let map = self.nodes[c].edge.as_ref().expect("non-root nodes have an edge");
            let me = map.eval(x)?;
            let child_v = &me.jacobian * xdot;
            let child = self.eval_node_shuffled(c, &me.value, &child_v, rng)?;
            parts.push(pull_unresolved(&me, &child)?);
        }
        for p in &node.policies {
            parts.push(unresolve(&p.evaluate(x, xdot)?));
        }
        parts.shuffle(rng);
        while parts.len() > 1 {
            let i = rng.random_range(0..parts.len());
            let a = parts.swap_remove(i);
            let j = rng.random_range(0..parts.len());
            let b = parts.swap_remove(j);
            parts.push(add_unresolved(&a, &b)?);
        }
        Ok(parts.pop().unwrap_or_else(|| UnresolvedRmp::zero(node.dim)))
    }

    /// Every policy evaluated at its node together with the composed
    /// root-to-node Jacobian, in depth-first order.
    pub fn leaf_terms(&self, q: &Vector, qdot: &Vector) -> Result<Vec<LeafTerm>> {
        self.check_root_state(q, qdot)?;
        let mut out = Vec::new();
        let n = self.root_dim();
        self.collect_terms(Self::ROOT, q, qdot, &Matrix::identity(n, n), &mut out)?;
        Ok(out)
    }

    fn collect_terms(&self, id: NodeId, x: &Vector, xdot: &Vector, jac: &Matrix, out: &mut Vec<LeafTerm>) -> Result<()> {
        let node = &self.nodes[id];
        for p in &node.policies {
            out.push(LeafTerm {
                node: id,
                name: p.name(),
                role: p.role(),
                jacobian: jac.clone(),
                rmp: p.evaluate(x, xdot)?,
            });
        }
        for &c in &node.children {
            let map = self.nodes[c].edge.as_ref().expect("non-root nodes have an edge");
            let me = map.eval(x)?;
            let child_v = &me.jacobian * xdot;
            let child_j = &me.jacobian * jac;
            self.collect_terms(c, &me.value, &child_v, &child_j, out)?;
        }
        Ok(())
    }

    /// Direct leaf-to-root pullbacks summed in one pass.
    pub fn evaluate_flat(&self, q: &Vector, qdot: &Vector) -> Result<UnresolvedRmp> {
        let mut acc = UnresolvedRmp::zero(self.root_dim());
        for t in self.leaf_terms(q, qdot)? {
            let me = MapEval::new(Vector::zeros(t.jacobian.nrows()), t.jacobian)?;
            accumulate(&mut acc, &pull_unresolved(&me, &unresolve(&t.rmp))?)?;
        }
        Ok(acc)
    }
}

/// Root evaluation followed by the joint-limit resolution; returns `q̈`.
pub fn solve_policy(tree: &RmpTree, limits: &SigmoidLimitMap, q: &Vector, qdot: &Vector) -> Result<Vector> {
    let root = tree.evaluate_root(q, qdot)?;
    Ok(apply_joint_limits(limits, &root, q, qdot)?.accel)
}
