//! Riemannian motion policies: the policy algebra, task maps, robot
//! kinematics, leaf controllers, joint-limit handling, the policy tree and a
//! scenario simulator for comparing combination strategies.

pub mod algebra;
pub mod error;
pub mod joint_limits;
pub mod kinematics;
pub mod matops;
pub mod policies;
pub mod simulator;
pub mod taskmap;
pub mod tree;

pub use algebra::{MapEval, RmpEval, UnresolvedRmp};
pub use error::{Error, Result};
pub use matops::{Matrix, Vector};
pub mod verify;
