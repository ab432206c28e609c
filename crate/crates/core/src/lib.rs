//! Optimal output consensus for networks of heterogeneous MIMO LTI agents.
//!
//! Each agent runs a primal-dual optimal signal generator over the
//! communication graph and a high-gain tracking controller that steers its
//! output to the generator state through a normal-form precompensator.

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the matrix algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod controller;
pub mod convex;
pub mod error;
pub mod generator;
pub mod graph;
pub mod linalg;
pub mod plant;
pub mod scenario;
pub mod sim;

pub use controller::{Feedback, GradientKind, Variant};
pub use convex::{ConvexityClass, Cost, CostFunction};
pub use error::{Assumption, Error, Result};
pub use graph::WeightedGraph;
pub use plant::{LtiPlant, NormalForm};
pub use scenario::{load_scenario, parse_scenario, ScenarioFile};
pub use sim::{Scenario, Simulation, Trajectory};
