//! Dual bounds from Lagrangian decomposition, with multipliers produced by
//! sub-gradient descent or by a graph neural network trained to minimize the
//! bound itself, and a depth-first branch-and-bound solver that prunes with
//! them.
//!
//! Module map:
//!
//! * [`instances`]: knapsack and shift-scheduling instances, generators, I/O;
//! * [`subsolvers`]: exact single-constraint DPs;
//! * [`lagrangian`]: `B(mu)`, its sub-gradient and sub-gradient descent;
//! * [`encoding`]: instance + partial assignment to feature graph;
//! * [`neural`]: gated graph convolution network, backward pass, Adam, model files;
//! * [`training`]: self-supervised bound minimization;
//! * [`solver`]: branch-and-bound with five bounding modes.

pub mod encoding;
pub mod instances;
pub mod lagrangian;
pub mod neural;
pub mod rng;
pub mod solver;
pub mod subsolvers;
pub mod training;

pub use instances::{Family, Instance, MkpInstance, PartialAssignment, SspInstance};
pub use lagrangian::{BoundResult, Multipliers, SubgradientConfig};
