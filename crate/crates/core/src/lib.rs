//! Reference-point based evolutionary multi-objective optimization.

pub mod algorithms;
pub mod harness;
pub mod metrics;
pub mod pareto;
pub mod problems;
pub mod scalarize;
pub mod steer;
