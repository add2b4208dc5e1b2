//! First-order relational probabilistic logic with implicit learning:
//! IO, simulation, solver bridge, learner, and brute-force oracle on top
//! of the `foprl-core` algebra.

pub mod error;
pub mod learner;
pub mod oracle;
pub mod partial;
pub mod report;
pub mod solver;

pub use foprl_core as core;
