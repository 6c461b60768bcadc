//! Multi-scale random conductance model on Z^2.
//!
//! The crate is organised bottom-up:
//!
//! - [`schedule`]: the scale sequences `a_n`, `b_n`, `beta_n`, `eta_n`, `K_n`
//!   and their admissibility checks.
//! - [`environment`]: the hierarchical obstacle field `mu^n` on edges.
//! - [`walk`]: exact event-driven simulation of the variable-speed walk.
//! - [`decomposition`]: stopping times, time splitting and excursion
//!   experiments.
//! - [`network`]: Dirichlet problems, effective resistance, capacitary
//!   measures, Green functions and the calibration of `K_n`.
//! - [`stats`]: Skorokhod distance, oscillation, KS tests and scaling-limit
//!   diagnostics.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decomposition;
pub mod environment;
pub mod lattice;
pub mod network;
pub mod rng;
pub mod schedule;
pub mod stats;
pub mod walk;

pub use environment::{EdgeClass, Environment, OffsetSequence};
pub use lattice::{Direction, Edge, LatticePoint};
pub use rng::RngStream;
pub use schedule::ParameterSchedule;
