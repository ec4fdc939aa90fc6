//! Simulation and verification of exit times of multi-dimensional
//! semimartingales under sublinear (upper) expectation.
//!
//! The crate is organized bottom-up:
//!
//! * [`path_engine`]: grid paths, the path metric, per-path random streams;
//! * [`domain_geometry`]: analytic open sets with exact membership;
//! * [`measure_family`]: control sets, control laws and path simulation;
//! * [`exit_time`]: exit times from a set and from its closure;
//! * [`upper_expectation`]: max-over-laws estimators of `Ê` and `c`;
//! * [`regularity_lab`]: condition checkers, barrier and moment bounds,
//!   exit-identity and quasi-continuity experiments, counterexamples;
//! * [`cli`]: the JSON-configured experiment runner behind `nlexit`.

pub mod cli;
pub mod domain_geometry;
pub mod error;
pub mod exit_time;
pub mod linalg;
pub mod measure_family;
pub mod path_engine;
pub mod regularity_lab;
mod tagged;
pub mod upper_expectation;

pub use error::{Error, Result};
