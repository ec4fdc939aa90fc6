//! Checkers and experiments built on the simulation layers: the
//! nondegeneracy/controllability conditions, barrier algebra, the moment
//! bound, the exit identity under refinement, quasi-continuity probes,
//! counterexample runners and the partition-of-unity approximation.

pub mod barrier;
pub mod conditions;
pub mod counterexample;
pub mod identity;
pub mod moment;
pub mod partition;
pub mod qc;

pub use barrier::{barrier_coefficient, barrier_derivative_check, barrier_threshold, BarrierParams};
pub use conditions::{check_conditions, Clause, ConditionParams, ConditionReport, ControlRule};
pub use counterexample::{anisotropic_2d_run, degenerate_gbm_run, pointmass_run, WitnessSetup};
pub use identity::{exit_identity_experiment, IdentityReport, IdentitySetup};
pub use moment::{moment_bound_experiment, MomentBoundParams, MomentReport};
pub use partition::{partition_indicator_approx, PartitionReport, PartitionScheme};
pub use qc::{qc_probe, NamedFunctional, QcReport, QcSetup};
