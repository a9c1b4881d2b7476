//! Random walks with heavy-tailed jumps in balanced random environments.
//!
//! The crate samples environments, simulates walks exactly, evaluates the
//! discrete and limit generators on smooth test functions and audits the
//! conditions under which the scaled walk converges.

// `!(x > 0.0)` is deliberate: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alias;
pub mod audit;
pub mod env;
pub mod genlab;
pub mod harness;
pub mod kernel;
pub mod lattice;
pub mod limitref;
pub mod par;
pub mod quad;
pub mod rng;
pub mod stats;
pub mod testfn;
pub mod walker;

pub use env::{EnvError, EnvironmentSpec, Fluctuation, KappaField, MeanField};
pub use kernel::{JumpDraw, JumpKernelSampler, KernelError, KernelMode};
pub use lattice::LatticePoint;
pub use par::Workers;
pub use walker::{ensemble, exit_time, simulate, EnsembleConfig, ExitOutcome, Trajectory, WalkError};
