//! Ground-state qubit observables and entanglement entropy of the ohmic
//! spin-boson model, computed with Wilson's numerical renormalization group
//! applied to the equivalent anisotropic Kondo model.

// `!(x > 0.0)` guards intentionally reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod config;
pub mod engine;
pub mod error;
pub mod observables;
pub mod oracle;
pub mod params;
pub mod solver;
pub mod sweep;
pub mod verify;

pub use chain::WilsonChain;
pub use config::NrgConfig;
pub use engine::{IterationState, Sector};
pub use error::{Error, Result};
pub use observables::{entanglement_entropy, ObservableRecord, OperatorBlocks};
pub use params::{map_to_kondo, KondoParams, SpinBosonPoint};
pub use solver::{find_alpha_max, run, run_point, RunResult};
pub use sweep::{run_sweep, Format, SweepSpec};
