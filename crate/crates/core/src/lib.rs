//! Numerical laboratory for multi-label neural collapse under the
//! unconstrained feature model (UFM).
//!
//! * [`labelspace`]: label-set combinatorics, label matrices, datasets.
//! * [`ufm`]: the pick-all-labels cross-entropy objective, gradient, HVP.
//! * [`optimizer`]: heavy-ball gradient descent to critical points.
//! * [`theory`]: the analytic global minimizer and its verifier.
//! * [`metrics`]: NC1, NC2, NC3 and the tag-wise angle ratio NC_m.
//! * [`lemmas`]: executable checks of the label-matrix and loss identities.
//! * [`landscape`]: curvature probes at critical points.
//! * [`cli_io`]: configuration, snapshots, trajectories, subcommands.

pub mod cli_io;
pub mod error;
pub mod labelspace;
pub mod landscape;
pub mod lemmas;
pub mod metrics;
pub mod optimizer;
pub mod theory;
pub mod ufm;

pub use error::{Error, Result};
