//! Transport-map Jacobians of simulated learning dynamics, and the rank,
//! thermodynamic and capacity diagnostics computed from them.
//!
//! Everything operates on quadratic tasks, where Jacobians, Gaussian
//! ensembles and task-preserving subspaces are available in closed form.

pub mod capacity;
pub mod error;
pub mod noise;
pub mod spectral;
pub mod tasks;
pub mod thermo;
pub mod transport;

pub use error::{Error, Result};
pub use spectral::{Matrix, SubspaceBasis, Vector};
pub use tasks::{make_task_pair, QuadraticTask, TaskPair, TaskPairSpec};
pub use thermo::GaussianState;
pub use transport::{StepKind, StepRule, Trajectory};
