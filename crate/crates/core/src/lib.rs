//! Optimal control of the defocusing quintic wave equation with
//! time-sliced `L^2` constraints and `L^1(L^2)` sparsity.

pub mod checkpoint;
pub mod checks;
pub mod commands;
pub mod config;
pub mod error;
pub mod feasible;
pub mod grid;
pub mod kkt;
pub mod norms;
pub mod objective;
pub mod optimizer;
pub mod report;
pub mod solver;

pub use error::{Error, Result};
pub use feasible::{ConstraintProfile, NodeSet};
pub use grid::{SpaceGrid, SpectralField, StatePair};
pub use norms::{MixedNormReport, TimeGrid};
pub use objective::{CostBreakdown, CostParams, Extended, FirstOrder, GradientField, Problem};
pub use optimizer::{IterateLog, OptimizeConfig, OptimizeResult, Termination};
pub use solver::{ControlTrajectory, InitialData, SolverParams, StateTrajectory};
