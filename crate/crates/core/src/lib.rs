//! Photoacoustic tomography toolkit: a k-space pseudospectral acoustic
//! solver, the forward / adjoint / time-reversal operators built on it,
//! variational reconstruction methods and verification instruments.

pub mod analysis;
pub mod error;
pub mod grid;
pub mod medium;
pub mod operators;
pub mod real;
pub mod recon;
pub mod scenarios;
pub mod solver;

pub use error::{PatError, Result};
pub use grid::{Grid, KSpaceOperators, Shift};
pub use medium::{Medium, PmlOperators, PmlSettings};
pub use operators::{ImagingOperator, PatOperatorConfig, PatOperators};
pub use real::Real;
pub use recon::{Method, ReconSettings};
pub use scenarios::Scenario;
pub use solver::{AcousticState, SensorArray, Solver, SourceSchedule, TimeAxis};
