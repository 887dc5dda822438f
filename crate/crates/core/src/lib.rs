//! Distortion distances, curvature functionals and volume-growth flows on
//! finite metric measure spaces.

pub mod couplings;
pub mod distortion;
pub mod error;
pub mod functionals;
pub mod geometry;
pub mod growthflow;
pub mod io;
pub mod sampling;
pub mod spaces;
pub mod transport;

pub use couplings::Coupling;
pub use distortion::{dist, DistResult, Solver, SolverConfig};
pub use error::{Error, Result};
pub use geometry::{TangentVector, Verdict};
pub use growthflow::{GrowthProfile, WeightFunction};
pub use spaces::{FiniteSpace, SpaceKind};
