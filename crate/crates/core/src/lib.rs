//! Discrete p-modulus of curve families on grid domains, and numerical
//! checks of ring Q-mapping inequalities, Loewner/QED constants and the
//! exponential lower distance bound they imply.

pub mod bounds;
mod bush;
pub mod convergence;
pub mod curves;
pub mod experiment;
pub mod geometry;
pub mod modulus;
pub mod parallel;
pub mod qmaps;

pub use curves::{Curve, CurveFamily, FamilyKind};
pub use geometry::{Annulus, Continuum, DiscreteDomain, Point, Region, Shape};
pub use modulus::{p_modulus, ring_modulus, DensityField, ModulusResult, SolverOptions};
pub use parallel::Execution;
