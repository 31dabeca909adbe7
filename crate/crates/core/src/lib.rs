//! Almost-Poisson brackets, gauge transformations and Hamiltonization
//! checks for a rigid body under a generalized rolling constraint.
//!
//! - [`geometry`]: hat map, dense antisymmetric tensors, exterior derivative
//!   by analytic or finite-difference partials, seeded state sampling.
//! - [`poisson`]: generic bivector machinery (Hamiltonian fields,
//!   Jacobiator, gauge by 2-forms, twisted/conformal/Casimir defects,
//!   integrability probe).
//! - [`rolling`]: the body, its eight reduced brackets, the brackets on the
//!   full chart, conformal factors and twist forms.
//! - [`dynamics`]: RK4 flows, time reparametrization, drift and measure
//!   diagnostics.
//! - [`verify`] and [`scenario`]: the check suites and JSON/CSV plumbing
//!   behind the `rolling-brackets` binary.

pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod poisson;
pub mod rolling;
pub mod scenario;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{hat, unhat, AntisymTensor, FormPatch, Mat3, StateSampler, Vec3};
pub use poisson::{BivectorPatch, ScalarField};
pub use rolling::{BodyParams, BracketVariant, ConstraintRank, FullState, NhVariant, ReducedState};
