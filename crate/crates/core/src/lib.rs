//! Numerical decision procedures for the inverse problem of the calculus of
//! variations at desk scale: given an explicit second-order system —
//! autonomous, time-dependent, velocity-constrained, or holonomic — evaluate
//! the condition suites that characterize variationality, reconstruct
//! Lagrangians from closed 1-forms, extend constrained variational problems
//! to unconstrained ones along Hamiltonian flows, and cross-validate every
//! verdict by trajectory integration.

pub mod bundles;
pub mod corpus;
pub mod error;
pub mod expr;
pub mod extend;
pub mod helmholtz;
pub mod jet;
pub mod linalg;
pub mod mech;
pub mod problem;
pub mod report;
pub mod runner;
pub mod sample;

pub use error::{Error, Result};
