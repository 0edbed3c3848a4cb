//! Continuous-time sequential convex programming (SCP) for control-affine
//! optimal control problems.
//!
//! The crate is organized bottom-up:
//!
//! * [`problem`]: problem definitions, penalization, bundled families.
//! * [`transcription`]: convexification around an iterate and trapezoidal
//!   (or Euler) transcription to a sparse convex program.
//! * [`solver`]: operator-splitting solver for the transcribed programs,
//!   with active-set polishing and dual extraction.
//! * [`scp`]: the SCP loop with a shrinking trust region.
//! * [`pmp`]: Hamiltonian, adjoint, maximality and transversality residuals.
//! * [`shooting`]: indirect shooting and shooting-accelerated SCP.
//! * [`manifold`]: tangency checks and costate projection for
//!   manifold-constrained problems.
//! * [`experiments`]: the randomized Dubins study and its artifacts.

pub mod error;
pub mod experiments;
pub mod linalg;
pub mod manifold;
pub mod ode;
pub mod pmp;
pub mod problem;
pub mod scp;
pub mod shooting;
pub mod solver;
pub mod transcription;

pub use error::{Error, Result};
