//! Sparse matrices and the quasidefinite LDLᵀ factorization used by the
//! convex solver.

mod ldl;
mod sparse;

pub use ldl::{reverse_cuthill_mckee, QuasiDefiniteLdl};
pub use sparse::{CscMatrix, Triplets};
