//! Convexification around an iterate and transcription to a sparse convex
//! program on a uniform normalized grid.

mod linearize;
mod rescale;
mod transcribe;
mod trajectory;

pub use linearize::{linearize_cost, linearize_cost_centered, linearize_dynamics, LinearizedCost, LinearizedDynamics, QuadraticModel};
pub use rescale::{augment_iterate, rescale_free_time, TimeCostCoupling};
pub use transcribe::{
    dynamics_defect, transcribe, transcribe_centered, trust_region_value, BallSet, ConvexSubproblem, TranscriptionOptions, VariableLayout,
};
pub use trajectory::{interpolate_rows, DiscreteTrajectory, Scheme, TimeGrid};
