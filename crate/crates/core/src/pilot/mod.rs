//! Pilot assignment representation and the permutation machinery.

pub mod assignment;
pub mod permutation;

pub use assignment::{
    compact, discretize, psi, AssignmentJson, AssignmentMode, CompactAssignment, PilotAssignment,
};
pub use permutation::{Permutation, PermutationSpec};
