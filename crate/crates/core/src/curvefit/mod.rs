//! Shared fitting machinery: QR least squares and bounded nonlinear least squares.

mod linear;
mod nonlinear;

pub use linear::{linear_lsq, solve_block_refs, solve_blocks, CompressedBlock, LinearFit, RANK_TOLERANCE};
pub use nonlinear::{finite_difference_jacobian, nonlinear_lsq, FitProblem, FitResult, Tolerances, FD_STEP};
