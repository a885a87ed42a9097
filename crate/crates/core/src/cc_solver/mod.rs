//! Consistency system for the mean-field terms, its decoupling and the
//! extraction of deterministic mean fields.

mod blocks;
mod decouple;
mod extract;

pub use blocks::{build_cc, cc_blocks, pi_blocks, stacked_blocks, tilde_blocks, CCMatrices, CcBlocks, PiBlocks, StackedBlocks, TildeBlocks};
pub use decouple::{
    check_condition_37, explicit_k_reduced, fluctuation_means, is_reduced_case, k_residual, solve_k, solve_k_with,
    solve_kappa, Condition37, KForm, SINGULAR_TOL,
};
pub use extract::{extract_mean_fields, solve_cc, solve_cc_with, CCSolution, CcDiagnostics, ExtractedFields};
