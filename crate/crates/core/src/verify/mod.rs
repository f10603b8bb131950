//! Exact and Monte-Carlo checkers for the inequalities behind
//! without-replacement sampling.
//!
//! Monte-Carlo routines split their samples into fixed-size blocks, give each
//! block its own generator stream and reduce block results in block order, so
//! estimates do not depend on the thread count.

pub mod appendix_sum;
pub mod concentration;
pub mod key_lemma;
pub mod rademacher;

pub use appendix_sum::{appendix_sum_check, appendix_sum_value, AppendixScan};
pub use concentration::{matrix_concentration_check, ConcentrationReport, ConcentrationSpec};
pub use key_lemma::{hashed_rule, key_lemma_check, KeyLemma};
pub use rademacher::{
    contraction_check, linear_ball_bound, product_class_check, rademacher_estimate, Estimate, FunctionClass,
    PairedEstimate, RademacherSpec,
};
