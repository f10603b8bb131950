//! Without-replacement sampling for stochastic gradient methods.
//!
//! Finite-sum objectives `F(w) = (1/m) sum_i f_i(w)` over a fixed dataset,
//! projected SGD and SVRG driven by with- or without-replacement index
//! streams, a simulated distributed SVRG, and Monte-Carlo / exhaustive
//! checkers for the inequalities that control without-replacement sampling.
//!
//! Every random choice flows from [`rng::CounterRng`], so a `(seed, stream)`
//! pair reproduces a run bit-for-bit, with or without the `parallel` feature.

// `!(x >= 0.0)` guards deliberately reject NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod datagen;
pub mod distributed;
pub mod error;
pub mod linalg;
pub mod par;
pub mod problem;
pub mod rng;
pub mod sampling;
pub mod sgd;
pub mod stats;
pub mod svrg;
pub mod verify;

pub use error::{Error, Result};
pub use problem::{Dataset, LipschitzLinearProblem, LossKind, Objective, Optimum, RidgeProblem};
pub use rng::CounterRng;
pub use sampling::{Permutation, Sampler, SamplerKind};
pub use sgd::{SgdConfig, StepRule, Trace};
pub use svrg::{EpochOutput, EpochTrace, SvrgConfig};
