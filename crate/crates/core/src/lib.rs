//! Optimistic posterior sampling for tabular episodic reinforcement learning.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod diagnostics;
pub mod dirichlet;
pub mod envs;
pub mod error;
pub mod harness;
pub mod kinf;
pub mod mdp;
mod quad;
pub mod rng;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/mdp.md")]
    mod mdp {}
    #[doc = include_str!("../../../book/src/kinf.md")]
    mod kinf {}
    #[doc = include_str!("../../../book/src/dirichlet.md")]
    mod dirichlet {}
    #[doc = include_str!("../../../book/src/opsrl.md")]
    mod opsrl {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
