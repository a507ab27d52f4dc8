//! Identification of partially observed linear time-invariant systems whose
//! states are hit by sparse adversarial attacks.
//!
//! The crate covers the whole loop: simulating attacked trajectories
//! ([`simkit`]), building the Markov-parameter regression ([`markov`]),
//! batch estimation with the robust ℓ2/ℓ1 estimators and least squares
//! ([`batch`]), streaming subgradient estimation ([`streaming`]), Hankel
//! realization ([`realization`]) and the experiment pipeline that combines
//! them ([`pipeline`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod error;
pub mod linalg;
pub mod markov;
pub mod pipeline;
pub mod realization;
pub mod rng;
pub mod simkit;
pub mod streaming;

pub use error::{Error, Result};
