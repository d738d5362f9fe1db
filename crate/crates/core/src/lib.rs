//! Adaptive mmWave initial beam alignment as an episodic POMDP.
//!
//! The crate bundles the physical model ([`array`], [`env`]), the maps from
//! agent actions to combiners ([`beam`]), a small neural toolkit ([`nn`]),
//! a recurrent PPO agent ([`ppo`]), classical reference methods
//! ([`baselines`]) and the experiment harness ([`harness`]).

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod baselines;
pub mod beam;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod ppo;
pub mod rng;

pub use error::{Error, Result};
