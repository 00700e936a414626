//! All-goals reinforcement learning.
//!
//! One curried network head per goal lets a single backward pass update the
//! value of every goal from every transition. The crate holds the numerics
//! ([`numkit`]), two goal-rich environments ([`gridcraft`], [`pointmaze`]),
//! goal-set utilities ([`goalspace`]), the learners ([`algos`]), vectorized
//! collection and evaluation ([`rollout`]) and the run orchestration used by
//! the `agrl` binary ([`run`]).

pub mod algos;
pub mod error;
pub mod goalspace;
pub mod gridcraft;
pub mod numkit;
pub mod pointmaze;
pub mod rollout;
pub mod run;

pub use error::{Error, Result};
