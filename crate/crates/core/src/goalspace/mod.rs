//! Goal sets and everything computed per goal.

mod mask;
mod quant;
mod set;
mod tracker;

pub use mask::GoalMask;
pub use quant::{quantization_adequacy, quantize_goal, QuantGrid};
pub use set::{subsample_goals, GoalDef, GoalFile, GoalId, GoalInfo, GoalSet};
pub use tracker::{sample_command_goal, CommandSampling, SeenGoalTracker};

use crate::{Error, Result};

/// Default commanded goal before anything has been observed.
pub const FALLBACK_GOAL: GoalId = GoalId(0);

/// Per-goal rewards and pseudo-termination flags upon entering a state.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTermVector {
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
}

impl RewardTermVector {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Binary achievement rewards; a goal's episode ends when it is achieved or
/// when the true episode ends.
pub fn reward_term_vector(
    achieved_now: &GoalMask,
    episode_done: bool,
    num_goals: usize,
) -> Result<RewardTermVector> {
    if achieved_now.len() != num_goals {
        return Err(Error::shape(format!(
            "achievement mask has {} bits for {num_goals} goals",
            achieved_now.len()
        )));
    }
    let rewards = (0..num_goals)
        .map(|g| if achieved_now.get(g) { 1.0 } else { 0.0 })
        .collect();
    let dones = (0..num_goals)
        .map(|g| episode_done || achieved_now.get(g))
        .collect();
    Ok(RewardTermVector { rewards, dones })
}
