use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GoalId, GoalMask};

/// How commanded goals are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandSampling {
    /// Uniform over goals observed at least once (the autocurriculum).
    SeenGoals,
    /// Uniform over the whole goal set.
    Uniform,
}

/// Which goals have ever been achieved, and how often.
#[derive(Clone, Debug, PartialEq)]
pub struct SeenGoalTracker {
    seen: Vec<bool>,
    counts: Vec<u64>,
    order: Vec<GoalId>,
}

impl SeenGoalTracker {
    pub fn new(num_goals: usize) -> Self {
        Self {
            seen: vec![false; num_goals],
            counts: vec![0; num_goals],
            order: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn seen(&self) -> &[bool] {
        &self.seen
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn num_seen(&self) -> usize {
        self.order.len()
    }

    /// Goals in the order they were first seen.
    pub fn seen_goals(&self) -> &[GoalId] {
        &self.order
    }

    pub fn observe(&mut self, mask: &GoalMask) {
        assert_eq!(mask.len(), self.seen.len(), "mask length mismatch");
        for g in mask.ones() {
            self.counts[g] += 1;
            if !self.seen[g] {
                self.seen[g] = true;
                self.order.push(GoalId(g));
            }
        }
    }

    /// Folds a batch of achievement masks into the tracker.
    pub fn update<'a>(&mut self, batch: impl IntoIterator<Item = &'a GoalMask>) {
        for m in batch {
            self.observe(m);
        }
    }
}

/// Draws a commanded goal. With [`CommandSampling::SeenGoals`] and nothing
/// seen yet, returns `fallback`.
pub fn sample_command_goal<R: Rng + ?Sized>(
    tracker: &SeenGoalTracker,
    mode: CommandSampling,
    rng: &mut R,
    fallback: GoalId,
) -> GoalId {
    match mode {
        CommandSampling::Uniform => GoalId(rng.random_range(0..tracker.len())),
        CommandSampling::SeenGoals => {
            if tracker.order.is_empty() {
                fallback
            } else {
                tracker.order[rng.random_range(0..tracker.order.len())]
            }
        }
    }
}
