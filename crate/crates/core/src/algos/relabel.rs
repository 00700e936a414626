use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Segment;
use crate::goalspace::GoalId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HerStrategy {
    None,
    /// `n` extra transitions per step with uniformly drawn goals.
    Random { n: usize },
    /// `m` extra transitions per step with achieved goals.
    Positive { m: usize },
    Mixed { n: usize, m: usize },
}

impl HerStrategy {
    fn counts(self) -> (usize, usize) {
        match self {
            HerStrategy::None => (0, 0),
            HerStrategy::Random { n } => (n, 0),
            HerStrategy::Positive { m } => (0, m),
            HerStrategy::Mixed { n, m } => (n, m),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HerLevel {
    /// Fresh goals for every transition.
    PerTransition,
    /// One goal per slot for the whole segment, positives taken from the
    /// final transition.
    PerTrajectory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HerConfig {
    pub strategy: HerStrategy,
    pub level: HerLevel,
}

impl Default for HerConfig {
    fn default() -> Self {
        Self {
            strategy: HerStrategy::Mixed { n: 1, m: 1 },
            level: HerLevel::PerTrajectory,
        }
    }
}

/// A transition reinterpreted under another goal. Reward and done are
/// re-derived from the stored achievement mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Relabelled {
    /// Index into the segment.
    pub t: usize,
    pub goal: GoalId,
    pub reward: bool,
    pub done: bool,
    /// Entries of one slot are emitted consecutively in time order.
    pub slot: usize,
}

fn relabel<A>(seg: &Segment<A>, t: usize, goal: GoalId, slot: usize) -> Relabelled {
    let tr = &seg.transitions[t];
    let reward = tr.achieved_mask.get(goal.index());
    Relabelled {
        t,
        goal,
        reward,
        done: reward || tr.episode_done,
        slot,
    }
}

fn pick_achieved<A, R: Rng + ?Sized>(seg: &Segment<A>, t: usize, rng: &mut R) -> Option<GoalId> {
    let mask = &seg.transitions[t].achieved_mask;
    let k = mask.count();
    (k > 0).then(|| GoalId(mask.ones().nth(rng.random_range(0..k)).expect("count > 0")))
}

/// Hindsight relabelling. Random slots draw uniformly from all goals;
/// positive slots draw among goals achieved at the transition itself
/// (per transition) or at the final transition (per trajectory) and are
/// skipped when nothing was achieved there.
pub fn her_relabel<A, R: Rng + ?Sized>(
    seg: &Segment<A>,
    cfg: &HerConfig,
    num_goals: usize,
    rng: &mut R,
) -> Vec<Relabelled> {
    let (n, m) = cfg.strategy.counts();
    let len = seg.len();
    let mut out = Vec::with_capacity((n + m) * len);
    if len == 0 || num_goals == 0 {
        return out;
    }
    match cfg.level {
        HerLevel::PerTrajectory => {
            for slot in 0..n {
                let g = GoalId(rng.random_range(0..num_goals));
                out.extend((0..len).map(|t| relabel(seg, t, g, slot)));
            }
            for slot in n..n + m {
                if let Some(g) = pick_achieved(seg, len - 1, rng) {
                    out.extend((0..len).map(|t| relabel(seg, t, g, slot)));
                }
            }
        }
        HerLevel::PerTransition => {
            for slot in 0..n {
                for t in 0..len {
                    let g = GoalId(rng.random_range(0..num_goals));
                    out.push(relabel(seg, t, g, slot));
                }
            }
            for slot in n..n + m {
                for t in 0..len {
                    if let Some(g) = pick_achieved(seg, t, rng) {
                        out.push(relabel(seg, t, g, slot));
                    }
                }
            }
        }
    }
    out
}

/// Every transition under every goal, goal-major: `num_goals * len` entries.
pub fn naive_all_goals_relabel<A>(seg: &Segment<A>, num_goals: usize) -> Vec<Relabelled> {
    let mut out = Vec::with_capacity(num_goals * seg.len());
    for g in 0..num_goals {
        out.extend((0..seg.len()).map(|t| relabel(seg, t, GoalId(g), g)));
    }
    out
}
