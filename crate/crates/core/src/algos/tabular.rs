use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::argmax;
use crate::goalspace::{reward_term_vector, GoalMask};
use crate::gridcraft::{generate_world, step, Action, GridConfig, GridGoals, StateKey, NUM_ACTIONS};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabularConfig {
    pub size: usize,
    pub world_seed: u64,
    pub t_max: u32,
    pub steps: usize,
    pub gamma: f64,
    pub lr: f64,
    pub eps: f64,
    pub seed: u64,
    pub max_states: usize,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            size: 6,
            world_seed: 0,
            t_max: 50,
            steps: 10_000,
            gamma: 0.9,
            lr: 0.5,
            eps: 0.3,
            seed: 0,
            max_states: 1 << 20,
        }
    }
}

/// One recorded update: state and next-state indices plus every goal's
/// reward and done flag.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularStep {
    pub s: usize,
    pub a: usize,
    pub next: usize,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularRun {
    /// `[num_states x num_goals x num_actions]`.
    pub q: Vec<f64>,
    pub num_states: usize,
    pub num_goals: usize,
    pub stream: Vec<TabularStep>,
}

impl TabularRun {
    pub fn q_at(&self, s: usize, g: usize, a: usize) -> f64 {
        self.q[(s * self.num_goals + g) * NUM_ACTIONS + a]
    }
}

fn index_of(
    index: &mut HashMap<StateKey, usize>,
    q: &mut Vec<f64>,
    key: StateKey,
    row: usize,
    limit: usize,
) -> Result<usize> {
    if let Some(&i) = index.get(&key) {
        return Ok(i);
    }
    if index.len() >= limit {
        return Err(Error::StateSpaceOverflow { limit });
    }
    let i = index.len();
    index.insert(key, i);
    q.resize(q.len() + row, 0.0);
    Ok(i)
}

/// Tabular Q-learning that applies the one-step update to every goal's
/// slice on every transition. Behaviour is epsilon-greedy on the commanded
/// goal, which is resampled uniformly when achieved or at episode end; the
/// world restarts from the same seed after `t_max` steps. States are
/// enumerated lazily.
pub fn tabular_leo_q_learn(goals: &GridGoals, cfg: &TabularConfig) -> Result<TabularRun> {
    let world_cfg = GridConfig {
        size: cfg.size,
        t_max: cfg.t_max,
        ..GridConfig::default()
    };
    let start = generate_world(cfg.world_seed, &world_cfg)?;
    let ng = goals.len();
    let row = ng * NUM_ACTIONS;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut index = HashMap::new();
    let mut q = Vec::new();
    let mut stream = Vec::with_capacity(cfg.steps);
    let mut mask = GoalMask::new(ng);

    let mut state = start.clone();
    let mut cmd = rng.random_range(0..ng);
    let mut s = index_of(&mut index, &mut q, state.key(), row, cfg.max_states)?;
    for _ in 0..cfg.steps {
        let a = if rng.random_bool(cfg.eps) {
            rng.random_range(0..NUM_ACTIONS)
        } else {
            let base = (s * ng + cmd) * NUM_ACTIONS;
            argmax(&q[base..base + NUM_ACTIONS])
        };
        let next = step(&state, Action::ALL[a]);
        goals.achieved_into(&next, &mut mask);
        let rv = reward_term_vector(&mask, next.is_terminal(), ng)?;
        let s2 = index_of(&mut index, &mut q, next.key(), row, cfg.max_states)?;
        for g in 0..ng {
            let r = rv.rewards[g] as f64;
            let target = if rv.dones[g] {
                r
            } else {
                let b = (s2 * ng + g) * NUM_ACTIONS;
                r + cfg.gamma * q[b..b + NUM_ACTIONS].iter().copied().fold(f64::MIN, f64::max)
            };
            let k = (s * ng + g) * NUM_ACTIONS + a;
            q[k] += cfg.lr * (target - q[k]);
        }
        stream.push(TabularStep {
            s,
            a,
            next: s2,
            rewards: rv.rewards.iter().map(|&r| r as f64).collect(),
            dones: rv.dones.clone(),
        });
        if next.is_terminal() {
            state = start.clone();
            s = index_of(&mut index, &mut q, state.key(), row, cfg.max_states)?;
            cmd = rng.random_range(0..ng);
        } else {
            if mask.get(cmd) {
                cmd = rng.random_range(0..ng);
            }
            state = next;
            s = s2;
        }
    }
    Ok(TabularRun {
        q,
        num_states: index.len(),
        num_goals: ng,
        stream,
    })
}

/// Plain single-goal Q-learning over a recorded stream: `[num_states x A]`.
pub fn per_goal_q_learn(run: &TabularRun, goal: usize, gamma: f64, lr: f64) -> Vec<f64> {
    let mut q = vec![0.0f64; run.num_states * NUM_ACTIONS];
    for st in &run.stream {
        let target = if st.dones[goal] {
            st.rewards[goal]
        } else {
            let b = st.next * NUM_ACTIONS;
            st.rewards[goal] + gamma * q[b..b + NUM_ACTIONS].iter().copied().fold(f64::MIN, f64::max)
        };
        let k = st.s * NUM_ACTIONS + st.a;
        q[k] += lr * (target - q[k]);
    }
    q
}
