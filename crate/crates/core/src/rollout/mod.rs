//! Vectorized environment driver: goal commanding with first-return-then-
//! explore, segment assembly, and greedy evaluation.

mod envs;

pub use envs::{GridEnv, PointEnv};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algos::{Segment, Transition};
use crate::goalspace::{
    reward_term_vector, sample_command_goal, CommandSampling, GoalId, GoalMask, SeenGoalTracker,
    FALLBACK_GOAL,
};
use crate::{Error, Result};

/// An environment with a finite goal set whose achievement can be read off
/// any state.
pub trait GoalEnv: Sync {
    type State: Clone + Send + Sync;
    type Action: Copy + Send + Sync;
    /// What evaluation checks success against; for discrete goals the goal
    /// itself, for quantized goals a continuous location inside its cell.
    type Target: Clone + Send + Sync;

    fn num_goals(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn reset(&self, seed: u64) -> Result<Self::State>;
    fn step(&self, state: &Self::State, action: Self::Action) -> Self::State;
    /// Clears `out` and writes the observation.
    fn observe_into(&self, state: &Self::State, out: &mut Vec<f32>);
    fn achieved_into(&self, state: &Self::State, mask: &mut GoalMask);
    /// True episode end (time limit).
    fn is_terminal(&self, state: &Self::State) -> bool;
    fn eval_target(&self, goal: GoalId, rng: &mut ChaCha8Rng) -> Self::Target;
    fn target_reached(&self, state: &Self::State, target: &Self::Target) -> bool;
}

/// Maps batched `(obs rows, commanded goals)` to one action per row.
pub trait Policy<A> {
    fn act(&mut self, obs: &[f32], goals: &[GoalId]) -> Result<Vec<A>>;
}

impl<A, F> Policy<A> for F
where
    F: FnMut(&[f32], &[GoalId]) -> Result<Vec<A>>,
{
    fn act(&mut self, obs: &[f32], goals: &[GoalId]) -> Result<Vec<A>> {
        self(obs, goals)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaneState<S> {
    pub env_state: S,
    pub commanded: GoalId,
    /// Steps since the commanded episode began.
    pub episode_step: u32,
    /// Commanded-channel reward collected in the current commanded episode.
    pub episode_return: f64,
    obs: Vec<f32>,
}

impl<S> LaneState<S> {
    pub fn obs(&self) -> &[f32] {
        &self.obs
    }
}

/// Counters accumulated over every `collect` call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LaneStats {
    pub steps: u64,
    /// Commanded goals achieved (each one ends a commanded episode).
    pub commanded_hits: u64,
    pub world_resets: u64,
    /// Commanded episodes whose return left {0, 1}.
    pub return_violations: u64,
}

/// A batch of independent environment lanes.
#[derive(Clone, Debug)]
pub struct Lanes<S> {
    pub lanes: Vec<LaneState<S>>,
    pub sampling: CommandSampling,
    pub stats: LaneStats,
    seed: u64,
    worlds: u64,
}

/// SplitMix64 finalizer; spreads counters into well-mixed world seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl<S: Clone + Send + Sync> Lanes<S> {
    /// `count` lanes on fresh worlds; world seeds derive from `seed`.
    pub fn new<E: GoalEnv<State = S>>(
        env: &E,
        count: usize,
        seed: u64,
        sampling: CommandSampling,
        tracker: &SeenGoalTracker,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("at least one lane is required"));
        }
        let mut out = Self {
            lanes: Vec::with_capacity(count),
            sampling,
            stats: LaneStats::default(),
            seed,
            worlds: 0,
        };
        for _ in 0..count {
            let env_state = env.reset(out.next_world())?;
            let mut obs = Vec::with_capacity(env.obs_dim());
            env.observe_into(&env_state, &mut obs);
            out.lanes.push(LaneState {
                env_state,
                commanded: sample_command_goal(tracker, sampling, rng, FALLBACK_GOAL),
                episode_step: 0,
                episode_return: 0.0,
                obs,
            });
        }
        Ok(out)
    }

    fn next_world(&mut self) -> u64 {
        self.worlds += 1;
        mix_seed(self.seed, self.worlds)
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn observations(&self) -> Vec<f32> {
        self.lanes.iter().flat_map(|l| l.obs.iter().copied()).collect()
    }

    pub fn commanded(&self) -> Vec<GoalId> {
        self.lanes.iter().map(|l| l.commanded).collect()
    }
}

struct Stepped<S> {
    next: S,
    next_obs: Vec<f32>,
    mask: GoalMask,
    terminal: bool,
}

fn step_all<E: GoalEnv>(env: &E, lanes: &[LaneState<E::State>], actions: &[E::Action]) -> Vec<Stepped<E::State>> {
    let one = |(lane, &a): (&LaneState<E::State>, &E::Action)| {
        let next = env.step(&lane.env_state, a);
        let mut next_obs = Vec::with_capacity(env.obs_dim());
        env.observe_into(&next, &mut next_obs);
        let mut mask = GoalMask::new(env.num_goals());
        env.achieved_into(&next, &mut mask);
        let terminal = env.is_terminal(&next);
        Stepped {
            next,
            next_obs,
            mask,
            terminal,
        }
    };
    if lanes.len() >= 8 && rayon::current_num_threads() > 1 {
        lanes.par_iter().zip(actions.par_iter()).map(one).collect()
    } else {
        lanes.iter().zip(actions).map(one).collect()
    }
}

/// Steps every lane `num_steps` times and returns one segment per lane.
///
/// Achieving the commanded goal ends that commanded episode only: the goal
/// is resampled and the world carries on. The time limit resets the world
/// from a fresh seed. Every transition records the full achievement mask
/// and the per-goal reward/done vectors. The tracker absorbs all masks once
/// stepping is done; goals commanded during the call come from its prior
/// state.
pub fn collect<E, P>(
    env: &E,
    lanes: &mut Lanes<E::State>,
    policy: &mut P,
    num_steps: usize,
    tracker: &mut SeenGoalTracker,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Segment<E::Action>>>
where
    E: GoalEnv,
    P: Policy<E::Action> + ?Sized,
{
    let ng = env.num_goals();
    if tracker.len() != ng {
        return Err(Error::shape(format!(
            "tracker covers {} goals, environment has {ng}",
            tracker.len()
        )));
    }
    let n = lanes.len();
    let mut segs: Vec<Vec<Transition<E::Action>>> = (0..n).map(|_| Vec::with_capacity(num_steps)).collect();
    for _ in 0..num_steps {
        let obs = lanes.observations();
        let goals = lanes.commanded();
        let actions = policy.act(&obs, &goals)?;
        if actions.len() != n {
            return Err(Error::shape(format!("policy returned {} actions for {n} lanes", actions.len())));
        }
        let stepped = step_all(env, &lanes.lanes, &actions);
        for (i, (st, action)) in stepped.into_iter().zip(actions).enumerate() {
            let rv = reward_term_vector(&st.mask, st.terminal, ng)?;
            let lane = &mut lanes.lanes[i];
            let cmd = lane.commanded;
            let hit = st.mask.get(cmd.index());
            lane.episode_return += rv.rewards[cmd.index()] as f64;
            lane.episode_step += 1;
            segs[i].push(Transition {
                obs: std::mem::replace(&mut lane.obs, st.next_obs.clone()),
                action,
                commanded: cmd,
                reward_vec: rv,
                next_obs: st.next_obs,
                achieved_mask: st.mask,
                episode_done: st.terminal,
            });
            lane.env_state = st.next;
            lanes.stats.steps += 1;
            if hit || st.terminal {
                if lane.episode_return != 0.0 && lane.episode_return != 1.0 {
                    lanes.stats.return_violations += 1;
                }
                lanes.stats.commanded_hits += hit as u64;
                lane.commanded = sample_command_goal(tracker, lanes.sampling, rng, FALLBACK_GOAL);
                lane.episode_step = 0;
                lane.episode_return = 0.0;
            }
            if st.terminal {
                lanes.worlds += 1;
                let seed = mix_seed(lanes.seed, lanes.worlds);
                let lane = &mut lanes.lanes[i];
                lane.env_state = env.reset(seed)?;
                env.observe_into(&lane.env_state, &mut lane.obs);
                lanes.stats.world_resets += 1;
            }
        }
    }
    let out: Vec<Segment<E::Action>> = segs
        .into_iter()
        .zip(&lanes.lanes)
        .map(|(transitions, lane)| Segment {
            transitions,
            bootstrap_obs: lane.obs.clone(),
        })
        .collect();
    tracker.update(out.iter().flat_map(|s| s.transitions.iter().map(|t| &t.achieved_mask)));
    Ok(out)
}

/// Commanded-channel return of every commanded episode (or episode piece)
/// in a segment. Boundaries are the commanded channel's dones.
pub fn commanded_returns<A>(seg: &Segment<A>) -> Vec<f64> {
    let mut out = Vec::new();
    let mut acc = 0.0;
    let mut open = false;
    for (t, tr) in seg.transitions.iter().enumerate() {
        let g = tr.commanded.index();
        if t > 0 && seg.transitions[t - 1].commanded != tr.commanded && open {
            out.push(acc);
            acc = 0.0;
        }
        acc += tr.reward_vec.rewards[g] as f64;
        open = true;
        if tr.reward_vec.dones[g] {
            out.push(acc);
            acc = 0.0;
            open = false;
        }
    }
    if open {
        out.push(acc);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub goals: Vec<GoalId>,
    /// Fraction of episodes in which the evaluation target was reached.
    pub per_goal_success: Vec<f64>,
    pub mean_success: f64,
    pub episodes_per_goal: usize,
    /// Fraction of episodes in which the commanded goal itself was
    /// achieved (differs from `per_goal_success` only for quantized goals).
    pub commanded_success: Vec<f64>,
    /// Steps at which the commanded goal held but the target did not.
    pub violations: u64,
}

/// Greedy evaluation: for every goal, `episodes_per_goal` full episodes with
/// that goal commanded throughout. Episode `k` of every goal runs on the same
/// world. An episode succeeds when the target is reached after any step
/// before the time limit. Lanes are stepped `batch` at a time.
pub fn evaluate<E, P>(
    env: &E,
    policy: &mut P,
    goals: &[GoalId],
    episodes_per_goal: usize,
    seed: u64,
    batch: usize,
) -> Result<EvalReport>
where
    E: GoalEnv,
    P: Policy<E::Action> + ?Sized,
{
    if episodes_per_goal == 0 {
        return Err(Error::invalid("episodes_per_goal must be at least 1"));
    }
    if let Some(g) = goals.iter().find(|g| g.index() >= env.num_goals()) {
        return Err(Error::UnknownGoal(g.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX));
    let jobs: Vec<(usize, usize, E::Target)> = goals
        .iter()
        .enumerate()
        .flat_map(|(gi, &g)| (0..episodes_per_goal).map(move |k| (gi, k, g)))
        .map(|(gi, k, g)| (gi, k, env.eval_target(g, &mut rng)))
        .collect();
    let mut reached = vec![0usize; goals.len()];
    let mut commanded = vec![0usize; goals.len()];
    let mut violations = 0;
    let mut mask = GoalMask::new(env.num_goals());
    for chunk in jobs.chunks(batch.max(1)) {
        let mut states = Vec::with_capacity(chunk.len());
        let mut obs = Vec::with_capacity(chunk.len());
        for &(_, k, _) in chunk {
            let s = env.reset(mix_seed(seed, k as u64))?;
            let mut o = Vec::new();
            env.observe_into(&s, &mut o);
            states.push(s);
            obs.push(o);
        }
        let mut live: Vec<usize> = (0..chunk.len()).collect();
        let mut hit_cmd = vec![false; chunk.len()];
        let mut hit_target = vec![false; chunk.len()];
        while !live.is_empty() {
            let flat: Vec<f32> = live.iter().flat_map(|&j| obs[j].iter().copied()).collect();
            let gs: Vec<GoalId> = live.iter().map(|&j| goals[chunk[j].0]).collect();
            let actions = policy.act(&flat, &gs)?;
            if actions.len() != live.len() {
                return Err(Error::shape("policy returned the wrong number of actions"));
            }
            let mut still = Vec::with_capacity(live.len());
            for (&j, a) in live.iter().zip(actions) {
                let (gi, _, ref target) = chunk[j];
                let next = env.step(&states[j], a);
                env.achieved_into(&next, &mut mask);
                let q = mask.get(goals[gi].index());
                let t = env.target_reached(&next, target);
                if q && !t {
                    violations += 1;
                }
                if q && !hit_cmd[j] {
                    hit_cmd[j] = true;
                    commanded[gi] += 1;
                }
                if t && !hit_target[j] {
                    hit_target[j] = true;
                    reached[gi] += 1;
                }
                // both outcomes known, or out of time
                if (hit_cmd[j] && hit_target[j]) || env.is_terminal(&next) {
                    continue;
                }
                env.observe_into(&next, &mut obs[j]);
                states[j] = next;
                still.push(j);
            }
            live = still;
        }
    }
    let eps = episodes_per_goal as f64;
    let per_goal_success: Vec<f64> = reached.iter().map(|&c| c as f64 / eps).collect();
    let mean_success = if goals.is_empty() {
        0.0
    } else {
        per_goal_success.iter().sum::<f64>() / goals.len() as f64
    };
    Ok(EvalReport {
        goals: goals.to_vec(),
        per_goal_success,
        mean_success,
        episodes_per_goal,
        commanded_success: commanded.iter().map(|&c| c as f64 / eps).collect(),
        violations,
    })
}

/// All goals of an environment in id order.
pub fn all_goals<E: GoalEnv>(env: &E) -> Vec<GoalId> {
    (0..env.num_goals()).map(GoalId).collect()
}

#[cfg(test)]
mod tests;
