use rand::seq::SliceRandom;
use rand::Rng;

use super::qlearn::dual_leo_q_batch;
use super::{
    argmax, her_relabel, naive_all_goals_relabel, leo_q_loss, leo_q_targets, sample_head_mask, tensor_from,
    uvfa_entry_targets, uvfa_input_row, uvfa_q_loss, LeoBatch, QEntry, Segment, TrainConfig,
    UvfaBatch,
};
use crate::goalspace::GoalId;
use crate::numkit::{
    adam_step, mlp_forward, mlp_forward_head, AdamState, HeadShape, MlpArch, NetParams, OutputActivation,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QStats {
    /// Mean minibatch loss.
    pub loss: f64,
    pub mean_target: f64,
    /// Regression rows per epoch (for the all-goals net, transitions).
    pub samples: usize,
}

fn q_arch(input: usize, heads: usize, num_actions: usize, cfg: &TrainConfig) -> MlpArch {
    MlpArch::new(input, &cfg.hidden, HeadShape::curried(heads, num_actions))
        .with_output(OutputActivation::Sigmoid)
}

fn eps_greedy<R: Rng + ?Sized>(q: &[f32], na: usize, eps: f64, rng: &mut R) -> Vec<usize> {
    q.chunks(na)
        .map(|row| {
            if eps > 0.0 && rng.random_bool(eps.min(1.0)) {
                rng.random_range(0..na)
            } else {
                argmax(row)
            }
        })
        .collect()
}

fn obs_dim_of(segments: &[Segment]) -> Result<usize> {
    segments
        .iter()
        .find_map(|s| s.transitions.first().map(|t| t.obs.len()))
        .ok_or_else(|| Error::shape("empty segment batch"))
}

fn check_rows(obs: &[f32], obs_dim: usize, goals: &[GoalId]) -> Result<()> {
    if obs.len() != goals.len() * obs_dim {
        return Err(Error::shape(format!(
            "{} observation values for {} goals of width {obs_dim}",
            obs.len(),
            goals.len()
        )));
    }
    Ok(())
}

fn mean(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len().max(1) as f64
}

/// Goal-conditioned Q-network on `obs ++ onehot(goal)`, trained with
/// Q(lambda) on the commanded goal plus hindsight-relabelled goals.
#[derive(Clone, Debug)]
pub struct UvfaPqn {
    pub net: NetParams<f32>,
    opt: AdamState<f32>,
    num_goals: usize,
}

impl UvfaPqn {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        num_goals: usize,
        num_actions: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let net = NetParams::init(&q_arch(obs_dim + num_goals, 1, num_actions, cfg), rng)?;
        Ok(Self::from_params(net, num_goals))
    }

    pub fn from_params(net: NetParams<f32>, num_goals: usize) -> Self {
        Self {
            opt: AdamState::new(&net),
            net,
            num_goals,
        }
    }

    pub fn num_goals(&self) -> usize {
        self.num_goals
    }

    pub fn num_actions(&self) -> usize {
        self.net.head().per_goal
    }

    /// `[n x A]`.
    pub fn q_values(&self, obs: &[f32], obs_dim: usize, goals: &[GoalId]) -> Result<Vec<f32>> {
        check_rows(obs, obs_dim, goals)?;
        let mut rows = Vec::with_capacity(goals.len() * self.net.input_dim());
        for (i, &g) in goals.iter().enumerate() {
            uvfa_input_row(&obs[i * obs_dim..(i + 1) * obs_dim], g, self.num_goals, &mut rows);
        }
        let x = tensor_from::<f32>(&rows, self.net.input_dim())?;
        Ok(mlp_forward(&self.net, &x)?.into_output().into_data())
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f32],
        obs_dim: usize,
        goals: &[GoalId],
        eps: f64,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let q = self.q_values(obs, obs_dim, goals)?;
        Ok(eps_greedy(&q, self.num_actions(), eps, rng))
    }

    /// Commanded-goal entries for every segment followed by its relabelled
    /// entries; each run of one goal is time-ordered so the lambda-return
    /// chains through it.
    pub fn entries<R: Rng + ?Sized>(&self, segments: &[Segment], cfg: &TrainConfig, rng: &mut R) -> Vec<QEntry> {
        let mut out = Vec::new();
        for (s, seg) in segments.iter().enumerate() {
            for (t, tr) in seg.transitions.iter().enumerate() {
                let g = tr.commanded.index();
                out.push(QEntry {
                    seg: s,
                    t,
                    goal: tr.commanded,
                    reward: tr.reward_vec.rewards[g],
                    done: tr.reward_vec.dones[g],
                });
            }
            for r in her_relabel(seg, &cfg.her, self.num_goals, rng) {
                out.push(QEntry {
                    seg: s,
                    t: r.t,
                    goal: r.goal,
                    reward: if r.reward { 1.0 } else { 0.0 },
                    done: r.done,
                });
            }
        }
        out
    }

    pub fn update<R: Rng + ?Sized>(
        &mut self,
        segments: &[Segment],
        cfg: &TrainConfig,
        frac: f64,
        rng: &mut R,
    ) -> Result<QStats> {
        let entries = self.entries(segments, cfg, rng);
        self.update_entries(segments, &entries, cfg, frac, rng)
    }

    /// Every transition under every goal, the naive all-goals baseline.
    pub fn naive_entries(&self, segments: &[Segment]) -> Vec<QEntry> {
        let mut out = Vec::new();
        for (s, seg) in segments.iter().enumerate() {
            for r in naive_all_goals_relabel(seg, self.num_goals) {
                out.push(QEntry {
                    seg: s,
                    t: r.t,
                    goal: r.goal,
                    reward: if r.reward { 1.0 } else { 0.0 },
                    done: r.done,
                });
            }
        }
        out
    }

    /// Q(lambda) regression on an explicit entry list.
    pub fn update_entries<R: Rng + ?Sized>(
        &mut self,
        segments: &[Segment],
        entries: &[QEntry],
        cfg: &TrainConfig,
        frac: f64,
        rng: &mut R,
    ) -> Result<QStats> {
        let obs_dim = obs_dim_of(segments)?;
        let targets = uvfa_entry_targets(segments, entries, &self.net, cfg)?;
        let mut batch = UvfaBatch::new(obs_dim + self.num_goals);
        for (e, &y) in entries.iter().zip(&targets) {
            let tr = &segments[e.seg].transitions[e.t];
            batch.push(&tr.obs, e.goal, self.num_goals, tr.action, y);
        }
        let adam = cfg.adam(frac);
        let mut idx: Vec<usize> = (0..batch.len()).collect();
        let (mut loss, mut updates) = (0.0, 0.0);
        for _ in 0..cfg.num_epochs {
            idx.shuffle(rng);
            for chunk in idx.chunks(cfg.minibatch_size) {
                let (l, g) = uvfa_q_loss(&self.net, &batch.select(chunk))?;
                adam_step(&mut self.net, &g, &mut self.opt, &adam)?;
                loss += l;
                updates += 1.0;
            }
        }
        Ok(QStats {
            loss: loss / updates,
            mean_target: mean(&targets),
            samples: batch.len(),
        })
    }
}

/// Curried network with one action-value head per goal, trained on every
/// goal's reward channel for every transition.
#[derive(Clone, Debug)]
pub struct LeoPqn {
    pub net: NetParams<f32>,
    opt: AdamState<f32>,
}

impl LeoPqn {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        num_goals: usize,
        num_actions: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let net = NetParams::init(&q_arch(obs_dim, num_goals, num_actions, cfg), rng)?;
        Ok(Self::from_params(net))
    }

    pub fn from_params(net: NetParams<f32>) -> Self {
        Self {
            opt: AdamState::new(&net),
            net,
        }
    }

    pub fn num_goals(&self) -> usize {
        self.net.head().num_goals
    }

    pub fn num_actions(&self) -> usize {
        self.net.head().per_goal
    }

    /// Values of each row's goal, `[n x A]`.
    pub fn q_values(&self, obs: &[f32], obs_dim: usize, goals: &[GoalId]) -> Result<Vec<f32>> {
        check_rows(obs, obs_dim, goals)?;
        let ng = self.num_goals();
        if let Some(g) = goals.iter().find(|g| g.index() >= ng) {
            return Err(Error::UnknownGoal(g.to_string()));
        }
        let heads: Vec<usize> = goals.iter().map(|g| g.index()).collect();
        mlp_forward_head(&self.net, &tensor_from::<f32>(obs, obs_dim)?, &heads)
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f32],
        obs_dim: usize,
        goals: &[GoalId],
        eps: f64,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let q = self.q_values(obs, obs_dim, goals)?;
        Ok(eps_greedy(&q, self.num_actions(), eps, rng))
    }

    /// With `mask_keep_prob < 1` a fresh head mask is drawn per minibatch.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        segments: &[Segment],
        cfg: &TrainConfig,
        frac: f64,
        rng: &mut R,
    ) -> Result<QStats> {
        let obs_dim = obs_dim_of(segments)?;
        let ng = self.num_goals();
        let targets = leo_q_targets(segments, &self.net, cfg)?;
        let mut batch = LeoBatch::new(obs_dim, ng);
        for (seg, y) in segments.iter().zip(&targets) {
            for tr in &seg.transitions {
                batch.input.extend_from_slice(&tr.obs);
                batch.actions.push(tr.action);
            }
            batch.targets.extend_from_slice(y);
        }
        let adam = cfg.adam(frac);
        let mut idx: Vec<usize> = (0..batch.len()).collect();
        let (mut loss, mut updates) = (0.0, 0.0);
        for _ in 0..cfg.num_epochs {
            idx.shuffle(rng);
            for chunk in idx.chunks(cfg.minibatch_size) {
                let mask = (cfg.mask_keep_prob < 1.0).then(|| sample_head_mask(ng, cfg.mask_keep_prob, rng));
                let (l, g) = leo_q_loss(&self.net, &batch.select(chunk), mask.as_deref())?;
                adam_step(&mut self.net, &g, &mut self.opt, &adam)?;
                loss += l;
                updates += 1.0;
            }
        }
        Ok(QStats {
            loss: loss / updates,
            mean_target: mean(&batch.targets),
            samples: batch.len(),
        })
    }
}

/// An all-goals network and a goal-conditioned one trained side by side;
/// actions come from a combination of both value estimates.
#[derive(Clone, Debug)]
pub struct DualLeoPqn {
    pub leo: LeoPqn,
    pub uvfa: UvfaPqn,
}

impl DualLeoPqn {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        num_goals: usize,
        num_actions: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            leo: LeoPqn::new(obs_dim, num_goals, num_actions, cfg, rng)?,
            uvfa: UvfaPqn::new(obs_dim, num_goals, num_actions, cfg, rng)?,
        })
    }

    pub fn q_values(&self, obs: &[f32], obs_dim: usize, goals: &[GoalId], cfg: &TrainConfig) -> Result<Vec<f32>> {
        check_rows(obs, obs_dim, goals)?;
        dual_leo_q_batch(obs, obs_dim, goals, &self.leo.net, &self.uvfa.net, cfg)
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f32],
        obs_dim: usize,
        goals: &[GoalId],
        eps: f64,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let q = self.q_values(obs, obs_dim, goals, cfg)?;
        Ok(eps_greedy(&q, self.leo.num_actions(), eps, rng))
    }

    /// Returns the all-goals and the goal-conditioned statistics.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        segments: &[Segment],
        cfg: &TrainConfig,
        frac: f64,
        rng: &mut R,
    ) -> Result<(QStats, QStats)> {
        let a = self.leo.update(segments, cfg, frac, rng)?;
        let b = self.uvfa.update(segments, cfg, frac, rng)?;
        Ok((a, b))
    }
}
