//! Learning algorithms: Q(lambda) for UVFA and all-goals (curried) networks,
//! relabelling, dual acting, PPO with cloning losses, all-goals DPG, and a
//! tabular reference learner.

mod dpg;
mod learners;
mod ppo;
mod qlearn;
mod relabel;
mod tabular;

pub use dpg::{
    dpg_actor_loss, dpg_critic_loss, dpg_critic_targets, leo_dpg_update, DpgBatch, LeoDpg,
    DpgStats,
};
pub(crate) use dpg::pair_rows;
pub use learners::{DualLeoPqn, LeoPqn, QStats, UvfaPqn};
pub use ppo::{
    dual_leo_ppo_losses, gae, ppo_loss, ppo_update, AuxStats, Ppo, PpoBatch, PpoStats,
};
pub use qlearn::{
    dual_leo_q, leo_q_loss, leo_q_targets, q_lambda_returns, sample_head_mask,
    uvfa_entry_targets, uvfa_q_loss, uvfa_q_targets, LeoBatch, QEntry, UvfaBatch,
};
pub use relabel::{
    her_relabel, naive_all_goals_relabel, HerConfig, HerLevel, HerStrategy, Relabelled,
};
pub use tabular::{
    per_goal_q_learn, tabular_leo_q_learn, TabularConfig, TabularRun, TabularStep,
};

use serde::{Deserialize, Serialize};

use crate::goalspace::{GoalId, GoalMask, RewardTermVector};
use crate::numkit::{AdamConfig, Real, Tensor};
use crate::{Error, Result};

/// How the two value estimates are combined when acting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActingMode {
    Max,
    Min,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda_q: f64,
    pub eps_start: f64,
    pub eps_final: f64,
    pub eps_decay_frac: f64,
    pub alpha: f64,
    pub acting_mode: ActingMode,
    pub pc_coef: f64,
    pub vc_coef: f64,
    pub anneal_clone: bool,
    pub clip_eps: f64,
    pub gae_lambda: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    /// Fraction of LEO heads whose loss is kept per minibatch.
    pub mask_keep_prob: f64,
    pub lr: f64,
    pub lr_decay: bool,
    pub betas: (f64, f64),
    pub minibatch_size: usize,
    pub num_epochs: usize,
    pub hidden: Vec<usize>,
    pub num_lanes: usize,
    /// Rollout segment length.
    pub num_steps: usize,
    pub her: HerConfig,
    /// Gaussian exploration noise for deterministic continuous policies.
    pub action_noise: f64,
    /// Reach radius for quantized continuous goals.
    pub eps_reach: f64,
    pub grid_spacing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda_q: 0.65,
            eps_start: 0.2,
            eps_final: 0.01,
            eps_decay_frac: 0.5,
            alpha: 0.3,
            acting_mode: ActingMode::Linear,
            pc_coef: 0.1,
            vc_coef: 0.0,
            anneal_clone: true,
            clip_eps: 0.2,
            gae_lambda: 0.95,
            ent_coef: 0.005,
            vf_coef: 0.5,
            mask_keep_prob: 1.0,
            lr: 2e-4,
            lr_decay: true,
            betas: (0.9, 0.999),
            minibatch_size: 256,
            num_epochs: 1,
            hidden: vec![256, 256],
            num_lanes: 64,
            num_steps: 8,
            her: HerConfig::default(),
            action_noise: 0.2,
            eps_reach: 0.1,
            grid_spacing: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(name, format!("{v} is not in [0, 1]")))
            }
        };
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma", format!("{} is not in (0, 1]", self.gamma)));
        }
        prob("lambda_q", self.lambda_q)?;
        prob("eps_start", self.eps_start)?;
        prob("eps_final", self.eps_final)?;
        prob("eps_decay_frac", self.eps_decay_frac)?;
        prob("alpha", self.alpha)?;
        prob("gae_lambda", self.gae_lambda)?;
        prob("mask_keep_prob", self.mask_keep_prob)?;
        if !(self.clip_eps > 0.0) {
            return Err(Error::config("clip_eps", "must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        prob("betas.0", self.betas.0)?;
        prob("betas.1", self.betas.1)?;
        for (name, v) in [
            ("minibatch_size", self.minibatch_size),
            ("num_epochs", self.num_epochs),
            ("num_lanes", self.num_lanes),
            ("num_steps", self.num_steps),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden", "needs at least one non-empty layer"));
        }
        if !(self.pc_coef >= 0.0 && self.vc_coef >= 0.0 && self.ent_coef >= 0.0 && self.vf_coef >= 0.0) {
            return Err(Error::config("pc_coef", "loss coefficients must be non-negative"));
        }
        Ok(())
    }

    /// Adam settings at training progress `frac` in [0, 1]; with decay the
    /// learning rate falls linearly to zero.
    pub fn adam(&self, frac: f64) -> AdamConfig {
        let lr = if self.lr_decay {
            self.lr * (1.0 - frac.clamp(0.0, 1.0))
        } else {
            self.lr
        };
        AdamConfig {
            lr,
            beta1: self.betas.0,
            beta2: self.betas.1,
            ..AdamConfig::default()
        }
    }
}

/// Linear decay from `eps_start` to `eps_final` over the first
/// `eps_decay_frac` of training, constant afterwards.
pub fn epsilon_schedule(step: u64, total_steps: u64, cfg: &TrainConfig) -> f64 {
    let horizon = cfg.eps_decay_frac * total_steps as f64;
    if horizon <= 0.0 {
        return cfg.eps_final;
    }
    let frac = (step as f64 / horizon).min(1.0);
    cfg.eps_start + (cfg.eps_final - cfg.eps_start) * frac
}

/// One environment step, carrying the outcome for every goal.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<A = usize> {
    pub obs: Vec<f32>,
    pub action: A,
    pub commanded: GoalId,
    pub reward_vec: RewardTermVector,
    pub next_obs: Vec<f32>,
    /// Goals satisfied in the next state.
    pub achieved_mask: GoalMask,
    /// True episode end (world reset follows).
    pub episode_done: bool,
}

/// Time-contiguous transitions of one lane plus the observation after the
/// last one.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment<A = usize> {
    pub transitions: Vec<Transition<A>>,
    pub bootstrap_obs: Vec<f32>,
}

impl<A> Segment<A> {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn commanded_goals(&self) -> Vec<GoalId> {
        self.transitions.iter().map(|t| t.commanded).collect()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn max_of<T: Real>(v: &[T]) -> T {
    v.iter().copied().fold(T::neg_infinity(), T::max)
}

/// Writes `obs ++ onehot(goal)` into `out`.
pub fn uvfa_input_row(obs: &[f32], goal: GoalId, num_goals: usize, out: &mut Vec<f32>) {
    out.extend_from_slice(obs);
    let start = out.len();
    out.resize(start + num_goals, 0.0);
    out[start + goal.index()] = 1.0;
}

/// Stacks f32 rows of width `width` into a `[rows, width]` tensor of `T`.
pub(crate) fn tensor_from<T: Real>(data: &[f32], width: usize) -> Result<Tensor<T>> {
    if width == 0 || data.len() % width != 0 {
        return Err(Error::shape(format!(
            "{} values do not form rows of width {width}",
            data.len()
        )));
    }
    Tensor::new(
        vec![data.len() / width, width],
        data.iter().map(|&v| T::of(v as f64)).collect(),
    )
}
