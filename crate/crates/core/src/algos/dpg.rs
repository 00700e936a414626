use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{tensor_from, TrainConfig};
use crate::goalspace::GoalId;
use crate::numkit::{
    adam_step, mlp_backward, mlp_backward_with_input, mlp_forward, mlp_forward_head, AdamState, HeadShape, MlpArch,
    NetGrads, NetParams, OutputActivation, Real, Tensor,
};
use crate::{Error, Result};

/// Off-policy minibatch for the all-goals deterministic policy gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DpgBatch {
    pub obs: Vec<f32>,
    pub obs_dim: usize,
    /// Behaviour actions, `[n x action_dim]`.
    pub actions: Vec<f32>,
    pub action_dim: usize,
    /// `[n x num_goals]`.
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    pub next_obs: Vec<f32>,
    pub num_goals: usize,
}

impl DpgBatch {
    pub fn len(&self) -> usize {
        if self.obs_dim == 0 {
            0
        } else {
            self.obs.len() / self.obs_dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check<T: Real>(&self, q: &NetParams<T>, pi: Option<&NetParams<T>>) -> Result<usize> {
        let n = self.len();
        let ng = self.num_goals;
        if n == 0
            || self.actions.len() != n * self.action_dim
            || self.rewards.len() != n * ng
            || self.dones.len() != n * ng
            || self.next_obs.len() != self.obs.len()
        {
            return Err(Error::shape("ragged continuous-control batch"));
        }
        if q.input_dim() != self.obs_dim + self.action_dim {
            return Err(Error::shape(format!(
                "critic takes {} inputs, batch has obs {} + action {}",
                q.input_dim(),
                self.obs_dim,
                self.action_dim
            )));
        }
        if q.head() != HeadShape::curried(ng, 1) {
            return Err(Error::shape("critic must have one scalar head per goal"));
        }
        if let Some(pi) = pi {
            if pi.head() != HeadShape::curried(ng, self.action_dim) {
                return Err(Error::shape(format!(
                    "policy head {:?} does not emit {} actions for {ng} goals",
                    pi.head(),
                    self.action_dim
                )));
            }
        }
        Ok(n)
    }
}

/// Rows `obs_t ++ a_{t,g}` for every `(t, g)`, from per-goal actions
/// `[n x G x action_dim]`.
pub(crate) fn pair_rows<T: Real>(obs: &[f32], obs_dim: usize, acts: &[T], ng: usize, ad: usize) -> Tensor<T> {
    let n = obs.len() / obs_dim;
    let mut data = Vec::with_capacity(n * ng * (obs_dim + ad));
    for t in 0..n {
        let o = &obs[t * obs_dim..(t + 1) * obs_dim];
        for g in 0..ng {
            data.extend(o.iter().map(|&v| T::of(v as f64)));
            data.extend_from_slice(&acts[(t * ng + g) * ad..(t * ng + g + 1) * ad]);
        }
    }
    Tensor::new(vec![n * ng, obs_dim + ad], data).expect("non-empty batch")
}

/// `y_g = r_g + gamma (1 - d_g) Q_g(s', pi_g(s'))` for every goal. The `G`
/// next-state action pairs per transition are evaluated as one batched,
/// gradient-free forward pass.
pub fn dpg_critic_targets(
    q: &NetParams<f32>,
    pi: &NetParams<f32>,
    batch: &DpgBatch,
    gamma: f64,
) -> Result<Vec<f32>> {
    let n = batch.check(q, Some(pi))?;
    let (ng, ad) = (batch.num_goals, batch.action_dim);
    let next_a = mlp_forward(pi, &tensor_from::<f32>(&batch.next_obs, batch.obs_dim)?)?.into_output();
    let rows = pair_rows(&batch.next_obs, batch.obs_dim, next_a.data(), ng, ad);
    let heads: Vec<usize> = (0..n * ng).map(|k| k % ng).collect();
    let qv = mlp_forward_head(q, &rows, &heads)?;
    let mut y = vec![0.0f32; n * ng];
    for t in 0..n {
        for g in 0..ng {
            let k = t * ng + g;
            let boot = qv[k] as f64;
            let live = if batch.dones[k] { 0.0 } else { 1.0 };
            y[k] = (batch.rewards[k] as f64 + gamma * live * boot) as f32;
        }
    }
    Ok(y)
}

/// Squared error of every goal's critic at the behaviour action, averaged
/// over transitions and goals; a single backward pass.
pub fn dpg_critic_loss<T: Real>(
    q: &NetParams<T>,
    batch: &DpgBatch,
    targets: &[f32],
) -> Result<(f64, NetGrads<T>)> {
    let n = batch.check(q, None)?;
    let ng = batch.num_goals;
    if targets.len() != n * ng {
        return Err(Error::shape("one target per transition and goal is required"));
    }
    let w = batch.obs_dim + batch.action_dim;
    let mut data = Vec::with_capacity(n * w);
    for t in 0..n {
        data.extend(batch.obs[t * batch.obs_dim..(t + 1) * batch.obs_dim].iter().map(|&v| T::of(v as f64)));
        data.extend(
            batch.actions[t * batch.action_dim..(t + 1) * batch.action_dim]
                .iter()
                .map(|&v| T::of(v as f64)),
        );
    }
    let acts = mlp_forward(q, &Tensor::new(vec![n, w], data)?)?;
    let out = acts.output().data();
    let denom = (n * ng) as f64;
    let mut loss = 0.0;
    let mut grad = vec![T::zero(); n * ng];
    for k in 0..n * ng {
        let d = out[k].as_f64() - targets[k] as f64;
        loss += d * d / denom;
        grad[k] = T::of(2.0 * d / denom);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { block: "critic loss".into() });
    }
    let g = mlp_backward(q, &acts, &Tensor::new(vec![n, ng, 1], grad)?)?;
    Ok((loss, g))
}

/// `mean_{t,g} -Q_g(s_t, pi_g(s_t))` and its gradient with respect to the
/// policy. Each goal's action only influences its own critic head, so every
/// `(t, g)` row carries its own gradient path through the critic; the rows
/// are batched into one backward call that also returns input gradients.
pub fn dpg_actor_loss<T: Real>(
    q: &NetParams<T>,
    pi: &NetParams<T>,
    batch: &DpgBatch,
) -> Result<(f64, NetGrads<T>)> {
    let n = batch.check(q, Some(pi))?;
    let (ng, ad, od) = (batch.num_goals, batch.action_dim, batch.obs_dim);
    let pacts = mlp_forward(pi, &tensor_from::<T>(&batch.obs, od)?)?;
    let rows = pair_rows(&batch.obs, od, pacts.output().data(), ng, ad);
    let qacts = mlp_forward(q, &rows)?;
    let qv = qacts.output().data();
    let denom = (n * ng) as f64;
    let mut loss = 0.0;
    let mut gq = vec![T::zero(); n * ng * ng];
    for k in 0..n * ng {
        let g = k % ng;
        loss -= qv[k * ng + g].as_f64() / denom;
        gq[k * ng + g] = T::of(-1.0 / denom);
    }
    let (_, gin) = mlp_backward_with_input(q, &qacts, &Tensor::new(vec![n * ng, ng, 1], gq)?, true)?;
    let gin = gin.expect("input gradient requested");
    let w = od + ad;
    let mut ga = Vec::with_capacity(n * ng * ad);
    for k in 0..n * ng {
        ga.extend_from_slice(&gin.data()[k * w + od..(k + 1) * w]);
    }
    let g = mlp_backward(pi, &pacts, &Tensor::new(vec![n, ng, ad], ga)?)?;
    Ok((loss, g))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DpgStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// All-goals deterministic actor-critic: one tanh action head and one
/// sigmoid value head per goal.
#[derive(Clone, Debug)]
pub struct LeoDpg {
    pub q: NetParams<f32>,
    pub pi: NetParams<f32>,
    q_opt: AdamState<f32>,
    pi_opt: AdamState<f32>,
}

impl LeoDpg {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        num_goals: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let q = NetParams::init(
            &MlpArch::new(obs_dim + action_dim, &cfg.hidden, HeadShape::curried(num_goals, 1))
                .with_output(OutputActivation::Sigmoid),
            rng,
        )?;
        let pi = NetParams::init(
            &MlpArch::new(obs_dim, &cfg.hidden, HeadShape::curried(num_goals, action_dim))
                .with_output(OutputActivation::Tanh),
            rng,
        )?;
        Ok(Self::from_params(q, pi))
    }

    pub fn from_params(q: NetParams<f32>, pi: NetParams<f32>) -> Self {
        Self {
            q_opt: AdamState::new(&q),
            pi_opt: AdamState::new(&pi),
            q,
            pi,
        }
    }

    pub fn num_goals(&self) -> usize {
        self.pi.head().num_goals
    }

    pub fn action_dim(&self) -> usize {
        self.pi.head().per_goal
    }

    /// Each row's commanded-goal action, plus clipped Gaussian noise of
    /// scale `noise` when positive.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f32],
        obs_dim: usize,
        goals: &[GoalId],
        noise: f64,
        rng: &mut R,
    ) -> Result<Vec<f32>> {
        let out = mlp_forward(&self.pi, &tensor_from::<f32>(obs, obs_dim)?)?.into_output();
        let (ng, ad) = (self.num_goals(), self.action_dim());
        let normal = (noise > 0.0).then(|| Normal::new(0.0, noise).expect("positive scale"));
        let mut acts = Vec::with_capacity(goals.len() * ad);
        for (i, g) in goals.iter().enumerate() {
            let base = (i * ng + g.index()) * ad;
            for &a in &out.data()[base..base + ad] {
                let e = normal.as_ref().map_or(0.0, |d| d.sample(rng));
                acts.push((a as f64 + e).clamp(-1.0, 1.0) as f32);
            }
        }
        Ok(acts)
    }
}

/// Critic step towards the all-goals targets, then an actor step through
/// the updated critic.
pub fn leo_dpg_update(agent: &mut LeoDpg, batch: &DpgBatch, cfg: &TrainConfig, frac: f64) -> Result<DpgStats> {
    if batch.action_dim != agent.action_dim() {
        return Err(Error::shape(format!(
            "batch actions have {} dims, policy emits {}",
            batch.action_dim,
            agent.action_dim()
        )));
    }
    let adam = cfg.adam(frac);
    let y = dpg_critic_targets(&agent.q, &agent.pi, batch, cfg.gamma)?;
    let (critic_loss, gq) = dpg_critic_loss(&agent.q, batch, &y)?;
    adam_step(&mut agent.q, &gq, &mut agent.q_opt, &adam)?;
    let (actor_loss, gp) = dpg_actor_loss(&agent.q, &agent.pi, batch)?;
    adam_step(&mut agent.pi, &gp, &mut agent.pi_opt, &adam)?;
    Ok(DpgStats { critic_loss, actor_loss })
}
