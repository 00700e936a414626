use rand::seq::SliceRandom;
use rand::Rng;

use super::{argmax, max_of, tensor_from, uvfa_input_row, Segment, TrainConfig};
use crate::goalspace::GoalId;
use crate::numkit::{
    adam_step, mlp_backward, mlp_forward, AdamState, HeadShape, MlpArch, NetGrads, NetParams,
    OutputActivation, Real, Tensor,
};
use crate::{Error, Result};

/// Generalized advantage estimation. `chain[t]` says whether step `t + 1`
/// continues the same commanded episode; `next_values[t]` is `V(s_{t+1})`.
pub fn gae(
    rewards: &[f32],
    dones: &[bool],
    values: &[f32],
    next_values: &[f32],
    chain: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f32>, Vec<f32>) {
    let n = rewards.len();
    let mut adv = vec![0.0f32; n];
    let mut ret = vec![0.0f32; n];
    let mut next_adv = 0.0f64;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] as f64 + gamma * live * next_values[t] as f64 - values[t] as f64;
        let carry = if chain[t] { next_adv } else { 0.0 };
        let a = delta + gamma * lambda * live * carry;
        adv[t] = a as f32;
        ret[t] = (a + values[t] as f64) as f32;
        next_adv = a;
    }
    (adv, ret)
}

/// Everything one PPO minibatch needs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PpoBatch {
    /// Rows of `obs ++ onehot(goal)`.
    pub input: Vec<f32>,
    pub width: usize,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f32>,
    pub advantages: Vec<f32>,
    pub returns: Vec<f32>,
    /// Greedy action of the all-goals network for the same goal.
    pub clone_actions: Vec<usize>,
    /// Its value estimate, `max_a Q(s, a, g)`.
    pub clone_values: Vec<f32>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let w = self.width;
        let pick = |v: &[f32]| -> Vec<f32> {
            if v.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| v[i]).collect()
            }
        };
        Self {
            input: idx
                .iter()
                .flat_map(|&i| self.input[i * w..(i + 1) * w].iter().copied())
                .collect(),
            width: w,
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            old_log_probs: pick(&self.old_log_probs),
            advantages: pick(&self.advantages),
            returns: pick(&self.returns),
            clone_actions: if self.clone_actions.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.clone_actions[i]).collect()
            },
            clone_values: pick(&self.clone_values),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    /// Largest `|ratio - 1|` over the batch before the first update.
    pub initial_ratio_dev: f64,
    pub aux_policy_loss: f64,
    pub aux_value_loss: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AuxStats {
    pub policy: f64,
    pub value: f64,
}

fn log_softmax<T: Real>(logits: &[T], out: &mut [T]) {
    let m = max_of(logits);
    let lse = logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln() + m;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = z - lse;
    }
}

fn check_batch(batch: &PpoBatch, actor: usize) -> Result<()> {
    let n = batch.len();
    if n == 0 || batch.input.len() != n * batch.width || batch.width != actor {
        return Err(Error::shape("PPO batch does not match the actor input"));
    }
    Ok(())
}

/// Clipped surrogate, entropy bonus and value regression for one
/// minibatch. Returns the gradients of
/// `policy_loss - ent_coef * entropy + vf_coef * value_loss`.
pub fn ppo_loss<T: Real>(
    actor: &NetParams<T>,
    critic: &NetParams<T>,
    batch: &PpoBatch,
    cfg: &TrainConfig,
) -> Result<(PpoStats, NetGrads<T>, NetGrads<T>)> {
    check_batch(batch, actor.input_dim())?;
    let n = batch.len();
    if batch.old_log_probs.len() != n || batch.advantages.len() != n || batch.returns.len() != n {
        return Err(Error::shape("PPO batch is missing per-sample statistics"));
    }
    let x = tensor_from::<T>(&batch.input, batch.width)?;
    let acts = mlp_forward(actor, &x)?;
    let na = actor.head().width();
    let logits = acts.output().data();
    let inv_n = 1.0 / n as f64;
    let lo = 1.0 - cfg.clip_eps;
    let hi = 1.0 + cfg.clip_eps;
    let mut stats = PpoStats::default();
    let mut glog = vec![T::zero(); n * na];
    let mut logp = vec![T::zero(); na];
    for i in 0..n {
        let z = &logits[i * na..(i + 1) * na];
        log_softmax(z, &mut logp);
        let a = batch.actions[i];
        let new_lp = logp[a].as_f64();
        let old_lp = batch.old_log_probs[i] as f64;
        let ratio = (new_lp - old_lp).exp();
        if !ratio.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite PPO ratio at sample {i}: log_prob {new_lp}, old {old_lp}, logits {:?}",
                z.iter().map(|v| v.as_f64()).collect::<Vec<_>>()
            )));
        }
        let adv = batch.advantages[i] as f64;
        let clipped = ratio.clamp(lo, hi);
        let unclipped_active = ratio * adv <= clipped * adv;
        stats.policy_loss -= inv_n * (ratio * adv).min(clipped * adv);
        stats.approx_kl += inv_n * (old_lp - new_lp);
        if (ratio - 1.0).abs() > cfg.clip_eps {
            stats.clip_frac += inv_n;
        }
        let ent: f64 = -logp.iter().map(|&l| l.as_f64().exp() * l.as_f64()).sum::<f64>();
        stats.entropy += inv_n * ent;
        let d_lp = if unclipped_active { -adv * ratio * inv_n } else { 0.0 };
        for j in 0..na {
            let lpj = logp[j].as_f64();
            let p = lpj.exp();
            let onehot = if j == a { 1.0 } else { 0.0 };
            let g = d_lp * (onehot - p) + cfg.ent_coef * inv_n * p * (lpj + ent);
            glog[i * na + j] = T::of(g);
        }
    }
    let ga = mlp_backward(actor, &acts, &Tensor::new(vec![n, 1, na], glog)?)?;

    let vacts = mlp_forward(critic, &x)?;
    let v = vacts.output().data();
    let mut gv = vec![T::zero(); n];
    for i in 0..n {
        let d = v[i].as_f64() - batch.returns[i] as f64;
        stats.value_loss += inv_n * d * d;
        gv[i] = T::of(2.0 * cfg.vf_coef * d * inv_n);
    }
    let gc = mlp_backward(critic, &vacts, &Tensor::new(vec![n, 1, 1], gv)?)?;
    Ok((stats, ga, gc))
}

/// Cloning losses towards the all-goals teacher: `pc * CE(pi, onehot(a*))`
/// and `vc * (V - v*)^2`, both averaged over the batch. The teacher's
/// targets are fixed inputs, so no gradient reaches it.
pub fn dual_leo_ppo_losses<T: Real>(
    actor: &NetParams<T>,
    critic: &NetParams<T>,
    batch: &PpoBatch,
    pc_coef: f64,
    vc_coef: f64,
) -> Result<(AuxStats, NetGrads<T>, NetGrads<T>)> {
    check_batch(batch, actor.input_dim())?;
    let n = batch.len();
    if batch.clone_actions.len() != n || batch.clone_values.len() != n {
        return Err(Error::shape("PPO batch has no teacher targets"));
    }
    let x = tensor_from::<T>(&batch.input, batch.width)?;
    let inv_n = 1.0 / n as f64;
    let mut stats = AuxStats::default();

    let acts = mlp_forward(actor, &x)?;
    let na = actor.head().width();
    let logits = acts.output().data();
    let mut logp = vec![T::zero(); na];
    let mut glog = vec![T::zero(); n * na];
    for i in 0..n {
        log_softmax(&logits[i * na..(i + 1) * na], &mut logp);
        let a = batch.clone_actions[i];
        stats.policy -= pc_coef * inv_n * logp[a].as_f64();
        for j in 0..na {
            let onehot = if j == a { 1.0 } else { 0.0 };
            glog[i * na + j] = T::of(pc_coef * inv_n * (logp[j].as_f64().exp() - onehot));
        }
    }
    let ga = mlp_backward(actor, &acts, &Tensor::new(vec![n, 1, na], glog)?)?;

    let vacts = mlp_forward(critic, &x)?;
    let v = vacts.output().data();
    let mut gv = vec![T::zero(); n];
    for i in 0..n {
        let d = v[i].as_f64() - batch.clone_values[i] as f64;
        stats.value += vc_coef * inv_n * d * d;
        gv[i] = T::of(2.0 * vc_coef * inv_n * d);
    }
    let gc = mlp_backward(critic, &vacts, &Tensor::new(vec![n, 1, 1], gv)?)?;
    Ok((stats, ga, gc))
}

/// Goal-conditioned actor-critic: softmax policy logits and a
/// sigmoid-bounded value, both fed `obs ++ onehot(goal)`.
#[derive(Clone, Debug)]
pub struct Ppo {
    pub actor: NetParams<f32>,
    pub critic: NetParams<f32>,
    actor_opt: AdamState<f32>,
    critic_opt: AdamState<f32>,
    num_goals: usize,
}

impl Ppo {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        num_goals: usize,
        num_actions: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let input = obs_dim + num_goals;
        let actor = NetParams::init(
            &MlpArch::new(input, &cfg.hidden, HeadShape::single(num_actions))
                .with_output(OutputActivation::Identity),
            rng,
        )?;
        let critic = NetParams::init(
            &MlpArch::new(input, &cfg.hidden, HeadShape::single(1))
                .with_output(OutputActivation::Sigmoid),
            rng,
        )?;
        Ok(Self::from_params(actor, critic, num_goals))
    }

    pub fn from_params(actor: NetParams<f32>, critic: NetParams<f32>, num_goals: usize) -> Self {
        Self {
            actor_opt: AdamState::new(&actor),
            critic_opt: AdamState::new(&critic),
            actor,
            critic,
            num_goals,
        }
    }

    pub fn num_goals(&self) -> usize {
        self.num_goals
    }

    fn rows(&self, obs: &[f32], obs_dim: usize, goals: &[GoalId]) -> Vec<f32> {
        let mut rows = Vec::with_capacity(goals.len() * (obs_dim + self.num_goals));
        for (i, &g) in goals.iter().enumerate() {
            uvfa_input_row(&obs[i * obs_dim..(i + 1) * obs_dim], g, self.num_goals, &mut rows);
        }
        rows
    }

    /// Policy logits, `[n x A]`.
    pub fn logits(&self, obs: &[f32], obs_dim: usize, goals: &[GoalId]) -> Result<Vec<f32>> {
        let rows = self.rows(obs, obs_dim, goals);
        let x = tensor_from::<f32>(&rows, self.actor.input_dim())?;
        Ok(mlp_forward(&self.actor, &x)?.into_output().into_data())
    }

    /// Samples actions, or takes the most likely one when `greedy`.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f32],
        obs_dim: usize,
        goals: &[GoalId],
        greedy: bool,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let logits = self.logits(obs, obs_dim, goals)?;
        let na = self.actor.head().width();
        let mut lp = vec![0.0f32; na];
        Ok(logits
            .chunks(na)
            .map(|z| {
                if greedy {
                    return argmax(z);
                }
                log_softmax(z, &mut lp);
                let u: f32 = rng.random();
                let mut acc = 0.0;
                for (j, &l) in lp.iter().enumerate() {
                    acc += l.exp();
                    if u < acc {
                        return j;
                    }
                }
                na - 1
            })
            .collect())
    }
}

/// Builds the full on-policy batch: old log-probs, GAE on the commanded
/// channel and, when a teacher is given, its greedy actions and values.
fn build_batch(
    ppo: &Ppo,
    segments: &[Segment],
    teacher: Option<&NetParams<f32>>,
    cfg: &TrainConfig,
) -> Result<PpoBatch> {
    let first = segments
        .iter()
        .find_map(|s| s.transitions.first())
        .ok_or_else(|| Error::shape("empty segment batch"))?;
    let obs_dim = first.obs.len();
    let ng = ppo.num_goals;
    let mut obs = Vec::new();
    let mut next = Vec::new();
    let mut goals = Vec::new();
    for seg in segments {
        for (t, tr) in seg.transitions.iter().enumerate() {
            obs.extend_from_slice(&tr.obs);
            next.extend_from_slice(if t + 1 == seg.len() { &seg.bootstrap_obs } else { &tr.next_obs });
            goals.push(tr.commanded);
        }
    }
    let input = ppo.rows(&obs, obs_dim, &goals);
    let next_input = ppo.rows(&next, obs_dim, &goals);
    let w = ppo.actor.input_dim();
    let v = mlp_forward(&ppo.critic, &tensor_from(&input, w)?)?.into_output().into_data();
    let v2 = mlp_forward(&ppo.critic, &tensor_from(&next_input, w)?)?.into_output().into_data();
    let logits = mlp_forward(&ppo.actor, &tensor_from(&input, w)?)?.into_output().into_data();
    let na = ppo.actor.head().width();

    let mut batch = PpoBatch {
        width: w,
        ..PpoBatch::default()
    };
    let mut lp = vec![0.0f32; na];
    let mut row = 0;
    for seg in segments {
        let n = seg.len();
        let mut r = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        let mut chain = Vec::with_capacity(n);
        for (t, tr) in seg.transitions.iter().enumerate() {
            let g = tr.commanded.index();
            r.push(tr.reward_vec.rewards[g]);
            d.push(tr.reward_vec.dones[g]);
            chain.push(t + 1 < n && seg.transitions[t + 1].commanded == tr.commanded);
            log_softmax(&logits[(row + t) * na..(row + t + 1) * na], &mut lp);
            batch.actions.push(tr.action);
            batch.old_log_probs.push(lp[tr.action]);
        }
        let (adv, ret) = gae(
            &r,
            &d,
            &v[row..row + n],
            &v2[row..row + n],
            &chain,
            cfg.gamma,
            cfg.gae_lambda,
        );
        batch.advantages.extend(adv);
        batch.returns.extend(ret);
        row += n;
    }
    batch.input = input;
    if let Some(leo) = teacher {
        if leo.head().num_goals != ng {
            return Err(Error::shape("teacher head count differs from the goal set"));
        }
        let q = mlp_forward(leo, &tensor_from(&obs, obs_dim)?)?.into_output().into_data();
        let qa = leo.head().per_goal;
        for (i, g) in goals.iter().enumerate() {
            let s = &q[(i * ng + g.index()) * qa..(i * ng + g.index() + 1) * qa];
            batch.clone_actions.push(argmax(s));
            batch.clone_values.push(max_of(s));
        }
    }
    Ok(batch)
}

fn normalize(v: &mut [f32]) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // a constant batch carries no ranking information
    let scale = if std > 1e-8 { 1.0 / (std + 1e-8) } else { 0.0 };
    for x in v {
        *x = ((*x as f64 - mean) * scale) as f32;
    }
}

/// Cloning coefficients at training progress `frac`.
pub(crate) fn clone_coefs(cfg: &TrainConfig, frac: f64) -> (f64, f64) {
    let k = if cfg.anneal_clone { 1.0 - frac.clamp(0.0, 1.0) } else { 1.0 };
    (cfg.pc_coef * k, cfg.vc_coef * k)
}

/// `num_epochs` passes of shuffled minibatches over the on-policy batch.
/// With a teacher, the (annealed) cloning losses are added.
pub fn ppo_update<R: Rng + ?Sized>(
    ppo: &mut Ppo,
    segments: &[Segment],
    teacher: Option<&NetParams<f32>>,
    cfg: &TrainConfig,
    frac: f64,
    rng: &mut R,
) -> Result<PpoStats> {
    let batch = build_batch(ppo, segments, teacher, cfg)?;
    let n = batch.len();
    let adam = cfg.adam(frac);
    let (pc, vc) = clone_coefs(cfg, frac);

    let mut out = PpoStats::default();
    {
        let x = tensor_from::<f32>(&batch.input, batch.width)?;
        let logits = mlp_forward(&ppo.actor, &x)?.into_output().into_data();
        let na = ppo.actor.head().width();
        let mut lp = vec![0.0f32; na];
        for i in 0..n {
            log_softmax(&logits[i * na..(i + 1) * na], &mut lp);
            let dev = ((lp[batch.actions[i]] - batch.old_log_probs[i]) as f64).exp() - 1.0;
            out.initial_ratio_dev = out.initial_ratio_dev.max(dev.abs());
        }
    }

    let mut idx: Vec<usize> = (0..n).collect();
    let mut updates = 0.0;
    for _ in 0..cfg.num_epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.minibatch_size) {
            let mut mb = batch.select(chunk);
            normalize(&mut mb.advantages);
            let (s, mut ga, mut gc) = ppo_loss(&ppo.actor, &ppo.critic, &mb, cfg)?;
            if teacher.is_some() && (pc > 0.0 || vc > 0.0) {
                let (aux, aa, ac) = dual_leo_ppo_losses(&ppo.actor, &ppo.critic, &mb, pc, vc)?;
                ga.add_assign(&aa);
                gc.add_assign(&ac);
                out.aux_policy_loss += aux.policy;
                out.aux_value_loss += aux.value;
            }
            adam_step(&mut ppo.actor, &ga, &mut ppo.actor_opt, &adam)?;
            adam_step(&mut ppo.critic, &gc, &mut ppo.critic_opt, &adam)?;
            out.policy_loss += s.policy_loss;
            out.value_loss += s.value_loss;
            out.entropy += s.entropy;
            out.approx_kl += s.approx_kl;
            out.clip_frac += s.clip_frac;
            updates += 1.0;
        }
    }
    for v in [
        &mut out.policy_loss,
        &mut out.value_loss,
        &mut out.entropy,
        &mut out.approx_kl,
        &mut out.clip_frac,
        &mut out.aux_policy_loss,
        &mut out.aux_value_loss,
    ] {
        *v /= updates;
    }
    Ok(out)
}
