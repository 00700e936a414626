use rand::Rng;

use super::{max_of, tensor_from, uvfa_input_row, ActingMode, Segment, TrainConfig};
use crate::goalspace::GoalId;
use crate::numkit::{mlp_backward, mlp_forward, NetGrads, NetParams, Real, Tensor};
use crate::{Error, Result};

/// Backward Q(lambda) recursion
/// `y_t = r_t + g(1-d_t)[(1-l) m_t + l y_{t+1}]`, where `m_t` is the max
/// next-state value and `y_{t+1}` is replaced by `m_t` wherever `chain[t]`
/// is false (segment end or a change of goal).
pub fn q_lambda_returns(
    rewards: &[f32],
    dones: &[bool],
    next_max: &[f32],
    chain: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<f32> {
    let n = rewards.len();
    let mut out = vec![0.0f32; n];
    let mut next_y = 0.0f64;
    for t in (0..n).rev() {
        let m = next_max[t] as f64;
        let follow = if chain[t] { next_y } else { m };
        let y = if dones[t] {
            rewards[t] as f64
        } else {
            rewards[t] as f64 + gamma * ((1.0 - lambda) * m + lambda * follow)
        };
        out[t] = y as f32;
        next_y = y;
    }
    out
}

/// Inputs, behaviour actions and targets for a UVFA-shaped network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UvfaBatch {
    /// Rows of `obs ++ onehot(goal)`.
    pub input: Vec<f32>,
    pub width: usize,
    pub actions: Vec<usize>,
    pub targets: Vec<f32>,
}

impl UvfaBatch {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push(&mut self, obs: &[f32], goal: GoalId, num_goals: usize, action: usize, target: f32) {
        uvfa_input_row(obs, goal, num_goals, &mut self.input);
        self.actions.push(action);
        self.targets.push(target);
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut out = Self::new(self.width);
        for &i in idx {
            out.input
                .extend_from_slice(&self.input[i * self.width..(i + 1) * self.width]);
            out.actions.push(self.actions[i]);
            out.targets.push(self.targets[i]);
        }
        out
    }
}

/// A (segment, time, goal) triple to be regressed, with the reward and done
/// flag for that goal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QEntry {
    pub seg: usize,
    pub t: usize,
    pub goal: GoalId,
    pub reward: f32,
    pub done: bool,
}

/// Q(lambda) targets for an ordered list of entries. The lambda-return
/// chains from entry `i` into entry `i + 1` only when that is the next time
/// step of the same segment under the same goal; otherwise it bootstraps
/// fully from the max next-state value. The last step of a segment
/// bootstraps from the segment's `bootstrap_obs`.
pub fn uvfa_entry_targets(
    segments: &[Segment],
    entries: &[QEntry],
    params: &NetParams<f32>,
    cfg: &TrainConfig,
) -> Result<Vec<f32>> {
    if entries.is_empty() {
        return Ok(Vec::new());
    }
    let num_goals = params.input_dim().checked_sub(obs_width(segments)?).ok_or_else(|| {
        Error::shape("network input is narrower than the observation")
    })?;
    let mut rows = Vec::with_capacity(entries.len() * params.input_dim());
    for e in entries {
        let seg = segments
            .get(e.seg)
            .ok_or_else(|| Error::shape(format!("segment {} out of range", e.seg)))?;
        let tr = seg
            .transitions
            .get(e.t)
            .ok_or_else(|| Error::shape(format!("time {} out of range", e.t)))?;
        if e.goal.index() >= num_goals {
            return Err(Error::UnknownGoal(e.goal.to_string()));
        }
        let next = if e.t + 1 == seg.len() { &seg.bootstrap_obs } else { &tr.next_obs };
        uvfa_input_row(next, e.goal, num_goals, &mut rows);
    }
    let out = forward_rows(params, &rows)?;
    let a = params.head().per_goal;
    let n = entries.len();
    let m: Vec<f32> = (0..n).map(|i| max_of(&out[i * a..(i + 1) * a])).collect();
    let chain: Vec<bool> = (0..n)
        .map(|i| {
            i + 1 < n && {
                let (e, f) = (&entries[i], &entries[i + 1]);
                f.seg == e.seg && f.t == e.t + 1 && f.goal == e.goal
            }
        })
        .collect();
    let r: Vec<f32> = entries.iter().map(|e| e.reward).collect();
    let d: Vec<bool> = entries.iter().map(|e| e.done).collect();
    Ok(q_lambda_returns(&r, &d, &m, &chain, cfg.gamma, cfg.lambda_q))
}

/// Per-transition Q(lambda) targets for a goal sequence per segment (for
/// example the commanded goals), rewards read from each goal's channel.
pub fn uvfa_q_targets(
    segments: &[Segment],
    goals: &[Vec<GoalId>],
    params: &NetParams<f32>,
    cfg: &TrainConfig,
) -> Result<Vec<Vec<f32>>> {
    if segments.len() != goals.len() {
        return Err(Error::shape("one goal sequence per segment is required"));
    }
    let mut entries = Vec::new();
    for (s, (seg, gs)) in segments.iter().zip(goals).enumerate() {
        if gs.len() != seg.len() {
            return Err(Error::shape("goal sequence length differs from segment length"));
        }
        for (t, (tr, &g)) in seg.transitions.iter().zip(gs).enumerate() {
            let (reward, done) = tr
                .reward_vec
                .rewards
                .get(g.index())
                .map(|&r| (r, tr.reward_vec.dones[g.index()]))
                .ok_or_else(|| Error::UnknownGoal(g.to_string()))?;
            entries.push(QEntry { seg: s, t, goal: g, reward, done });
        }
    }
    let flat = uvfa_entry_targets(segments, &entries, params, cfg)?;
    let mut out = Vec::with_capacity(segments.len());
    let mut i = 0;
    for seg in segments {
        out.push(flat[i..i + seg.len()].to_vec());
        i += seg.len();
    }
    Ok(out)
}

fn obs_width(segments: &[Segment]) -> Result<usize> {
    segments
        .iter()
        .find_map(|s| s.transitions.first().map(|t| t.obs.len()))
        .ok_or_else(|| Error::shape("empty segment batch"))
}

fn forward_rows(params: &NetParams<f32>, rows: &[f32]) -> Result<Vec<f32>> {
    let x = tensor_from::<f32>(rows, params.input_dim())?;
    Ok(mlp_forward(params, &x)?.into_output().into_data())
}

fn check_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite {
            block: "loss".into(),
        })
    }
}

/// Mean squared error between `Q(a|s,g)` and the (fixed) targets.
pub fn uvfa_q_loss<T: Real>(params: &NetParams<T>, batch: &UvfaBatch) -> Result<(f64, NetGrads<T>)> {
    let head = params.head();
    if head.num_goals != 1 {
        return Err(Error::shape("UVFA loss needs a single-head network"));
    }
    let n = batch.len();
    if n == 0 || batch.targets.len() != n {
        return Err(Error::shape("empty or ragged UVFA batch"));
    }
    let acts = mlp_forward(params, &tensor_from::<T>(&batch.input, batch.width)?)?;
    let na = head.per_goal;
    let q = acts.output().data();
    let mut grad = vec![T::zero(); n * na];
    let mut loss = 0.0;
    let scale = T::of(2.0 / n as f64);
    for i in 0..n {
        let a = batch.actions[i];
        if a >= na {
            return Err(Error::shape(format!("action {a} outside {na} actions")));
        }
        let diff = q[i * na + a] - T::of(batch.targets[i] as f64);
        loss += diff.as_f64() * diff.as_f64();
        grad[i * na + a] = scale * diff;
    }
    let loss = check_loss(loss / n as f64)?;
    let g = mlp_backward(params, &acts, &Tensor::new(vec![n, 1, na], grad)?)?;
    Ok((loss, g))
}

/// Observations, behaviour actions and per-goal targets for a curried
/// network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LeoBatch {
    pub input: Vec<f32>,
    pub width: usize,
    pub actions: Vec<usize>,
    /// `[len x num_goals]`.
    pub targets: Vec<f32>,
    pub num_goals: usize,
}

impl LeoBatch {
    pub fn new(width: usize, num_goals: usize) -> Self {
        Self {
            width,
            num_goals,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut out = Self::new(self.width, self.num_goals);
        let (w, g) = (self.width, self.num_goals);
        for &i in idx {
            out.input.extend_from_slice(&self.input[i * w..(i + 1) * w]);
            out.actions.push(self.actions[i]);
            out.targets.extend_from_slice(&self.targets[i * g..(i + 1) * g]);
        }
        out
    }
}

/// Q(lambda) targets for every goal at once: row `t` of each result holds
/// `y_t` for all goals, each goal using its own reward and done channel.
pub fn leo_q_targets(
    segments: &[Segment],
    params: &NetParams<f32>,
    cfg: &TrainConfig,
) -> Result<Vec<Vec<f32>>> {
    let head = params.head();
    let (ng, na) = (head.num_goals, head.per_goal);
    let mut rows = Vec::new();
    for seg in segments {
        for (t, tr) in seg.transitions.iter().enumerate() {
            if tr.reward_vec.len() != ng {
                return Err(Error::shape(format!(
                    "network has {ng} heads but transitions carry {} goals",
                    tr.reward_vec.len()
                )));
            }
            let next = if t + 1 == seg.len() { &seg.bootstrap_obs } else { &tr.next_obs };
            rows.extend_from_slice(next);
        }
    }
    let out = forward_rows(params, &rows)?;
    let mut all = Vec::with_capacity(segments.len());
    let mut row0 = 0;
    for seg in segments {
        let n = seg.len();
        let mut y = vec![0.0f32; n * ng];
        let mut next_y = vec![0.0f64; ng];
        for t in (0..n).rev() {
            let tr = &seg.transitions[t];
            let q = &out[(row0 + t) * ng * na..(row0 + t + 1) * ng * na];
            for g in 0..ng {
                let m = max_of(&q[g * na..(g + 1) * na]) as f64;
                let follow = if t + 1 < n { next_y[g] } else { m };
                let r = tr.reward_vec.rewards[g] as f64;
                let v = if tr.reward_vec.dones[g] {
                    r
                } else {
                    r + cfg.gamma * ((1.0 - cfg.lambda_q) * m + cfg.lambda_q * follow)
                };
                y[t * ng + g] = v as f32;
                next_y[g] = v;
            }
        }
        all.push(y);
        row0 += n;
    }
    Ok(all)
}

/// Per-head Bernoulli keep mask.
pub fn sample_head_mask<R: Rng + ?Sized>(num_goals: usize, keep_prob: f64, rng: &mut R) -> Vec<bool> {
    (0..num_goals).map(|_| rng.random_bool(keep_prob.clamp(0.0, 1.0))).collect()
}

/// All-goals squared error, one forward and one backward pass for the whole
/// batch. Masked-out heads contribute nothing; the sum is always divided by
/// `len * num_goals`, so the expected masked gradient is `keep_prob` times
/// the full gradient.
pub fn leo_q_loss<T: Real>(
    params: &NetParams<T>,
    batch: &LeoBatch,
    mask: Option<&[bool]>,
) -> Result<(f64, NetGrads<T>)> {
    let head = params.head();
    let (ng, na) = (head.num_goals, head.per_goal);
    if ng != batch.num_goals {
        return Err(Error::shape(format!(
            "network has {ng} heads, goal set has {}",
            batch.num_goals
        )));
    }
    if let Some(m) = mask {
        if m.len() != ng {
            return Err(Error::shape(format!("mask has {} entries for {ng} goals", m.len())));
        }
    }
    let n = batch.len();
    if n == 0 || batch.targets.len() != n * ng {
        return Err(Error::shape("empty or ragged all-goals batch"));
    }
    let acts = mlp_forward(params, &tensor_from::<T>(&batch.input, batch.width)?)?;
    let q = acts.output().data();
    let denom = (n * ng) as f64;
    let scale = T::of(2.0 / denom);
    let mut grad = vec![T::zero(); n * ng * na];
    let mut loss = 0.0;
    for i in 0..n {
        let a = batch.actions[i];
        if a >= na {
            return Err(Error::shape(format!("action {a} outside {na} actions")));
        }
        for g in 0..ng {
            if mask.is_some_and(|m| !m[g]) {
                continue;
            }
            let k = (i * ng + g) * na + a;
            let diff = q[k] - T::of(batch.targets[i * ng + g] as f64);
            loss += diff.as_f64() * diff.as_f64();
            grad[k] = scale * diff;
        }
    }
    let loss = check_loss(loss / denom)?;
    let g = mlp_backward(params, &acts, &Tensor::new(vec![n, ng, na], grad)?)?;
    Ok((loss, g))
}

fn combine(leo: f32, uvfa: f32, mode: ActingMode, alpha: f32) -> f32 {
    match mode {
        ActingMode::Max => leo.max(uvfa),
        ActingMode::Min => leo.min(uvfa),
        ActingMode::Linear => alpha * leo + (1.0 - alpha) * uvfa,
    }
}

/// Mixed action values for a batch of `(obs, goal)` rows, `[n x A]`.
pub(crate) fn dual_leo_q_batch(
    obs: &[f32],
    obs_width: usize,
    goals: &[GoalId],
    leo: &NetParams<f32>,
    uvfa: &NetParams<f32>,
    cfg: &TrainConfig,
) -> Result<Vec<f32>> {
    let (ng, na) = (leo.head().num_goals, leo.head().per_goal);
    if uvfa.head().per_goal != na {
        return Err(Error::shape("the two networks disagree on the action count"));
    }
    let leo_q = forward_rows(leo, obs)?;
    let mut rows = Vec::with_capacity(goals.len() * (obs_width + ng));
    for (i, &g) in goals.iter().enumerate() {
        uvfa_input_row(&obs[i * obs_width..(i + 1) * obs_width], g, ng, &mut rows);
    }
    let uvfa_q = forward_rows(uvfa, &rows)?;
    let alpha = cfg.alpha as f32;
    let mut out = Vec::with_capacity(goals.len() * na);
    for (i, &g) in goals.iter().enumerate() {
        let l = &leo_q[(i * ng + g.index()) * na..(i * ng + g.index() + 1) * na];
        let u = &uvfa_q[i * na..(i + 1) * na];
        out.extend(l.iter().zip(u).map(|(&a, &b)| combine(a, b, cfg.acting_mode, alpha)));
    }
    Ok(out)
}

/// Action values used for acting by the dual agent.
pub fn dual_leo_q(
    obs: &[f32],
    goal: GoalId,
    leo: &NetParams<f32>,
    uvfa: &NetParams<f32>,
    cfg: &TrainConfig,
) -> Result<Vec<f32>> {
    if goal.index() >= leo.head().num_goals {
        return Err(Error::UnknownGoal(goal.to_string()));
    }
    dual_leo_q_batch(obs, obs.len(), &[goal], leo, uvfa, cfg)
}
