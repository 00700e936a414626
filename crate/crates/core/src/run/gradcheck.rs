use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::Method;
use crate::algos::{
    dpg_actor_loss, dpg_critic_loss, dpg_critic_targets, dual_leo_ppo_losses, leo_q_loss, pair_rows, ppo_loss,
    tensor_from, uvfa_q_loss, DpgBatch, LeoBatch, PpoBatch, TrainConfig, UvfaBatch,
};
use crate::goalspace::GoalId;
use crate::numkit::{
    finite_diff_check, finite_diff_check_piecewise, mlp_forward, HeadShape, MlpArch, NetGrads, NetParams,
    OutputActivation, Tensor,
};
use crate::Result;

pub const GRADCHECK_EPS: f64 = 1e-4;
pub const GRADCHECK_TOL: f64 = 1e-3;
const PROBES: usize = 200;
const OBS: usize = 6;
const GOALS: usize = 5;
const ACTIONS: usize = 4;
const HIDDEN: [usize; 2] = [16, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckResult {
    pub loss: String,
    pub max_rel_error: f64,
}

impl GradcheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOL
    }
}

fn net(input: usize, head: HeadShape, out: OutputActivation, rng: &mut ChaCha8Rng) -> Result<NetParams<f64>> {
    NetParams::init(&MlpArch::new(input, &HIDDEN, head).with_output(out), rng)
}

/// ReLU on/off pattern of `p` over the rows of `input`.
fn relu_region(p: &NetParams<f64>, input: &[f32], width: usize) -> Vec<bool> {
    let x = tensor_from::<f64>(input, width).expect("valid rows");
    mlp_forward(p, &x).expect("valid net").relu_pattern()
}

/// Actor ReLU pattern plus which side of the clip range each ratio is on.
fn ppo_region(actor: &NetParams<f64>, b: &PpoBatch, clip: f64) -> Vec<bool> {
    let x = tensor_from::<f64>(&b.input, b.width).expect("valid rows");
    let acts = mlp_forward(actor, &x).expect("valid net");
    let mut out = acts.relu_pattern();
    for (i, &a) in b.actions.iter().enumerate() {
        let z = acts.output_row(i);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let ratio = (z[a] - lse - b.old_log_probs[i] as f64).exp();
        out.push(ratio < 1.0 - clip);
        out.push(ratio > 1.0 + clip);
    }
    out
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn ppo_batch(rng: &mut ChaCha8Rng, n: usize) -> PpoBatch {
    let width = OBS + GOALS;
    let mut input = Vec::with_capacity(n * width);
    for _ in 0..n {
        input.extend(uniform(rng, OBS, -1.0, 1.0));
        let g = rng.random_range(0..GOALS);
        input.extend((0..GOALS).map(|j| if j == g { 1.0 } else { 0.0 }));
    }
    PpoBatch {
        input,
        width,
        actions: (0..n).map(|_| rng.random_range(0..ACTIONS)).collect(),
        old_log_probs: uniform(rng, n, -1.8, -0.9),
        advantages: uniform(rng, n, -1.0, 1.0),
        returns: uniform(rng, n, 0.0, 1.0),
        clone_actions: (0..n).map(|_| rng.random_range(0..ACTIONS)).collect(),
        clone_values: uniform(rng, n, 0.0, 1.0),
    }
}

/// Finite-difference checks of every learning loss on small seeded nets
/// and batches. `method` restricts the suite to the losses that method
/// trains with; a quadratic sanity loss is always included.
pub fn gradcheck_suite(method: Option<Method>, seed: u64) -> Result<Vec<GradcheckResult>> {
    let wants = |ms: &[Method]| method.is_none_or(|m| ms.contains(&m));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, err: f64| {
        out.push(GradcheckResult {
            loss: name.to_string(),
            max_rel_error: err,
        })
    };
    let probe_seed = seed.wrapping_mul(31).wrapping_add(7);

    let p = net(OBS, HeadShape::single(ACTIONS), OutputActivation::Identity, &mut rng)?;
    push(
        "quadratic",
        finite_diff_check(
            &p,
            |q| {
                let l = q.as_slice().iter().map(|v| v * v).sum::<f64>() / 2.0;
                (l, NetGrads { data: q.as_slice().to_vec() })
            },
            GRADCHECK_EPS,
            PROBES,
            probe_seed,
        ),
    );

    if wants(&[Method::UvfaPqn, Method::UvfaPqnHer, Method::DualLeoPqn]) {
        let mut b = UvfaBatch::new(OBS + GOALS);
        for _ in 0..12 {
            let o = uniform(&mut rng, OBS, -1.0, 1.0);
            let g = GoalId(rng.random_range(0..GOALS));
            let a = rng.random_range(0..ACTIONS);
            b.push(&o, g, GOALS, a, rng.random_range(0.0..1.0));
        }
        let p = net(OBS + GOALS, HeadShape::single(ACTIONS), OutputActivation::Sigmoid, &mut rng)?;
        let e = finite_diff_check_piecewise(
            &p,
            |q| uvfa_q_loss(q, &b).expect("valid batch"),
            |q| relu_region(q, &b.input, b.width),
            GRADCHECK_EPS,
            PROBES,
            probe_seed,
        );
        push("uvfa_q", e);
    }

    if wants(&[Method::Leo, Method::DualLeoPqn, Method::DualLeoPpo]) {
        let n = 12;
        let b = LeoBatch {
            input: uniform(&mut rng, n * OBS, -1.0, 1.0),
            width: OBS,
            actions: (0..n).map(|_| rng.random_range(0..ACTIONS)).collect(),
            targets: uniform(&mut rng, n * GOALS, 0.0, 1.0),
            num_goals: GOALS,
        };
        let p = net(OBS, HeadShape::curried(GOALS, ACTIONS), OutputActivation::Sigmoid, &mut rng)?;
        let region = |q: &NetParams<f64>| relu_region(q, &b.input, OBS);
        let e = finite_diff_check_piecewise(
            &p,
            |q| leo_q_loss(q, &b, None).expect("valid batch"),
            region,
            GRADCHECK_EPS,
            PROBES,
            probe_seed,
        );
        push("leo_q", e);
        let mask = [true, false, true, true, false];
        let e = finite_diff_check_piecewise(
            &p,
            |q| leo_q_loss(q, &b, Some(&mask)).expect("valid batch"),
            region,
            GRADCHECK_EPS,
            PROBES,
            probe_seed,
        );
        push("leo_q_masked", e);
    }

    if wants(&[Method::Ppo, Method::DualLeoPpo]) {
        let b = ppo_batch(&mut rng, 12);
        let actor = net(OBS + GOALS, HeadShape::single(ACTIONS), OutputActivation::Identity, &mut rng)?;
        let critic = net(OBS + GOALS, HeadShape::single(1), OutputActivation::Sigmoid, &mut rng)?;
        let cfg = TrainConfig {
            ent_coef: 0.05,
            ..TrainConfig::default()
        };
        let total = |s: &crate::algos::PpoStats| s.policy_loss - cfg.ent_coef * s.entropy + cfg.vf_coef * s.value_loss;
        let clip = cfg.clip_eps;
        let e = finite_diff_check_piecewise(
            &actor,
            |p| {
                let (s, ga, _) = ppo_loss(p, &critic, &b, &cfg).expect("valid batch");
                (total(&s), ga)
            },
            |p| ppo_region(p, &b, clip),
            GRADCHECK_EPS,
            PROBES,
            probe_seed,
        );
        push("ppo_surrogate", e);
        let e = finite_diff_check_piecewise(
            &critic,
            |p| {
                let (s, _, gc) = ppo_loss(&actor, p, &b, &cfg).expect("valid batch");
                (total(&s), gc)
            },
            |p| relu_region(p, &b.input, b.width),
            GRADCHECK_EPS,
            PROBES,
            probe_seed,
        );
        push("ppo_value", e);

        if wants(&[Method::DualLeoPpo]) {
            let e = finite_diff_check_piecewise(
                &actor,
                |p| {
                    let (s, ga, _) = dual_leo_ppo_losses(p, &critic, &b, 0.1, 0.5).expect("valid batch");
                    (s.policy + s.value, ga)
                },
                |p| relu_region(p, &b.input, b.width),
                GRADCHECK_EPS,
                PROBES,
                probe_seed,
            );
            push("dual_leo_ppo_policy_clone", e);
            let e = finite_diff_check_piecewise(
                &critic,
                |p| {
                    let (s, _, gc) = dual_leo_ppo_losses(&actor, p, &b, 0.1, 0.5).expect("valid batch");
                    (s.policy + s.value, gc)
                },
                |p| relu_region(p, &b.input, b.width),
                GRADCHECK_EPS,
                PROBES,
                probe_seed,
            );
            push("dual_leo_ppo_value_clone", e);
        }
    }

    if wants(&[Method::LeoDpg]) {
        let (n, ad) = (10, 2);
        let dones: Vec<bool> = (0..n * GOALS).map(|_| rng.random_bool(0.3)).collect();
        let b = DpgBatch {
            obs: uniform(&mut rng, n * OBS, -1.0, 1.0),
            obs_dim: OBS,
            actions: uniform(&mut rng, n * ad, -1.0, 1.0),
            action_dim: ad,
            rewards: dones.iter().map(|&d| if d { 1.0 } else { 0.0 }).collect(),
            dones,
            next_obs: uniform(&mut rng, n * OBS, -1.0, 1.0),
            num_goals: GOALS,
        };
        let q = net(OBS + ad, HeadShape::curried(GOALS, 1), OutputActivation::Sigmoid, &mut rng)?;
        let pi = net(OBS, HeadShape::curried(GOALS, ad), OutputActivation::Tanh, &mut rng)?;
        let y = dpg_critic_targets(&q.cast(), &pi.cast(), &b, 0.99)?;
        let sa: Vec<f32> = (0..n)
            .flat_map(|t| b.obs[t * OBS..(t + 1) * OBS].iter().chain(&b.actions[t * ad..(t + 1) * ad]))
            .copied()
            .collect();
        let e = finite_diff_check_piecewise(
            &q,
            |p| dpg_critic_loss(p, &b, &y).expect("valid batch"),
            |p| relu_region(p, &sa, OBS + ad),
            GRADCHECK_EPS,
            PROBES,
            probe_seed,
        );
        push("leo_dpg_critic", e);
        // the critic is evaluated at the actor's actions, so its pattern counts too
        let actor_region = |p: &NetParams<f64>| {
            let x = tensor_from::<f64>(&b.obs, OBS).expect("valid rows");
            let acts = mlp_forward(p, &x).expect("valid net");
            let rows: Tensor<f64> = pair_rows(&b.obs, OBS, acts.output().data(), GOALS, ad);
            let mut r = acts.relu_pattern();
            r.extend(mlp_forward(&q, &rows).expect("valid net").relu_pattern());
            r
        };
        let e = finite_diff_check_piecewise(
            &pi,
            |p| dpg_actor_loss(&q, p, &b).expect("valid batch"),
            actor_region,
            GRADCHECK_EPS,
            PROBES,
            probe_seed,
        );
        push("leo_dpg_actor", e);
    }
    Ok(out)
}
