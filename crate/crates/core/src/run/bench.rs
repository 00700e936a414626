use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algos::{HerStrategy, LeoPqn, Segment, TrainConfig, UvfaPqn};
use crate::goalspace::{CommandSampling, GoalId, GoalMask, SeenGoalTracker};
use crate::gridcraft::{GridConfig, GridGoals, NUM_ACTIONS};
use crate::rollout::{collect, GoalEnv, GridEnv, Lanes};
use crate::{Error, Result};

/// Presents `num_goals` goals over an environment with fewer (or more):
/// goal `i` is the inner goal `i mod n`. Lets throughput be measured at
/// goal counts the built-in sets do not reach.
#[derive(Clone, Debug)]
pub struct TiledGoals<E> {
    pub inner: E,
    pub num_goals: usize,
}

impl<E: GoalEnv<Target = GoalId>> GoalEnv for TiledGoals<E> {
    type State = E::State;
    type Action = E::Action;
    type Target = GoalId;

    fn num_goals(&self) -> usize {
        self.num_goals
    }

    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn reset(&self, seed: u64) -> Result<E::State> {
        self.inner.reset(seed)
    }

    fn step(&self, state: &E::State, action: E::Action) -> E::State {
        self.inner.step(state, action)
    }

    fn observe_into(&self, state: &E::State, out: &mut Vec<f32>) {
        self.inner.observe_into(state, out)
    }

    fn achieved_into(&self, state: &E::State, mask: &mut GoalMask) {
        let n = self.inner.num_goals();
        let mut inner = GoalMask::new(n);
        self.inner.achieved_into(state, &mut inner);
        *mask = GoalMask::from_indices(self.num_goals, (0..self.num_goals).filter(|i| inner.get(i % n)));
    }

    fn is_terminal(&self, state: &E::State) -> bool {
        self.inner.is_terminal(state)
    }

    fn eval_target(&self, goal: GoalId, _rng: &mut ChaCha8Rng) -> GoalId {
        goal
    }

    fn target_reached(&self, state: &E::State, target: &GoalId) -> bool {
        let mut m = GoalMask::new(self.num_goals);
        self.achieved_into(state, &mut m);
        m.get(target.index())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    /// Goal-conditioned net trained on the commanded goal only.
    SingleGoal,
    /// All-goals net, one pass per minibatch.
    Leo,
    /// Goal-conditioned net trained on every transition under every goal.
    NaiveRelabel,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 3] = [BenchMethod::SingleGoal, BenchMethod::Leo, BenchMethod::NaiveRelabel];

    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::SingleGoal => "single_goal",
            BenchMethod::Leo => "leo",
            BenchMethod::NaiveRelabel => "naive_relabel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("methods", format!("unknown bench method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub methods: Vec<BenchMethod>,
    pub goal_counts: Vec<usize>,
    /// Environment steps timed per (method, goal count) cell.
    pub steps: u64,
    /// Hidden width shared by every method (two hidden layers).
    pub width: usize,
    pub minibatch_size: usize,
    pub num_lanes: usize,
    pub num_steps: usize,
    /// Time only the learning update on a fixed pre-collected batch.
    pub update_only: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: BenchMethod::ALL.to_vec(),
            goal_counts: vec![1, 4, 16, 64],
            steps: 4096,
            width: 256,
            minibatch_size: 256,
            num_lanes: 64,
            num_steps: 8,
            update_only: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub goal_count: usize,
    pub method: BenchMethod,
    pub sps: f64,
}

enum Learner {
    Uvfa(UvfaPqn),
    Leo(LeoPqn),
}

impl Learner {
    fn act(&self, obs: &[f32], od: usize, goals: &[GoalId], rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        match self {
            Learner::Uvfa(n) => n.act(obs, od, goals, 0.1, rng),
            Learner::Leo(n) => n.act(obs, od, goals, 0.1, rng),
        }
    }

    fn update(&mut self, m: BenchMethod, segs: &[Segment], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<()> {
        match self {
            Learner::Leo(n) => n.update(segs, cfg, 0.0, rng).map(drop),
            Learner::Uvfa(n) if m == BenchMethod::NaiveRelabel => {
                let e = n.naive_entries(segs);
                n.update_entries(segs, &e, cfg, 0.0, rng).map(drop)
            }
            Learner::Uvfa(n) => n.update(segs, cfg, 0.0, rng).map(drop),
        }
    }
}

fn bench_cell(cfg: &BenchConfig, goals: usize, method: BenchMethod) -> Result<f64> {
    let env = TiledGoals {
        inner: GridEnv::new(GridConfig::default(), GridGoals::full())?,
        num_goals: goals,
    };
    let train = TrainConfig {
        hidden: vec![cfg.width, cfg.width],
        minibatch_size: cfg.minibatch_size,
        num_lanes: cfg.num_lanes,
        num_steps: cfg.num_steps,
        her: crate::algos::HerConfig {
            strategy: HerStrategy::None,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    train.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let od = env.obs_dim();
    let mut learner = match method {
        BenchMethod::Leo => Learner::Leo(LeoPqn::new(od, goals, NUM_ACTIONS, &train, &mut rng)?),
        _ => Learner::Uvfa(UvfaPqn::new(od, goals, NUM_ACTIONS, &train, &mut rng)?),
    };
    let mut tracker = SeenGoalTracker::new(goals);
    let mut lanes = Lanes::new(&env, cfg.num_lanes, rng.random(), CommandSampling::Uniform, &tracker, &mut rng)?;
    let mut act_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let per_iter = (cfg.num_lanes * cfg.num_steps) as u64;
    let iters = cfg.steps.div_ceil(per_iter).max(1);

    let mut gather = |learner: &Learner, lanes: &mut Lanes<_>, tracker: &mut SeenGoalTracker, rng: &mut ChaCha8Rng| {
        let mut policy = |obs: &[f32], g: &[GoalId]| learner.act(obs, od, g, &mut act_rng);
        collect(&env, lanes, &mut policy, cfg.num_steps, tracker, rng)
    };
    // warm-up round, also the fixed batch for update-only timing
    let fixed = gather(&learner, &mut lanes, &mut tracker, &mut rng)?;
    learner.update(method, &fixed, &train, &mut rng)?;

    let start = Instant::now();
    for _ in 0..iters {
        if cfg.update_only {
            learner.update(method, &fixed, &train, &mut rng)?;
        } else {
            let segs = gather(&learner, &mut lanes, &mut tracker, &mut rng)?;
            learner.update(method, &segs, &train, &mut rng)?;
        }
    }
    Ok((iters * per_iter) as f64 / start.elapsed().as_secs_f64().max(1e-9))
}

/// Times every (goal count, method) cell with identical width, minibatch
/// and goal set across methods.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.goal_counts.contains(&0) {
        return Err(Error::config("goal_counts", "goal counts must be positive"));
    }
    if cfg.width == 0 || cfg.minibatch_size == 0 || cfg.num_lanes == 0 || cfg.num_steps == 0 {
        return Err(Error::config("width", "width, minibatch, lanes and steps must be positive"));
    }
    let mut rows = Vec::new();
    for &g in &cfg.goal_counts {
        for &m in &cfg.methods {
            rows.push(BenchRow {
                goal_count: g,
                method: m,
                sps: bench_cell(cfg, g, m)?,
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("goal_count,method,sps\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.1}", r.goal_count, r.method.name(), r.sps);
    }
    s
}
