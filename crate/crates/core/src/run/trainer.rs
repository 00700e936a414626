use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{EnvKind, Method, RunConfig};
use crate::algos::{
    epsilon_schedule, leo_dpg_update, ppo_update, DpgBatch, DualLeoPqn, HerStrategy, LeoDpg, LeoPqn, Ppo,
    Segment, TrainConfig, UvfaPqn,
};
use crate::goalspace::{subsample_goals, CommandSampling, GoalId, SeenGoalTracker};
use crate::gridcraft::{GridGoals, WorldState, NUM_ACTIONS};
use crate::numkit::{checkpoint, NetParams};
use crate::pointmaze::{MazeSpec, PointState, ACTION_DIM};
use crate::rollout::{collect, commanded_returns, evaluate, EvalReport, GoalEnv, GridEnv, Lanes, PointEnv};
use crate::{Error, Result};

/// One evaluation point of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub mean_success: f64,
    /// Goals with non-zero success only.
    pub per_goal_success: BTreeMap<String, f64>,
    pub losses: BTreeMap<String, f64>,
    /// Goals achieved at least once so far.
    pub seen_goals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sps: Option<f64>,
}

/// Which policy to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    /// The method's own acting policy.
    Acting,
    /// The all-goals network alone, acting greedily.
    Leo,
    /// The goal-conditioned network alone (the actor for PPO variants).
    Uvfa,
}

pub enum Agent {
    Uvfa(UvfaPqn),
    Leo(LeoPqn),
    Dual(DualLeoPqn),
    Ppo(Ppo),
    DualPpo { ppo: Ppo, leo: LeoPqn },
    Dpg(LeoDpg),
}

impl Agent {
    /// Named parameter blocks, in checkpoint order.
    pub fn nets(&self) -> Vec<(&'static str, &NetParams<f32>)> {
        match self {
            Agent::Uvfa(a) => vec![("uvfa", &a.net)],
            Agent::Leo(a) => vec![("leo", &a.net)],
            Agent::Dual(a) => vec![("leo", &a.leo.net), ("uvfa", &a.uvfa.net)],
            Agent::Ppo(a) => vec![("actor", &a.actor), ("critic", &a.critic)],
            Agent::DualPpo { ppo, leo } => vec![("actor", &ppo.actor), ("critic", &ppo.critic), ("leo", &leo.net)],
            Agent::Dpg(a) => vec![("pi", &a.pi), ("q", &a.q)],
        }
    }

    fn nets_mut(&mut self) -> Vec<(&'static str, &mut NetParams<f32>)> {
        match self {
            Agent::Uvfa(a) => vec![("uvfa", &mut a.net)],
            Agent::Leo(a) => vec![("leo", &mut a.net)],
            Agent::Dual(a) => vec![("leo", &mut a.leo.net), ("uvfa", &mut a.uvfa.net)],
            Agent::Ppo(a) => vec![("actor", &mut a.actor), ("critic", &mut a.critic)],
            Agent::DualPpo { ppo, leo } => vec![
                ("actor", &mut ppo.actor),
                ("critic", &mut ppo.critic),
                ("leo", &mut leo.net),
            ],
            Agent::Dpg(a) => vec![("pi", &mut a.pi), ("q", &mut a.q)],
        }
    }

    /// Discrete actions; `eps == None` means greedy evaluation.
    fn act_discrete(
        &self,
        obs: &[f32],
        obs_dim: usize,
        goals: &[GoalId],
        eps: Option<f64>,
        component: Component,
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>> {
        let e = eps.unwrap_or(0.0);
        match (self, component) {
            (Agent::Uvfa(a), Component::Acting | Component::Uvfa) => a.act(obs, obs_dim, goals, e, rng),
            (Agent::Leo(a), Component::Acting | Component::Leo) => a.act(obs, obs_dim, goals, e, rng),
            (Agent::Dual(a), Component::Acting) => a.act(obs, obs_dim, goals, e, cfg, rng),
            (Agent::Dual(a), Component::Leo) => a.leo.act(obs, obs_dim, goals, e, rng),
            (Agent::Dual(a), Component::Uvfa) => a.uvfa.act(obs, obs_dim, goals, e, rng),
            (Agent::Ppo(p) | Agent::DualPpo { ppo: p, .. }, Component::Acting | Component::Uvfa) => {
                p.act(obs, obs_dim, goals, eps.is_none(), rng)
            }
            (Agent::DualPpo { leo, .. }, Component::Leo) => leo.act(obs, obs_dim, goals, e, rng),
            _ => Err(Error::invalid(format!("{component:?} is not part of this agent"))),
        }
    }

    fn update_discrete(
        &mut self,
        segs: &[Segment],
        cfg: &TrainConfig,
        frac: f64,
        rng: &mut ChaCha8Rng,
        losses: &mut BTreeMap<String, f64>,
    ) -> Result<()> {
        match self {
            Agent::Uvfa(a) => {
                losses.insert("q_loss".into(), a.update(segs, cfg, frac, rng)?.loss);
            }
            Agent::Leo(a) => {
                losses.insert("q_loss".into(), a.update(segs, cfg, frac, rng)?.loss);
            }
            Agent::Dual(a) => {
                let (l, u) = a.update(segs, cfg, frac, rng)?;
                losses.insert("leo_loss".into(), l.loss);
                losses.insert("uvfa_loss".into(), u.loss);
            }
            Agent::Ppo(p) => {
                let s = ppo_update(p, segs, None, cfg, frac, rng)?;
                losses.insert("policy_loss".into(), s.policy_loss);
                losses.insert("value_loss".into(), s.value_loss);
                losses.insert("entropy".into(), s.entropy);
            }
            Agent::DualPpo { ppo, leo } => {
                losses.insert("leo_loss".into(), leo.update(segs, cfg, frac, rng)?.loss);
                let s = ppo_update(ppo, segs, Some(&leo.net), cfg, frac, rng)?;
                losses.insert("policy_loss".into(), s.policy_loss);
                losses.insert("value_loss".into(), s.value_loss);
                losses.insert("entropy".into(), s.entropy);
                losses.insert("aux_policy_loss".into(), s.aux_policy_loss);
                losses.insert("aux_value_loss".into(), s.aux_value_loss);
            }
            Agent::Dpg(_) => return Err(Error::invalid("continuous agent on a discrete environment")),
        }
        Ok(())
    }
}

pub enum World {
    Grid { env: GridEnv, lanes: Lanes<WorldState> },
    Point { env: PointEnv, lanes: Lanes<PointState> },
}

impl World {
    pub fn num_goals(&self) -> usize {
        match self {
            World::Grid { env, .. } => env.num_goals(),
            World::Point { env, .. } => env.num_goals(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            World::Grid { env, .. } => env.obs_dim(),
            World::Point { env, .. } => env.obs_dim(),
        }
    }
}

/// Builds the environment described by `cfg` (without lanes).
pub fn grid_env(cfg: &RunConfig) -> Result<GridEnv> {
    let goals = match cfg.env {
        EnvKind::GridcraftSmall => GridGoals::small(),
        EnvKind::GridcraftFull => GridGoals::full(),
        EnvKind::Pointmaze => return Err(Error::config("env", "pointmaze is not a gridcraft env")),
    };
    let goals = match &cfg.goal_subsample {
        Some(s) => {
            let must: Vec<&str> = s.must_include.iter().map(String::as_str).collect();
            let subset = subsample_goals(goals.set(), s.k, cfg.seed, &must)
                .map_err(|e| Error::config("goal_subsample", e.to_string()))?;
            goals.restrict(&subset)?
        }
        None => goals,
    };
    GridEnv::new(cfg.grid.clone(), goals)
}

pub fn point_env(cfg: &RunConfig) -> Result<PointEnv> {
    let spec = if cfg.maze.ends_with(".json") {
        MazeSpec::load(Path::new(&cfg.maze))?
    } else {
        MazeSpec::named(&cfg.maze)?
    };
    PointEnv::new(spec, cfg.dynamics, cfg.train.grid_spacing, cfg.train.eps_reach)
}

/// Display names of every goal, in id order.
pub fn goal_names(world: &World) -> Vec<String> {
    match world {
        World::Grid { env, .. } => env.goals.set().names(),
        World::Point { env, .. } => env
            .grid
            .centers()
            .iter()
            .enumerate()
            .map(|(i, c)| format!("cell{i}_{:.2}_{:.2}", c.0, c.1))
            .collect(),
    }
}

/// Training settings a method actually uses.
fn effective_train(cfg: &RunConfig) -> TrainConfig {
    let mut t = cfg.train.clone();
    if matches!(cfg.method, Method::UvfaPqn | Method::DualLeoPqn) {
        t.her.strategy = HerStrategy::None;
    }
    t
}

/// Collect/update loop for one configured run.
pub struct Trainer {
    pub cfg: RunConfig,
    pub train: TrainConfig,
    pub world: World,
    pub agent: Agent,
    pub tracker: SeenGoalTracker,
    pub step: u64,
    /// Times each goal was achieved while commanded.
    pub commanded_hits: Vec<u64>,
    /// Commanded episodes checked against the return bound, and failures.
    pub returns_checked: u64,
    pub return_violations: u64,
    pub names: Vec<String>,
    last_losses: BTreeMap<String, f64>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let train = effective_train(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let sampling = if cfg.autocurriculum {
            CommandSampling::SeenGoals
        } else {
            CommandSampling::Uniform
        };
        let lane_seed = rng.random();
        let (world, agent) = match cfg.env {
            EnvKind::Pointmaze => {
                let env = point_env(&cfg)?;
                let tracker = SeenGoalTracker::new(env.num_goals());
                let lanes = Lanes::new(&env, train.num_lanes, lane_seed, sampling, &tracker, &mut rng)?;
                let agent = Agent::Dpg(LeoDpg::new(env.obs_dim(), ACTION_DIM, env.num_goals(), &train, &mut rng)?);
                (World::Point { env, lanes }, agent)
            }
            _ => {
                let env = grid_env(&cfg)?;
                let (od, ng, na) = (env.obs_dim(), env.num_goals(), NUM_ACTIONS);
                let tracker = SeenGoalTracker::new(ng);
                let lanes = Lanes::new(&env, train.num_lanes, lane_seed, sampling, &tracker, &mut rng)?;
                let agent = match cfg.method {
                    Method::UvfaPqn | Method::UvfaPqnHer => Agent::Uvfa(UvfaPqn::new(od, ng, na, &train, &mut rng)?),
                    Method::Leo => Agent::Leo(LeoPqn::new(od, ng, na, &train, &mut rng)?),
                    Method::DualLeoPqn => Agent::Dual(DualLeoPqn::new(od, ng, na, &train, &mut rng)?),
                    Method::Ppo => Agent::Ppo(Ppo::new(od, ng, na, &train, &mut rng)?),
                    Method::DualLeoPpo => Agent::DualPpo {
                        ppo: Ppo::new(od, ng, na, &train, &mut rng)?,
                        leo: LeoPqn::new(od, ng, na, &train, &mut rng)?,
                    },
                    Method::LeoDpg => unreachable!("rejected by validation"),
                };
                (World::Grid { env, lanes }, agent)
            }
        };
        let ng = world.num_goals();
        let names = goal_names(&world);
        Ok(Self {
            cfg,
            train,
            world,
            agent,
            tracker: SeenGoalTracker::new(ng),
            step: 0,
            commanded_hits: vec![0; ng],
            returns_checked: 0,
            return_violations: 0,
            names,
            last_losses: BTreeMap::new(),
            rng,
        })
    }

    pub fn num_goals(&self) -> usize {
        self.world.num_goals()
    }

    pub fn steps_per_iteration(&self) -> u64 {
        (self.train.num_lanes * self.train.num_steps) as u64
    }

    fn audit<A>(&mut self, segs: &[Segment<A>]) {
        for seg in segs {
            for r in commanded_returns(seg) {
                self.returns_checked += 1;
                if r != 0.0 && r != 1.0 {
                    self.return_violations += 1;
                }
            }
            for tr in &seg.transitions {
                let g = tr.commanded.index();
                if tr.reward_vec.rewards[g] > 0.0 {
                    self.commanded_hits[g] += 1;
                }
            }
        }
    }

    /// One collect + update round.
    pub fn iterate(&mut self) -> Result<()> {
        let total = self.cfg.total_steps;
        let frac = self.step as f64 / total as f64;
        let eps = epsilon_schedule(self.step, total, &self.train);
        let mut act_rng = ChaCha8Rng::seed_from_u64(self.rng.random());
        let mut losses = BTreeMap::new();
        match &mut self.world {
            World::Grid { env, lanes } => {
                let od = env.obs_dim();
                let segs = {
                    let (agent, train) = (&self.agent, &self.train);
                    let mut policy = |obs: &[f32], goals: &[GoalId]| {
                        agent.act_discrete(obs, od, goals, Some(eps), Component::Acting, train, &mut act_rng)
                    };
                    collect(env, lanes, &mut policy, self.train.num_steps, &mut self.tracker, &mut self.rng)?
                };
                self.agent.update_discrete(&segs, &self.train, frac, &mut self.rng, &mut losses)?;
                self.audit(&segs);
            }
            World::Point { env, lanes } => {
                let Agent::Dpg(agent) = &mut self.agent else {
                    return Err(Error::invalid("pointmaze needs the continuous agent"));
                };
                let od = env.obs_dim();
                let noise = self.train.action_noise;
                let segs = {
                    let a = &*agent;
                    let mut policy = |obs: &[f32], goals: &[GoalId]| -> Result<Vec<[f32; 2]>> {
                        let flat = a.act(obs, od, goals, noise, &mut act_rng)?;
                        Ok(flat.chunks(ACTION_DIM).map(|c| [c[0], c[1]]).collect())
                    };
                    collect(env, lanes, &mut policy, self.train.num_steps, &mut self.tracker, &mut self.rng)?
                };
                let (c, p) = dpg_updates(agent, &segs, env.num_goals(), &self.train, frac, &mut self.rng)?;
                losses.insert("critic_loss".into(), c);
                losses.insert("actor_loss".into(), p);
                self.audit(&segs);
            }
        }
        for (k, v) in &losses {
            if !v.is_finite() {
                return Err(Error::NonFinite { block: k.clone() });
            }
        }
        self.last_losses = losses;
        self.step += self.steps_per_iteration();
        Ok(())
    }

    /// Greedy evaluation of one component on `goals` (all goals if empty).
    pub fn evaluate(&self, component: Component, goals: &[GoalId], episodes: usize) -> Result<EvalReport> {
        let seed = self.cfg.seed ^ 0x5eed_e7a1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all: Vec<GoalId> = (0..self.num_goals()).map(GoalId).collect();
        let goals = if goals.is_empty() { &all[..] } else { goals };
        match &self.world {
            World::Grid { env, .. } => {
                let od = env.obs_dim();
                let mut policy = |obs: &[f32], gs: &[GoalId]| {
                    self.agent
                        .act_discrete(obs, od, gs, None, component, &self.train, &mut rng)
                };
                evaluate(env, &mut policy, goals, episodes, seed, 256)
            }
            World::Point { env, .. } => {
                let Agent::Dpg(a) = &self.agent else {
                    return Err(Error::invalid("pointmaze needs the continuous agent"));
                };
                if component == Component::Uvfa {
                    return Err(Error::invalid("leo_dpg has no goal-conditioned component"));
                }
                let od = env.obs_dim();
                let mut policy = |obs: &[f32], gs: &[GoalId]| -> Result<Vec<[f32; 2]>> {
                    let flat = a.act(obs, od, gs, 0.0, &mut rng)?;
                    Ok(flat.chunks(ACTION_DIM).map(|c| [c[0], c[1]]).collect())
                };
                evaluate(env, &mut policy, goals, episodes, seed, 256)
            }
        }
    }

    /// Evaluates the acting policy and packages a metrics record.
    pub fn record(&self, sps: Option<f64>) -> Result<MetricsRecord> {
        let report = self.evaluate(Component::Acting, &[], self.cfg.eval_episodes)?;
        Ok(MetricsRecord {
            step: self.step,
            mean_success: report.mean_success,
            per_goal_success: report
                .goals
                .iter()
                .zip(&report.per_goal_success)
                .filter(|(_, &s)| s > 0.0)
                .map(|(g, &s)| (self.names[g.index()].clone(), s))
                .collect(),
            losses: self.last_losses.clone(),
            seen_goals: self.tracker.num_seen(),
            sps,
        })
    }

    fn meta(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("method".to_string(), self.cfg.method.name().to_string()),
            ("env".to_string(), self.cfg.env.name().to_string()),
            ("step".to_string(), self.step.to_string()),
            ("num_goals".to_string(), self.num_goals().to_string()),
            ("obs_dim".to_string(), self.world.obs_dim().to_string()),
        ])
    }

    /// Writes one `<net>.json` manifest (plus blob) per network into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, params) in self.agent.nets() {
            checkpoint::save(&dir.join(format!("{name}.json")), params, self.meta())?;
        }
        Ok(())
    }

    /// Loads parameters saved by [`Trainer::save_checkpoint`]; every network
    /// must match the layout this config builds.
    pub fn load_checkpoint(&mut self, dir: &Path) -> Result<()> {
        let method = self.cfg.method.name();
        for (name, params) in self.agent.nets_mut() {
            let path = dir.join(format!("{name}.json"));
            if !path.exists() {
                return Err(Error::Checkpoint {
                    path,
                    message: format!("missing `{name}` network required by method {method}"),
                });
            }
            let (loaded, manifest) = checkpoint::load(&path)?;
            if let Some(m) = manifest.meta.get("method").filter(|m| *m != method) {
                return Err(Error::Checkpoint {
                    path,
                    message: format!("saved by method {m}, config says {method}"),
                });
            }
            if !loaded.same_layout(params) || loaded.output_activation() != params.output_activation() {
                return Err(Error::Checkpoint {
                    path,
                    message: format!(
                        "network `{name}` shape mismatch: checkpoint has input {} / layers {:?} / head {:?}, \
                         config builds input {} / layers {:?} / head {:?}",
                        loaded.input_dim(),
                        loaded.layers().iter().map(|l| l.fan_out).collect::<Vec<_>>(),
                        loaded.head(),
                        params.input_dim(),
                        params.layers().iter().map(|l| l.fan_out).collect::<Vec<_>>(),
                        params.head(),
                    ),
                });
            }
            *params = loaded;
        }
        Ok(())
    }

    /// Runs to `total_steps`, evaluating every `eval_every` steps and at the
    /// end. With an output directory, writes `config.json`, `metrics.jsonl`,
    /// `summary.csv`, `final_eval.csv` and checkpoints.
    pub fn train(
        &mut self,
        out_dir: Option<&Path>,
        mut on_eval: impl FnMut(&Trainer, &MetricsRecord) -> Result<()>,
    ) -> Result<Vec<MetricsRecord>> {
        let mut sink = match out_dir {
            Some(d) => {
                fs::create_dir_all(d)?;
                fs::write(d.join("config.json"), self.cfg.to_json())?;
                Some(BufWriter::new(File::create(d.join("metrics.jsonl"))?))
            }
            None => None,
        };
        let mut records = Vec::new();
        let mut next_eval = self.cfg.eval_every;
        let mut clock = Instant::now();
        let mut since = self.step;
        while self.step < self.cfg.total_steps {
            self.iterate()?;
            let last = self.step >= self.cfg.total_steps;
            if self.step >= next_eval || last {
                while next_eval <= self.step {
                    next_eval += self.cfg.eval_every;
                }
                let sps = (self.step - since) as f64 / clock.elapsed().as_secs_f64().max(1e-9);
                let rec = self.record(self.cfg.log_sps.then_some(sps))?;
                if let (Some(w), Some(d)) = (sink.as_mut(), out_dir) {
                    writeln!(w, "{}", serde_json::to_string(&rec)?)?;
                    w.flush()?;
                    self.save_checkpoint(&checkpoint_dir(d, Some(self.step)))?;
                }
                on_eval(self, &rec)?;
                records.push(rec);
                clock = Instant::now();
                since = self.step;
            }
        }
        if let Some(d) = out_dir {
            self.save_checkpoint(&checkpoint_dir(d, None))?;
            write_summary(&d.join("summary.csv"), &records)?;
            let report = self.evaluate(Component::Acting, &[], self.cfg.eval_episodes)?;
            let mut f = BufWriter::new(File::create(d.join("final_eval.csv"))?);
            writeln!(f, "goal,success")?;
            for (g, s) in report.goals.iter().zip(&report.per_goal_success) {
                writeln!(f, "{},{s}", self.names[g.index()])?;
            }
            f.flush()?;
        }
        Ok(records)
    }
}

/// `checkpoints/step_<n>` or `checkpoints/final`.
pub fn checkpoint_dir(out_dir: &Path, step: Option<u64>) -> PathBuf {
    let leaf = step.map_or_else(|| "final".to_string(), |s| format!("step_{s:010}"));
    out_dir.join("checkpoints").join(leaf)
}

fn write_summary(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let keys: Vec<String> = records
        .iter()
        .flat_map(|r| r.losses.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "step,mean_success,seen_goals")?;
    for k in &keys {
        write!(f, ",{k}")?;
    }
    writeln!(f)?;
    for r in records {
        write!(f, "{},{},{}", r.step, r.mean_success, r.seen_goals)?;
        for k in &keys {
            match r.losses.get(k) {
                Some(v) => write!(f, ",{v}")?,
                None => write!(f, ",")?,
            }
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Flattens continuous-control segments into one-step transitions and runs
/// shuffled minibatch updates. Returns mean critic and actor losses.
fn dpg_updates(
    agent: &mut LeoDpg,
    segs: &[Segment<[f32; 2]>],
    num_goals: usize,
    cfg: &TrainConfig,
    frac: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let rows: Vec<_> = segs.iter().flat_map(|s| s.transitions.iter()).collect();
    let obs_dim = rows.first().map_or(0, |t| t.obs.len());
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    let (mut c, mut p, mut k) = (0.0, 0.0, 0.0f64);
    for _ in 0..cfg.num_epochs {
        rand::seq::SliceRandom::shuffle(&mut idx[..], rng);
        for chunk in idx.chunks(cfg.minibatch_size) {
            let mut b = DpgBatch {
                obs_dim,
                action_dim: ACTION_DIM,
                num_goals,
                ..DpgBatch::default()
            };
            for &i in chunk {
                let t = rows[i];
                b.obs.extend_from_slice(&t.obs);
                b.actions.extend_from_slice(&t.action);
                b.rewards.extend_from_slice(&t.reward_vec.rewards);
                b.dones.extend_from_slice(&t.reward_vec.dones);
                b.next_obs.extend_from_slice(&t.next_obs);
            }
            let s = leo_dpg_update(agent, &b, cfg, frac)?;
            c += s.critic_loss;
            p += s.actor_loss;
            k += 1.0;
        }
    }
    Ok((c / k.max(1.0), p / k.max(1.0)))
}
