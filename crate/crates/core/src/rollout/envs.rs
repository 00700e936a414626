use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::GoalEnv;
use crate::goalspace::{quantization_adequacy, quantize_goal, GoalId, GoalMask, QuantGrid};
use crate::gridcraft::{self, generate_world, Action, GridConfig, GridGoals, WorldState};
use crate::pointmaze::{self, ContGoal, Dynamics, MazeSpec, PointState};
use crate::{Error, Result};

/// Gridcraft with a semantic goal set; actions are indices into
/// [`Action::ALL`].
#[derive(Clone, Debug)]
pub struct GridEnv {
    pub cfg: GridConfig,
    pub goals: GridGoals,
}

impl GridEnv {
    pub fn new(cfg: GridConfig, goals: GridGoals) -> Result<Self> {
        if goals.is_empty() {
            return Err(Error::invalid("goal set is empty"));
        }
        generate_world(0, &cfg)?;
        Ok(Self { cfg, goals })
    }
}

impl GoalEnv for GridEnv {
    type State = WorldState;
    type Action = usize;
    type Target = GoalId;

    fn num_goals(&self) -> usize {
        self.goals.len()
    }

    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    fn reset(&self, seed: u64) -> Result<WorldState> {
        generate_world(seed, &self.cfg)
    }

    fn step(&self, state: &WorldState, action: usize) -> WorldState {
        // out-of-range indices are treated as a no-op Do
        let a = Action::ALL.get(action).copied().unwrap_or(Action::Do);
        gridcraft::step(state, a)
    }

    fn observe_into(&self, state: &WorldState, out: &mut Vec<f32>) {
        gridcraft::observe_into(state, self.cfg.view_radius, out);
    }

    fn achieved_into(&self, state: &WorldState, mask: &mut GoalMask) {
        self.goals.achieved_into(state, mask);
    }

    fn is_terminal(&self, state: &WorldState) -> bool {
        state.is_terminal()
    }

    fn eval_target(&self, goal: GoalId, _rng: &mut ChaCha8Rng) -> GoalId {
        goal
    }

    fn target_reached(&self, state: &WorldState, target: &GoalId) -> bool {
        self.goals.goal_holds(state, *target).unwrap_or(false)
    }
}

/// Point maze with goals quantized onto a grid: goal `g` is achieved when
/// the point lies within `eps_reach` of cell center `g`. Evaluation targets
/// are continuous locations inside the commanded cell, judged with the
/// maze's own success radius.
#[derive(Clone, Debug)]
pub struct PointEnv {
    pub spec: MazeSpec,
    pub dynamics: Dynamics,
    pub grid: QuantGrid,
    pub eps_reach: f64,
}

impl PointEnv {
    pub fn new(spec: MazeSpec, dynamics: Dynamics, spacing: f64, eps_reach: f64) -> Result<Self> {
        spec.validate()?;
        let grid = spec.goal_grid(spacing)?;
        Ok(Self {
            spec,
            dynamics,
            grid,
            eps_reach,
        })
    }

    /// Whether quantized success is guaranteed to imply continuous success.
    pub fn adequate(&self) -> bool {
        quantization_adequacy(&self.grid, self.eps_reach, self.spec.success_eps)
    }

    /// A uniformly drawn free-space goal and its quantized id.
    pub fn sample_goal(&self, rng: &mut ChaCha8Rng) -> Result<(ContGoal, GoalId)> {
        let g = pointmaze::sample_goal(&self.spec, rng);
        Ok((g, quantize_goal((g.target[0], g.target[1]), &self.grid)?))
    }
}

impl GoalEnv for PointEnv {
    type State = PointState;
    type Action = [f32; 2];
    type Target = ContGoal;

    fn num_goals(&self) -> usize {
        self.grid.num_goals()
    }

    fn obs_dim(&self) -> usize {
        pointmaze::OBS_DIM
    }

    fn reset(&self, seed: u64) -> Result<PointState> {
        Ok(pointmaze::reset(&self.spec, seed).0)
    }

    fn step(&self, state: &PointState, action: [f32; 2]) -> PointState {
        pointmaze::step(&self.spec, &self.dynamics, state, action.map(|v| v as f64))
    }

    fn observe_into(&self, state: &PointState, out: &mut Vec<f32>) {
        pointmaze::observe_into(&self.spec, &self.dynamics, state, out);
    }

    fn achieved_into(&self, state: &PointState, mask: &mut GoalMask) {
        *mask = GoalMask::new(self.grid.num_goals());
        let r2 = self.eps_reach * self.eps_reach;
        for (i, c) in self.grid.centers().iter().enumerate() {
            let (dx, dy) = (state.pos[0] - c.0, state.pos[1] - c.1);
            if dx * dx + dy * dy <= r2 {
                mask.set(i);
            }
        }
    }

    fn is_terminal(&self, state: &PointState) -> bool {
        state.step_count >= self.dynamics.t_max
    }

    /// Uniform over the part of cell `goal` that is a valid goal location;
    /// the center if rejection sampling finds nothing.
    fn eval_target(&self, goal: GoalId, rng: &mut ChaCha8Rng) -> ContGoal {
        let c = self.grid.center(goal);
        let h = self.grid.spacing();
        for _ in 0..64 {
            let p = [
                c.0 + (rng.random::<f64>() - 0.5) * h,
                c.1 + (rng.random::<f64>() - 0.5) * h,
            ];
            if self.spec.is_goal_location(p) && quantize_goal((p[0], p[1]), &self.grid).ok() == Some(goal) {
                return ContGoal { target: p };
            }
        }
        ContGoal { target: [c.0, c.1] }
    }

    fn target_reached(&self, state: &PointState, target: &ContGoal) -> bool {
        pointmaze::success(state, target, self.spec.success_eps)
    }
}
