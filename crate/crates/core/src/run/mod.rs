//! Run plumbing shared by the command line and the bindings: configs,
//! the training loop, metrics, checkpoints, evaluation reports,
//! throughput benchmarks and the gradient-check suite.

mod bench;
mod config;
mod gradcheck;
mod trainer;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bench::{bench_csv, run_bench, BenchConfig, BenchMethod, BenchRow, TiledGoals};
pub use config::{apply_override, EnvKind, GoalSubsample, Method, RunConfig};
pub use gradcheck::{gradcheck_suite, GradcheckResult, GRADCHECK_EPS, GRADCHECK_TOL};
pub use trainer::{
    checkpoint_dir, goal_names, grid_env, point_env, Agent, Component, MetricsRecord, Trainer, World,
};

use crate::goalspace::GoalId;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalRow {
    pub goal: String,
    pub success: f64,
}

/// Per-goal evaluation of a checkpoint (or of fresh parameters).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: String,
    pub env: String,
    pub episodes_per_goal: usize,
    pub mean_success: f64,
    /// Sorted by success, best first; ties by name.
    pub rows: Vec<GoalRow>,
    pub violations: u64,
}

impl EvalSummary {
    pub fn table(&self) -> String {
        let w = self.rows.iter().map(|r| r.goal.len()).max().unwrap_or(4).max(4);
        let mut s = format!("{:<w$}  success\n", "goal");
        for r in &self.rows {
            let _ = writeln!(s, "{:<w$}  {:.3}", r.goal, r.success);
        }
        let _ = writeln!(s, "{:<w$}  {:.3}", "mean", self.mean_success);
        s
    }
}

/// Evaluates the acting policy of `cfg`'s method, loaded from `checkpoint`
/// when given, on every goal or only `goal`.
pub fn eval_checkpoint(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    goal: Option<&str>,
    episodes: usize,
) -> Result<EvalSummary> {
    let mut trainer = Trainer::new(cfg.clone())?;
    if let Some(dir) = checkpoint {
        trainer.load_checkpoint(dir)?;
    }
    let goals: Vec<GoalId> = match goal {
        Some(name) => vec![trainer
            .names
            .iter()
            .position(|n| n == name)
            .map(GoalId)
            .ok_or_else(|| Error::UnknownGoal(name.to_string()))?],
        None => Vec::new(),
    };
    let report = trainer.evaluate(Component::Acting, &goals, episodes)?;
    let mut rows: Vec<GoalRow> = report
        .goals
        .iter()
        .zip(&report.per_goal_success)
        .map(|(g, &s)| GoalRow {
            goal: trainer.names[g.index()].clone(),
            success: s,
        })
        .collect();
    rows.sort_by(|a, b| b.success.total_cmp(&a.success).then_with(|| a.goal.cmp(&b.goal)));
    Ok(EvalSummary {
        method: cfg.method.name().to_string(),
        env: cfg.env.name().to_string(),
        episodes_per_goal: episodes,
        mean_success: report.mean_success,
        rows,
        violations: report.violations,
    })
}

/// Goal table (`id  name  category`) for the configured environment.
pub fn list_goals(cfg: &RunConfig) -> Result<String> {
    match cfg.env {
        EnvKind::Pointmaze => {
            let env = point_env(cfg)?;
            let mut s = String::from("id  name  center\n");
            for (i, c) in env.grid.centers().iter().enumerate() {
                let _ = writeln!(s, "{i}  cell{i}_{:.2}_{:.2}  ({:.2}, {:.2})", c.0, c.1, c.0, c.1);
            }
            Ok(s)
        }
        _ => Ok(grid_env(cfg)?.goals.set().to_table()),
    }
}

#[cfg(test)]
mod tests;
