use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::algos::TrainConfig;
use crate::gridcraft::GridConfig;
use crate::pointmaze::Dynamics;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    UvfaPqn,
    UvfaPqnHer,
    Leo,
    DualLeoPqn,
    Ppo,
    DualLeoPpo,
    LeoDpg,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::UvfaPqn,
        Method::UvfaPqnHer,
        Method::Leo,
        Method::DualLeoPqn,
        Method::Ppo,
        Method::DualLeoPpo,
        Method::LeoDpg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::UvfaPqn => "uvfa_pqn",
            Method::UvfaPqnHer => "uvfa_pqn_her",
            Method::Leo => "leo",
            Method::DualLeoPqn => "dual_leo_pqn",
            Method::Ppo => "ppo",
            Method::DualLeoPpo => "dual_leo_ppo",
            Method::LeoDpg => "leo_dpg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("method", format!("unknown method `{s}`")))
    }

    pub fn continuous(self) -> bool {
        self == Method::LeoDpg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    GridcraftSmall,
    GridcraftFull,
    Pointmaze,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::GridcraftSmall => "gridcraft_small",
            EnvKind::GridcraftFull => "gridcraft_full",
            EnvKind::Pointmaze => "pointmaze",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [EnvKind::GridcraftSmall, EnvKind::GridcraftFull, EnvKind::Pointmaze]
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::config("env", format!("unknown env `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSubsample {
    pub k: usize,
    #[serde(default)]
    pub must_include: Vec<String>,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub env: EnvKind,
    pub train: TrainConfig,
    pub total_steps: u64,
    /// Evaluate (and checkpoint) whenever this many steps have passed.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seed: u64,
    /// Command only goals that have been achieved at least once.
    pub autocurriculum: bool,
    pub goal_subsample: Option<GoalSubsample>,
    pub out_dir: Option<PathBuf>,
    pub grid: GridConfig,
    /// Named maze (`umaze`) or a path to a maze JSON file.
    pub maze: String,
    pub dynamics: Dynamics,
    /// Include wall-clock throughput in metrics records. Off by default so
    /// metrics files are reproducible byte for byte.
    pub log_sps: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Leo,
            env: EnvKind::GridcraftSmall,
            train: TrainConfig::default(),
            total_steps: 200_000,
            eval_every: 50_000,
            eval_episodes: 16,
            seed: 0,
            autocurriculum: true,
            goal_subsample: None,
            out_dir: None,
            grid: GridConfig::default(),
            maze: "umaze".into(),
            dynamics: Dynamics::default(),
            log_sps: false,
        }
    }
}

fn parse_err(e: serde_json::Error) -> Error {
    let msg = e.to_string();
    // serde reports "unknown field `x`" / "missing field `x`"; surface the name
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("config")
        .to_string();
    Error::config(field, msg)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(parse_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reads `path` (or starts from defaults) and applies `key=value`
    /// overrides with dotted keys, e.g. `train.lr=1e-3`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => serde_json::from_str::<Value>(&fs::read_to_string(p)?).map_err(parse_err)?,
            None => serde_json::to_value(Self::default())?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(parse_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.method.continuous() != (self.env == EnvKind::Pointmaze) {
            return Err(Error::config(
                "method",
                format!(
                    "{} cannot run on {}: leo_dpg needs pointmaze and pointmaze needs leo_dpg",
                    self.method.name(),
                    self.env.name()
                ),
            ));
        }
        if self.total_steps == 0 {
            return Err(Error::config("total_steps", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be positive"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "must be at least 1"));
        }
        if let Some(s) = &self.goal_subsample {
            if s.k == 0 {
                return Err(Error::config("goal_subsample.k", "must be at least 1"));
            }
            if self.env == EnvKind::Pointmaze {
                return Err(Error::config("goal_subsample", "only gridcraft goal sets can be subsampled"));
            }
        }
        if self.env == EnvKind::Pointmaze && !(self.train.grid_spacing > 0.0 && self.train.eps_reach >= 0.0) {
            return Err(Error::config("train.grid_spacing", "needs a positive spacing and non-negative reach"));
        }
        Ok(())
    }
}

/// Sets the dotted `key` of a JSON document to `value`; the value is read
/// as JSON when it parses and as a bare string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(key, "empty path segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::config(key, format!("`{part}` is not an index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::config(key, format!("index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null => {
                *cur = Value::Object(Default::default());
                let Value::Object(map) = cur else { unreachable!() };
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            _ => return Err(Error::config(key, format!("`{part}` is inside a non-object value"))),
        };
    }
    Ok(())
}
