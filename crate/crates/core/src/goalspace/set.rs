use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense index into a [`GoalSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GoalId(pub usize);

impl GoalId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for GoalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalInfo {
    pub name: String,
    pub category: String,
}

/// Finite ordered goal universe with unique names.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalSet {
    goals: Vec<GoalInfo>,
    by_name: HashMap<String, GoalId>,
}

impl GoalSet {
    pub fn new(goals: Vec<GoalInfo>) -> Result<Self> {
        if goals.is_empty() {
            return Err(Error::invalid("goal set must not be empty"));
        }
        let mut by_name = HashMap::with_capacity(goals.len());
        for (i, g) in goals.iter().enumerate() {
            if by_name.insert(g.name.clone(), GoalId(i)).is_some() {
                return Err(Error::invalid(format!("duplicate goal name `{}`", g.name)));
            }
        }
        Ok(Self { goals, by_name })
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn get(&self, id: GoalId) -> Result<&GoalInfo> {
        self.goals
            .get(id.0)
            .ok_or_else(|| Error::UnknownGoal(format!("#{}", id.0)))
    }

    pub fn name(&self, id: GoalId) -> &str {
        &self.goals[id.0].name
    }

    pub fn id_of(&self, name: &str) -> Result<GoalId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownGoal(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = GoalId> {
        (0..self.goals.len()).map(GoalId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (GoalId, &GoalInfo)> {
        self.goals.iter().enumerate().map(|(i, g)| (GoalId(i), g))
    }

    pub fn names(&self) -> Vec<String> {
        self.goals.iter().map(|g| g.name.clone()).collect()
    }

    /// Plain-text `ID | Name | Category` listing.
    pub fn to_table(&self) -> String {
        let w = self
            .goals
            .iter()
            .map(|g| g.name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = format!("{:<4} {:<w$} {}\n", "ID", "Name", "Category");
        for (id, g) in self.iter() {
            out.push_str(&format!("{:<4} {:<w$} {}\n", id.0, g.name, g.category));
        }
        out
    }
}

/// One entry of a goal-definition file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalDef<P> {
    pub name: String,
    pub category: String,
    pub predicate: P,
}

/// Goal-definition file: `{"goals": [{name, category, predicate}, ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalFile<P> {
    pub goals: Vec<GoalDef<P>>,
}

impl<P: Serialize + DeserializeOwned> GoalFile<P> {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn goal_set(&self) -> Result<GoalSet> {
        GoalSet::new(
            self.goals
                .iter()
                .map(|g| GoalInfo {
                    name: g.name.clone(),
                    category: g.category.clone(),
                })
                .collect(),
        )
    }
}

/// Uniform subset of `k` goals that always contains `must_include`. The
/// result keeps the original relative order and re-densifies ids.
pub fn subsample_goals(gs: &GoalSet, k: usize, seed: u64, must_include: &[&str]) -> Result<GoalSet> {
    if k == 0 || k > gs.len() {
        return Err(Error::invalid(format!(
            "cannot subsample {k} goals from {}",
            gs.len()
        )));
    }
    let mut forced: Vec<usize> = must_include
        .iter()
        .map(|n| gs.id_of(n).map(|g| g.0))
        .collect::<Result<_>>()?;
    forced.sort_unstable();
    forced.dedup();
    if forced.len() > k {
        return Err(Error::invalid(format!(
            "{} forced goals exceed subsample size {k}",
            forced.len()
        )));
    }
    let pool: Vec<usize> = (0..gs.len()).filter(|i| !forced.contains(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = forced;
    chosen.extend(
        sample(&mut rng, pool.len(), k - chosen.len())
            .into_iter()
            .map(|j| pool[j]),
    );
    chosen.sort_unstable();
    GoalSet::new(chosen.into_iter().map(|i| gs.goals[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    fn set(n: usize) -> GoalSet {
        GoalSet::new(
            (0..n)
                .map(|i| GoalInfo {
                    name: format!("g{i}"),
                    category: "test".into(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_duplicates() {
        let g = GoalInfo {
            name: "a".into(),
            category: "c".into(),
        };
        assert!(GoalSet::new(vec![g.clone(), g]).is_err());
    }

    #[test]
    fn full_subsample_is_identity() {
        let gs = set(12);
        assert_eq!(subsample_goals(&gs, 12, 3, &[]).unwrap(), gs);
    }

    #[test]
    fn forced_goal_is_present() {
        let gs = set(49);
        for k in 1..=10 {
            for seed in 0..5 {
                let s = subsample_goals(&gs, k, seed, &["g31"]).unwrap();
                assert_eq!(s.len(), k);
                assert!(s.id_of("g31").is_ok());
            }
        }
    }

    #[test]
    fn different_seeds_differ() {
        let gs = set(49);
        let a: HashSet<_> = subsample_goals(&gs, 10, 0, &[]).unwrap().names().into_iter().collect();
        let b: HashSet<_> = subsample_goals(&gs, 10, 1, &[]).unwrap().names().into_iter().collect();
        assert_eq!(a.len(), 10);
        assert_eq!(b.len(), 10);
        assert_ne!(a, b);
        let again: HashSet<_> = subsample_goals(&gs, 10, 0, &[]).unwrap().names().into_iter().collect();
        assert_eq!(a, again);
    }

    #[test]
    fn subsample_errors() {
        let gs = set(5);
        assert!(subsample_goals(&gs, 6, 0, &[]).is_err());
        assert!(subsample_goals(&gs, 1, 0, &["g0", "g1"]).is_err());
        assert!(subsample_goals(&gs, 3, 0, &["nope"]).is_err());
    }
}
