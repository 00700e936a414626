use std::path::Path;

use serde::{Deserialize, Serialize};

use super::world::{Block, Direction, Item, Tool, WorldState, MAX_COUNT};
use crate::goalspace::{GoalDef, GoalFile, GoalId, GoalMask, GoalSet};
use crate::{Error, Result};

/// Observation-decidable goal predicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridPredicate {
    /// Inventory holds exactly `count` of `item`.
    Inventory { item: Item, count: u8 },
    Tool { tool: Tool },
    /// `block` is directly next to the agent in `direction`.
    Adjacent { block: Block, direction: Direction },
}

impl GridPredicate {
    pub fn holds(&self, s: &WorldState) -> bool {
        match *self {
            GridPredicate::Inventory { item, count } => s.count(item) == count,
            GridPredicate::Tool { tool } => s.has_tool(tool),
            GridPredicate::Adjacent { block, direction } => {
                s.adjacent_block(direction) == Some(block)
            }
        }
    }

    pub fn name(&self) -> String {
        match *self {
            GridPredicate::Inventory { item, count } => {
                format!("inventory/{}_{count}", item.name())
            }
            GridPredicate::Tool { tool } => format!("tools/{}", tool.name()),
            GridPredicate::Adjacent { block, direction } => {
                format!("block_map/{}_{}", block.name(), direction.name())
            }
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            GridPredicate::Inventory { .. } => "inventory",
            GridPredicate::Tool { .. } => "tools",
            GridPredicate::Adjacent { .. } => "block_map",
        }
    }

    fn def(self) -> GoalDef<GridPredicate> {
        GoalDef {
            name: self.name(),
            category: self.category().into(),
            predicate: self,
        }
    }
}

const MAP_BLOCKS: [Block; 5] = [
    Block::Tree,
    Block::Stone,
    Block::Water,
    Block::CoalOre,
    Block::CraftingTable,
];

/// A goal set together with the predicate of every goal.
#[derive(Clone, Debug, PartialEq)]
pub struct GridGoals {
    set: GoalSet,
    predicates: Vec<GridPredicate>,
}

impl GridGoals {
    pub fn from_predicates(predicates: Vec<GridPredicate>) -> Result<Self> {
        Self::from_file(GoalFile {
            goals: predicates.into_iter().map(GridPredicate::def).collect(),
        })
    }

    pub fn from_file(file: GoalFile<GridPredicate>) -> Result<Self> {
        for g in &file.goals {
            if let GridPredicate::Inventory { count, .. } = g.predicate {
                if count > MAX_COUNT {
                    return Err(Error::invalid(format!(
                        "goal {}: count {count} exceeds {MAX_COUNT}",
                        g.name
                    )));
                }
            }
        }
        Ok(Self {
            set: file.goal_set()?,
            predicates: file.goals.into_iter().map(|g| g.predicate).collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(GoalFile::load(path)?)
    }

    pub fn to_file(&self) -> GoalFile<GridPredicate> {
        GoalFile {
            goals: self
                .set
                .iter()
                .zip(&self.predicates)
                .map(|((_, info), &predicate)| GoalDef {
                    name: info.name.clone(),
                    category: info.category.clone(),
                    predicate,
                })
                .collect(),
        }
    }

    /// Every inventory count 1..=9, both tools and every block/direction pair.
    pub fn full() -> Self {
        let mut p = Vec::new();
        for item in Item::ALL {
            for count in 1..=MAX_COUNT {
                p.push(GridPredicate::Inventory { item, count });
            }
        }
        for tool in Tool::ALL {
            p.push(GridPredicate::Tool { tool });
        }
        for block in MAP_BLOCKS {
            for direction in Direction::ALL {
                p.push(GridPredicate::Adjacent { block, direction });
            }
        }
        Self::from_predicates(p).expect("built-in goal names are unique")
    }

    /// Twenty goals spanning easy, intermediate and multi-stage tasks.
    pub fn small() -> Self {
        use Direction::*;
        use GridPredicate::*;
        let mut p: Vec<GridPredicate> = (1..=4)
            .map(|count| Inventory { item: Item::Wood, count })
            .collect();
        p.push(Inventory { item: Item::Stone, count: 1 });
        p.push(Inventory { item: Item::Stone, count: 2 });
        p.push(Inventory { item: Item::Coal, count: 1 });
        p.push(Tool { tool: super::Tool::WoodPickaxe });
        p.push(Tool { tool: super::Tool::StonePickaxe });
        for direction in [Up, Down, Left, Right] {
            p.push(Adjacent { block: Block::Tree, direction });
        }
        p.push(Adjacent { block: Block::Water, direction: Left });
        p.push(Adjacent { block: Block::Water, direction: Right });
        for direction in [Up, Down, Left, Right] {
            p.push(Adjacent { block: Block::CraftingTable, direction });
        }
        p.push(Adjacent { block: Block::Stone, direction: Up });
        Self::from_predicates(p).expect("built-in goal names are unique")
    }

    /// Restricts to the goals named in `subset`, in `subset`'s order.
    pub fn restrict(&self, subset: &GoalSet) -> Result<Self> {
        let p = subset
            .iter()
            .map(|(_, info)| Ok(self.predicates[self.set.id_of(&info.name)?.index()]))
            .collect::<Result<Vec<_>>>()?;
        Self::from_predicates(p)
    }

    pub fn set(&self) -> &GoalSet {
        &self.set
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn predicates(&self) -> &[GridPredicate] {
        &self.predicates
    }

    pub fn predicate(&self, id: GoalId) -> Result<GridPredicate> {
        self.predicates
            .get(id.index())
            .copied()
            .ok_or_else(|| Error::UnknownGoal(id.to_string()))
    }

    pub fn goal_holds(&self, state: &WorldState, id: GoalId) -> Result<bool> {
        Ok(self.predicate(id)?.holds(state))
    }

    pub fn achieved_into(&self, state: &WorldState, mask: &mut GoalMask) {
        *mask = GoalMask::new(self.predicates.len());
        for (g, p) in self.predicates.iter().enumerate() {
            if p.holds(state) {
                mask.set(g);
            }
        }
    }
}

/// Bitmask of goals whose predicate holds in `state`.
pub fn achieved_goals(state: &WorldState, goals: &GridGoals) -> GoalMask {
    let mut m = GoalMask::new(goals.len());
    goals.achieved_into(state, &mut m);
    m
}
