//! Deterministic crafting gridworld with semantic, observation-decidable goals.

mod goals;
mod world;

pub use goals::{achieved_goals, GridGoals, GridPredicate};
pub use world::{
    generate_world, observe, observe_into, reachable_blocks, step, Action, Block, Direction,
    GridConfig, Item, StateKey, Tool, WorldState, MAX_COUNT, NUM_ACTIONS, NUM_BLOCKS,
};

#[cfg(test)]
mod tests;
