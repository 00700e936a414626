use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const NUM_BLOCKS: usize = 7;
pub const NUM_ACTIONS: usize = 6;
pub const MAX_COUNT: u8 = 9;
const MAX_GEN_ATTEMPTS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    Grass,
    Tree,
    Stone,
    Water,
    CoalOre,
    CraftingTable,
    Path,
}

impl Block {
    pub const ALL: [Block; NUM_BLOCKS] = [
        Block::Grass,
        Block::Tree,
        Block::Stone,
        Block::Water,
        Block::CoalOre,
        Block::CraftingTable,
        Block::Path,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn walkable(self) -> bool {
        matches!(self, Block::Grass | Block::Path)
    }

    pub fn name(self) -> &'static str {
        match self {
            Block::Grass => "Grass",
            Block::Tree => "Tree",
            Block::Stone => "Stone",
            Block::Water => "Water",
            Block::CoalOre => "CoalOre",
            Block::CraftingTable => "CraftingTable",
            Block::Path => "Path",
        }
    }

    pub fn from_name(s: &str) -> Option<Block> {
        Block::ALL.into_iter().find(|b| b.name() == s)
    }

    fn glyph(self) -> char {
        match self {
            Block::Grass => '.',
            Block::Tree => 'T',
            Block::Stone => '#',
            Block::Water => '~',
            Block::CoalOre => 'c',
            Block::CraftingTable => 'W',
            Block::Path => '_',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    fn arrow(self) -> char {
        match self {
            Direction::Up => '^',
            Direction::Down => 'v',
            Direction::Left => '<',
            Direction::Right => '>',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Do,
    Craft,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Do,
        Action::Craft,
    ];

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("action index {i} out of range")))
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Item {
    Wood,
    Stone,
    Coal,
}

impl Item {
    pub const ALL: [Item; 3] = [Item::Wood, Item::Stone, Item::Coal];

    pub fn name(self) -> &'static str {
        match self {
            Item::Wood => "wood",
            Item::Stone => "stone",
            Item::Coal => "coal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    WoodPickaxe,
    StonePickaxe,
}

impl Tool {
    pub const ALL: [Tool; 2] = [Tool::WoodPickaxe, Tool::StonePickaxe];

    pub fn name(self) -> &'static str {
        match self {
            Tool::WoodPickaxe => "wood_pickaxe",
            Tool::StonePickaxe => "stone_pickaxe",
        }
    }
}

/// World generation and episode parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub size: usize,
    pub view_radius: usize,
    pub t_max: u32,
    /// Probability that the centre of the outcrop holds a fully enclosed ore.
    pub coal_prob: f64,
    /// Chance of any other outcrop cell being ore.
    pub ore_density: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 10,
            view_radius: 3,
            t_max: 200,
            coal_prob: 0.9,
            ore_density: 0.3,
        }
    }
}

impl GridConfig {
    pub fn obs_dim(&self) -> usize {
        let w = 2 * self.view_radius + 1;
        w * w * NUM_BLOCKS + 3 * MAX_COUNT as usize + 2 + 4
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WorldState {
    size: usize,
    grid: Vec<Block>,
    agent: (usize, usize),
    facing: Direction,
    inventory: [u8; 3],
    tools: [bool; 2],
    step_count: u32,
    t_max: u32,
    seed: u64,
}

/// Hashable view of a state without the step counter, used for tabular
/// state enumeration.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StateKey {
    grid: Vec<Block>,
    agent: (usize, usize),
    facing: Direction,
    inventory: [u8; 3],
    tools: [bool; 2],
}

impl WorldState {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn block(&self, r: usize, c: usize) -> Block {
        self.grid[r * self.size + c]
    }

    pub fn set_block(&mut self, r: usize, c: usize, b: Block) {
        self.grid[r * self.size + c] = b;
    }

    pub fn agent_pos(&self) -> (usize, usize) {
        self.agent
    }

    pub fn facing(&self) -> Direction {
        self.facing
    }

    pub fn count(&self, item: Item) -> u8 {
        self.inventory[item as usize]
    }

    pub fn has_tool(&self, tool: Tool) -> bool {
        self.tools[tool as usize]
    }

    pub fn step_count(&self) -> u32 {
        self.step_count
    }

    pub fn t_max(&self) -> u32 {
        self.t_max
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_terminal(&self) -> bool {
        self.step_count >= self.t_max
    }

    pub fn key(&self) -> StateKey {
        StateKey {
            grid: self.grid.clone(),
            agent: self.agent,
            facing: self.facing,
            inventory: self.inventory,
            tools: self.tools,
        }
    }

    /// Cell next to the agent in direction `d`, if inside the world.
    pub fn neighbor(&self, d: Direction) -> Option<(usize, usize)> {
        let (dr, dc) = d.delta();
        let r = self.agent.0 as isize + dr;
        let c = self.agent.1 as isize + dc;
        let n = self.size as isize;
        (r >= 0 && c >= 0 && r < n && c < n).then_some((r as usize, c as usize))
    }

    pub fn adjacent_block(&self, d: Direction) -> Option<Block> {
        self.neighbor(d).map(|(r, c)| self.block(r, c))
    }

    pub fn next_to(&self, b: Block) -> bool {
        Direction::ALL
            .iter()
            .any(|&d| self.adjacent_block(d) == Some(b))
    }

    /// Test and fixture helper: overrides inventory and tools.
    pub fn with_inventory(mut self, inventory: [u8; 3], tools: [bool; 2]) -> Self {
        self.inventory = inventory.map(|v| v.min(MAX_COUNT));
        self.tools = tools;
        self
    }

    /// Test and fixture helper: moves the agent to a walkable cell.
    pub fn with_agent(mut self, pos: (usize, usize), facing: Direction) -> Result<Self> {
        if pos.0 >= self.size || pos.1 >= self.size || !self.block(pos.0, pos.1).walkable() {
            return Err(Error::invalid(format!("{pos:?} is not walkable")));
        }
        self.agent = pos;
        self.facing = facing;
        Ok(self)
    }

    /// One character per block, the agent as `@`, then a status line.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.size * (self.size + 1) + 80);
        for r in 0..self.size {
            for c in 0..self.size {
                out.push(if (r, c) == self.agent {
                    '@'
                } else {
                    self.block(r, c).glyph()
                });
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "facing {} | wood {} stone {} coal {} | wood_pickaxe {} stone_pickaxe {} | t {}/{}",
            self.facing.arrow(),
            self.inventory[0],
            self.inventory[1],
            self.inventory[2],
            self.tools[0] as u8,
            self.tools[1] as u8,
            self.step_count,
            self.t_max
        );
        out
    }
}

fn walkable_component(grid: &[Block], n: usize, start: (usize, usize)) -> Vec<bool> {
    let mut seen = vec![false; n * n];
    let mut queue = VecDeque::from([start]);
    seen[start.0 * n + start.1] = true;
    while let Some((r, c)) = queue.pop_front() {
        for d in Direction::ALL {
            let (dr, dc) = d.delta();
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr < 0 || nc < 0 || nr >= n as isize || nc >= n as isize {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            if !seen[nr * n + nc] && grid[nr * n + nc].walkable() {
                seen[nr * n + nc] = true;
                queue.push_back((nr, nc));
            }
        }
    }
    seen
}

/// Blocks that can be faced from the walkable region containing `start`.
pub fn reachable_blocks(state: &WorldState) -> [bool; NUM_BLOCKS] {
    let n = state.size;
    let comp = walkable_component(&state.grid, n, state.agent);
    let mut found = [false; NUM_BLOCKS];
    for r in 0..n {
        for c in 0..n {
            if !comp[r * n + c] {
                continue;
            }
            found[state.grid[r * n + c].index()] = true;
            for d in Direction::ALL {
                let (dr, dc) = d.delta();
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr >= 0 && nc >= 0 && nr < n as isize && nc < n as isize {
                    found[state.grid[nr as usize * n + nc as usize].index()] = true;
                }
            }
        }
    }
    found
}

fn random_grass(grid: &[Block], rng: &mut ChaCha8Rng) -> Option<usize> {
    let free: Vec<usize> = (0..grid.len()).filter(|&i| grid[i] == Block::Grass).collect();
    (!free.is_empty()).then(|| free[rng.random_range(0..free.len())])
}

fn try_generate(rng: &mut ChaCha8Rng, cfg: &GridConfig, seed: u64) -> Option<WorldState> {
    let n = cfg.size;
    let mut grid = vec![Block::Grass; n * n];

    // stone outcrop; ore is scattered through it and the centre cell,
    // which is fully enclosed by stone, usually holds ore too
    let max_side = (n / 2).min(5);
    let ph = rng.random_range(3..=max_side);
    let pw = rng.random_range(3..=max_side);
    let pr = rng.random_range(0..=n - ph);
    let pc = rng.random_range(0..=n - pw);
    for r in pr..pr + ph {
        for c in pc..pc + pw {
            grid[r * n + c] = if rng.random_bool(cfg.ore_density) {
                Block::CoalOre
            } else {
                Block::Stone
            };
        }
    }
    let (cr, cc) = (pr + ph / 2, pc + pw / 2);
    if rng.random_bool(cfg.coal_prob) {
        grid[cr * n + cc] = Block::CoalOre;
        for d in Direction::ALL {
            let (dr, dc) = d.delta();
            grid[(cr as isize + dr) as usize * n + (cc as isize + dc) as usize] = Block::Stone;
        }
    }

    // small pond grown from a seed cell
    let pond_size = rng.random_range(2..=4usize);
    let mut cell = random_grass(&grid, rng)?;
    grid[cell] = Block::Water;
    for _ in 1..pond_size {
        let d = Direction::ALL[rng.random_range(0..4)];
        let (dr, dc) = d.delta();
        let (r, c) = ((cell / n) as isize + dr, (cell % n) as isize + dc);
        if r >= 0 && c >= 0 && r < n as isize && c < n as isize {
            let next = r as usize * n + c as usize;
            if grid[next] == Block::Grass {
                grid[next] = Block::Water;
                cell = next;
            }
        }
    }

    let trees = (n * n / 8).max(4);
    for _ in 0..trees {
        let i = random_grass(&grid, rng)?;
        grid[i] = Block::Tree;
    }
    let table = random_grass(&grid, rng)?;
    grid[table] = Block::CraftingTable;
    let agent = random_grass(&grid, rng)?;

    let facing = Direction::ALL[rng.random_range(0..4)];
    let state = WorldState {
        size: n,
        grid,
        agent: (agent / n, agent % n),
        facing,
        inventory: [0; 3],
        tools: [false; 2],
        step_count: 0,
        t_max: cfg.t_max,
        seed,
    };
    let reach = reachable_blocks(&state);
    let ok = [Block::Tree, Block::Stone, Block::Water, Block::CraftingTable]
        .iter()
        .all(|b| reach[b.index()]);
    ok.then_some(state)
}

/// Procedurally generates a world; deterministic in `seed`.
pub fn generate_world(seed: u64, cfg: &GridConfig) -> Result<WorldState> {
    if cfg.size < 6 {
        return Err(Error::invalid(format!(
            "world size {} is below the minimum of 6",
            cfg.size
        )));
    }
    if 2 * cfg.view_radius + 1 > 4 * cfg.size {
        return Err(Error::invalid("view radius is too large for this world"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_GEN_ATTEMPTS {
        if let Some(s) = try_generate(&mut rng, cfg, seed) {
            return Ok(s);
        }
    }
    Err(Error::WorldGeneration {
        seed,
        attempts: MAX_GEN_ATTEMPTS,
    })
}

/// Deterministic transition. Invalid interactions are no-ops; the step
/// counter always advances (saturating at `t_max`).
pub fn step(state: &WorldState, action: Action) -> WorldState {
    let mut s = state.clone();
    s.step_count = (s.step_count + 1).min(s.t_max);
    match action {
        Action::Up | Action::Down | Action::Left | Action::Right => {
            let d = match action {
                Action::Up => Direction::Up,
                Action::Down => Direction::Down,
                Action::Left => Direction::Left,
                _ => Direction::Right,
            };
            s.facing = d;
            if let Some((r, c)) = s.neighbor(d) {
                if s.block(r, c).walkable() {
                    s.agent = (r, c);
                }
            }
        }
        Action::Do => {
            if let Some((r, c)) = s.neighbor(s.facing) {
                let wood = Item::Wood as usize;
                let stone = Item::Stone as usize;
                let coal = Item::Coal as usize;
                match s.block(r, c) {
                    Block::Tree if s.inventory[wood] < MAX_COUNT => {
                        s.inventory[wood] += 1;
                        s.set_block(r, c, Block::Grass);
                    }
                    Block::Stone if s.tools[0] && s.inventory[stone] < MAX_COUNT => {
                        s.inventory[stone] += 1;
                        s.set_block(r, c, Block::Path);
                    }
                    Block::CoalOre if s.tools[1] && s.inventory[coal] < MAX_COUNT => {
                        s.inventory[coal] += 1;
                        s.set_block(r, c, Block::Path);
                    }
                    _ => {}
                }
            }
        }
        Action::Craft => {
            if s.next_to(Block::CraftingTable) {
                let (wood, stone) = (Item::Wood as usize, Item::Stone as usize);
                if !s.tools[0] {
                    if s.inventory[wood] >= 1 {
                        s.inventory[wood] -= 1;
                        s.tools[0] = true;
                    }
                } else if !s.tools[1] && s.inventory[wood] >= 1 && s.inventory[stone] >= 1 {
                    s.inventory[wood] -= 1;
                    s.inventory[stone] -= 1;
                    s.tools[1] = true;
                }
            }
        }
    }
    s
}

/// Writes the observation vector into `out` (cleared first).
///
/// Layout: one-hot blocks of the `(2k+1)^2` window (row-major, cells outside
/// the world all-zero), thermometer-coded wood/stone/coal counts, the two
/// tool flags, one-hot facing.
pub fn observe_into(state: &WorldState, view_radius: usize, out: &mut Vec<f32>) {
    let w = 2 * view_radius + 1;
    out.clear();
    out.resize(w * w * NUM_BLOCKS + 3 * MAX_COUNT as usize + 6, 0.0);
    let k = view_radius as isize;
    let n = state.size as isize;
    let (ar, ac) = (state.agent.0 as isize, state.agent.1 as isize);
    for dr in -k..=k {
        for dc in -k..=k {
            let (r, c) = (ar + dr, ac + dc);
            if r < 0 || c < 0 || r >= n || c >= n {
                continue;
            }
            let cell = ((dr + k) as usize) * w + (dc + k) as usize;
            let b = state.grid[r as usize * state.size + c as usize];
            out[cell * NUM_BLOCKS + b.index()] = 1.0;
        }
    }
    let mut off = w * w * NUM_BLOCKS;
    for &count in &state.inventory {
        for j in 0..count as usize {
            out[off + j] = 1.0;
        }
        off += MAX_COUNT as usize;
    }
    for &t in &state.tools {
        out[off] = if t { 1.0 } else { 0.0 };
        off += 1;
    }
    out[off + state.facing as usize] = 1.0;
}

pub fn observe(state: &WorldState, view_radius: usize) -> Vec<f32> {
    let mut v = Vec::new();
    observe_into(state, view_radius, &mut v);
    v
}
