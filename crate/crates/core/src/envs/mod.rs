//! Gridworld social dilemmas: Unfair Coins, Cleanup and Harvest.
//!
//! All three share [`GridWorld`]: a rectangular map of terrain with at most
//! one item per cell, fixed per-agent spawns, simultaneous moves resolved in
//! a per-step random agent order, and egocentric one-hot observations.

mod cleanup;
mod coins;
mod harvest;
mod layout;

pub use cleanup::{CleanupConfig, CleanupEnv};
pub use coins::{CoinColor, CoinsConfig, CoinsEnv};
pub use harvest::{HarvestConfig, HarvestEnv};
pub use layout::{Layout, Terrain};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("layout error at line {line}: {msg}")]
    Layout { line: usize, msg: String },
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("action index {0} out of range")]
    InvalidAction(usize),
}

/// What an observation reports for a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Empty,
    Wall,
    Apple,
    Waste,
    CoinGreen,
    CoinRed,
    River,
    Orchard,
}

impl CellKind {
    pub const ALL: [CellKind; 8] = [
        CellKind::Empty,
        CellKind::Wall,
        CellKind::Apple,
        CellKind::Waste,
        CellKind::CoinGreen,
        CellKind::CoinRed,
        CellKind::River,
        CellKind::Orchard,
    ];

    fn channel(self) -> usize {
        self as usize
    }
}

/// Number of observation channels per cell: one per cell kind, then self,
/// then other agents.
pub const OBS_CHANNELS: usize = CellKind::ALL.len() + 2;

/// Removable content sitting on top of terrain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Item {
    None,
    Apple,
    Waste,
    Coin(CoinColor),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
    Clean,
}

impl Action {
    pub const MOVES: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];

    pub fn from_index(i: usize) -> Option<Action> {
        [
            Action::Up,
            Action::Down,
            Action::Left,
            Action::Right,
            Action::Stay,
            Action::Clean,
        ]
        .get(i)
        .copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn offset(self) -> Option<(i64, i64)> {
        match self {
            Action::Up => Some((0, -1)),
            Action::Down => Some((0, 1)),
            Action::Left => Some((-1, 0)),
            Action::Right => Some((1, 0)),
            Action::Stay | Action::Clean => None,
        }
    }
}

/// Flattened egocentric window: `(2k+1)^2` cells, row-major from the top
/// left, each with [`OBS_CHANNELS`] one-hot channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn obs_dim(radius: usize) -> usize {
    let side = 2 * radius + 1;
    side * side * OBS_CHANNELS
}

/// Per-agent event counts for one step (or summed over an episode).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounters {
    pub green_coins: u32,
    pub red_coins: u32,
    pub apples: u32,
    pub waste_cleaned: u32,
}

impl std::ops::AddAssign for EventCounters {
    fn add_assign(&mut self, o: Self) {
        self.green_coins += o.green_coins;
        self.red_coins += o.red_coins;
        self.apples += o.apples;
        self.waste_cleaned += o.waste_cleaned;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub info: Vec<EventCounters>,
}

/// Full simulator state shared by the three games.
#[derive(Debug, Clone)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    pub terrain: Vec<Terrain>,
    pub items: Vec<Item>,
    pub agent_positions: Vec<(usize, usize)>,
    pub agent_spawns: Vec<(usize, usize)>,
    /// Last nonzero movement direction per agent (starts as `Down`).
    pub facing: Vec<Action>,
    pub rng: Rng,
    pub step_count: usize,
    pub episode_length: usize,
    pub obs_radius: usize,
}

impl GridWorld {
    pub(crate) fn from_layout(
        layout: &Layout,
        episode_length: usize,
        obs_radius: usize,
        seed: u64,
    ) -> Self {
        GridWorld {
            width: layout.width,
            height: layout.height,
            terrain: layout.terrain.clone(),
            items: layout.items.clone(),
            agent_positions: layout.spawns.clone(),
            agent_spawns: layout.spawns.clone(),
            facing: vec![Action::Down; layout.spawns.len()],
            rng: crate::rng::stream(seed, &[0x65_6e76]),
            step_count: 0,
            episode_length,
            obs_radius,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.agent_positions.len()
    }

    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn item(&self, x: usize, y: usize) -> Item {
        self.items[self.idx(x, y)]
    }

    pub fn set_item(&mut self, x: usize, y: usize, item: Item) {
        let i = self.idx(x, y);
        self.items[i] = item;
    }

    pub fn terrain_at(&self, x: usize, y: usize) -> Terrain {
        self.terrain[self.idx(x, y)]
    }

    pub fn cell_kind(&self, x: usize, y: usize) -> CellKind {
        let i = self.idx(x, y);
        match (self.terrain[i], self.items[i]) {
            (Terrain::Wall, _) => CellKind::Wall,
            (_, Item::Apple) => CellKind::Apple,
            (_, Item::Waste) => CellKind::Waste,
            (_, Item::Coin(CoinColor::Green)) => CellKind::CoinGreen,
            (_, Item::Coin(CoinColor::Red)) => CellKind::CoinRed,
            (Terrain::River, Item::None) => CellKind::River,
            (Terrain::Orchard, Item::None) => CellKind::Orchard,
            (Terrain::Land, Item::None) => CellKind::Empty,
        }
    }

    pub fn occupied(&self, x: usize, y: usize) -> bool {
        self.agent_positions.contains(&(x, y))
    }

    pub fn is_done(&self) -> bool {
        self.step_count >= self.episode_length
    }

    fn neighbor(&self, (x, y): (usize, usize), dir: Action) -> Option<(usize, usize)> {
        let (dx, dy) = dir.offset()?;
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        if !self.in_bounds(nx, ny) {
            return None;
        }
        let (nx, ny) = (nx as usize, ny as usize);
        (self.terrain_at(nx, ny) != Terrain::Wall).then_some((nx, ny))
    }

    /// Resolves moves for all agents in a random order drawn from the world
    /// stream. A move into a wall, out of bounds, or into a cell held by
    /// another agent at that point in the order becomes `Stay`. Returns the
    /// processing order so that order-dependent side effects can reuse it.
    pub(crate) fn resolve_moves(&mut self, actions: &[Action]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_agents()).collect();
        order.shuffle(&mut self.rng);
        for &i in &order {
            let a = actions[i];
            if a.offset().is_none() {
                continue;
            }
            self.facing[i] = a;
            if let Some(target) = self.neighbor(self.agent_positions[i], a) {
                if !self.occupied(target.0, target.1) {
                    self.agent_positions[i] = target;
                }
            }
        }
        order
    }

    /// The cell in front of agent `i`, if walkable terrain.
    pub(crate) fn facing_cell(&self, i: usize) -> Option<(usize, usize)> {
        self.neighbor(self.agent_positions[i], self.facing[i])
    }

    pub fn observe(&self, agent: usize) -> Observation {
        let k = self.obs_radius as i64;
        let side = 2 * self.obs_radius + 1;
        let mut v = vec![0.0; side * side * OBS_CHANNELS];
        let (ax, ay) = self.agent_positions[agent];
        for (row, dy) in (-k..=k).enumerate() {
            for (col, dx) in (-k..=k).enumerate() {
                let base = (row * side + col) * OBS_CHANNELS;
                let (x, y) = (ax as i64 + dx, ay as i64 + dy);
                if !self.in_bounds(x, y) {
                    v[base + CellKind::Wall.channel()] = 1.0;
                    continue;
                }
                let (x, y) = (x as usize, y as usize);
                v[base + self.cell_kind(x, y).channel()] = 1.0;
                if dx == 0 && dy == 0 {
                    v[base + CellKind::ALL.len()] = 1.0;
                } else if self.occupied(x, y) {
                    v[base + CellKind::ALL.len() + 1] = 1.0;
                }
            }
        }
        Observation(v)
    }

    pub fn observe_all(&self) -> Vec<Observation> {
        (0..self.n_agents()).map(|i| self.observe(i)).collect()
    }

    /// Uniformly random cell satisfying `pred`, drawn from the world stream.
    pub(crate) fn random_cell(
        &mut self,
        pred: impl Fn(&GridWorld, usize, usize) -> bool,
    ) -> Option<(usize, usize)> {
        let cells: Vec<(usize, usize)> = (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| pred(self, x, y))
            .collect();
        if cells.is_empty() {
            return None;
        }
        let pick = self.rng.gen_range(0..cells.len());
        Some(cells[pick])
    }

    pub(crate) fn check_actions(
        &self,
        actions: &[usize],
        n_actions: usize,
    ) -> Result<Vec<Action>, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeDone);
        }
        if actions.len() != self.n_agents() {
            return Err(EnvError::ActionCount {
                expected: self.n_agents(),
                got: actions.len(),
            });
        }
        actions
            .iter()
            .map(|&a| {
                if a >= n_actions {
                    return Err(EnvError::InvalidAction(a));
                }
                Action::from_index(a).ok_or(EnvError::InvalidAction(a))
            })
            .collect()
    }

    /// Renders the map in layout notation, with agents as digits and coins
    /// as `g` / `r`.
    pub fn render(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let c = if let Some(i) = self.agent_positions.iter().position(|&p| p == (x, y)) {
                    char::from_digit(i as u32, 10).unwrap_or('@')
                } else {
                    match self.cell_kind(x, y) {
                        CellKind::Empty => '.',
                        CellKind::Wall => '#',
                        CellKind::Apple => 'A',
                        CellKind::Waste => 'W',
                        CellKind::CoinGreen => 'g',
                        CellKind::CoinRed => 'r',
                        CellKind::River => 'R',
                        CellKind::Orchard => 'O',
                    }
                };
                s.push(c);
            }
            s.push('\n');
        }
        s
    }
}

/// Common surface over the three games, used by the vectorized rollout.
pub trait Environment: Send {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn obs_dim(&self) -> usize;
    /// Starts a new episode from the given seed.
    fn reset(&mut self, seed: u64) -> Vec<Observation>;
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError>;
    fn world(&self) -> &GridWorld;
    /// Lowest possible per-agent episodic return.
    fn min_episode_return(&self) -> f64;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(map: &str) -> GridWorld {
        GridWorld::from_layout(&Layout::parse(map).unwrap(), 10, 1, 0)
    }

    #[test]
    fn observation_layout() {
        let w = world("0.\n.1\n");
        let o = w.observe(0);
        assert_eq!(o.len(), obs_dim(1));
        // top-left of the window is out of bounds
        assert_eq!(o.0[CellKind::Wall.channel()], 1.0);
        // center is self
        let center = 4 * OBS_CHANNELS;
        assert_eq!(o.0[center + CellKind::Empty.channel()], 1.0);
        assert_eq!(o.0[center + CellKind::ALL.len()], 1.0);
        // bottom-right neighbour holds agent 1
        let br = 8 * OBS_CHANNELS;
        assert_eq!(o.0[br + CellKind::ALL.len() + 1], 1.0);
        // exactly one kind per cell
        for cell in o.0.chunks(OBS_CHANNELS) {
            assert_eq!(cell[..CellKind::ALL.len()].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn blocked_moves_become_stay() {
        let mut w = world("0#\n1.\n");
        w.resolve_moves(&[Action::Right, Action::Up]);
        assert_eq!(w.agent_positions, vec![(0, 0), (0, 1)]);
        w.resolve_moves(&[Action::Left, Action::Down]);
        assert_eq!(w.agent_positions, vec![(0, 0), (0, 1)]);
        assert_eq!(w.facing, vec![Action::Left, Action::Down]);
    }

    #[test]
    fn contested_cell_goes_to_one_agent() {
        for seed in 0..50 {
            let mut w = GridWorld::from_layout(&Layout::parse("0.1\n").unwrap(), 10, 1, seed);
            w.resolve_moves(&[Action::Right, Action::Left]);
            let at_mid = w.agent_positions.iter().filter(|p| **p == (1, 0)).count();
            assert_eq!(at_mid, 1);
        }
    }

    #[test]
    fn render_round_trips_layout_symbols() {
        let map = "RW.O\nA01#\n";
        assert_eq!(world(map).render(), map);
    }
}
