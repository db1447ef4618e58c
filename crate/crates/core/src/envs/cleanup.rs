use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    Action, EnvError, Environment, EventCounters, GridWorld, Item, Layout, Observation,
    StepOutcome, Terrain,
};

/// River on the left two columns, orchard on the right two. Agents 0 and 1
/// start next to the river, agents 2 and 3 next to the orchard.
pub const DEFAULT_CLEANUP_LAYOUT: &str = "\
RR......OO
RR......OO
RR0....2OO
RR......OO
RR......OO
RR1....3OO
RR......OO
RR......OO
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanupConfig {
    pub layout: String,
    pub episode_length: usize,
    pub obs_radius: usize,
    /// Chance per step that one clean river cell turns to waste.
    pub p_waste: f64,
    /// Waste fraction of river cells at which apple growth stops.
    pub waste_threshold: f64,
    /// Per-cell apple sprout chance with a clean river.
    pub p_apple: f64,
}

impl Default for CleanupConfig {
    fn default() -> Self {
        CleanupConfig {
            layout: DEFAULT_CLEANUP_LAYOUT.to_string(),
            episode_length: 200,
            obs_radius: 2,
            p_waste: 0.5,
            waste_threshold: 0.4,
            p_apple: 0.25,
        }
    }
}

impl CleanupConfig {
    pub fn validate(&self) -> Result<Layout, EnvError> {
        for (name, p) in [("p_waste", self.p_waste), ("p_apple", self.p_apple)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(EnvError::Config(format!("{name} {p} not in [0,1]")));
            }
        }
        if !(self.waste_threshold > 0.0 && self.waste_threshold <= 1.0) {
            return Err(EnvError::Config(format!(
                "waste_threshold {} not in (0,1]",
                self.waste_threshold
            )));
        }
        if self.episode_length == 0 {
            return Err(EnvError::Config("episode_length must be positive".into()));
        }
        let layout = Layout::parse(&self.layout)?;
        if layout.count_terrain(Terrain::River) == 0 || layout.count_terrain(Terrain::Orchard) == 0 {
            return Err(EnvError::Config(
                "cleanup needs at least one river and one orchard cell".into(),
            ));
        }
        Ok(layout)
    }
}

/// Public-goods game: apples grow only while the river is clean enough, and
/// cleaning pays nothing directly.
#[derive(Debug, Clone)]
pub struct CleanupEnv {
    config: CleanupConfig,
    layout: Layout,
    world: GridWorld,
    river_cells: usize,
}

impl CleanupEnv {
    pub fn new(config: CleanupConfig, seed: u64) -> Result<(CleanupEnv, Vec<Observation>), EnvError> {
        let layout = config.validate()?;
        let world = GridWorld::from_layout(&layout, config.episode_length, config.obs_radius, seed);
        let river_cells = layout.count_terrain(Terrain::River);
        let mut env = CleanupEnv {
            config,
            layout,
            world,
            river_cells,
        };
        let obs = env.reset(seed);
        Ok((env, obs))
    }

    pub fn config(&self) -> &CleanupConfig {
        &self.config
    }

    pub fn waste_count(&self) -> usize {
        self.world.items.iter().filter(|i| **i == Item::Waste).count()
    }

    pub fn apple_count(&self) -> usize {
        self.world.items.iter().filter(|i| **i == Item::Apple).count()
    }

    pub fn waste_density(&self) -> f64 {
        self.waste_count() as f64 / self.river_cells as f64
    }

    /// Sprout chance for an empty orchard cell at the current waste level.
    pub fn apple_probability(&self) -> f64 {
        self.config.p_apple * (1.0 - self.waste_density() / self.config.waste_threshold).max(0.0)
    }

    /// Waste cells needed to reach the saturation threshold.
    fn saturation_count(&self) -> usize {
        (self.config.waste_threshold * self.river_cells as f64).ceil() as usize
    }

    /// Removes all waste; used by tests and scripted baselines.
    pub fn clear_waste(&mut self) {
        for it in self.world.items.iter_mut() {
            if *it == Item::Waste {
                *it = Item::None;
            }
        }
    }

    pub fn set_rates(&mut self, p_waste: f64, p_apple: f64) {
        self.config.p_waste = p_waste;
        self.config.p_apple = p_apple;
    }

    fn clean(&mut self, i: usize) -> bool {
        let (x, y) = self.world.agent_positions[i];
        let target = if self.world.item(x, y) == Item::Waste {
            Some((x, y))
        } else {
            self.world
                .facing_cell(i)
                .filter(|&(fx, fy)| self.world.item(fx, fy) == Item::Waste)
        };
        match target {
            Some((tx, ty)) => {
                self.world.set_item(tx, ty, Item::None);
                true
            }
            None => false,
        }
    }

    fn grow(&mut self) {
        let w = &mut self.world;
        if w.rng.gen::<f64>() < self.config.p_waste {
            if let Some((x, y)) =
                w.random_cell(|w, x, y| w.terrain_at(x, y) == Terrain::River && w.item(x, y) == Item::None)
            {
                w.set_item(x, y, Item::Waste);
            }
        }
        let p = self.apple_probability();
        if p <= 0.0 {
            return;
        }
        let w = &mut self.world;
        for y in 0..w.height {
            for x in 0..w.width {
                if w.terrain_at(x, y) == Terrain::Orchard
                    && w.item(x, y) == Item::None
                    && !w.occupied(x, y)
                    && w.rng.gen::<f64>() < p
                {
                    w.set_item(x, y, Item::Apple);
                }
            }
        }
    }
}

impl Environment for CleanupEnv {
    fn n_agents(&self) -> usize {
        self.layout.n_agents()
    }

    fn n_actions(&self) -> usize {
        6
    }

    fn obs_dim(&self) -> usize {
        super::obs_dim(self.config.obs_radius)
    }

    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        self.world = GridWorld::from_layout(
            &self.layout,
            self.config.episode_length,
            self.config.obs_radius,
            seed,
        );
        let target = self.saturation_count();
        while self.waste_count() < target {
            match self.world.random_cell(|w, x, y| {
                w.terrain_at(x, y) == Terrain::River && w.item(x, y) == Item::None
            }) {
                Some((x, y)) => self.world.set_item(x, y, Item::Waste),
                None => break,
            }
        }
        self.world.observe_all()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        let actions = self.world.check_actions(actions, self.n_actions())?;
        let n = self.n_agents();
        let order = self.world.resolve_moves(&actions);
        let mut rewards = vec![0.0; n];
        let mut info = vec![EventCounters::default(); n];
        for &i in &order {
            if actions[i] == Action::Clean && self.clean(i) {
                info[i].waste_cleaned += 1;
            }
        }
        for i in 0..n {
            let (x, y) = self.world.agent_positions[i];
            if self.world.item(x, y) == Item::Apple {
                self.world.set_item(x, y, Item::None);
                rewards[i] += 1.0;
                info[i].apples += 1;
            }
        }
        self.grow();
        self.world.step_count += 1;
        Ok(StepOutcome {
            observations: self.world.observe_all(),
            rewards,
            done: self.world.is_done(),
            info,
        })
    }

    fn world(&self) -> &GridWorld {
        &self.world
    }

    fn min_episode_return(&self) -> f64 {
        0.0
    }
}
