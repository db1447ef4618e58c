use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    EnvError, Environment, EventCounters, GridWorld, Item, Layout, Observation, StepOutcome,
    Terrain,
};

/// Two diamond-shaped apple patches on the left. Agents 0 and 1 start next
/// to them, agents 2 and 3 in the far right corners.
pub const DEFAULT_HARVEST_LAYOUT: &str = "\
..A........2
.AAA........
AAAAA0......
.AAA........
..A.........
..A.........
.AAA........
AAAAA1......
.AAA........
..A........3
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarvestConfig {
    pub layout: String,
    pub episode_length: usize,
    pub obs_radius: usize,
    /// Chebyshev radius for counting nearby apples.
    pub regrowth_radius: usize,
    /// `regrowth[n]` is the regrowth chance with `n` nearby apples; the last
    /// entry applies to all larger counts.
    pub regrowth: Vec<f64>,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        HarvestConfig {
            layout: DEFAULT_HARVEST_LAYOUT.to_string(),
            episode_length: 200,
            obs_radius: 2,
            regrowth_radius: 2,
            regrowth: vec![0.0, 0.005, 0.02, 0.05],
        }
    }
}

impl HarvestConfig {
    pub fn validate(&self) -> Result<Layout, EnvError> {
        if self.regrowth.is_empty() || self.regrowth[0] != 0.0 {
            return Err(EnvError::Config(
                "regrowth table must start with p(0) = 0".into(),
            ));
        }
        if self.regrowth.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(EnvError::Config("regrowth probabilities must lie in [0,1]".into()));
        }
        if self.regrowth.windows(2).any(|w| w[1] < w[0]) {
            return Err(EnvError::Config("regrowth table must be nondecreasing".into()));
        }
        if self.episode_length == 0 {
            return Err(EnvError::Config("episode_length must be positive".into()));
        }
        let layout = Layout::parse(&self.layout)?;
        if layout.count_terrain(Terrain::Orchard) == 0 {
            return Err(EnvError::Config("harvest needs at least one orchard cell".into()));
        }
        Ok(layout)
    }
}

/// Common-pool resource: apples regrow only near other apples.
#[derive(Debug, Clone)]
pub struct HarvestEnv {
    config: HarvestConfig,
    layout: Layout,
    world: GridWorld,
}

impl HarvestEnv {
    pub fn new(config: HarvestConfig, seed: u64) -> Result<(HarvestEnv, Vec<Observation>), EnvError> {
        let layout = config.validate()?;
        let world = GridWorld::from_layout(&layout, config.episode_length, config.obs_radius, seed);
        let mut env = HarvestEnv {
            config,
            layout,
            world,
        };
        let obs = env.reset(seed);
        Ok((env, obs))
    }

    pub fn config(&self) -> &HarvestConfig {
        &self.config
    }

    pub fn apple_count(&self) -> usize {
        self.world.items.iter().filter(|i| **i == Item::Apple).count()
    }

    pub fn regrowth_probability(&self, nearby: usize) -> f64 {
        let t = &self.config.regrowth;
        t[nearby.min(t.len() - 1)]
    }

    /// Apples within the regrowth radius of `(x, y)`, excluding the cell itself.
    pub fn nearby_apples(&self, x: usize, y: usize) -> usize {
        let r = self.config.regrowth_radius as i64;
        let mut n = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if self.world.in_bounds(nx, ny)
                    && self.world.item(nx as usize, ny as usize) == Item::Apple
                {
                    n += 1;
                }
            }
        }
        n
    }

    /// Manhattan distance from agent `i` to the nearest apple.
    pub fn distance_to_apple(&self, i: usize) -> Option<usize> {
        let (ax, ay) = self.world.agent_positions[i];
        (0..self.world.height)
            .flat_map(|y| (0..self.world.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.world.item(x, y) == Item::Apple)
            .map(|(x, y)| ax.abs_diff(x) + ay.abs_diff(y))
            .min()
    }

    pub fn remove_all_apples(&mut self) {
        for it in self.world.items.iter_mut() {
            if *it == Item::Apple {
                *it = Item::None;
            }
        }
    }

    fn regrow(&mut self) {
        // probabilities come from the pre-regrowth map
        let mut probs = Vec::new();
        for y in 0..self.world.height {
            for x in 0..self.world.width {
                if self.world.terrain_at(x, y) == Terrain::Orchard
                    && self.world.item(x, y) == Item::None
                    && !self.world.occupied(x, y)
                {
                    probs.push((x, y, self.regrowth_probability(self.nearby_apples(x, y))));
                }
            }
        }
        for (x, y, p) in probs {
            if p > 0.0 && self.world.rng.gen::<f64>() < p {
                self.world.set_item(x, y, Item::Apple);
            }
        }
    }
}

impl Environment for HarvestEnv {
    fn n_agents(&self) -> usize {
        self.layout.n_agents()
    }

    fn n_actions(&self) -> usize {
        5
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
        self.world.observe_all()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        let actions = self.world.check_actions(actions, self.n_actions())?;
        let n = self.n_agents();
        self.world.resolve_moves(&actions);
        let mut rewards = vec![0.0; n];
        let mut info = vec![EventCounters::default(); n];
        for i in 0..n {
            let (x, y) = self.world.agent_positions[i];
            if self.world.item(x, y) == Item::Apple {
                self.world.set_item(x, y, Item::None);
                rewards[i] += 1.0;
                info[i].apples += 1;
            }
        }
        self.regrow();
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
