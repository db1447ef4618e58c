use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    EnvError, Environment, EventCounters, GridWorld, Item, Layout, Observation, StepOutcome,
    Terrain,
};

/// Agent 0 is green, agent 1 is red.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoinColor {
    Green,
    Red,
}

impl CoinColor {
    pub fn of_agent(i: usize) -> CoinColor {
        if i == 0 {
            CoinColor::Green
        } else {
            CoinColor::Red
        }
    }
}

pub const DEFAULT_COINS_LAYOUT: &str = "\
0....
.....
.....
.....
....1
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoinsConfig {
    pub layout: String,
    pub episode_length: usize,
    pub p_green: f64,
    pub obs_radius: usize,
    /// Reward to the collector of any coin.
    pub collect_reward: f64,
    /// Reward to the other agent when its coin is taken.
    pub theft_penalty: f64,
}

impl Default for CoinsConfig {
    fn default() -> Self {
        CoinsConfig {
            layout: DEFAULT_COINS_LAYOUT.to_string(),
            episode_length: 200,
            p_green: 15.0 / 16.0,
            obs_radius: 2,
            collect_reward: 1.0,
            theft_penalty: -2.0,
        }
    }
}

impl CoinsConfig {
    pub fn validate(&self) -> Result<Layout, EnvError> {
        if !(0.0..=1.0).contains(&self.p_green) {
            return Err(EnvError::Config(format!("p_green {} not in [0,1]", self.p_green)));
        }
        if self.episode_length == 0 {
            return Err(EnvError::Config("episode_length must be positive".into()));
        }
        let layout = Layout::parse(&self.layout)?;
        if layout.n_agents() != 2 {
            return Err(EnvError::Config(format!(
                "coins needs 2 agents, layout has {}",
                layout.n_agents()
            )));
        }
        let walkable = layout.terrain.iter().filter(|t| **t != Terrain::Wall).count();
        if walkable < 3 {
            return Err(EnvError::Config(
                "grid too small to hold both agents and a coin".into(),
            ));
        }
        Ok(layout)
    }
}

/// Two agents, one coin at a time. Collecting pays the collector; taking
/// the other agent's color also penalises that agent.
#[derive(Debug, Clone)]
pub struct CoinsEnv {
    config: CoinsConfig,
    layout: Layout,
    world: GridWorld,
    coin: Option<((usize, usize), CoinColor)>,
    collected_at: Option<usize>,
}

impl CoinsEnv {
    pub fn new(config: CoinsConfig, seed: u64) -> Result<(CoinsEnv, Vec<Observation>), EnvError> {
        let layout = config.validate()?;
        let world = GridWorld::from_layout(&layout, config.episode_length, config.obs_radius, seed);
        let mut env = CoinsEnv {
            config,
            layout,
            world,
            coin: None,
            collected_at: None,
        };
        let obs = env.reset(seed);
        Ok((env, obs))
    }

    pub fn coin(&self) -> Option<((usize, usize), CoinColor)> {
        self.coin
    }

    pub fn config(&self) -> &CoinsConfig {
        &self.config
    }

    /// Places a fresh coin on a random free cell, replacing any current one.
    pub fn spawn_coin(&mut self) {
        if let Some(((x, y), _)) = self.coin.take() {
            self.world.set_item(x, y, Item::None);
        }
        let color = if self.world.rng.gen::<f64>() < self.config.p_green {
            CoinColor::Green
        } else {
            CoinColor::Red
        };
        let cell = self.world.random_cell(|w, x, y| {
            w.terrain_at(x, y) != Terrain::Wall && w.item(x, y) == Item::None && !w.occupied(x, y)
        });
        if let Some((x, y)) = cell {
            self.world.set_item(x, y, Item::Coin(color));
            self.coin = Some(((x, y), color));
        }
    }
}

impl Environment for CoinsEnv {
    fn n_agents(&self) -> usize {
        2
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
        self.coin = None;
        self.collected_at = None;
        self.spawn_coin();
        self.world.observe_all()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        let actions = self.world.check_actions(actions, self.n_actions())?;
        self.world.resolve_moves(&actions);
        let mut rewards = vec![0.0; 2];
        let mut info = vec![EventCounters::default(); 2];
        if let Some((pos, color)) = self.coin {
            if let Some(i) = self.world.agent_positions.iter().position(|p| *p == pos) {
                rewards[i] += self.config.collect_reward;
                match color {
                    CoinColor::Green => info[i].green_coins += 1,
                    CoinColor::Red => info[i].red_coins += 1,
                }
                if color != CoinColor::of_agent(i) {
                    rewards[1 - i] += self.config.theft_penalty;
                }
                self.world.set_item(pos.0, pos.1, Item::None);
                self.coin = None;
                self.collected_at = Some(self.world.step_count);
            }
        }
        if self.coin.is_none() && self.collected_at.is_some_and(|t| t < self.world.step_count) {
            self.spawn_coin();
            self.collected_at = None;
        }
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
        self.config.theft_penalty.min(0.0) * self.config.episode_length as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Action;

    fn env(p_green: f64, seed: u64) -> CoinsEnv {
        CoinsEnv::new(
            CoinsConfig {
                p_green,
                ..Default::default()
            },
            seed,
        )
        .unwrap()
        .0
    }

    fn place_coin(e: &mut CoinsEnv, pos: (usize, usize), color: CoinColor) {
        if let Some(((x, y), _)) = e.coin {
            e.world.set_item(x, y, Item::None);
        }
        e.world.set_item(pos.0, pos.1, Item::Coin(color));
        e.coin = Some((pos, color));
    }

    const RIGHT: usize = 3;
    const STAY: usize = 4;

    #[test]
    fn reset_places_agents_and_one_coin() {
        let e = env(15.0 / 16.0, 3);
        assert_eq!(e.world.agent_positions, vec![(0, 0), (4, 4)]);
        let coins = e.world.items.iter().filter(|i| matches!(i, Item::Coin(_))).count();
        assert_eq!(coins, 1);
    }

    #[test]
    fn degenerate_probability_gives_green() {
        let mut e = env(1.0, 0);
        for _ in 0..500 {
            e.spawn_coin();
            assert_eq!(e.coin.unwrap().1, CoinColor::Green);
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let a = env(0.5, 42);
        let b = env(0.5, 42);
        assert_eq!(a.world.render(), b.world.render());
        assert_eq!(a.coin, b.coin);
    }

    #[test]
    fn green_collects_green() {
        let mut e = env(0.5, 1);
        place_coin(&mut e, (1, 0), CoinColor::Green);
        let out = e.step(&[RIGHT, STAY]).unwrap();
        assert_eq!(out.rewards, vec![1.0, 0.0]);
        assert_eq!(out.info[0].green_coins, 1);
    }

    #[test]
    fn red_collects_green_penalises_green() {
        let mut e = env(0.5, 1);
        place_coin(&mut e, (4, 3), CoinColor::Green);
        let out = e.step(&[STAY, Action::Up.index()]).unwrap();
        assert_eq!(out.rewards, vec![-2.0, 1.0]);
    }

    #[test]
    fn no_collection_no_reward() {
        let mut e = env(0.5, 1);
        place_coin(&mut e, (2, 2), CoinColor::Red);
        let out = e.step(&[STAY, STAY]).unwrap();
        assert_eq!(out.rewards, vec![0.0, 0.0]);
    }

    #[test]
    fn coin_respawns_one_step_later() {
        let mut e = env(0.5, 1);
        place_coin(&mut e, (1, 0), CoinColor::Green);
        e.step(&[RIGHT, STAY]).unwrap();
        assert!(e.coin.is_none());
        e.step(&[STAY, STAY]).unwrap();
        assert!(e.coin.is_some());
    }

    #[test]
    fn episode_ends_and_rejects_further_steps() {
        let mut e = CoinsEnv::new(
            CoinsConfig {
                episode_length: 3,
                ..Default::default()
            },
            0,
        )
        .unwrap()
        .0;
        for t in 0..3 {
            assert_eq!(e.step(&[STAY, STAY]).unwrap().done, t == 2);
        }
        assert_eq!(e.step(&[STAY, STAY]), Err(EnvError::EpisodeDone));
    }

    #[test]
    fn config_errors() {
        let small = CoinsConfig {
            layout: "01\n".into(),
            ..Default::default()
        };
        assert!(matches!(CoinsEnv::new(small, 0), Err(EnvError::Config(_))));
        let bad_p = CoinsConfig {
            p_green: 1.5,
            ..Default::default()
        };
        assert!(CoinsEnv::new(bad_p, 0).is_err());
        let mut e = env(0.5, 0);
        assert_eq!(e.step(&[STAY]), Err(EnvError::ActionCount { expected: 2, got: 1 }));
        assert_eq!(e.step(&[STAY, 5]), Err(EnvError::InvalidAction(5)));
    }
}
