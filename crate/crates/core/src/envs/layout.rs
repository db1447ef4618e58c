//! Plain-text maps, one character per cell:
//!
//! | char  | meaning                         |
//! |-------|---------------------------------|
//! | `.`   | land                            |
//! | `#`   | wall                            |
//! | `R`   | river                           |
//! | `W`   | river holding waste             |
//! | `O`   | orchard                         |
//! | `A`   | orchard holding an apple        |
//! | `0-9` | spawn point of that agent, land |
//!
//! Blank lines and lines starting with `;` are ignored. All rows must have
//! the same width and spawn digits must be contiguous from `0`.

use super::{EnvError, Item};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terrain {
    Land,
    Wall,
    River,
    Orchard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub width: usize,
    pub height: usize,
    pub terrain: Vec<Terrain>,
    pub items: Vec<Item>,
    pub spawns: Vec<(usize, usize)>,
}

impl Layout {
    pub fn parse(text: &str) -> Result<Layout, EnvError> {
        let mut width = None;
        let mut terrain = Vec::new();
        let mut items = Vec::new();
        let mut spawns: Vec<Option<(usize, usize)>> = vec![None; 10];
        let mut y = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            let row: Vec<char> = line.chars().collect();
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(EnvError::Layout {
                        line: lineno + 1,
                        msg: format!("row has width {}, expected {w}", row.len()),
                    })
                }
                _ => {}
            }
            for (x, c) in row.into_iter().enumerate() {
                let (t, it) = match c {
                    '.' => (Terrain::Land, Item::None),
                    '#' => (Terrain::Wall, Item::None),
                    'R' => (Terrain::River, Item::None),
                    'W' => (Terrain::River, Item::Waste),
                    'O' => (Terrain::Orchard, Item::None),
                    'A' => (Terrain::Orchard, Item::Apple),
                    d if d.is_ascii_digit() => {
                        let i = d.to_digit(10).unwrap() as usize;
                        if spawns[i].replace((x, y)).is_some() {
                            return Err(EnvError::Layout {
                                line: lineno + 1,
                                msg: format!("agent {i} spawns twice"),
                            });
                        }
                        (Terrain::Land, Item::None)
                    }
                    other => {
                        return Err(EnvError::Layout {
                            line: lineno + 1,
                            msg: format!("unknown cell character {other:?}"),
                        })
                    }
                };
                terrain.push(t);
                items.push(it);
            }
            y += 1;
        }
        let width = width.ok_or(EnvError::Layout {
            line: 0,
            msg: "empty layout".into(),
        })?;
        let n = spawns.iter().take_while(|s| s.is_some()).count();
        if spawns[n..].iter().any(Option::is_some) {
            return Err(EnvError::Layout {
                line: 0,
                msg: "agent spawn digits must be contiguous from 0".into(),
            });
        }
        if n == 0 {
            return Err(EnvError::Layout {
                line: 0,
                msg: "no agent spawns".into(),
            });
        }
        Ok(Layout {
            width,
            height: y,
            terrain,
            items,
            spawns: spawns.into_iter().flatten().collect(),
        })
    }

    pub fn count_terrain(&self, t: Terrain) -> usize {
        self.terrain.iter().filter(|x| **x == t).count()
    }

    pub fn n_agents(&self) -> usize {
        self.spawns.len()
    }
}
