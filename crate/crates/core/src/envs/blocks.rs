use std::collections::BTreeMap;

use rand::Rng;

use super::{add_noise, Action, EnvConfig, Observation, StepResult};
use crate::seeding::{self, Rng as SeededRng};
use crate::{Error, Result};

/// position within wall period, velocity, next wall height, previous wall
/// height, distance to next wall.
pub const PROPRIO_DIM: usize = 5;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Walls sit at every multiple of `wall_spacing` strictly inside the chain.
pub(super) fn wall_positions(config: &EnvConfig) -> Vec<usize> {
    (1..)
        .map(|k| k * config.wall_spacing)
        .take_while(|&x| x + 1 < config.size)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Move {
    Stay,
    Left,
    Right,
    Jump(f64),
}

#[derive(Debug, Clone)]
pub struct BlocksState {
    config: EnvConfig,
    walls: Vec<usize>,
    heights: Vec<usize>,
    cleared: usize,
    pos: usize,
    velocity: f64,
    progress: f64,
    t: usize,
    done: bool,
    fallen: bool,
    rng: SeededRng,
}

impl BlocksState {
    pub(super) fn new(config: EnvConfig, seed: u64) -> Result<(Self, Observation)> {
        let walls = wall_positions(&config);
        if walls.is_empty() {
            return Err(Error::Config("chain holds no walls".into()));
        }
        let mut layout_rng = seeding::derived_rng(seed, &[0]);
        let heights = walls
            .iter()
            .map(|_| layout_rng.random_range(1..=config.max_wall_height))
            .collect();
        let mut s = Self {
            config,
            walls,
            heights,
            cleared: 0,
            pos: 0,
            velocity: 0.0,
            progress: 0.0,
            t: 0,
            done: false,
            fallen: false,
            rng: seeding::derived_rng(seed, &[1]),
        };
        let o = s.observe();
        Ok((s, o))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn wall_heights(&self) -> &[usize] {
        &self.heights
    }

    pub fn has_fallen(&self) -> bool {
        self.fallen
    }

    fn wall_at(&self, x: usize) -> Option<usize> {
        self.walls.iter().position(|&w| w == x)
    }

    fn decode(&self, action: &Action) -> Result<Move> {
        match (action, self.config.continuous) {
            (Action::Discrete(a), false) if *a < 2 + self.config.max_wall_height => Ok(match *a {
                LEFT => Move::Left,
                RIGHT => Move::Right,
                h => Move::Jump((h - 1) as f64),
            }),
            (Action::Continuous(v), true) if v.len() == 1 && v[0].is_finite() => {
                let a = v[0];
                Ok(if a < -0.5 {
                    Move::Left
                } else if a < 0.5 {
                    Move::Stay
                } else if a < 1.5 {
                    Move::Right
                } else {
                    Move::Jump(a - 0.5)
                })
            }
            (other, _) => Err(Error::Argument(format!("invalid blocks action {other:?}"))),
        }
    }

    fn shift(&mut self, right: bool) -> bool {
        let next = if right {
            self.pos + 1
        } else if self.pos == 0 {
            return false;
        } else {
            self.pos - 1
        };
        if next >= self.config.size || self.wall_at(next).is_some() {
            return false;
        }
        self.pos = next;
        true
    }

    pub(super) fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::Usage("step called after episode end".into()));
        }
        let mut mv = self.decode(action)?;
        let d = self.config.dynamics.clone();
        if d.action_fail_prob > 0.0 && self.rng.random::<f64>() < d.action_fail_prob {
            mv = Move::Stay;
        }
        let before = self.pos as f64;
        let mut reward = 0.0;
        match mv {
            Move::Stay => self.progress = 0.0,
            Move::Left | Move::Right => {
                self.progress += d.effect_scale;
                while self.progress >= 1.0 {
                    self.progress -= 1.0;
                    if !self.shift(mv == Move::Right) {
                        self.progress = 0.0;
                        break;
                    }
                }
            }
            Move::Jump(power) => {
                self.progress = 0.0;
                let power = power * d.effect_scale;
                match self.wall_at(self.pos + 1) {
                    Some(w) => {
                        let h = self.heights[w] as f64;
                        if power >= h + 2.0 {
                            self.fallen = true;
                        } else if power >= h {
                            self.pos += 2;
                            self.cleared += 1;
                            reward += 1.0;
                        }
                    }
                    None => {
                        self.shift(true);
                    }
                }
            }
        }
        if !self.fallen && d.drift_prob > 0.0 && self.rng.random::<f64>() < d.drift_prob {
            let right = self.rng.random::<bool>();
            self.shift(right);
        }
        self.velocity = self.pos as f64 - before;
        self.t += 1;
        self.done = self.fallen || self.t >= self.config.horizon || self.pos + 1 >= self.config.size;
        let mut info = BTreeMap::new();
        info.insert("velocity".to_string(), self.velocity);
        info.insert("base_reward".to_string(), reward);
        info.insert("walls_cleared".to_string(), self.cleared as f64);
        info.insert("fallen".to_string(), if self.fallen { 1.0 } else { 0.0 });
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done: self.done,
            info,
        })
    }

    fn observe(&mut self) -> Observation {
        let sp = self.config.wall_spacing as f64;
        let hmax = self.config.max_wall_height as f64;
        let next = self.walls.iter().position(|&w| w > self.pos);
        let next_h = next.map_or(0.0, |i| self.heights[i] as f64 / hmax);
        let prev_h = match next {
            Some(0) => 0.0,
            Some(i) => self.heights[i - 1] as f64 / hmax,
            None => *self.heights.last().unwrap() as f64 / hmax,
        };
        let dist = next.map_or(1.0, |i| ((self.walls[i] - self.pos) as f64 / sp).min(1.0));
        let mut proprio = vec![
            (self.pos % self.config.wall_spacing) as f64 / sp,
            self.velocity,
            next_h,
            prev_h,
            dist,
        ];
        add_noise(&mut proprio, self.config.dynamics.obs_noise_std, &mut self.rng);
        Observation {
            proprio,
            lidar: Vec::new(),
        }
    }
}
