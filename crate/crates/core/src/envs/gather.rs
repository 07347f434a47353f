use std::collections::BTreeMap;

use rand::Rng;

use super::{add_noise, Action, EnvConfig, Observation, StepResult};
use crate::seeding::{self, Rng as SeededRng};
use crate::{Error, Result};

/// Eight king moves (direction `k` points at angle `k * 45` degrees,
/// counter-clockwise from +x) plus a stay action.
pub const GATHER_ACTIONS: usize = 9;
pub const STAY: usize = 8;
/// heading cos, heading sin, speed.
pub const PROPRIO_DIM: usize = 3;

const DIRS: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cell {
    Empty,
    Apple,
    Bomb,
}

#[derive(Debug, Clone)]
pub struct GatherState {
    config: EnvConfig,
    grid: Vec<Cell>,
    pos: (i64, i64),
    heading: usize,
    speed: f64,
    progress: f64,
    t: usize,
    done: bool,
    apples_left: usize,
    rng: SeededRng,
}

impl GatherState {
    pub(super) fn new(config: EnvConfig, seed: u64) -> Result<(Self, Observation)> {
        let n = config.size;
        let cells = n * n;
        let needed = config.n_apples + config.n_bombs;
        if needed + 1 > cells {
            return Err(Error::Config("too many objects for the grid".into()));
        }
        let mut layout_rng = seeding::derived_rng(seed, &[0]);
        let start = ((n / 2) as i64, (n / 2) as i64);
        let start_idx = start.1 as usize * n + start.0 as usize;
        // Partial Fisher-Yates over the free cells.
        let mut free: Vec<usize> = (0..cells).filter(|&c| c != start_idx).collect();
        for i in 0..needed {
            let j = layout_rng.random_range(i..free.len());
            free.swap(i, j);
        }
        let mut grid = vec![Cell::Empty; cells];
        for (i, &c) in free[..needed].iter().enumerate() {
            grid[c] = if i < config.n_apples { Cell::Apple } else { Cell::Bomb };
        }
        let mut state = Self {
            apples_left: config.n_apples,
            heading: layout_rng.random_range(0..8),
            config,
            grid,
            pos: start,
            speed: 0.0,
            progress: 0.0,
            t: 0,
            done: false,
            rng: seeding::derived_rng(seed, &[1]),
        };
        let obs = state.observe();
        Ok((state, obs))
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

    pub fn position(&self) -> (i64, i64) {
        self.pos
    }

    /// Number of occupied (apple or bomb) cells.
    pub fn occupied_cells(&self) -> usize {
        self.grid.iter().filter(|c| **c != Cell::Empty).count()
    }

    fn idx(&self, p: (i64, i64)) -> usize {
        p.1 as usize * self.config.size + p.0 as usize
    }

    fn in_bounds(&self, p: (i64, i64)) -> bool {
        let n = self.config.size as i64;
        p.0 >= 0 && p.1 >= 0 && p.0 < n && p.1 < n
    }

    /// Moves one cell in `dir` if in bounds; returns the collected reward.
    fn move_one(&mut self, dir: usize) -> (f64, bool) {
        let (dx, dy) = DIRS[dir];
        let next = (self.pos.0 + dx, self.pos.1 + dy);
        if !self.in_bounds(next) {
            return (0.0, false);
        }
        self.pos = next;
        let i = self.idx(next);
        let r = match self.grid[i] {
            Cell::Apple => {
                self.apples_left -= 1;
                1.0
            }
            Cell::Bomb => -1.0,
            Cell::Empty => 0.0,
        };
        self.grid[i] = Cell::Empty;
        (r, true)
    }

    pub(super) fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::Usage("step called after episode end".into()));
        }
        let mut a = match action {
            Action::Discrete(a) if *a < GATHER_ACTIONS => *a,
            other => return Err(Error::Argument(format!("invalid gather action {other:?}"))),
        };
        let dyn_ = self.config.dynamics.clone();
        if dyn_.action_fail_prob > 0.0 && self.rng.random::<f64>() < dyn_.action_fail_prob {
            a = STAY;
        }
        let before = self.pos;
        let mut reward = 0.0;
        if a == STAY {
            self.progress = 0.0;
        } else {
            self.heading = a;
            self.progress += dyn_.effect_scale;
            while self.progress >= 1.0 {
                self.progress -= 1.0;
                let (r, moved) = self.move_one(a);
                reward += r;
                if !moved {
                    self.progress = 0.0;
                    break;
                }
            }
        }
        if dyn_.drift_prob > 0.0 && self.rng.random::<f64>() < dyn_.drift_prob {
            let d = self.rng.random_range(0..8);
            reward += self.move_one(d).0;
        }
        let (dx, dy) = ((self.pos.0 - before.0) as f64, (self.pos.1 - before.1) as f64);
        self.speed = (dx * dx + dy * dy).sqrt();
        self.t += 1;
        self.done = self.t >= self.config.horizon;
        let mut info = BTreeMap::new();
        info.insert("velocity".to_string(), self.speed);
        info.insert("base_reward".to_string(), reward);
        info.insert("apples_left".to_string(), self.apples_left as f64);
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done: self.done,
            info,
        })
    }

    fn observe(&mut self) -> Observation {
        let bins = self.config.lidar_bins;
        let range = self.config.lidar_range;
        let mut lidar = vec![0.0; 2 * bins];
        let n = self.config.size as i64;
        let reach = range.ceil() as i64;
        for y in (self.pos.1 - reach).max(0)..(self.pos.1 + reach + 1).min(n) {
            for x in (self.pos.0 - reach).max(0)..(self.pos.0 + reach + 1).min(n) {
                let c = self.grid[self.idx((x, y))];
                if c == Cell::Empty {
                    continue;
                }
                let (dx, dy) = ((x - self.pos.0) as f64, (y - self.pos.1) as f64);
                let d = (dx * dx + dy * dy).sqrt();
                if d > range || d == 0.0 {
                    continue;
                }
                // Sector k is centred on direction k.
                let angle = dy.atan2(dx).rem_euclid(std::f64::consts::TAU);
                let sector = ((angle / std::f64::consts::TAU * bins as f64 + 0.5).floor() as usize) % bins;
                let offset = if c == Cell::Apple { 0 } else { bins };
                let v = 1.0 - d / range;
                if v > lidar[offset + sector] {
                    lidar[offset + sector] = v;
                }
            }
        }
        let theta = self.heading as f64 * std::f64::consts::FRAC_PI_4;
        let mut proprio = vec![theta.cos(), theta.sin(), self.speed / std::f64::consts::SQRT_2];
        let std = self.config.dynamics.obs_noise_std;
        add_noise(&mut proprio, std, &mut self.rng);
        add_noise(&mut lidar, std, &mut self.rng);
        lidar.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Observation { proprio, lidar }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{reset, EnvState};

    fn small() -> EnvConfig {
        EnvConfig {
            size: 8,
            n_apples: 4,
            n_bombs: 4,
            horizon: 50,
            ..EnvConfig::gather()
        }
    }

    fn gather(seed: u64, cfg: &EnvConfig) -> GatherState {
        match reset(cfg, seed).unwrap().0 {
            EnvState::Gather(g) => g,
            _ => unreachable!(),
        }
    }

    #[test]
    fn same_seed_same_observation() {
        let c = small();
        let (_, a) = reset(&c, 17).unwrap();
        let (_, b) = reset(&c, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), c.obs_dim());
    }

    #[test]
    fn eight_distinct_objects() {
        for seed in 0..20 {
            assert_eq!(gather(seed, &small()).occupied_cells(), 8);
        }
    }

    fn place(g: &mut GatherState, p: (i64, i64), c: Cell) {
        let i = g.idx(p);
        g.grid[i] = c;
    }

    #[test]
    fn apple_and_bomb_rewards() {
        let c = small();
        let mut g = gather(3, &c);
        g.grid.iter_mut().for_each(|c| *c = Cell::Empty);
        g.apples_left = 1;
        let (x, y) = g.pos;
        place(&mut g, (x + 1, y), Cell::Apple);
        place(&mut g, (x + 1, y + 1), Cell::Bomb);
        let r = g.step(&Action::Discrete(0)).unwrap();
        assert_eq!(r.reward, 1.0);
        assert_eq!(g.occupied_cells(), 1);
        let r = g.step(&Action::Discrete(2)).unwrap();
        assert_eq!(r.reward, -1.0);
        let r = g.step(&Action::Discrete(2)).unwrap();
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn walls_block_movement_and_lidar_is_normalized() {
        let c = small();
        let mut g = gather(5, &c);
        for _ in 0..20 {
            let r = g.step(&Action::Discrete(4)).unwrap();
            assert!(r.obs.lidar.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(g.position().0, 0);
    }

    #[test]
    fn step_after_done_is_usage_error() {
        let mut c = small();
        c.horizon = 2;
        let mut g = gather(0, &c);
        g.step(&Action::Discrete(STAY)).unwrap();
        assert!(g.step(&Action::Discrete(STAY)).unwrap().done);
        assert!(matches!(g.step(&Action::Discrete(STAY)), Err(Error::Usage(_))));
        assert!(matches!(
            gather(0, &c).step(&Action::Discrete(9)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn lidar_points_at_adjacent_apple() {
        let c = small();
        let mut g = gather(9, &c);
        g.grid.iter_mut().for_each(|c| *c = Cell::Empty);
        let (x, y) = g.pos;
        place(&mut g, (x, y + 2), Cell::Apple);
        let o = g.observe();
        // direction 2 is +y
        assert!((o.lidar[2] - (1.0 - 2.0 / c.lidar_range)).abs() < 1e-12);
        assert_eq!(o.lidar.iter().filter(|v| **v > 0.0).count(), 1);
    }

    #[test]
    fn return_bounded_by_apples() {
        use rand::Rng;
        let c = small();
        let mut rng = seeding::rng(4);
        for seed in 0..10 {
            let mut g = gather(seed, &c);
            let mut ret = 0.0;
            loop {
                let r = g.step(&Action::Discrete(rng.random_range(0..GATHER_ACTIONS))).unwrap();
                ret += r.reward;
                if r.done {
                    break;
                }
            }
            assert!(ret <= c.n_apples as f64);
        }
    }

    #[test]
    fn reduced_effect_scale_slows_movement() {
        let mut c = small();
        c.dynamics.effect_scale = 0.5;
        let mut g = gather(1, &c);
        let x0 = g.position().0;
        g.step(&Action::Discrete(4)).unwrap();
        assert_eq!(g.position().0, x0);
        g.step(&Action::Discrete(4)).unwrap();
        assert_eq!(g.position().0, x0 - 1);
    }
}
