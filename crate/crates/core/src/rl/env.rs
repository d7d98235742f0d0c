use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{depth_reward, Transition, ACTIONS, NUM_ACTIONS};
use crate::error::{Error, Result};

/// Square depth image, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthMap {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Domain(format!("depth map of side {n} needs {} values, got {}", n * n, data.len())));
        }
        Ok(DepthMap { n, data })
    }

    pub fn uniform(n: usize, d: f64) -> Self {
        DepthMap { n, data: vec![d; n * n] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorridorConfig {
    /// Cells across; everything outside is wall.
    pub width: usize,
    /// Cells along the corridor; the corridor wraps around lengthwise.
    pub length: usize,
    /// Probability that a block starts at a given cell.
    pub obstacle_density: f64,
    /// Block width in cells.
    pub obstacle_width: usize,
    /// Distance per action, cells.
    pub step: f64,
    /// Metres per cell.
    pub cell_size: f64,
    pub fov_deg: f64,
    pub resolution: usize,
    /// Depth cap, cells. Depths are reported divided by this.
    pub max_range: f64,
    /// Half the obstacle height in cells; rays above or below it see floor or ceiling.
    pub half_height: f64,
    pub crash_reward: f64,
    pub window_fraction: f64,
    /// Rows in front of the spawn cell kept clear.
    pub spawn_clearance: usize,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        CorridorConfig {
            width: 7,
            length: 64,
            obstacle_density: 0.10,
            obstacle_width: 1,
            step: 0.5,
            cell_size: 1.0,
            fov_deg: 90.0,
            resolution: 12,
            max_range: 8.0,
            half_height: 0.6,
            crash_reward: -1.0,
            window_fraction: 0.25,
            spawn_clearance: 1,
        }
    }
}

impl CorridorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("corridor: {m}")));
        if self.width == 0 || self.length == 0 || self.resolution == 0 {
            return bad("width, length and resolution must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.obstacle_density) {
            return bad("obstacle_density must lie in [0, 1]");
        }
        if self.obstacle_width == 0 || self.obstacle_width > self.width {
            return bad("obstacle_width must lie in [1, width]");
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return bad("step must lie in (0, 1] cells");
        }
        for (name, v) in [
            ("cell_size", self.cell_size),
            ("fov_deg", self.fov_deg),
            ("max_range", self.max_range),
            ("half_height", self.half_height),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be > 0"));
            }
        }
        if self.fov_deg >= 180.0 {
            return bad("fov_deg must be < 180");
        }
        if !self.crash_reward.is_finite() {
            return bad("crash_reward must be finite");
        }
        if !(self.window_fraction > 0.0 && self.window_fraction <= 1.0) {
            return bad("window_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    /// Sparser, thinner obstacles.
    pub fn meta_default() -> Self {
        Self::default()
    }

    /// Denser, wider obstacles than the meta environment.
    pub fn test_default() -> Self {
        CorridorConfig {
            obstacle_density: 0.14,
            obstacle_width: 2,
            ..Self::default()
        }
    }
}

/// Meta-training and test environment distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvPair {
    pub meta: CorridorConfig,
    pub test: CorridorConfig,
}

impl Default for EnvPair {
    fn default() -> Self {
        EnvPair {
            meta: CorridorConfig::meta_default(),
            test: CorridorConfig::test_default(),
        }
    }
}

impl EnvPair {
    pub fn meta_world(&self, seed: u64) -> Result<CorridorWorld> {
        CorridorWorld::new(self.meta.clone(), seed)
    }

    pub fn test_world(&self, seed: u64) -> Result<CorridorWorld> {
        CorridorWorld::new(self.test.clone(), seed ^ 0x5eed_7e57)
    }
}

#[derive(Debug, Clone)]
pub struct CorridorWorld {
    cfg: CorridorConfig,
    occupied: Vec<bool>,
    rng: ChaCha8Rng,
    x: f64,
    y: f64,
    /// Radians from the +y axis; positive turns towards -x.
    heading: f64,
    distance: f64,
}

impl CorridorWorld {
    /// Random layout and spawns, both drawn from `seed`.
    pub fn new(cfg: CorridorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, l) = (cfg.width, cfg.length);
        let mut occupied = vec![false; w * l];
        for y in 0..l {
            for x0 in 0..=w - cfg.obstacle_width {
                if rng.random::<f64>() < cfg.obstacle_density {
                    for x in x0..x0 + cfg.obstacle_width {
                        occupied[y * w + x] = true;
                    }
                }
            }
            if (0..w).all(|x| occupied[y * w + x]) {
                let x = rng.random_range(0..w);
                occupied[y * w + x] = false;
            }
        }
        let mut world = CorridorWorld {
            cfg,
            occupied,
            rng,
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            distance: 0.0,
        };
        world.respawn();
        Ok(world)
    }

    /// Fixed layout: `rows[y][x]` is true where a cell is occupied. The agent
    /// starts at cell centre `start`, heading along +y.
    pub fn from_layout(cfg: CorridorConfig, rows: &[Vec<bool>], start: (usize, usize), seed: u64) -> Result<Self> {
        let cfg = CorridorConfig {
            width: rows.first().map_or(0, Vec::len),
            length: rows.len(),
            ..cfg
        };
        cfg.validate()?;
        if rows.iter().any(|r| r.len() != cfg.width) {
            return Err(Error::Config("corridor layout rows must have equal width".into()));
        }
        let occupied: Vec<bool> = rows.iter().flatten().copied().collect();
        if start.0 >= cfg.width || start.1 >= cfg.length || occupied[start.1 * cfg.width + start.0] {
            return Err(Error::Config("corridor start must be a free cell".into()));
        }
        Ok(CorridorWorld {
            occupied,
            rng: ChaCha8Rng::seed_from_u64(seed),
            x: start.0 as f64 + 0.5,
            y: start.1 as f64 + 0.5,
            heading: 0.0,
            distance: 0.0,
            cfg,
        })
    }

    pub fn config(&self) -> &CorridorConfig {
        &self.cfg
    }

    pub fn position(&self) -> (f64, f64, f64) {
        (self.x, self.y, self.heading)
    }

    /// Metres flown since the last crash.
    pub fn distance(&self) -> f64 {
        self.distance
    }

    fn blocked(&self, cx: i64, cy: i64) -> bool {
        if cx < 0 || cx >= self.cfg.width as i64 {
            return true;
        }
        let l = self.cfg.length as i64;
        self.occupied[(cy.rem_euclid(l) as usize) * self.cfg.width + cx as usize]
    }

    fn respawn(&mut self) {
        let (w, l) = (self.cfg.width as i64, self.cfg.length as i64);
        let clear = self.cfg.spawn_clearance as i64;
        let mut free = Vec::new();
        for y in 0..l {
            for x in 0..w {
                if (0..=clear).all(|d| !self.blocked(x, y + d)) {
                    free.push((x, y));
                }
            }
        }
        if free.is_empty() {
            for y in 0..l {
                for x in 0..w {
                    if !self.blocked(x, y) {
                        free.push((x, y));
                    }
                }
            }
        }
        // validated layouts always keep one free cell per row
        let (x, y) = free[self.rng.random_range(0..free.len())];
        self.x = x as f64 + 0.5;
        self.y = y as f64 + 0.5;
        self.heading = 0.0;
        self.distance = 0.0;
    }

    /// Distance along the ray at `angle` (radians from +y) to the first
    /// blocked cell, capped at `max_range`.
    fn cast(&self, angle: f64) -> f64 {
        let (dx, dy) = (-angle.sin(), angle.cos());
        let max = self.cfg.max_range;
        let (mut cx, mut cy) = (self.x.floor() as i64, self.y.floor() as i64);
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        let delta_x = if dx != 0.0 { (1.0 / dx).abs() } else { f64::INFINITY };
        let delta_y = if dy != 0.0 { (1.0 / dy).abs() } else { f64::INFINITY };
        let mut side_x = if dx > 0.0 {
            (cx as f64 + 1.0 - self.x) * delta_x
        } else {
            (self.x - cx as f64) * delta_x
        };
        let mut side_y = if dy > 0.0 {
            (cy as f64 + 1.0 - self.y) * delta_y
        } else {
            (self.y - cy as f64) * delta_y
        };
        loop {
            let t = if side_x < side_y {
                let t = side_x;
                side_x += delta_x;
                cx += step_x;
                t
            } else {
                let t = side_y;
                side_y += delta_y;
                cy += step_y;
                t
            };
            if t >= max {
                return max;
            }
            if self.blocked(cx, cy) {
                return t;
            }
        }
    }

    /// Ray-cast depth image, normalised to [0, 1] by `max_range`.
    pub fn observe(&self) -> DepthMap {
        let n = self.cfg.resolution;
        let fov = self.cfg.fov_deg.to_radians();
        let max = self.cfg.max_range;
        let cols: Vec<f64> = (0..n)
            .map(|c| self.cast(self.heading + fov / 2.0 - (c as f64 + 0.5) * fov / n as f64))
            .collect();
        let mut data = Vec::with_capacity(n * n);
        for r in 0..n {
            let v = fov / 2.0 - (r as f64 + 0.5) * fov / n as f64;
            let t = v.abs().tan();
            let floor = if t > 0.0 { self.cfg.half_height / t } else { f64::INFINITY };
            for &d in &cols {
                data.push(d.min(floor).min(max) / max);
            }
        }
        DepthMap { n, data }
    }

    /// Applies one action. A crash ends the episode with `crash_reward` and
    /// respawns the agent; otherwise the reward is the centre-window depth.
    pub fn step(&mut self, action: usize) -> Result<Transition> {
        if action >= NUM_ACTIONS {
            return Err(Error::Domain(format!("action {action} out of range")));
        }
        let state = self.observe().data;
        self.heading += ACTIONS[action].to_radians();
        self.heading = (self.heading + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        let nx = self.x - self.heading.sin() * self.cfg.step;
        let ny = self.y + self.heading.cos() * self.cfg.step;
        if self.blocked(nx.floor() as i64, ny.floor() as i64) {
            let next_state = self.observe().data;
            self.respawn();
            return Ok(Transition {
                state,
                action,
                reward: self.cfg.crash_reward,
                next_state,
                crash: true,
            });
        }
        self.x = nx;
        self.y = ny.rem_euclid(self.cfg.length as f64);
        self.distance += self.cfg.step * self.cfg.cell_size;
        let map = self.observe();
        Ok(Transition {
            state,
            action,
            reward: depth_reward(&map, self.cfg.window_fraction)?,
            next_state: map.data,
            crash: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(w: usize, l: usize) -> Vec<Vec<bool>> {
        vec![vec![false; w]; l]
    }

    #[test]
    fn empty_corridor_flies_straight() {
        let mut world = CorridorWorld::from_layout(CorridorConfig::default(), &open(5, 40), (2, 0), 1).unwrap();
        for i in 1..=30 {
            let t = world.step(0).unwrap();
            assert!(!t.crash);
            assert!((world.distance() - 0.5 * i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_reward_drops_towards_wall() {
        let mut rows = open(5, 40);
        rows[12] = vec![true; 5];
        let mut world = CorridorWorld::from_layout(CorridorConfig::default(), &rows, (2, 2), 1).unwrap();
        let mut last = f64::INFINITY;
        loop {
            let t = world.step(0).unwrap();
            if t.crash {
                break;
            }
            assert!(t.reward <= last + 1e-12);
            last = t.reward;
        }
        assert!(last < 0.2);
    }

    #[test]
    fn same_seed_same_trace() {
        let trace = |seed| {
            let mut w = CorridorWorld::new(CorridorConfig::test_default(), seed).unwrap();
            (0..300).map(|i| w.step(i % 5).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(trace(9), trace(9));
        assert_ne!(trace(9), trace(10));
    }

    #[test]
    fn side_wall_crash() {
        let mut world = CorridorWorld::from_layout(CorridorConfig::default(), &open(1, 10), (0, 0), 1).unwrap();
        assert!(!world.step(3).unwrap().crash);
        let t = world.step(3).unwrap();
        assert!(t.crash);
        assert_eq!(t.reward, -1.0);
        assert_eq!(world.distance(), 0.0);
    }
}
