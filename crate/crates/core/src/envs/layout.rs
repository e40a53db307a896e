//! Obstacle layouts: sampling, reachability and the fixed evaluation scenario.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvConfig, EnvKind, ObstacleClass};
use crate::error::{Error, Result};
use crate::math::{norm2, sub2, Vec2};

/// Number of rejection samples before a configuration is declared unsolvable.
pub const MAX_LAYOUT_TRIES: usize = 100;

/// Resolution of the occupancy raster used for point-mass reachability checks.
const POINT_MASS_RASTER: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeightClass {
    /// Low box: the agent may cross it at a per-step cost.
    Traversable,
    /// Tall box: motion stops at its faces.
    Blocking,
}

/// Axis-aligned box obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    /// Full side lengths along x and y.
    pub size: Vec2,
    pub class: HeightClass,
}

impl Obstacle {
    /// Strict interior test; faces belong to free space.
    pub fn contains(&self, p: Vec2) -> bool {
        (p[0] - self.center[0]).abs() < 0.5 * self.size[0] && (p[1] - self.center[1]).abs() < 0.5 * self.size[1]
    }

    pub fn min(&self) -> Vec2 {
        [self.center[0] - 0.5 * self.size[0], self.center[1] - 0.5 * self.size[1]]
    }

    pub fn max(&self) -> Vec2 {
        [self.center[0] + 0.5 * self.size[0], self.center[1] + 0.5 * self.size[1]]
    }

    pub fn is_blocking(&self) -> bool {
        self.class == HeightClass::Blocking
    }
}

/// Everything needed to replay an episode's scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub obstacles: Vec<Obstacle>,
    pub spawn: Vec2,
    pub spawn_heading: f64,
    pub target: Vec2,
    pub target_heading: f64,
}

impl Layout {
    pub fn blocked(&self, p: Vec2) -> bool {
        self.obstacles.iter().any(|o| o.is_blocking() && o.contains(p))
    }

    pub fn traversable_at(&self, p: Vec2) -> bool {
        self.obstacles.iter().any(|o| !o.is_blocking() && o.contains(p))
    }

    pub fn occupied(&self, p: Vec2) -> bool {
        self.obstacles.iter().any(|o| o.contains(p))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Samples a solvable layout, deterministic in `(config, seed)`.
pub fn sample_layout(cfg: &EnvConfig, seed: u64) -> Result<Layout> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x1a70);
    for _ in 0..MAX_LAYOUT_TRIES {
        let obstacles: Vec<Obstacle> = (0..cfg.num_boxes).map(|_| sample_box(cfg, &mut rng)).collect();
        let probe = Layout {
            obstacles,
            spawn: [0.0; 2],
            spawn_heading: 0.0,
            target: [0.0; 2],
            target_heading: 0.0,
        };
        let Some(spawn) = sample_free_point(cfg, &probe, &mut rng, None) else {
            continue;
        };
        let Some(target) = sample_free_point(cfg, &probe, &mut rng, Some(spawn)) else {
            continue;
        };
        let layout = Layout {
            spawn,
            spawn_heading: sample_heading(cfg, &mut rng),
            target,
            target_heading: sample_heading(cfg, &mut rng),
            ..probe
        };
        if is_reachable(cfg, &layout) {
            return Ok(layout);
        }
    }
    Err(Error::Config(format!(
        "no layout with a reachable target after {MAX_LAYOUT_TRIES} rejection samples"
    )))
}

fn sample_box(cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> Obstacle {
    let [lo, hi] = cfg.box_length;
    let mut side = || lo + (hi - lo) * rng.random::<f64>();
    let raw = [side() * cfg.arena_scale, side() * cfg.arena_scale];
    let class = match cfg.obstacle_class {
        ObstacleClass::Blocking => HeightClass::Blocking,
        ObstacleClass::Traversable => HeightClass::Traversable,
        ObstacleClass::Mixed => {
            if rng.random::<f64>() < cfg.traversable_fraction {
                HeightClass::Traversable
            } else {
                HeightClass::Blocking
            }
        }
    };
    match cfg.kind {
        EnvKind::Gridworld => {
            let (w, h) = cfg.grid_dims();
            let sx = (raw[0].round() as usize).clamp(1, w);
            let sy = (raw[1].round() as usize).clamp(1, h);
            let x0 = rng.random_range(0..=w - sx) as f64;
            let y0 = rng.random_range(0..=h - sy) as f64;
            Obstacle {
                center: [x0 + 0.5 * (sx as f64 - 1.0), y0 + 0.5 * (sy as f64 - 1.0)],
                size: [sx as f64, sy as f64],
                class,
            }
        }
        EnvKind::PointMass => {
            let size = [raw[0].min(cfg.width), raw[1].min(cfg.height)];
            let cx = 0.5 * size[0] + (cfg.width - size[0]) * rng.random::<f64>();
            let cy = 0.5 * size[1] + (cfg.height - size[1]) * rng.random::<f64>();
            Obstacle {
                center: [cx, cy],
                size,
                class,
            }
        }
    }
}

fn sample_heading(cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> f64 {
    match cfg.kind {
        EnvKind::Gridworld => crate::math::wrap_angle(rng.random_range(0..4) as f64 * std::f64::consts::FRAC_PI_2),
        EnvKind::PointMass => crate::math::wrap_angle((2.0 * rng.random::<f64>() - 1.0) * std::f64::consts::PI),
    }
}

fn sample_free_point(cfg: &EnvConfig, layout: &Layout, rng: &mut ChaCha8Rng, away_from: Option<Vec2>) -> Option<Vec2> {
    for _ in 0..MAX_LAYOUT_TRIES {
        let p = match cfg.kind {
            EnvKind::Gridworld => {
                let (w, h) = cfg.grid_dims();
                [rng.random_range(0..w) as f64, rng.random_range(0..h) as f64]
            }
            EnvKind::PointMass => {
                let m = 0.25_f64.min(0.25 * cfg.width).min(0.25 * cfg.height);
                [
                    m + (cfg.width - 2.0 * m) * rng.random::<f64>(),
                    m + (cfg.height - 2.0 * m) * rng.random::<f64>(),
                ]
            }
        };
        if layout.occupied(p) {
            continue;
        }
        if let Some(q) = away_from {
            if norm2(sub2(p, q)) < cfg.min_target_distance.max(1e-9) {
                continue;
            }
        }
        return Some(p);
    }
    None
}

/// Raster over which reachability is checked: cells and their blocked flags.
struct Raster {
    nx: usize,
    ny: usize,
    cell: f64,
    blocked: Vec<bool>,
}

impl Raster {
    fn new(cfg: &EnvConfig, layout: &Layout) -> Self {
        let (nx, ny, cell) = match cfg.kind {
            EnvKind::Gridworld => {
                let (w, h) = cfg.grid_dims();
                (w, h, 1.0)
            }
            EnvKind::PointMass => (
                (cfg.width / POINT_MASS_RASTER).ceil() as usize,
                (cfg.height / POINT_MASS_RASTER).ceil() as usize,
                POINT_MASS_RASTER,
            ),
        };
        let offset = if cfg.kind == EnvKind::Gridworld { 0.0 } else { 0.5 };
        let mut blocked = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let p = [(i as f64 + offset) * cell, (j as f64 + offset) * cell];
                blocked[j * nx + i] = layout.blocked(p);
            }
        }
        Raster { nx, ny, cell, blocked }
    }

    fn index_of(&self, p: Vec2, cfg: &EnvConfig) -> usize {
        let (i, j) = match cfg.kind {
            EnvKind::Gridworld => (p[0].round() as usize, p[1].round() as usize),
            EnvKind::PointMass => ((p[0] / self.cell) as usize, (p[1] / self.cell) as usize),
        };
        j.min(self.ny - 1) * self.nx + i.min(self.nx - 1)
    }
}

/// Flood fill from spawn to target over non-blocking cells (4-connected).
pub fn is_reachable(cfg: &EnvConfig, layout: &Layout) -> bool {
    let raster = Raster::new(cfg, layout);
    let start = raster.index_of(layout.spawn, cfg);
    let goal = raster.index_of(layout.target, cfg);
    if raster.blocked[start] || raster.blocked[goal] {
        return false;
    }
    let mut seen = vec![false; raster.blocked.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(c) = queue.pop_front() {
        if c == goal {
            return true;
        }
        let (i, j) = (c % raster.nx, c / raster.nx);
        let mut push = |n: usize| {
            if !seen[n] && !raster.blocked[n] {
                seen[n] = true;
                queue.push_back(n);
            }
        };
        if i > 0 {
            push(c - 1);
        }
        if i + 1 < raster.nx {
            push(c + 1);
        }
        if j > 0 {
            push(c - raster.nx);
        }
        if j + 1 < raster.ny {
            push(c + raster.nx);
        }
    }
    false
}

/// Fixed evaluation scene: spawn and target on the arena's horizontal midline, facing +x,
/// with one square traversable box of side 1.4 (arena-scaled) centred between them.
pub fn square_obstacle_scenario(cfg: &EnvConfig) -> Layout {
    let side = 1.4 * cfg.arena_scale;
    match cfg.kind {
        EnvKind::Gridworld => {
            let (w, h) = cfg.grid_dims();
            let y = ((h - 1) / 2) as f64;
            let spawn = [1.0_f64.min((w - 1) as f64), y];
            let target = [(w.saturating_sub(2)) as f64, y];
            let s = (side.round() as usize).clamp(1, w.saturating_sub(4).max(1)) as f64;
            let mid = 0.5 * (spawn[0] + target[0]);
            let x0 = (mid - 0.5 * (s - 1.0)).round();
            let y0 = (y - 0.5 * (s - 1.0)).round();
            Layout {
                obstacles: vec![Obstacle {
                    center: [x0 + 0.5 * (s - 1.0), y0 + 0.5 * (s - 1.0)],
                    size: [s, s],
                    class: HeightClass::Traversable,
                }],
                spawn,
                spawn_heading: 0.0,
                target,
                target_heading: 0.0,
            }
        }
        EnvKind::PointMass => {
            let y = 0.5 * cfg.height;
            let spawn = [0.15 * cfg.width, y];
            let target = [0.85 * cfg.width, y];
            Layout {
                obstacles: vec![Obstacle {
                    center: [0.5 * cfg.width, y],
                    size: [side, side],
                    class: HeightClass::Traversable,
                }],
                spawn,
                spawn_heading: 0.0,
                target,
                target_heading: 0.0,
            }
        }
    }
}
