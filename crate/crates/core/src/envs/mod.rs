//! Desk-scale local-navigation environments.
//!
//! Two variants share one state/observation contract: an exactly solvable
//! gridworld and a continuous point-mass with heading. Both run for a fixed
//! horizon and expose every quantity the reward groups need through
//! [`RawSignals`].

mod layout;
mod tabular;

use std::f64::consts::{FRAC_PI_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use layout::{
    is_reachable, sample_layout, square_obstacle_scenario, HeightClass, Layout, Obstacle, MAX_LAYOUT_TRIES,
};
pub use tabular::{tabularize, GridKey, GridTabular, Motion, TabularMdp};

use crate::error::{config, usage, Result};
use crate::math::{cos_sin, norm2, sub2, to_body, to_world, wrap_angle, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    Gridworld,
    PointMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObstacleClass {
    Blocking,
    Traversable,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutMode {
    /// Every reset reuses the layout drawn from `layout_seed`.
    Fixed,
    /// Every reset draws a fresh layout from the episode seed.
    Random,
}

/// `env` section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Arena extent: cells for the gridworld, meters for the point-mass.
    pub width: f64,
    pub height: f64,
    pub num_boxes: usize,
    /// Box side range in reference meters, before `arena_scale`.
    pub box_length: [f64; 2],
    /// Arena units per reference meter.
    pub arena_scale: f64,
    pub obstacle_class: ObstacleClass,
    /// Probability that a box is traversable when `obstacle_class = "mixed"`.
    pub traversable_fraction: f64,
    /// Final per-step traversal cost; the trainer ramps it in during warm-start.
    pub traversal_cost: f64,
    pub horizon: usize,
    /// Number of final steps during which the task reward is paid.
    pub task_window: usize,
    pub dt: f64,
    pub max_accel: f64,
    pub max_turn_rate: f64,
    pub damping: f64,
    /// Local occupancy is sampled on a (2r+1) x (2r+1) grid around the agent.
    pub occupancy_radius: usize,
    /// Point-mass occupancy sample spacing (meters).
    pub occupancy_spacing: f64,
    pub layout: LayoutMode,
    pub layout_seed: u64,
    pub min_target_distance: f64,
    /// Std-dev of Gaussian noise added to observations. Off by default.
    pub observation_noise: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            kind: EnvKind::Gridworld,
            width: 9.0,
            height: 9.0,
            num_boxes: 1,
            box_length: [0.8, 2.0],
            arena_scale: 1.5,
            obstacle_class: ObstacleClass::Mixed,
            traversable_fraction: 0.5,
            traversal_cost: 1.0,
            horizon: 60,
            task_window: 10,
            dt: 0.1,
            max_accel: 2.0,
            max_turn_rate: 2.0,
            damping: 1.0,
            occupancy_radius: 1,
            occupancy_spacing: 0.5,
            layout: LayoutMode::Random,
            layout_seed: 0,
            min_target_distance: 3.0,
            observation_noise: 0.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return config("env: arena size must be positive");
        }
        if self.horizon == 0 {
            return config("env: horizon must be positive");
        }
        if self.task_window == 0 || self.task_window > self.horizon {
            return config("env: task_window must lie in [1, horizon]");
        }
        let [lo, hi] = self.box_length;
        if !(0.8..=2.0).contains(&lo) || !(0.8..=2.0).contains(&hi) || lo > hi {
            return config("env: box_length must be an ordered range within [0.8, 2.0]");
        }
        if self.arena_scale <= 0.0 {
            return config("env: arena_scale must be positive");
        }
        if !(0.0..=1.0).contains(&self.traversable_fraction) {
            return config("env: traversable_fraction must lie in [0, 1]");
        }
        if self.traversal_cost < 0.0 || self.observation_noise < 0.0 || self.min_target_distance < 0.0 {
            return config("env: costs, noise and distances must be non-negative");
        }
        if self.occupancy_radius > 3 {
            return config("env: occupancy_radius must be at most 3");
        }
        match self.kind {
            EnvKind::Gridworld => {
                if self.width.fract() != 0.0 || self.height.fract() != 0.0 || self.width < 2.0 || self.height < 2.0 {
                    return config("env: gridworld width/height must be integers >= 2");
                }
            }
            EnvKind::PointMass => {
                if !(self.dt > 0.0 && self.max_accel > 0.0 && self.max_turn_rate > 0.0 && self.damping >= 0.0) {
                    return config("env: point-mass dt, max_accel, max_turn_rate must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.width as usize, self.height as usize)
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            EnvKind::Gridworld => 2,
            EnvKind::PointMass => 3,
        }
    }

    pub fn num_discrete_actions(&self) -> Option<usize> {
        match self.kind {
            EnvKind::Gridworld => Some(GRID_MOVES.len()),
            EnvKind::PointMass => None,
        }
    }

    pub fn occupancy_len(&self) -> usize {
        let k = 2 * self.occupancy_radius + 1;
        k * k
    }

    /// Length of the flattened observation vector.
    pub fn observation_dim(&self) -> usize {
        // target(2) + heading error(1) + velocity(2) + time(1) + previous action + occupancy
        6 + self.action_dim() + self.occupancy_len()
    }

    /// Distance under which the yaw reward is paid.
    pub fn yaw_gate(&self) -> f64 {
        0.25 * self.arena_scale
    }
}

/// Gridworld commands as world-frame displacements: stay, north, east, south, west.
pub const GRID_MOVES: [Vec2; 5] = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    /// Index into [`GRID_MOVES`].
    Move(usize),
    /// Normalized point-mass command `[forward accel, lateral accel, turn rate]` in [-1, 1].
    Command(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub heading: f64,
    pub target_position: Vec2,
    pub target_heading: f64,
    pub obstacles: Vec<Obstacle>,
    pub time_step: usize,
    pub horizon: usize,
    pub previous_action: Vec<f64>,
    /// Seeds observation noise; unused when noise is off.
    pub noise_seed: u64,
}

impl EnvState {
    pub fn layout(&self) -> Layout {
        Layout {
            obstacles: self.obstacles.clone(),
            spawn: self.position,
            spawn_heading: self.heading,
            target: self.target_position,
            target_heading: self.target_heading,
        }
    }

    pub fn body_velocity(&self) -> Vec2 {
        to_body(self.velocity, self.heading)
    }

    fn blocked(&self, p: Vec2) -> bool {
        self.obstacles.iter().any(|o| o.is_blocking() && o.contains(p))
    }

    fn traversable_at(&self, p: Vec2) -> bool {
        self.obstacles.iter().any(|o| !o.is_blocking() && o.contains(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub target_in_body_frame: Vec2,
    pub heading_error: f64,
    pub own_velocity_in_body_frame: Vec2,
    pub time_indicator: f64,
    pub previous_action: Vec<f64>,
    pub local_occupancy: Vec<f64>,
}

/// Per-step quantities from which every extrinsic reward is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSignals {
    pub target_in_body: Vec2,
    pub heading_error: f64,
    pub speed: f64,
    pub action: Vec<f64>,
    pub previous_action: Vec<f64>,
    pub contact_flag: bool,
    pub action_clipped: bool,
    pub in_task_window: bool,
    pub distance_to_target: f64,
    /// Angle between the heading and the bearing to the target (0 at the target).
    pub bearing_error: f64,
    /// Velocity component along the direction to the target, measured from the pre-step position.
    pub velocity_toward_target: f64,
    pub on_traversable: bool,
    pub traversal_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub observation: Observation,
    pub signals: RawSignals,
    pub done: bool,
}

/// Environment dynamics bound to one configuration.
///
/// `step` is a pure function of `(state, action)`; the only mutable knob is the
/// traversal cost, which the trainer's curriculum adjusts between iterations.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    traversal_cost: f64,
    fixed_layout: Option<Layout>,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let fixed_layout = match cfg.layout {
            LayoutMode::Fixed => Some(sample_layout(&cfg, cfg.layout_seed)?),
            LayoutMode::Random => None,
        };
        Ok(Env {
            traversal_cost: cfg.traversal_cost,
            cfg,
            fixed_layout,
        })
    }

    /// Environment whose every episode uses `layout`.
    pub fn with_layout(cfg: EnvConfig, layout: Layout) -> Result<Self> {
        cfg.validate()?;
        if !is_reachable(&cfg, &layout) {
            return config("env: supplied layout has an unreachable target");
        }
        Ok(Env {
            traversal_cost: cfg.traversal_cost,
            cfg,
            fixed_layout: Some(layout),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn traversal_cost(&self) -> f64 {
        self.traversal_cost
    }

    pub fn set_traversal_cost(&mut self, cost: f64) {
        self.traversal_cost = cost.max(0.0);
    }

    pub fn layout_for(&self, seed: u64) -> Result<Layout> {
        match &self.fixed_layout {
            Some(l) => Ok(l.clone()),
            None => sample_layout(&self.cfg, seed),
        }
    }

    pub fn reset(&self, seed: u64) -> Result<(EnvState, Observation)> {
        let layout = self.layout_for(seed)?;
        let state = self.initial_state(&layout, seed);
        let obs = self.observe(&state);
        Ok((state, obs))
    }

    pub fn initial_state(&self, layout: &Layout, noise_seed: u64) -> EnvState {
        EnvState {
            position: layout.spawn,
            velocity: [0.0; 2],
            heading: layout.spawn_heading,
            target_position: layout.target,
            target_heading: layout.target_heading,
            obstacles: layout.obstacles.clone(),
            time_step: 0,
            horizon: self.cfg.horizon,
            previous_action: vec![0.0; self.cfg.action_dim()],
            noise_seed,
        }
    }

    pub fn step(&self, state: &EnvState, action: &Action) -> Result<Transition> {
        if state.time_step >= state.horizon {
            return usage("step called after the episode finished");
        }
        let (next, action_vec, clipped, contact) = match (self.cfg.kind, action) {
            (EnvKind::Gridworld, Action::Move(k)) => self.grid_dynamics(state, *k),
            (EnvKind::PointMass, Action::Command(u)) => self.point_mass_dynamics(state, u)?,
            _ => return usage("action type does not match the environment kind"),
        };
        let signals = self.signals(state, &next, action_vec, clipped, contact);
        let observation = self.observe(&next);
        let done = next.time_step == next.horizon;
        Ok(Transition {
            state: next,
            observation,
            signals,
            done,
        })
    }

    fn grid_dynamics(&self, s: &EnvState, k: usize) -> (EnvState, Vec<f64>, bool, bool) {
        let clipped = k >= GRID_MOVES.len();
        let k = k.min(GRID_MOVES.len() - 1);
        let d = GRID_MOVES[k];
        let mut next = s.clone();
        let mut contact = false;
        if k == 0 {
            next.velocity = [0.0; 2];
        } else {
            next.heading = wrap_angle(d[1].atan2(d[0]));
            let p = [s.position[0] + d[0], s.position[1] + d[1]];
            let (w, h) = self.cfg.grid_dims();
            let outside = p[0] < 0.0 || p[1] < 0.0 || p[0] > (w - 1) as f64 || p[1] > (h - 1) as f64;
            if outside || s.blocked(p) {
                contact = true;
                next.velocity = [0.0; 2];
            } else {
                next.position = p;
                next.velocity = d;
            }
        }
        next.previous_action = d.to_vec();
        next.time_step += 1;
        (next, d.to_vec(), clipped, contact)
    }

    fn point_mass_dynamics(&self, s: &EnvState, u: &[f64]) -> Result<(EnvState, Vec<f64>, bool, bool)> {
        if u.len() != 3 {
            return usage(format!("point-mass command must have 3 entries, got {}", u.len()));
        }
        let clipped = u.iter().any(|x| !(-1.0..=1.0).contains(x));
        let a: Vec<f64> = u.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
        let dt = self.cfg.dt;
        let acc = to_world([a[0] * self.cfg.max_accel, a[1] * self.cfg.max_accel], s.heading);
        let mut next = s.clone();
        let mut vel = [
            s.velocity[0] + dt * (acc[0] - self.cfg.damping * s.velocity[0]),
            s.velocity[1] + dt * (acc[1] - self.cfg.damping * s.velocity[1]),
        ];
        let mut pos = s.position;
        let mut contact = false;
        // Axis-separated move so a blocking face stops only the penetrating component.
        for axis in 0..2 {
            let mut trial = pos;
            trial[axis] += dt * s.velocity[axis];
            let limit = if axis == 0 { self.cfg.width } else { self.cfg.height };
            if trial[axis] < 0.0 || trial[axis] > limit {
                trial[axis] = trial[axis].clamp(0.0, limit);
                vel[axis] = 0.0;
                contact = true;
            }
            if let Some(o) = s.obstacles.iter().find(|o| o.is_blocking() && o.contains(trial)) {
                trial[axis] = if s.velocity[axis] > 0.0 {
                    o.min()[axis]
                } else {
                    o.max()[axis]
                };
                vel[axis] = 0.0;
                contact = true;
            }
            pos = trial;
        }
        next.position = pos;
        next.velocity = vel;
        next.heading = wrap_angle(s.heading + dt * a[2] * self.cfg.max_turn_rate);
        next.previous_action = a.clone();
        next.time_step += 1;
        Ok((next, a, clipped, contact))
    }

    fn signals(&self, prev: &EnvState, next: &EnvState, action: Vec<f64>, clipped: bool, contact: bool) -> RawSignals {
        let rel = sub2(next.target_position, next.position);
        let distance = norm2(rel);
        let bearing_error = if distance < 1e-9 {
            0.0
        } else {
            wrap_angle(rel[1].atan2(rel[0]) - next.heading)
        };
        let to_target = sub2(prev.target_position, prev.position);
        let d0 = norm2(to_target);
        let toward = if d0 < 1e-9 {
            0.0
        } else {
            (next.velocity[0] * to_target[0] + next.velocity[1] * to_target[1]) / d0
        };
        RawSignals {
            target_in_body: to_body(rel, next.heading),
            heading_error: wrap_angle(next.target_heading - next.heading),
            speed: norm2(next.velocity),
            action,
            previous_action: prev.previous_action.clone(),
            contact_flag: contact,
            action_clipped: clipped,
            in_task_window: prev.time_step + self.cfg.task_window >= prev.horizon,
            distance_to_target: distance,
            bearing_error,
            velocity_toward_target: toward,
            on_traversable: next.traversable_at(next.position),
            traversal_cost: self.traversal_cost,
        }
    }

    pub fn observe(&self, s: &EnvState) -> Observation {
        let mut obs = Observation {
            target_in_body_frame: to_body(sub2(s.target_position, s.position), s.heading),
            heading_error: wrap_angle(s.target_heading - s.heading),
            own_velocity_in_body_frame: s.body_velocity(),
            time_indicator: s.time_step as f64 / s.horizon as f64,
            previous_action: s.previous_action.clone(),
            local_occupancy: self.occupancy(s),
        };
        if self.cfg.observation_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(s.noise_seed);
            rng.set_stream(s.time_step as u64 + 1);
            let sd = self.cfg.observation_noise;
            let mut noise = || sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            for v in obs
                .target_in_body_frame
                .iter_mut()
                .chain(obs.own_velocity_in_body_frame.iter_mut())
            {
                *v += noise();
            }
            obs.heading_error += noise();
        }
        obs
    }

    fn occupancy(&self, s: &EnvState) -> Vec<f64> {
        let r = self.cfg.occupancy_radius as i64;
        let spacing = match self.cfg.kind {
            EnvKind::Gridworld => 1.0,
            EnvKind::PointMass => self.cfg.occupancy_spacing,
        };
        let mut out = Vec::with_capacity(self.cfg.occupancy_len());
        for j in -r..=r {
            for i in -r..=r {
                let off = to_world([i as f64 * spacing, j as f64 * spacing], s.heading);
                let p = [s.position[0] + off[0], s.position[1] + off[1]];
                out.push(self.occupancy_value(s, p));
            }
        }
        out
    }

    fn occupancy_value(&self, s: &EnvState, p: Vec2) -> f64 {
        let outside = match self.cfg.kind {
            EnvKind::Gridworld => {
                let (w, h) = self.cfg.grid_dims();
                p[0] < -0.5 || p[1] < -0.5 || p[0] > w as f64 - 0.5 || p[1] > h as f64 - 0.5
            }
            EnvKind::PointMass => p[0] < 0.0 || p[1] < 0.0 || p[0] > self.cfg.width || p[1] > self.cfg.height,
        };
        if outside || s.blocked(p) {
            1.0
        } else if s.traversable_at(p) {
            0.5
        } else {
            0.0
        }
    }

    /// Flattened, scaled network input.
    pub fn encode(&self, obs: &Observation) -> Vec<f64> {
        let extent = self.cfg.width.max(self.cfg.height);
        let mut v = Vec::with_capacity(self.cfg.observation_dim());
        v.push(obs.target_in_body_frame[0] / extent);
        v.push(obs.target_in_body_frame[1] / extent);
        v.push(obs.heading_error / PI);
        v.extend_from_slice(&obs.own_velocity_in_body_frame);
        v.push(obs.time_indicator);
        v.extend_from_slice(&obs.previous_action);
        v.extend_from_slice(&obs.local_occupancy);
        v
    }

    /// Index of a gridworld heading: 0 = east, 1 = north, 2 = west, 3 = south.
    pub fn heading_index(heading: f64) -> usize {
        ((heading / FRAC_PI_2).round() as i64).rem_euclid(4) as usize
    }

    pub fn heading_from_index(i: usize) -> f64 {
        let (c, s) = cos_sin(i as f64 * FRAC_PI_2);
        wrap_angle(s.atan2(c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_cfg() -> EnvConfig {
        EnvConfig {
            layout: LayoutMode::Fixed,
            layout_seed: 7,
            ..EnvConfig::default()
        }
    }

    fn empty_state(env: &Env, pos: Vec2) -> EnvState {
        let layout = Layout {
            obstacles: vec![],
            spawn: pos,
            spawn_heading: 0.0,
            target: [8.0, 8.0],
            target_heading: 0.0,
        };
        env.initial_state(&layout, 0)
    }

    #[test]
    fn reset_is_deterministic() {
        let env = Env::new(EnvConfig::default()).unwrap();
        assert_eq!(env.reset(7).unwrap(), env.reset(7).unwrap());
    }

    #[test]
    fn zero_obstacles_gives_empty_list() {
        let env = Env::new(EnvConfig {
            num_boxes: 0,
            ..EnvConfig::default()
        })
        .unwrap();
        let (s, _) = env.reset(3).unwrap();
        assert!(s.obstacles.is_empty());
        assert!(is_reachable(env.config(), &s.layout()));
    }

    #[test]
    fn east_move_from_2_2() {
        let env = Env::new(grid_cfg()).unwrap();
        let s = empty_state(&env, [2.0, 2.0]);
        let t = env.step(&s, &Action::Move(2)).unwrap();
        assert_eq!(t.state.position, [3.0, 2.0]);
        assert_eq!(t.state.velocity, [1.0, 0.0]);
    }

    #[test]
    fn stay_from_rest_keeps_position() {
        let env = Env::new(grid_cfg()).unwrap();
        let s = empty_state(&env, [2.0, 2.0]);
        let t = env.step(&s, &Action::Move(0)).unwrap();
        assert_eq!(t.state.position, [2.0, 2.0]);
        assert_eq!(t.state.velocity, [0.0, 0.0]);
        assert!(!t.signals.contact_flag);
    }

    #[test]
    fn grid_wall_and_box_block() {
        let env = Env::new(grid_cfg()).unwrap();
        let mut s = empty_state(&env, [0.0, 2.0]);
        let t = env.step(&s, &Action::Move(4)).unwrap();
        assert_eq!(t.state.position, [0.0, 2.0]);
        assert!(t.signals.contact_flag);

        s.obstacles.push(Obstacle {
            center: [1.0, 2.0],
            size: [1.0, 1.0],
            class: HeightClass::Blocking,
        });
        let t = env.step(&s, &Action::Move(2)).unwrap();
        assert_eq!(t.state.position, [0.0, 2.0]);
        assert!(t.signals.contact_flag);
        assert_eq!(t.state.previous_action, vec![1.0, 0.0]);
    }

    #[test]
    fn out_of_range_move_is_clipped() {
        let env = Env::new(grid_cfg()).unwrap();
        let s = empty_state(&env, [2.0, 2.0]);
        let t = env.step(&s, &Action::Move(9)).unwrap();
        assert!(t.signals.action_clipped);
        assert_eq!(t.state.position, [1.0, 2.0]);
    }

    #[test]
    fn step_after_done_is_usage_error() {
        let env = Env::new(grid_cfg()).unwrap();
        let (mut s, _) = env.reset(0).unwrap();
        s.time_step = s.horizon;
        assert!(matches!(env.step(&s, &Action::Move(0)), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn episode_lasts_exactly_horizon_steps() {
        let env = Env::new(EnvConfig {
            horizon: 13,
            task_window: 3,
            ..grid_cfg()
        })
        .unwrap();
        let (mut s, _) = env.reset(0).unwrap();
        let mut steps = 0;
        loop {
            let t = env.step(&s, &Action::Move(steps % 5)).unwrap();
            steps += 1;
            s = t.state;
            assert_eq!(t.signals.in_task_window, steps > 10);
            if t.done {
                break;
            }
        }
        assert_eq!(steps, 13);
    }

    fn pm_cfg() -> EnvConfig {
        EnvConfig {
            kind: EnvKind::PointMass,
            width: 6.0,
            height: 6.0,
            arena_scale: 1.0,
            layout: LayoutMode::Random,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn point_mass_zero_action_from_rest() {
        let env = Env::new(pm_cfg()).unwrap();
        let (s, _) = env.reset(4).unwrap();
        let t = env.step(&s, &Action::Command(vec![0.0, 0.0, 0.0])).unwrap();
        assert_eq!(t.state.position, s.position);
        assert_eq!(t.state.velocity, [0.0, 0.0]);
    }

    #[test]
    fn point_mass_clamps_at_box_face() {
        let env = Env::new(pm_cfg()).unwrap();
        let layout = Layout {
            obstacles: vec![Obstacle {
                center: [3.0, 3.0],
                size: [1.0, 1.0],
                class: HeightClass::Blocking,
            }],
            spawn: [2.45, 3.0],
            spawn_heading: 0.0,
            target: [5.0, 5.0],
            target_heading: 0.0,
        };
        let mut s = env.initial_state(&layout, 0);
        s.velocity = [2.0, 0.0];
        let t = env.step(&s, &Action::Command(vec![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(t.state.position[0], 2.5);
        assert_eq!(t.state.velocity[0], 0.0);
        assert!(t.signals.contact_flag);
    }

    #[test]
    fn point_mass_records_clipping() {
        let env = Env::new(pm_cfg()).unwrap();
        let (s, _) = env.reset(4).unwrap();
        let t = env.step(&s, &Action::Command(vec![3.0, 0.0, 0.0])).unwrap();
        assert!(t.signals.action_clipped);
        assert_eq!(t.signals.action, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn occupancy_length_is_fixed() {
        let env = Env::new(EnvConfig {
            num_boxes: 3,
            occupancy_radius: 2,
            ..EnvConfig::default()
        })
        .unwrap();
        for seed in 0..5 {
            let (_, obs) = env.reset(seed).unwrap();
            assert_eq!(obs.local_occupancy.len(), 25);
            assert_eq!(env.encode(&obs).len(), env.config().observation_dim());
        }
    }

    #[test]
    fn mismatched_action_kind_rejected() {
        let env = Env::new(grid_cfg()).unwrap();
        let (s, _) = env.reset(0).unwrap();
        assert!(env.step(&s, &Action::Command(vec![0.0; 3])).is_err());
    }
}
