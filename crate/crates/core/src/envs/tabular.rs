//! Explicit tabular MDPs and the gridworld enumeration that produces them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Action, Env, EnvConfig, EnvKind, EnvState, Layout, GRID_MOVES};
use crate::error::{Error, Result};
use crate::features::{phi, FeatureMode};
use crate::rewards::RewardModel;

/// Finite MDP with sparse transition rows `P[s][a][.]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Row `s * num_actions + a` lists `(s', P[s][a][s'])` with positive probability.
    transitions: Vec<Vec<(usize, f64)>>,
    /// `group_rewards[j][s * num_actions + a]`.
    pub group_rewards: Vec<Vec<f64>>,
    pub initial_distribution: Vec<f64>,
    pub discount: f64,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<Vec<(usize, f64)>>,
        group_rewards: Vec<Vec<f64>>,
        initial_distribution: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        let mdp = TabularMdp {
            num_states,
            num_actions,
            transitions,
            group_rewards,
            initial_distribution,
            discount,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Builds from a dense `P[s][a][s']` tensor and `r[j][s][a]` tables.
    pub fn from_dense(p: &[Vec<Vec<f64>>], r: &[Vec<Vec<f64>>], rho: Vec<f64>, discount: f64) -> Result<Self> {
        let ns = p.len();
        let na = p.first().map_or(0, |row| row.len());
        let transitions = p
            .iter()
            .flat_map(|rows| {
                rows.iter().map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, &q)| q != 0.0)
                        .map(|(k, &q)| (k, q))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let group_rewards = r
            .iter()
            .map(|table| table.iter().flatten().copied().collect())
            .collect();
        TabularMdp::new(ns, na, transitions, group_rewards, rho, discount)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.num_states, self.num_actions);
        if ns == 0 || na == 0 {
            return Err(Error::Domain("tabular MDP needs at least one state and action".into()));
        }
        if self.transitions.len() != ns * na {
            return Err(Error::Domain("transition table has the wrong number of rows".into()));
        }
        for (row_idx, row) in self.transitions.iter().enumerate() {
            let mut total = 0.0;
            for &(s2, q) in row {
                if s2 >= ns || !(q >= 0.0) {
                    return Err(Error::Domain(format!("invalid transition entry in row {row_idx}")));
                }
                total += q;
            }
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("transition row {row_idx} sums to {total}")));
            }
        }
        if self.group_rewards.iter().any(|g| g.len() != ns * na) {
            return Err(Error::Domain("reward table has the wrong size".into()));
        }
        if self.initial_distribution.len() != ns || self.initial_distribution.iter().any(|&q| !(q >= 0.0)) {
            return Err(Error::Domain("initial distribution is invalid".into()));
        }
        let mass: f64 = self.initial_distribution.iter().sum();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("initial distribution sums to {mass}")));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Domain("discount must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn num_groups(&self) -> usize {
        self.group_rewards.len()
    }

    #[inline]
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.num_actions + a]
    }

    pub fn probability(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.successors(s, a)
            .iter()
            .filter(|(k, _)| *k == s2)
            .map(|(_, q)| q)
            .sum()
    }

    #[inline]
    pub fn reward(&self, group: usize, s: usize, a: usize) -> f64 {
        self.group_rewards[group][s * self.num_actions + a]
    }

    /// Copy of this MDP carrying different reward tables.
    pub fn with_rewards(&self, group_rewards: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = self.clone();
        m.group_rewards = group_rewards;
        m.validate()?;
        Ok(m)
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        let mut m = self.clone();
        m.discount = discount;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Motion {
    /// Last command was "stay" (or the episode just started).
    Stay,
    /// Last command moved the agent one cell along its heading.
    Moved,
    /// Last command was a move that hit a wall or blocking box.
    Blocked,
}

/// Enumerated gridworld state: cell, heading index, last-command outcome, time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridKey {
    pub x: usize,
    pub y: usize,
    pub heading: usize,
    pub motion: Motion,
    pub t: usize,
}

impl GridKey {
    pub fn from_state(s: &EnvState) -> GridKey {
        let moving = s.velocity != [0.0, 0.0];
        let commanded = s.previous_action.iter().any(|&a| a != 0.0);
        let motion = match (moving, commanded) {
            (true, _) => Motion::Moved,
            (false, true) => Motion::Blocked,
            (false, false) => Motion::Stay,
        };
        GridKey {
            x: s.position[0].round() as usize,
            y: s.position[1].round() as usize,
            heading: Env::heading_index(s.heading),
            motion,
            t: s.time_step,
        }
    }
}

/// Gridworld enumerated into a [`TabularMdp`], with the state codec needed to
/// move between live environment states and table indices. The last state is an
/// absorbing zero-reward terminal reached after the horizon.
#[derive(Debug, Clone)]
pub struct GridTabular {
    pub mdp: TabularMdp,
    pub layout: Layout,
    keys: Vec<GridKey>,
    index: HashMap<GridKey, usize>,
    env: Env,
}

impl GridTabular {
    pub fn terminal(&self) -> usize {
        self.keys.len()
    }

    pub fn num_states(&self) -> usize {
        self.mdp.num_states
    }

    pub fn state_index(&self, s: &EnvState) -> Option<usize> {
        if s.time_step >= s.horizon {
            return Some(self.terminal());
        }
        self.index.get(&GridKey::from_state(s)).copied()
    }

    pub fn key(&self, idx: usize) -> Option<GridKey> {
        self.keys.get(idx).copied()
    }

    /// Live state for a table index; `None` for the terminal.
    pub fn env_state(&self, idx: usize) -> Option<EnvState> {
        let k = self.keys.get(idx)?;
        let dir = GRID_MOVES[heading_move(k.heading)];
        let mut s = self.env.initial_state(&self.layout, 0);
        s.position = [k.x as f64, k.y as f64];
        s.heading = Env::heading_from_index(k.heading);
        s.time_step = k.t;
        s.velocity = if k.motion == Motion::Moved { dir } else { [0.0, 0.0] };
        s.previous_action = if k.motion == Motion::Stay {
            vec![0.0, 0.0]
        } else {
            dir.to_vec()
        };
        Some(s)
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    /// `phi(s)` for every state; zeros at the terminal.
    pub fn phi_table(&self, mode: FeatureMode) -> Vec<Vec<f64>> {
        let d = mode.dim(self.env.config());
        (0..self.num_states())
            .map(|i| self.env_state(i).map_or_else(|| vec![0.0; d], |s| phi(&s, mode)))
            .collect()
    }

    /// Network inputs for every non-terminal state.
    pub fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.keys.len())
            .map(|i| {
                let s = self.env_state(i).expect("non-terminal");
                self.env.encode(&self.env.observe(&s))
            })
            .collect()
    }
}

/// Move index whose direction matches a heading index (east, north, west, south).
fn heading_move(h: usize) -> usize {
    [2, 1, 4, 3][h % 4]
}

/// Enumerates a deterministic gridworld (layout of `seed`) into an explicit MDP
/// whose transitions and group rewards come from stepping the live environment.
pub fn tabularize(env_cfg: &EnvConfig, rewards: &RewardModel, seed: u64, discount: f64) -> Result<GridTabular> {
    if env_cfg.kind != EnvKind::Gridworld {
        return Err(Error::Unsupported(
            "only gridworld configurations can be tabularized".into(),
        ));
    }
    let env = Env::new(env_cfg.clone())?;
    let layout = env.layout_for(seed)?;
    tabularize_layout(env, layout, rewards, discount)
}

pub(crate) fn tabularize_layout(env: Env, layout: Layout, rewards: &RewardModel, discount: f64) -> Result<GridTabular> {
    let cfg = env.config().clone();
    let (w, h) = cfg.grid_dims();
    let mut keys = Vec::new();
    for t in 0..cfg.horizon {
        for y in 0..h {
            for x in 0..w {
                if layout.blocked([x as f64, y as f64]) {
                    continue;
                }
                for heading in 0..4 {
                    for motion in [Motion::Stay, Motion::Moved, Motion::Blocked] {
                        keys.push(GridKey {
                            x,
                            y,
                            heading,
                            motion,
                            t,
                        });
                    }
                }
            }
        }
    }
    let index: HashMap<GridKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut tab = GridTabular {
        mdp: TabularMdp {
            num_states: 0,
            num_actions: 0,
            transitions: vec![],
            group_rewards: vec![],
            initial_distribution: vec![],
            discount,
        },
        layout: layout.clone(),
        keys,
        index,
        env,
    };
    let ns = tab.keys.len() + 1;
    let na = GRID_MOVES.len();
    let terminal = tab.terminal();
    let mut transitions = Vec::with_capacity(ns * na);
    let mut group_rewards = vec![vec![0.0; ns * na]; crate::rewards::NUM_GROUPS];
    for s in 0..tab.keys.len() {
        let state = tab.env_state(s).expect("non-terminal");
        for a in 0..na {
            let tr = tab.env.step(&state, &Action::Move(a))?;
            let next = if tr.done {
                terminal
            } else {
                tab.state_index(&tr.state)
                    .ok_or_else(|| Error::Domain(format!("successor of state {s} is not enumerated")))?
            };
            transitions.push(vec![(next, 1.0)]);
            for (j, r) in rewards.group_rewards(&tr.signals).iter().enumerate() {
                group_rewards[j][s * na + a] = *r;
            }
        }
    }
    for _ in 0..na {
        transitions.push(vec![(terminal, 1.0)]);
    }
    let start = tab.env.initial_state(&layout, 0);
    let mut rho = vec![0.0; ns];
    rho[tab
        .state_index(&start)
        .ok_or_else(|| Error::Domain("spawn state not enumerated".into()))?] = 1.0;
    tab.mdp = TabularMdp::new(ns, na, transitions, group_rewards, rho, discount)?;
    Ok(tab)
}
