//! State features, successor-feature TD targets and feature expectations.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::math::norm2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Unit velocity direction in the body frame (zero when stationary).
    VelDir,
    /// Body-frame velocity followed by the previous command (pose analog).
    VelPose,
}

impl FeatureMode {
    pub fn dim(&self, env: &EnvConfig) -> usize {
        match self {
            FeatureMode::VelDir => 2,
            FeatureMode::VelPose => 2 + env.action_dim(),
        }
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vel-dir" => Ok(FeatureMode::VelDir),
            "vel-pose" => Ok(FeatureMode::VelPose),
            other => Err(Error::Config(format!("unknown feature mode `{other}`"))),
        }
    }
}

/// `features` section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    pub mode: FeatureMode,
    /// EMA coefficient for feature expectations.
    pub beta_psi: f64,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            mode: FeatureMode::VelDir,
            beta_psi: 0.99,
        }
    }
}

impl FeaturesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta_psi) {
            return Err(Error::Config("features: beta_psi must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn phi(state: &EnvState, mode: FeatureMode) -> Vec<f64> {
    let v = state.body_velocity();
    match mode {
        FeatureMode::VelDir => {
            let speed = norm2(v);
            if speed < 1e-6 {
                vec![0.0, 0.0]
            } else {
                vec![v[0] / speed, v[1] / speed]
            }
        }
        FeatureMode::VelPose => {
            let mut out = v.to_vec();
            out.extend_from_slice(&state.previous_action);
            out
        }
    }
}

/// TD regression targets `phi(s_t) + gamma * psi(s_{t+1})` for one skill's
/// transitions. `next_sf[t]` is the prediction at `s_{t+1}`; it is ignored at
/// terminal steps.
pub fn sf_td_targets(
    skills: &[usize],
    phi: &[Vec<f64>],
    next_sf: &[Vec<f64>],
    dones: &[bool],
    gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = phi.len();
    if skills.len() != n || next_sf.len() != n || dones.len() != n {
        return Err(Error::Usage("sf_td_targets: sequence lengths differ".into()));
    }
    if let Some(&z) = skills.first() {
        if skills.iter().any(|&k| k != z) {
            return Err(Error::Usage("sf_td_targets: batch mixes skills".into()));
        }
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("sf_td_targets: gamma {gamma} outside [0, 1)")));
    }
    Ok((0..n)
        .map(|t| {
            if dones[t] {
                phi[t].clone()
            } else {
                phi[t].iter().zip(&next_sf[t]).map(|(f, p)| f + gamma * p).collect()
            }
        })
        .collect())
}

/// Per-skill feature expectations, maintained as an EMA of initial-state SF predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExpectation {
    pub psi: Vec<Vec<f64>>,
    pub beta: f64,
}

impl FeatureExpectation {
    pub fn zeros(n: usize, d: usize, beta: f64) -> Self {
        FeatureExpectation {
            psi: vec![vec![0.0; d]; n],
            beta,
        }
    }

    pub fn from_vectors(psi: Vec<Vec<f64>>, beta: f64) -> Self {
        FeatureExpectation { psi, beta }
    }

    pub fn num_skills(&self) -> usize {
        self.psi.len()
    }

    pub fn dim(&self) -> usize {
        self.psi.first().map_or(0, Vec::len)
    }

    /// `psi[z] <- beta * psi[z] + (1 - beta) * initial_sf`.
    pub fn update(&mut self, z: usize, initial_sf: &[f64]) -> Result<()> {
        let beta = self.beta;
        let target = self
            .psi
            .get_mut(z)
            .ok_or_else(|| Error::Usage(format!("skill {z} out of range")))?;
        if target.len() != initial_sf.len() {
            return Err(Error::Usage("feature dimension mismatch".into()));
        }
        for (p, x) in target.iter_mut().zip(initial_sf) {
            *p = beta * *p + (1.0 - beta) * x;
        }
        Ok(())
    }
}
