//! Deterministic evaluation of trained skills and trajectory export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::rollout::greedy_action;
use crate::approx::MaskedApproximator;
use crate::diversity::diversity_metric;
use crate::envs::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::features::{phi, FeatureExpectation, FeatureMode};
use crate::lagrange::ConstraintGroup;
use crate::rewards::{RewardModel, GROUP_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillReport {
    pub skill: usize,
    /// Mean undiscounted return per group.
    pub mean_returns: Vec<f64>,
    /// `mean_return >= alpha * v*` per group (empty for experts).
    pub satisfied: Vec<bool>,
    /// Monte-Carlo feature expectation (discounted feature sums).
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub episodes: usize,
    pub groups: Vec<String>,
    pub expert_values: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub skills: Vec<SkillReport>,
    pub diversity_metric: Option<f64>,
    pub all_satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub run_id: String,
    pub skill: usize,
    pub episode: usize,
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Seed of evaluation episode `k`; shared across skills so every skill sees the same layouts.
fn episode_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0xe7a1 + k as u64)
}

/// Greedy rollouts of every skill of `net` in `env`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    net: &MaskedApproximator,
    env: &Env,
    rewards: &RewardModel,
    mode: FeatureMode,
    gamma: f64,
    groups: &[ConstraintGroup],
    expert_values: &[f64],
    episodes: usize,
    seed: u64,
    run_id: &str,
) -> Result<(EvalReport, Vec<TrajectoryPoint>)> {
    if env.config().observation_dim() != net.shape.input_dim {
        return Err(Error::Config(format!(
            "environment observations have {} entries but the checkpoint expects {}",
            env.config().observation_dim(),
            net.shape.input_dim
        )));
    }
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let m = expert_values.len();
    let d = mode.dim(env.config());
    let mut skills = Vec::new();
    let mut traj = Vec::new();
    for z in 0..net.num_skills() {
        let mut sums = vec![0.0; m];
        let mut psi = vec![0.0; d];
        for k in 0..episodes {
            let (mut state, obs) = env.reset(episode_seed(seed, k))?;
            let mut obs = env.encode(&obs);
            let mut disc = 1.0;
            for t in 0.. {
                traj.push(TrajectoryPoint {
                    run_id: run_id.to_string(),
                    skill: z,
                    episode: k,
                    t,
                    x: state.position[0],
                    y: state.position[1],
                    heading: state.heading,
                });
                for (p, f) in psi.iter_mut().zip(phi(&state, mode)) {
                    *p += disc * f;
                }
                disc *= gamma;
                let out = net.forward(&obs, z)?;
                let tr = env.step(&state, &greedy_action(net, &out))?;
                for (s, r) in sums.iter_mut().zip(rewards.group_rewards(&tr.signals)) {
                    *s += r;
                }
                if tr.done {
                    break;
                }
                obs = env.encode(&tr.observation);
                state = tr.state;
            }
        }
        let n = episodes as f64;
        let mean_returns: Vec<f64> = sums.iter().map(|s| s / n).collect();
        let satisfied = groups
            .iter()
            .map(|g| mean_returns[g.group_id] >= g.threshold())
            .collect();
        skills.push(SkillReport {
            skill: z,
            mean_returns,
            satisfied,
            psi: psi.iter().map(|p| p / n).collect(),
        });
    }
    let fe = FeatureExpectation::from_vectors(skills.iter().map(|s| s.psi.clone()).collect(), 0.0);
    let diversity = if skills.len() >= 2 {
        Some(diversity_metric(&fe)?)
    } else {
        None
    };
    let all_satisfied = skills.iter().all(|s| s.satisfied.iter().all(|&b| b));
    Ok((
        EvalReport {
            config_hash: String::new(),
            episodes,
            groups: GROUP_NAMES.iter().map(|s| s.to_string()).collect(),
            expert_values: expert_values.to_vec(),
            thresholds: groups.iter().map(ConstraintGroup::threshold).collect(),
            skills,
            diversity_metric: diversity,
            all_satisfied,
        },
        traj,
    ))
}

/// Evaluates a checkpoint in `env_cfg` (normally the checkpoint's own environment).
pub fn evaluate(ckpt: &Checkpoint, env_cfg: &EnvConfig, episodes: usize) -> Result<(EvalReport, Vec<TrajectoryPoint>)> {
    let env = Env::new(env_cfg.clone())?;
    evaluate_in(ckpt, &env, episodes)
}

pub fn evaluate_in(ckpt: &Checkpoint, env: &Env, episodes: usize) -> Result<(EvalReport, Vec<TrajectoryPoint>)> {
    let cfg = &ckpt.config;
    let rewards = RewardModel::new(cfg.rewards.clone())?;
    let (mut report, traj) = evaluate_policy(
        &ckpt.net,
        env,
        &rewards,
        cfg.features.mode,
        cfg.trainer.gamma,
        &ckpt.groups,
        &ckpt.expert_values,
        episodes,
        cfg.seed,
        &cfg.run_id,
    )?;
    report.config_hash = ckpt.config_hash.clone();
    Ok((report, traj))
}

/// Trajectories of every skill in front of a single square traversable box
/// placed in `env_cfg`, which must match the checkpoint's environment type.
pub fn square_obstacle_trajectories(
    ckpt: &Checkpoint,
    env_cfg: &EnvConfig,
    episodes: usize,
) -> Result<Vec<TrajectoryPoint>> {
    let own = &ckpt.config.env;
    if env_cfg.kind != own.kind
        || env_cfg.action_dim() != own.action_dim()
        || env_cfg.observation_dim() != own.observation_dim()
    {
        return Err(Error::Config(format!(
            "environment ({:?}, {} observations) does not match the checkpoint ({:?}, {} observations)",
            env_cfg.kind,
            env_cfg.observation_dim(),
            own.kind,
            own.observation_dim()
        )));
    }
    let layout = crate::envs::square_obstacle_scenario(env_cfg);
    let env = Env::with_layout(env_cfg.clone(), layout)?;
    Ok(evaluate_in(ckpt, &env, episodes)?.1)
}

pub fn write_trajectories_csv(points: &[TrajectoryPoint], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for p in points {
        w.serialize(p).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
