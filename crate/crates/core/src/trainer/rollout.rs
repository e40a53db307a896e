//! On-policy experience collection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approx::dist::{categorical, squashed_gaussian};
use crate::approx::{MaskedApproximator, Output, PolicyHead};
use crate::envs::{Action, Env, EnvState};
use crate::error::Result;
use crate::features::{phi, FeatureMode};
use crate::math::dot;
use crate::rewards::RewardModel;

#[derive(Debug, Clone, PartialEq)]
pub enum StepAction {
    Discrete(usize),
    /// Pre-squash Gaussian sample; the environment receives `tanh` of it.
    Continuous(Vec<f64>),
}

/// One transition as seen by the learner.
#[derive(Debug, Clone)]
pub struct Step {
    pub obs: Vec<f64>,
    pub skill: usize,
    pub action: StepAction,
    pub log_prob: f64,
    pub phi: Vec<f64>,
    pub ext_rewards: Vec<f64>,
    pub int_reward: f64,
    pub ext_values: Vec<f64>,
    pub int_value: f64,
    pub sf: Vec<f64>,
    pub done: bool,
}

/// Consecutive steps from one environment, with network predictions for the
/// state after the last step (used only if that step did not end an episode).
#[derive(Debug, Clone)]
pub struct Segment {
    pub steps: Vec<Step>,
    pub bootstrap: Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub skill: usize,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub segments: Vec<Segment>,
    pub episodes: Vec<EpisodeSummary>,
    /// Encoded first observations of episodes started during collection.
    pub initial_obs: Vec<Vec<f64>>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.steps.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A persistent parallel environment with its own random stream.
#[derive(Debug, Clone)]
pub struct EnvSlot {
    rng: ChaCha8Rng,
    state: EnvState,
    obs: Vec<f64>,
    skill: usize,
    returns: Vec<f64>,
    fresh: bool,
}

impl EnvSlot {
    pub fn new(env: &Env, num_skills: usize, num_groups: usize, seed: u64, index: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1000 + index as u64);
        let (state, obs, skill) = Self::start(env, num_skills, &mut rng)?;
        Ok(EnvSlot {
            rng,
            state,
            obs,
            skill,
            returns: vec![0.0; num_groups],
            fresh: true,
        })
    }

    fn start(env: &Env, num_skills: usize, rng: &mut ChaCha8Rng) -> Result<(EnvState, Vec<f64>, usize)> {
        let skill = rng.random_range(0..num_skills);
        let episode_seed: u64 = rng.random();
        let (state, obs) = env.reset(episode_seed)?;
        Ok((state, env.encode(&obs), skill))
    }

    pub fn skill(&self) -> usize {
        self.skill
    }
}

/// Samples an action from the policy output.
pub fn sample_action(net: &MaskedApproximator, out: &Output, rng: &mut impl Rng) -> (StepAction, Action, f64) {
    match net.shape.policy {
        PolicyHead::Categorical { .. } => {
            let a = categorical::sample(&out.policy, rng);
            (
                StepAction::Discrete(a),
                Action::Move(a),
                categorical::log_prob(&out.policy, a),
            )
        }
        PolicyHead::Gaussian { .. } => {
            let u = squashed_gaussian::sample(&out.policy, net.log_std(), rng);
            let lp = squashed_gaussian::log_prob(&out.policy, net.log_std(), &u);
            let cmd = squashed_gaussian::squash(&u);
            (StepAction::Continuous(u), Action::Command(cmd), lp)
        }
    }
}

/// Distribution mode, used for evaluation.
pub fn greedy_action(net: &MaskedApproximator, out: &Output) -> Action {
    match net.shape.policy {
        PolicyHead::Categorical { .. } => Action::Move(categorical::mode(&out.policy)),
        PolicyHead::Gaussian { .. } => Action::Command(squashed_gaussian::squash(&out.policy)),
    }
}

/// Runs every slot for `steps` transitions with a frozen network and frozen
/// intrinsic-reward directions (`int_weights[z]`).
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts(
    net: &MaskedApproximator,
    env: &Env,
    rewards: &RewardModel,
    mode: FeatureMode,
    int_weights: &[Vec<f64>],
    slots: &mut [EnvSlot],
    steps: usize,
) -> Result<Rollout> {
    let num_skills = net.num_skills();
    let mut segments = Vec::with_capacity(slots.len());
    let mut episodes = Vec::new();
    let mut initial_obs = Vec::new();
    for slot in slots.iter_mut() {
        let mut seg = Vec::with_capacity(steps);
        for _ in 0..steps {
            if slot.fresh {
                initial_obs.push(slot.obs.clone());
                slot.fresh = false;
            }
            let z = slot.skill;
            let out = net.forward(&slot.obs, z)?;
            let (step_action, env_action, log_prob) = sample_action(net, &out, &mut slot.rng);
            let phi_s = phi(&slot.state, mode);
            let int_reward = dot(&phi_s, &int_weights[z]);
            let tr = env.step(&slot.state, &env_action)?;
            let ext = rewards.group_rewards(&tr.signals).to_vec();
            for (acc, r) in slot.returns.iter_mut().zip(&ext) {
                *acc += r;
            }
            seg.push(Step {
                obs: std::mem::take(&mut slot.obs),
                skill: z,
                action: step_action,
                log_prob,
                phi: phi_s,
                ext_rewards: ext,
                int_reward,
                ext_values: out.ext_values,
                int_value: out.int_value,
                sf: out.sf,
                done: tr.done,
            });
            if tr.done {
                episodes.push(EpisodeSummary {
                    skill: z,
                    returns: std::mem::replace(&mut slot.returns, vec![0.0; rewards_len(&seg)]),
                });
                let (state, obs, skill) = EnvSlot::start(env, num_skills, &mut slot.rng)?;
                slot.state = state;
                slot.obs = obs;
                slot.skill = skill;
                slot.fresh = true;
            } else {
                slot.state = tr.state;
                slot.obs = env.encode(&tr.observation);
            }
        }
        let bootstrap = net.forward(&slot.obs, slot.skill)?;
        segments.push(Segment { steps: seg, bootstrap });
    }
    Ok(Rollout {
        segments,
        episodes,
        initial_obs,
    })
}

fn rewards_len(seg: &[Step]) -> usize {
    seg.last().map_or(0, |s| s.ext_rewards.len())
}
