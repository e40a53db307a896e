//! The training loop: warm start on extrinsic advantages, then diversity
//! maximization under bounded-multiplier constraints, plus expert pretraining
//! and evaluation.

mod checkpoint;
mod eval;
mod expert;
mod gae;
mod ppo;
mod rollout;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use eval::{
    evaluate, evaluate_in, evaluate_policy, square_obstacle_trajectories, write_trajectories_csv, EvalReport,
    SkillReport, TrajectoryPoint,
};
pub use expert::{oracle_expert_values, pretrain_expert, resolve_expert_values, ExpertOutcome};
pub use gae::compute_gae;
pub use ppo::{build_samples, evaluate_loss, minibatch_advantages, ppo_update, AdvantageMix, LossStats, Sample};
pub use rollout::{
    collect_rollouts, greedy_action, sample_action, EnvSlot, EpisodeSummary, Rollout, Segment, Step, StepAction,
};

use crate::approx::{sample_masks, Adam, MaskSet, MaskedApproximator, NetShape, PolicyHead};
use crate::config::RunConfig;
use crate::diversity::{diversity_metric, intrinsic_weights, objective};
use crate::envs::{Env, EnvKind};
use crate::error::{config, Error, Result};
use crate::features::FeatureExpectation;
use crate::lagrange::{init_groups, update_moving_average, update_multipliers, ConstraintGroup};
use crate::rewards::{RewardModel, NUM_GROUPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub num_skills: usize,
    pub iterations: usize,
    /// Leading iterations trained on extrinsic advantages with multipliers frozen.
    pub warm_start_iters: usize,
    pub steps_per_iter: usize,
    pub num_envs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Lambda of the successor-feature targets (0 gives one-step TD targets).
    pub sf_lambda: f64,
    pub ppo_clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coeff: f64,
    /// Entropy coefficient reached at the last iteration by linear annealing.
    pub entropy_coeff_end: Option<f64>,
    pub value_coeff: f64,
    pub sf_coeff: f64,
    pub lr: f64,
    /// Learning rate reached at the last iteration by linear annealing.
    pub lr_end: Option<f64>,
    pub max_grad_norm: f64,
    /// Ramp the traversal cost from 0 to its configured value during warm start.
    pub curriculum: bool,
    /// Checkpoint period in iterations (0 keeps only the final checkpoint).
    pub checkpoint_every: usize,
    /// Evaluation episodes per skill at the end of training.
    pub eval_episodes: usize,
    /// Iterations used when pretraining the expert.
    pub expert_iterations: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            num_skills: 4,
            iterations: 300,
            warm_start_iters: 100,
            steps_per_iter: 48,
            num_envs: 64,
            gamma: 0.99,
            gae_lambda: 0.95,
            sf_lambda: 0.0,
            ppo_clip: 0.2,
            epochs: 4,
            minibatches: 8,
            entropy_coeff: 0.005,
            entropy_coeff_end: None,
            value_coeff: 0.5,
            sf_coeff: 0.5,
            lr: 3e-4,
            lr_end: None,
            max_grad_norm: 1.0,
            curriculum: true,
            checkpoint_every: 50,
            eval_episodes: 16,
            expert_iterations: 200,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_skills", self.num_skills),
            ("iterations", self.iterations),
            ("steps_per_iter", self.steps_per_iter),
            ("num_envs", self.num_envs),
            ("epochs", self.epochs),
            ("minibatches", self.minibatches),
            ("eval_episodes", self.eval_episodes),
            ("expert_iterations", self.expert_iterations),
        ];
        for (name, v) in positive {
            if v == 0 {
                return config(format!("trainer: {name} must be positive"));
            }
        }
        if self.warm_start_iters > self.iterations {
            return config("trainer: warm_start_iters must not exceed iterations");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return config("trainer: gamma must lie in [0, 1)");
        }
        for (name, v) in [("gae_lambda", self.gae_lambda), ("sf_lambda", self.sf_lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return config(format!("trainer: {name} must lie in [0, 1]"));
            }
        }
        let nonneg = [
            ("ppo_clip", self.ppo_clip),
            ("entropy_coeff", self.entropy_coeff),
            ("value_coeff", self.value_coeff),
            ("sf_coeff", self.sf_coeff),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return config(format!("trainer: {name} must be non-negative"));
            }
        }
        if self.entropy_coeff_end.is_some_and(|e| !(e >= 0.0 && e.is_finite())) {
            return config("trainer: entropy_coeff_end must be non-negative");
        }
        if !(self.lr > 0.0) || self.lr_end.is_some_and(|l| !(l >= 0.0)) || !(self.max_grad_norm > 0.0) {
            return config("trainer: lr must be positive, lr_end non-negative and max_grad_norm positive");
        }
        Ok(())
    }

    fn lr_at(&self, iteration: usize, total: usize) -> f64 {
        anneal(self.lr, self.lr_end, iteration, total)
    }

    fn entropy_at(&self, iteration: usize, total: usize) -> f64 {
        anneal(self.entropy_coeff, self.entropy_coeff_end, iteration, total)
    }
}

fn anneal(start: f64, end: Option<f64>, iteration: usize, total: usize) -> f64 {
    match end {
        Some(end) if total > 1 => start + (end - start) * iteration as f64 / (total - 1) as f64,
        _ => start,
    }
}

/// One metrics record per learning iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub phase: String,
    pub config_hash: String,
    pub traversal_cost: f64,
    pub episodes: usize,
    /// Mean undiscounted training return per group over episodes finished this iteration.
    pub mean_returns: Vec<Option<f64>>,
    pub expert_values: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// `[group][skill]`.
    pub vbar: Vec<Vec<Option<f64>>>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub diversity_metric: Option<f64>,
    pub objective: Option<f64>,
    pub losses: LossStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Skills,
    Expert,
}

/// Complete learner state for one run.
pub struct Trainer {
    pub cfg: RunConfig,
    hash: String,
    mode: Mode,
    env: Env,
    rewards: RewardModel,
    pub net: MaskedApproximator,
    opt: Adam,
    pub groups: Vec<ConstraintGroup>,
    pub fe: FeatureExpectation,
    slots: Vec<EnvSlot>,
    rng: ChaCha8Rng,
    pub iteration: usize,
    expert_values: Vec<f64>,
    total_iters: usize,
}

pub fn net_shape(cfg: &RunConfig) -> NetShape {
    let policy = match cfg.env.kind {
        EnvKind::Gridworld => PolicyHead::Categorical {
            actions: cfg.env.num_discrete_actions().unwrap_or(5),
        },
        EnvKind::PointMass => PolicyHead::Gaussian {
            dim: cfg.env.action_dim(),
        },
    };
    NetShape {
        input_dim: cfg.env.observation_dim(),
        hidden: cfg.approx.hidden.clone(),
        policy,
        num_ext: NUM_GROUPS,
        sf_dim: cfg.feature_dim(),
        separate: cfg.approx.separate_networks,
    }
}

impl Trainer {
    /// Skill-discovery trainer using the given per-group expert values.
    pub fn new(cfg: &RunConfig, expert_values: &[f64]) -> Result<Self> {
        Self::build(cfg, expert_values, Mode::Skills)
    }

    /// Single-skill trainer on extrinsic rewards only.
    pub fn new_expert(cfg: &RunConfig) -> Result<Self> {
        Self::build(cfg, &[0.0; NUM_GROUPS], Mode::Expert)
    }

    fn build(cfg: &RunConfig, expert_values: &[f64], mode: Mode) -> Result<Self> {
        cfg.validate()?;
        if expert_values.len() != NUM_GROUPS || expert_values.iter().any(|v| !v.is_finite()) {
            return config(format!("expected {NUM_GROUPS} finite expert values"));
        }
        let n = if mode == Mode::Expert {
            1
        } else {
            cfg.trainer.num_skills
        };
        let env = Env::new(cfg.env.clone())?;
        let rewards = RewardModel::new(cfg.rewards.clone())?;
        let shape = net_shape(cfg);
        let masks = if mode == Mode::Expert {
            MaskSet::all_ones(1, &shape.hidden)
        } else {
            sample_masks(n, &shape.hidden, cfg.approx.mask_prob, cfg.seed)
        };
        let net = MaskedApproximator::new(shape, masks, cfg.approx.init_log_std, cfg.seed)?;
        let opt = Adam::new(net.num_params(), cfg.trainer.lr);
        let groups = init_groups(&cfg.lagrange, expert_values, n);
        let fe = FeatureExpectation::zeros(n, cfg.feature_dim(), cfg.features.beta_psi);
        let slot_seed = cfg.seed ^ if mode == Mode::Expert { 0x6578_7065_7274 } else { 0 };
        let slots = (0..cfg.trainer.num_envs)
            .map(|i| EnvSlot::new(&env, n, NUM_GROUPS, slot_seed, i))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(slot_seed);
        rng.set_stream(7);
        let total_iters = if mode == Mode::Expert {
            cfg.trainer.expert_iterations
        } else {
            cfg.trainer.iterations
        };
        Ok(Trainer {
            hash: cfg.hash(),
            cfg: cfg.clone(),
            mode,
            env,
            rewards,
            net,
            opt,
            groups,
            fe,
            slots,
            rng,
            iteration: 0,
            expert_values: expert_values.to_vec(),
            total_iters,
        })
    }

    pub fn total_iterations(&self) -> usize {
        self.total_iters
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.total_iters
    }

    pub fn in_warm_start(&self) -> bool {
        self.mode == Mode::Expert || self.iteration < self.cfg.trainer.warm_start_iters
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn rewards(&self) -> &RewardModel {
        &self.rewards
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    fn traversal_cost_at(&self, iteration: usize) -> f64 {
        let final_cost = self.cfg.env.traversal_cost;
        let warm = self.cfg.trainer.warm_start_iters;
        if self.mode == Mode::Skills && self.cfg.trainer.curriculum && warm > 0 {
            final_cost * (iteration as f64 / warm as f64).min(1.0)
        } else {
            final_cost
        }
    }

    /// Runs one collection + learning iteration.
    pub fn step(&mut self) -> Result<IterationMetrics> {
        let tc = &self.cfg.trainer;
        let it = self.iteration;
        let warm = self.in_warm_start();
        self.env.set_traversal_cost(self.traversal_cost_at(it));

        let weights: Vec<Vec<f64>> = (0..self.fe.num_skills())
            .map(|z| intrinsic_weights(z, &self.fe, &self.cfg.diversity))
            .collect();
        let rollout = collect_rollouts(
            &self.net,
            &self.env,
            &self.rewards,
            self.cfg.features.mode,
            &weights,
            &mut self.slots,
            tc.steps_per_iter,
        )?;
        let samples = build_samples(&rollout, tc.gamma, tc.gae_lambda, tc.sf_lambda)?;
        let sigma: Vec<Vec<f64>> = (0..self.fe.num_skills())
            .map(|z| self.groups.iter().map(|g| g.sigma(z)).collect())
            .collect();
        let mix = if warm {
            AdvantageMix::ExtrinsicOnly
        } else {
            AdvantageMix::Bounded(&sigma)
        };
        self.opt.lr = tc.lr_at(it, self.total_iters);
        let mut update_cfg = tc.clone();
        update_cfg.entropy_coeff = tc.entropy_at(it, self.total_iters);
        let losses = ppo_update(&mut self.net, &mut self.opt, &samples, mix, &update_cfg, &mut self.rng)?;

        // feature expectations from initial-state predictions of the updated network
        if !rollout.initial_obs.is_empty() {
            for z in 0..self.fe.num_skills() {
                let mut mean = vec![0.0; self.fe.dim()];
                for obs in &rollout.initial_obs {
                    for (m, v) in mean.iter_mut().zip(self.net.forward(obs, z)?.sf) {
                        *m += v;
                    }
                }
                let k = rollout.initial_obs.len() as f64;
                mean.iter_mut().for_each(|m| *m /= k);
                self.fe.update(z, &mean)?;
            }
        }

        let n = self.fe.num_skills();
        let mut mean_returns = vec![None; NUM_GROUPS];
        if !rollout.episodes.is_empty() {
            for (j, slot) in mean_returns.iter_mut().enumerate() {
                let total: f64 = rollout.episodes.iter().map(|e| e.returns[j]).sum();
                *slot = Some(total / rollout.episodes.len() as f64);
            }
        }
        for z in 0..n {
            let eps: Vec<&EpisodeSummary> = rollout.episodes.iter().filter(|e| e.skill == z).collect();
            if eps.is_empty() {
                continue;
            }
            for g in self.groups.iter_mut() {
                let v = eps.iter().map(|e| e.returns[g.group_id]).sum::<f64>() / eps.len() as f64;
                update_moving_average(g, z, v);
            }
        }
        let ready = self.groups.iter().all(|g| g.vbar.iter().all(Option::is_some));
        if self.mode == Mode::Skills && !warm && ready {
            update_multipliers(&mut self.groups)?;
        }

        let metrics = IterationMetrics {
            iteration: it,
            phase: match (self.mode, warm) {
                (Mode::Expert, _) => "expert",
                (_, true) => "warm-start",
                _ => "diversity",
            }
            .into(),
            config_hash: self.hash.clone(),
            traversal_cost: self.env.traversal_cost(),
            episodes: rollout.episodes.len(),
            mean_returns,
            expert_values: self.expert_values.clone(),
            thresholds: self.groups.iter().map(ConstraintGroup::threshold).collect(),
            vbar: self.groups.iter().map(|g| g.vbar.clone()).collect(),
            mu: self.groups.iter().map(|g| g.mu.clone()).collect(),
            sigma: self
                .groups
                .iter()
                .map(|g| (0..n).map(|z| g.sigma(z)).collect())
                .collect(),
            psi: self.fe.psi.clone(),
            diversity_metric: if n >= 2 {
                Some(diversity_metric(&self.fe)?)
            } else {
                None
            },
            objective: if n >= 2 {
                Some(objective(&self.fe, &self.cfg.diversity)?)
            } else {
                None
            },
            losses,
        };
        self.iteration += 1;
        Ok(metrics)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: self.hash.clone(),
            iteration: self.iteration,
            expert: self.mode == Mode::Expert,
            config: self.cfg.clone(),
            net: self.net.clone(),
            optimizer: self.opt.clone(),
            groups: self.groups.clone(),
            feature_expectation: self.fe.clone(),
            expert_values: self.expert_values.clone(),
        }
    }

    /// Greedy evaluation of the current policy in the final (uncurriculated) environment.
    pub fn evaluate(&self, episodes: usize) -> Result<(EvalReport, Vec<TrajectoryPoint>)> {
        let env = Env::new(self.cfg.env.clone())?;
        evaluate_in(&self.checkpoint(), &env, episodes)
    }
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunPaths { dir: dir.into() }
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }

    pub fn checkpoint(&self, iteration: usize) -> PathBuf {
        self.dir.join("checkpoints").join(format!("iter_{iteration:06}.json"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }

    pub fn expert_checkpoint(&self) -> PathBuf {
        self.dir.join("expert.json")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("eval.json")
    }

    pub fn trajectories(&self) -> PathBuf {
        self.dir.join("trajectories.csv")
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<IterationMetrics>,
    pub report: EvalReport,
    pub trajectories: Vec<TrajectoryPoint>,
}

/// Runs the full loop, then a greedy evaluation. With `paths`, streams metrics
/// to JSONL and writes checkpoints, the evaluation report and trajectories.
pub fn train(cfg: &RunConfig, expert_values: &[f64], paths: Option<&RunPaths>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg, expert_values)?;
    let metrics = drive(&mut trainer, paths)?;
    let (mut report, trajectories) = trainer.evaluate(cfg.trainer.eval_episodes)?;
    report.config_hash = trainer.config_hash().to_string();
    let checkpoint = trainer.checkpoint();
    if let Some(p) = paths {
        checkpoint.save(&p.final_checkpoint())?;
        write_json(&p.report(), &report)?;
        write_trajectories_csv(&trajectories, &p.trajectories())?;
    }
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        report,
        trajectories,
    })
}

fn drive(trainer: &mut Trainer, paths: Option<&RunPaths>) -> Result<Vec<IterationMetrics>> {
    let mut writer = match paths {
        Some(p) => {
            std::fs::create_dir_all(&p.dir)?;
            std::fs::write(p.resolved_config(), trainer.cfg.to_toml_string()?)?;
            Some(std::io::BufWriter::new(std::fs::File::create(p.metrics())?))
        }
        None => None,
    };
    let every = trainer.cfg.trainer.checkpoint_every;
    let mut all = Vec::with_capacity(trainer.total_iterations());
    while !trainer.is_finished() {
        let m = trainer.step()?;
        if let Some(w) = writer.as_mut() {
            serde_json::to_writer(&mut *w, &m)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        all.push(m);
        if let Some(p) = paths {
            if every > 0 && trainer.iteration % every == 0 && !trainer.is_finished() {
                trainer.checkpoint().save(&p.checkpoint(trainer.iteration))?;
            }
        }
    }
    Ok(all)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_anneal_hits_both_ends() {
        let tc = TrainerConfig {
            entropy_coeff: 0.3,
            entropy_coeff_end: Some(0.01),
            lr: 1e-3,
            ..Default::default()
        };
        assert_eq!(tc.entropy_at(0, 11), 0.3);
        assert!((tc.entropy_at(10, 11) - 0.01).abs() < 1e-15);
        assert!((tc.entropy_at(5, 11) - 0.155).abs() < 1e-15);
        assert_eq!(tc.lr_at(7, 11), 1e-3);
        assert_eq!(anneal(2.0, Some(0.0), 0, 1), 2.0);
    }
}
