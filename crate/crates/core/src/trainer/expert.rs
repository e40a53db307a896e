//! Per-group expert values: pretrained single-skill experts or exact oracles.

use super::{drive, write_json, Checkpoint, EvalReport, IterationMetrics, RunPaths, Trainer};
use crate::config::RunConfig;
use crate::envs::{tabularize, LayoutMode};
use crate::error::{config, Result};
use crate::lagrange::ExpertSource;
use crate::oracle::{finite_horizon_return, value_iteration};
use crate::rewards::{RewardModel, NUM_GROUPS};

#[derive(Debug, Clone)]
pub struct ExpertOutcome {
    pub checkpoint: Checkpoint,
    pub values: Vec<f64>,
    pub metrics: Vec<IterationMetrics>,
    pub report: EvalReport,
}

/// Trains a single-skill policy on the summed extrinsic advantages and measures
/// its per-group returns greedily over `expert_eval_episodes` episodes.
pub fn pretrain_expert(cfg: &RunConfig, paths: Option<&RunPaths>) -> Result<ExpertOutcome> {
    let mut trainer = Trainer::new_expert(cfg)?;
    let sub = paths.map(|p| RunPaths::new(p.dir.join("expert")));
    let metrics = drive(&mut trainer, sub.as_ref())?;
    let (mut report, _) = trainer.evaluate(cfg.lagrange.expert_eval_episodes)?;
    report.config_hash = trainer.config_hash().to_string();
    let values = report.skills[0].mean_returns.clone();
    let mut checkpoint = trainer.checkpoint();
    checkpoint.expert_values = values.clone();
    report.expert_values = values.clone();
    if let Some(p) = paths {
        checkpoint.save(&p.expert_checkpoint())?;
        write_json(&p.dir.join("expert").join("eval.json"), &report)?;
    }
    Ok(ExpertOutcome {
        checkpoint,
        values,
        metrics,
        report,
    })
}

/// Undiscounted per-group returns of the value-iteration policy for the summed
/// reward on the (fixed-layout) gridworld.
pub fn oracle_expert_values(cfg: &RunConfig) -> Result<Vec<f64>> {
    if cfg.env.layout != LayoutMode::Fixed {
        return config("oracle expert values need env.layout = \"fixed\"");
    }
    let rewards = RewardModel::new(cfg.rewards.clone())?;
    let tab = tabularize(&cfg.env, &rewards, cfg.env.layout_seed, 1.0)?;
    let greedy = value_iteration(&tab.mdp, &[1.0; NUM_GROUPS])?;
    finite_horizon_return(&tab.mdp, &greedy.policy(tab.mdp.num_actions), cfg.env.horizon)
}

pub fn resolve_expert_values(cfg: &RunConfig, paths: Option<&RunPaths>) -> Result<Vec<f64>> {
    match cfg.lagrange.expert_source {
        ExpertSource::Values => Ok(cfg.lagrange.expert_values.clone().unwrap_or_default()),
        ExpertSource::Oracle => oracle_expert_values(cfg),
        ExpertSource::Pretrain => Ok(pretrain_expert(cfg, paths)?.values),
        ExpertSource::Checkpoint => {
            let path = cfg.lagrange.expert_checkpoint.as_deref().unwrap_or_default();
            let ckpt = Checkpoint::load(std::path::Path::new(path))?;
            if !ckpt.expert {
                return config(format!("{path} is not an expert checkpoint"));
            }
            let (report, _) = super::evaluate(&ckpt, &cfg.env, cfg.lagrange.expert_eval_episodes)?;
            Ok(report.skills[0].mean_returns.clone())
        }
    }
}
