//! Clipped-surrogate policy update with value, successor-feature and entropy terms.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gae::compute_gae;
use super::rollout::{Rollout, StepAction};
use super::TrainerConfig;
use crate::approx::dist::{categorical, squashed_gaussian};
use crate::approx::{clip_grad_norm, Adam, MaskedApproximator, Output, PolicyHead};
use crate::error::{Error, Result};
use crate::lagrange::aggregate_advantage;

/// One learner sample with its per-stream advantages and regression targets.
#[derive(Debug, Clone)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub skill: usize,
    pub action: StepAction,
    pub old_log_prob: f64,
    pub adv_ext: Vec<f64>,
    pub adv_int: f64,
    pub ret_ext: Vec<f64>,
    pub ret_int: f64,
    pub sf_target: Vec<f64>,
}

/// Advantages, value targets and successor-feature targets for every step.
pub fn build_samples(rollout: &Rollout, gamma: f64, lam: f64, sf_lambda: f64) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(rollout.len());
    for seg in &rollout.segments {
        let steps = &seg.steps;
        if steps.is_empty() {
            continue;
        }
        let dones: Vec<bool> = steps.iter().map(|s| s.done).collect();
        let m = steps[0].ext_rewards.len();
        let d = steps[0].phi.len();
        let mut adv_ext = vec![Vec::new(); m];
        let mut ret_ext = vec![Vec::new(); m];
        for j in 0..m {
            let r: Vec<f64> = steps.iter().map(|s| s.ext_rewards[j]).collect();
            let v: Vec<f64> = steps.iter().map(|s| s.ext_values[j]).collect();
            (adv_ext[j], ret_ext[j]) = compute_gae(&r, &v, &dones, seg.bootstrap.ext_values[j], gamma, lam)?;
        }
        let r: Vec<f64> = steps.iter().map(|s| s.int_reward).collect();
        let v: Vec<f64> = steps.iter().map(|s| s.int_value).collect();
        let (adv_int, ret_int) = compute_gae(&r, &v, &dones, seg.bootstrap.int_value, gamma, lam)?;
        let mut sf_t = vec![Vec::new(); d];
        for c in 0..d {
            let r: Vec<f64> = steps.iter().map(|s| s.phi[c]).collect();
            let v: Vec<f64> = steps.iter().map(|s| s.sf[c]).collect();
            sf_t[c] = compute_gae(&r, &v, &dones, seg.bootstrap.sf[c], gamma, sf_lambda)?.1;
        }
        for (t, s) in steps.iter().enumerate() {
            out.push(Sample {
                obs: s.obs.clone(),
                skill: s.skill,
                action: s.action.clone(),
                old_log_prob: s.log_prob,
                adv_ext: (0..m).map(|j| adv_ext[j][t]).collect(),
                adv_int: adv_int[t],
                ret_ext: (0..m).map(|j| ret_ext[j][t]).collect(),
                ret_int: ret_int[t],
                sf_target: (0..d).map(|c| sf_t[c][t]).collect(),
            });
        }
    }
    Ok(out)
}

/// How per-stream advantages are combined for the policy gradient.
#[derive(Debug, Clone, Copy)]
pub enum AdvantageMix<'a> {
    /// Sum of extrinsic advantages, no intrinsic term.
    ExtrinsicOnly,
    /// Bounded-multiplier combination with `sigma[z][j]`.
    Bounded(&'a [Vec<f64>]),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub sf_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

fn normalize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    xs.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

/// Per-sample combined advantages for one minibatch: each stream is
/// normalized, combined, and the combination normalized again.
pub fn minibatch_advantages(batch: &[&Sample], mix: AdvantageMix) -> Result<Vec<f64>> {
    let m = batch[0].adv_ext.len();
    let mut ext: Vec<Vec<f64>> = (0..m).map(|j| batch.iter().map(|s| s.adv_ext[j]).collect()).collect();
    ext.iter_mut().for_each(|v| normalize(v));
    let mut int: Vec<f64> = batch.iter().map(|s| s.adv_int).collect();
    normalize(&mut int);
    let mut out = batch
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let a_e: Vec<f64> = (0..m).map(|j| ext[j][i]).collect();
            match mix {
                AdvantageMix::ExtrinsicOnly => Ok(a_e.iter().sum()),
                AdvantageMix::Bounded(sig) => aggregate_advantage(int[i], &a_e, &sig[s.skill]),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    normalize(&mut out);
    Ok(out)
}

/// Loss gradients for one minibatch; returns the head gradients, log-std
/// gradient and loss statistics (already averaged over the batch).
fn minibatch_gradients(
    net: &MaskedApproximator,
    batch: &[&Sample],
    outs: &[Output],
    adv: &[f64],
    cfg: &TrainerConfig,
) -> (Vec<Output>, Vec<f64>, LossStats) {
    let n = batch.len() as f64;
    let log_std = net.log_std();
    let mut ls_grad = vec![0.0; log_std.len()];
    let mut stats = LossStats::default();
    let mut grads = Vec::with_capacity(batch.len());
    for ((s, out), &a) in batch.iter().zip(outs).zip(adv) {
        let mut g = Output::zeros(&net.shape);
        let (log_prob, entropy) = match (&s.action, net.shape.policy) {
            (StepAction::Discrete(k), PolicyHead::Categorical { .. }) => (
                categorical::log_prob(&out.policy, *k),
                categorical::entropy(&out.policy),
            ),
            (StepAction::Continuous(u), PolicyHead::Gaussian { .. }) => (
                squashed_gaussian::log_prob(&out.policy, log_std, u),
                squashed_gaussian::entropy(log_std),
            ),
            _ => unreachable!("action kind fixed by the policy head"),
        };
        let ratio = (log_prob - s.old_log_prob).exp();
        let clipped = ratio.clamp(1.0 - cfg.ppo_clip, 1.0 + cfg.ppo_clip);
        stats.policy_loss -= (ratio * a).min(clipped * a) / n;
        let active = ratio * a <= clipped * a;
        if !active {
            stats.clip_fraction += 1.0 / n;
        }
        // d loss / d log_prob
        let dlp = if active { -a * ratio / n } else { 0.0 };
        stats.entropy += entropy / n;
        let went = -cfg.entropy_coeff / n;
        match (&s.action, net.shape.policy) {
            (StepAction::Discrete(k), _) => {
                let glp = categorical::grad_log_prob(&out.policy, *k);
                let gent = categorical::grad_entropy(&out.policy);
                for i in 0..g.policy.len() {
                    g.policy[i] = dlp * glp[i] + went * gent[i];
                }
            }
            (StepAction::Continuous(u), _) => {
                let (gm, gs) = squashed_gaussian::grad_log_prob(&out.policy, log_std, u);
                for i in 0..g.policy.len() {
                    g.policy[i] = dlp * gm[i];
                    ls_grad[i] += dlp * gs[i] + went;
                }
            }
        }
        for j in 0..s.ret_ext.len() {
            let e = out.ext_values[j] - s.ret_ext[j];
            stats.value_loss += 0.5 * e * e / n;
            g.ext_values[j] = cfg.value_coeff * e / n;
        }
        let e = out.int_value - s.ret_int;
        stats.value_loss += 0.5 * e * e / n;
        g.int_value = cfg.value_coeff * e / n;
        for c in 0..s.sf_target.len() {
            let e = out.sf[c] - s.sf_target[c];
            stats.sf_loss += 0.5 * e * e / n;
            g.sf[c] = cfg.sf_coeff * e / n;
        }
        grads.push(g);
    }
    (grads, ls_grad, stats)
}

/// `epochs` passes over shuffled minibatches. Fails with [`Error::Diverged`]
/// on any non-finite loss or gradient, leaving `net` at its last finite state.
pub fn ppo_update(
    net: &mut MaskedApproximator,
    opt: &mut Adam,
    samples: &[Sample],
    mix: AdvantageMix,
    cfg: &TrainerConfig,
    rng: &mut impl Rng,
) -> Result<LossStats> {
    if samples.is_empty() {
        return Ok(LossStats::default());
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mb = samples.len().div_ceil(cfg.minibatches.max(1));
    let mut total = LossStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let adv = minibatch_advantages(&batch, mix)?;
            let obs: Vec<&[f64]> = batch.iter().map(|s| s.obs.as_slice()).collect();
            let skills: Vec<usize> = batch.iter().map(|s| s.skill).collect();
            let (outs, cache) = net.forward_batch(&obs, &skills)?;
            let (grads, ls_grad, stats) = minibatch_gradients(net, &batch, &outs, &adv, cfg);
            let mut g = net.backward(&cache, &grads, &ls_grad)?;
            let norm = clip_grad_norm(&mut g, cfg.max_grad_norm);
            let loss = stats.policy_loss + cfg.value_coeff * stats.value_loss + cfg.sf_coeff * stats.sf_loss;
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss (policy {:.3e}, value {:.3e}, sf {:.3e})",
                    stats.policy_loss, stats.value_loss, stats.sf_loss
                )));
            }
            net.apply_gradient(opt, &g);
            total.policy_loss += stats.policy_loss;
            total.value_loss += stats.value_loss;
            total.sf_loss += stats.sf_loss;
            total.entropy += stats.entropy;
            total.clip_fraction += stats.clip_fraction;
            total.grad_norm += norm;
            count += 1.0;
        }
    }
    total.policy_loss /= count;
    total.value_loss /= count;
    total.sf_loss /= count;
    total.entropy /= count;
    total.clip_fraction /= count;
    total.grad_norm /= count;
    Ok(total)
}

/// Combined loss of one minibatch at the current parameters (no update).
pub fn evaluate_loss(
    net: &MaskedApproximator,
    samples: &[Sample],
    mix: AdvantageMix,
    cfg: &TrainerConfig,
) -> Result<f64> {
    let batch: Vec<&Sample> = samples.iter().collect();
    let adv = minibatch_advantages(&batch, mix)?;
    let obs: Vec<&[f64]> = batch.iter().map(|s| s.obs.as_slice()).collect();
    let skills: Vec<usize> = batch.iter().map(|s| s.skill).collect();
    let (outs, _) = net.forward_batch(&obs, &skills)?;
    let (_, _, s) = minibatch_gradients(net, &batch, &outs, &adv, cfg);
    Ok(s.policy_loss + cfg.value_coeff * s.value_loss + cfg.sf_coeff * s.sf_loss - cfg.entropy_coeff * s.entropy)
}
