//! Bounded Lagrange multipliers for constraint groups: moving-average values,
//! the multiplier update and the aggregate advantage.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::math::sigmoid;
use crate::rewards::NUM_GROUPS;

pub const MU_MAX: f64 = 20.0;

/// Where the per-group expert values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpertSource {
    /// Pretrain a single-skill expert with PPO before the main run.
    Pretrain,
    /// Exact value iteration on the tabular gridworld.
    Oracle,
    /// Values given directly in `expert_values`.
    Values,
    /// Evaluate a saved expert checkpoint.
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LagrangeConfig {
    /// Near-optimality ratio per group (task, regularizer, style).
    pub alpha: Vec<f64>,
    pub lr_mu: f64,
    pub avg_coeff: f64,
    pub mu_init: f64,
    pub expert_source: ExpertSource,
    pub expert_values: Option<Vec<f64>>,
    pub expert_checkpoint: Option<String>,
    /// Episodes used to measure expert values when pretraining.
    pub expert_eval_episodes: usize,
}

impl Default for LagrangeConfig {
    fn default() -> Self {
        LagrangeConfig {
            alpha: vec![0.9, 0.8, 0.7],
            lr_mu: 0.05,
            avg_coeff: 0.8,
            mu_init: 2.0,
            expert_source: ExpertSource::Pretrain,
            expert_values: None,
            expert_checkpoint: None,
            expert_eval_episodes: 256,
        }
    }
}

impl LagrangeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("lagrange: {m}")));
        if self.alpha.len() != NUM_GROUPS {
            return bad(&format!("alpha needs {NUM_GROUPS} entries"));
        }
        if self.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("alpha entries must lie in [0, 1]");
        }
        if !(self.lr_mu > 0.0 && self.lr_mu.is_finite()) {
            return bad("lr_mu must be positive");
        }
        if !(self.avg_coeff > 0.0 && self.avg_coeff < 1.0) {
            return bad("avg_coeff must lie in (0, 1)");
        }
        if !self.mu_init.is_finite() || self.mu_init.abs() > MU_MAX {
            return bad("mu_init must lie in [-20, 20]");
        }
        match self.expert_source {
            ExpertSource::Values => match &self.expert_values {
                Some(v) if v.len() == NUM_GROUPS && v.iter().all(|x| x.is_finite()) => {}
                _ => {
                    return bad(&format!(
                        "expert_source = \"values\" needs {NUM_GROUPS} finite expert_values"
                    ))
                }
            },
            ExpertSource::Checkpoint if self.expert_checkpoint.is_none() => {
                return bad("expert_source = \"checkpoint\" needs expert_checkpoint");
            }
            _ => {}
        }
        if self.expert_eval_episodes == 0 {
            return bad("expert_eval_episodes must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintGroup {
    pub group_id: usize,
    pub alpha: f64,
    pub expert_value: f64,
    /// Unbounded multiplier per skill.
    pub mu: Vec<f64>,
    /// Moving-average episode return per skill; `None` until the first measurement.
    pub vbar: Vec<Option<f64>>,
    pub avg_coeff: f64,
    pub lr_mu: f64,
}

impl ConstraintGroup {
    pub fn new(group_id: usize, alpha: f64, expert_value: f64, num_skills: usize, cfg: &LagrangeConfig) -> Self {
        ConstraintGroup {
            group_id,
            alpha,
            expert_value,
            mu: vec![cfg.mu_init; num_skills],
            vbar: vec![None; num_skills],
            avg_coeff: cfg.avg_coeff,
            lr_mu: cfg.lr_mu,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.alpha * self.expert_value
    }

    pub fn sigma(&self, z: usize) -> f64 {
        bounded_multiplier(self.mu[z])
    }

    /// Whether skill `z`'s moving-average value meets the threshold.
    pub fn satisfied(&self, z: usize) -> Option<bool> {
        self.vbar[z].map(|v| v >= self.threshold())
    }
}

/// One group per entry of `alpha`, all skills starting at `mu_init`.
pub fn init_groups(cfg: &LagrangeConfig, expert_values: &[f64], num_skills: usize) -> Vec<ConstraintGroup> {
    cfg.alpha
        .iter()
        .zip(expert_values)
        .enumerate()
        .map(|(j, (&a, &v))| ConstraintGroup::new(j, a, v, num_skills, cfg))
        .collect()
}

pub fn bounded_multiplier(mu: f64) -> f64 {
    sigmoid(mu)
}

/// `(1 - max_j sig_j) a_i + sum_j sig_j a_e^j`.
pub fn aggregate_advantage(a_i: f64, a_e: &[f64], sig: &[f64]) -> Result<f64> {
    if a_e.len() != sig.len() {
        return usage(format!(
            "{} extrinsic advantages but {} multipliers",
            a_e.len(),
            sig.len()
        ));
    }
    let max_sig = sig.iter().copied().fold(0.0, f64::max);
    Ok((1.0 - max_sig) * a_i + a_e.iter().zip(sig).map(|(a, s)| s * a).sum::<f64>())
}

/// EMA of the measured value of skill `z`; the first measurement initializes it.
pub fn update_moving_average(group: &mut ConstraintGroup, z: usize, v_new: f64) {
    let c = group.avg_coeff;
    group.vbar[z] = Some(match group.vbar[z] {
        Some(old) => c * old + (1.0 - c) * v_new,
        None => v_new,
    });
}

/// Multiplier change for one (group, skill) entry: ascent on the constraint residual.
pub fn multiplier_step(alpha: f64, expert_value: f64, vbar: f64, lr: f64) -> f64 {
    lr * (alpha * expert_value - vbar)
}

pub fn update_multipliers(groups: &mut [ConstraintGroup]) -> Result<()> {
    update_multipliers_with(groups, multiplier_step)
}

/// Multiplier update with a pluggable step rule, so invariant checks can
/// exercise deliberately broken rules.
pub fn update_multipliers_with(groups: &mut [ConstraintGroup], step: impl Fn(f64, f64, f64, f64) -> f64) -> Result<()> {
    for g in groups.iter() {
        if let Some(z) = g.vbar.iter().position(Option::is_none) {
            return usage(format!("group {} has no value estimate for skill {z}", g.group_id));
        }
    }
    for g in groups.iter_mut() {
        for z in 0..g.mu.len() {
            let vbar = g.vbar[z].expect("checked above");
            let d = step(g.alpha, g.expert_value, vbar, g.lr_mu);
            g.mu[z] = (g.mu[z] + d).clamp(-MU_MAX, MU_MAX);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn group(alpha: f64, v_star: f64, mu: f64, lr: f64) -> ConstraintGroup {
        ConstraintGroup {
            group_id: 0,
            alpha,
            expert_value: v_star,
            mu: vec![mu],
            vbar: vec![None],
            avg_coeff: 0.9,
            lr_mu: lr,
        }
    }

    #[test]
    fn bounded_multiplier_values() {
        assert_eq!(bounded_multiplier(0.0), 0.5);
        assert_eq!(bounded_multiplier(1e6), 1.0 - 1e-12);
        assert!(bounded_multiplier(-1e6) > 0.0);
        assert!((bounded_multiplier(3f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn aggregate_advantage_values() {
        assert_eq!(aggregate_advantage(1.0, &[2.0, 4.0], &[0.5, 0.25]).unwrap(), 2.5);
        assert_eq!(aggregate_advantage(-3.0, &[7.0], &[1.0]).unwrap(), 7.0);
        let eps = 1e-9;
        let a = aggregate_advantage(1.5, &[2.0, -1.0, 3.0], &[eps; 3]).unwrap();
        assert!((a - 1.5).abs() < 1e-8);
        assert!(matches!(
            aggregate_advantage(1.0, &[1.0, 2.0], &[0.5]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn single_group_matches_two_term_mix() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let mu: f64 = rng.random_range(-10.0..10.0);
            let a_i: f64 = rng.random_range(-5.0..5.0);
            let a_e: f64 = rng.random_range(-5.0..5.0);
            let s = bounded_multiplier(mu);
            let got = aggregate_advantage(a_i, &[a_e], &[s]).unwrap();
            assert_eq!(got.to_bits(), ((1.0 - s) * a_i + s * a_e).to_bits());
        }
    }

    #[test]
    fn moving_average_values() {
        let mut g = group(1.0, 1.0, 0.0, 0.1);
        update_moving_average(&mut g, 0, 10.0);
        assert_eq!(g.vbar[0], Some(10.0));
        update_moving_average(&mut g, 0, 0.0);
        assert_eq!(g.vbar[0], Some(9.0));
        g.avg_coeff = 1e-300;
        update_moving_average(&mut g, 0, 4.0);
        assert!((g.vbar[0].unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn multiplier_update_values() {
        let mut g = vec![group(1.0, 1.0, 0.0, 0.1)];
        g[0].vbar[0] = Some(0.0);
        update_multipliers(&mut g).unwrap();
        assert!((g[0].mu[0] - 0.1).abs() < 1e-15);
        assert!(g[0].sigma(0) > 0.5);

        let mut g = vec![group(0.5, 4.0, 1.3, 0.1)];
        g[0].vbar[0] = Some(2.0);
        update_multipliers(&mut g).unwrap();
        assert_eq!(g[0].mu[0], 1.3);

        let mut g = vec![group(0.5, 1.0, 0.0, 0.5)];
        g[0].vbar[0] = Some(100.0);
        for _ in 0..100 {
            update_multipliers(&mut g).unwrap();
        }
        assert_eq!(g[0].mu[0], -MU_MAX);
        assert!(g[0].sigma(0) < 1e-8);
    }

    #[test]
    fn missing_vbar_is_usage_error() {
        let mut g = vec![group(1.0, 1.0, 0.0, 0.1)];
        assert!(matches!(update_multipliers(&mut g), Err(Error::Usage(_))));
    }

    #[test]
    fn direction_law_on_random_residuals() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let alpha: f64 = rng.random_range(0.0..1.0);
            let v_star: f64 = rng.random_range(-10.0..10.0);
            let vbar: f64 = rng.random_range(-10.0..10.0);
            let mu0: f64 = rng.random_range(-5.0..5.0);
            let mut g = vec![group(alpha, v_star, mu0, 0.05)];
            g[0].vbar[0] = Some(vbar);
            update_multipliers(&mut g).unwrap();
            let residual = alpha * v_star - vbar;
            let dmu = g[0].mu[0] - mu0;
            if residual != 0.0 {
                assert_eq!(dmu.signum(), residual.signum());
            }
        }
    }

    #[test]
    fn updates_are_decoupled() {
        let cfg = LagrangeConfig::default();
        let mut gs = init_groups(&cfg, &[1.0, 2.0, 3.0], 4);
        let before = gs.clone();
        update_moving_average(&mut gs[1], 2, 5.0);
        for (j, (a, b)) in gs.iter().zip(&before).enumerate() {
            for z in 0..4 {
                if (j, z) != (1, 2) {
                    assert_eq!(a.vbar[z], b.vbar[z]);
                }
            }
        }
    }

    #[test]
    fn scalar_lagrange_mix_agrees_up_to_normalization() {
        // Unbounded form r_e + lambda r_i normalized by (1 + lambda) equals the
        // bounded two-term mix when sigma = 1 / (1 + lambda).
        for lambda in [0.0, 0.3, 1.0, 4.0, 50.0] {
            let (a_e, a_i) = (1.7, -0.4);
            let s = 1.0 / (1.0 + lambda);
            let unbounded = (a_e + lambda * a_i) / (1.0 + lambda);
            let bounded = aggregate_advantage(a_i, &[a_e], &[s]).unwrap();
            assert!((unbounded - bounded).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn mu_stays_bounded(steps in proptest::collection::vec(-1e3..1e3f64, 1..50)) {
            let mut g = vec![group(0.9, 1.0, 2.0, 0.5)];
            for v in steps {
                g[0].vbar[0] = Some(v);
                update_multipliers(&mut g).unwrap();
                prop_assert!(g[0].mu[0].abs() <= MU_MAX);
                let s = g[0].sigma(0);
                prop_assert!(s > 0.0 && s < 1.0);
            }
        }

        #[test]
        fn aggregate_is_between_extremes_for_single_group(a_i in -5.0..5.0f64, a_e in -5.0..5.0f64, mu in -30.0..30.0f64) {
            let a = aggregate_advantage(a_i, &[a_e], &[bounded_multiplier(mu)]).unwrap();
            prop_assert!(a >= a_i.min(a_e) - 1e-12 && a <= a_i.max(a_e) + 1e-12);
        }
    }
}
