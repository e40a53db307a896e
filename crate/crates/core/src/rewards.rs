//! Extrinsic reward groups: task, regularizer and style.
//!
//! Every term is a pure function of [`RawSignals`]. Regularizer and style
//! rewards are products of exponential kernels and therefore lie in (0, 1].

use serde::{Deserialize, Serialize};

use crate::envs::RawSignals;
use crate::error::{Error, Result};

/// Number of extrinsic groups, in the fixed order `[task, regularizer, style]`.
pub const NUM_GROUPS: usize = 3;
pub const GROUP_NAMES: [&str; NUM_GROUPS] = ["task", "regularizer", "style"];

/// `rewards` section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub sigma_action_rate: f64,
    pub sigma_torque: f64,
    pub sigma_facing: f64,
    pub sigma_moving: f64,
    pub sigma_rest: f64,
    pub sigma_stall: f64,
    /// Multiplicative regularizer factor applied on obstacle contact.
    pub c_contact: f64,
    pub v_min: f64,
    pub d_far: f64,
    /// Yaw reward is paid only within this distance of the target.
    pub yaw_gate: f64,
    /// Command the style group treats as the default pose.
    pub rest_action: Vec<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        // Actions are normalized, so the action range is 1.
        RewardConfig {
            sigma_action_rate: 0.5,
            sigma_torque: 0.7,
            sigma_facing: std::f64::consts::FRAC_PI_2,
            sigma_moving: 0.5,
            sigma_rest: 0.7,
            sigma_stall: 0.2,
            c_contact: (-1.0f64).exp(),
            v_min: 0.3,
            d_far: 0.5,
            yaw_gate: 0.25,
            rest_action: Vec::new(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.sigma_action_rate,
            self.sigma_torque,
            self.sigma_facing,
            self.sigma_moving,
            self.sigma_rest,
            self.sigma_stall,
        ];
        if sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("rewards: every sigma must be positive".into()));
        }
        if !(self.c_contact > 0.0 && self.c_contact <= 1.0) {
            return Err(Error::Config("rewards: c_contact must lie in (0, 1]".into()));
        }
        if self.v_min < 0.0 || self.d_far < 0.0 || self.yaw_gate < 0.0 {
            return Err(Error::Config(
                "rewards: v_min, d_far and yaw_gate must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// `exp(-(x / sigma)^2)`.
pub fn exp_kernel(x: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("kernel scale must be positive, got {sigma}")));
    }
    Ok(kernel(x, sigma))
}

#[inline]
fn kernel(x: f64, sigma: f64) -> f64 {
    let r = x / sigma;
    (-(r * r)).exp()
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let d = a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Reward groups evaluated under one configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardModel {
    pub cfg: RewardConfig,
}

impl RewardModel {
    pub fn new(cfg: RewardConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(RewardModel { cfg })
    }

    /// Position term `(1 + |x|)^-1` plus the gated yaw term, paid only in the task window.
    pub fn task_reward(&self, s: &RawSignals) -> f64 {
        if !s.in_task_window {
            return 0.0;
        }
        let dist = s.target_in_body[0].hypot(s.target_in_body[1]);
        let r_pos = 1.0 / (1.0 + dist);
        let r_yaw = if s.distance_to_target <= self.cfg.yaw_gate {
            1.0 / (1.0 + s.heading_error.abs())
        } else {
            0.0
        };
        r_pos + r_yaw
    }

    pub fn regularizer_reward(&self, s: &RawSignals) -> f64 {
        let c = &self.cfg;
        let rate = kernel(l2_diff(&s.action, &s.previous_action), c.sigma_action_rate);
        let contact = if s.contact_flag { c.c_contact } else { 1.0 };
        let torque = kernel(l2_diff(&s.action, &[]), c.sigma_torque);
        let stall = if s.distance_to_target > c.d_far {
            kernel((c.v_min - s.speed).max(0.0), c.sigma_stall)
        } else {
            1.0
        };
        let traverse = if s.on_traversable {
            (-s.traversal_cost).exp()
        } else {
            1.0
        };
        rate * contact * torque * stall * traverse
    }

    pub fn style_reward(&self, s: &RawSignals) -> f64 {
        let c = &self.cfg;
        let facing = kernel(s.bearing_error, c.sigma_facing);
        let moving = kernel(s.velocity_toward_target.min(0.0), c.sigma_moving);
        let rest = kernel(l2_diff(&s.action, &c.rest_action), c.sigma_rest);
        facing * moving * rest
    }

    /// `[task, regularizer, style]`.
    pub fn group_rewards(&self, s: &RawSignals) -> [f64; NUM_GROUPS] {
        [self.task_reward(s), self.regularizer_reward(s), self.style_reward(s)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn optimal(in_window: bool) -> RawSignals {
        RawSignals {
            target_in_body: [0.0, 0.0],
            heading_error: 0.0,
            speed: 0.0,
            action: vec![0.0, 0.0, 0.0],
            previous_action: vec![0.0, 0.0, 0.0],
            contact_flag: false,
            action_clipped: false,
            in_task_window: in_window,
            distance_to_target: 0.0,
            bearing_error: 0.0,
            velocity_toward_target: 0.0,
            on_traversable: false,
            traversal_cost: 0.0,
        }
    }

    fn model() -> RewardModel {
        RewardModel::new(RewardConfig::default()).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(exp_kernel(0.0, 0.3).unwrap(), 1.0);
        assert!((exp_kernel(0.3, 0.3).unwrap() - 0.36787944117144233).abs() < 1e-15);
        assert!((exp_kernel(0.6, 0.3).unwrap() - 0.018315638888734179).abs() < 1e-15);
        assert!(exp_kernel(1.0, 0.0).is_err());
        assert!(exp_kernel(1.0, -1.0).is_err());
    }

    #[test]
    fn task_reward_cases() {
        let m = model();
        assert_eq!(m.task_reward(&optimal(true)), 2.0);
        let mut s = optimal(true);
        s.target_in_body = [1.0, 0.0];
        s.distance_to_target = 1.0;
        assert_eq!(m.task_reward(&s), 0.5);
        s.in_task_window = false;
        assert_eq!(m.task_reward(&s), 0.0);
    }

    #[test]
    fn regularizer_cases() {
        let m = model();
        assert_eq!(m.regularizer_reward(&optimal(false)), 1.0);
        let mut s = optimal(false);
        s.contact_flag = true;
        assert_eq!(m.regularizer_reward(&s), (-1.0f64).exp());
        let mut s = optimal(false);
        s.distance_to_target = 2.0;
        s.target_in_body = [2.0, 0.0];
        let expected = (-(0.3f64 / 0.2).powi(2)).exp();
        assert!((m.regularizer_reward(&s) - expected).abs() < 1e-15);
    }

    #[test]
    fn style_cases() {
        let m = model();
        assert_eq!(m.style_reward(&optimal(false)), 1.0);
        let mut s = optimal(false);
        s.velocity_toward_target = -0.8;
        s.speed = 0.8;
        assert!((m.style_reward(&s) - (-(0.8f64 / 0.5).powi(2)).exp()).abs() < 1e-15);
        let mut s = optimal(false);
        s.bearing_error = PI;
        assert!((m.style_reward(&s) - (-(PI / (PI / 2.0)).powi(2)).exp()).abs() < 1e-15);
    }

    #[test]
    fn group_vectors_at_optimum() {
        let m = model();
        assert_eq!(m.group_rewards(&optimal(true)), [2.0, 1.0, 1.0]);
        assert_eq!(m.group_rewards(&optimal(false)), [0.0, 1.0, 1.0]);
    }

    fn arb_signals() -> impl Strategy<Value = RawSignals> {
        (
            (-5.0..5.0f64, -5.0..5.0f64),
            -PI..PI,
            0.0..3.0f64,
            proptest::collection::vec(-1.0..1.0f64, 3),
            proptest::collection::vec(-1.0..1.0f64, 3),
            any::<(bool, bool, bool)>(),
            -PI..PI,
            -3.0..3.0f64,
            0.0..2.0f64,
        )
            .prop_map(|(tb, he, speed, a, pa, (c, w, t), be, vt, cost)| RawSignals {
                target_in_body: [tb.0, tb.1],
                heading_error: he,
                speed,
                action: a,
                previous_action: pa,
                contact_flag: c,
                action_clipped: false,
                in_task_window: w,
                distance_to_target: tb.0.hypot(tb.1),
                bearing_error: be,
                velocity_toward_target: vt,
                on_traversable: t,
                traversal_cost: cost,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn groups_are_bounded_and_pure(s in arb_signals()) {
            let m = model();
            let g = m.group_rewards(&s);
            prop_assert_eq!(g, m.group_rewards(&s));
            prop_assert_eq!(g, [m.task_reward(&s), m.regularizer_reward(&s), m.style_reward(&s)]);
            prop_assert!((0.0..=2.0).contains(&g[0]));
            if !s.in_task_window { prop_assert_eq!(g[0], 0.0); }
            prop_assert!(g[1] > 0.0 && g[1] <= 1.0);
            prop_assert!(g[2] > 0.0 && g[2] <= 1.0);
        }

        #[test]
        fn yaw_term_respects_gate(s in arb_signals()) {
            let m = model();
            let dist = s.target_in_body[0].hypot(s.target_in_body[1]);
            let r_yaw = m.task_reward(&s) - if s.in_task_window { 1.0 / (1.0 + dist) } else { 0.0 };
            if r_yaw > 1e-12 { prop_assert!(s.distance_to_target <= m.cfg.yaw_gate); }
        }

        #[test]
        fn kernel_strictly_decreasing(a in 0.0..3.0f64, b in 0.0..3.0f64, sigma in 0.5..2.0f64) {
            prop_assume!((a - b).abs() > 1e-6);
            let (ka, kb) = (exp_kernel(a, sigma).unwrap(), exp_kernel(-b, sigma).unwrap());
            prop_assert_eq!(a < b, ka > kb);
        }
    }
}
