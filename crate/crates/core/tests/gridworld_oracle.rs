use dominic_core::envs::{tabularize, Action, EnvConfig, EnvState, LayoutMode, ObstacleClass};
use dominic_core::oracle::{finite_horizon_return, value_iteration};
use dominic_core::rewards::{RewardConfig, RewardModel};
use dominic_core::trainer::oracle_expert_values;
use dominic_core::RunConfig;

fn grid(width: f64, boxes: usize, horizon: usize) -> EnvConfig {
    EnvConfig {
        width,
        height: width,
        num_boxes: boxes,
        horizon,
        task_window: 2,
        obstacle_class: ObstacleClass::Mixed,
        layout: LayoutMode::Fixed,
        layout_seed: 3,
        min_target_distance: 1.0,
        ..EnvConfig::default()
    }
}

/// Best summed return over every action sequence, by depth-first enumeration of the live env.
fn exhaustive(env: &dominic_core::envs::Env, model: &RewardModel, state: &EnvState, weights: &[f64]) -> f64 {
    (0..5)
        .map(|a| {
            let tr = env.step(state, &Action::Move(a)).unwrap();
            let r: f64 = model
                .group_rewards(&tr.signals)
                .iter()
                .zip(weights)
                .map(|(r, w)| r * w)
                .sum();
            if tr.done {
                r
            } else {
                r + exhaustive(env, model, &tr.state, weights)
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn value_iteration_matches_exhaustive_search() {
    let model = RewardModel::new(RewardConfig {
        sigma_action_rate: 2.0,
        ..RewardConfig::default()
    })
    .unwrap();
    for (cfg, weights) in [
        (grid(3.0, 0, 5), [1.0, 1.0, 1.0]),
        (grid(3.0, 1, 5), [1.0, 0.5, 2.0]),
        (grid(4.0, 1, 5), [1.0, 0.0, 0.0]),
    ] {
        let tab = tabularize(&cfg, &model, cfg.layout_seed, 1.0).unwrap();
        let start = tab.mdp.initial_distribution.iter().position(|&p| p == 1.0).unwrap();
        let greedy = value_iteration(&tab.mdp, &weights).unwrap();
        let brute = exhaustive(tab.env(), &model, &tab.env_state(start).unwrap(), &weights);
        assert!(
            (greedy.values[start] - brute).abs() < 1e-9,
            "{} vs {brute}",
            greedy.values[start]
        );
        let per_group = finite_horizon_return(&tab.mdp, &greedy.policy(5), cfg.horizon).unwrap();
        let total: f64 = per_group.iter().zip(&weights).map(|(r, w)| r * w).sum();
        assert!((total - brute).abs() < 1e-9);
    }
}

#[test]
fn oracle_expert_values_are_positive_and_need_a_fixed_layout() {
    let mut cfg = RunConfig::default();
    cfg.env = grid(5.0, 0, 10);
    let v = oracle_expert_values(&cfg).unwrap();
    assert_eq!(v.len(), 3);
    assert!(v.iter().all(|x| x.is_finite() && *x > 0.0));
    // at most 2 task reward per step inside the 2-step window
    assert!(v[0] <= 4.0 + 1e-12);
    cfg.env.layout = LayoutMode::Random;
    assert!(oracle_expert_values(&cfg).is_err());
}
