//! Named invariant checks backed by the exact oracles, run by `dominic verify`
//! and by the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approx::{sample_masks, Adam, MaskSet, MaskedApproximator, NetShape, Output, PolicyHead};
use crate::config::RunConfig;
use crate::diversity::{
    intrinsic_reward, intrinsic_weights, nearest_neighbor, vdw_factor, vdw_term, DiversityConfig, DiversityKind,
};
use crate::envs::{tabularize, Action, Env, EnvConfig, EnvKind, LayoutMode, RawSignals, TabularMdp};
use crate::error::{Error, Result};
use crate::features::{phi, FeatureExpectation, FeatureMode};
use crate::lagrange::{
    aggregate_advantage, bounded_multiplier, init_groups, multiplier_step, update_multipliers_with, ConstraintGroup,
    LagrangeConfig, MU_MAX,
};
use crate::math::{dist, dot};
use crate::oracle::{exact_occupancy, exact_sf, exact_value, fd_diversity_gradient, value_iteration, TabularPolicy};
use crate::rewards::{RewardConfig, RewardModel};
use crate::trainer::compute_gae;

/// Deliberate bugs that `verify` can be asked to run against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Multiplier step with the residual's sign flipped.
    MultiplierSign,
}

impl std::str::FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiplier-sign" => Ok(Fault::MultiplierSign),
            other => Err(Error::Usage(format!(
                "unknown fault {other:?} (known: multiplier-sign)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(Option<Fault>) -> std::result::Result<String, String>;

const CHECKS: &[(&str, Check)] = &[
    ("env-determinism", env_determinism),
    ("env-episode-length", env_episode_length),
    ("tabular-row-conservation", tabular_rows),
    ("tabular-fidelity", tabular_fidelity),
    ("reward-bounds-and-gate", reward_bounds),
    ("reward-monotonicity", reward_monotonicity),
    ("feature-vel-dir-norm", vel_dir_norm),
    ("feature-ema-contraction", ema_contraction),
    ("sf-fixed-point", sf_fixed_point),
    ("diversity-gradient", diversity_gradient),
    ("diversity-vdw-sign-law", vdw_sign_law),
    ("diversity-vdw-stationarity", vdw_stationarity),
    ("diversity-permutation", permutation_equivariance),
    ("multiplier-direction-law", direction_law),
    ("multiplier-monotone-response", monotone_response),
    ("multiplier-bounds", multiplier_bounds),
    ("multiplier-decoupling", decoupling),
    ("aggregate-limits", aggregate_limits),
    ("approximator-gradient", approximator_gradient),
    ("approximator-mask-isolation", mask_isolation),
    ("approximator-mask-persistence", mask_persistence),
    ("gae-recursion", gae_recursion),
    ("oracle-duality", oracle_duality),
    ("oracle-sf-reduces-to-value", sf_reduces_to_value),
    ("oracle-greedy-optimality", greedy_optimality),
    ("config-hash-stability", config_hash_stability),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs every check, optionally with a fault injected.
pub fn run_all(fault: Option<Fault>) -> Vec<CheckResult> {
    run_matching("", fault)
}

/// Runs the checks whose names start with `prefix`.
pub fn run_matching(prefix: &str, fault: Option<Fault>) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .filter(|(name, _)| name.starts_with(prefix))
        .map(|(name, f)| {
            let r = std::panic::catch_unwind(|| f(fault)).unwrap_or_else(|_| Err("check panicked".into()));
            match r {
                Ok(detail) => CheckResult {
                    name,
                    passed: true,
                    detail,
                },
                Err(detail) => CheckResult {
                    name,
                    passed: false,
                    detail,
                },
            }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s(e: Error) -> String {
    e.to_string()
}

fn step_rule(fault: Option<Fault>) -> fn(f64, f64, f64, f64) -> f64 {
    match fault {
        Some(Fault::MultiplierSign) => |a, v, b, lr| -multiplier_step(a, v, b, lr),
        None => multiplier_step,
    }
}

fn grid(width: f64, boxes: usize, horizon: usize) -> EnvConfig {
    EnvConfig {
        width,
        height: width,
        num_boxes: boxes,
        horizon,
        task_window: 2.min(horizon),
        layout: LayoutMode::Fixed,
        layout_seed: 1,
        min_target_distance: 1.0,
        obstacle_class: crate::envs::ObstacleClass::Mixed,
        ..EnvConfig::default()
    }
}

fn point_mass() -> EnvConfig {
    EnvConfig {
        kind: EnvKind::PointMass,
        width: 6.0,
        height: 6.0,
        num_boxes: 1,
        ..EnvConfig::default()
    }
}

fn env_determinism(_: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for cfg in [point_mass(), grid(7.0, 1, 12)] {
        let env = Env::new(cfg).map_err(e2s)?;
        let actions: Vec<Action> = (0..env.config().horizon)
            .map(|_| match env.config().num_discrete_actions() {
                Some(k) => Action::Move(rng.random_range(0..k)),
                None => Action::Command((0..3).map(|_| rng.random_range(-1.0..1.0)).collect()),
            })
            .collect();
        let run = || -> Result<Vec<_>> {
            let (mut s, _) = env.reset(7)?;
            let mut out = Vec::new();
            for a in &actions {
                let tr = env.step(&s, a)?;
                out.push((tr.state.clone(), tr.signals.clone()));
                s = tr.state;
            }
            Ok(out)
        };
        ensure(run().map_err(e2s)? == run().map_err(e2s)?, || {
            "trajectories differ".into()
        })?;
    }
    Ok("2 environments".into())
}

fn env_episode_length(_: Option<Fault>) -> std::result::Result<String, String> {
    for cfg in [point_mass(), grid(5.0, 0, 9)] {
        let env = Env::new(cfg).map_err(e2s)?;
        let (mut s, _) = env.reset(3).map_err(e2s)?;
        let h = env.config().horizon;
        for t in 0..h {
            let a = match env.config().num_discrete_actions() {
                Some(_) => Action::Move(t % 5),
                None => Action::Command(vec![0.5, 0.0, 0.2]),
            };
            let tr = env.step(&s, &a).map_err(e2s)?;
            ensure(tr.done == (t + 1 == h), || {
                format!("done={} at step {}", tr.done, t + 1)
            })?;
            s = tr.state;
        }
    }
    Ok("episodes end at the horizon".into())
}

fn tabular_rows(_: Option<Fault>) -> std::result::Result<String, String> {
    let tab = tabularize(&grid(6.0, 2, 6), &RewardModel::default(), 0, 0.9).map_err(e2s)?;
    let mut worst: f64 = 0.0;
    for s in 0..tab.num_states() {
        for a in 0..tab.mdp.num_actions {
            let total: f64 = tab.mdp.successors(s, a).iter().map(|x| x.1).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("row sum off by {worst:e}"))?;
    Ok(format!("{} states", tab.num_states()))
}

fn tabular_fidelity(_: Option<Fault>) -> std::result::Result<String, String> {
    let model = RewardModel::new(RewardConfig {
        sigma_action_rate: 2.0,
        ..RewardConfig::default()
    })
    .map_err(e2s)?;
    let tab = tabularize(&grid(6.0, 2, 8), &model, 0, 0.95).map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let s = rng.random_range(0..tab.terminal());
        let a = rng.random_range(0..tab.mdp.num_actions);
        let state = tab.env_state(s).ok_or("state not enumerated")?;
        let tr = tab.env().step(&state, &Action::Move(a)).map_err(e2s)?;
        let succ = tab.mdp.successors(s, a);
        ensure(succ.len() == 1 && Some(succ[0].0) == tab.state_index(&tr.state), || {
            format!("successor mismatch at ({s},{a})")
        })?;
        let g = model.group_rewards(&tr.signals);
        for (j, gj) in g.iter().enumerate() {
            ensure(tab.mdp.reward(j, s, a) == *gj, || {
                format!("reward {j} mismatch at ({s},{a})")
            })?;
        }
    }
    Ok("1000 probes".into())
}

fn random_signals(rng: &mut ChaCha8Rng) -> RawSignals {
    let act: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let prev: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tb = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
    RawSignals {
        target_in_body: tb,
        heading_error: rng.random_range(-3.2..3.2),
        speed: rng.random_range(0.0..2.0),
        action: act,
        previous_action: prev,
        contact_flag: rng.random_bool(0.3),
        action_clipped: false,
        in_task_window: rng.random_bool(0.5),
        distance_to_target: tb[0].hypot(tb[1]),
        bearing_error: rng.random_range(0.0..3.2),
        velocity_toward_target: rng.random_range(-2.0..2.0),
        on_traversable: rng.random_bool(0.3),
        traversal_cost: rng.random_range(0.0..2.0),
    }
}

fn reward_bounds(_: Option<Fault>) -> std::result::Result<String, String> {
    let m = RewardModel::default();
    let gate = m.cfg.yaw_gate;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let s = random_signals(&mut rng);
        let g = m.group_rewards(&s);
        ensure(g == m.group_rewards(&s), || "group rewards not pure".into())?;
        ensure((0.0..=2.0).contains(&g[0]), || format!("task reward {}", g[0]))?;
        ensure(s.in_task_window || g[0] == 0.0, || {
            "task reward outside the window".into()
        })?;
        ensure(g[1] > 0.0 && g[1] <= 1.0 && g[2] > 0.0 && g[2] <= 1.0, || {
            format!("group rewards {g:?}")
        })?;
        if s.in_task_window {
            let r_yaw = g[0] - 1.0 / (1.0 + s.distance_to_target);
            ensure(r_yaw <= 1e-12 || s.distance_to_target <= gate, || {
                "yaw reward paid outside the gate".into()
            })?;
        }
    }
    Ok("10000 probes".into())
}

fn reward_monotonicity(_: Option<Fault>) -> std::result::Result<String, String> {
    let m = RewardModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..2000 {
        let a: f64 = rng.random_range(0.0..3.0);
        let b: f64 = rng.random_range(0.0..3.0);
        if (a - b).abs() < 1e-9 {
            continue;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let sigma = rng.random_range(0.2..2.0);
        let k = |x: f64| crate::rewards::exp_kernel(x, sigma).unwrap();
        ensure(k(lo) > k(hi) && k(-lo) > k(-hi), || {
            format!("kernel not decreasing at {lo}, {hi}")
        })?;
        let mut s = random_signals(&mut rng);
        s.in_task_window = true;
        s.target_in_body = [lo + m.cfg.yaw_gate + 0.01, 0.0];
        s.distance_to_target = s.target_in_body[0];
        let near = m.task_reward(&s);
        s.target_in_body = [hi + m.cfg.yaw_gate + 0.01, 0.0];
        s.distance_to_target = s.target_in_body[0];
        ensure(near > m.task_reward(&s), || "position reward not decreasing".into())?;
    }
    Ok("2000 pairs".into())
}

fn vel_dir_norm(_: Option<Fault>) -> std::result::Result<String, String> {
    let env = Env::new(point_mass()).map_err(e2s)?;
    let (mut s, _) = env.reset(2).map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..env.config().horizon {
        let f = phi(&s, FeatureMode::VelDir);
        let n = f[0].hypot(f[1]);
        ensure(n == 0.0 || (n - 1.0).abs() <= 1e-9, || format!("norm {n}"))?;
        let a = Action::Command((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
        s = env.step(&s, &a).map_err(e2s)?.state;
    }
    Ok("point-mass rollout".into())
}

fn ema_contraction(_: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let beta = rng.random_range(0.0..1.0);
        let start: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut fe = FeatureExpectation::from_vectors(vec![start.clone()], beta);
        let d0 = dist(&start, &c);
        for k in 1..=20 {
            fe.update(0, &c).map_err(e2s)?;
            let dk = dist(&fe.psi[0], &c);
            ensure(dk <= beta.powi(k) * d0 + 1e-12, || {
                format!("EMA distance {dk} after {k} updates")
            })?;
        }
    }
    Ok("200 sequences".into())
}

/// Outcome of the successor-feature oracle comparison on a small gridworld.
#[derive(Debug, Clone, PartialEq)]
pub struct SfComparison {
    pub num_states: usize,
    /// Max-abs gap between iterated TD backups and the exact solve.
    pub td_error: f64,
    /// Max-abs gap between the fitted network head and the exact solve.
    pub head_error: f64,
}

/// Uniform-random policy on a 3x3 gridworld: the exact successor features
/// against tabular TD iteration and against a network head fitted by TD.
pub fn sf_oracle_comparison(seed: u64) -> Result<SfComparison> {
    sf_comparison_with(seed, 0.5, 300, 2000, 1e-3)
}

#[doc(hidden)]
pub fn sf_comparison_with(seed: u64, gamma: f64, epochs: usize, last_epochs: usize, lr: f64) -> Result<SfComparison> {
    let cfg = grid(3.0, 0, 4);
    let tab = tabularize(&cfg, &RewardModel::default(), 0, gamma)?;
    let mode = FeatureMode::VelPose;
    let phis = tab.phi_table(mode);
    let ns = tab.num_states();
    let na = tab.mdp.num_actions;
    let pi = TabularPolicy::uniform(ns, na);
    let exact = exact_sf(&tab.mdp, &pi, &phis)?;
    let d = phis[0].len();

    let backup = |psi: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..ns)
            .map(|s| {
                let mut out = phis[s].clone();
                for a in 0..na {
                    for &(s2, q) in tab.mdp.successors(s, a) {
                        for (o, p) in out.iter_mut().zip(&psi[s2]) {
                            *o += gamma * pi.probs[s][a] * q * p;
                        }
                    }
                }
                out
            })
            .collect()
    };
    let max_gap = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max)
    };

    let mut psi = vec![vec![0.0; d]; ns];
    for _ in 0..10_000 {
        let next = backup(&psi);
        let change = max_gap(&next, &psi);
        psi = next;
        if change < 1e-14 {
            break;
        }
    }
    let td_error = max_gap(&psi, &exact);

    // fitted TD: regress the SF head on backed-up targets, one round per time step
    let obs = tab.observations();
    let shape = NetShape {
        input_dim: obs[0].len(),
        hidden: vec![64, 64],
        policy: PolicyHead::Categorical { actions: na },
        num_ext: 3,
        sf_dim: d,
        separate: false,
    };
    let mut net = MaskedApproximator::new(shape.clone(), MaskSet::all_ones(1, &shape.hidden), 0.0, seed)?;
    let mut opt = Adam::new(net.num_params(), lr);
    let inputs: Vec<&[f64]> = obs.iter().map(|o| o.as_slice()).collect();
    let skills = vec![0; inputs.len()];
    let predict = |net: &MaskedApproximator| -> Result<Vec<Vec<f64>>> {
        let (outs, _) = net.forward_batch(&inputs, &skills)?;
        let mut table: Vec<Vec<f64>> = outs.into_iter().map(|o| o.sf).collect();
        table.resize(ns, vec![0.0; d]);
        Ok(table)
    };
    let rounds = cfg.horizon + 2;
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for round in 0..rounds {
        let targets = backup(&predict(&net)?);
        let last = round + 1 == rounds;
        let epochs = if last { last_epochs } else { epochs };
        for e in 0..epochs {
            opt.lr = if last {
                lr * (1.0 - 0.95 * e as f64 / epochs as f64)
            } else {
                lr
            };
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            for chunk in order.chunks(32) {
                let batch: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i]).collect();
                let (outs, cache) = net.forward_batch(&batch, &skills[..chunk.len()])?;
                let n = chunk.len() as f64;
                let grads: Vec<Output> = outs
                    .iter()
                    .zip(chunk)
                    .map(|(o, &i)| {
                        let mut g = Output::zeros(&shape);
                        g.sf = o.sf.iter().zip(&targets[i]).map(|(p, y)| (p - y) / n).collect();
                        g
                    })
                    .collect();
                let g = net.backward(&cache, &grads, &[])?;
                net.apply_gradient(&mut opt, &g);
            }
        }
    }
    let head_error = max_gap(&predict(&net)?, &exact);
    Ok(SfComparison {
        num_states: ns,
        td_error,
        head_error,
    })
}

fn sf_fixed_point(_: Option<Fault>) -> std::result::Result<String, String> {
    let c = sf_oracle_comparison(0).map_err(e2s)?;
    ensure(c.num_states <= 500, || format!("{} states", c.num_states))?;
    ensure(c.td_error <= 1e-6, || format!("TD table off by {:e}", c.td_error))?;
    ensure(c.head_error <= 1e-2, || format!("SF head off by {:e}", c.head_error))?;
    Ok(format!(
        "{} states, table {:.1e}, head {:.1e}",
        c.num_states, c.td_error, c.head_error
    ))
}

fn random_fe(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FeatureExpectation {
    FeatureExpectation::from_vectors(
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect(),
        0.9,
    )
}

fn diversity_gradient(_: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 200 {
        let fe = random_fe(&mut rng, 4, 3);
        let z = rng.random_range(0..4);
        let ell0 = rng.random_range(0.5..4.0);
        for kind in [DiversityKind::Repulsive, DiversityKind::Vdw] {
            let Ok(fd) = fd_diversity_gradient(&fe, kind, ell0, z, 1e-5) else {
                continue;
            };
            let w = intrinsic_weights(z, &fe, &DiversityConfig { kind, ell0 });
            for (a, b) in w.iter().zip(&fd) {
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-8));
            }
            // the expected reward under an occupancy is the mean feature dotted with the weights
            let phi_s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = intrinsic_reward(&phi_s, z, &fe, &DiversityConfig { kind, ell0 });
            ensure((r - dot(&phi_s, &w)).abs() <= 1e-12, || {
                "reward is not linear in the features".into()
            })?;
            checked += 1;
        }
    }
    ensure(worst <= 1e-6, || format!("relative gap {worst:e}"))?;
    Ok(format!("{checked} probes, worst {worst:.1e}"))
}

fn vdw_sign_law(_: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..2000 {
        let fe = random_fe(&mut rng, 3, 2);
        let z = rng.random_range(0..3);
        let ell0 = rng.random_range(0.2..6.0);
        let (_, ell) = nearest_neighbor(z, &fe).ok_or("no neighbour")?;
        if (ell - ell0).abs() < 1e-6 {
            continue;
        }
        let phi_s: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rep = intrinsic_reward(
            &phi_s,
            z,
            &fe,
            &DiversityConfig {
                kind: DiversityKind::Repulsive,
                ell0,
            },
        );
        let vdw = intrinsic_reward(
            &phi_s,
            z,
            &fe,
            &DiversityConfig {
                kind: DiversityKind::Vdw,
                ell0,
            },
        );
        if rep.abs() < 1e-9 {
            continue;
        }
        ensure(vdw.signum() == rep.signum() * (ell0 - ell).signum(), || {
            format!("sign law broken at l={ell}, l0={ell0}")
        })?;
    }
    Ok("2000 probes".into())
}

fn vdw_stationarity(_: Option<Fault>) -> std::result::Result<String, String> {
    for ell0 in [0.3, 1.0, 2.5, 10.0, 40.0] {
        let f = vdw_factor(ell0, ell0);
        ensure(f.abs() <= 1e-9, || format!("factor {f} at l0={ell0}"))?;
        let h = 1e-6 * ell0;
        let slope = (vdw_term(ell0 + h, ell0) - vdw_term(ell0 - h, ell0)) / (2.0 * h);
        ensure(slope.abs() <= 1e-6 * ell0.max(1.0), || {
            format!("slope {slope} at l0={ell0}")
        })?;
    }
    Ok("5 scales".into())
}

fn permutation_equivariance(_: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..500 {
        let n = rng.random_range(2..6);
        let fe = random_fe(&mut rng, n, 3);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = FeatureExpectation::from_vectors(perm.iter().map(|&p| fe.psi[p].clone()).collect(), fe.beta);
        for (i, &p) in perm.iter().enumerate() {
            let a = nearest_neighbor(i, &permuted).map(|x| x.1);
            let b = nearest_neighbor(p, &fe).map(|x| x.1);
            ensure(a == b, || "nearest-neighbour distances not permuted".into())?;
        }
    }
    Ok("500 relabelings".into())
}

fn lagrange_cfg(alpha: f64) -> LagrangeConfig {
    LagrangeConfig {
        alpha: vec![alpha],
        ..LagrangeConfig::default()
    }
}

fn direction_law(fault: Option<Fault>) -> std::result::Result<String, String> {
    let step = step_rule(fault);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..10_000 {
        let alpha = rng.random_range(0.05..1.0);
        let v_star = rng.random_range(0.1..50.0);
        let mut groups = init_groups(&lagrange_cfg(alpha), &[v_star], 1);
        groups[0].mu[0] = rng.random_range(-10.0..10.0);
        let vbar = rng.random_range(0.0..2.0) * alpha * v_star;
        groups[0].vbar[0] = Some(vbar);
        let before = groups[0].mu[0];
        update_multipliers_with(&mut groups, step).map_err(e2s)?;
        let delta = groups[0].mu[0] - before;
        let residual = alpha * v_star - vbar;
        ensure(delta.signum() == residual.signum() || residual == 0.0, || {
            format!("update {i}: residual {residual:.4} but multiplier moved by {delta:.4}")
        })?;
    }
    Ok("10000 residuals".into())
}

fn pinned_run(fault: Option<Fault>, ratio: f64) -> std::result::Result<Vec<f64>, String> {
    let mut groups = init_groups(&lagrange_cfg(0.8), &[1.0], 1);
    let mut sig = vec![groups[0].sigma(0)];
    for _ in 0..100 {
        groups[0].vbar[0] = Some(ratio * groups[0].threshold());
        update_multipliers_with(&mut groups, step_rule(fault)).map_err(e2s)?;
        sig.push(groups[0].sigma(0));
    }
    Ok(sig)
}

fn monotone_response(fault: Option<Fault>) -> std::result::Result<String, String> {
    let up = pinned_run(fault, 0.5)?;
    ensure(up.windows(2).all(|w| w[1] > w[0]), || {
        "sigma not increasing with the value pinned below threshold".into()
    })?;
    let down = pinned_run(fault, 1.5)?;
    ensure(down.windows(2).all(|w| w[1] < w[0]), || {
        "sigma not decreasing with the value pinned above threshold".into()
    })?;
    Ok("100 updates each way".into())
}

fn multiplier_bounds(fault: Option<Fault>) -> std::result::Result<String, String> {
    let mut groups = init_groups(&lagrange_cfg(0.9), &[100.0], 2);
    for g in groups.iter_mut() {
        g.lr_mu = 5.0;
    }
    for k in 0..200 {
        for z in 0..2 {
            groups[0].vbar[z] = Some(if (k / 50 + z) % 2 == 0 { 0.0 } else { 500.0 });
        }
        update_multipliers_with(&mut groups, step_rule(fault)).map_err(e2s)?;
        for z in 0..2 {
            let mu = groups[0].mu[z];
            let s = groups[0].sigma(z);
            ensure((-MU_MAX..=MU_MAX).contains(&mu) && s > 0.0 && s < 1.0, || {
                format!("mu {mu}, sigma {s}")
            })?;
        }
    }
    Ok("200 saturating updates".into())
}

fn decoupling(fault: Option<Fault>) -> std::result::Result<String, String> {
    let cfg = LagrangeConfig {
        alpha: vec![0.9, 0.8, 0.7],
        ..LagrangeConfig::default()
    };
    let mut groups = init_groups(&cfg, &[10.0, 20.0, 30.0], 3);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for g in groups.iter_mut() {
        for z in 0..3 {
            g.vbar[z] = Some(rng.random_range(0.0..40.0));
        }
    }
    for j in 0..3 {
        for z in 0..3 {
            let mut single: Vec<ConstraintGroup> = groups.clone();
            for (jj, g) in single.iter_mut().enumerate() {
                for zz in 0..3 {
                    if (jj, zz) != (j, z) {
                        g.vbar[zz] = Some(g.threshold());
                    }
                }
            }
            let before = single.clone();
            update_multipliers_with(&mut single, step_rule(fault)).map_err(e2s)?;
            for jj in 0..3 {
                for zz in 0..3 {
                    if (jj, zz) != (j, z) && single[jj].mu[zz] != before[jj].mu[zz] {
                        return Err(format!("updating ({j},{z}) moved ({jj},{zz})"));
                    }
                }
            }
        }
    }
    Ok("9 entries".into())
}

fn aggregate_limits(_: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10_000 {
        let a_i = rng.random_range(-5.0..5.0);
        let a_e: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let tiny = vec![bounded_multiplier(-40.0); 3];
        let got = aggregate_advantage(a_i, &a_e, &tiny).map_err(e2s)?;
        ensure((got - a_i).abs() <= 1e-9, || {
            format!("sigma->0 gives {got}, expected {a_i}")
        })?;
        let mut sig: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        sig[rng.random_range(0..3)] = 1.0;
        let with = aggregate_advantage(a_i, &a_e, &sig).map_err(e2s)?;
        let without = aggregate_advantage(0.0, &a_e, &sig).map_err(e2s)?;
        ensure(with == without, || {
            "intrinsic term survives a saturated multiplier".into()
        })?;
        let s = bounded_multiplier(rng.random_range(-20.0..20.0));
        let one = aggregate_advantage(a_i, &a_e[..1], &[s]).map_err(e2s)?;
        ensure(one == (1.0 - s) * a_i + s * a_e[0], || {
            "single-group reduction is not exact".into()
        })?;
    }
    Ok("10000 inputs".into())
}

fn small_shape(separate: bool, policy: PolicyHead) -> NetShape {
    NetShape {
        input_dim: 8,
        hidden: vec![4, 4],
        policy,
        num_ext: 3,
        sf_dim: 2,
        separate,
    }
}

fn random_output(shape: &NetShape, rng: &mut ChaCha8Rng) -> Output {
    let mut o = Output::zeros(shape);
    o.policy
        .iter_mut()
        .chain(o.ext_values.iter_mut())
        .chain(o.sf.iter_mut())
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    o.int_value = rng.random_range(-1.0..1.0);
    o
}

fn dot_output(a: &Output, b: &Output) -> f64 {
    dot(&a.policy, &b.policy) + dot(&a.ext_values, &b.ext_values) + a.int_value * b.int_value + dot(&a.sf, &b.sf)
}

/// Worst relative gap between backward and central finite differences over
/// `probes` random networks, inputs and parameters.
pub fn approximator_gradient_error(probes: u64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for probe in 0..probes {
        let head = if probe % 3 == 0 {
            PolicyHead::Gaussian { dim: 3 }
        } else {
            PolicyHead::Categorical { actions: 5 }
        };
        let sh = small_shape(probe % 2 == 1, head);
        let net = MaskedApproximator::new(sh.clone(), sample_masks(3, &sh.hidden, 0.7, probe), -0.3, probe)?;
        let obs: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z = rng.random_range(0..3);
        let go = random_output(&sh, &mut rng);
        let (_, cache) = net.forward_batch(&[&obs], &[z])?;
        let g = net.backward(&cache, std::slice::from_ref(&go), &vec![0.0; net.log_std().len()])?;
        let k = rng.random_range(0..net.num_params() - net.log_std().len());
        let h = 1e-6;
        let eval = |delta: f64| -> Result<f64> {
            let mut p = net.params().to_vec();
            p[k] += delta;
            let mut moved = net.clone();
            moved.set_params(p)?;
            Ok(dot_output(&moved.forward(&obs, z)?, &go))
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        worst = worst.max((fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6));
    }
    Ok(worst)
}

fn approximator_gradient(_: Option<Fault>) -> std::result::Result<String, String> {
    let worst = approximator_gradient_error(100, 7).map_err(e2s)?;
    ensure(worst <= 1e-4, || format!("relative error {worst:e}"))?;
    Ok(format!("100 probes, worst {worst:.1e}"))
}

fn mask_isolation(_: Option<Fault>) -> std::result::Result<String, String> {
    let sh = small_shape(false, PolicyHead::Categorical { actions: 5 });
    let mut masks = MaskSet::all_ones(2, &sh.hidden);
    masks.masks[0][1][2] = 0.0;
    let net = MaskedApproximator::new(sh.clone(), masks, 0.0, 1).map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let obs: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let go = random_output(&sh, &mut rng);
    let (_, c0) = net.forward_batch(&[&obs], &[0]).map_err(e2s)?;
    let (_, c1) = net.forward_batch(&[&obs], &[1]).map_err(e2s)?;
    let g0 = net.backward(&c0, std::slice::from_ref(&go), &[]).map_err(e2s)?;
    let g1 = net.backward(&c1, std::slice::from_ref(&go), &[]).map_err(e2s)?;
    // the masked unit's incoming weights and bias are silent only for skill 0
    let silent: Vec<usize> = (0..net.num_params())
        .filter(|&i| g0[i] == 0.0 && g1[i] != 0.0)
        .collect();
    ensure(silent.len() >= sh.hidden[0] + 1, || {
        format!("only {} parameters isolated", silent.len())
    })?;
    Ok(format!("{} parameters isolated", silent.len()))
}

fn mask_persistence(_: Option<Fault>) -> std::result::Result<String, String> {
    let sh = small_shape(true, PolicyHead::Gaussian { dim: 3 });
    let net = MaskedApproximator::new(sh.clone(), sample_masks(4, &sh.hidden, 0.5, 9), -0.5, 9).map_err(e2s)?;
    let text = serde_json::to_string(&net).map_err(|e| e.to_string())?;
    let back: MaskedApproximator = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let obs = vec![0.25; 8];
    for z in 0..4 {
        ensure(
            net.forward(&obs, z).map_err(e2s)? == back.forward(&obs, z).map_err(e2s)?,
            || format!("skill {z} differs"),
        )?;
    }
    Ok("4 skills".into())
}

fn gae_recursion(_: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let n = rng.random_range(1..30);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.15)).collect();
        let boot = rng.random_range(-1.0..1.0);
        let gamma = rng.random_range(0.0..1.0);
        let lam = rng.random_range(0.0..1.0);
        let (adv, targets) = compute_gae(&r, &v, &dones, boot, gamma, lam).map_err(e2s)?;
        for t in 0..n {
            // brute force: sum of discounted TD errors until the first terminal
            let mut expect = 0.0;
            let mut w = 1.0;
            for k in t..n {
                let next = if k + 1 < n { v[k + 1] } else { boot };
                let live = if dones[k] { 0.0 } else { 1.0 };
                expect += w * (r[k] + gamma * next * live - v[k]);
                if dones[k] {
                    break;
                }
                w *= gamma * lam;
            }
            ensure((adv[t] - expect).abs() <= 1e-12, || {
                format!("advantage {t} off by {:e}", adv[t] - expect)
            })?;
            ensure((targets[t] - adv[t] - v[t]).abs() <= 1e-12, || {
                "targets are not advantage plus value".into()
            })?;
        }
    }
    Ok("200 sequences".into())
}

fn random_mdp(rng: &mut ChaCha8Rng, ns: usize, na: usize, gamma: f64) -> Result<TabularMdp> {
    let p: Vec<Vec<Vec<f64>>> = (0..ns)
        .map(|_| {
            (0..na)
                .map(|_| {
                    let row: Vec<f64> = (0..ns)
                        .map(|_| {
                            if rng.random_bool(0.4) {
                                rng.random_range(0.0..1.0)
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let total: f64 = row.iter().sum();
                    if total == 0.0 {
                        let mut r = vec![0.0; ns];
                        r[rng.random_range(0..ns)] = 1.0;
                        r
                    } else {
                        row.iter().map(|x| x / total).collect()
                    }
                })
                .collect()
        })
        .collect();
    let r = vec![(0..ns)
        .map(|_| (0..na).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()];
    let mut rho: Vec<f64> = (0..ns).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = rho.iter().sum();
    rho.iter_mut().for_each(|x| *x /= total);
    TabularMdp::from_dense(&p, &r, rho, gamma)
}

fn random_policy(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> Result<TabularPolicy> {
    TabularPolicy::new(
        (0..ns)
            .map(|_| {
                let row: Vec<f64> = (0..na).map(|_| rng.random_range(0.01..1.0)).collect();
                let t: f64 = row.iter().sum();
                row.iter().map(|x| x / t).collect()
            })
            .collect(),
    )
}

fn oracle_duality(_: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let ns = rng.random_range(2..12);
        let na = rng.random_range(1..4);
        let gamma = rng.random_range(0.0..0.99);
        let mdp = random_mdp(&mut rng, ns, na, gamma).map_err(e2s)?;
        let pi = random_policy(&mut rng, ns, na).map_err(e2s)?;
        let d = exact_occupancy(&mdp, &pi).map_err(e2s)?;
        let lhs: f64 = (0..ns)
            .map(|s| (0..na).map(|a| d[s][a] * mdp.reward(0, s, a)).sum::<f64>())
            .sum();
        let v = exact_value(&mdp, &pi, 0).map_err(e2s)?;
        let rhs = (1.0 - gamma) * dot(&mdp.initial_distribution, &v);
        worst = worst.max((lhs - rhs).abs());
    }
    ensure(worst <= 1e-10, || format!("gap {worst:e}"))?;
    Ok(format!("100 MDPs, worst {worst:.1e}"))
}

fn sf_reduces_to_value(_: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let ns = rng.random_range(2..10);
        let gamma = rng.random_range(0.0..0.95);
        let mdp = random_mdp(&mut rng, ns, 1, gamma).map_err(e2s)?;
        let pi = TabularPolicy::uniform(ns, 1);
        let table: Vec<Vec<f64>> = (0..ns).map(|s| vec![mdp.reward(0, s, 0)]).collect();
        let sf = exact_sf(&mdp, &pi, &table).map_err(e2s)?;
        let v = exact_value(&mdp, &pi, 0).map_err(e2s)?;
        for s in 0..ns {
            ensure((sf[s][0] - v[s]).abs() <= 1e-10, || {
                format!("state {s}: {} vs {}", sf[s][0], v[s])
            })?;
        }
    }
    Ok("50 MDPs".into())
}

fn greedy_optimality(_: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..50 {
        let ns = rng.random_range(2..10);
        let na = rng.random_range(1..4);
        let gamma = rng.random_range(0.0..0.9);
        let mdp = random_mdp(&mut rng, ns, na, gamma).map_err(e2s)?;
        let g = value_iteration(&mdp, &[1.0]).map_err(e2s)?;
        let v = exact_value(&mdp, &g.policy(na), 0).map_err(e2s)?;
        for s in 0..ns {
            ensure((v[s] - g.values[s]).abs() <= 1e-9, || {
                format!("state {s}: {} vs {}", v[s], g.values[s])
            })?;
        }
    }
    Ok("50 MDPs".into())
}

fn config_hash_stability(_: Option<Fault>) -> std::result::Result<String, String> {
    let a = "seed = 3\nrun_id = \"x\"\n[trainer]\nnum_envs = 4\nlr = 0.001\n[env]\nkind = \"gridworld\"\nwidth = 5.0\n";
    let b = "run_id = \"x\"\nseed = 3\n[env]\nwidth = 5.0\nkind = \"gridworld\"\n[trainer]\nlr = 0.001\nnum_envs = 4\n";
    let ca = RunConfig::from_toml_str(a).map_err(e2s)?;
    let cb = RunConfig::from_toml_str(b).map_err(e2s)?;
    ensure(ca.hash() == cb.hash(), || "permuted keys change the hash".into())?;
    let mut moved = ca.clone();
    moved.output_dir = "elsewhere".into();
    ensure(moved.hash() == ca.hash(), || "output directory changes the hash".into())?;
    let mut other = ca.clone();
    other.seed += 1;
    ensure(other.hash() != ca.hash(), || "seed does not change the hash".into())?;
    Ok("permuted, relocated and reseeded".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let failed: Vec<_> = run_all(None).into_iter().filter(|r| !r.passed).collect();
        assert!(failed.is_empty(), "{failed:?}");
    }

    #[test]
    fn sign_fault_trips_the_direction_law() {
        let results = run_matching("multiplier-", Some(Fault::MultiplierSign));
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
        assert!(failed.contains(&"multiplier-direction-law"), "{failed:?}");
        assert!(results.iter().any(|r| r.passed));
        assert!(run_matching("multiplier-", None).iter().all(|r| r.passed));
    }

    #[test]
    fn fault_names_parse() {
        assert_eq!("multiplier-sign".parse::<Fault>().unwrap(), Fault::MultiplierSign);
        assert!(matches!("other".parse::<Fault>(), Err(Error::Usage(_))));
    }
}
