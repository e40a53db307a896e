//! Exact tabular computations: policy evaluation, occupancy measures, successor
//! features, value iteration and finite-difference diversity gradients.

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::diversity::{nearest_neighbor, vdw_term, DiversityKind};
use crate::envs::TabularMdp;
use crate::error::{Error, Result};
use crate::features::FeatureExpectation;
use crate::math::dist;

/// Stochastic policy table `pi[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in probs.iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Domain(format!("negative probability in policy row {s}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("policy row {s} sums to {total}")));
            }
        }
        Ok(TabularPolicy { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        TabularPolicy {
            probs: vec![vec![1.0 / num_actions as f64; num_actions]; num_states],
        }
    }

    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; num_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        TabularPolicy { probs }
    }

    fn check(&self, mdp: &TabularMdp) -> Result<()> {
        if self.probs.len() != mdp.num_states || self.probs.iter().any(|r| r.len() != mdp.num_actions) {
            return Err(Error::Usage("policy table does not match the MDP".into()));
        }
        Ok(())
    }
}

/// Sparse rows of the state-to-state kernel `P_pi`.
fn policy_kernel(mdp: &TabularMdp, pi: &TabularPolicy) -> Vec<Vec<(usize, f64)>> {
    (0..mdp.num_states)
        .map(|s| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for (a, &p) in pi.probs[s].iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for &(s2, q) in mdp.successors(s, a) {
                    match row.iter_mut().find(|(k, _)| *k == s2) {
                        Some(e) => e.1 += p * q,
                        None => row.push((s2, p * q)),
                    }
                }
            }
            row
        })
        .collect()
}

/// Expected one-step reward of group `j` under `pi`, per state.
pub fn policy_reward(mdp: &TabularMdp, pi: &TabularPolicy, group: usize) -> Vec<f64> {
    (0..mdp.num_states)
        .map(|s| {
            pi.probs[s]
                .iter()
                .enumerate()
                .map(|(a, p)| p * mdp.reward(group, s, a))
                .sum()
        })
        .collect()
}

/// Solves `x = b + gamma * K x` for each column of `b`, one strongly connected
/// component at a time in reverse topological order.
fn block_solve(kernel: &[Vec<(usize, f64)>], gamma: f64, b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = kernel.len();
    let k = b.first().map_or(0, Vec::len);
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(n, n);
    let nodes: Vec<NodeIndex> = (0..n).map(|_| g.add_node(())).collect();
    for (s, row) in kernel.iter().enumerate() {
        for &(s2, _) in row {
            g.add_edge(nodes[s], nodes[s2], ());
        }
    }
    let mut x = vec![vec![0.0; k]; n];
    let mut pos = vec![usize::MAX; n];
    for scc in tarjan_scc(&g) {
        let members: Vec<usize> = scc.iter().map(|v| v.index()).collect();
        for (i, &s) in members.iter().enumerate() {
            pos[s] = i;
        }
        let m = members.len();
        // right-hand side including already-solved downstream components
        let mut rhs = DMatrix::<f64>::zeros(m, k);
        let mut a = DMatrix::<f64>::identity(m, m);
        for (i, &s) in members.iter().enumerate() {
            for c in 0..k {
                rhs[(i, c)] = b[s][c];
            }
            for &(s2, q) in &kernel[s] {
                if pos[s2] != usize::MAX && members.get(pos[s2]) == Some(&s2) {
                    a[(i, pos[s2])] -= gamma * q;
                } else {
                    for c in 0..k {
                        rhs[(i, c)] += gamma * q * x[s2][c];
                    }
                }
            }
        }
        let sol = if m == 1 {
            let d = a[(0, 0)];
            if d.abs() < 1e-14 {
                return Err(Error::Domain("singular policy-evaluation system".into()));
            }
            rhs / d
        } else {
            a.lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Domain("singular policy-evaluation system".into()))?
        };
        for (i, &s) in members.iter().enumerate() {
            for c in 0..k {
                x[s][c] = sol[(i, c)];
            }
        }
    }
    Ok(x)
}

/// Max-norm residual of `x - gamma * K x - b`.
fn residual(kernel: &[Vec<(usize, f64)>], gamma: f64, x: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (s, row) in kernel.iter().enumerate() {
        for c in 0..b[s].len() {
            let px: f64 = row.iter().map(|&(s2, q)| q * x[s2][c]).sum();
            worst = worst.max((x[s][c] - gamma * px - b[s][c]).abs());
        }
    }
    worst
}

fn checked_solve(kernel: &[Vec<(usize, f64)>], gamma: f64, b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let x = block_solve(kernel, gamma, b)?;
    let scale = x.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    let r = residual(kernel, gamma, &x, b);
    if !(r <= 1e-10 * scale) {
        return Err(Error::Domain(format!(
            "linear solve residual {r:.3e} exceeds tolerance"
        )));
    }
    Ok(x)
}

/// Solves `(I - gamma P_pi) X = B` for per-state right-hand sides and reports the residual.
pub fn solve_policy_system(mdp: &TabularMdp, pi: &TabularPolicy, b: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    pi.check(mdp)?;
    if mdp.discount >= 1.0 {
        return Err(Error::Domain("policy evaluation needs a discount below one".into()));
    }
    let kernel = policy_kernel(mdp, pi);
    let x = checked_solve(&kernel, mdp.discount, b)?;
    let r = residual(&kernel, mdp.discount, &x, b);
    Ok((x, r))
}

/// Unnormalized discounted value of group `j` for every state.
pub fn exact_value(mdp: &TabularMdp, pi: &TabularPolicy, group: usize) -> Result<Vec<f64>> {
    if group >= mdp.num_groups() {
        return Err(Error::Usage(format!("group {group} out of range")));
    }
    let b: Vec<Vec<f64>> = policy_reward(mdp, pi, group).into_iter().map(|r| vec![r]).collect();
    Ok(solve_policy_system(mdp, pi, &b)?.0.into_iter().map(|v| v[0]).collect())
}

/// Value scaled by `1 - gamma`.
pub fn exact_value_normalized(mdp: &TabularMdp, pi: &TabularPolicy, group: usize) -> Result<Vec<f64>> {
    let scale = 1.0 - mdp.discount;
    Ok(exact_value(mdp, pi, group)?.into_iter().map(|v| scale * v).collect())
}

/// Normalized state-action occupancy `d[s][a]`, summing to one.
pub fn exact_occupancy(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<Vec<Vec<f64>>> {
    pi.check(mdp)?;
    if mdp.discount >= 1.0 {
        return Err(Error::Domain("occupancy needs a discount below one".into()));
    }
    let kernel = policy_kernel(mdp, pi);
    let mut transposed: Vec<Vec<(usize, f64)>> = vec![Vec::new(); mdp.num_states];
    for (s, row) in kernel.iter().enumerate() {
        for &(s2, q) in row {
            transposed[s2].push((s, q));
        }
    }
    let b: Vec<Vec<f64>> = mdp.initial_distribution.iter().map(|&r| vec![r]).collect();
    let visits = checked_solve(&transposed, mdp.discount, &b)?;
    let scale = 1.0 - mdp.discount;
    Ok(visits
        .iter()
        .zip(&pi.probs)
        .map(|(mu, row)| row.iter().map(|p| scale * mu[0] * p).collect())
        .collect())
}

/// Successor features `psi(s)` for a per-state feature table.
pub fn exact_sf(mdp: &TabularMdp, pi: &TabularPolicy, phi_table: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if phi_table.len() != mdp.num_states {
        return Err(Error::Usage("feature table does not match the MDP".into()));
    }
    Ok(solve_policy_system(mdp, pi, phi_table)?.0)
}

/// Optimal values and greedy policy for a weighted sum of group rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Greedy {
    pub values: Vec<f64>,
    pub actions: Vec<usize>,
    pub iterations: usize,
}

impl Greedy {
    pub fn policy(&self, num_actions: usize) -> TabularPolicy {
        TabularPolicy::deterministic(&self.actions, num_actions)
    }
}

const VI_TOLERANCE: f64 = 1e-10;
const VI_MAX_ITERS: usize = 1_000_000;

/// Value iteration on `sum_j w_j r^j`; ties resolve to the lowest action index.
pub fn value_iteration(mdp: &TabularMdp, weights: &[f64]) -> Result<Greedy> {
    if weights.len() != mdp.num_groups() {
        return Err(Error::Usage("one weight per reward group is required".into()));
    }
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let reward: Vec<f64> = (0..ns * na)
        .map(|i| weights.iter().zip(&mdp.group_rewards).map(|(w, g)| w * g[i]).sum())
        .collect();
    let q = |v: &[f64], s: usize, a: usize| {
        reward[s * na + a] + mdp.discount * mdp.successors(s, a).iter().map(|&(s2, p)| p * v[s2]).sum::<f64>()
    };
    let mut v = vec![0.0; ns];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let next: Vec<f64> = (0..ns)
            .map(|s| (0..na).map(|a| q(&v, s, a)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let delta = next.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if delta <= VI_TOLERANCE {
            break;
        }
        if iterations >= VI_MAX_ITERS || !delta.is_finite() {
            return Err(Error::Domain("value iteration did not converge".into()));
        }
    }
    let actions = (0..ns)
        .map(|s| {
            let mut best = 0;
            let mut best_q = q(&v, s, 0);
            for a in 1..na {
                let qa = q(&v, s, a);
                if qa > best_q + 1e-12 {
                    best = a;
                    best_q = qa;
                }
            }
            best
        })
        .collect();
    Ok(Greedy {
        values: v,
        actions,
        iterations,
    })
}

/// Expected undiscounted return of every group over `steps` transitions from
/// the initial distribution.
pub fn finite_horizon_return(mdp: &TabularMdp, pi: &TabularPolicy, steps: usize) -> Result<Vec<f64>> {
    pi.check(mdp)?;
    let kernel = policy_kernel(mdp, pi);
    let rewards: Vec<Vec<f64>> = (0..mdp.num_groups()).map(|j| policy_reward(mdp, pi, j)).collect();
    let mut dist_s = mdp.initial_distribution.clone();
    let mut totals = vec![0.0; mdp.num_groups()];
    for _ in 0..steps {
        for (t, r) in totals.iter_mut().zip(&rewards) {
            *t += dist_s.iter().zip(r).map(|(p, x)| p * x).sum::<f64>();
        }
        let mut next = vec![0.0; mdp.num_states];
        for (s, row) in kernel.iter().enumerate() {
            if dist_s[s] == 0.0 {
                continue;
            }
            for &(s2, q) in row {
                next[s2] += dist_s[s] * q;
            }
        }
        dist_s = next;
    }
    Ok(totals)
}

/// Central finite-difference gradient of skill `z`'s own diversity term with
/// respect to its feature expectation, keeping its nearest neighbour fixed.
pub fn fd_diversity_gradient(
    fe: &FeatureExpectation,
    kind: DiversityKind,
    ell0: f64,
    z: usize,
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::Domain("finite-difference step must be positive".into()));
    }
    let (star, _) = nearest_neighbor(z, fe).ok_or_else(|| Error::Domain("need at least two skills".into()))?;
    let term = |l: f64| match kind {
        DiversityKind::Repulsive => 0.5 * l * l,
        DiversityKind::Vdw => vdw_term(l, ell0),
    };
    let mut grad = Vec::with_capacity(fe.dim());
    for i in 0..fe.dim() {
        let mut vals = [0.0; 2];
        for (slot, sign) in [(0, 1.0), (1, -1.0)] {
            let mut probe = fe.clone();
            probe.psi[z][i] += sign * eps;
            match nearest_neighbor(z, &probe) {
                Some((k, _)) if k == star => {}
                _ => {
                    return Err(Error::Domain(format!(
                        "nearest neighbour of skill {z} is not stable under perturbation"
                    )))
                }
            }
            vals[slot] = term(dist(&probe.psi[z], &probe.psi[star]));
        }
        grad.push((vals[0] - vals[1]) / (2.0 * eps));
    }
    Ok(grad)
}
