use crate::error::{usage, Result};

/// Generalized advantage estimation over one contiguous segment.
///
/// `values[t]` is `V(s_t)`; `bootstrap` is `V(s_T)` for the state after the last
/// step and is ignored when that step ends an episode. Returns
/// `(advantages, value targets)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return usage(format!(
            "gae inputs differ in length: {n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        ));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lam * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Advantage as an explicit weighted sum of future TD errors.
    fn brute_force(r: &[f64], v: &[f64], d: &[bool], boot: f64, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let next_v = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
        let delta: Vec<f64> = (0..n)
            .map(|t| r[t] + g * next_v(t) * if d[t] { 0.0 } else { 1.0 } - v[t])
            .collect();
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    total += w * delta[k];
                    if d[k] {
                        break;
                    }
                    w *= g * l;
                }
                total
            })
            .collect()
    }

    #[test]
    fn one_step_and_myopic_limits() {
        let r = [1.0, 0.5, -0.2];
        let v = [0.3, 0.1, 0.4];
        let d = [false, false, false];
        let (a, _) = compute_gae(&r, &v, &d, 0.7, 0.9, 0.0).unwrap();
        assert!((a[0] - (1.0 + 0.9 * 0.1 - 0.3)).abs() < 1e-15);
        assert!((a[2] - (-0.2 + 0.9 * 0.7 - 0.4)).abs() < 1e-15);
        let (a, _) = compute_gae(&r, &v, &d, 0.7, 0.0, 0.95).unwrap();
        for t in 0..3 {
            assert!((a[t] - (r[t] - v[t])).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_unrolled_length_three() {
        // gamma 0.5, lambda 0.5, episode ends at t = 1
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, 1.0, 1.5];
        let d = [false, true, false];
        let (a, t) = compute_gae(&r, &v, &d, 2.0, 0.5, 0.5).unwrap();
        let d2 = 3.0 + 0.5 * 2.0 - 1.5;
        let d1 = 2.0 - 1.0;
        let d0 = 1.0 + 0.5 * 1.0 - 0.5;
        assert_eq!(a, vec![d0 + 0.25 * d1, d1, d2]);
        assert_eq!(t, vec![d0 + 0.25 * d1 + 0.5, d1 + 1.0, d2 + 1.5]);
    }

    #[test]
    fn matches_brute_force_on_random_sequences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.random_range(1..40);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.1).collect();
            let boot = rng.random_range(-1.0..1.0);
            let (g, l) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let (a, _) = compute_gae(&r, &v, &d, boot, g, l).unwrap();
            for (x, y) in a.iter().zip(brute_force(&r, &v, &d, boot, g, l)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn misaligned_inputs_are_usage_errors() {
        assert!(compute_gae(&[1.0], &[1.0, 2.0], &[false], 0.0, 0.9, 0.9).is_err());
    }
}
