//! Action distributions: categorical over discrete moves and a tanh-squashed
//! diagonal Gaussian over normalized continuous commands.

use rand::Rng;
use rand_distr::StandardNormal;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;
const SQUASH_EPS: f64 = 1e-6;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub mod categorical {
    use super::*;

    pub fn sample(logits: &[f64], rng: &mut impl Rng) -> usize {
        let p = softmax(logits);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, q) in p.iter().enumerate() {
            acc += q;
            if u < acc {
                return a;
            }
        }
        p.len() - 1
    }

    /// Most likely action, lowest index on ties.
    pub fn mode(logits: &[f64]) -> usize {
        let mut best = 0;
        for (a, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = a;
            }
        }
        best
    }

    pub fn log_prob(logits: &[f64], a: usize) -> f64 {
        log_softmax(logits)[a]
    }

    pub fn entropy(logits: &[f64]) -> f64 {
        let lp = log_softmax(logits);
        -lp.iter().map(|l| l.exp() * l).sum::<f64>()
    }

    /// d log p(a) / d logits.
    pub fn grad_log_prob(logits: &[f64], a: usize) -> Vec<f64> {
        let mut g: Vec<f64> = softmax(logits).into_iter().map(|p| -p).collect();
        g[a] += 1.0;
        g
    }

    /// d entropy / d logits.
    pub fn grad_entropy(logits: &[f64]) -> Vec<f64> {
        let lp = log_softmax(logits);
        let h = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
        lp.iter().map(|l| -l.exp() * (l + h)).collect()
    }
}

/// Gaussian over pre-squash values `u`; the applied action is `tanh(u)`.
pub mod squashed_gaussian {
    use super::*;

    pub fn sample(mean: &[f64], log_std: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        mean.iter()
            .zip(log_std)
            .map(|(m, ls)| {
                let n: f64 = rng.sample(StandardNormal);
                m + ls.exp() * n
            })
            .collect()
    }

    pub fn squash(u: &[f64]) -> Vec<f64> {
        u.iter().map(|x| x.tanh()).collect()
    }

    pub fn log_prob(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
        mean.iter()
            .zip(log_std)
            .zip(u)
            .map(|((m, ls), x)| {
                let z = (x - m) / ls.exp();
                -0.5 * z * z - ls - 0.5 * LOG_2PI - (1.0 - x.tanh().powi(2) + SQUASH_EPS).ln()
            })
            .sum()
    }

    /// Entropy of the underlying Gaussian.
    pub fn entropy(log_std: &[f64]) -> f64 {
        log_std.iter().map(|ls| ls + 0.5 * (1.0 + LOG_2PI)).sum()
    }

    /// Gradients of the log-probability with respect to the mean and log-std.
    pub fn grad_log_prob(mean: &[f64], log_std: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut gm = Vec::with_capacity(mean.len());
        let mut gs = Vec::with_capacity(mean.len());
        for ((m, ls), x) in mean.iter().zip(log_std).zip(u) {
            let var = (2.0 * ls).exp();
            gm.push((x - m) / var);
            gs.push((x - m).powi(2) / var - 1.0);
        }
        (gm, gs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn softmax_normalizes_on_random_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let l: Vec<f64> = (0..5).map(|_| rng.random_range(-30.0..30.0)).collect();
            assert!((softmax(&l).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn categorical_gradients_match_finite_differences() {
        let l = [0.3, -1.2, 0.8, 0.0];
        let h = 1e-6;
        let g = categorical::grad_log_prob(&l, 2);
        let ge = categorical::grad_entropy(&l);
        for k in 0..4 {
            let mut p = l;
            let mut m = l;
            p[k] += h;
            m[k] -= h;
            let fd = (categorical::log_prob(&p, 2) - categorical::log_prob(&m, 2)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
            let fd = (categorical::entropy(&p) - categorical::entropy(&m)) / (2.0 * h);
            assert!((fd - ge[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn gaussian_gradients_match_finite_differences() {
        let mean = [0.2, -0.4];
        let ls = [-0.3, 0.1];
        let u = [0.5, -1.0];
        let (gm, gs) = squashed_gaussian::grad_log_prob(&mean, &ls, &u);
        let h = 1e-6;
        for k in 0..2 {
            let (mut mp, mut mm) = (mean, mean);
            mp[k] += h;
            mm[k] -= h;
            let fd =
                (squashed_gaussian::log_prob(&mp, &ls, &u) - squashed_gaussian::log_prob(&mm, &ls, &u)) / (2.0 * h);
            assert!((fd - gm[k]).abs() < 1e-7);
            let (mut sp, mut sm) = (ls, ls);
            sp[k] += h;
            sm[k] -= h;
            let fd =
                (squashed_gaussian::log_prob(&mean, &sp, &u) - squashed_gaussian::log_prob(&mean, &sm, &u)) / (2.0 * h);
            assert!((fd - gs[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn mode_prefers_lowest_index() {
        assert_eq!(categorical::mode(&[1.0, 3.0, 3.0]), 1);
    }
}
