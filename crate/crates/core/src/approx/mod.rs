//! Skill-conditioned MLPs with fixed random binary layer masks. One network
//! carries the policy, the extrinsic and intrinsic value heads and the
//! successor-feature head; gradients are computed by hand.

mod adam;
pub mod dist;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use adam::Adam;

use crate::error::{config, usage, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApproxConfig {
    pub hidden: Vec<usize>,
    pub mask_prob: f64,
    /// Give policy, values and successor features their own trunks.
    pub separate_networks: bool,
    pub init_log_std: f64,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig {
            hidden: vec![128, 128],
            mask_prob: 0.5,
            separate_networks: false,
            init_log_std: -0.5,
        }
    }
}

impl ApproxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return config("approx: hidden layers must be non-empty with positive widths");
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return config("approx: mask_prob must lie in (0, 1]");
        }
        if !self.init_log_std.is_finite() {
            return config("approx: init_log_std must be finite");
        }
        Ok(())
    }
}

/// Per-skill binary masks, one vector per hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub prob: f64,
    pub masks: Vec<Vec<Vec<f64>>>,
}

impl MaskSet {
    pub fn all_ones(num_skills: usize, layer_sizes: &[usize]) -> Self {
        MaskSet {
            prob: 1.0,
            masks: vec![layer_sizes.iter().map(|&w| vec![1.0; w]).collect(); num_skills],
        }
    }

    pub fn num_skills(&self) -> usize {
        self.masks.len()
    }

    pub fn active_fraction(&self) -> f64 {
        let (on, total) = self.masks.iter().flatten().fold((0.0, 0usize), |(on, total), layer| {
            (on + layer.iter().sum::<f64>(), total + layer.len())
        });
        on / total as f64
    }
}

/// Each unit is active with probability `p`; all-zero layers are redrawn.
pub fn sample_masks(num_skills: usize, layer_sizes: &[usize], p: f64, seed: u64) -> MaskSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x6d61736b);
    let masks = (0..num_skills)
        .map(|_| {
            layer_sizes
                .iter()
                .map(|&w| loop {
                    let layer: Vec<f64> = (0..w)
                        .map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                        .collect();
                    if layer.iter().any(|&x| x > 0.0) {
                        break layer;
                    }
                })
                .collect()
        })
        .collect();
    MaskSet { prob: p, masks }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyHead {
    Categorical { actions: usize },
    Gaussian { dim: usize },
}

impl PolicyHead {
    pub fn width(&self) -> usize {
        match *self {
            PolicyHead::Categorical { actions } => actions,
            PolicyHead::Gaussian { dim } => dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub policy: PolicyHead,
    pub num_ext: usize,
    pub sf_dim: usize,
    pub separate: bool,
}

impl NetShape {
    /// Width of the concatenated head output `[policy | ext values | int value | sf]`.
    pub fn output_dim(&self) -> usize {
        self.policy.width() + self.num_ext + 1 + self.sf_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Dense {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

impl Dense {
    fn end(&self) -> usize {
        self.b + self.n_out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Trunk {
    layers: Vec<Dense>,
    head: Dense,
    out_start: usize,
}

/// Network outputs for one input (or gradients with the same layout).
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    /// Logits (categorical) or pre-squash means (Gaussian).
    pub policy: Vec<f64>,
    pub ext_values: Vec<f64>,
    pub int_value: f64,
    pub sf: Vec<f64>,
}

impl Output {
    pub fn zeros(shape: &NetShape) -> Self {
        Output {
            policy: vec![0.0; shape.policy.width()],
            ext_values: vec![0.0; shape.num_ext],
            int_value: 0.0,
            sf: vec![0.0; shape.sf_dim],
        }
    }

    fn from_flat(shape: &NetShape, flat: &[f64]) -> Self {
        let p = shape.policy.width();
        let m = shape.num_ext;
        Output {
            policy: flat[..p].to_vec(),
            ext_values: flat[p..p + m].to_vec(),
            int_value: flat[p + m],
            sf: flat[p + m + 1..].to_vec(),
        }
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = self.policy.clone();
        v.extend_from_slice(&self.ext_values);
        v.push(self.int_value);
        v.extend_from_slice(&self.sf);
        v
    }
}

#[derive(Debug, Clone)]
struct SampleCache {
    z: usize,
    input: Vec<f64>,
    /// Per trunk, per hidden layer: pre-activations and masked activations.
    pre: Vec<Vec<Vec<f64>>>,
    act: Vec<Vec<Vec<f64>>>,
}

/// Activations recorded by [`MaskedApproximator::forward_batch`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    samples: Vec<SampleCache>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskedApproximator {
    pub shape: NetShape,
    pub masks: MaskSet,
    params: Vec<f64>,
    trunks: Vec<Trunk>,
    log_std: Option<usize>,
    #[serde(skip)]
    version: u64,
}

/// Equality ignores the in-memory update counter.
impl PartialEq for MaskedApproximator {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.masks == other.masks
            && self.params == other.params
            && self.trunks == other.trunks
            && self.log_std == other.log_std
    }
}

impl MaskedApproximator {
    pub fn new(shape: NetShape, masks: MaskSet, init_log_std: f64, seed: u64) -> Result<Self> {
        if masks
            .masks
            .iter()
            .any(|m| m.len() != shape.hidden.len() || m.iter().zip(&shape.hidden).any(|(l, &w)| l.len() != w))
        {
            return usage("mask shapes do not match the hidden layers");
        }
        let p = shape.policy.width();
        let m = shape.num_ext;
        let segments: Vec<(usize, usize)> = if shape.separate {
            vec![(0, p), (p, m + 1), (p + m + 1, shape.sf_dim)]
        } else {
            vec![(0, shape.output_dim())]
        };
        let mut offset = 0;
        let mut dense = |n_in: usize, n_out: usize| {
            let d = Dense {
                w: offset,
                b: offset + n_in * n_out,
                n_in,
                n_out,
            };
            offset = d.end();
            d
        };
        let trunks: Vec<Trunk> = segments
            .iter()
            .map(|&(out_start, width)| {
                let mut n_in = shape.input_dim;
                let layers = shape
                    .hidden
                    .iter()
                    .map(|&h| {
                        let d = dense(n_in, h);
                        n_in = h;
                        d
                    })
                    .collect();
                Trunk {
                    layers,
                    head: dense(n_in, width),
                    out_start,
                }
            })
            .collect();
        let log_std = match shape.policy {
            PolicyHead::Gaussian { dim } => {
                let at = offset;
                offset += dim;
                Some(at)
            }
            PolicyHead::Categorical { .. } => None,
        };
        let mut params = vec![0.0; offset];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x696e6974);
        for trunk in &trunks {
            for d in trunk.layers.iter().chain(std::iter::once(&trunk.head)) {
                let is_policy_head = std::ptr::eq(d, &trunk.head) && trunk.out_start == 0;
                let gain = if is_policy_head { 0.01 } else { 1.0 };
                let scale = gain / (d.n_in as f64).sqrt();
                for w in &mut params[d.w..d.b] {
                    let n: f64 = rng.sample(StandardNormal);
                    *w = scale * n;
                }
            }
        }
        if let Some(at) = log_std {
            params[at..].iter_mut().for_each(|v| *v = init_log_std);
        }
        Ok(MaskedApproximator {
            shape,
            masks,
            params,
            trunks,
            log_std,
            version: 0,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces all parameters; outstanding forward caches become stale.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return usage("parameter vector has the wrong length");
        }
        self.params = params;
        self.version += 1;
        Ok(())
    }

    /// Applies an optimizer step with `grad`; outstanding forward caches become stale.
    pub fn apply_gradient(&mut self, opt: &mut Adam, grad: &[f64]) {
        opt.apply(&mut self.params, grad);
        self.version += 1;
    }

    pub fn log_std(&self) -> &[f64] {
        match self.log_std {
            Some(at) => &self.params[at..],
            None => &[],
        }
    }

    pub fn num_skills(&self) -> usize {
        self.masks.num_skills()
    }

    fn check_input(&self, obs: &[f64], z: usize) -> Result<()> {
        if obs.len() != self.shape.input_dim {
            return usage(format!(
                "observation has {} entries, network expects {}",
                obs.len(),
                self.shape.input_dim
            ));
        }
        if z >= self.num_skills() {
            return usage(format!("skill {z} out of range"));
        }
        Ok(())
    }

    fn run(&self, obs: &[f64], z: usize, mut cache: Option<&mut SampleCache>) -> Vec<f64> {
        let mut out = vec![0.0; self.shape.output_dim()];
        for (ti, trunk) in self.trunks.iter().enumerate() {
            let mut x = obs.to_vec();
            for (li, d) in trunk.layers.iter().enumerate() {
                let mask = &self.masks.masks[z][li];
                let mut pre = vec![0.0; d.n_out];
                let mut act = vec![0.0; d.n_out];
                for o in 0..d.n_out {
                    let row = &self.params[d.w + o * d.n_in..d.w + (o + 1) * d.n_in];
                    let s: f64 = row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + self.params[d.b + o];
                    pre[o] = s;
                    act[o] = mask[o] * elu(s);
                }
                if let Some(c) = cache.as_deref_mut() {
                    c.pre[ti].push(pre);
                    c.act[ti].push(act.clone());
                }
                x = act;
            }
            let h = &trunk.head;
            for o in 0..h.n_out {
                let row = &self.params[h.w + o * h.n_in..h.w + (o + 1) * h.n_in];
                out[trunk.out_start + o] = row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + self.params[h.b + o];
            }
        }
        out
    }

    pub fn forward(&self, obs: &[f64], z: usize) -> Result<Output> {
        self.check_input(obs, z)?;
        Ok(Output::from_flat(&self.shape, &self.run(obs, z, None)))
    }

    /// Forward pass over a batch of `(observation, skill)` pairs, keeping the
    /// activations needed by [`backward`](Self::backward).
    pub fn forward_batch(&self, obs: &[&[f64]], skills: &[usize]) -> Result<(Vec<Output>, ForwardCache)> {
        if obs.len() != skills.len() {
            return usage("observation and skill batches differ in length");
        }
        let n_trunks = self.trunks.len();
        let mut outs = Vec::with_capacity(obs.len());
        let mut samples = Vec::with_capacity(obs.len());
        for (o, &z) in obs.iter().zip(skills) {
            self.check_input(o, z)?;
            let mut c = SampleCache {
                z,
                input: o.to_vec(),
                pre: vec![Vec::new(); n_trunks],
                act: vec![Vec::new(); n_trunks],
            };
            outs.push(Output::from_flat(&self.shape, &self.run(o, z, Some(&mut c))));
            samples.push(c);
        }
        Ok((
            outs,
            ForwardCache {
                version: self.version,
                samples,
            },
        ))
    }

    /// Parameter gradient of `sum_i <grads[i], output_i>` plus `log_std_grad`
    /// for the log-std parameters.
    pub fn backward(&self, cache: &ForwardCache, grads: &[Output], log_std_grad: &[f64]) -> Result<Vec<f64>> {
        if cache.version != self.version {
            return usage("forward cache is stale: parameters changed after the forward pass");
        }
        if grads.len() != cache.samples.len() {
            return usage("gradient batch does not match the forward cache");
        }
        let mut g = vec![0.0; self.params.len()];
        for (sample, go) in cache.samples.iter().zip(grads) {
            let flat = go.to_flat();
            if flat.len() != self.shape.output_dim() {
                return usage("output gradient has the wrong shape");
            }
            for (ti, trunk) in self.trunks.iter().enumerate() {
                let h = &trunk.head;
                let dout = &flat[trunk.out_start..trunk.out_start + h.n_out];
                let last_in: &[f64] = sample.act[ti].last().map_or(&sample.input, Vec::as_slice);
                let mut dx = vec![0.0; h.n_in];
                for (o, &d) in dout.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g[h.b + o] += d;
                    let w0 = h.w + o * h.n_in;
                    for i in 0..h.n_in {
                        g[w0 + i] += d * last_in[i];
                        dx[i] += d * self.params[w0 + i];
                    }
                }
                for li in (0..trunk.layers.len()).rev() {
                    let d = &trunk.layers[li];
                    let mask = &self.masks.masks[sample.z][li];
                    let input: &[f64] = if li == 0 {
                        &sample.input
                    } else {
                        &sample.act[ti][li - 1]
                    };
                    let pre = &sample.pre[ti][li];
                    let mut dprev = vec![0.0; d.n_in];
                    for o in 0..d.n_out {
                        let dp = dx[o] * mask[o] * elu_grad(pre[o]);
                        if dp == 0.0 {
                            continue;
                        }
                        g[d.b + o] += dp;
                        let w0 = d.w + o * d.n_in;
                        for i in 0..d.n_in {
                            g[w0 + i] += dp * input[i];
                            dprev[i] += dp * self.params[w0 + i];
                        }
                    }
                    dx = dprev;
                }
            }
        }
        if let Some(at) = self.log_std {
            if log_std_grad.len() != self.params.len() - at {
                return usage("log-std gradient has the wrong length");
            }
            for (k, v) in log_std_grad.iter().enumerate() {
                g[at + k] += v;
            }
        }
        Ok(g)
    }
}

/// Rescales `grad` in place so its Euclidean norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(separate: bool, policy: PolicyHead) -> NetShape {
        NetShape {
            input_dim: 8,
            hidden: vec![4, 4],
            policy,
            num_ext: 3,
            sf_dim: 2,
            separate,
        }
    }

    fn random_grads(shape: &NetShape, rng: &mut ChaCha8Rng) -> Output {
        let mut o = Output::zeros(shape);
        o.policy
            .iter_mut()
            .chain(o.ext_values.iter_mut())
            .chain(o.sf.iter_mut())
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
        o.int_value = rng.random_range(-1.0..1.0);
        o
    }

    fn dot_out(a: &Output, b: &Output) -> f64 {
        a.to_flat().iter().zip(b.to_flat()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn masks_are_deterministic_and_nonempty() {
        let a = sample_masks(8, &[64, 64], 0.5, 3);
        assert_eq!(a, sample_masks(8, &[64, 64], 0.5, 3));
        let sparse = sample_masks(50, &[1, 2], 0.05, 9);
        assert!(sparse.masks.iter().flatten().all(|l| l.iter().any(|&x| x > 0.0)));
        assert_eq!(sample_masks(3, &[5], 1.0, 0).active_fraction(), 1.0);
    }

    #[test]
    fn mean_active_fraction_near_half() {
        let mean = (0..100)
            .map(|s| sample_masks(8, &[64], 0.5, s).active_fraction())
            .sum::<f64>()
            / 100.0;
        assert!((0.45..=0.55).contains(&mean), "{mean}");
    }

    #[test]
    fn gradient_check_against_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for probe in 0..100 {
            let separate = probe % 2 == 1;
            let head = if probe % 3 == 0 {
                PolicyHead::Gaussian { dim: 3 }
            } else {
                PolicyHead::Categorical { actions: 5 }
            };
            let sh = shape(separate, head);
            let masks = sample_masks(3, &sh.hidden, 0.7, probe);
            let net = MaskedApproximator::new(sh.clone(), masks, -0.3, probe).unwrap();
            let obs: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let z = rng.random_range(0..3);
            let go = random_grads(&sh, &mut rng);
            let (_, cache) = net.forward_batch(&[&obs], &[z]).unwrap();
            let ls_grad = vec![0.0; net.log_std().len()];
            let g = net.backward(&cache, std::slice::from_ref(&go), &ls_grad).unwrap();
            let k = rng.random_range(0..net.num_params() - net.log_std().len());
            let h = 1e-6;
            let mut p = net.params().to_vec();
            p[k] += h;
            let mut plus = net.clone();
            plus.set_params(p.clone()).unwrap();
            p[k] -= 2.0 * h;
            let mut minus = net.clone();
            minus.set_params(p).unwrap();
            let fd = (dot_out(&plus.forward(&obs, z).unwrap(), &go) - dot_out(&minus.forward(&obs, z).unwrap(), &go))
                / (2.0 * h);
            let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn masked_units_get_no_gradient() {
        let sh = shape(false, PolicyHead::Categorical { actions: 5 });
        let mut masks = MaskSet::all_ones(2, &sh.hidden);
        masks.masks[0][0][1] = 0.0;
        let net = MaskedApproximator::new(sh.clone(), masks, 0.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obs: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = net.forward_batch(&[&obs], &[0]).unwrap();
        let g = net.backward(&cache, &[random_grads(&sh, &mut rng)], &[]).unwrap();
        let d = net.trunks[0].layers[0];
        assert!(g[d.w + d.n_in..d.w + 2 * d.n_in].iter().all(|&x| x == 0.0));
        assert_eq!(g[d.b + 1], 0.0);
        let zero = net.backward(&cache, &[Output::zeros(&sh)], &[]).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identical_masks_give_identical_outputs() {
        let sh = shape(true, PolicyHead::Gaussian { dim: 3 });
        let ones = MaskSet::all_ones(2, &sh.hidden);
        let net = MaskedApproximator::new(sh, ones, 0.0, 5).unwrap();
        let obs = vec![0.3; 8];
        assert_eq!(net.forward(&obs, 0).unwrap(), net.forward(&obs, 1).unwrap());
    }

    #[test]
    fn stale_cache_and_bad_input_are_usage_errors() {
        let sh = shape(false, PolicyHead::Categorical { actions: 5 });
        let mut net = MaskedApproximator::new(sh.clone(), MaskSet::all_ones(1, &sh.hidden), 0.0, 5).unwrap();
        let obs = vec![0.1; 8];
        let (_, cache) = net.forward_batch(&[&obs], &[0]).unwrap();
        let p = net.params().to_vec();
        net.set_params(p).unwrap();
        assert!(matches!(
            net.backward(&cache, &[Output::zeros(&sh)], &[]),
            Err(crate::Error::Usage(_))
        ));
        assert!(matches!(net.forward(&[0.0; 3], 0), Err(crate::Error::Usage(_))));
        assert!(matches!(net.forward(&obs, 1), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn serialization_roundtrip_preserves_outputs() {
        let sh = shape(false, PolicyHead::Gaussian { dim: 3 });
        let net = MaskedApproximator::new(sh, sample_masks(4, &[4, 4], 0.5, 1), -0.5, 8).unwrap();
        let back: MaskedApproximator = serde_json::from_str(&serde_json::to_string(&net).unwrap()).unwrap();
        let obs = vec![0.7, -0.1, 0.2, 0.0, 1.0, 0.5, -0.3, 0.9];
        for z in 0..4 {
            assert_eq!(net.forward(&obs, z).unwrap(), back.forward(&obs, z).unwrap());
        }
    }
}
