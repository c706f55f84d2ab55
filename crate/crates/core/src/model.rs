//! Reward heads over response feature vectors, plus the implicit reward and
//! a tabular policy for the preference-optimization extension.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numcore::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

/// Layer sizes of a fully connected reward head with a scalar output.
/// An empty `hidden` list gives a linear model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl ArchDescriptor {
    pub fn linear(input_dim: usize) -> Self {
        Self { input_dim, hidden: Vec::new(), activation: Activation::Tanh }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>) -> Self {
        Self { input_dim, hidden, activation: Activation::Tanh }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return contract(format!("all layer sizes must be positive: {self:?}"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer, output layer last.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// Reward head parameters, laid out layer by layer with each layer's
/// row-major `out x in` weight matrix followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub arch: ArchDescriptor,
    pub params: ParamVector,
}

impl RewardModel {
    pub fn new(arch: ArchDescriptor, params: ParamVector) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::LengthMismatch {
                context: "reward model parameters",
                expected: arch.param_count(),
                got: params.len(),
            });
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("reward model parameters"));
        }
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: ArchDescriptor) -> Result<Self> {
        let n = arch.param_count();
        Self::new(arch, ParamVector::zeros(n))
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(arch: ArchDescriptor, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        for (fan_in, fan_out) in arch.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self::new(arch, ParamVector(params))
    }

    fn check_input(&self, t: &[f64]) -> Result<()> {
        if t.len() != self.arch.input_dim {
            return Err(Error::LengthMismatch {
                context: "response features",
                expected: self.arch.input_dim,
                got: t.len(),
            });
        }
        Ok(())
    }

    pub fn reward(&self, t: &[f64]) -> Result<f64> {
        self.check_input(t)?;
        Ok(self.reward_unchecked(t))
    }

    pub(crate) fn reward_unchecked(&self, t: &[f64]) -> f64 {
        let mut offset = 0;
        let mut input = t.to_vec();
        let layers = self.arch.layers();
        let last = layers.len() - 1;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let (w, b) = self.layer(offset, fan_in, fan_out);
            let mut out: Vec<f64> =
                (0..fan_out).map(|o| dot(&w[o * fan_in..(o + 1) * fan_in], &input) + b[o]).collect();
            if l != last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            input = out;
            offset += (fan_in + 1) * fan_out;
        }
        input[0]
    }

    fn layer(&self, offset: usize, fan_in: usize, fan_out: usize) -> (&[f64], &[f64]) {
        let w_end = offset + fan_in * fan_out;
        (&self.params[offset..w_end], &self.params[w_end..w_end + fan_out])
    }

    /// Gradient of the reward with respect to the parameters.
    pub fn reward_grad(&self, t: &[f64]) -> Result<ParamVector> {
        self.check_input(t)?;
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_grad(t, 1.0, &mut grad);
        Ok(ParamVector(grad))
    }

    /// Adds `scale * d reward(t) / d params` into `grad`; returns the reward.
    pub(crate) fn accumulate_grad(&self, t: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let layers = self.arch.layers();
        let last = layers.len() - 1;
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);
        activations.push(t.to_vec());
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            offsets.push(offset);
            let (w, b) = self.layer(offset, fan_in, fan_out);
            let input = &activations[l];
            let mut out: Vec<f64> = (0..fan_out).map(|o| dot(&w[o * fan_in..(o + 1) * fan_in], input) + b[o]).collect();
            if l != last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(out);
            offset += (fan_in + 1) * fan_out;
        }
        let reward = activations[layers.len()][0];

        let mut delta = vec![scale];
        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[l];
            let base = offsets[l];
            let input = &activations[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                for (g, &x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
                grad[base + fan_in * fan_out + o] += d;
            }
            if l > 0 {
                let w = &self.params[base..base + fan_in * fan_out];
                delta = (0..fan_in)
                    .map(|i| {
                        let back: f64 = (0..fan_out).map(|o| w[o * fan_in + i] * delta[o]).sum();
                        let a = input[i];
                        back * (1.0 - a * a)
                    })
                    .collect();
            }
        }
        reward
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-feature affine standardization fitted on training responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Columns with (near) zero spread keep unit scale.
    pub fn fit<'a, I>(rows: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut count = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for row in &rows {
            if row.len() != dim {
                return Err(Error::LengthMismatch { context: "standardizer rows", expected: dim, got: row.len() });
            }
            count += 1;
            for (s, &v) in sum.iter_mut().zip(row.iter()) {
                *s += v;
            }
        }
        if count == 0 {
            return contract("cannot standardize an empty set");
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        for row in &rows {
            for ((s, &v), &m) in sum_sq.iter_mut().zip(row.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = sum_sq
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, t: &[f64]) -> Vec<f64> {
        t.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect()
    }
}

/// A reward head together with the input standardization it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredModel {
    pub model: RewardModel,
    pub standardizer: Standardizer,
}

impl ScoredModel {
    pub fn reward(&self, raw_features: &[f64]) -> Result<f64> {
        self.model.reward(&self.standardizer.apply(raw_features))
    }
}

/// `beta * (logp_policy - logp_ref)`.
pub fn dpo_implicit_reward(logp_policy: f64, logp_ref: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return contract(format!("beta must be positive, got {beta}"));
    }
    if !logp_policy.is_finite() || !logp_ref.is_finite() {
        return Err(Error::NonFinite("log-probabilities"));
    }
    if logp_policy > 0.0 || logp_ref > 0.0 {
        return contract("log-probabilities must be <= 0");
    }
    Ok(beta * (logp_policy - logp_ref))
}

/// Softmax policy over a fixed candidate list per prompt, parameterized by
/// one logit per (prompt, candidate).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub prompts: usize,
    pub candidates: usize,
    pub logits: ParamVector,
}

impl TabularPolicy {
    pub fn new(prompts: usize, candidates: usize, logits: Vec<f64>) -> Result<Self> {
        if candidates < 2 || prompts == 0 {
            return contract("tabular policy needs at least one prompt and two candidates");
        }
        if logits.len() != prompts * candidates {
            return Err(Error::LengthMismatch {
                context: "policy logits",
                expected: prompts * candidates,
                got: logits.len(),
            });
        }
        Ok(Self { prompts, candidates, logits: ParamVector(logits) })
    }

    /// Row-major `log pi(candidate | prompt)`.
    pub fn log_probs(&self) -> Vec<f64> {
        let k = self.candidates;
        self.logits
            .chunks(k)
            .flat_map(|row| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                row.iter().map(move |v| v - lse)
            })
            .collect()
    }

    /// Maps a gradient with respect to the log-probabilities back onto the
    /// logits: `dL/dtheta_j = g_j - pi_j * sum_k g_k` per prompt.
    pub fn pullback(&self, grad_log_probs: &[f64]) -> Result<Vec<f64>> {
        if grad_log_probs.len() != self.logits.len() {
            return Err(Error::LengthMismatch {
                context: "log-prob gradient",
                expected: self.logits.len(),
                got: grad_log_probs.len(),
            });
        }
        let logp = self.log_probs();
        let k = self.candidates;
        let mut out = Vec::with_capacity(grad_log_probs.len());
        for (g, lp) in grad_log_probs.chunks(k).zip(logp.chunks(k)) {
            let total: f64 = g.iter().sum();
            out.extend(g.iter().zip(lp).map(|(gj, lpj)| gj - lpj.exp() * total));
        }
        Ok(out)
    }
}
