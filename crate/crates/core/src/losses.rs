//! Training objectives: Bradley-Terry negative log-likelihood, the
//! MMD-regularized causal reward objective, and its preference-optimization
//! counterpart over implicit rewards.

use serde::{Deserialize, Serialize};

use crate::binning::BinSpec;
use crate::error::{contract, Error, Result};
use crate::kernels::{labeled_bin_mmd, Estimator, KernelSpec};
use crate::model::{RewardModel, TabularPolicy};
use crate::numcore::{sigmoid, softplus, LossGradient, ParamVector};

/// Default regularization grid.
pub const DEFAULT_LAMBDA_GRID: [f64; 8] = [0.0, 0.1, 0.3, 0.5, 1.0, 3.0, 5.0, 10.0];

/// One preference judgement with each response's spurious factor.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
    pub z_chosen: f64,
    pub z_rejected: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceBatch {
    pairs: Vec<PreferencePair>,
    dim: usize,
}

impl PreferenceBatch {
    pub fn new(pairs: Vec<PreferencePair>) -> Result<Self> {
        let Some(first) = pairs.first() else {
            return contract("preference batch is empty");
        };
        let dim = first.chosen.len();
        for p in &pairs {
            for f in [&p.chosen, &p.rejected] {
                if f.len() != dim {
                    return Err(Error::LengthMismatch { context: "batch features", expected: dim, got: f.len() });
                }
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("batch features"));
                }
            }
            if !p.z_chosen.is_finite() || !p.z_rejected.is_finite() {
                return Err(Error::NonFinite("batch z values"));
            }
        }
        Ok(Self { pairs, dim })
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// `P(chosen preferred) = sigma(r_w - r_l)`.
pub fn bt_prob(r_w: f64, r_l: f64) -> f64 {
    sigmoid(r_w - r_l)
}

/// Mean `-log sigma(r(chosen) - r(rejected))` and its parameter gradient.
pub fn bt_nll(model: &RewardModel, batch: &PreferenceBatch) -> Result<LossGradient> {
    check_dims(model, batch)?;
    let terms = bt_terms(model, batch);
    let mut grad = vec![0.0; model.params.len()];
    for (pair, (cw, cl)) in batch.pairs.iter().zip(terms.coef_chosen.iter().zip(&terms.coef_rejected)) {
        model.accumulate_grad(&pair.chosen, *cw, &mut grad);
        model.accumulate_grad(&pair.rejected, *cl, &mut grad);
    }
    Ok(LossGradient { loss: terms.loss, grad: ParamVector(grad) })
}

fn check_dims(model: &RewardModel, batch: &PreferenceBatch) -> Result<()> {
    if model.arch.input_dim != batch.dim {
        return Err(Error::LengthMismatch {
            context: "batch feature dimension",
            expected: model.arch.input_dim,
            got: batch.dim,
        });
    }
    Ok(())
}

struct BtTerms {
    loss: f64,
    rewards_chosen: Vec<f64>,
    rewards_rejected: Vec<f64>,
    coef_chosen: Vec<f64>,
    coef_rejected: Vec<f64>,
}

fn bt_terms(model: &RewardModel, batch: &PreferenceBatch) -> BtTerms {
    let rewards_chosen: Vec<f64> = batch.pairs.iter().map(|p| model.reward_unchecked(&p.chosen)).collect();
    let rewards_rejected: Vec<f64> = batch.pairs.iter().map(|p| model.reward_unchecked(&p.rejected)).collect();
    let (loss, coef_chosen, coef_rejected) = bt_from_margins(&rewards_chosen, &rewards_rejected, 1.0);
    BtTerms { loss, rewards_chosen, rewards_rejected, coef_chosen, coef_rejected }
}

/// Loss and per-response derivatives of the mean BT loss over margins
/// `scale * (a_i - b_i)`.
fn bt_from_margins(a: &[f64], b: &[f64], scale: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let n = a.len() as f64;
    let mut loss = 0.0;
    let mut coef_a = Vec::with_capacity(a.len());
    let mut coef_b = Vec::with_capacity(a.len());
    for (&x, &y) in a.iter().zip(b) {
        let margin = scale * (x - y);
        loss += softplus(-margin);
        let d = -sigmoid(-margin) * scale / n;
        coef_a.push(d);
        coef_b.push(-d);
    }
    (loss / n, coef_a, coef_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Independence over all responses pooled.
    #[default]
    Unconditional,
    /// Independence within the chosen and within the rejected responses.
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrmConfig {
    pub lambda: f64,
    pub variant: Variant,
    pub bins: BinSpec,
    pub kernel: KernelSpec,
    pub estimator: Estimator,
}

impl CrmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return contract(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CrmDiagnostics {
    pub bt: f64,
    /// Unweighted pairwise-bin MMD term.
    pub mmd: f64,
    pub bandwidth: f64,
    /// Responses per bin over the whole batch.
    pub bin_counts: Vec<usize>,
    pub skipped_bins: Vec<usize>,
    /// No bin pair was usable; the penalty contributed nothing.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrmOutput {
    pub objective: LossGradient,
    pub diagnostics: CrmDiagnostics,
}

struct Penalty {
    value: f64,
    grad_chosen: Vec<f64>,
    grad_rejected: Vec<f64>,
    diagnostics: CrmDiagnostics,
}

/// Pairwise-bin MMD over per-response scalars, in either variant.
fn mmd_penalty(
    chosen: &[f64],
    rejected: &[f64],
    z_chosen: &[f64],
    z_rejected: &[f64],
    cfg: &CrmConfig,
) -> Result<Penalty> {
    let n_bins = cfg.bins.n_bins();
    let labels_chosen = cfg.bins.assign_all(z_chosen)?;
    let labels_rejected = cfg.bins.assign_all(z_rejected)?;
    let pooled: Vec<f64> = chosen.iter().chain(rejected).copied().collect();
    let bandwidth = cfg.kernel.resolve(&pooled)?;
    let mut bin_counts = vec![0usize; n_bins];
    for &b in labels_chosen.iter().chain(&labels_rejected) {
        bin_counts[b] += 1;
    }
    let n = chosen.len();
    let (value, grad_chosen, grad_rejected, pairs, mut skipped) = match cfg.variant {
        Variant::Unconditional => {
            let labels: Vec<usize> = labels_chosen.iter().chain(&labels_rejected).copied().collect();
            let out = labeled_bin_mmd(&pooled, &labels, n_bins, bandwidth, cfg.estimator)?;
            let mut grad = out.grad;
            let grad_r = grad.split_off(n);
            (out.summary.value, grad, grad_r, out.summary.pairs, out.summary.skipped_bins)
        }
        Variant::Conditional => {
            let c = labeled_bin_mmd(chosen, &labels_chosen, n_bins, bandwidth, cfg.estimator)?;
            let r = labeled_bin_mmd(rejected, &labels_rejected, n_bins, bandwidth, cfg.estimator)?;
            let mut skipped = c.summary.skipped_bins;
            skipped.extend(r.summary.skipped_bins);
            (c.summary.value + r.summary.value, c.grad, r.grad, c.summary.pairs + r.summary.pairs, skipped)
        }
    };
    skipped.sort_unstable();
    skipped.dedup();
    Ok(Penalty {
        value,
        grad_chosen,
        grad_rejected,
        diagnostics: CrmDiagnostics {
            bt: 0.0,
            mmd: value,
            bandwidth,
            bin_counts,
            skipped_bins: skipped,
            degenerate: pairs == 0,
        },
    })
}

/// BT loss plus `lambda` times the pairwise-bin MMD of rewards across bins
/// of the spurious factor.
///
/// With `lambda == 0` the loss and gradient are bit-identical to [`bt_nll`].
pub fn crm_objective(model: &RewardModel, batch: &PreferenceBatch, cfg: &CrmConfig) -> Result<CrmOutput> {
    cfg.validate()?;
    check_dims(model, batch)?;
    let terms = bt_terms(model, batch);
    let z_chosen: Vec<f64> = batch.pairs.iter().map(|p| p.z_chosen).collect();
    let z_rejected: Vec<f64> = batch.pairs.iter().map(|p| p.z_rejected).collect();
    let penalty = mmd_penalty(&terms.rewards_chosen, &terms.rewards_rejected, &z_chosen, &z_rejected, cfg)?;

    let mut coef_chosen = terms.coef_chosen;
    let mut coef_rejected = terms.coef_rejected;
    let mut loss = terms.loss;
    if cfg.lambda != 0.0 {
        loss += cfg.lambda * penalty.value;
        for (c, g) in coef_chosen.iter_mut().zip(&penalty.grad_chosen) {
            *c += cfg.lambda * g;
        }
        for (c, g) in coef_rejected.iter_mut().zip(&penalty.grad_rejected) {
            *c += cfg.lambda * g;
        }
    }
    let mut grad = vec![0.0; model.params.len()];
    for (pair, (cw, cl)) in batch.pairs.iter().zip(coef_chosen.iter().zip(&coef_rejected)) {
        model.accumulate_grad(&pair.chosen, *cw, &mut grad);
        model.accumulate_grad(&pair.rejected, *cl, &mut grad);
    }
    let mut diagnostics = penalty.diagnostics;
    diagnostics.bt = terms.loss;
    Ok(CrmOutput { objective: LossGradient { loss, grad: ParamVector(grad) }, diagnostics })
}

/// `(log p(chosen), log p(rejected))`.
pub type LogProbPair = (f64, f64);

/// Preference-optimization loss over implicit rewards
/// `beta * (log pi - log pi_ref)`, with the same pairwise-bin MMD penalty on
/// those implicit rewards.
///
/// The gradient is with respect to the policy log-probabilities, flattened
/// as `[w_0, l_0, w_1, l_1, ...]`.
pub fn causal_dpo_loss(
    policy: &[LogProbPair],
    reference: &[LogProbPair],
    beta: f64,
    z: &[(f64, f64)],
    cfg: &CrmConfig,
) -> Result<CrmOutput> {
    cfg.validate()?;
    if !(beta > 0.0) || !beta.is_finite() {
        return contract(format!("beta must be positive, got {beta}"));
    }
    if policy.is_empty() {
        return contract("no preference pairs");
    }
    for (len, context) in [(reference.len(), "reference pairs"), (z.len(), "z pairs")] {
        if len != policy.len() {
            return Err(Error::LengthMismatch { context, expected: policy.len(), got: len });
        }
    }
    let all = policy.iter().chain(reference).flat_map(|&(a, b)| [a, b]);
    if all.clone().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-probabilities"));
    }
    let implicit_w: Vec<f64> = policy.iter().zip(reference).map(|(p, r)| beta * (p.0 - r.0)).collect();
    let implicit_l: Vec<f64> = policy.iter().zip(reference).map(|(p, r)| beta * (p.1 - r.1)).collect();
    let (bt, coef_w, coef_l) = bt_from_margins(&implicit_w, &implicit_l, 1.0);
    let z_w: Vec<f64> = z.iter().map(|p| p.0).collect();
    let z_l: Vec<f64> = z.iter().map(|p| p.1).collect();
    let penalty = mmd_penalty(&implicit_w, &implicit_l, &z_w, &z_l, cfg)?;

    let mut loss = bt;
    let mut grad = Vec::with_capacity(2 * policy.len());
    for i in 0..policy.len() {
        let mut gw = coef_w[i];
        let mut gl = coef_l[i];
        if cfg.lambda != 0.0 {
            gw += cfg.lambda * penalty.grad_chosen[i];
            gl += cfg.lambda * penalty.grad_rejected[i];
        }
        // implicit reward = beta * log pi + const
        grad.push(beta * gw);
        grad.push(beta * gl);
    }
    if cfg.lambda != 0.0 {
        loss += cfg.lambda * penalty.value;
    }
    let mut diagnostics = penalty.diagnostics;
    diagnostics.bt = bt;
    Ok(CrmOutput { objective: LossGradient { loss, grad: ParamVector(grad) }, diagnostics })
}

/// A preference between two candidates of one prompt in a [`TabularPolicy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TabularPair {
    pub prompt: usize,
    pub chosen: usize,
    pub rejected: usize,
}

/// [`causal_dpo_loss`] with the gradient carried back to the logits of a
/// tabular softmax policy. `reference_log_probs` is row-major like
/// [`TabularPolicy::log_probs`].
pub fn causal_dpo_tabular(
    policy: &TabularPolicy,
    reference_log_probs: &[f64],
    pairs: &[TabularPair],
    beta: f64,
    z: &[(f64, f64)],
    cfg: &CrmConfig,
) -> Result<CrmOutput> {
    if reference_log_probs.len() != policy.logits.len() {
        return Err(Error::LengthMismatch {
            context: "reference log-probabilities",
            expected: policy.logits.len(),
            got: reference_log_probs.len(),
        });
    }
    let k = policy.candidates;
    for p in pairs {
        if p.prompt >= policy.prompts || p.chosen >= k || p.rejected >= k {
            return contract(format!("pair {p:?} out of range"));
        }
    }
    let logp = policy.log_probs();
    let idx = |prompt: usize, c: usize| prompt * k + c;
    let lp: Vec<LogProbPair> =
        pairs.iter().map(|p| (logp[idx(p.prompt, p.chosen)], logp[idx(p.prompt, p.rejected)])).collect();
    let lr: Vec<LogProbPair> = pairs
        .iter()
        .map(|p| (reference_log_probs[idx(p.prompt, p.chosen)], reference_log_probs[idx(p.prompt, p.rejected)]))
        .collect();
    let mut out = causal_dpo_loss(&lp, &lr, beta, z, cfg)?;
    let mut grad_logp = vec![0.0; logp.len()];
    for (i, p) in pairs.iter().enumerate() {
        grad_logp[idx(p.prompt, p.chosen)] += out.objective.grad[2 * i];
        grad_logp[idx(p.prompt, p.rejected)] += out.objective.grad[2 * i + 1];
    }
    out.objective.grad = ParamVector(policy.pullback(&grad_logp)?);
    Ok(out)
}
