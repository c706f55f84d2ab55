//! Seeded minibatch training of a reward model on a preference dataset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binning::{fit_bins, BinMode};
use crate::datagen::{Scenario, SyntheticExample};
use crate::error::{Error, Result};
use crate::kernels::{Estimator, KernelSpec};
use crate::losses::{crm_objective, CrmConfig, CrmDiagnostics, PreferenceBatch, PreferencePair, Variant};
use crate::metrics::pairwise_accuracy;
use crate::model::{ArchDescriptor, RewardModel, ScoredModel, Standardizer};
use crate::numcore::{AdamConfig, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Hidden layer widths; empty means a linear reward head.
    pub hidden: Vec<usize>,
    pub lambda: f64,
    pub variant: Variant,
    pub bins: BinMode,
    pub kernel: KernelSpec,
    pub estimator: Estimator,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for a scenario: binary bins for binary factors, 10 quantile
    /// bins for length, one bin per group for demographics.
    pub fn for_scenario(scenario: Scenario) -> Self {
        let (bins, variant) = match scenario {
            Scenario::Sycophancy => (BinMode::Binary, Variant::Conditional),
            Scenario::Concept => (BinMode::Binary, Variant::Conditional),
            Scenario::Length => (BinMode::Quantile { bins: 10 }, Variant::Unconditional),
            Scenario::Discrimination => (BinMode::Categorical { overflow: false }, Variant::Unconditional),
        };
        Self {
            hidden: vec![16],
            lambda: 0.0,
            variant,
            bins,
            kernel: KernelSpec::default(),
            estimator: Estimator::Biased,
            lr: 1e-3,
            batch_size: 128,
            epochs: 4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |field: &'static str, message: String| Err(Error::InvalidField { field, message });
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return field("lambda", format!("must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return field("lr", format!("must be positive, got {}", self.lr));
        }
        if self.batch_size < 1 {
            return field("batch_size", "must be at least 1".into());
        }
        if self.epochs < 1 {
            return field("epochs", "must be at least 1".into());
        }
        if self.hidden.contains(&0) {
            return field("hidden", "layer widths must be positive".into());
        }
        match self.bins {
            BinMode::Quantile { bins } | BinMode::Uniform { bins } if bins < 2 => {
                return field("bins", format!("need at least 2 bins, got {bins}"));
            }
            _ => {}
        }
        if let crate::kernels::Bandwidth::Fixed(s) = self.kernel.bandwidth {
            if !(s > 0.0) || !s.is_finite() {
                return field("kernel", format!("fixed bandwidth must be positive, got {s}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub objective: f64,
    pub bt: f64,
    pub mmd: f64,
    pub bandwidth: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_objective: f64,
    pub mean_bt: f64,
    pub mean_mmd: f64,
    /// Absent when the validation split is empty.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ScoredModel,
    /// The objective configuration with bins fitted on the training split.
    pub crm: CrmConfig,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub final_diagnostics: CrmDiagnostics,
}

/// Fits standardization and bins on `train`, then runs Adam on the CRM
/// objective for the configured number of epochs.
pub fn train(train: &[SyntheticExample], val: &[SyntheticExample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = train.first().ok_or_else(|| Error::Contract("training split is empty".into()))?;
    let dim = first.chosen.features.len();
    let standardizer = Standardizer::fit(
        train.iter().flat_map(|e| [e.chosen.features.as_slice(), e.rejected.features.as_slice()]),
        dim,
    )?;
    let z: Vec<f64> = train.iter().flat_map(|e| [e.chosen.z, e.rejected.z]).collect();
    let crm = CrmConfig {
        lambda: cfg.lambda,
        variant: cfg.variant,
        bins: fit_bins(&z, cfg.bins)?,
        kernel: cfg.kernel,
        estimator: cfg.estimator,
    };
    let pairs: Vec<PreferencePair> = train
        .iter()
        .map(|e| PreferencePair {
            chosen: standardizer.apply(&e.chosen.features),
            rejected: standardizer.apply(&e.rejected.features),
            z_chosen: e.chosen.z,
            z_rejected: e.rejected.z,
        })
        .collect();

    let arch = ArchDescriptor::mlp(dim, cfg.hidden.clone());
    let mut model = RewardModel::init(arch, cfg.seed)?;
    let mut opt = OptimizerState::new(AdamConfig::with_lr(cfg.lr), model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut steps = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut final_diagnostics = CrmDiagnostics::default();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_obj, mut sum_bt, mut sum_mmd, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = PreferenceBatch::new(chunk.iter().map(|&i| pairs[i].clone()).collect())?;
            let diverged = |steps: &[StepLog]| Error::Diverged {
                step,
                last_good: steps.last().map_or_else(|| "none".to_string(), |s| format!("{s:?}")),
            };
            let out = match crm_objective(&model, &batch, &crm) {
                Ok(out) if out.objective.loss.is_finite() && out.objective.grad.is_finite() => out,
                Ok(_) | Err(Error::NonFinite(_)) => return Err(diverged(&steps)),
                Err(e) => return Err(e),
            };
            opt.apply(&mut model.params, &out.objective.grad)?;
            if !model.params.is_finite() {
                return Err(diverged(&steps));
            }
            let d = &out.diagnostics;
            steps.push(StepLog {
                epoch,
                step,
                objective: out.objective.loss,
                bt: d.bt,
                mmd: d.mmd,
                bandwidth: d.bandwidth,
                degenerate: d.degenerate,
            });
            sum_obj += out.objective.loss;
            sum_bt += d.bt;
            sum_mmd += d.mmd;
            batches += 1;
            step += 1;
            final_diagnostics = out.diagnostics;
        }
        let scored = ScoredModel { model: model.clone(), standardizer: standardizer.clone() };
        let val_accuracy =
            if val.is_empty() { None } else { Some(pairwise_accuracy(|t: &[f64]| scored.reward(t), val)?) };
        let nb = batches as f64;
        epochs.push(EpochLog {
            epoch,
            mean_objective: sum_obj / nb,
            mean_bt: sum_bt / nb,
            mean_mmd: sum_mmd / nb,
            val_accuracy,
        });
    }
    Ok(TrainOutcome { model: ScoredModel { model, standardizer }, crm, steps, epochs, final_diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, ScenarioConfig};

    fn small(scenario: Scenario) -> crate::datagen::Dataset {
        generate(&ScenarioConfig { n: 600, eval_prompts: 20, seed: 1, ..ScenarioConfig::new(scenario) }).unwrap()
    }

    #[test]
    fn training_is_deterministic() {
        let d = small(Scenario::Sycophancy);
        let cfg = TrainConfig { lambda: 1.0, epochs: 2, ..TrainConfig::for_scenario(Scenario::Sycophancy) };
        let a = train(&d.train, &d.val, &cfg).unwrap();
        let b = train(&d.train, &d.val, &cfg).unwrap();
        assert_eq!(a.model.model.params, b.model.model.params);
        assert_eq!(a.steps, b.steps);
    }

    #[test]
    fn lambda_zero_objective_matches_plain_bt_run() {
        let d = small(Scenario::Length);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::for_scenario(Scenario::Length) };
        let a = train(&d.train, &d.val, &cfg).unwrap();
        for s in &a.steps {
            assert_eq!(s.objective, s.bt);
        }
    }

    #[test]
    fn bt_training_reduces_loss_and_learns() {
        let d = small(Scenario::Sycophancy);
        let cfg = TrainConfig { epochs: 5, lr: 1e-2, ..TrainConfig::for_scenario(Scenario::Sycophancy) };
        let out = train(&d.train, &d.val, &cfg).unwrap();
        let first = out.epochs.first().unwrap().mean_bt;
        let last = out.epochs.last().unwrap().mean_bt;
        assert!(last < first && last < std::f64::consts::LN_2);
        assert!(out.epochs.last().unwrap().val_accuracy.unwrap() > 0.75);
    }

    #[test]
    fn steps_per_epoch_cover_the_split() {
        let d = small(Scenario::Concept);
        let cfg = TrainConfig { epochs: 2, batch_size: 100, ..TrainConfig::for_scenario(Scenario::Concept) };
        let out = train(&d.train, &[], &cfg).unwrap();
        // 540 pairs in batches of 100 -> 6 steps per epoch
        assert_eq!(out.steps.len(), 12);
        assert!(out.epochs.iter().all(|e| e.val_accuracy.is_none()));
    }

    #[test]
    fn divergence_is_reported() {
        let d = small(Scenario::Sycophancy);
        // a linear head with a huge step overflows its reward sum
        let cfg =
            TrainConfig { epochs: 1, hidden: vec![], lr: 1e308, ..TrainConfig::for_scenario(Scenario::Sycophancy) };
        match train(&d.train, &[], &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("{:?}", other.map(|o| o.steps.len())),
        }
    }

    #[test]
    fn config_validation_names_fields() {
        let base = TrainConfig::for_scenario(Scenario::Length);
        let cases = [
            (TrainConfig { lambda: -1.0, ..base.clone() }, "lambda"),
            (TrainConfig { lr: 0.0, ..base.clone() }, "lr"),
            (TrainConfig { batch_size: 0, ..base.clone() }, "batch_size"),
            (TrainConfig { epochs: 0, ..base.clone() }, "epochs"),
            (TrainConfig { hidden: vec![0], ..base.clone() }, "hidden"),
            (TrainConfig { bins: BinMode::Quantile { bins: 1 }, ..base.clone() }, "bins"),
            (TrainConfig { kernel: KernelSpec::fixed(-1.0), ..base.clone() }, "kernel"),
        ];
        for (c, name) in cases {
            match c.validate() {
                Err(Error::InvalidField { field, .. }) => assert_eq!(field, name),
                other => panic!("{name}: {other:?}"),
            }
        }
    }
}
