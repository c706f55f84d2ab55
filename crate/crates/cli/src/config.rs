//! Run configuration files (TOML).
//!
//! ```toml
//! seed = 7
//!
//! [scenario]
//! kind = "sycophancy"   # sycophancy | length | concept | discrimination
//! n = 5000
//! rho = 0.8
//!
//! [train]
//! lambda = 1.0
//! variant = "conditional"
//! bins = { mode = "binary" }
//! kernel = { bandwidth = "median_heuristic" }
//! estimator = "biased"
//! lr = 1e-3
//! batch_size = 128
//! epochs = 4
//!
//! [sweep]
//! lambdas = [0.0, 0.1, 0.3, 0.5, 1.0, 3.0, 5.0, 10.0]
//! ```
//!
//! Every key except `seed` and `scenario.kind` is optional and defaults per
//! scenario. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crm_core::binning::BinMode;
use crm_core::datagen::{Scenario, ScenarioConfig};
use crm_core::train::TrainConfig;
use crm_core::{Estimator, KernelSpec, Variant, DEFAULT_LAMBDA_GRID};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds both data generation and training.
    pub seed: u64,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: Scenario,
    pub n: Option<usize>,
    pub content_dim: Option<usize>,
    pub rho: Option<f64>,
    pub beta_spur: Option<f64>,
    pub noise: Option<f64>,
    pub eval_prompts: Option<usize>,
    /// Candidates per evaluation prompt (K).
    pub candidates: Option<usize>,
    pub marker_rate: Option<f64>,
    pub candidate_spread: Option<f64>,
    pub demographic_levels: Option<Vec<usize>>,
    pub biased_groups: Option<Vec<usize>>,
    pub merit_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: Option<Vec<usize>>,
    pub lambda: Option<f64>,
    pub variant: Option<Variant>,
    pub bins: Option<BinMode>,
    pub kernel: Option<KernelSpec>,
    pub estimator: Option<Estimator>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub lambdas: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let s = &self.scenario;
        let d = ScenarioConfig::new(s.kind);
        ScenarioConfig {
            scenario: s.kind,
            n: s.n.unwrap_or(d.n),
            content_dim: s.content_dim.unwrap_or(d.content_dim),
            rho: s.rho.unwrap_or(d.rho),
            beta_spur: s.beta_spur.unwrap_or(d.beta_spur),
            seed: self.seed,
            noise: s.noise.unwrap_or(d.noise),
            eval_prompts: s.eval_prompts.unwrap_or(d.eval_prompts),
            candidates: s.candidates.unwrap_or(d.candidates),
            marker_rate: s.marker_rate.unwrap_or(d.marker_rate),
            candidate_spread: s.candidate_spread.unwrap_or(d.candidate_spread),
            demographic_levels: s.demographic_levels.clone().unwrap_or(d.demographic_levels),
            biased_groups: s.biased_groups.clone().unwrap_or(d.biased_groups),
            merit_scale: s.merit_scale.unwrap_or(d.merit_scale),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let d = TrainConfig::for_scenario(self.scenario.kind);
        TrainConfig {
            hidden: t.hidden.clone().unwrap_or(d.hidden),
            lambda: t.lambda.unwrap_or(d.lambda),
            variant: t.variant.unwrap_or(d.variant),
            bins: t.bins.unwrap_or(d.bins),
            kernel: t.kernel.unwrap_or(d.kernel),
            estimator: t.estimator.unwrap_or(d.estimator),
            lr: t.lr.unwrap_or(d.lr),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            epochs: t.epochs.unwrap_or(d.epochs),
            seed: self.seed,
        }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.sweep.lambdas.clone().unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec())
    }

    /// Range checks; messages name the offending key as `section.field`.
    pub fn validate(&self) -> Result<()> {
        let prefixed = |section: &str, err: crm_core::Error| match err {
            crm_core::Error::InvalidField { field, message } => {
                CliError::Config(format!("{section}.{field}: {message}"))
            }
            other => CliError::from(other),
        };
        self.scenario_config().validate().map_err(|e| prefixed("scenario", e))?;
        self.train_config().validate().map_err(|e| prefixed("train", e))?;
        validate_lambdas(&self.lambdas())
    }
}

pub fn validate_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(CliError::Config("sweep.lambdas: list must not be empty".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(CliError::Config(format!("sweep.lambdas: every value must be finite and >= 0, got {bad}")));
    }
    Ok(())
}
