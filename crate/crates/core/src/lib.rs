//! Causal reward modeling at desk scale.
//!
//! Preference-trained reward heads are regularized so that their reward
//! distribution does not vary across bins of a declared spurious factor,
//! using a pairwise-over-bins maximum mean discrepancy penalty. The crate
//! also generates synthetic preference data with four kinds of spurious
//! correlation and measures how much a trained model still exploits them.

pub mod binning;
pub mod datagen;
pub mod error;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod train;

pub use binning::{fit_bins, BinMode, BinSpec};
pub use error::{Error, Result};
pub use kernels::{Bandwidth, Estimator, KernelSpec};
pub use losses::{
    bt_nll, bt_prob, causal_dpo_loss, crm_objective, CrmConfig, CrmDiagnostics, CrmOutput, PreferenceBatch,
    PreferencePair, Variant, DEFAULT_LAMBDA_GRID,
};
pub use model::{ArchDescriptor, RewardModel, ScoredModel, Standardizer};
pub use numcore::{LossGradient, ParamVector};
