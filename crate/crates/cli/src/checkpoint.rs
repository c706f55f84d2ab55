//! Versioned binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 8    | magic `CRMCKPT\0`                         |
//! | 8      | 4    | format version (u32), currently 1         |
//! | 12     | 4    | header length `h` in bytes (u32)          |
//! | 16     | h    | UTF-8 JSON header (see [`Header`])        |
//! | 16+h   | 8    | parameter count `p` (u64)                 |
//! | 24+h   | 8·p  | parameters as IEEE-754 f64                |
//!
//! Nothing may follow the parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crm_core::datagen::Scenario;
use crm_core::losses::CrmDiagnostics;
use crm_core::{ArchDescriptor, CrmConfig, ParamVector, RewardModel, ScoredModel, Standardizer};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"CRMCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalDiagnostics {
    pub bt: f64,
    pub mmd: f64,
    pub bandwidth: f64,
    pub degenerate: bool,
    pub bin_counts: Vec<usize>,
    pub skipped_bins: Vec<usize>,
    pub val_accuracy: Option<f64>,
    pub steps: usize,
}

impl FinalDiagnostics {
    pub fn new(d: &CrmDiagnostics, val_accuracy: Option<f64>, steps: usize) -> Self {
        Self {
            bt: d.bt,
            mmd: d.mmd,
            bandwidth: d.bandwidth,
            degenerate: d.degenerate,
            bin_counts: d.bin_counts.clone(),
            skipped_bins: d.skipped_bins.clone(),
            val_accuracy,
            steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub scenario: Scenario,
    pub seed: u64,
    pub arch: ArchDescriptor,
    pub standardizer: Standardizer,
    pub crm: CrmConfig,
    pub diagnostics: FinalDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn scored_model(&self) -> Result<ScoredModel> {
        Ok(ScoredModel {
            model: RewardModel::new(self.header.arch.clone(), self.params.clone())?,
            standardizer: self.header.standardizer.clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(header.len()).expect("header under 4 GiB").to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in self.params.iter() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| CliError::Data(format!("checkpoint: {msg}"));
        let take = |at: usize, n: usize| -> Result<&[u8]> {
            bytes.get(at..at + n).ok_or_else(|| bad(format!("truncated at byte {at} (need {n} more)")))
        };
        if take(0, 8)? != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version} (supported: {VERSION})")));
        }
        let header_len = u32::from_le_bytes(take(12, 4)?.try_into().expect("4 bytes")) as usize;
        let header: Header =
            serde_json::from_slice(take(16, header_len)?).map_err(|e| bad(format!("bad header: {e}")))?;
        let at = 16 + header_len;
        let count = u64::from_le_bytes(take(at, 8)?.try_into().expect("8 bytes")) as usize;
        let expected = header.arch.param_count();
        if count != expected {
            return Err(bad(format!("parameter count {count} does not match architecture ({expected})")));
        }
        let body = take(at + 8, count.checked_mul(8).ok_or_else(|| bad("parameter count overflows".into()))?)?;
        if bytes.len() != at + 8 + 8 * count {
            return Err(bad(format!("{} trailing bytes", bytes.len() - (at + 8 + 8 * count))));
        }
        let params: Vec<f64> =
            body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if header.standardizer.mean.len() != header.arch.input_dim {
            return Err(bad("standardizer width does not match architecture".into()));
        }
        Ok(Self { header, params: ParamVector(params) })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
