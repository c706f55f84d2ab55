//! Evaluation report files.
//!
//! `report.json` carries the fields in [`REPORT_FIELDS`]:
//!
//! * `format`, `version`: `"crm-report"`, 1
//! * `scenario`, `split`: what was evaluated (pairwise accuracy uses `split`)
//! * `scalars`: metric name to value, see `applicable_metrics`
//! * `warnings`: fit problems such as a separable demographic regression
//! * `notes`: how desk-scale metrics map to the original protocols
//!
//! CSV tables next to it: `rank_profile.csv` (`rank,mean_z`),
//! `histograms.csv` (`bin,lo,hi,count`) and, for discrimination,
//! `group_coefficients.csv` (`group,coefficient`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crm_core::datagen::Scenario;
use crm_core::metrics::MetricsReport;

use crate::error::{CliError, Result};

pub const REPORT_FORMAT: &str = "crm-report";
pub const REPORT_VERSION: u32 = 1;
pub const REPORT_FIELDS: [&str; 7] = ["format", "version", "scenario", "split", "scalars", "warnings", "notes"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub format: String,
    pub version: u32,
    pub scenario: Scenario,
    pub split: String,
    pub scalars: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub notes: BTreeMap<String, String>,
}

fn notes(scenario: Scenario) -> BTreeMap<String, String> {
    let mut n = BTreeMap::new();
    match scenario {
        Scenario::Sycophancy => {
            n.insert(
                "spurious_selection_rate".into(),
                "fraction of prompts whose top-reward candidate carries the marker (top-1 stand-in for all-samples-sycophantic)".into(),
            );
        }
        Scenario::Length => {
            n.insert(
                "reward_z_spearman".into(),
                "Spearman correlation of rank index with mean length at that rank".into(),
            );
            n.insert(
                "spurious_selection_rate".into(),
                "fraction of prompts whose top candidate is in the longest fifth of the length range".into(),
            );
        }
        Scenario::Concept => {
            n.insert(
                "bias_at_c".into(),
                "100 x [P(predict positive | concept) - P(predict positive | no concept)] on label-balanced strata"
                    .into(),
            );
        }
        Scenario::Discrimination => {
            n.insert(
                "max_abs_group_coefficient".into(),
                "largest |coefficient| of a ridge-damped fixed-effects logistic regression of the favorable decision on group one-hots plus merit".into(),
            );
        }
    }
    n
}

pub fn report_file(report: &MetricsReport, split: &str) -> ReportFile {
    ReportFile {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        scenario: report.scenario,
        split: split.into(),
        scalars: report.scalars.clone(),
        warnings: report.warnings.clone(),
        notes: notes(report.scenario),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_report(dir: &Path, report: &MetricsReport, split: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut json = serde_json::to_string_pretty(&report_file(report, split)).expect("report serializes");
    json.push('\n');
    write(&dir.join("report.json"), &json)?;

    let mut csv = String::from("rank,mean_z\n");
    for (rank, z) in report.rank_profile.iter().enumerate() {
        writeln!(csv, "{rank},{z}").expect("string write");
    }
    write(&dir.join("rank_profile.csv"), &csv)?;

    let mut csv = String::from("bin,lo,hi,count\n");
    for r in &report.histograms {
        writeln!(csv, "{},{},{},{}", r.bin, r.lo, r.hi, r.count).expect("string write");
    }
    write(&dir.join("histograms.csv"), &csv)?;

    if !report.group_coefficients.is_empty() {
        let mut csv = String::from("group,coefficient\n");
        for (g, c) in report.group_coefficients.iter().enumerate() {
            writeln!(csv, "{g},{c}").expect("string write");
        }
        write(&dir.join("group_coefficients.csv"), &csv)?;
    }
    Ok(())
}
