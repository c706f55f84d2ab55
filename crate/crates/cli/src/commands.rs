//! The four subcommands as library functions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crm_core::datagen::{generate, Dataset, EvalSet, Scenario, SyntheticExample};
use crm_core::metrics::{applicable_metrics, evaluate, head_to_head, win_score, MetricsReport};
use crm_core::train::{train, TrainConfig, TrainOutcome};
use crm_core::ScoredModel;

use crate::checkpoint::{Checkpoint, FinalDiagnostics, Header};
use crate::config::{validate_lambdas, RunConfig};
use crate::dataset::{read_dataset, write_dataset, Manifest};
use crate::error::{CliError, Result};
use crate::report::{report_file, write_report, ReportFile};

pub const CHECKPOINT_FILE: &str = "checkpoint.crm";
pub const STEPS_FILE: &str = "steps.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Generates the configured scenario and writes it under `out`.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let dataset = generate(&cfg.scenario_config())?;
    write_dataset(out, &dataset)
}

/// What a training run leaves behind besides its files.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: Checkpoint,
    pub outcome: TrainOutcome,
}

fn check_scenario(cfg: &RunConfig, dataset: &Dataset) -> Result<()> {
    if cfg.scenario.kind != dataset.config.scenario {
        return Err(CliError::Data(format!(
            "config scenario is {} but the dataset was generated for {}",
            cfg.scenario.kind.name(),
            dataset.config.scenario.name()
        )));
    }
    Ok(())
}

fn checkpoint_from(outcome: &TrainOutcome, scenario: Scenario, seed: u64) -> Checkpoint {
    let val_accuracy = outcome.epochs.last().and_then(|e| e.val_accuracy);
    Checkpoint {
        header: Header {
            scenario,
            seed,
            arch: outcome.model.model.arch.clone(),
            standardizer: outcome.model.standardizer.clone(),
            crm: outcome.crm.clone(),
            diagnostics: FinalDiagnostics::new(&outcome.final_diagnostics, val_accuracy, outcome.steps.len()),
        },
        params: outcome.model.model.params.clone(),
    }
}

fn write_logs(out: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut csv = String::from("epoch,step,objective,bt,mmd,bandwidth,degenerate\n");
    for s in &outcome.steps {
        writeln!(csv, "{},{},{},{},{},{},{}", s.epoch, s.step, s.objective, s.bt, s.mmd, s.bandwidth, s.degenerate)
            .expect("string write");
    }
    write(&out.join(STEPS_FILE), &csv)?;
    let mut csv = String::from("epoch,mean_objective,mean_bt,mean_mmd,val_accuracy\n");
    for e in &outcome.epochs {
        let acc = e.val_accuracy.map_or_else(String::new, |a| a.to_string());
        writeln!(csv, "{},{},{},{},{acc}", e.epoch, e.mean_objective, e.mean_bt, e.mean_mmd).expect("string write");
    }
    write(&out.join(EPOCHS_FILE), &csv)
}

fn train_on(dataset: &Dataset, tc: &TrainConfig, out: &Path) -> Result<TrainSummary> {
    let outcome = train(&dataset.train, &dataset.val, tc)?;
    create_dir(out)?;
    write_logs(out, &outcome)?;
    let checkpoint = checkpoint_from(&outcome, dataset.config.scenario, tc.seed);
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    Ok(TrainSummary { checkpoint, outcome })
}

/// Trains on the dataset in `data` and writes the checkpoint and logs to `out`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<TrainSummary> {
    let dataset = read_dataset(data)?;
    check_scenario(cfg, &dataset)?;
    train_on(&dataset, &cfg.train_config(), out)
}

fn split<'a>(dataset: &'a Dataset, name: &str) -> Result<&'a [SyntheticExample]> {
    match name {
        "train" => Ok(&dataset.train),
        "val" => Ok(&dataset.val),
        "test" => Ok(&dataset.test),
        other => Err(CliError::Config(format!("unknown split {other:?} (expected train, val or test)"))),
    }
}

fn evaluate_model(
    model: &ScoredModel,
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    split_name: &str,
) -> Result<MetricsReport> {
    Ok(evaluate(
        dataset.config.scenario,
        |t: &[f64]| model.reward(t),
        split(dataset, split_name)?,
        &dataset.eval,
        &checkpoint.header.crm.bins,
        dataset.config.groups(),
    )?)
}

fn check_compatible(checkpoint: &Checkpoint, dataset: &Dataset, metrics: &[String]) -> Result<()> {
    let scenario = dataset.config.scenario;
    let applicable = applicable_metrics(scenario);
    if checkpoint.header.scenario != scenario {
        return Err(CliError::Data(format!(
            "checkpoint was trained for {} but the dataset is {}; metrics applicable to {}: {}",
            checkpoint.header.scenario.name(),
            scenario.name(),
            scenario.name(),
            applicable.join(", ")
        )));
    }
    if let Some(bad) = metrics.iter().find(|m| !applicable.contains(&m.as_str())) {
        return Err(CliError::Config(format!(
            "metric {bad:?} does not apply to {}; applicable metrics: {}",
            scenario.name(),
            applicable.join(", ")
        )));
    }
    let dim = dataset.config.feature_dim();
    if checkpoint.header.arch.input_dim != dim {
        return Err(CliError::Data(format!(
            "checkpoint expects {} features but the dataset has {dim}",
            checkpoint.header.arch.input_dim
        )));
    }
    Ok(())
}

/// Scores `split_name` and the evaluation set with a saved checkpoint. An
/// empty `metrics` list reports every applicable metric; otherwise the
/// scalars are restricted to the listed ones.
pub fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    split_name: &str,
    metrics: &[String],
) -> Result<ReportFile> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let dataset = read_dataset(data)?;
    check_compatible(&ckpt, &dataset, metrics)?;
    let model = ckpt.scored_model()?;
    let mut report = evaluate_model(&model, &ckpt, &dataset, split_name)?;
    if !metrics.is_empty() {
        report.scalars.retain(|k, _| metrics.contains(k));
    }
    write_report(out, &report, split_name)?;
    Ok(report_file(&report, split_name))
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    /// `ok`, or the error that stopped this member run.
    pub status: String,
    pub bt: Option<f64>,
    pub mmd: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub scalars: BTreeMap<String, f64>,
    /// Head-to-head win score of this model's top picks against the λ = 0
    /// model; candidate scenarios only.
    pub win_score_vs_lambda0: Option<f64>,
}

fn lambda_dir(out: &Path, lambda: f64) -> PathBuf {
    out.join(format!("lambda_{lambda}"))
}

struct Member {
    lambda: f64,
    result: Result<(TrainSummary, MetricsReport)>,
}

fn sweep_member(dataset: &Dataset, base: &TrainConfig, lambda: f64, out: &Path) -> Member {
    let result = (|| -> Result<(TrainSummary, MetricsReport)> {
        let dir = lambda_dir(out, lambda);
        let tc = TrainConfig { lambda, ..base.clone() };
        let summary = train_on(dataset, &tc, &dir)?;
        let report = evaluate_model(&summary.outcome.model, &summary.checkpoint, dataset, "val")?;
        write_report(&dir, &report, "val")?;
        Ok((summary, report))
    })();
    Member { lambda, result }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn sweep_csv(rows: &[SweepRow], metrics: &[&str]) -> String {
    let mut csv = String::from("lambda,status,bt,mmd,val_accuracy");
    for m in metrics {
        csv.push(',');
        csv.push_str(m);
    }
    csv.push_str(",win_score_vs_lambda0\n");
    for r in rows {
        // errors may contain commas; keep the column parseable
        let status = r.status.replace([',', '\n'], ";");
        write!(csv, "{},{status},{},{},{}", r.lambda, opt(r.bt), opt(r.mmd), opt(r.val_accuracy))
            .expect("string write");
        for m in metrics {
            write!(csv, ",{}", opt(r.scalars.get(*m).copied())).expect("string write");
        }
        writeln!(csv, ",{}", opt(r.win_score_vs_lambda0)).expect("string write");
    }
    csv
}

/// Trains one model per λ on a shared dataset, in parallel. The dataset is
/// read from `data` when given, otherwise generated into `out/data`. Member
/// failures are recorded in their row and do not stop the sweep.
pub fn cmd_sweep(cfg: &RunConfig, lambdas: &[f64], out: &Path, data: Option<&Path>) -> Result<Vec<SweepRow>> {
    validate_lambdas(lambdas)?;
    create_dir(out)?;
    let dataset = match data {
        Some(dir) => {
            let d = read_dataset(dir)?;
            check_scenario(cfg, &d)?;
            d
        }
        None => {
            let d = generate(&cfg.scenario_config())?;
            write_dataset(&out.join("data"), &d)?;
            d
        }
    };
    let base = cfg.train_config();
    let members: Vec<Member> = lambdas.par_iter().map(|&l| sweep_member(&dataset, &base, l, out)).collect();

    let reference = members.iter().find(|m| m.lambda == 0.0).and_then(|m| m.result.as_ref().ok());
    let mut rows = Vec::with_capacity(members.len());
    for m in &members {
        let row = match &m.result {
            Ok((summary, report)) => {
                let win = match (&dataset.eval, reference) {
                    (EvalSet::Candidates(c), Some((base_summary, _))) => {
                        let a = &summary.outcome.model;
                        let b = &base_summary.outcome.model;
                        let (w, l, n) = head_to_head(|t: &[f64]| a.reward(t), |t: &[f64]| b.reward(t), c)?;
                        Some(win_score(w, l, n)?)
                    }
                    _ => None,
                };
                let d = &summary.checkpoint.header.diagnostics;
                SweepRow {
                    lambda: m.lambda,
                    status: "ok".into(),
                    bt: Some(d.bt),
                    mmd: Some(d.mmd),
                    val_accuracy: d.val_accuracy,
                    scalars: report.scalars.clone(),
                    win_score_vs_lambda0: win,
                }
            }
            Err(e) => SweepRow {
                lambda: m.lambda,
                status: format!("failed: {e}"),
                bt: None,
                mmd: None,
                val_accuracy: None,
                scalars: BTreeMap::new(),
                win_score_vs_lambda0: None,
            },
        };
        rows.push(row);
    }
    write(&out.join(SWEEP_FILE), &sweep_csv(&rows, applicable_metrics(dataset.config.scenario)))?;
    Ok(rows)
}
