//! Newline-delimited dataset files.
//!
//! A dataset directory holds `train.jsonl`, `val.jsonl`, `test.jsonl`,
//! `eval.jsonl` and `manifest.json`. The first line of every `.jsonl` file
//! is a header record:
//!
//! ```json
//! {"format":"crm-dataset","version":1,"split":"train","eval_kind":null,"config":{...}}
//! ```
//!
//! followed by one record per line: a preference example for the pair
//! splits, or `{"prompt":i,"candidates":[...]}` for candidate evaluation
//! sets.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crm_core::datagen::{
    split_sizes, spurious_stats, CandidateSet, Dataset, EvalSet, Response, ScenarioConfig, SyntheticExample,
};

use crate::error::{CliError, Result};

pub const DATASET_FORMAT: &str = "crm-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub split: String,
    /// `candidates` or `pairs` for the eval file, absent otherwise.
    pub eval_kind: Option<String>,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub prompt: usize,
    pub candidates: Vec<Response>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub sizes: SplitSizes,
    /// Empirical strength of the planted correlation, per split.
    pub spurious_stats: BTreeMap<String, BTreeMap<String, f64>>,
}

fn header(config: &ScenarioConfig, split: &str, eval_kind: Option<&str>) -> Header {
    Header {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        split: split.into(),
        eval_kind: eval_kind.map(str::to_string),
        config: config.clone(),
    }
}

fn write_lines<T: Serialize>(path: &Path, head: &Header, records: impl Iterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| CliError::io(path, e);
    serde_json::to_writer(&mut w, head).map_err(|e| io(e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn manifest(dataset: &Dataset) -> Manifest {
    let cfg = &dataset.config;
    let mut stats = BTreeMap::new();
    for (name, split) in [("train", &dataset.train), ("val", &dataset.val), ("test", &dataset.test)] {
        stats.insert(name.to_string(), spurious_stats(cfg.scenario, split, &cfg.biased_groups));
    }
    let eval = match &dataset.eval {
        EvalSet::Candidates(c) => c.prompts.len(),
        EvalSet::Pairs(p) => p.len(),
    };
    Manifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        seed: cfg.seed,
        config: cfg.clone(),
        sizes: SplitSizes { train: dataset.train.len(), val: dataset.val.len(), test: dataset.test.len(), eval },
        spurious_stats: stats,
    }
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let cfg = &dataset.config;
    for (name, split) in [("train", &dataset.train), ("val", &dataset.val), ("test", &dataset.test)] {
        write_lines(&dir.join(format!("{name}.jsonl")), &header(cfg, name, None), split.iter())?;
    }
    let eval_path = dir.join("eval.jsonl");
    match &dataset.eval {
        EvalSet::Candidates(c) => write_lines(
            &eval_path,
            &header(cfg, "eval", Some("candidates")),
            c.prompts
                .iter()
                .enumerate()
                .map(|(prompt, candidates)| CandidateRecord { prompt, candidates: candidates.clone() }),
        )?,
        EvalSet::Pairs(p) => write_lines(&eval_path, &header(cfg, "eval", Some("pairs")), p.iter())?,
    }
    let m = manifest(dataset);
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(m)
}

fn read_lines(path: &Path) -> Result<(Header, Vec<String>)> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty file", path.display())))?
        .map_err(|e| CliError::io(path, e))?;
    let head: Header =
        serde_json::from_str(&first).map_err(|e| CliError::Data(format!("{}: bad header: {e}", path.display())))?;
    if head.format != DATASET_FORMAT {
        return Err(CliError::Data(format!("{}: not a dataset file (format {:?})", path.display(), head.format)));
    }
    if head.version != DATASET_VERSION {
        return Err(CliError::Data(format!(
            "{}: unsupported dataset version {} (supported: {DATASET_VERSION})",
            path.display(),
            head.version
        )));
    }
    let body = lines.collect::<std::io::Result<Vec<_>>>().map_err(|e| CliError::io(path, e))?;
    Ok((head, body))
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, lineno: usize, line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), lineno + 2)))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mut config: Option<ScenarioConfig> = None;
    let mut check = |path: &Path, head: &Header, split: &str| -> Result<()> {
        if head.split != split {
            return Err(CliError::Data(format!(
                "{}: header says split {:?}, expected {split:?}",
                path.display(),
                head.split
            )));
        }
        match &config {
            None => config = Some(head.config.clone()),
            Some(c) if *c != head.config => {
                return Err(CliError::Data(format!(
                    "{}: scenario config differs from the other splits",
                    path.display()
                )))
            }
            Some(_) => {}
        }
        Ok(())
    };
    let mut splits = Vec::with_capacity(3);
    for name in SPLITS {
        let path = dir.join(format!("{name}.jsonl"));
        let (head, lines) = read_lines(&path)?;
        check(&path, &head, name)?;
        let examples = lines
            .iter()
            .enumerate()
            .map(|(i, l)| parse::<SyntheticExample>(&path, i, l))
            .collect::<Result<Vec<_>>>()?;
        splits.push(examples);
    }
    let path = dir.join("eval.jsonl");
    let (head, lines) = read_lines(&path)?;
    check(&path, &head, "eval")?;
    let eval = match head.eval_kind.as_deref() {
        Some("candidates") => {
            let mut prompts = Vec::with_capacity(lines.len());
            for (i, l) in lines.iter().enumerate() {
                let rec: CandidateRecord = parse(&path, i, l)?;
                if rec.prompt != i {
                    return Err(CliError::Data(format!(
                        "{}:{}: prompt index {} out of order",
                        path.display(),
                        i + 2,
                        rec.prompt
                    )));
                }
                prompts.push(rec.candidates);
            }
            EvalSet::Candidates(CandidateSet { prompts })
        }
        Some("pairs") => EvalSet::Pairs(
            lines
                .iter()
                .enumerate()
                .map(|(i, l)| parse::<SyntheticExample>(&path, i, l))
                .collect::<Result<Vec<_>>>()?,
        ),
        other => return Err(CliError::Data(format!("{}: unknown eval kind {other:?}", path.display()))),
    };
    let config = config.expect("at least one split was read");
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    let (n_train, n_val, n_test) = split_sizes(config.n);
    if (train.len(), val.len(), test.len()) != (n_train, n_val, n_test) {
        return Err(CliError::Data(format!(
            "{}: split sizes {}/{}/{} do not match n = {}",
            dir.display(),
            train.len(),
            val.len(),
            test.len(),
            config.n
        )));
    }
    Ok(Dataset { config, train, val, test, eval })
}
