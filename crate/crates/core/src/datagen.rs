//! Seeded synthetic preference data with a controllable spurious factor.
//!
//! Four constructions are provided:
//!
//! * **sycophancy**: a binary agreement marker rides on the truly better
//!   response with probability `rho`, otherwise on the worse one;
//! * **length**: an annotator whose preference logit adds
//!   `beta_spur * (len_a - len_b) / sd(len)` to the quality gap;
//! * **concept**: sentiment pairs where a concept flag co-occurs with the
//!   positive label with probability `rho`;
//! * **discrimination**: yes/no decisions about subjects in demographic
//!   groups, with annotator bias toward selected groups.
//!
//! Every response carries latent ground truth for evaluation. Training code
//! only ever sees [`Response::features`] and [`Response::z`].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::PreferencePair;
use crate::numcore::sigmoid;

pub const LENGTH_MIN: f64 = 10.0;
pub const LENGTH_MAX: f64 = 500.0;

/// Standard deviation of `Uniform[LENGTH_MIN, LENGTH_MAX]`.
pub fn length_sd() -> f64 {
    (LENGTH_MAX - LENGTH_MIN) / 12f64.sqrt()
}

fn length_mean() -> f64 {
    0.5 * (LENGTH_MIN + LENGTH_MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Sycophancy,
    Length,
    Concept,
    Discrimination,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Sycophancy => "sycophancy",
            Scenario::Length => "length",
            Scenario::Concept => "concept",
            Scenario::Discrimination => "discrimination",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Number of preference examples before the train/val/test split.
    pub n: usize,
    /// Content feature dimension (the spurious coordinates come on top).
    pub content_dim: usize,
    /// Spurious-correlation strength.
    pub rho: f64,
    /// Annotator bias weight.
    pub beta_spur: f64,
    pub seed: u64,
    /// Standard deviation of the noise on content features.
    pub noise: f64,
    /// Prompts (or subjects) in the evaluation set.
    pub eval_prompts: usize,
    /// Candidates per evaluation prompt.
    pub candidates: usize,
    /// Rate at which evaluation candidates carry the sycophancy marker.
    pub marker_rate: f64,
    /// Content spread among candidates of one sycophancy prompt.
    pub candidate_spread: f64,
    /// Levels per demographic attribute; groups are their product.
    pub demographic_levels: Vec<usize>,
    /// Groups the biased annotator favors.
    pub biased_groups: Vec<usize>,
    /// Logit scale of merit in discrimination decisions.
    pub merit_scale: f64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario) -> Self {
        let base = Self {
            scenario,
            n: 5000,
            content_dim: 8,
            rho: 0.8,
            beta_spur: 1.0,
            seed: 0,
            noise: 0.5,
            eval_prompts: 400,
            candidates: 50,
            marker_rate: 0.2,
            candidate_spread: 0.1,
            demographic_levels: vec![4, 3, 5],
            biased_groups: vec![0],
            merit_scale: 2.0,
        };
        match scenario {
            Scenario::Sycophancy => Self { noise: 0.3, candidate_spread: 0.3, ..base },
            Scenario::Length => base,
            Scenario::Concept => Self { rho: 0.95, noise: 1.0, eval_prompts: 2000, ..base },
            Scenario::Discrimination => Self { beta_spur: 2.0, eval_prompts: 3000, ..base },
        }
    }

    pub fn groups(&self) -> usize {
        self.demographic_levels.iter().product()
    }

    /// Width of each response's feature vector.
    pub fn feature_dim(&self) -> usize {
        match self.scenario {
            Scenario::Sycophancy | Scenario::Length | Scenario::Concept => self.content_dim + 1,
            Scenario::Discrimination => self.content_dim + self.groups(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |field: &'static str, message: String| Err(Error::InvalidField { field, message });
        if self.n < 1 {
            return field("n", "must be at least 1".into());
        }
        if self.content_dim < 1 {
            return field("content_dim", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return field("rho", format!("must lie in [0, 1], got {}", self.rho));
        }
        if !(self.beta_spur >= 0.0) || !self.beta_spur.is_finite() {
            return field("beta_spur", format!("must be finite and >= 0, got {}", self.beta_spur));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return field("noise", format!("must be finite and >= 0, got {}", self.noise));
        }
        if self.eval_prompts < 1 {
            return field("eval_prompts", "must be at least 1".into());
        }
        if self.candidates < 2 {
            return field("candidates", format!("need at least 2 per prompt, got {}", self.candidates));
        }
        if !(0.0..=1.0).contains(&self.marker_rate) {
            return field("marker_rate", format!("must lie in [0, 1], got {}", self.marker_rate));
        }
        if !(self.candidate_spread >= 0.0) || !self.candidate_spread.is_finite() {
            return field("candidate_spread", format!("must be finite and >= 0, got {}", self.candidate_spread));
        }
        if !(self.merit_scale > 0.0) || !self.merit_scale.is_finite() {
            return field("merit_scale", format!("must be positive, got {}", self.merit_scale));
        }
        if self.demographic_levels.is_empty() || self.demographic_levels.contains(&0) {
            return field("demographic_levels", "every attribute needs at least one level".into());
        }
        if self.scenario == Scenario::Discrimination && self.groups() < 2 {
            return field("demographic_levels", format!("need at least 2 groups, got {}", self.groups()));
        }
        if let Some(&g) = self.biased_groups.iter().find(|&&g| g >= self.groups()) {
            return field("biased_groups", format!("group {g} out of range for {} groups", self.groups()));
        }
        Ok(())
    }
}

/// Ground truth kept alongside each response, never used for training.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Latent {
    /// True quality; for labeling scenarios 1 for the correct answer, else 0.
    pub quality: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<bool>,
    /// The response answers "positive" (concept) or "yes" (discrimination).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Response {
    pub features: Vec<f64>,
    pub z: f64,
    pub latent: Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticExample {
    pub id: usize,
    pub chosen: Response,
    pub rejected: Response,
}

impl SyntheticExample {
    /// The model-visible part of the example.
    pub fn to_pair(&self) -> PreferencePair {
        PreferencePair {
            chosen: self.chosen.features.clone(),
            rejected: self.rejected.features.clone(),
            z_chosen: self.chosen.z,
            z_rejected: self.rejected.z,
        }
    }
}

/// `K` candidate responses per prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub prompts: Vec<Vec<Response>>,
}

impl CandidateSet {
    pub fn k(&self) -> usize {
        self.prompts.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "data")]
pub enum EvalSet {
    Candidates(CandidateSet),
    /// Concept: label-balanced within each concept stratum.
    /// Discrimination: yes/no decisions, balanced over groups.
    Pairs(Vec<SyntheticExample>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub train: Vec<SyntheticExample>,
    pub val: Vec<SyntheticExample>,
    pub test: Vec<SyntheticExample>,
    pub eval: EvalSet,
}

/// 90/5/5 split sizes.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 90 / 100;
    let val = n * 5 / 100;
    (train, val, n - train - val)
}

pub fn generate(cfg: &ScenarioConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut gen = Generator::new(cfg);
    let examples = gen.examples();
    let eval = gen.eval_set();
    let (n_train, n_val, _) = split_sizes(examples.len());
    let mut rest = examples;
    let test = rest.split_off(n_train + n_val);
    let val = rest.split_off(n_train);
    Ok(Dataset { config: cfg.clone(), train: rest, val, test, eval })
}

pub fn gen_sycophancy(cfg: &ScenarioConfig) -> Result<Dataset> {
    expect_scenario(cfg, Scenario::Sycophancy)?;
    generate(cfg)
}

pub fn gen_length(cfg: &ScenarioConfig) -> Result<Dataset> {
    expect_scenario(cfg, Scenario::Length)?;
    generate(cfg)
}

pub fn gen_concept(cfg: &ScenarioConfig) -> Result<Dataset> {
    expect_scenario(cfg, Scenario::Concept)?;
    generate(cfg)
}

pub fn gen_discrimination(cfg: &ScenarioConfig) -> Result<Dataset> {
    expect_scenario(cfg, Scenario::Discrimination)?;
    generate(cfg)
}

fn expect_scenario(cfg: &ScenarioConfig, want: Scenario) -> Result<()> {
    if cfg.scenario == want {
        Ok(())
    } else {
        Err(Error::InvalidField {
            field: "scenario",
            message: format!("expected {}, got {}", want.name(), cfg.scenario.name()),
        })
    }
}

struct Generator<'a> {
    cfg: &'a ScenarioConfig,
    pairs_rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    /// Unit direction along which content features carry the signal.
    signal: Vec<f64>,
}

impl<'a> Generator<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Self {
        let mut pairs_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        pairs_rng.set_stream(0);
        let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        eval_rng.set_stream(1);
        // the first half of the content coordinates carry signal, the rest
        // are distractors
        let informative = cfg.content_dim.div_ceil(2);
        let scale = 1.0 / (informative as f64).sqrt();
        let signal = (0..cfg.content_dim).map(|i| if i < informative { scale } else { 0.0 }).collect();
        Self { cfg, pairs_rng, eval_rng, signal }
    }

    fn examples(&mut self) -> Vec<SyntheticExample> {
        (0..self.cfg.n)
            .map(|id| match self.cfg.scenario {
                Scenario::Sycophancy => self.sycophancy_pair(id),
                Scenario::Length => self.length_pair(id),
                Scenario::Concept => {
                    let positive = self.pairs_rng.random_bool(0.5);
                    let p_concept = if positive { self.cfg.rho } else { 1.0 - self.cfg.rho };
                    let concept = self.pairs_rng.random_bool(p_concept);
                    let mut rng = self.pairs_rng.clone();
                    let ex = self.concept_pair(&mut rng, id, positive, concept);
                    self.pairs_rng = rng;
                    ex
                }
                Scenario::Discrimination => {
                    let groups = self.cfg.groups();
                    let group = self.pairs_rng.random_range(0..groups);
                    let mut rng = self.pairs_rng.clone();
                    let ex = self.decision_pair(&mut rng, id, group, true);
                    self.pairs_rng = rng;
                    ex
                }
            })
            .collect()
    }

    fn eval_set(&mut self) -> EvalSet {
        let cfg = self.cfg;
        match cfg.scenario {
            Scenario::Sycophancy => EvalSet::Candidates(CandidateSet {
                prompts: (0..cfg.eval_prompts).map(|_| self.sycophancy_candidates()).collect(),
            }),
            Scenario::Length => EvalSet::Candidates(CandidateSet {
                prompts: (0..cfg.eval_prompts).map(|_| self.length_candidates()).collect(),
            }),
            Scenario::Concept => {
                // cycle through (concept, label) cells so each stratum stays
                // label-balanced
                let mut rng = self.eval_rng.clone();
                let out = (0..cfg.eval_prompts)
                    .map(|i| {
                        let concept = i % 2 == 1;
                        let positive = (i / 2) % 2 == 1;
                        self.concept_pair(&mut rng, i, positive, concept)
                    })
                    .collect();
                self.eval_rng = rng;
                EvalSet::Pairs(out)
            }
            Scenario::Discrimination => {
                let groups = cfg.groups();
                let mut rng = self.eval_rng.clone();
                let out = (0..cfg.eval_prompts).map(|i| self.decision_pair(&mut rng, i, i % groups, false)).collect();
                self.eval_rng = rng;
                EvalSet::Pairs(out)
            }
        }
    }

    fn content(&self, rng: &mut ChaCha8Rng, signal_strength: f64) -> Vec<f64> {
        self.signal.iter().map(|&u| signal_strength * u + self.cfg.noise * normal(rng)).collect()
    }

    fn sycophancy_response(&mut self, quality: f64, marker: bool) -> Response {
        let mut rng = self.pairs_rng.clone();
        let mut features = self.content(&mut rng, quality);
        self.pairs_rng = rng;
        features.push(flag(marker));
        Response { features, z: flag(marker), latent: Latent { quality, marker: Some(marker), ..Latent::default() } }
    }

    fn sycophancy_pair(&mut self, id: usize) -> SyntheticExample {
        let qa = normal(&mut self.pairs_rng);
        let qb = normal(&mut self.pairs_rng);
        let (better, worse) = if qa >= qb { (qa, qb) } else { (qb, qa) };
        let marker_on_chosen = self.pairs_rng.random_bool(self.cfg.rho);
        let chosen = self.sycophancy_response(better, marker_on_chosen);
        let rejected = self.sycophancy_response(worse, !marker_on_chosen);
        SyntheticExample { id, chosen, rejected }
    }

    /// Near-duplicate candidates around one prompt-level response.
    fn sycophancy_candidates(&mut self) -> Vec<Response> {
        let cfg = self.cfg;
        let mut rng = self.eval_rng.clone();
        let base_quality = normal(&mut rng);
        let base = self.content(&mut rng, base_quality);
        let out = (0..cfg.candidates)
            .map(|_| {
                let delta: Vec<f64> = (0..cfg.content_dim).map(|_| cfg.candidate_spread * normal(&mut rng)).collect();
                let quality = base_quality + delta.iter().zip(&self.signal).map(|(d, u)| d * u).sum::<f64>();
                let marker = rng.random_bool(cfg.marker_rate);
                let mut features: Vec<f64> = base.iter().zip(&delta).map(|(b, d)| b + d).collect();
                features.push(flag(marker));
                Response {
                    features,
                    z: flag(marker),
                    latent: Latent { quality, marker: Some(marker), ..Latent::default() },
                }
            })
            .collect();
        self.eval_rng = rng;
        out
    }

    fn length_response(&self, rng: &mut ChaCha8Rng) -> Response {
        let quality = normal(rng);
        let length = rng.random_range(LENGTH_MIN..=LENGTH_MAX);
        let mut features = self.content(rng, quality);
        features.push((length - length_mean()) / length_sd());
        Response { features, z: length, latent: Latent { quality, length: Some(length), ..Latent::default() } }
    }

    fn length_pair(&mut self, id: usize) -> SyntheticExample {
        let mut rng = self.pairs_rng.clone();
        let a = self.length_response(&mut rng);
        let b = self.length_response(&mut rng);
        let (la, lb) = (a.z, b.z);
        let logit = (a.latent.quality - b.latent.quality) + self.cfg.beta_spur * (la - lb) / length_sd();
        let a_chosen = rng.random_bool(sigmoid(logit));
        self.pairs_rng = rng;
        let (chosen, rejected) = if a_chosen { (a, b) } else { (b, a) };
        SyntheticExample { id, chosen, rejected }
    }

    fn length_candidates(&mut self) -> Vec<Response> {
        let mut rng = self.eval_rng.clone();
        let out = (0..self.cfg.candidates).map(|_| self.length_response(&mut rng)).collect();
        self.eval_rng = rng;
        out
    }

    /// Responses are the two possible answers; each answer's features are
    /// the review features signed by the answer it gives.
    fn concept_pair(&self, rng: &mut ChaCha8Rng, id: usize, positive: bool, concept: bool) -> SyntheticExample {
        let sentiment = if positive { 1.0 } else { -1.0 };
        let mut review = self.content(rng, sentiment);
        review.push(flag(concept));
        let answer = |says_positive: bool| {
            let sign = if says_positive { 1.0 } else { -1.0 };
            Response {
                features: review.iter().map(|v| sign * v).collect(),
                z: flag(concept),
                latent: Latent {
                    quality: flag(says_positive == positive),
                    concept: Some(concept),
                    positive: Some(says_positive),
                    ..Latent::default()
                },
            }
        };
        SyntheticExample { id, chosen: answer(positive), rejected: answer(!positive) }
    }

    /// The "yes" answer sees merit features plus the group one-hot; the "no"
    /// answer is the all-zero response.
    fn decision_pair(&self, rng: &mut ChaCha8Rng, id: usize, group: usize, annotated: bool) -> SyntheticExample {
        let cfg = self.cfg;
        let groups = cfg.groups();
        let merit = normal(rng);
        let mut yes_features = self.content(rng, merit);
        yes_features.extend((0..groups).map(|g| flag(g == group)));
        let say_yes = if annotated {
            let bias = if cfg.biased_groups.contains(&group) { 1.0 } else { 0.0 };
            rng.random_bool(sigmoid(cfg.merit_scale * merit + cfg.beta_spur * bias))
        } else {
            merit > 0.0
        };
        let response = |yes: bool, features: Vec<f64>| Response {
            features,
            z: group as f64,
            latent: Latent {
                quality: flag(yes == (merit > 0.0)),
                positive: Some(yes),
                group: Some(group),
                merit: Some(merit),
                ..Latent::default()
            },
        };
        let yes = response(true, yes_features);
        let no = response(false, vec![0.0; cfg.content_dim + groups]);
        let (chosen, rejected) = if say_yes { (yes, no) } else { (no, yes) };
        SyntheticExample { id, chosen, rejected }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Empirical strength of the planted correlation in a set of examples.
pub fn spurious_stats(
    scenario: Scenario,
    examples: &[SyntheticExample],
    biased_groups: &[usize],
) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    let n = examples.len().max(1) as f64;
    match scenario {
        Scenario::Sycophancy => {
            let on_chosen = examples.iter().filter(|e| e.chosen.latent.marker == Some(true)).count();
            out.insert("marker_on_chosen_rate".into(), on_chosen as f64 / n);
        }
        Scenario::Length => {
            let longer = examples.iter().filter(|e| e.chosen.z > e.rejected.z).count();
            out.insert("longer_chosen_rate".into(), longer as f64 / n);
            let diff: f64 = examples.iter().map(|e| e.chosen.z - e.rejected.z).sum();
            out.insert("mean_length_gap".into(), diff / n);
        }
        Scenario::Concept => {
            let mut counts = [[0usize; 2]; 2]; // [concept][positive]
            for e in examples {
                let c = e.chosen.latent.concept == Some(true);
                let pos = e.chosen.latent.positive == Some(true);
                counts[usize::from(c)][usize::from(pos)] += 1;
            }
            let rate = |pos: usize| {
                let total = counts[0][pos] + counts[1][pos];
                if total == 0 {
                    0.0
                } else {
                    counts[1][pos] as f64 / total as f64
                }
            };
            out.insert("concept_rate_given_positive".into(), rate(1));
            out.insert("concept_rate_given_negative".into(), rate(0));
            out.insert("concept_label_mutual_information".into(), mutual_information(&counts));
        }
        Scenario::Discrimination => {
            let (mut fav_b, mut tot_b, mut fav_u, mut tot_u) = (0usize, 0usize, 0usize, 0usize);
            for e in examples {
                let g = e.chosen.latent.group.unwrap_or(usize::MAX);
                let yes = e.chosen.latent.positive == Some(true);
                if biased_groups.contains(&g) {
                    tot_b += 1;
                    fav_b += usize::from(yes);
                } else {
                    tot_u += 1;
                    fav_u += usize::from(yes);
                }
            }
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            out.insert("favorable_rate_biased_groups".into(), ratio(fav_b, tot_b));
            out.insert("favorable_rate_other_groups".into(), ratio(fav_u, tot_u));
            out.insert("favorable_rate_gap".into(), ratio(fav_b, tot_b) - ratio(fav_u, tot_u));
        }
    }
    out
}

/// Plug-in mutual information (nats) of a 2x2 contingency table.
pub fn mutual_information(counts: &[[usize; 2]; 2]) -> f64 {
    let total: usize = counts.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    let row = |i: usize| (counts[i][0] + counts[i][1]) as f64 / t;
    let col = |j: usize| (counts[0][j] + counts[1][j]) as f64 / t;
    let mut mi = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let p = counts[i][j] as f64 / t;
            if p > 0.0 {
                mi += p * (p / (row(i) * col(j))).ln();
            }
        }
    }
    mi
}
