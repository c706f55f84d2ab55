//! Discretization of a spurious factor into bins.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// How to discretize, chosen before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BinMode {
    /// At most two observed values.
    Binary,
    Categorical {
        #[serde(default)]
        overflow: bool,
    },
    Quantile {
        bins: usize,
    },
    Uniform {
        bins: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRule {
    Quantile,
    Uniform,
}

/// A fitted, immutable binning of `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BinSpec {
    /// `edges` holds `M + 1` strictly increasing values from the fit-time
    /// minimum to the maximum.
    Continuous { rule: EdgeRule, edges: Vec<f64> },
    /// Category `categories[i]` maps to bin `i`; with `overflow`, unseen
    /// categories land in one extra trailing bin.
    Categorical { binary: bool, categories: Vec<f64>, overflow: bool },
}

/// Per-response bin indices.
pub type BinAssignment = Vec<usize>;

/// Fits a binning on training values of `Z`.
pub fn fit_bins(z_values: &[f64], mode: BinMode) -> Result<BinSpec> {
    if z_values.is_empty() {
        return contract("cannot fit bins on an empty sample");
    }
    if z_values.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("z values"));
    }
    match mode {
        BinMode::Binary | BinMode::Categorical { .. } => {
            let mut categories: Vec<f64> = Vec::new();
            for &z in z_values {
                let z = canonical(z);
                if !categories.iter().any(|c| c.to_bits() == z.to_bits()) {
                    categories.push(z);
                }
            }
            let binary = mode == BinMode::Binary;
            if binary && categories.len() > 2 {
                return contract(format!("binary binning saw {} distinct values", categories.len()));
            }
            let overflow = matches!(mode, BinMode::Categorical { overflow: true });
            Ok(BinSpec::Categorical { binary, categories, overflow })
        }
        BinMode::Quantile { bins } => {
            check_bin_count(bins)?;
            quantile_edges(z_values, bins).map(|edges| BinSpec::Continuous { rule: EdgeRule::Quantile, edges })
        }
        BinMode::Uniform { bins } => {
            check_bin_count(bins)?;
            let (lo, hi) = min_max(z_values);
            if lo == hi {
                return Err(Error::DegenerateBins(format!("all z values equal {lo}")));
            }
            let width = hi - lo;
            let mut edges: Vec<f64> = (0..bins).map(|i| lo + width * i as f64 / bins as f64).collect();
            edges.push(hi);
            Ok(BinSpec::Continuous { rule: EdgeRule::Uniform, edges })
        }
    }
}

fn check_bin_count(bins: usize) -> Result<()> {
    if bins < 2 {
        contract(format!("continuous binning needs at least 2 bins, got {bins}"))
    } else {
        Ok(())
    }
}

fn canonical(z: f64) -> f64 {
    // -0.0 and 0.0 are the same category
    if z == 0.0 {
        0.0
    } else {
        z
    }
}

fn min_max(z: &[f64]) -> (f64, f64) {
    z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Edges sit midway between the order statistics straddling each target
/// rank `round(i n / M)`. When a tie group straddles the target, the edge
/// moves past the right end of the group, or before its left end when the
/// group reaches the maximum. Edges that would repeat are dropped.
fn quantile_edges(z: &[f64], bins: usize) -> Result<Vec<f64>> {
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    if lo == hi {
        return Err(Error::DegenerateBins(format!("all {n} z values equal {lo}; quantile bins would collapse to one")));
    }
    let mut edges = vec![lo];
    for i in 1..bins {
        let p = (i * n + bins / 2) / bins;
        if p == 0 || p >= n {
            continue;
        }
        let edge = if sorted[p - 1] < sorted[p] {
            midpoint(sorted[p - 1], sorted[p])
        } else {
            let tied = sorted[p - 1];
            let q = sorted.partition_point(|&v| v <= tied);
            if q < n {
                midpoint(sorted[q - 1], sorted[q])
            } else {
                // the run reaches the maximum, so split at its left end
                let s = sorted.partition_point(|&v| v < tied);
                if s == 0 {
                    continue;
                }
                midpoint(sorted[s - 1], sorted[s])
            }
        };
        if edge > *edges.last().expect("edges start non-empty") {
            edges.push(edge);
        }
    }
    if edges.len() < 2 {
        return Err(Error::DegenerateBins("quantile edges collapsed".into()));
    }
    edges.push(hi);
    Ok(edges)
}

fn midpoint(a: f64, b: f64) -> f64 {
    a + (b - a) / 2.0
}

impl BinSpec {
    pub fn n_bins(&self) -> usize {
        match self {
            BinSpec::Continuous { edges, .. } => edges.len() - 1,
            BinSpec::Categorical { categories, overflow, .. } => categories.len() + usize::from(*overflow),
        }
    }

    /// Bin index of one value. Continuous bins are half-open `[e_i, e_{i+1})`
    /// with the last closed; out-of-range values clamp to the end bins.
    pub fn assign(&self, z: f64) -> Result<usize> {
        if !z.is_finite() {
            return Err(Error::NonFinite("z value"));
        }
        match self {
            BinSpec::Continuous { edges, .. } => {
                let interior = &edges[1..edges.len() - 1];
                Ok(interior.partition_point(|&e| e <= z))
            }
            BinSpec::Categorical { categories, overflow, .. } => {
                let z = canonical(z);
                match categories.iter().position(|c| c.to_bits() == z.to_bits()) {
                    Some(i) => Ok(i),
                    None if *overflow => Ok(categories.len()),
                    None => Err(Error::UnknownCategory(z)),
                }
            }
        }
    }

    pub fn assign_all(&self, zs: &[f64]) -> Result<BinAssignment> {
        zs.iter().map(|&z| self.assign(z)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn median_split() {
        let z = [1.0, 2.0, 3.0, 4.0];
        let spec = fit_bins(&z, BinMode::Quantile { bins: 2 }).unwrap();
        assert_eq!(spec, BinSpec::Continuous { rule: EdgeRule::Quantile, edges: vec![1.0, 2.5, 4.0] });
        assert_eq!(spec.assign_all(&z).unwrap(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn uniform_edges() {
        let spec = fit_bins(&[0.0, 10.0], BinMode::Uniform { bins: 2 }).unwrap();
        assert_eq!(spec, BinSpec::Continuous { rule: EdgeRule::Uniform, edges: vec![0.0, 5.0, 10.0] });
        assert_eq!(spec.assign_all(&[0.0, 10.0]).unwrap(), vec![0, 1]);
    }

    #[test]
    fn clamp_and_half_open() {
        let spec = fit_bins(&[0.0, 10.0], BinMode::Uniform { bins: 2 }).unwrap();
        assert_eq!(spec.assign(-3.0).unwrap(), 0);
        assert_eq!(spec.assign(5.0).unwrap(), 1);
        assert_eq!(spec.assign(1e9).unwrap(), 1);
    }

    #[test]
    fn identical_values_are_degenerate() {
        assert!(matches!(fit_bins(&[3.0; 5], BinMode::Quantile { bins: 4 }), Err(Error::DegenerateBins(_))));
        assert!(matches!(fit_bins(&[3.0; 5], BinMode::Uniform { bins: 4 }), Err(Error::DegenerateBins(_))));
        assert!(fit_bins(&[], BinMode::Binary).is_err());
        assert!(fit_bins(&[1.0, 2.0], BinMode::Quantile { bins: 1 }).is_err());
    }

    #[test]
    fn ties_move_edge_to_end_of_group() {
        // target split after rank 3 lands inside the run of 2s
        let z = [1.0, 2.0, 2.0, 2.0, 2.0, 3.0];
        let spec = fit_bins(&z, BinMode::Quantile { bins: 2 }).unwrap();
        assert_eq!(spec.assign_all(&z).unwrap(), vec![0, 0, 0, 0, 0, 1]);
        // a run reaching the maximum splits at its left end instead
        let spec = fit_bins(&[1.0, 5.0, 5.0, 5.0], BinMode::Quantile { bins: 2 }).unwrap();
        assert_eq!(spec.assign_all(&[1.0, 5.0]).unwrap(), vec![0, 1]);
        assert!(fit_bins(&[5.0, 5.0, 5.0, 5.0, 6.0], BinMode::Quantile { bins: 2 }).is_ok());
    }

    #[test]
    fn categorical_first_appearance_order() {
        let spec = fit_bins(&[3.0, 1.0, 3.0, 7.0], BinMode::Categorical { overflow: false }).unwrap();
        assert_eq!(spec.n_bins(), 3);
        assert_eq!(spec.assign_all(&[3.0, 1.0, 7.0]).unwrap(), vec![0, 1, 2]);
        assert!(matches!(spec.assign(9.0), Err(Error::UnknownCategory(_))));

        let spec = fit_bins(&[3.0, 1.0], BinMode::Categorical { overflow: true }).unwrap();
        assert_eq!(spec.n_bins(), 3);
        assert_eq!(spec.assign(9.0).unwrap(), 2);
    }

    #[test]
    fn binary_mode() {
        let spec = fit_bins(&[1.0, 0.0, 1.0, -0.0], BinMode::Binary).unwrap();
        assert_eq!(spec.assign_all(&[1.0, 0.0, -0.0]).unwrap(), vec![0, 1, 1]);
        assert!(fit_bins(&[0.0, 1.0, 2.0], BinMode::Binary).is_err());
    }

    #[test]
    fn quantile_balance_on_uniform_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1000;
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(10.0..500.0)).collect();
        let spec = fit_bins(&z, BinMode::Quantile { bins: 10 }).unwrap();
        let mut counts = vec![0usize; spec.n_bins()];
        for b in spec.assign_all(&z).unwrap() {
            counts[b] += 1;
        }
        assert_eq!(counts.len(), 10);
        for c in counts {
            assert!((99..=101).contains(&c), "count {c}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_total_and_monotone(z in prop::collection::vec(-100.0f64..100.0, 2..200), m in 2usize..12, q in any::<bool>()) {
            let mode = if q { BinMode::Quantile { bins: m } } else { BinMode::Uniform { bins: m } };
            let Ok(spec) = fit_bins(&z, mode) else { return Ok(()); };
            let n_bins = spec.n_bins();
            prop_assert!(n_bins >= 2 && n_bins <= m);
            let fitted = spec.assign_all(&z).unwrap();
            let mut pairs: Vec<(f64, usize)> = z.iter().copied().zip(fitted).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
                if w[0].0 == w[1].0 { prop_assert_eq!(w[0].1, w[1].1); }
            }
            for &(_, b) in &pairs { prop_assert!(b < n_bins); }
            if let BinSpec::Continuous { edges, .. } = &spec {
                prop_assert!(edges.windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn quantile_balance_distinct(raw in prop::collection::btree_set(-10_000i32..10_000, 20..300), m in 2usize..10) {
            let z: Vec<f64> = raw.into_iter().map(f64::from).collect();
            let spec = fit_bins(&z, BinMode::Quantile { bins: m }).unwrap();
            let mut counts = vec![0usize; spec.n_bins()];
            for b in spec.assign_all(&z).unwrap() { counts[b] += 1; }
            let max = *counts.iter().max().unwrap();
            let min = *counts.iter().min().unwrap();
            prop_assert!(max - min <= 1, "{:?}", counts);
        }
    }
}
