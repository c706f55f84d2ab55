//! Gaussian kernels and squared maximum mean discrepancy between scalar
//! samples, including the pairwise-over-bins sum used as the invariance
//! penalty.
//!
//! All double sums run in a fixed `i`-outer, `j`-inner order so results are
//! reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{contract, ensure_finite, Error, Result};

/// Smallest bandwidth the median heuristic will return.
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Median of all pairwise absolute differences in the pooled sample.
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { bandwidth: Bandwidth::MedianHeuristic }
    }
}

impl KernelSpec {
    pub fn fixed(sigma: f64) -> Self {
        Self { bandwidth: Bandwidth::Fixed(sigma) }
    }

    /// Resolves the bandwidth against a pooled sample.
    pub fn resolve(&self, pooled: &[f64]) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Fixed(sigma) => {
                if sigma > 0.0 && sigma.is_finite() {
                    Ok(sigma)
                } else {
                    contract(format!("fixed bandwidth must be positive and finite, got {sigma}"))
                }
            }
            Bandwidth::MedianHeuristic => {
                ensure_finite(pooled, "bandwidth sample")?;
                Ok(median_pairwise_distance(pooled).max(BANDWIDTH_FLOOR))
            }
        }
    }
}

/// Median of `|x_i - x_j|` over `i < j`; zero for fewer than two points.
pub fn median_pairwise_distance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mut diffs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            diffs.push((xs[i] - xs[j]).abs());
        }
    }
    let len = diffs.len();
    let mid = len / 2;
    let (_, upper, _) = diffs.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if len % 2 == 1 {
        upper
    } else {
        let lower = diffs[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// V-statistic; includes the diagonal and is never negative.
    #[default]
    Biased,
    /// U-statistic; excludes the diagonal and may dip below zero.
    Unbiased,
}

impl Estimator {
    /// Smallest sample a bin must hold to take part.
    pub fn min_size(self) -> usize {
        match self {
            Estimator::Biased => 1,
            Estimator::Unbiased => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Biased => "biased",
            Estimator::Unbiased => "unbiased",
        }
    }
}

/// `exp(-(a - b)^2 / (2 sigma^2))`.
pub fn gaussian_kernel(a: f64, b: f64, sigma: f64) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return contract("kernel arguments must be finite");
    }
    check_sigma(sigma)?;
    Ok(kernel(a, b, gamma(sigma)))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        contract(format!("bandwidth must be positive and finite, got {sigma}"))
    }
}

#[inline]
fn gamma(sigma: f64) -> f64 {
    1.0 / (2.0 * sigma * sigma)
}

#[inline]
fn kernel(a: f64, b: f64, gamma: f64) -> f64 {
    let d = a - b;
    (-d * d * gamma).exp()
}

/// Row-major Gram matrix of a sample.
pub fn gram_matrix(xs: &[f64], sigma: f64) -> Result<Vec<f64>> {
    ensure_finite(xs, "gram sample")?;
    check_sigma(sigma)?;
    let g = gamma(sigma);
    let n = xs.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = kernel(xs[i], xs[j], g);
        }
    }
    Ok(out)
}

pub fn mmd2_biased(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    Ok(mmd2_with_grad(x, y, sigma, Estimator::Biased)?.value)
}

pub fn mmd2_unbiased(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    Ok(mmd2_with_grad(x, y, sigma, Estimator::Unbiased)?.value)
}

pub fn mmd2(x: &[f64], y: &[f64], sigma: f64, estimator: Estimator) -> Result<f64> {
    Ok(mmd2_with_grad(x, y, sigma, estimator)?.value)
}

/// Squared MMD with its gradient with respect to every sample value.
#[derive(Debug, Clone, PartialEq)]
pub struct Mmd2Grad {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
}

pub fn mmd2_with_grad(x: &[f64], y: &[f64], sigma: f64, estimator: Estimator) -> Result<Mmd2Grad> {
    for s in [x, y] {
        if s.len() < estimator.min_size() {
            return Err(Error::SampleTooSmall {
                estimator: estimator.name(),
                needed: estimator.min_size(),
                got: s.len(),
            });
        }
    }
    let values: Vec<f64> = x.iter().chain(y).copied().collect();
    let labels: Vec<usize> = std::iter::repeat_n(0, x.len()).chain(std::iter::repeat_n(1, y.len())).collect();
    let out = labeled_bin_mmd(&values, &labels, 2, sigma, estimator)?;
    let mut grad_x = out.grad;
    let grad_y = grad_x.split_off(x.len());
    Ok(Mmd2Grad { value: out.summary.value, grad_x, grad_y })
}

/// Result of a pairwise-over-bins MMD evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BinMmd {
    /// Sum over unordered pairs of usable bins of squared MMD.
    pub value: f64,
    /// Number of unordered bin pairs that contributed.
    pub pairs: usize,
    /// Bins left out for holding fewer points than the estimator needs.
    pub skipped_bins: Vec<usize>,
    /// Fewer than two bins were usable, so the penalty is empty.
    pub degenerate: bool,
}

/// Sum of squared MMD over every unordered pair of distinct bins.
pub fn pairwise_bin_mmd<S: AsRef<[f64]>>(samples_by_bin: &[S], sigma: f64, estimator: Estimator) -> Result<BinMmd> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (b, s) in samples_by_bin.iter().enumerate() {
        values.extend_from_slice(s.as_ref());
        labels.extend(std::iter::repeat_n(b, s.as_ref().len()));
    }
    Ok(labeled_bin_mmd(&values, &labels, samples_by_bin.len(), sigma, estimator)?.summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinMmdGrad {
    pub summary: BinMmd,
    /// Derivative of the summed penalty with respect to each input value.
    pub grad: Vec<f64>,
}

/// Pairwise-over-bins squared MMD for values tagged with bin labels, with the
/// gradient with respect to each value.
///
/// Expanding every pair term gives a single weighted double sum over the
/// pooled values: with `U` usable bins, a within-bin pair in bin `m` weighs
/// `(U - 1) / n_m^2` (or `(U - 1) / (n_m (n_m - 1))` off-diagonal for the
/// unbiased estimator) and a cross-bin pair `-1 / (n_m n_m')` per ordered
/// pair. This costs `O(N^2)` regardless of the bin count.
pub fn labeled_bin_mmd(
    values: &[f64],
    labels: &[usize],
    n_bins: usize,
    sigma: f64,
    estimator: Estimator,
) -> Result<BinMmdGrad> {
    if values.len() != labels.len() {
        return Err(Error::LengthMismatch { context: "bin labels", expected: values.len(), got: labels.len() });
    }
    ensure_finite(values, "mmd sample")?;
    check_sigma(sigma)?;
    let mut counts = vec![0usize; n_bins];
    for &b in labels {
        if b >= n_bins {
            return contract(format!("bin label {b} out of range for {n_bins} bins"));
        }
        counts[b] += 1;
    }
    let min = estimator.min_size();
    let usable: Vec<bool> = counts.iter().map(|&c| c >= min).collect();
    let skipped_bins: Vec<usize> = (0..n_bins).filter(|&b| counts[b] > 0 && !usable[b]).collect();
    let n_usable = usable.iter().filter(|&&u| u).count();
    let mut grad = vec![0.0; values.len()];
    if n_usable < 2 {
        return Ok(BinMmdGrad { summary: BinMmd { value: 0.0, pairs: 0, skipped_bins, degenerate: true }, grad });
    }

    let within_scale = (n_usable - 1) as f64;
    let within: Vec<f64> = counts
        .iter()
        .zip(&usable)
        .map(|(&c, &u)| {
            if !u {
                0.0
            } else {
                let c = c as f64;
                match estimator {
                    Estimator::Biased => within_scale / (c * c),
                    Estimator::Unbiased => within_scale / (c * (c - 1.0)),
                }
            }
        })
        .collect();
    let weight = |a: usize, b: usize| -> f64 {
        if !usable[a] || !usable[b] {
            0.0
        } else if a == b {
            within[a]
        } else {
            -1.0 / (counts[a] as f64 * counts[b] as f64)
        }
    };

    let g = gamma(sigma);
    let inv_sigma2 = 2.0 * g;
    let mut diagonal = 0.0;
    if estimator == Estimator::Biased {
        for &b in labels {
            diagonal += within[b];
        }
    }
    let mut off = 0.0;
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            let w = weight(labels[i], labels[j]);
            if w == 0.0 {
                continue;
            }
            let k = kernel(values[i], values[j], g);
            off += w * k;
            // d k(a, b) / d a = -(a - b) / sigma^2 * k
            let dk = -(values[i] - values[j]) * inv_sigma2 * k;
            grad[i] += 2.0 * w * dk;
            grad[j] -= 2.0 * w * dk;
        }
    }
    Ok(BinMmdGrad {
        summary: BinMmd {
            value: diagonal + 2.0 * off,
            pairs: n_usable * (n_usable - 1) / 2,
            skipped_bins,
            degenerate: false,
        },
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::check_gradient;
    use proptest::prelude::*;

    #[test]
    fn kernel_closed_forms() {
        assert_eq!(gaussian_kernel(5.0, 5.0, 0.3).unwrap(), 1.0);
        let e = (-0.5f64).exp();
        assert!((gaussian_kernel(0.0, 1.7, 1.7).unwrap() - e).abs() < 1e-15);
        assert!((gaussian_kernel(1.3, -0.7, 2.0).unwrap() - e).abs() < 1e-15);
        assert!((e - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn kernel_rejects_bad_input() {
        assert!(gaussian_kernel(f64::NAN, 0.0, 1.0).is_err());
        assert!(gaussian_kernel(0.0, f64::INFINITY, 1.0).is_err());
        assert!(gaussian_kernel(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn biased_singletons_closed_form() {
        let v = mmd2_biased(&[0.0], &[2.0], 2f64.sqrt()).unwrap();
        let expected = 2.0 - 2.0 * (-1.0f64).exp();
        assert!((v - expected).abs() < 1e-14);
        assert!((v - 1.26424).abs() < 1e-5);
    }

    #[test]
    fn identical_and_permuted_samples_have_zero_mmd() {
        assert!(mmd2_biased(&[0.3, 1.0, -2.0], &[0.3, 1.0, -2.0], 0.7).unwrap().abs() < 1e-12);
        assert!(mmd2_biased(&[0.0, 1.0], &[1.0, 0.0], 1.0).unwrap().abs() < 1e-12);
        assert!(mmd2_unbiased(&[0.0, 0.0], &[0.0, 0.0], 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn estimator_size_preconditions() {
        assert!(matches!(mmd2_biased(&[], &[1.0], 1.0), Err(Error::SampleTooSmall { .. })));
        assert!(matches!(mmd2_unbiased(&[1.0], &[1.0, 2.0], 1.0), Err(Error::SampleTooSmall { .. })));
    }

    #[test]
    fn median_heuristic() {
        let spec = KernelSpec::default();
        // diffs: 1, 3, 2 -> median 2
        assert_eq!(spec.resolve(&[0.0, 1.0, 3.0]).unwrap(), 2.0);
        // diffs: 1,2,3,1,2,1 -> sorted 1,1,1,2,2,3 -> 1.5
        assert_eq!(spec.resolve(&[0.0, 1.0, 2.0, 3.0]).unwrap(), 1.5);
        assert_eq!(spec.resolve(&[4.0, 4.0, 4.0]).unwrap(), BANDWIDTH_FLOOR);
        assert!(KernelSpec::fixed(-1.0).resolve(&[]).is_err());
    }

    #[test]
    fn pairwise_bins_identical_is_zero() {
        let s = vec![0.1, 0.5, -0.3];
        let v = pairwise_bin_mmd(&[s.clone(), s.clone(), s], 0.8, Estimator::Biased).unwrap();
        assert!(v.value.abs() < 1e-10);
        assert_eq!(v.pairs, 3);
    }

    #[test]
    fn pairwise_bins_skip_empty() {
        let a = vec![0.0, 1.0];
        let b = vec![2.0, 2.5, 3.0];
        let v = pairwise_bin_mmd(&[a.clone(), vec![], b.clone()], 1.0, Estimator::Biased).unwrap();
        let direct = mmd2_biased(&a, &b, 1.0).unwrap();
        assert!((v.value - direct).abs() < 1e-12);
        assert_eq!(v.pairs, 1);
        assert!(v.skipped_bins.is_empty());
    }

    #[test]
    fn pairwise_bins_report_skipped_and_degenerate() {
        let v = pairwise_bin_mmd(&[vec![0.0, 1.0], vec![3.0]], 1.0, Estimator::Unbiased).unwrap();
        assert!(v.degenerate);
        assert_eq!(v.value, 0.0);
        assert_eq!(v.skipped_bins, vec![1]);
    }

    #[test]
    fn pairwise_bins_composition() {
        let bins = [vec![0.1, -0.4, 0.9, 1.3, 0.2], vec![1.1, 0.7, 2.2, -0.1, 0.5], vec![-1.0, -0.6, 0.0, 0.4, -2.1]];
        for est in [Estimator::Biased, Estimator::Unbiased] {
            let total = pairwise_bin_mmd(&bins, 0.9, est).unwrap().value;
            let mut composed = 0.0;
            for a in 0..3 {
                for b in (a + 1)..3 {
                    composed += mmd2(&bins[a], &bins[b], 0.9, est).unwrap();
                }
            }
            assert!((total - composed).abs() < 1e-12, "{est:?}: {total} vs {composed}");
        }
    }

    #[test]
    fn estimator_gradients_pass_check() {
        let x = [0.3, -1.2, 0.8, 2.0];
        let y = [1.5, 0.1, -0.4];
        for est in [Estimator::Biased, Estimator::Unbiased] {
            let split = |p: &[f64]| (p[..4].to_vec(), p[4..].to_vec());
            let at: Vec<f64> = x.iter().chain(&y).copied().collect();
            let report = check_gradient(
                |p| {
                    let (a, b) = split(p);
                    mmd2(&a, &b, 1.1, est).unwrap()
                },
                |p| {
                    let (a, b) = split(p);
                    let g = mmd2_with_grad(&a, &b, 1.1, est)?;
                    Ok(g.grad_x.into_iter().chain(g.grad_y).collect())
                },
                &at,
                1e-5,
            )
            .unwrap();
            assert!(report.passed, "{est:?}: {report:?}");
        }
    }

    #[test]
    fn labeled_gradient_passes_check() {
        let values = [0.3, -1.2, 0.8, 2.0, 1.5, 0.1, -0.4, 0.9, 0.0];
        let labels = [0, 1, 2, 0, 1, 2, 0, 1, 1];
        for est in [Estimator::Biased, Estimator::Unbiased] {
            let report = check_gradient(
                |p| labeled_bin_mmd(p, &labels, 3, 0.7, est).unwrap().summary.value,
                |p| Ok(labeled_bin_mmd(p, &labels, 3, 0.7, est)?.grad),
                &values,
                1e-5,
            )
            .unwrap();
            assert!(report.passed, "{est:?}: {report:?}");
        }
    }

    fn sample() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, 2..12)
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric(a in -1e3f64..1e3, b in -1e3f64..1e3, s in 1e-3f64..1e2) {
            prop_assert_eq!(gaussian_kernel(a, b, s).unwrap(), gaussian_kernel(b, a, s).unwrap());
            let k = gaussian_kernel(a, b, s).unwrap();
            prop_assert!((0.0..=1.0).contains(&k));
        }

        #[test]
        fn biased_is_nonnegative_and_zero_on_self(x in sample(), y in sample(), s in 0.1f64..5.0) {
            prop_assert!(mmd2_biased(&x, &y, s).unwrap() >= -1e-12);
            prop_assert!(mmd2_biased(&x, &x, s).unwrap().abs() < 1e-12);
        }

        #[test]
        fn estimators_symmetric_and_permutation_invariant(x in sample(), y in sample(), s in 0.1f64..5.0, rot in 0usize..12) {
            for est in [Estimator::Biased, Estimator::Unbiased] {
                let v = mmd2(&x, &y, s, est).unwrap();
                prop_assert!((v - mmd2(&y, &x, s, est).unwrap()).abs() < 1e-12);
                let mut xr = x.clone();
                xr.rotate_left(rot % x.len());
                xr.reverse();
                prop_assert!((v - mmd2(&xr, &y, s, est).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn bin_relabeling_invariance(a in sample(), b in sample(), c in sample(), s in 0.1f64..5.0) {
            let v1 = pairwise_bin_mmd(&[a.clone(), b.clone(), c.clone()], s, Estimator::Biased).unwrap().value;
            let v2 = pairwise_bin_mmd(&[c, a, b], s, Estimator::Biased).unwrap().value;
            prop_assert!((v1 - v2).abs() < 1e-12);
        }
    }
}
