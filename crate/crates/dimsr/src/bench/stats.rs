//! Paired Wilcoxon signed-rank test with tie handling, plus the
//! Bonferroni-corrected pairwise comparison report used to compare
//! homogeneity modes on the same trials.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("paired samples differ in length: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least {needed} paired observations, got {n}")]
    TooFewPairs { n: usize, needed: usize },
    #[error("paired differences must be finite")]
    NonFiniteDifference,
}

/// Largest effective sample size for which the exact conditional
/// distribution is used; beyond it the normal approximation takes over.
pub const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// Pairs remaining after zero differences are dropped.
    pub n_effective: usize,
    /// Sum of the ranks of positive differences (midranks under ties).
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// True when the exact distribution was enumerated.
    pub exact: bool,
    /// True when every difference was zero; `p_value` is 1 and the
    /// comparison carries no information.
    pub degenerate: bool,
}

/// Two-sided paired Wilcoxon signed-rank test of `a` vs `b`.
///
/// Zero differences are dropped; tied absolute differences share their
/// midrank. With at most [`EXACT_LIMIT`] effective pairs the p-value
/// comes from the exact conditional distribution over all sign
/// assignments (computed by dynamic programming over doubled midranks,
/// which are integers); larger samples use the normal approximation with
/// tie-corrected variance and continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    if a.is_empty() {
        return Err(StatsError::TooFewPairs { n: 0, needed: 1 });
    }
    let mut diffs: Vec<f64> = Vec::with_capacity(a.len());
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        if !d.is_finite() {
            return Err(StatsError::NonFiniteDifference);
        }
        if d != 0.0 {
            diffs.push(d);
        }
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n_effective: 0,
            w_plus: 0.0,
            w_minus: 0.0,
            p_value: 1.0,
            exact: true,
            degenerate: true,
        });
    }

    // Midranks over |d|, kept doubled so ties stay on an integer grid.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).expect("finite"));
    let mut doubled_rank = vec![0i64; n];
    let mut tie_sizes: Vec<i64> = Vec::new();
    let mut lo = 0;
    while lo < n {
        let mut hi = lo;
        while hi + 1 < n && diffs[order[hi + 1]].abs() == diffs[order[lo]].abs() {
            hi += 1;
        }
        // Positions lo..=hi (1-based lo+1..=hi+1) share midrank
        // (lo + hi + 2) / 2, i.e. doubled rank lo + hi + 2.
        for k in lo..=hi {
            doubled_rank[order[k]] = (lo + hi + 2) as i64;
        }
        tie_sizes.push((hi - lo + 1) as i64);
        lo = hi + 1;
    }

    let doubled_w_plus: i64 = diffs
        .iter()
        .zip(&doubled_rank)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let doubled_total = (n * (n + 1)) as i64;
    let doubled_w_minus = doubled_total - doubled_w_plus;
    let doubled_w_small = doubled_w_plus.min(doubled_w_minus);

    let (p_value, exact) = if n <= EXACT_LIMIT {
        (exact_p(&doubled_rank, doubled_w_small), true)
    } else {
        let nf = n as f64;
        let w = doubled_w_small as f64 / 2.0;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: i64 = tie_sizes.iter().map(|t| t * t * t - t).sum();
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term as f64 / 48.0;
        // Continuity correction: w is the smaller rank sum, so the
        // relevant tail is the lower one.
        let z = (w - mean + 0.5) / var.sqrt();
        ((2.0 * normal_cdf(z)).min(1.0), false)
    };

    Ok(WilcoxonResult {
        n_effective: n,
        w_plus: doubled_w_plus as f64 / 2.0,
        w_minus: doubled_w_minus as f64 / 2.0,
        p_value,
        exact,
        degenerate: false,
    })
}

/// Exact two-sided p: 2 · P(W ≤ w_small) under random signs, computed
/// by dynamic programming over the distribution of the doubled rank sum.
fn exact_p(doubled_ranks: &[i64], doubled_w_small: i64) -> f64 {
    let max: i64 = doubled_ranks.iter().sum();
    let mut dist = vec![0.0f64; max as usize + 1];
    dist[0] = 1.0;
    for &r in doubled_ranks {
        for s in (r..=max).rev() {
            dist[s as usize] += dist[(s - r) as usize];
        }
    }
    let below: f64 = dist[..=doubled_w_small as usize].iter().sum();
    let total = (doubled_ranks.len() as f64).exp2();
    (2.0 * below / total).min(1.0)
}

/// Standard normal CDF via the Abramowitz–Stegun erf approximation
/// (absolute error below 1.5e-7, ample for reporting p-values).
fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// One pairwise comparison in a multi-method report.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PairResult {
    pub a: String,
    pub b: String,
    pub n_effective: usize,
    pub w_plus: f64,
    pub p_value: f64,
    /// Bonferroni-corrected threshold this pair was judged against.
    pub alpha: f64,
    pub significant: bool,
    /// `ns`, `*`, `**`, or `***` at α, α/10, and α/100.
    pub grade: String,
    pub degenerate: bool,
}

/// Runs all pairwise signed-rank tests between methods, Bonferroni-
/// correcting `alpha_base` by the number of comparisons. Samples must be
/// paired (same trials in the same order) with at least 6 observations.
pub fn wilcoxon_report(
    samples: &BTreeMap<String, Vec<f64>>,
    alpha_base: f64,
) -> Result<Vec<PairResult>, StatsError> {
    let names: Vec<&String> = samples.keys().collect();
    if names.len() < 2 {
        return Ok(Vec::new());
    }
    for values in samples.values() {
        if values.len() < 6 {
            return Err(StatsError::TooFewPairs {
                n: values.len(),
                needed: 6,
            });
        }
    }
    let comparisons = names.len() * (names.len() - 1) / 2;
    let alpha = alpha_base / comparisons as f64;
    let mut results = Vec::with_capacity(comparisons);
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let a = &samples[names[i]];
            let b = &samples[names[j]];
            let test = wilcoxon_signed_rank(a, b)?;
            let grade = if test.p_value < alpha / 100.0 {
                "***"
            } else if test.p_value < alpha / 10.0 {
                "**"
            } else if test.p_value < alpha {
                "*"
            } else {
                "ns"
            };
            results.push(PairResult {
                a: names[i].clone(),
                b: names[j].clone(),
                n_effective: test.n_effective,
                w_plus: test.w_plus,
                p_value: test.p_value,
                alpha,
                significant: test.p_value < alpha,
                grade: grade.to_string(),
                degenerate: test.degenerate,
            });
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Independent oracle: enumerate every sign assignment directly.
    fn brute_force_p(a: &[f64], b: &[f64]) -> f64 {
        let diffs: Vec<f64> = a
            .iter()
            .zip(b)
            .map(|(x, y)| x - y)
            .filter(|d| *d != 0.0)
            .collect();
        let n = diffs.len();
        if n == 0 {
            return 1.0;
        }
        // Doubled midranks: tied |d| values share lo+hi+2 where lo..hi
        // are their 0-based sorted positions.
        let mut sorted: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let doubled: Vec<i64> = diffs
            .iter()
            .map(|d| {
                let lo = sorted.iter().filter(|s| **s < d.abs()).count();
                let hi = lo + sorted.iter().filter(|s| **s == d.abs()).count() - 1;
                (lo + hi + 2) as i64
            })
            .collect();
        let w_plus: i64 = diffs
            .iter()
            .zip(&doubled)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, r)| *r)
            .sum();
        let total: i64 = doubled.iter().sum();
        let w_small = w_plus.min(total - w_plus);
        let mut below = 0u64;
        for mask in 0u32..(1 << n) {
            let s: i64 = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| doubled[i])
                .sum();
            if s <= w_small {
                below += 1;
            }
        }
        (2.0 * below as f64 / (n as f64).exp2()).min(1.0)
    }

    #[test]
    fn exact_matches_brute_force_enumeration() {
        let mut rng = StdRng::seed_from_u64(23);
        for trial in 0..200 {
            let n = rng.random_range(1..=12);
            // Snap to a coarse grid so ties and zeros actually occur.
            let a: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(-4.0..4.0f64) * 2.0).round() / 2.0)
                .collect();
            let b: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(-4.0..4.0f64) * 2.0).round() / 2.0)
                .collect();
            let expected = brute_force_p(&a, &b);
            let got = wilcoxon_signed_rank(&a, &b).unwrap();
            assert!(
                (got.p_value - expected).abs() < 1e-12,
                "trial {trial}: {} vs {expected} for {a:?} / {b:?}",
                got.p_value
            );
        }
    }

    #[test]
    fn textbook_value_n10_w8() {
        // Ten distinct differences whose smaller rank sum is 8
        // (positive ranks 1, 3, 4): two-sided p = 50/1024.
        let a = [1.0, -2.0, 3.0, 4.0, -5.0, -6.0, -7.0, -8.0, -9.0, -10.0];
        let b = [0.0; 10];
        let result = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(result.n_effective, 10);
        assert_eq!(result.w_plus, 8.0);
        assert_eq!(result.w_minus, 47.0);
        assert!(result.exact);
        assert!((result.p_value - 0.048828125).abs() < 1e-12);
    }

    #[test]
    fn all_zero_differences_are_degenerate() {
        let a = [1.5, 2.5, 3.5];
        let result = wilcoxon_signed_rank(&a, &a).unwrap();
        assert!(result.degenerate);
        assert_eq!(result.p_value, 1.0);
        assert_eq!(result.n_effective, 0);
    }

    #[test]
    fn swapping_sides_swaps_rank_sums() {
        let a = [1.0, 2.0, 5.0, 0.5, 3.0, 2.0];
        let b = [0.5, 2.5, 1.0, 0.25, 2.0, 4.0];
        let ab = wilcoxon_signed_rank(&a, &b).unwrap();
        let ba = wilcoxon_signed_rank(&b, &a).unwrap();
        assert_eq!(ab.w_plus, ba.w_minus);
        assert_eq!(ab.w_minus, ba.w_plus);
        assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn approximation_tracks_exact_distribution() {
        // n = 30 forces the normal branch; the DP is still available to
        // cross-check its accuracy.
        let mut rng = StdRng::seed_from_u64(29);
        let a: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0) + 0.15).collect();
        let b: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
        let approx = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(!approx.exact);
        assert!(approx.p_value > 0.0 && approx.p_value < 1.0);

        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mut order: Vec<usize> = (0..30).collect();
        order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
        let mut doubled = vec![0i64; 30];
        for (pos, &i) in order.iter().enumerate() {
            doubled[i] = 2 * (pos as i64 + 1); // distinct with prob. 1
        }
        let w_plus: i64 = diffs
            .iter()
            .zip(&doubled)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, r)| *r)
            .sum();
        let total: i64 = doubled.iter().sum();
        let exact = exact_p(&doubled, w_plus.min(total - w_plus));
        assert!(
            (approx.p_value - exact).abs() < 0.01,
            "approx {} vs exact {exact}",
            approx.p_value
        );
    }

    #[test]
    fn stronger_effects_earn_smaller_p() {
        let base: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let weak: Vec<f64> = base.iter().map(|v| v + 0.1).collect();
        let strong: Vec<f64> = base.iter().map(|v| v + 10.0).collect();
        let p_weak = wilcoxon_signed_rank(&weak, &base).unwrap().p_value;
        let p_strong = wilcoxon_signed_rank(&strong, &base).unwrap().p_value;
        assert!(p_strong <= p_weak);
        assert!(p_strong < 0.001);
    }

    #[test]
    fn input_validation() {
        assert_eq!(
            wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]).unwrap_err(),
            StatsError::LengthMismatch { a: 1, b: 2 }
        );
        assert!(matches!(
            wilcoxon_signed_rank(&[], &[]).unwrap_err(),
            StatsError::TooFewPairs { .. }
        ));
        assert_eq!(
            wilcoxon_signed_rank(&[f64::INFINITY], &[1.0]).unwrap_err(),
            StatsError::NonFiniteDifference
        );
    }

    #[test]
    fn report_applies_bonferroni_across_pairs() {
        let mut samples = BTreeMap::new();
        let base: Vec<f64> = (0..12).map(|i| 0.5 + 0.01 * i as f64).collect();
        samples.insert("none".to_string(), base.clone());
        samples.insert(
            "penalty".to_string(),
            base.iter().map(|v| v + 0.2).collect(),
        );
        samples.insert("sbp".to_string(), base.iter().map(|v| v + 0.4).collect());
        let pairs = wilcoxon_report(&samples, 0.05).unwrap();
        assert_eq!(pairs.len(), 3);
        for pair in &pairs {
            assert!((pair.alpha - 0.05 / 3.0).abs() < 1e-15);
            assert!(pair.significant, "{} vs {}", pair.a, pair.b);
            assert_ne!(pair.grade, "ns");
        }
        // Keys are visited in sorted order.
        assert_eq!(pairs[0].a, "none");
        assert_eq!(pairs[0].b, "penalty");
    }

    #[test]
    fn report_rejects_short_or_mismatched_samples() {
        let mut samples = BTreeMap::new();
        samples.insert("a".to_string(), vec![1.0; 5]);
        samples.insert("b".to_string(), vec![1.0; 5]);
        assert!(matches!(
            wilcoxon_report(&samples, 0.05).unwrap_err(),
            StatsError::TooFewPairs { n: 5, needed: 6 }
        ));
        let mut samples = BTreeMap::new();
        samples.insert("a".to_string(), vec![1.0; 8]);
        samples.insert("b".to_string(), vec![1.0; 7]);
        assert!(matches!(
            wilcoxon_report(&samples, 0.05).unwrap_err(),
            StatsError::LengthMismatch { a: 8, b: 7 }
        ));
        let one: BTreeMap<String, Vec<f64>> =
            [("solo".to_string(), vec![1.0; 10])].into_iter().collect();
        assert_eq!(wilcoxon_report(&one, 0.05).unwrap(), Vec::new());
    }

    #[test]
    fn degenerate_pairs_are_flagged_in_reports() {
        let mut samples = BTreeMap::new();
        samples.insert("a".to_string(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        samples.insert("b".to_string(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let pairs = wilcoxon_report(&samples, 0.05).unwrap();
        assert_eq!(pairs.len(), 1);
        assert!(pairs[0].degenerate);
        assert_eq!(pairs[0].p_value, 1.0);
        assert!(!pairs[0].significant);
    }
}
