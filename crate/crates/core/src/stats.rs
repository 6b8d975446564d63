//! Goodness-of-fit helpers used by the privacy audit and statistical tests.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson chi-square statistic of `counts` against a uniform expectation.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}

/// Upper-tail p-value of a chi-square statistic with `dof` degrees of freedom.
pub fn chi_square_p_value(statistic: f64, dof: usize) -> f64 {
    let dist = ChiSquared::new(dof as f64).expect("dof must be positive");
    dist.sf(statistic)
}

/// Buckets residues in `[0, modulus)` into `buckets` equal-width bins.
pub fn residue_histogram(residues: impl IntoIterator<Item = u64>, modulus: u64, buckets: usize) -> Vec<u64> {
    let mut counts = vec![0u64; buckets];
    for r in residues {
        let b = (r as u128 * buckets as u128 / modulus as u128) as usize;
        counts[b.min(buckets - 1)] += 1;
    }
    counts
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let lo = f - i as f64 / n;
            let hi = (i + 1) as f64 / n - f;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfectly_flat_histogram_has_zero_statistic() {
        assert_eq!(chi_square_uniform(&[10; 64]), 0.0);
        assert!((chi_square_p_value(0.0, 63) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn p_value_matches_known_quantile() {
        // The 0.95 quantile of chi-square(1) is 3.841459.
        assert!((chi_square_p_value(3.841459, 1) - 0.05).abs() < 1e-6);
    }

    #[test]
    fn histogram_edges() {
        let h = residue_histogram([0, 96, 48], 97, 2);
        assert_eq!(h, vec![2, 1]);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }
}
