//! Small statistics helpers: Wilson intervals, moments, KS and χ² tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// z for a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// 95% Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: usize, trials: usize) -> Interval {
    if trials == 0 {
        return Interval { lo: 0.0, hi: 1.0 };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Interval {
        lo: (center - half).max(0.0),
        hi: (center + half).min(1.0),
    }
}

/// Sample mean and unbiased variance; (NaN, NaN) when empty.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, ss / (n - 1) as f64)
}

/// Kolmogorov–Smirnov distance of a sample from Uniform(0, 1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 99% critical value of the one-sample KS statistic.
pub fn ks_critical_99(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}

/// Pearson χ² of observed counts against expected probabilities, and the
/// p-value with `bins − 1` degrees of freedom. Bins with zero expectation
/// are skipped.
pub fn chi_square(observed: &[u64], expected_prob: &[f64]) -> (f64, f64) {
    let total: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut used = 0usize;
    for (&o, &p) in observed.iter().zip(expected_prob) {
        let e = p * total as f64;
        if e > 0.0 {
            stat += (o as f64 - e).powi(2) / e;
            used += 1;
        }
    }
    let dof = used.saturating_sub(1).max(1) as f64;
    let dist = ChiSquared::new(dof).expect("positive degrees of freedom");
    (stat, 1.0 - dist.cdf(stat))
}
