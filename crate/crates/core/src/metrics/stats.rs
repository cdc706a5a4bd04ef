//! Goodness-of-fit helpers used by the statistical tests.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of a one-sample KS statistic `d` at sample size `n`,
/// with Stephens' small-sample correction.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

pub fn ks_uniform(samples: &[f64]) -> f64 {
    ks_pvalue(ks_statistic(samples, |x| x.clamp(0.0, 1.0)), samples.len())
}

pub fn ks_normal(samples: &[f64], mean: f64, std: f64) -> f64 {
    let n = Normal::new(mean, std).expect("valid normal");
    ks_pvalue(ks_statistic(samples, |x| n.cdf(x)), samples.len())
}

/// Upper-tail probability of a chi-square statistic.
pub fn chi_square_pvalue(chi2: f64, dof: usize) -> f64 {
    1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(chi2)
}
