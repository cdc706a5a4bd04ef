//! Posterior auditing: point errors, rank correlation, credible-interval
//! size, rank calibration and its area under the miscalibration curve, and
//! the information bound implied by an interval size.

mod report;
pub mod stats;

pub use report::{evaluate, observe_records, SnrMode, BiomarkerReport, CalibrationReport, EvalOptions, GatePoint, Observation, SciEntry, SnrBin, StdHistogram};

use rand::Rng;

use crate::error::{HemoError, Result};

pub const SCI_CELLS: usize = 100;
pub const ACAUC_GRID: usize = 100;

/// Histogram of samples over `cells` equal cells on `[lo, hi]`; samples
/// outside the range land in the edge cells, so counts sum to the number of
/// samples.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, cells: usize) -> Vec<usize> {
    let mut counts = vec![0; cells];
    let w = (hi - lo) / cells as f64;
    for &s in samples {
        let i = ((s - lo) / w).floor();
        let i = if i.is_nan() { 0 } else { i.clamp(0.0, (cells - 1) as f64) as usize };
        counts[i] += 1;
    }
    counts
}

/// Smallest number of cells whose mass reaches `alpha`, taking the fullest
/// cells first.
pub fn credible_cells(samples: &[f64], alpha: f64, lo: f64, hi: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(HemoError::domain("metrics", format!("credibility level {alpha} outside (0, 1]")));
    }
    if samples.is_empty() || !(hi > lo) {
        return Err(HemoError::domain("metrics", "need samples and a non-empty range"));
    }
    let mut counts = histogram(samples, lo, hi, SCI_CELLS);
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let need = alpha * samples.len() as f64;
    let mut mass = 0usize;
    for (k, c) in counts.iter().enumerate() {
        mass += c;
        // Small tolerance so that exactly-representable targets are met.
        if mass as f64 >= need - 1e-9 {
            return Ok(k + 1);
        }
    }
    Ok(SCI_CELLS)
}

/// Average credible-region size over observations, in cells and in physical
/// units (cells × cell width).
pub fn sci(sample_sets: &[Vec<f64>], alpha: f64, lo: f64, hi: f64) -> Result<(f64, f64)> {
    if sample_sets.is_empty() {
        return Err(HemoError::domain("metrics", "sci needs at least one observation"));
    }
    let mut total = 0.0;
    for s in sample_sets {
        total += credible_cells(s, alpha, lo, hi)? as f64;
    }
    let cells = total / sample_sets.len() as f64;
    Ok((cells, cells * (hi - lo) / SCI_CELLS as f64))
}

/// Rank of the truth among posterior samples over the sample count. Exact
/// ties are split at random, as if perturbed at a negligible scale.
pub fn calibration_level<R: Rng>(truth: f64, samples: &[f64], rng: &mut R) -> Result<f64> {
    if samples.is_empty() {
        return Err(HemoError::domain("metrics", "calibration needs posterior samples"));
    }
    let mut rank = 0usize;
    for &s in samples {
        if s < truth || (s == truth && rng.random::<bool>()) {
            rank += 1;
        }
    }
    Ok(rank as f64 / samples.len() as f64)
}

/// Trapezoid integral over `α ∈ [0, 1]` (101 nodes) of
/// `|α − fraction of levels ≤ α|`.
pub fn acauc(levels: &[f64]) -> Result<f64> {
    if levels.is_empty() {
        return Err(HemoError::domain("metrics", "acauc needs at least one level"));
    }
    let mut sorted = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let curve: Vec<f64> = (0..=ACAUC_GRID)
        .map(|i| {
            let a = i as f64 / ACAUC_GRID as f64;
            let covered = sorted.partition_point(|&l| l <= a + 1e-12) as f64 / n;
            (a - covered).abs()
        })
        .collect();
    let h = 1.0 / ACAUC_GRID as f64;
    Ok(curve.windows(2).map(|w| 0.5 * (w[0] + w[1]) * h).sum())
}

fn xlog2(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).log2()
    }
}

/// Bits of information implied by a region of `s` out of `n` cells holding
/// mass `alpha`: `−α·log2(α/S) − (1−α)·log2((1−α)/(N−S))`.
pub fn mi_bound(alpha: f64, s: f64, n: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) || !(s >= 1.0 && s <= n) {
        return Err(HemoError::domain("metrics", format!("mi_bound needs 0 <= α <= 1 and 1 <= S <= N (α={alpha}, S={s}, N={n})")));
    }
    let rest = 1.0 - alpha;
    if s == n && rest > 0.0 {
        return Err(HemoError::domain("metrics", "S = N leaves no cells for the remaining mass"));
    }
    Ok(-xlog2(alpha, s) - xlog2(rest, n - s))
}

pub fn binary_entropy(p: f64) -> f64 {
    -xlog2(p, 1.0) - xlog2(1.0 - p, 1.0)
}

/// Mean absolute and mean relative absolute error of point estimates.
pub fn point_errors(estimates: &[f64], truths: &[f64]) -> Result<(f64, f64)> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(HemoError::domain("metrics", "point errors need equal, non-empty estimate and truth lists"));
    }
    let n = estimates.len() as f64;
    let mae = estimates.iter().zip(truths).map(|(e, t)| (e - t).abs()).sum::<f64>() / n;
    let rae = estimates.iter().zip(truths).map(|(e, t)| (e - t).abs() / t.abs()).sum::<f64>() / n;
    Ok((mae, rae))
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() || truth.len() < 3 {
        return Err(HemoError::domain("metrics", "spearman needs at least 3 paired points"));
    }
    let (a, b) = (average_ranks(truth), average_ranks(pred));
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(HemoError::DegenerateSignal("constant ranking in spearman correlation".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Spearman correlation per patient; each group is `(truths, predictions)`.
pub fn spearman_per_patient(groups: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<f64>> {
    groups.iter().map(|(t, p)| spearman(t, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn sci_reference_cases() {
        let point = vec![0.123; 1000];
        for a in [0.1, 0.68, 0.95, 1.0] {
            assert_eq!(credible_cells(&point, a, 0.0, 1.0).unwrap(), 1);
        }
        let uniform: Vec<f64> = (0..10_000).map(|i| (i as f64 + 0.5) / 10_000.0).collect();
        assert_eq!(credible_cells(&uniform, 0.95, 0.0, 1.0).unwrap(), 95);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let cells = credible_cells(&normal, 0.95, -5.0, 5.0).unwrap();
        assert!((39..=40).contains(&cells), "{cells} cells");
    }

    #[test]
    fn calibration_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = [1.0, 2.0, 3.0];
        assert_eq!(calibration_level(0.0, &s, &mut rng).unwrap(), 0.0);
        assert_eq!(calibration_level(9.0, &s, &mut rng).unwrap(), 1.0);
    }

    #[test]
    fn acauc_reference_cases() {
        let n = 1000;
        let grid: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
        assert!(acauc(&grid).unwrap() <= 1.0 / n as f64);
        assert!((acauc(&[0.0; 50]).unwrap() - 0.5).abs() < 1e-12);
        assert!((acauc(&[0.5; 50]).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn mi_bound_reference_cases() {
        assert!((mi_bound(0.5, 50.0, 100.0).unwrap() - 100f64.log2()).abs() < 1e-12);
        let want = 0.9 * (10.0f64 / 0.9).log2() + 0.1 * (90.0f64 / 0.1).log2();
        assert!((mi_bound(0.9, 10.0, 100.0).unwrap() - want).abs() < 1e-12);
        assert!((want - 4.108).abs() < 5e-4);
        assert!((mi_bound(1.0, 100.0, 100.0).unwrap() - 100f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn spearman_reference_cases() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&t, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&t, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn point_error_cases() {
        let t = [2.0, 4.0, 10.0];
        assert_eq!(point_errors(&t, &t).unwrap(), (0.0, 0.0));
        let p: Vec<f64> = t.iter().map(|x| 1.3 * x).collect();
        assert!((point_errors(&p, &t).unwrap().1 - 0.3).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sci_monotone_in_alpha(seed in 0u64..500, spread in 0.01..3.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<f64> = (0..2000).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); spread * z }).collect();
            let mut prev = 0;
            for k in 1..=20 {
                let c = credible_cells(&s, k as f64 / 20.0, -4.0, 4.0).unwrap();
                prop_assert!(c >= prev);
                prev = c;
            }
        }

        #[test]
        fn acauc_is_bounded(levels in proptest::collection::vec(0.0..=1.0f64, 1..200)) {
            let a = acauc(&levels).unwrap();
            prop_assert!((0.0..=0.5 + 1e-12).contains(&a));
        }

        #[test]
        fn mi_bound_dominates_binary_entropy(alpha in 0.001..0.999f64, n in 2u32..500, frac in 0.0..1.0f64) {
            let n = n as f64;
            let s = (1.0 + frac * (n - 2.0)).floor();
            prop_assert!(mi_bound(alpha, s, n).unwrap() >= binary_entropy(alpha) - 1e-12);
        }

        #[test]
        fn spearman_is_bounded(x in proptest::collection::vec(-10.0..10.0f64, 3..40), seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-5.0..5.0)).collect();
            if let Ok(r) = spearman(&x, &y) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            }
        }
    }

    #[test]
    fn mi_bound_grows_with_interval_size() {
        for alpha in [0.5, 0.68, 0.9, 0.95] {
            let upper = (100.0 * alpha) as usize;
            let vals: Vec<f64> = (1..=upper).map(|s| mi_bound(alpha, s as f64, 100.0).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]), "alpha {alpha}: {vals:?}");
        }
    }
}
