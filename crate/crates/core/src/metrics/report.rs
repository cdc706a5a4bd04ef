use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{acauc, calibration_level, mi_bound, point_errors, sci, spearman, SCI_CELLS};
use crate::error::{HemoError, Result};
use crate::npe::{PosteriorEstimator, Real};
use crate::population::subject_seed;
use crate::signal::{Modality, SegmentRecord};

/// One test input with its posterior samples.
#[derive(Clone, Debug)]
pub struct Observation {
    pub id: u64,
    /// Observations sharing a group (a patient) enter the per-group rank
    /// correlation.
    pub group: Option<u64>,
    pub truth: Vec<f64>,
    pub snr_db: f64,
    /// `(n_samples, dim)` in physical units.
    pub samples: Array2<f64>,
}

impl Observation {
    /// Draw `n` posterior samples for a segment.
    pub fn sample<T: Real>(
        est: &PosteriorEstimator<T>,
        id: u64,
        segment: &[f64],
        age: f64,
        truth: Vec<f64>,
        snr_db: f64,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        let samples = est.sample(segment, age, n, subject_seed(seed, id))?;
        Ok(Observation { id, group: None, truth, snr_db, samples })
    }

    pub fn posterior_mean(&self, k: usize) -> f64 {
        self.samples.column(k).mean().unwrap_or(f64::NAN)
    }

    pub fn posterior_std(&self, k: usize) -> f64 {
        self.samples.column(k).std(1.0)
    }
}

/// Which input each test record contributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrMode {
    /// The stored processed segment at its stored SNR.
    Stored,
    /// The clean crop re-noised at each level (dB), one observation per level.
    Levels { levels: Vec<f64>, red_coefficient: f64 },
}

/// Posterior samples for every record, in parallel. Seeds depend only on
/// `seed`, the record position and the SNR level index.
pub fn observe_records<T: Real>(
    est: &PosteriorEstimator<T>,
    records: &[&SegmentRecord],
    modality: Modality,
    mode: &SnrMode,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Observation>> {
    let jobs: Vec<(usize, Option<(usize, f64)>)> = match mode {
        SnrMode::Stored => (0..records.len()).map(|i| (i, None)).collect(),
        SnrMode::Levels { levels, .. } => (0..records.len())
            .flat_map(|i| levels.iter().enumerate().map(move |(l, &db)| (i, Some((l, db)))))
            .collect(),
    };
    jobs.par_iter()
        .map(|&(i, level)| {
            let r = records[i];
            let job_seed = subject_seed(subject_seed(seed, i as u64), level.map_or(0, |(l, _)| l as u64 + 1));
            let (segment, snr_db) = match (level, mode) {
                (Some((_, db)), SnrMode::Levels { red_coefficient, .. }) => {
                    (r.at_snr(modality, db, *red_coefficient, subject_seed(job_seed, 1))?, db)
                }
                _ => (r.samples_f64(), r.snr_db),
            };
            let samples = est.sample(&segment, r.age, n_samples, subject_seed(job_seed, 2))?;
            Ok(Observation {
                id: i as u64,
                group: None,
                truth: r.biomarkers.to_vec(),
                snr_db,
                samples,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub levels: Vec<f64>,
    /// Lower edges of SNR bins in dB; the last bin is open above.
    pub snr_edges: Vec<f64>,
    /// Kept fractions for the posterior-spread gating curve.
    pub keep_fractions: Vec<f64>,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            levels: vec![0.68, 0.95],
            snr_edges: vec![-15.0, -5.0, 5.0, 15.0, 25.0],
            keep_fractions: (1..=10).rev().map(|k| k as f64 / 10.0).collect(),
            seed: 0,
        }
    }
}

/// JSON has no NaN or infinity: NaN is written as null, infinities as
/// the strings "inf" and "-inf".
mod json_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
        Null(()),
    }

    fn to_repr(v: f64) -> Repr {
        match v {
            v if v.is_nan() => Repr::Null(()),
            f64::INFINITY => Repr::Text("inf".into()),
            f64::NEG_INFINITY => Repr::Text("-inf".into()),
            v => Repr::Num(v),
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Null(()) => Ok(f64::NAN),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" | "NaN" => Ok(f64::NAN),
                other => Err(E::custom(format!("expected a number, got '{other}'"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|&x| to_repr(x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SciEntry {
    pub alpha: f64,
    #[serde(with = "json_f64")]
    pub cells: f64,
    #[serde(with = "json_f64")]
    pub width: f64,
    /// Information bound implied by the average region size, in bits.
    #[serde(with = "json_f64")]
    pub bits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatePoint {
    pub keep_fraction: f64,
    #[serde(with = "json_f64")]
    pub std_threshold: f64,
    #[serde(with = "json_f64")]
    pub mae: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StdHistogram {
    #[serde(with = "json_f64")]
    pub lo: f64,
    #[serde(with = "json_f64")]
    pub hi: f64,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerReport {
    pub name: String,
    pub range: (f64, f64),
    #[serde(with = "json_f64")]
    pub mae: f64,
    #[serde(with = "json_f64")]
    pub rae: f64,
    #[serde(with = "json_f64")]
    pub mean_posterior_std: f64,
    pub sci: Vec<SciEntry>,
    #[serde(with = "json_f64")]
    pub acauc: f64,
    pub spread_gating: Vec<GatePoint>,
    pub std_histogram: StdHistogram,
    #[serde(with = "json_f64::vec")]
    pub spearman_per_group: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrBin {
    #[serde(with = "json_f64")]
    pub lo: f64,
    #[serde(with = "json_f64")]
    pub hi: f64,
    pub count: usize,
    #[serde(with = "json_f64")]
    pub mean_snr_db: f64,
    pub biomarkers: Vec<BiomarkerReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub observations: usize,
    pub samples_per_observation: usize,
    pub biomarkers: Vec<BiomarkerReport>,
    pub snr_bins: Vec<SnrBin>,
}

impl CalibrationReport {
    pub fn biomarker(&self, name: &str) -> Option<&BiomarkerReport> {
        self.biomarkers.iter().find(|b| b.name == name)
    }
}

const STD_BINS: usize = 20;

fn biomarker_report(obs: &[&Observation], k: usize, name: &str, range: (f64, f64), opts: &EvalOptions) -> Result<BiomarkerReport> {
    let truths: Vec<f64> = obs.iter().map(|o| o.truth[k]).collect();
    let means: Vec<f64> = obs.iter().map(|o| o.posterior_mean(k)).collect();
    let stds: Vec<f64> = obs.iter().map(|o| o.posterior_std(k)).collect();
    let (mae, rae) = point_errors(&means, &truths)?;
    let columns: Vec<Vec<f64>> = obs.iter().map(|o| o.samples.column(k).to_vec()).collect();

    let mut sci_entries = Vec::new();
    for &alpha in &opts.levels {
        let (cells, width) = sci(&columns, alpha, range.0, range.1)?;
        let bits = mi_bound(alpha, cells.clamp(1.0, SCI_CELLS as f64 - 1.0), SCI_CELLS as f64)?;
        sci_entries.push(SciEntry { alpha, cells, width, bits });
    }

    let mut levels = Vec::with_capacity(obs.len());
    for (o, col) in obs.iter().zip(&columns) {
        let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(subject_seed(opts.seed, o.id), k as u64));
        levels.push(calibration_level(o.truth[k], col, &mut rng)?);
    }

    let mut order: Vec<usize> = (0..obs.len()).collect();
    order.sort_by(|&a, &b| stds[a].total_cmp(&stds[b]));
    let mut gating = Vec::new();
    for &f in &opts.keep_fractions {
        let count = ((f * obs.len() as f64).round() as usize).clamp(1, obs.len());
        let kept = &order[..count];
        let err = kept.iter().map(|&i| (means[i] - truths[i]).abs()).sum::<f64>() / count as f64;
        gating.push(GatePoint {
            keep_fraction: f,
            std_threshold: stds[kept[count - 1]],
            mae: err,
            count,
        });
    }

    let mut groups: std::collections::BTreeMap<u64, (Vec<f64>, Vec<f64>)> = Default::default();
    for (i, o) in obs.iter().enumerate() {
        if let Some(g) = o.group {
            let e = groups.entry(g).or_default();
            e.0.push(truths[i]);
            e.1.push(means[i]);
        }
    }
    let spearman_per_group = groups
        .values()
        .filter(|(t, _)| t.len() >= 3)
        .filter_map(|(t, p)| spearman(t, p).ok())
        .collect();

    Ok(BiomarkerReport {
        name: name.to_string(),
        range,
        mae,
        rae,
        mean_posterior_std: stds.iter().sum::<f64>() / stds.len() as f64,
        sci: sci_entries,
        acauc: acauc(&levels)?,
        spread_gating: gating,
        std_histogram: {
            let lo = stds.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = stds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let hi = if hi > lo { hi } else { lo + 1.0 };
            StdHistogram { lo, hi, counts: super::histogram(&stds, lo, hi, STD_BINS) }
        },
        spearman_per_group,
    })
}

fn report_all(obs: &[&Observation], names: &[String], ranges: &[(f64, f64)], opts: &EvalOptions) -> Result<Vec<BiomarkerReport>> {
    (0..names.len())
        .into_par_iter()
        .map(|k| biomarker_report(obs, k, &names[k], ranges[k], opts))
        .collect()
}

/// Audit posterior samples: point errors, credible-region size, rank
/// calibration, overall and per SNR bin. `ranges` fixes the SCI grid per
/// biomarker.
pub fn evaluate(observations: &[Observation], names: &[String], ranges: &[(f64, f64)], opts: &EvalOptions) -> Result<CalibrationReport> {
    let first = observations
        .first()
        .ok_or_else(|| HemoError::domain("metrics", "evaluation needs at least one observation"))?;
    let dim = names.len();
    if ranges.len() != dim {
        return Err(HemoError::domain("metrics", "one range per biomarker is required"));
    }
    if let Some(o) = observations.iter().find(|o| o.truth.len() != dim || o.samples.ncols() != dim || o.samples.nrows() == 0) {
        return Err(HemoError::domain("metrics", format!("observation {} does not match {dim} biomarkers", o.id)));
    }
    let all: Vec<&Observation> = observations.iter().collect();
    let biomarkers = report_all(&all, names, ranges, opts)?;

    let mut snr_bins = Vec::new();
    for (i, &lo) in opts.snr_edges.iter().enumerate() {
        let hi = opts.snr_edges.get(i + 1).copied().unwrap_or(f64::INFINITY);
        let members: Vec<&Observation> = observations.iter().filter(|o| o.snr_db >= lo && o.snr_db < hi).collect();
        if members.is_empty() {
            continue;
        }
        snr_bins.push(SnrBin {
            lo,
            hi,
            count: members.len(),
            mean_snr_db: members.iter().map(|o| o.snr_db).sum::<f64>() / members.len() as f64,
            biomarkers: report_all(&members, names, ranges, opts)?,
        });
    }

    Ok(CalibrationReport {
        observations: observations.len(),
        samples_per_observation: first.samples.nrows(),
        biomarkers,
        snr_bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn non_finite_values_survive_json() {
        let bin = SnrBin { lo: 25.0, hi: f64::INFINITY, count: 0, mean_snr_db: f64::NAN, biomarkers: vec![] };
        let text = serde_json::to_string(&bin).unwrap();
        assert_eq!(text, r#"{"lo":25.0,"hi":"inf","count":0,"mean_snr_db":null,"biomarkers":[]}"#);
        let back: SnrBin = serde_json::from_str(&text).unwrap();
        assert_eq!(back.hi, f64::INFINITY);
        assert!(back.mean_snr_db.is_nan());
        assert!(serde_json::from_str::<SnrBin>(&text.replace("\"inf\"", "\"big\"")).is_err());
    }

    fn gaussian_obs(n_obs: usize, n_samples: usize, spread: f64, seed: u64) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_obs as u64)
            .map(|id| {
                // truth ~ N(m, 1) with the posterior N(m, spread²).
                let z0: f64 = StandardNormal.sample(&mut rng);
                let z1: f64 = StandardNormal.sample(&mut rng);
                let m = 5.0 * z0;
                let t = m + z1;
                let samples = Array2::from_shape_fn((n_samples, 1), |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + spread * z
                });
                Observation {
                    id,
                    group: Some(id % 10),
                    truth: vec![t],
                    snr_db: (id % 40) as f64 - 10.0,
                    samples,
                }
            })
            .collect()
    }

    #[test]
    fn calibrated_posterior_scores_low_acauc() {
        let names = vec!["x".to_string()];
        let opts = EvalOptions::default();
        let good = evaluate(&gaussian_obs(2000, 500, 1.0, 3), &names, &[(-20.0, 20.0)], &opts).unwrap();
        let narrow = evaluate(&gaussian_obs(2000, 500, 0.3, 3), &names, &[(-20.0, 20.0)], &opts).unwrap();
        let b = &good.biomarkers[0];
        assert!(b.acauc < 0.02, "{}", b.acauc);
        assert!(narrow.biomarkers[0].acauc > 0.1);
        // 95% of N(0,1) spans about 3.9 units, about 10 cells of 0.4.
        let s95 = b.sci.iter().find(|s| s.alpha == 0.95).unwrap();
        assert!((s95.width - 3.92).abs() < 0.6, "{}", s95.width);
        assert!(b.mae > 0.7 && b.mae < 0.9, "{}", b.mae);
        assert_eq!(good.snr_bins.iter().map(|s| s.count).sum::<usize>(), 2000);
        assert_eq!(b.spread_gating.len(), 10);
        assert_eq!(b.spearman_per_group.len(), 10);
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let obs = gaussian_obs(5, 10, 1.0, 0);
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(evaluate(&obs, &names, &[(0.0, 1.0), (0.0, 1.0)], &EvalOptions::default()).is_err());
        assert!(evaluate(&[], &names[..1], &[(0.0, 1.0)], &EvalOptions::default()).is_err());
    }
}
