//! From single simulated beats to 8-second measurement segments: beat
//! stacking and cropping, the stochastic noise model, PPG derivation,
//! bandpass filtering and SNR.

mod filter;
mod store;

pub use filter::{Bandpass, Biquad};
pub use store::{
    finalize_dataset, read_finalized, read_segments, split_subjects, write_segments, FinalizeOptions,
    encode_segments, segment_records, FinalizedDataset, FinalizedMetadata, SegmentFile, SegmentRecord, Split, SplitIndices,
    FINALIZED_METADATA,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HemoError, Result};
use crate::population::Range;

pub const SEGMENT_LEN: usize = 1000;
pub const SAMPLE_RATE: f64 = 125.0;
/// Reported SNR when the added noise has zero power.
pub const SNR_SATURATION_DB: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    /// Arterial pressure in mmHg.
    Apw,
    /// Normalized bed volume.
    Ppg,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Apw => "apw",
            Modality::Ppg => "ppg",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = HemoError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "apw" => Ok(Modality::Apw),
            "ppg" => Ok(Modality::Ppg),
            other => Err(HemoError::domain("signal_pipeline", format!("unknown modality '{other}'"))),
        }
    }
}

/// Additive noise actually applied to a segment. Both families share the
/// window `start..end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditiveNoise {
    pub gaussian_sigma: f64,
    pub red_sigma: f64,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub additive: Option<AdditiveNoise>,
    pub flipped: bool,
    /// SNR of the additive stage against the clean segment, in dB.
    pub snr_db: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveformSegment {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub modality: Modality,
    pub subject_id: u64,
    pub noise: NoiseRecord,
    pub crop_offset: usize,
}

impl WaveformSegment {
    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != SEGMENT_LEN || self.sample_rate != SAMPLE_RATE {
            return Err(HemoError::domain(
                "signal_pipeline",
                format!("segment must hold {SEGMENT_LEN} samples at {SAMPLE_RATE} Hz, got {} at {}", self.samples.len(), self.sample_rate),
            ));
        }
        Ok(())
    }
}

/// Stochastic measurement model. Noise intensities are `Exp` draws with the
/// given means, in units of the clean segment's standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub p_additive: f64,
    pub p_flip: f64,
    pub gaussian_intensity_mean: f64,
    pub red_intensity_mean: f64,
    pub red_coefficient: f64,
    /// Fraction of the segment covered by the additive noise window.
    pub window_fraction: Range,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            p_additive: 0.8,
            p_flip: 0.3,
            gaussian_intensity_mean: 1.0,
            red_intensity_mean: 1.0,
            red_coefficient: 0.95,
            window_fraction: Range::new(0.25, 1.0),
        }
    }
}

impl NoiseSpec {
    /// No noise and no flipping.
    pub fn clean() -> Self {
        NoiseSpec {
            p_additive: 0.0,
            p_flip: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HemoError::domain("signal_pipeline", m));
        for (name, p) in [("p_additive", self.p_additive), ("p_flip", self.p_flip)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(self.gaussian_intensity_mean > 0.0 && self.red_intensity_mean > 0.0) {
            return bad("noise intensity means must be positive".into());
        }
        if !(0.0..1.0).contains(&self.red_coefficient) {
            return bad(format!("red-noise coefficient {} outside [0, 1)", self.red_coefficient));
        }
        let w = self.window_fraction;
        if !(0.0 < w.low && w.low <= w.high && w.high <= 1.0) {
            return bad(format!("window fraction [{}, {}] outside (0, 1]", w.low, w.high));
        }
        Ok(())
    }
}

/// Tile `beat` and take `SEGMENT_LEN` samples starting at `offset`.
pub fn crop_at(beat: &[f64], offset: usize) -> Result<Vec<f64>> {
    if beat.is_empty() {
        return Err(HemoError::DegenerateSignal("empty beat".into()));
    }
    if offset >= beat.len() {
        return Err(HemoError::domain(
            "signal_pipeline",
            format!("crop offset {offset} outside beat of {} samples", beat.len()),
        ));
    }
    Ok((0..SEGMENT_LEN).map(|i| beat[(offset + i) % beat.len()]).collect())
}

/// Tile the beat and crop 1000 samples at an offset drawn uniformly in
/// `0..beat.len()`.
pub fn stack_and_crop(beat: &[f64], modality: Modality, subject_id: u64, seed: u64) -> Result<WaveformSegment> {
    if beat.is_empty() {
        return Err(HemoError::DegenerateSignal("empty beat".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random_range(0..beat.len());
    Ok(WaveformSegment {
        samples: crop_at(beat, offset)?,
        sample_rate: SAMPLE_RATE,
        modality,
        subject_id,
        noise: NoiseRecord::default(),
        crop_offset: offset,
    })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Mean-removed power.
pub fn power(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Vertical inversion about the mean; an involution.
pub fn flip(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| 2.0 * m - v).collect()
}

/// Unit-variance stationary AR(1) sequence.
fn red_noise<R: Rng>(rng: &mut R, n: usize, a: f64) -> Vec<f64> {
    let innov = (1.0 - a * a).sqrt();
    let mut prev: f64 = rng.sample(StandardNormal);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(prev);
        let e: f64 = rng.sample(StandardNormal);
        prev = a * prev + innov * e;
    }
    out
}

/// `10·log10(P(clean)/P(noisy − clean))`, saturating at 100 dB.
pub fn snr(clean: &[f64], noisy: &[f64]) -> Result<f64> {
    if clean.len() != noisy.len() || clean.is_empty() {
        return Err(HemoError::domain("signal_pipeline", "snr needs two non-empty series of equal length"));
    }
    let diff: Vec<f64> = noisy.iter().zip(clean).map(|(n, c)| n - c).collect();
    let (ps, pn) = (power(clean), power(&diff));
    if pn <= 0.0 {
        return Ok(SNR_SATURATION_DB);
    }
    if ps <= 0.0 {
        return Err(HemoError::DegenerateSignal("clean signal has zero power".into()));
    }
    Ok((10.0 * (ps / pn).log10()).min(SNR_SATURATION_DB))
}

/// Apply the stochastic measurement model. The draw order is fixed, so the
/// result depends only on `(segment, spec, seed)`.
pub fn apply_noise(seg: &WaveformSegment, spec: &NoiseSpec, seed: u64) -> Result<WaveformSegment> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let do_additive = rng.random::<f64>() < spec.p_additive;
    let do_flip = rng.random::<f64>() < spec.p_flip;
    let mut out = seg.clone();
    let mut record = NoiseRecord::default();

    if do_additive {
        let std = power(&seg.samples).sqrt();
        let exp = |m: f64| Exp::new(1.0 / m).expect("positive rate");
        let gaussian_sigma = exp(spec.gaussian_intensity_mean).sample(&mut rng) * std;
        let red_sigma = exp(spec.red_intensity_mean).sample(&mut rng) * std;
        let n = seg.samples.len();
        let frac = spec.window_fraction.sample(&mut rng);
        let width = ((frac * n as f64).round() as usize).clamp(1, n);
        let start = rng.random_range(0..=n - width);
        let red = red_noise(&mut rng, width, spec.red_coefficient);
        for (i, r) in red.iter().enumerate() {
            let g: f64 = rng.sample(StandardNormal);
            out.samples[start + i] += gaussian_sigma * g + red_sigma * r;
        }
        record.snr_db = Some(snr(&seg.samples, &out.samples)?);
        record.additive = Some(AdditiveNoise {
            gaussian_sigma,
            red_sigma,
            start,
            end: start + width,
        });
    }
    if do_flip {
        out.samples = flip(&out.samples);
        record.flipped = true;
    }
    out.noise = record;
    Ok(out)
}

/// Add Gaussian and red noise of equal power over the whole segment, scaled
/// so that `snr(clean, noisy)` equals `target_db` exactly. No flipping.
pub fn apply_noise_at_snr(seg: &WaveformSegment, target_db: f64, red_coefficient: f64, seed: u64) -> Result<WaveformSegment> {
    let ps = power(&seg.samples);
    if ps <= 0.0 {
        return Err(HemoError::DegenerateSignal("clean signal has zero power".into()));
    }
    let n = seg.samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let red = red_noise(&mut rng, n, red_coefficient);
    let noise: Vec<f64> = red
        .iter()
        .map(|r| {
            let g: f64 = rng.sample(StandardNormal);
            g + r
        })
        .collect();
    let scale = (ps / 10f64.powf(target_db / 10.0) / power(&noise)).sqrt();
    let mut out = seg.clone();
    for (s, e) in out.samples.iter_mut().zip(&noise) {
        *s += scale * e;
    }
    let sigma = scale * power(&noise).sqrt() / 2f64.sqrt();
    out.noise = NoiseRecord {
        additive: Some(AdditiveNoise {
            gaussian_sigma: sigma,
            red_sigma: sigma,
            start: 0,
            end: n,
        }),
        flipped: false,
        snr_db: Some(target_db),
    };
    Ok(out)
}

/// Min-max normalization of the bed volume: range exactly [0, 1].
pub fn derive_ppg(volume: &[f64]) -> Result<Vec<f64>> {
    let lo = volume.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = volume.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if volume.is_empty() || !(hi > lo) || !(hi - lo).is_finite() {
        return Err(HemoError::DegenerateSignal("bed volume has no pulsatile variation".into()));
    }
    Ok(volume.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect())
}

/// Zero-phase 0.5–10 Hz bandpass of a segment.
pub fn bandpass(seg: &WaveformSegment) -> WaveformSegment {
    let mut out = seg.clone();
    out.samples = Bandpass::standard().filtfilt(&seg.samples);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use std::f64::consts::PI;

    fn beat(n: usize) -> Vec<f64> {
        (0..n).map(|i| 80.0 + 40.0 * (PI * i as f64 / n as f64).sin().powi(3)).collect()
    }

    fn segment(x: Vec<f64>) -> WaveformSegment {
        WaveformSegment {
            samples: x,
            sample_rate: SAMPLE_RATE,
            modality: Modality::Apw,
            subject_id: 0,
            noise: NoiseRecord::default(),
            crop_offset: 0,
        }
    }

    #[test]
    fn zero_offset_tiles_the_beat() {
        let b = beat(100);
        let s = crop_at(&b, 0).unwrap();
        for k in 0..10 {
            assert_eq!(&s[100 * k..100 * (k + 1)], &b[..]);
        }
        assert!(crop_at(&b, 100).is_err());
    }

    #[test]
    fn crop_offsets_are_uniform() {
        let b = beat(100);
        let mut counts = [0usize; 100];
        let n = 20_000;
        for seed in 0..n {
            let s = stack_and_crop(&b, Modality::Apw, 0, seed).unwrap();
            counts[s.crop_offset] += 1;
            assert_eq!(s.samples, crop_at(&b, s.crop_offset).unwrap());
        }
        let expected = n as f64 / 100.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let dist = statrs::distribution::ChiSquared::new(99.0).unwrap();
        let p = 1.0 - statrs::distribution::ContinuousCDF::cdf(&dist, chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn identity_branch_leaves_signal_untouched() {
        let seg = segment(crop_at(&beat(90), 3).unwrap());
        let out = apply_noise(&seg, &NoiseSpec::clean(), 5).unwrap();
        assert_eq!(out, seg);
    }

    #[test]
    fn noise_is_reproducible_and_recorded() {
        let seg = segment(crop_at(&beat(90), 3).unwrap());
        let spec = NoiseSpec::default();
        let mut saw_additive = false;
        for seed in 0..50 {
            let a = apply_noise(&seg, &spec, seed).unwrap();
            assert_eq!(a, apply_noise(&seg, &spec, seed).unwrap());
            if let Some(add) = &a.noise.additive {
                saw_additive = true;
                let unflipped = if a.noise.flipped { flip(&a.samples) } else { a.samples.clone() };
                for i in (0..add.start).chain(add.end..SEGMENT_LEN) {
                    assert!((unflipped[i] - seg.samples[i]).abs() < 1e-9);
                }
            }
        }
        assert!(saw_additive);
    }

    #[test]
    fn snr_reference_cases() {
        let clean: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(snr(&clean, &clean).unwrap(), SNR_SATURATION_DB);
        let shifted: Vec<f64> = clean.iter().map(|x| x + 7.0).collect();
        assert_eq!(snr(&clean, &shifted).unwrap(), SNR_SATURATION_DB);
        let equal: Vec<f64> = clean.iter().zip(&clean).map(|(c, n)| c + n).collect();
        assert!(snr(&clean, &equal).unwrap().abs() < 1e-12);
        let loud: Vec<f64> = clean.iter().map(|c| c + 10.0 * c).collect();
        assert!((snr(&clean, &loud).unwrap() + 20.0).abs() < 1e-12);
    }

    #[test]
    fn controlled_snr_is_exact() {
        let seg = segment(crop_at(&beat(77), 10).unwrap());
        for db in [-10.0, 0.0, 10.0, 20.0, 30.0] {
            let noisy = apply_noise_at_snr(&seg, db, 0.95, 3).unwrap();
            assert!((snr(&seg.samples, &noisy.samples).unwrap() - db).abs() < 1e-9);
        }
    }

    #[test]
    fn ppg_normalization() {
        let ramp: Vec<f64> = (0..50).map(|i| 2e-6 + 1e-8 * i as f64).collect();
        let p = derive_ppg(&ramp).unwrap();
        for (i, v) in p.iter().enumerate() {
            assert!((v - i as f64 / 49.0).abs() < 1e-12);
        }
        assert!(matches!(derive_ppg(&[1.0; 10]), Err(HemoError::DegenerateSignal(_))));
    }

    #[test]
    fn bandpass_reference_responses() {
        let t = |i: usize| i as f64 / SAMPLE_RATE;
        let amp = |x: &[f64]| {
            let mid = &x[200..800];
            (mid.iter().cloned().fold(f64::MIN, f64::max) - mid.iter().cloned().fold(f64::MAX, f64::min)) / 2.0
        };
        let five: Vec<f64> = (0..1000).map(|i| (2.0 * PI * 5.0 * t(i)).sin()).collect();
        let out = bandpass(&segment(five)).samples;
        assert!((amp(&out) - 1.0).abs() < 0.03, "5 Hz amplitude {}", amp(&out));

        let f = Bandpass::standard();
        assert!(20.0 * f.zero_phase_gain(0.05, SAMPLE_RATE).log10() <= -20.0);
        let dc = bandpass(&segment(vec![3.0; 1000])).samples;
        assert!(dc.iter().all(|v| v.abs() < 3e-3), "dc residue {:?}", dc.iter().cloned().fold(0.0, |a: f64, b| a.max(b.abs())));
    }

    proptest! {
        #[test]
        fn bandpass_is_linear(a in -5.0..5.0f64, b in -5.0..5.0f64, s1 in 0u64..1000, s2 in 0u64..1000) {
            let mut r1 = ChaCha8Rng::seed_from_u64(s1);
            let mut r2 = ChaCha8Rng::seed_from_u64(s2 + 10_000);
            let x: Vec<f64> = (0..1000).map(|_| r1.sample(StandardNormal)).collect();
            let y: Vec<f64> = (0..1000).map(|_| r2.sample(StandardNormal)).collect();
            let f = Bandpass::standard();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = f.filtfilt(&mix);
            let (fx, fy) = (f.filtfilt(&x), f.filtfilt(&y));
            for i in 0..1000 {
                prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() < 1e-10);
            }
        }

        #[test]
        fn ppg_is_affine_invariant(scale in 1e-3..1e3f64, shift in -1.0..1.0f64, n in 10usize..200) {
            let v: Vec<f64> = beat(n).iter().map(|x| x * 1e-8).collect();
            let w: Vec<f64> = v.iter().map(|x| scale * x + shift * 1e-6).collect();
            let (p, q) = (derive_ppg(&v).unwrap(), derive_ppg(&w).unwrap());
            prop_assert_eq!(p.iter().cloned().fold(f64::MAX, f64::min), 0.0);
            prop_assert_eq!(p.iter().cloned().fold(f64::MIN, f64::max), 1.0);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn flip_is_an_involution(seed in 0u64..10_000) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..1000).map(|_| 50.0 + 10.0 * r.sample::<f64, _>(StandardNormal)).collect();
            let back = flip(&flip(&x));
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn crops_one_beat_apart_agree(len in 20usize..200, off in 0usize..200) {
            let b = beat(len);
            let off = off % len;
            let long: Vec<f64> = b.iter().chain(&b).cloned().collect();
            prop_assert_eq!(crop_at(&b, off).unwrap(), crop_at(&long, off + len).unwrap());
        }
    }
}
