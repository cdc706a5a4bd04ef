//! Finalized segment datasets: one `<modality>.hsg` file per modality plus
//! `metadata.json` with the noise model, seeds, digests and the subject-level
//! split.
//!
//! Record layout (little-endian, fixed size): `u64` subject id, `f64` age,
//! 4 × `f64` biomarkers, `f64` SNR (dB), `u32` flags (bit 0 additive noise,
//! bit 1 flipped), `u32` crop offset, 1000 × `f32` processed samples,
//! 1000 × `f32` clean unfiltered crop.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    apply_noise, apply_noise_at_snr, bandpass, derive_ppg, stack_and_crop, Modality, NoiseRecord, NoiseSpec, WaveformSegment, SAMPLE_RATE,
    SEGMENT_LEN, SNR_SATURATION_DB,
};
use crate::error::{HemoError, Result};
use crate::population::{subject_seed, RawDataset};

const MAGIC: &[u8; 4] = b"HSG1";
const RECORD_BYTES: usize = 8 * 7 + 4 * 2 + 4 * 2 * SEGMENT_LEN;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub subject_id: u64,
    pub age: f64,
    /// HR (bpm), CO (L/min), SVR (Pa·s/m³), LVET (ms).
    pub biomarkers: [f64; 4],
    pub snr_db: f64,
    pub additive: bool,
    pub flipped: bool,
    pub crop_offset: u32,
    /// Noisy, bandpassed segment.
    pub samples: Vec<f32>,
    /// Clean crop before noise and filtering.
    pub clean: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Subject ids per split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<u64>,
    pub validation: Vec<u64>,
    pub test: Vec<u64>,
}

impl SplitIndices {
    pub fn of(&self, id: u64) -> Option<Split> {
        if self.train.binary_search(&id).is_ok() {
            Some(Split::Train)
        } else if self.validation.binary_search(&id).is_ok() {
            Some(Split::Validation)
        } else if self.test.binary_search(&id).is_ok() {
            Some(Split::Test)
        } else {
            None
        }
    }
}

/// Shuffle subject ids and cut them into train/validation/test by the given
/// fractions. Each list is returned sorted.
pub fn split_subjects(ids: &[u64], fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if fractions.iter().any(|f| *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(HemoError::domain("signal_pipeline", format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut parts = [
        ids[..n_train].to_vec(),
        ids[n_train..n_train + n_val].to_vec(),
        ids[n_train + n_val..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train, validation, test] = parts;
    Ok(SplitIndices { train, validation, test })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinalizeOptions {
    pub noise: NoiseSpec,
    pub seed: u64,
    pub segments_per_subject: usize,
    pub split_fractions: [f64; 3],
}

impl Default for FinalizeOptions {
    fn default() -> Self {
        FinalizeOptions {
            noise: NoiseSpec::default(),
            seed: 0,
            segments_per_subject: 1,
            split_fractions: [0.7, 0.1, 0.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentFile {
    pub file: String,
    pub sha256: String,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalizedMetadata {
    pub format: String,
    pub code_version: String,
    pub options: FinalizeOptions,
    /// SHA-256 of the raw dataset's metadata file, when known.
    pub source_digest: Option<String>,
    pub split: SplitIndices,
    pub files: BTreeMap<Modality, SegmentFile>,
}

#[derive(Clone, Debug)]
pub struct FinalizedDataset {
    pub metadata: FinalizedMetadata,
    pub apw: Vec<SegmentRecord>,
    pub ppg: Vec<SegmentRecord>,
}

impl FinalizedDataset {
    pub fn modality(&self, m: Modality) -> &[SegmentRecord] {
        match m {
            Modality::Apw => &self.apw,
            Modality::Ppg => &self.ppg,
        }
    }

    pub fn split(&self, m: Modality, split: Split) -> Vec<&SegmentRecord> {
        self.modality(m)
            .iter()
            .filter(|r| self.metadata.split.of(r.subject_id) == Some(split))
            .collect()
    }
}

fn to_f32(x: &[f64]) -> Vec<f32> {
    x.iter().map(|&v| v as f32).collect()
}

fn build_record(
    beat: &[f64],
    modality: Modality,
    age: f64,
    biomarkers: [f64; 4],
    subject_id: u64,
    seed: u64,
    noise: &NoiseSpec,
) -> Result<SegmentRecord> {
    let clean = stack_and_crop(beat, modality, subject_id, seed)?;
    let noisy = apply_noise(&clean, noise, subject_seed(seed, 1))?;
    let processed = bandpass(&noisy);
    Ok(SegmentRecord {
        subject_id,
        age,
        biomarkers,
        snr_db: noisy.noise.snr_db.unwrap_or(SNR_SATURATION_DB),
        additive: noisy.noise.additive.is_some(),
        flipped: noisy.noise.flipped,
        crop_offset: clean.crop_offset as u32,
        samples: to_f32(&processed.samples),
        clean: to_f32(&clean.samples),
    })
}

impl SegmentRecord {
    pub fn samples_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64).collect()
    }

    /// The stored clean crop re-noised at exactly `snr_db` (equal Gaussian
    /// and red power, no flip) and bandpassed like a finalized segment.
    pub fn at_snr(&self, modality: Modality, snr_db: f64, red_coefficient: f64, seed: u64) -> Result<Vec<f64>> {
        let clean = WaveformSegment {
            samples: self.clean.iter().map(|&v| v as f64).collect(),
            sample_rate: SAMPLE_RATE,
            modality,
            subject_id: self.subject_id,
            noise: NoiseRecord::default(),
            crop_offset: self.crop_offset as usize,
        };
        let noisy = apply_noise_at_snr(&clean, snr_db, red_coefficient, seed)?;
        Ok(bandpass(&noisy).samples)
    }
}

/// Produce both modalities for every raw record: stack and crop, apply the
/// noise model, bandpass. Every segment has its own seed derived from the
/// finalize seed, the subject id, the modality and the copy index.
pub fn segment_records(raw: &RawDataset, opts: &FinalizeOptions) -> Result<(Vec<SegmentRecord>, Vec<SegmentRecord>)> {
    opts.noise.validate()?;
    if opts.segments_per_subject == 0 {
        return Err(HemoError::domain("signal_pipeline", "segments_per_subject must be at least 1"));
    }
    let per_subject: Vec<Result<(Vec<SegmentRecord>, Vec<SegmentRecord>)>> = raw
        .records
        .par_iter()
        .map(|rec| {
            let s = &rec.subject;
            let biomarkers = s.biomarkers().ok_or_else(|| {
                HemoError::domain("signal_pipeline", format!("subject {} has no SVR; was it simulated?", s.subject_id))
            })?;
            let ppg_beat = derive_ppg(&rec.bed_volume)?;
            let base = subject_seed(opts.seed, s.subject_id);
            let mut apw = Vec::new();
            let mut ppg = Vec::new();
            for copy in 0..opts.segments_per_subject as u64 {
                let seed = |m: u64| subject_seed(base, 2 * copy + m);
                apw.push(build_record(&rec.apw_mmhg, Modality::Apw, s.age, biomarkers, s.subject_id, seed(0), &opts.noise)?);
                ppg.push(build_record(&ppg_beat, Modality::Ppg, s.age, biomarkers, s.subject_id, seed(1), &opts.noise)?);
            }
            Ok((apw, ppg))
        })
        .collect();
    let mut apw = Vec::new();
    let mut ppg = Vec::new();
    for r in per_subject {
        let (a, p) = r?;
        apw.extend(a);
        ppg.extend(p);
    }
    Ok((apw, ppg))
}

pub fn encode_segments(records: &[SegmentRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + records.len() * RECORD_BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.subject_id.to_le_bytes());
        out.extend_from_slice(&r.age.to_le_bytes());
        for b in r.biomarkers {
            out.extend_from_slice(&b.to_le_bytes());
        }
        out.extend_from_slice(&r.snr_db.to_le_bytes());
        let flags = r.additive as u32 | (r.flipped as u32) << 1;
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&r.crop_offset.to_le_bytes());
        for v in r.samples.iter().chain(&r.clean) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_segments(path: impl AsRef<Path>, records: &[SegmentRecord]) -> Result<String> {
    let path = path.as_ref();
    if let Some(r) = records.iter().find(|r| r.samples.len() != SEGMENT_LEN || r.clean.len() != SEGMENT_LEN) {
        return Err(HemoError::domain("signal_pipeline", format!("subject {} segment is not {SEGMENT_LEN} samples", r.subject_id)));
    }
    let bytes = encode_segments(records);
    std::fs::write(path, &bytes).map_err(|e| HemoError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Read a segment file; returns the records and the file's SHA-256.
pub fn read_segments(path: impl AsRef<Path>) -> Result<(Vec<SegmentRecord>, String)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| HemoError::io(path, e))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(HemoError::format(path, "missing HSG1 magic"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + n * RECORD_BYTES {
        return Err(HemoError::format(path, format!("expected {n} records of {RECORD_BYTES} bytes")));
    }
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32s = |o: usize| -> Vec<f32> {
        bytes[o..o + 4 * SEGMENT_LEN]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect()
    };
    let records = (0..n)
        .map(|k| {
            let o = 8 + k * RECORD_BYTES;
            let flags = u32_at(o + 56);
            SegmentRecord {
                subject_id: u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()),
                age: f64_at(o + 8),
                biomarkers: [f64_at(o + 16), f64_at(o + 24), f64_at(o + 32), f64_at(o + 40)],
                snr_db: f64_at(o + 48),
                additive: flags & 1 != 0,
                flipped: flags & 2 != 0,
                crop_offset: u32_at(o + 60),
                samples: f32s(o + 64),
                clean: f32s(o + 64 + 4 * SEGMENT_LEN),
            }
        })
        .collect();
    Ok((records, digest))
}

pub const FINALIZED_METADATA: &str = "metadata.json";

/// Segment a raw dataset and write `apw.hsg`, `ppg.hsg` and
/// `metadata.json` into `out`.
pub fn finalize_dataset(
    raw: &RawDataset,
    source_digest: Option<String>,
    out: impl AsRef<Path>,
    opts: &FinalizeOptions,
) -> Result<FinalizedMetadata> {
    let out = out.as_ref();
    std::fs::create_dir_all(out).map_err(|e| HemoError::io(out, e))?;
    let (apw, ppg) = segment_records(raw, opts)?;
    let ids: Vec<u64> = raw.records.iter().map(|r| r.subject.subject_id).collect();
    let split = split_subjects(&ids, opts.split_fractions, subject_seed(opts.seed, u64::MAX))?;
    let mut files = BTreeMap::new();
    for (m, recs) in [(Modality::Apw, &apw), (Modality::Ppg, &ppg)] {
        let file = format!("{}.hsg", m.name());
        let sha256 = write_segments(out.join(&file), recs)?;
        files.insert(
            m,
            SegmentFile {
                file,
                sha256,
                records: recs.len(),
            },
        );
    }
    let meta = FinalizedMetadata {
        format: "hemo-segments/1".into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        options: opts.clone(),
        source_digest,
        split,
        files,
    };
    let path = out.join(FINALIZED_METADATA);
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| HemoError::io(&path, e))?;
    Ok(meta)
}

/// Load a finalized dataset, verifying each file against its digest.
pub fn read_finalized(dir: impl AsRef<Path>) -> Result<FinalizedDataset> {
    let dir = dir.as_ref();
    let path = dir.join(FINALIZED_METADATA);
    let text = std::fs::read_to_string(&path).map_err(|e| HemoError::io(&path, e))?;
    let metadata: FinalizedMetadata = serde_json::from_str(&text).map_err(|e| HemoError::format(&path, e.to_string()))?;
    let mut apw = Vec::new();
    let mut ppg = Vec::new();
    for (m, f) in &metadata.files {
        let p = dir.join(&f.file);
        if !p.exists() {
            return Err(HemoError::DigestMismatch {
                path: p.display().to_string(),
                message: "segment file is missing".into(),
            });
        }
        let (recs, digest) = read_segments(&p)?;
        if digest != f.sha256 {
            return Err(HemoError::DigestMismatch {
                path: p.display().to_string(),
                message: format!("expected sha256 {}, found {digest}", f.sha256),
            });
        }
        match m {
            Modality::Apw => apw = recs,
            Modality::Ppg => ppg = recs,
        }
    }
    Ok(FinalizedDataset { metadata, apw, ppg })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_seeded_partition() {
        let ids: Vec<u64> = (0..1000).collect();
        let s = split_subjects(&ids, [0.7, 0.1, 0.2], 4).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (700, 100, 200));
        let mut all: Vec<u64> = s.train.iter().chain(&s.validation).chain(&s.test).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(s, split_subjects(&ids, [0.7, 0.1, 0.2], 4).unwrap());
        assert_ne!(s, split_subjects(&ids, [0.7, 0.1, 0.2], 5).unwrap());
        assert_eq!(s.of(s.test[3]), Some(Split::Test));
        assert_eq!(s.of(5000), None);
        assert!(split_subjects(&ids, [0.7, 0.2, 0.2], 4).is_err());
    }

    #[test]
    fn segment_file_round_trip() {
        let rec = SegmentRecord {
            subject_id: 42,
            age: 61.5,
            biomarkers: [72.0, 5.1, 1.3e8, 301.0],
            snr_db: 12.25,
            additive: true,
            flipped: false,
            crop_offset: 17,
            samples: (0..SEGMENT_LEN).map(|i| i as f32 * 0.5).collect(),
            clean: (0..SEGMENT_LEN).map(|i| -(i as f32)).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.hsg");
        let sha = write_segments(&path, &[rec.clone(), rec.clone()]).unwrap();
        let (back, digest) = read_segments(&path).unwrap();
        assert_eq!(back, vec![rec.clone(), rec]);
        assert_eq!(sha, digest);
        std::fs::write(&path, b"HSG1\x01\0\0\0").unwrap();
        assert!(matches!(read_segments(&path), Err(HemoError::Format { .. })));
    }
}
