//! Raw dataset directory: `metadata.json` plus chunk files `chunk_NNNNN.hds`.
//!
//! Chunk layout (little-endian): magic `HDS1`, `u32` header length, JSON
//! header, then per accepted record a `u32` JSON length, the JSON record
//! summary, a `u32` sample count and two `f32` arrays (APW in mmHg, bed
//! volume in m³).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate_population, GenerateOptions, PopulationRecord, PriorSpec, SubjectFailure, VirtualSubject};
use crate::error::{HemoError, Result};
use crate::vascular::ArterialNetwork;

const MAGIC: &[u8; 4] = b"HDS1";
pub const METADATA_FILE: &str = "metadata.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkHeader {
    pub first_subject: u64,
    pub attempted: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub failures: Vec<SubjectFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkInfo {
    pub file: String,
    pub sha256: String,
    pub first_subject: u64,
    pub attempted: usize,
    pub accepted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub format: String,
    pub code_version: String,
    pub seed: u64,
    pub n: usize,
    pub chunk_size: usize,
    pub prior: PriorSpec,
    pub options: GenerateOptions,
    pub network: ArterialNetwork,
    pub attempted: usize,
    pub accepted: usize,
    pub failures: usize,
    pub acceptance_rate: f64,
    pub chunks: Vec<ChunkInfo>,
}

#[derive(Serialize, Deserialize)]
struct RecordSummary {
    subject: VirtualSubject,
    sbp: f64,
    dbp: f64,
    converged: bool,
}

fn put_json<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    let bytes = serde_json::to_vec(value).expect("record serializes");
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&bytes);
}

pub fn encode_chunk(header: &ChunkHeader, records: &[PopulationRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_json(&mut out, header);
    for r in records {
        put_json(
            &mut out,
            &RecordSummary {
                subject: r.subject.clone(),
                sbp: r.sbp,
                dbp: r.dbp,
                converged: r.converged,
            },
        );
        out.extend_from_slice(&(r.apw_mmhg.len() as u32).to_le_bytes());
        for &x in r.apw_mmhg.iter().chain(&r.bed_volume) {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_chunk(path: impl AsRef<Path>, header: &ChunkHeader, records: &[PopulationRecord]) -> Result<String> {
    let path = path.as_ref();
    let bytes = encode_chunk(header, records);
    std::fs::write(path, &bytes).map_err(|e| HemoError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(HemoError::format(self.path, "truncated chunk"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn json<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T> {
        let n = self.u32()?;
        let raw = self.take(n)?;
        serde_json::from_slice(raw).map_err(|e| HemoError::format(self.path, e.to_string()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect())
    }
}

/// Parse a chunk file; returns its header, records and SHA-256 digest.
pub fn read_chunk(path: impl AsRef<Path>) -> Result<(ChunkHeader, Vec<PopulationRecord>, String)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| HemoError::io(path, e))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let mut c = Cursor { bytes: &bytes, pos: 0, path };
    if c.take(4)? != MAGIC {
        return Err(HemoError::format(path, "missing HDS1 magic"));
    }
    let header: ChunkHeader = c.json()?;
    let mut records = Vec::with_capacity(header.accepted);
    for _ in 0..header.accepted {
        let s: RecordSummary = c.json()?;
        let n = c.u32()?;
        let apw = c.f32s(n)?;
        let vol = c.f32s(n)?;
        records.push(PopulationRecord {
            subject: s.subject,
            apw_mmhg: apw,
            bed_volume: vol,
            sbp: s.sbp,
            dbp: s.dbp,
            accepted: true,
            converged: s.converged,
        });
    }
    if c.pos != bytes.len() {
        return Err(HemoError::format(path, "trailing bytes after last record"));
    }
    Ok((header, records, digest))
}

fn chunk_name(k: usize) -> String {
    format!("chunk_{k:05}.hds")
}

/// Generate `n` subjects into `dir` in chunks of `chunk_size`. Chunk files
/// already present with the expected subject range are reused, so an
/// interrupted run resumes where it stopped.
pub fn generate_dataset(
    dir: impl AsRef<Path>,
    n: usize,
    chunk_size: usize,
    prior: &PriorSpec,
    net: &ArterialNetwork,
    opts: &GenerateOptions,
    seed: u64,
) -> Result<DatasetMetadata> {
    let dir = dir.as_ref();
    if n == 0 || chunk_size == 0 {
        return Err(HemoError::domain("population", "need n >= 1 and chunk size >= 1"));
    }
    std::fs::create_dir_all(dir).map_err(|e| HemoError::io(dir, e))?;
    let mut chunks = Vec::new();
    let (mut accepted, mut failures) = (0, 0);
    for (k, first) in (0..n).step_by(chunk_size).enumerate() {
        let count = chunk_size.min(n - first);
        let path = dir.join(chunk_name(k));
        let reusable = read_chunk(&path)
            .ok()
            .filter(|(h, _, _)| h.first_subject == first as u64 && h.attempted == count);
        let (header, digest) = match reusable {
            Some((h, _, d)) => (h, d),
            None => {
                let report = generate_population(first as u64, count, prior, net, opts, seed)?;
                let header = ChunkHeader {
                    first_subject: first as u64,
                    attempted: count,
                    accepted: report.accepted,
                    rejected: report.rejected,
                    failures: report.failures,
                };
                let digest = write_chunk(&path, &header, &report.records)?;
                (header, digest)
            }
        };
        accepted += header.accepted;
        failures += header.failures.len();
        chunks.push(ChunkInfo {
            file: chunk_name(k),
            sha256: digest,
            first_subject: header.first_subject,
            attempted: header.attempted,
            accepted: header.accepted,
        });
    }
    let meta = DatasetMetadata {
        format: "hemo-raw-dataset/1".into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        n,
        chunk_size,
        prior: prior.clone(),
        options: opts.clone(),
        network: net.clone(),
        attempted: n,
        accepted,
        failures,
        acceptance_rate: accepted as f64 / n as f64,
        chunks,
    };
    let path = dir.join(METADATA_FILE);
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&path, text).map_err(|e| HemoError::io(&path, e))?;
    Ok(meta)
}

#[derive(Clone, Debug)]
pub struct RawDataset {
    pub metadata: DatasetMetadata,
    pub records: Vec<PopulationRecord>,
}

/// Load a raw dataset, checking every chunk against its recorded digest.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<RawDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join(METADATA_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| HemoError::io(&meta_path, e))?;
    let metadata: DatasetMetadata =
        serde_json::from_str(&text).map_err(|e| HemoError::format(&meta_path, e.to_string()))?;
    let mut records = Vec::new();
    for info in &metadata.chunks {
        let path: PathBuf = dir.join(&info.file);
        if !path.exists() {
            return Err(HemoError::DigestMismatch {
                path: path.display().to_string(),
                message: "chunk file is missing".into(),
            });
        }
        let (_, recs, digest) = read_chunk(&path)?;
        if digest != info.sha256 {
            return Err(HemoError::DigestMismatch {
                path: path.display().to_string(),
                message: format!("expected sha256 {}, found {digest}", info.sha256),
            });
        }
        records.extend(recs);
    }
    Ok(RawDataset { metadata, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::SolverConfig;
    use crate::vascular::reference_network;

    fn opts() -> GenerateOptions {
        GenerateOptions {
            solver: SolverConfig {
                duration: 6.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn chunks_round_trip_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let prior = PriorSpec::default();
        let net = reference_network();
        let meta = generate_dataset(dir.path(), 5, 2, &prior, &net, &opts(), 3).unwrap();
        assert_eq!(meta.chunks.len(), 3);
        let data = read_dataset(dir.path()).unwrap();
        assert_eq!(data.records.len(), meta.accepted);
        let first = std::fs::read(dir.path().join("chunk_00001.hds")).unwrap();

        std::fs::remove_file(dir.path().join("chunk_00001.hds")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, HemoError::DigestMismatch { .. }));
        assert!(err.to_string().contains("chunk_00001.hds"));

        let again = generate_dataset(dir.path(), 5, 2, &prior, &net, &opts(), 3).unwrap();
        assert_eq!(again, meta);
        assert_eq!(std::fs::read(dir.path().join("chunk_00001.hds")).unwrap(), first);
    }

    #[test]
    fn tampered_chunk_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let prior = PriorSpec::default();
        generate_dataset(dir.path(), 2, 2, &prior, &reference_network(), &opts(), 9).unwrap();
        let path = dir.path().join("chunk_00000.hds");
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(HemoError::DigestMismatch { .. })));
    }
}
