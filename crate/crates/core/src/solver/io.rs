//! `HSR1` container: little-endian magic, `u32` probe count, `u32` sample
//! count, `f64` sample rate, then one `f32` series per probe.

use std::fmt::Write as _;
use std::path::Path;

use super::SimulationResult;
use crate::error::{HemoError, Result};

const MAGIC: &[u8; 4] = b"HSR1";

pub fn encode_result(result: &SimulationResult) -> Vec<u8> {
    let samples = result.series.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(20 + 4 * samples * result.series.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(result.series.len() as u32).to_le_bytes());
    out.extend_from_slice(&(samples as u32).to_le_bytes());
    out.extend_from_slice(&result.sample_rate.to_le_bytes());
    for s in &result.series {
        for &x in s {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_result_binary(result: &SimulationResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_result(result)).map_err(|e| HemoError::io(path, e))
}

/// Read an `HSR1` file back as `(sample_rate, series)`.
pub fn read_result_binary(path: impl AsRef<Path>) -> Result<(f64, Vec<Vec<f32>>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| HemoError::io(path, e))?;
    let bad = |m: &str| HemoError::format(path, m);
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(bad("missing HSR1 header"));
    }
    let probes = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let samples = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let rate = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if bytes.len() != 20 + 4 * probes * samples {
        return Err(bad("payload length does not match header"));
    }
    let series = bytes[20..]
        .chunks_exact(4 * samples.max(1))
        .take(probes)
        .map(|c| {
            c.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok((rate, series))
}

/// One row per sample: time in seconds followed by each probe value.
pub fn write_result_csv(result: &SimulationResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("time_s");
    for p in &result.probes {
        let q = serde_json::to_value(p.quantity).expect("enum serializes");
        let _ = write!(text, ",{}@{}:{}", p.segment_id, p.position, q.as_str().unwrap_or(""));
    }
    text.push('\n');
    let samples = result.series.first().map_or(0, Vec::len);
    for j in 0..samples {
        let _ = write!(text, "{}", j as f64 / result.sample_rate);
        for s in &result.series {
            let _ = write!(text, ",{}", s[j]);
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| HemoError::io(path, e))
}
