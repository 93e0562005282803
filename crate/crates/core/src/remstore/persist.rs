//! JSON-lines REM files.
//!
//! Optional first line `{"meta": {...}}`, then one entry per line. Retained
//! raw samples go to a sidecar `<file>.samples.bin` of little-endian f64,
//! referenced from each channel by `samples_offset` and `samples_len` (counts
//! of f64 values).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{validate_rem, ChannelModel, RemEntry};
use crate::error::{Error, Result};
use crate::mixture::GmmModel;
use crate::types::{ChannelId, Location};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RemFile {
    pub meta: Option<Value>,
    pub entries: Vec<RemEntry>,
}

#[derive(Serialize, Deserialize)]
struct DiskChannel {
    channel: ChannelId,
    model: GmmModel,
    sample_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean_power_mw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    samples_offset: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    samples_len: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct DiskEntry {
    id: u64,
    location: Location,
    channels: Vec<DiskChannel>,
    cluster_label: i64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".samples.bin");
    PathBuf::from(s)
}

/// Writes `file` to `path`, plus the sidecar when any entry retains samples.
/// A stale sidecar is removed otherwise.
pub fn write_rem(path: &Path, file: &RemFile) -> Result<()> {
    validate_rem(&file.entries)?;
    let mut out = BufWriter::new(fs::File::create(path)?);
    if let Some(meta) = &file.meta {
        serde_json::to_writer(&mut out, &Header { meta: meta.clone() })?;
        out.write_all(b"\n")?;
    }
    let mut blob: Vec<u8> = Vec::new();
    for e in &file.entries {
        let channels = e
            .channels
            .iter()
            .map(|c| {
                let (off, len) = match &c.samples {
                    Some(s) => {
                        let off = (blob.len() / 8) as u64;
                        for v in s {
                            blob.extend_from_slice(&v.to_le_bytes());
                        }
                        (Some(off), Some(s.len() as u64))
                    }
                    None => (None, None),
                };
                DiskChannel {
                    channel: c.channel,
                    model: c.model.clone(),
                    sample_count: c.sample_count,
                    mean_power_mw: c.mean_power_mw,
                    samples_offset: off,
                    samples_len: len,
                }
            })
            .collect();
        let d = DiskEntry {
            id: e.id,
            location: e.location,
            channels,
            cluster_label: e.cluster_label,
        };
        serde_json::to_writer(&mut out, &d)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let side = sidecar_path(path);
    if blob.is_empty() {
        if side.exists() {
            fs::remove_file(side)?;
        }
    } else {
        fs::write(side, blob)?;
    }
    Ok(())
}

pub fn read_rem(path: &Path) -> Result<RemFile> {
    let reader = BufReader::new(fs::File::open(path)?);
    let side = sidecar_path(path);
    let blob = if side.exists() { Some(fs::read(&side)?) } else { None };
    let mut file = RemFile::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)?;
        if n == 0 && v.get("meta").is_some() && v.get("id").is_none() {
            file.meta = Some(serde_json::from_value::<Header>(v)?.meta);
            continue;
        }
        let d: DiskEntry = serde_json::from_value(v)
            .map_err(|e| Error::InvalidInput(format!("{}: line {}: {e}", path.display(), n + 1)))?;
        let channels = d
            .channels
            .into_iter()
            .map(|c| {
                let samples = match (c.samples_offset, c.samples_len) {
                    (Some(off), Some(len)) => Some(slice_sidecar(blob.as_deref(), off, len, &side)?),
                    (None, None) => None,
                    _ => {
                        return Err(Error::InvalidInput(format!(
                            "entry {}: samples_offset and samples_len must appear together",
                            d.id
                        )))
                    }
                };
                Ok(ChannelModel {
                    channel: c.channel,
                    model: c.model,
                    sample_count: c.sample_count,
                    samples,
                    mean_power_mw: c.mean_power_mw,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        file.entries.push(RemEntry {
            id: d.id,
            location: d.location,
            channels,
            cluster_label: d.cluster_label,
        });
    }
    validate_rem(&file.entries)?;
    Ok(file)
}

fn slice_sidecar(blob: Option<&[u8]>, off: u64, len: u64, side: &Path) -> Result<Vec<f64>> {
    let blob = blob.ok_or_else(|| {
        Error::InvalidInput(format!("sample sidecar {} is missing", side.display()))
    })?;
    let start = off * 8;
    let end = start + len * 8;
    if end > blob.len() as u64 {
        return Err(Error::TruncatedRecord {
            offset: start,
            expected: len * 8,
            found: (blob.len() as u64).saturating_sub(start),
        });
    }
    Ok(blob[start as usize..end as usize]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect())
}
