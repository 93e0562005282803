//! On-disk measurement traces.
//!
//! A trace is a `<stem>.manifest.json` file next to its data file. The data
//! file is either little-endian float32 interleaved I/Q pairs
//! (`record_kind: "iq"`) or a CSV of linear per-subcarrier powers in mW with a
//! `k0..k{N-1}` header (`record_kind: "powers"`).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ChannelId, Location};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Iq,
    Powers,
}

fn default_calibration() -> Option<f64> {
    Some(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub channel: ChannelId,
    pub location: Location,
    #[serde(default)]
    pub timestamp: String,
    pub sample_rate_hz: f64,
    pub record_kind: RecordKind,
    /// Complex samples per record (iq) or power columns per row (powers).
    pub record_len: usize,
    pub records: usize,
    /// ADC full-scale to milliwatts. Absent means 1.0; an explicit `null` is rejected.
    #[serde(default = "default_calibration")]
    pub calibration: Option<f64>,
    /// Data file name, relative to the manifest's directory.
    pub data_file: String,
}

impl TraceManifest {
    pub fn validate(&self) -> Result<()> {
        self.location.validate()?;
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sample_rate_hz must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.record_len == 0 {
            return Err(Error::InvalidInput("record_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn calibration_or_err(&self) -> Result<f64> {
        match self.calibration {
            Some(c) if c.is_finite() && c > 0.0 => Ok(c),
            _ => Err(Error::MissingCalibration(self.data_file.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecords {
    Iq(Vec<Vec<Complex<f64>>>),
    Powers(Vec<Vec<f64>>),
}

/// A parsed trace: manifest plus its records.
#[derive(Debug, Clone, PartialEq)]
pub struct IqTraceFile {
    pub manifest: TraceManifest,
    pub records: TraceRecords,
}

impl IqTraceFile {
    /// Checks record lengths against the manifest layout.
    pub fn validate(&self) -> Result<()> {
        self.manifest.validate()?;
        let lens: Vec<usize> = match &self.records {
            TraceRecords::Iq(r) => r.iter().map(Vec::len).collect(),
            TraceRecords::Powers(r) => r.iter().map(Vec::len).collect(),
        };
        if lens.len() != self.manifest.records {
            return Err(Error::InvalidInput(format!(
                "manifest declares {} records, found {}",
                self.manifest.records,
                lens.len()
            )));
        }
        if let Some(i) = lens.iter().position(|&l| l != self.manifest.record_len) {
            return Err(Error::InvalidInput(format!(
                "record {i} has length {}, manifest layout says {}",
                lens[i], self.manifest.record_len
            )));
        }
        Ok(())
    }
}

/// Finds every `*.manifest.json` in a directory, sorted by file name.
pub fn find_manifests(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(MANIFEST_SUFFIX))
        {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_trace(manifest_path: &Path) -> Result<IqTraceFile> {
    let manifest: TraceManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    manifest.validate()?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let data_path = dir.join(&manifest.data_file);
    let records = match manifest.record_kind {
        RecordKind::Iq => TraceRecords::Iq(parse_iq(&fs::read(&data_path)?, &manifest)?),
        RecordKind::Powers => TraceRecords::Powers(parse_powers(&data_path, &manifest)?),
    };
    let trace = IqTraceFile { manifest, records };
    trace.validate()?;
    Ok(trace)
}

fn parse_iq(bytes: &[u8], m: &TraceManifest) -> Result<Vec<Vec<Complex<f64>>>> {
    let record_bytes = (m.record_len * 8) as u64;
    let mut records = Vec::with_capacity(m.records);
    for r in 0..m.records {
        let start = r as u64 * record_bytes;
        let available = (bytes.len() as u64).saturating_sub(start);
        if available < record_bytes {
            return Err(Error::TruncatedRecord {
                offset: start,
                expected: record_bytes,
                found: available,
            });
        }
        let chunk = &bytes[start as usize..(start + record_bytes) as usize];
        let rec = chunk
            .chunks_exact(8)
            .map(|p| {
                let re = f32::from_le_bytes([p[0], p[1], p[2], p[3]]);
                let im = f32::from_le_bytes([p[4], p[5], p[6], p[7]]);
                Complex::new(re as f64, im as f64)
            })
            .collect();
        records.push(rec);
    }
    let used = m.records as u64 * record_bytes;
    if (bytes.len() as u64) > used {
        return Err(Error::InvalidInput(format!(
            "{} trailing bytes after the last record at byte offset {used}",
            bytes.len() as u64 - used
        )));
    }
    Ok(records)
}

fn parse_powers(path: &Path, m: &TraceManifest) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    for (i, h) in headers.iter().enumerate() {
        if h.trim() != format!("k{i}") {
            return Err(Error::InvalidInput(format!(
                "power CSV header column {i} is {h:?}, expected \"k{i}\""
            )));
        }
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidInput(format!("power CSV row {}: {e}", line + 1)))?;
        if row.len() != m.record_len {
            return Err(Error::InvalidInput(format!(
                "power CSV row {} has {} columns, manifest layout says {}",
                line + 1,
                row.len(),
                m.record_len
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

/// Writes a trace as `<dir>/<stem>.manifest.json` plus its data file. The
/// manifest's `record_kind`, `record_len`, `records` and `data_file` are
/// filled in from `records`.
pub fn write_trace(
    dir: &Path,
    stem: &str,
    mut manifest: TraceManifest,
    records: &TraceRecords,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    match records {
        TraceRecords::Iq(recs) => {
            manifest.record_kind = RecordKind::Iq;
            manifest.records = recs.len();
            manifest.record_len = recs.first().map_or(0, Vec::len);
            manifest.data_file = format!("{stem}.iq.bin");
            let mut w = BufWriter::new(fs::File::create(dir.join(&manifest.data_file))?);
            for rec in recs {
                for c in rec {
                    w.write_all(&(c.re as f32).to_le_bytes())?;
                    w.write_all(&(c.im as f32).to_le_bytes())?;
                }
            }
            w.flush()?;
        }
        TraceRecords::Powers(rows) => {
            manifest.record_kind = RecordKind::Powers;
            manifest.records = rows.len();
            manifest.record_len = rows.first().map_or(0, Vec::len);
            manifest.data_file = format!("{stem}.powers.csv");
            let mut w = BufWriter::new(fs::File::create(dir.join(&manifest.data_file))?);
            let header: Vec<String> = (0..manifest.record_len).map(|k| format!("k{k}")).collect();
            writeln!(w, "{}", header.join(","))?;
            for row in rows {
                let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{}", cells.join(","))?;
            }
            w.flush()?;
        }
    }
    let path = dir.join(format!("{stem}{MANIFEST_SUFFIX}"));
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> TraceManifest {
        TraceManifest {
            channel: ChannelId::new(6, 2.437e9),
            location: Location::new(3.8e6, 1.1e6, 5.0e6).unwrap(),
            timestamp: "t0".into(),
            sample_rate_hz: 20e6,
            record_kind: RecordKind::Iq,
            record_len: 0,
            records: 0,
            calibration: Some(1.0),
            data_file: String::new(),
        }
    }

    #[test]
    fn iq_roundtrip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            (0..16).map(|i| Complex::new(i as f64, -(i as f64))).collect::<Vec<_>>(),
            vec![Complex::new(0.5, 0.25); 16],
        ];
        let p = write_trace(dir.path(), "a", manifest(), &TraceRecords::Iq(recs.clone())).unwrap();
        let t = read_trace(&p).unwrap();
        assert_eq!(t.records, TraceRecords::Iq(recs));
        assert_eq!(t.manifest.record_len, 16);
    }

    #[test]
    fn truncated_iq_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![vec![Complex::new(1.0, 1.0); 4]; 3];
        let p = write_trace(dir.path(), "t", manifest(), &TraceRecords::Iq(recs)).unwrap();
        let bin = dir.path().join("t.iq.bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 5]).unwrap();
        match read_trace(&p).unwrap_err() {
            Error::TruncatedRecord { offset, expected, found } => {
                assert_eq!(offset, 64);
                assert_eq!(expected, 32);
                assert_eq!(found, 27);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn absent_calibration_defaults_null_is_rejected() {
        let mut v = serde_json::to_value(manifest()).unwrap();
        v.as_object_mut().unwrap().remove("calibration");
        let m: TraceManifest = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(m.calibration_or_err().unwrap(), 1.0);
        v["calibration"] = serde_json::Value::Null;
        let m: TraceManifest = serde_json::from_value(v).unwrap();
        assert!(matches!(m.calibration_or_err(), Err(Error::MissingCalibration(_))));
    }

    #[test]
    fn powers_csv_roundtrip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![vec![1e-11, 2.5e-10, 3.0], vec![4.0, 5.0, 6.0]];
        let p = write_trace(dir.path(), "p", manifest(), &TraceRecords::Powers(rows.clone())).unwrap();
        assert_eq!(read_trace(&p).unwrap().records, TraceRecords::Powers(rows));
        fs::write(dir.path().join("p.powers.csv"), "k0,x1,k2\n1,2,3\n").unwrap();
        assert!(read_trace(&p).is_err());
    }
}
