//! Measurement ingestion: traces to per-subcarrier powers, powers to χ
//! samples, χ samples grouped into one batch per (channel, location tag).
//!
//! χ for one frame is `ln Σ_k 1/Î_k` over the active subcarriers, with Î_k
//! the noise-inclusive interference power in mW.

pub mod trace;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ChannelId, Location, PlatoonConfig};

pub use trace::{
    find_manifests, read_trace, write_trace, IqTraceFile, RecordKind, TraceManifest, TraceRecords,
    MANIFEST_SUFFIX,
};

/// Noise-inclusive powers Î_k (mW) of one time window on one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubcarrierPowerFrame {
    pub channel: ChannelId,
    pub location: Location,
    pub powers: Vec<f64>,
}

impl SubcarrierPowerFrame {
    pub fn validate(&self, expected_len: usize) -> Result<()> {
        if self.powers.len() != expected_len {
            return Err(Error::InvalidInput(format!(
                "frame has {} powers, expected {expected_len}",
                self.powers.len()
            )));
        }
        if let Some((index, &power)) = self
            .powers
            .iter()
            .enumerate()
            .find(|(_, &p)| !(p > 0.0 && p.is_finite()))
        {
            return Err(Error::NonPositivePower { index, power });
        }
        Ok(())
    }
}

/// χ samples observed at one location tag on one channel, in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiBatch {
    pub channel: ChannelId,
    pub location: Location,
    pub samples: Vec<f64>,
    /// Linear mean of Î over active subcarriers and frames, when the batch was
    /// built from power frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_power_mw: Option<f64>,
}

impl ChiBatch {
    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidInput("empty χ batch".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("χ sample {i} is not finite")));
        }
        Ok(())
    }
}

/// Indices of the subcarriers that enter χ, relative to a frame's power vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet(Vec<usize>);

impl ActiveSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidInput("active subcarrier set is empty".into()));
        }
        Ok(ActiveSet(indices))
    }

    pub fn all(width: usize) -> Self {
        ActiveSet((0..width).collect())
    }

    /// The 48 802.11p data subcarriers in a 64-bin centered frame (DC at
    /// bin 32): offsets ±1..=±26 without the pilots at ±7 and ±21.
    pub fn ieee80211p_data() -> Self {
        let idx = (-26i32..=26)
            .filter(|o| !matches!(o.abs(), 0 | 7 | 21))
            .map(|o| (32 + o) as usize)
            .collect();
        ActiveSet(idx)
    }

    /// Picks `count` subcarriers out of a `width`-bin centered frame.
    ///
    /// Equal sizes use every bin; a 64-bin frame with 48 active carriers uses
    /// the 802.11p data map; otherwise the `count` bins nearest DC, skipping
    /// DC itself when there is room.
    pub fn resolve(width: usize, count: usize) -> Result<Self> {
        if count == 0 || count > width {
            return Err(Error::InvalidInput(format!(
                "cannot select {count} active subcarriers from a {width}-bin frame"
            )));
        }
        if count == width {
            return Ok(ActiveSet::all(width));
        }
        if width == 64 && count == 48 {
            return Ok(ActiveSet::ieee80211p_data());
        }
        let dc = width / 2;
        let skip_dc = count < width;
        let mut idx: Vec<usize> = (0..width).filter(|&k| !(skip_dc && k == dc)).collect();
        idx.sort_by_key(|&k| ((k as i64 - dc as i64).abs(), k));
        idx.truncate(count);
        idx.sort_unstable();
        Ok(ActiveSet(idx))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Splits each IQ record into non-overlapping rectangular windows of
/// `dft_size` samples and returns one frame per window holding the
/// `keep_center` bins around DC, ordered from the lowest to the highest
/// frequency. Bin power is `|X_k|² / dft_size · calibration`, so the bins of a
/// window sum to its time-domain energy times the calibration constant.
/// A record tail shorter than `dft_size` is dropped.
pub fn spectralize(
    trace: &IqTraceFile,
    dft_size: usize,
    keep_center: usize,
) -> Result<Vec<SubcarrierPowerFrame>> {
    let records = match &trace.records {
        TraceRecords::Iq(r) => r,
        TraceRecords::Powers(_) => {
            return Err(Error::InvalidInput(
                "spectralize needs complex samples, trace holds powers".into(),
            ))
        }
    };
    if keep_center == 0 || dft_size < keep_center {
        return Err(Error::InvalidInput(format!(
            "keep_center {keep_center} must lie in 1..={dft_size}"
        )));
    }
    if trace.manifest.record_len < dft_size {
        return Err(Error::InvalidInput(format!(
            "record length {} is shorter than the DFT size {dft_size}",
            trace.manifest.record_len
        )));
    }
    let cal = trace.manifest.calibration_or_err()?;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(dft_size);
    let scale = cal / dft_size as f64;
    let first = dft_size / 2 - keep_center / 2;
    let half = dft_size / 2;

    let mut frames = Vec::new();
    let mut buf = vec![Complex::new(0.0, 0.0); dft_size];
    for rec in records {
        for window in rec.chunks_exact(dft_size) {
            buf.copy_from_slice(window);
            fft.process(&mut buf);
            let powers = (first..first + keep_center)
                .map(|s| buf[(s + dft_size - half) % dft_size].norm_sqr() * scale)
                .collect();
            frames.push(SubcarrierPowerFrame {
                channel: trace.manifest.channel,
                location: trace.manifest.location,
                powers,
            });
        }
    }
    Ok(frames)
}

/// Frames straight from a powers-kind trace, one per CSV row.
pub fn power_frames(trace: &IqTraceFile) -> Result<Vec<SubcarrierPowerFrame>> {
    match &trace.records {
        TraceRecords::Powers(rows) => Ok(rows
            .iter()
            .map(|row| SubcarrierPowerFrame {
                channel: trace.manifest.channel,
                location: trace.manifest.location,
                powers: row.clone(),
            })
            .collect()),
        TraceRecords::Iq(_) => Err(Error::InvalidInput(
            "trace holds complex samples; spectralize it first".into(),
        )),
    }
}

/// `ln Σ_{k∈active} 1/Î_k`.
pub fn compute_chi(frame: &SubcarrierPowerFrame, active: &ActiveSet) -> Result<f64> {
    // Neumaier-compensated sum of reciprocals.
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &k in active.indices() {
        let p = *frame.powers.get(k).ok_or_else(|| {
            Error::InvalidInput(format!(
                "active subcarrier {k} outside a {}-bin frame",
                frame.powers.len()
            ))
        })?;
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::NonPositivePower { index: k, power: p });
        }
        let v = 1.0 / p;
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    Ok((sum + comp).ln())
}

fn location_cmp(a: &Location, b: &Location) -> Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

/// Location ordered by `total_cmp` on each coordinate, which makes equality
/// exact bit equality of the tag.
#[derive(Clone, Copy)]
struct TagOrd(Location);

impl PartialEq for TagOrd {
    fn eq(&self, other: &Self) -> bool {
        self.0.key() == other.0.key()
    }
}

impl Eq for TagOrd {}

impl Ord for TagOrd {
    fn cmp(&self, other: &Self) -> Ordering {
        location_cmp(&self.0, &other.0)
    }
}

impl PartialOrd for TagOrd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Groups frames into one [`ChiBatch`] per (channel, exact location tag).
///
/// Batches come out ordered by channel index then location, independent of
/// input order; samples inside a batch keep their input order. The active
/// subcarriers are resolved from the frame width and
/// `cfg.active_subcarriers` (see [`ActiveSet::resolve`]).
pub fn batch_by_location(
    frames: &[SubcarrierPowerFrame],
    cfg: &PlatoonConfig,
) -> Result<Vec<ChiBatch>> {
    struct Acc {
        channel: ChannelId,
        location: Location,
        samples: Vec<f64>,
        power_sum: f64,
        power_count: usize,
    }
    let mut groups: BTreeMap<(u16, TagOrd), Acc> = BTreeMap::new();
    let mut active: Option<(usize, ActiveSet)> = None;
    for frame in frames {
        let width = frame.powers.len();
        let set = match &active {
            Some((w, s)) if *w == width => s,
            _ => {
                active = Some((width, ActiveSet::resolve(width, cfg.active_subcarriers)?));
                &active.as_ref().unwrap().1
            }
        };
        let chi = compute_chi(frame, set)?;
        let key = (frame.channel.index, TagOrd(frame.location));
        let acc = groups.entry(key).or_insert_with(|| Acc {
            channel: frame.channel,
            location: frame.location,
            samples: Vec::new(),
            power_sum: 0.0,
            power_count: 0,
        });
        acc.samples.push(chi);
        acc.power_sum += set.indices().iter().map(|&k| frame.powers[k]).sum::<f64>();
        acc.power_count += set.len();
    }
    Ok(groups
        .into_values()
        .map(|a| ChiBatch {
            channel: a.channel,
            location: a.location,
            samples: a.samples,
            mean_power_mw: Some(a.power_sum / a.power_count as f64),
        })
        .collect())
}

/// Writes batches as CSV rows `channel,loc_x,loc_y,loc_z,chi`.
pub fn write_chi_csv<W: Write>(out: W, batches: &[ChiBatch]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["channel", "loc_x", "loc_y", "loc_z", "chi"])
        .map_err(trace::csv_err)?;
    for b in batches {
        let head = [
            b.channel.index.to_string(),
            format!("{}", b.location.x),
            format!("{}", b.location.y),
            format!("{}", b.location.z),
        ];
        for s in &b.samples {
            w.write_record(head.iter().map(String::as_str).chain([format!("{s}").as_str()]))
                .map_err(trace::csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `channel,loc_x,loc_y,loc_z,chi` rows back into batches. Lines
/// starting with `#` are skipped. Channel center frequencies are not part of
/// the CSV and come back as 0.
pub fn read_chi_csv<R: Read>(input: R) -> Result<Vec<ChiBatch>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let mut order: Vec<ChiBatch> = Vec::new();
    let mut index: BTreeMap<(u16, [u64; 3]), usize> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(trace::csv_err)?;
        if rec.len() != 5 {
            return Err(Error::InvalidInput(format!(
                "χ CSV row {} has {} columns, expected 5",
                line + 1,
                rec.len()
            )));
        }
        let bad = |what: &str| Error::InvalidInput(format!("χ CSV row {}: bad {what}", line + 1));
        let channel: u16 = rec[0].trim().parse().map_err(|_| bad("channel"))?;
        let mut v = [0.0f64; 4];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = rec[i + 1].trim().parse().map_err(|_| bad("number"))?;
        }
        let location = Location::new(v[0], v[1], v[2])?;
        let key = (channel, location.key());
        let at = *index.entry(key).or_insert_with(|| {
            order.push(ChiBatch {
                channel: ChannelId::new(channel, 0.0),
                location,
                samples: Vec::new(),
                mean_power_mw: None,
            });
            order.len() - 1
        });
        order[at].samples.push(v[3]);
    }
    for b in &order {
        b.validate()?;
    }
    Ok(order)
}

/// Writes per-batch mean powers as `channel,loc_x,loc_y,loc_z,mean_power_mw`.
pub fn write_mean_power_csv<W: Write>(out: W, batches: &[ChiBatch]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["channel", "loc_x", "loc_y", "loc_z", "mean_power_mw"])
        .map_err(trace::csv_err)?;
    for b in batches {
        if let Some(m) = b.mean_power_mw {
            w.write_record([
                b.channel.index.to_string(),
                format!("{}", b.location.x),
                format!("{}", b.location.y),
                format!("{}", b.location.z),
                format!("{m}"),
            ])
            .map_err(trace::csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Attaches mean powers from a [`write_mean_power_csv`] file to matching batches.
pub fn read_mean_power_csv<R: Read>(input: R, batches: &mut [ChiBatch]) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let mut table: BTreeMap<(u16, [u64; 3]), f64> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(trace::csv_err)?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::InvalidInput(format!("mean power CSV row {}", line + 1)))
        };
        let channel = parse(0)? as u16;
        let loc = Location::new(parse(1)?, parse(2)?, parse(3)?)?;
        table.insert((channel, loc.key()), parse(4)?);
    }
    for b in batches {
        if let Some(&m) = table.get(&(b.channel.index, b.location.key())) {
            b.mean_power_mw = Some(m);
        }
    }
    Ok(())
}
