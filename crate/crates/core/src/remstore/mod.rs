//! REM storage and compression.
//!
//! Two entries are neighbours when they are closer than `geo_radius_m` (ECEF
//! Euclidean distance) AND, on every channel, the KS distance between their χ
//! distributions is below the KS radius. DBSCAN over that predicate groups
//! entries; each cluster is merged into one entry and noise entries are kept
//! as they are.

mod build;
mod persist;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{self, ks_distance, CdfSource, FitReport, GmmModel};
use crate::types::{ChannelId, Location};

pub use build::{build_rem, fit_batch, ComponentChoice, FitOptions};
pub use persist::{read_rem, sidecar_path, write_rem, RemFile};

/// Label of entries DBSCAN could not cluster.
pub const NOISE: i64 = -1;

/// Kolmogorov critical values c(α) for the supported significance levels.
pub const KS_CRITICAL_VALUES: [(f64, f64); 7] = [
    (0.20, 1.073),
    (0.10, 1.224),
    (0.05, 1.358),
    (0.025, 1.480),
    (0.01, 1.628),
    (0.005, 1.731),
    (0.001, 1.949),
];

/// Model and statistics of one channel at one REM entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub channel: ChannelId,
    pub model: GmmModel,
    pub sample_count: usize,
    /// Raw χ samples in acquisition order, when retained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<f64>>,
    /// Linear mean interference-plus-noise power (mW), when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_power_mw: Option<f64>,
}

impl ChannelModel {
    /// Distribution used for KS comparisons: raw samples when retained,
    /// otherwise the model.
    pub fn cdf_source(&self) -> CdfSource {
        match &self.samples {
            Some(s) if !s.is_empty() => CdfSource::empirical(s),
            _ => CdfSource::Model(self.model.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemEntry {
    pub id: u64,
    pub location: Location,
    pub channels: Vec<ChannelModel>,
    pub cluster_label: i64,
}

impl RemEntry {
    pub fn validate(&self) -> Result<()> {
        self.location.validate()?;
        if self.channels.is_empty() {
            return Err(Error::InvalidInput(format!("REM entry {} has no channels", self.id)));
        }
        for (i, c) in self.channels.iter().enumerate() {
            c.model.validate()?;
            if c.sample_count == 0 {
                return Err(Error::InvalidInput(format!(
                    "REM entry {} channel {} has zero samples",
                    self.id, c.channel.index
                )));
            }
            if let Some(s) = &c.samples {
                if s.len() != c.sample_count {
                    return Err(Error::InvalidInput(format!(
                        "REM entry {} channel {} retains {} samples but counts {}",
                        self.id,
                        c.channel.index,
                        s.len(),
                        c.sample_count
                    )));
                }
            }
            if i > 0 && self.channels[i - 1].channel.index >= c.channel.index {
                return Err(Error::InvalidInput(format!(
                    "REM entry {} channels not in strictly ascending index order",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn channel_indices(&self) -> Vec<u16> {
        self.channels.iter().map(|c| c.channel.index).collect()
    }

    pub fn channel(&self, index: u16) -> Option<&ChannelModel> {
        self.channels.iter().find(|c| c.channel.index == index)
    }

    /// Total samples over all channels; the entry's weight when merging.
    pub fn total_samples(&self) -> usize {
        self.channels.iter().map(|c| c.sample_count).sum()
    }
}

/// Checks every entry and that all entries share one channel set.
pub fn validate_rem(entries: &[RemEntry]) -> Result<()> {
    let mut ids: Vec<u64> = entries.iter().map(|e| e.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput(format!("duplicate REM entry id {}", w[0])));
    }
    for e in entries {
        e.validate()?;
        if e.channel_indices() != entries[0].channel_indices() {
            return Err(Error::ChannelMismatch {
                a: entries[0].id,
                b: e.id,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringParams {
    pub min_points: usize,
    /// May be `f64::INFINITY` to compare distributions only.
    pub geo_radius_m: f64,
    pub ks_alpha: f64,
    /// Fixed KS radius. `None` derives it per channel pair from the two
    /// sample counts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_radius: Option<f64>,
}

impl ClusteringParams {
    pub fn new(min_points: usize, geo_radius_m: f64, ks_alpha: f64) -> Result<Self> {
        let p = ClusteringParams {
            min_points,
            geo_radius_m,
            ks_alpha,
            ks_radius: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_points < 2 {
            return Err(Error::InvalidConfig("min_points must be at least 2".into()));
        }
        if !(self.geo_radius_m > 0.0) {
            return Err(Error::InvalidConfig("geo_radius_m must be positive".into()));
        }
        if !(self.ks_alpha > 0.0 && self.ks_alpha < 1.0) {
            return Err(Error::InvalidConfig("ks_alpha must lie in (0,1)".into()));
        }
        critical_value(self.ks_alpha)?;
        if let Some(r) = self.ks_radius {
            if !(r > 0.0) {
                return Err(Error::InvalidConfig("ks_radius must be positive".into()));
            }
        }
        Ok(())
    }

    fn radius_for(&self, n: usize, m: usize) -> Result<f64> {
        match self.ks_radius {
            Some(r) => Ok(r),
            None => ks_radius(n, m, self.ks_alpha),
        }
    }
}

fn critical_value(alpha: f64) -> Result<f64> {
    KS_CRITICAL_VALUES
        .iter()
        .find(|(a, _)| (a - alpha).abs() < 1e-12)
        .map(|(_, c)| *c)
        .ok_or_else(|| Error::UnsupportedAlpha {
            alpha,
            supported: KS_CRITICAL_VALUES
                .iter()
                .map(|(a, _)| a.to_string())
                .collect::<Vec<_>>()
                .join(", "),
        })
}

/// `c(α)·√((n+m)/(n·m))`.
pub fn ks_radius(n: usize, m: usize, alpha: f64) -> Result<f64> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidInput("KS radius needs n, m >= 1".into()));
    }
    let (n, m) = (n as f64, m as f64);
    Ok(critical_value(alpha)? * ((n + m) / (n * m)).sqrt())
}

/// Per-channel distributions of one entry, sorted once for repeated KS queries.
struct Prepared {
    sources: Vec<CdfSource>,
    counts: Vec<usize>,
}

impl Prepared {
    fn new(e: &RemEntry) -> Self {
        Prepared {
            sources: e.channels.iter().map(ChannelModel::cdf_source).collect(),
            counts: e.channels.iter().map(|c| c.sample_count).collect(),
        }
    }
}

fn joint_predicate(
    a: &RemEntry,
    pa: &Prepared,
    b: &RemEntry,
    pb: &Prepared,
    p: &ClusteringParams,
) -> Result<bool> {
    if a.location.distance(&b.location) >= p.geo_radius_m {
        return Ok(false);
    }
    for c in 0..pa.sources.len() {
        let eps = p.radius_for(pa.counts[c], pb.counts[c])?;
        if ks_distance(&pa.sources[c], &pb.sources[c]) >= eps {
            return Ok(false);
        }
    }
    Ok(true)
}

fn check_channels(a: &RemEntry, b: &RemEntry) -> Result<()> {
    if a.channel_indices() != b.channel_indices() {
        return Err(Error::ChannelMismatch { a: a.id, b: b.id });
    }
    Ok(())
}

/// True when the entries are geographic neighbours and their χ distributions
/// agree on every channel.
pub fn neighborhood(a: &RemEntry, b: &RemEntry, p: &ClusteringParams) -> Result<bool> {
    check_channels(a, b)?;
    joint_predicate(a, &Prepared::new(a), b, &Prepared::new(b), p)
}

/// Geographic bucket index with cell size equal to the search radius.
struct GridIndex {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl GridIndex {
    fn new(entries: &[RemEntry], cell: f64) -> Option<Self> {
        if !cell.is_finite() {
            return None;
        }
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            buckets.entry(Self::key(&e.location, cell)).or_default().push(i);
        }
        Some(GridIndex { cell, buckets })
    }

    fn key(l: &Location, cell: f64) -> [i64; 3] {
        [
            (l.x / cell).floor() as i64,
            (l.y / cell).floor() as i64,
            (l.z / cell).floor() as i64,
        ]
    }

    fn candidates(&self, l: &Location) -> Vec<usize> {
        let k = Self::key(l, self.cell);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        out.extend_from_slice(b);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// DBSCAN labels (cluster index or [`NOISE`]) aligned with `entries`.
///
/// Entries are visited in ascending id order, so labels are reproducible.
/// A neighbourhood counts the entry itself.
pub fn dbscan_labels(entries: &[RemEntry], p: &ClusteringParams) -> Result<Vec<i64>> {
    p.validate()?;
    validate_rem(entries)?;
    const UNVISITED: i64 = i64::MIN;
    let prepared: Vec<Prepared> = entries.par_iter().map(Prepared::new).collect();
    let grid = GridIndex::new(entries, p.geo_radius_m);
    let region = |i: usize| -> Result<Vec<usize>> {
        let cands = match &grid {
            Some(g) => g.candidates(&entries[i].location),
            None => (0..entries.len()).collect(),
        };
        let hits: Vec<Result<bool>> = cands
            .par_iter()
            .map(|&j| {
                if i == j {
                    Ok(true)
                } else {
                    joint_predicate(&entries[i], &prepared[i], &entries[j], &prepared[j], p)
                }
            })
            .collect();
        let mut out = Vec::new();
        for (j, hit) in cands.into_iter().zip(hits) {
            if hit? {
                out.push(j);
            }
        }
        Ok(out)
    };

    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by_key(|&i| entries[i].id);
    let mut labels = vec![UNVISITED; entries.len()];
    let mut next = 0i64;
    for &i in &order {
        if labels[i] != UNVISITED {
            continue;
        }
        let nbrs = region(i)?;
        if nbrs.len() < p.min_points {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = next;
        let mut queue: Vec<usize> = nbrs.into_iter().filter(|&j| j != i).collect();
        queue.sort_by_key(|&j| std::cmp::Reverse(entries[j].id));
        while let Some(j) = queue.pop() {
            if labels[j] == NOISE {
                labels[j] = next;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = next;
            let nj = region(j)?;
            if nj.len() >= p.min_points {
                let mut fresh: Vec<usize> = nj
                    .into_iter()
                    .filter(|&k| labels[k] == UNVISITED || labels[k] == NOISE)
                    .collect();
                fresh.sort_by_key(|&k| std::cmp::Reverse(entries[k].id));
                // Keep the stack ordered so the smallest id pops first.
                queue.extend(fresh);
                queue.sort_by_key(|&k| std::cmp::Reverse(entries[k].id));
                queue.dedup();
            }
        }
        next += 1;
    }
    Ok(labels)
}

/// Settings for refitting merged clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeOptions {
    pub max_components: usize,
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for MergeOptions {
    fn default() -> Self {
        MergeOptions {
            max_components: mixture::DEFAULT_COMPONENTS,
            restarts: 2,
            seed: 0,
            max_iter: mixture::DEFAULT_MAX_ITER,
            tol: mixture::DEFAULT_TOL,
        }
    }
}

/// Labeled input plus the compressed REM.
#[derive(Debug, Clone, PartialEq)]
pub struct Compression {
    pub labeled: Vec<RemEntry>,
    pub merged: Vec<RemEntry>,
    pub clusters: usize,
}

impl Compression {
    /// Fraction of entries removed by merging.
    pub fn size_reduction(&self) -> f64 {
        1.0 - self.merged.len() as f64 / self.labeled.len() as f64
    }
}

/// Runs DBSCAN and merges every cluster. Noise entries pass through
/// unchanged; each merged entry takes the position of its lowest-id member.
pub fn dbscan_compress(
    entries: &[RemEntry],
    p: &ClusteringParams,
    merge: &MergeOptions,
) -> Result<Compression> {
    if entries.is_empty() {
        return Err(Error::InvalidInput("no REM entries to cluster".into()));
    }
    let labels = dbscan_labels(entries, p)?;
    let mut labeled: Vec<RemEntry> = entries.to_vec();
    for (e, l) in labeled.iter_mut().zip(&labels) {
        e.cluster_label = *l;
    }
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.sort_by_key(|&i| labeled[i].id);
    let clusters = labels.iter().filter(|&&l| l >= 0).max().map_or(0, |m| *m as usize + 1);

    let mut members: Vec<Vec<RemEntry>> = vec![Vec::new(); clusters];
    for &i in &order {
        if labels[i] >= 0 {
            members[labels[i] as usize].push(labeled[i].clone());
        }
    }
    let merged_clusters: Vec<Result<RemEntry>> = members
        .par_iter()
        .enumerate()
        .map(|(c, m)| {
            let opts = MergeOptions {
                seed: merge.seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                ..merge.clone()
            };
            merge_cluster(m, &opts)
        })
        .collect();
    let mut merged_clusters = merged_clusters.into_iter().collect::<Result<Vec<_>>>()?.into_iter().map(Some).collect::<Vec<_>>();

    let mut merged = Vec::new();
    for &i in &order {
        match labels[i] {
            NOISE => merged.push(labeled[i].clone()),
            l => {
                if let Some(m) = merged_clusters[l as usize].take() {
                    merged.push(m);
                }
            }
        }
    }
    Ok(Compression {
        labeled,
        merged,
        clusters,
    })
}

/// Merges cluster members into one entry: sample-weighted centroid, pooled
/// samples per channel refit by AIC selection. Members without retained
/// samples contribute `sample_count` draws from their model instead.
pub fn merge_cluster(members: &[RemEntry], opts: &MergeOptions) -> Result<RemEntry> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot merge an empty cluster".into()))?;
    for m in members {
        check_channels(first, m)?;
    }
    if members.len() == 1 {
        return Ok(first.clone());
    }
    let weights: Vec<f64> = members.iter().map(|m| m.total_samples() as f64).collect();
    let wsum: f64 = weights.iter().sum();
    let centroid = |f: fn(&Location) -> f64| {
        members
            .iter()
            .zip(&weights)
            .map(|(m, w)| f(&m.location) * w)
            .sum::<f64>()
            / wsum
    };
    let location = Location::new(centroid(|l| l.x), centroid(|l| l.y), centroid(|l| l.z))?;

    let mut channels = Vec::with_capacity(first.channels.len());
    for (ci, ch) in first.channels.iter().enumerate() {
        let all_raw = members.iter().all(|m| m.channels[ci].samples.is_some());
        let mut pooled = Vec::new();
        for (mi, m) in members.iter().enumerate() {
            let cm = &m.channels[ci];
            match &cm.samples {
                Some(s) => pooled.extend_from_slice(s),
                None => pooled.extend(mixture::sample(
                    &cm.model,
                    cm.sample_count,
                    opts.seed ^ ((mi as u64) << 20) ^ ci as u64,
                )),
            }
        }
        let fit: FitReport = mixture::select_components_with(
            &pooled,
            opts.max_components.min(pooled.len() / 2).max(1),
            opts.seed ^ (ci as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F),
            opts.restarts,
            opts.max_iter,
            opts.tol,
        )?;
        let sample_count: usize = members.iter().map(|m| m.channels[ci].sample_count).sum();
        let mean_power_mw = members
            .iter()
            .map(|m| {
                m.channels[ci]
                    .mean_power_mw
                    .map(|p| p * m.channels[ci].sample_count as f64)
            })
            .sum::<Option<f64>>()
            .map(|s| s / sample_count as f64);
        channels.push(ChannelModel {
            channel: ch.channel,
            model: fit.model,
            sample_count,
            samples: all_raw.then_some(pooled),
            mean_power_mw,
        });
    }
    Ok(RemEntry {
        id: members.iter().map(|m| m.id).min().unwrap(),
        location,
        channels,
        cluster_label: first.cluster_label,
    })
}

/// Largest distance from a clustered entry to its nearest same-cluster neighbour.
pub fn max_nn_within_cluster(labeled: &[RemEntry]) -> Result<f64> {
    let mut by_cluster: HashMap<i64, Vec<&Location>> = HashMap::new();
    for e in labeled.iter().filter(|e| e.cluster_label >= 0) {
        by_cluster.entry(e.cluster_label).or_default().push(&e.location);
    }
    if by_cluster.is_empty() {
        return Err(Error::NothingClustered);
    }
    let mut worst: f64 = 0.0;
    for locs in by_cluster.values() {
        for (i, a) in locs.iter().enumerate() {
            let nn = locs
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| a.distance(b))
                .fold(f64::INFINITY, f64::min);
            if nn.is_finite() {
                worst = worst.max(nn);
            }
        }
    }
    Ok(worst)
}

/// `(geo_radius_m, max_nn_m)` for each radius; 0 when nothing clusters.
pub fn sweep_geo_radius(
    entries: &[RemEntry],
    base: &ClusteringParams,
    radii: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let p = ClusteringParams {
            geo_radius_m: r,
            ..base.clone()
        };
        let labels = dbscan_labels(entries, &p)?;
        let labeled: Vec<RemEntry> = entries
            .iter()
            .zip(labels)
            .map(|(e, l)| RemEntry {
                cluster_label: l,
                ..e.clone()
            })
            .collect();
        let nn = match max_nn_within_cluster(&labeled) {
            Ok(v) => v,
            Err(Error::NothingClustered) => 0.0,
            Err(e) => return Err(e),
        };
        out.push((r, nn));
    }
    Ok(out)
}
