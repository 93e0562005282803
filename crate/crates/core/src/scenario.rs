//! Synthetic ground truth: a route, planted interference per region and
//! channel, and the files the ingest stage reads.
//!
//! In χ mode every (location, channel) gets `samples_per_location` draws from
//! the region's planted mixture. In power mode each frame's per-subcarrier
//! powers are the noise floor plus on/off log-normal interference sources,
//! written as powers-kind traces.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    write_chi_csv, write_trace, ChiBatch, RecordKind, TraceManifest, TraceRecords,
};
use crate::mixture::{self, GmmModel};
use crate::propagation::TwoSlopeParams;
use crate::types::{dbm_to_mw, validate_channel_set, ChannelId, Location, PlatoonConfig, Route};

pub const DEFAULT_SPACING_M: f64 = 100.0;
pub const DEFAULT_SAMPLES_PER_LOCATION: usize = 25_600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioMode {
    #[default]
    Chi,
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub origin_lat_deg: f64,
    pub origin_lon_deg: f64,
    #[serde(default)]
    pub origin_alt_m: f64,
    /// Polyline vertices as local east/north/up offsets from the origin.
    pub waypoints_enu: Vec<[f64; 3]>,
    #[serde(default = "default_spacing")]
    pub spacing_m: f64,
}

fn default_spacing() -> f64 {
    DEFAULT_SPACING_M
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES_PER_LOCATION
}

/// A log-normal interference source that is on in a fraction of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceSource {
    pub mean_dbm: f64,
    #[serde(default)]
    pub sigma_db: f64,
    #[serde(default = "one")]
    pub duty_cycle: f64,
    /// Affected subcarrier positions; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcarriers: Option<Vec<usize>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedChannel {
    pub channel: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<GmmModel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<InterferenceSource>,
}

/// Planted interference over route distance `[from_m, to_m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    #[serde(default)]
    pub name: String,
    pub from_m: f64,
    pub to_m: f64,
    pub channels: Vec<PlantedChannel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    #[serde(default)]
    pub mode: ScenarioMode,
    pub route: RouteSpec,
    pub channels: Vec<ChannelId>,
    pub regions: Vec<RegionSpec>,
    #[serde(default = "default_samples")]
    pub samples_per_location: usize,
    #[serde(default)]
    pub propagation: TwoSlopeParams,
    #[serde(default)]
    pub platoon: PlatoonConfig,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        validate_channel_set(&self.channels)?;
        self.propagation.validate()?;
        crate::types::validate_config(self.platoon.clone())?;
        let r = &self.route;
        if !(r.spacing_m > 0.0 && r.spacing_m.is_finite()) {
            return bad("route spacing_m must be positive".into());
        }
        if r.waypoints_enu.is_empty() {
            return bad("route needs at least one waypoint".into());
        }
        if self.samples_per_location == 0 {
            return bad("samples_per_location must be at least 1".into());
        }
        for reg in &self.regions {
            if !(reg.from_m < reg.to_m) {
                return bad(format!("region {:?} has from_m >= to_m", reg.name));
            }
            for ch in &self.channels {
                let p = reg
                    .channels
                    .iter()
                    .find(|p| p.channel == ch.index)
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "region {:?} plants nothing on channel {}",
                            reg.name, ch.index
                        ))
                    })?;
                match self.mode {
                    ScenarioMode::Chi => {
                        p.model
                            .as_ref()
                            .ok_or_else(|| {
                                Error::InvalidConfig(format!(
                                    "region {:?} channel {} needs a model in chi mode",
                                    reg.name, ch.index
                                ))
                            })?
                            .validate()?;
                    }
                    ScenarioMode::Power => {
                        for s in &p.sources {
                            if !(s.mean_dbm.is_finite() && s.sigma_db >= 0.0) {
                                return bad(format!("region {:?}: bad source", reg.name));
                            }
                            if !(0.0..=1.0).contains(&s.duty_cycle) {
                                return bad(format!(
                                    "region {:?}: duty_cycle must lie in [0,1]",
                                    reg.name
                                ));
                            }
                            if let Some(k) = s
                                .subcarriers
                                .iter()
                                .flatten()
                                .find(|&&k| k >= self.platoon.active_subcarriers)
                            {
                                return bad(format!(
                                    "region {:?}: subcarrier {k} out of range",
                                    reg.name
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Route sampled every `spacing_m` along the polyline, labelled by region.
    pub fn build_route(&self) -> Result<Route> {
        let r = &self.route;
        let origin = Location::from_geodetic(r.origin_lat_deg, r.origin_lon_deg, r.origin_alt_m)?;
        let pts = polyline_points(&r.waypoints_enu, r.spacing_m);
        let locations = pts
            .iter()
            .map(|(p, _)| origin.offset_enu(r.origin_lat_deg, r.origin_lon_deg, p[0], p[1], p[2]))
            .collect();
        let mut route = Route::new(locations)?;
        let regions = self.region_indices(&pts.iter().map(|(_, d)| *d).collect::<Vec<_>>())?;
        route.labels = Some(
            regions
                .iter()
                .map(|&i| {
                    let n = &self.regions[i].name;
                    if n.is_empty() {
                        format!("region{i}")
                    } else {
                        n.clone()
                    }
                })
                .collect(),
        );
        Ok(route)
    }

    /// Region index for each route distance; gaps are errors.
    pub fn region_indices(&self, distances: &[f64]) -> Result<Vec<usize>> {
        let mut regs: Vec<(usize, &RegionSpec)> = self.regions.iter().enumerate().collect();
        regs.sort_by(|a, b| a.1.from_m.total_cmp(&b.1.from_m));
        let end = distances.iter().cloned().fold(0.0, f64::max);
        let mut covered = 0.0;
        for (_, r) in &regs {
            if r.from_m > covered {
                return Err(Error::RegionGap {
                    from_m: covered,
                    to_m: r.from_m,
                });
            }
            covered = covered.max(r.to_m);
        }
        if covered <= end {
            return Err(Error::RegionGap {
                from_m: covered,
                to_m: end,
            });
        }
        Ok(distances
            .iter()
            .map(|&d| {
                regs.iter()
                    .find(|(_, r)| r.from_m <= d && d < r.to_m)
                    .map(|(i, _)| *i)
                    .expect("coverage checked")
            })
            .collect())
    }
}

/// Points every `spacing` metres along the polyline, with their distance
/// from the start. Always includes the first vertex.
fn polyline_points(vertices: &[[f64; 3]], spacing: f64) -> Vec<([f64; 3], f64)> {
    let mut out = vec![(vertices[0], 0.0)];
    let mut walked = 0.0;
    let mut next = spacing;
    for w in vertices.windows(2) {
        let seg: Vec<f64> = (0..3).map(|i| w[1][i] - w[0][i]).collect();
        let len = seg.iter().map(|v| v * v).sum::<f64>().sqrt();
        while next <= walked + len + 1e-9 && len > 0.0 {
            let f = (next - walked) / len;
            out.push(([w[0][0] + f * seg[0], w[0][1] + f * seg[1], w[0][2] + f * seg[2]], next));
            next += spacing;
        }
        walked += len;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLocation {
    pub index: usize,
    pub distance_m: f64,
    pub location: Location,
    pub region: usize,
}

/// What was planted, for oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub mode: ScenarioMode,
    pub samples_per_location: usize,
    pub channels: Vec<ChannelId>,
    pub regions: Vec<RegionSpec>,
    pub locations: Vec<TruthLocation>,
}

impl GroundTruth {
    pub fn planted(&self, location: usize, channel: u16) -> Option<&PlantedChannel> {
        let r = &self.regions[self.locations[location].region];
        r.channels.iter().find(|p| p.channel == channel)
    }
}

fn stream_rng(seed: u64, location: usize, channel: u16) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((location as u64) << 16) | channel as u64);
    rng
}

/// Route, ground truth and χ batches in route order (χ mode only).
pub fn generate_chi(spec: &ScenarioSpec) -> Result<(Route, GroundTruth, Vec<ChiBatch>)> {
    spec.validate()?;
    if spec.mode != ScenarioMode::Chi {
        return Err(Error::InvalidConfig("generate_chi needs mode \"chi\"".into()));
    }
    let (route, truth) = truth(spec)?;
    let batches = truth
        .locations
        .par_iter()
        .flat_map_iter(|tl| {
            let truth = &truth;
            spec.channels.iter().map(move |ch| {
                let model = truth
                    .planted(tl.index, ch.index)
                    .and_then(|p| p.model.as_ref())
                    .expect("validated");
                let mut rng = stream_rng(spec.seed, tl.index, ch.index);
                ChiBatch {
                    channel: *ch,
                    location: tl.location,
                    samples: mixture::sample_with(model, spec.samples_per_location, &mut rng),
                    mean_power_mw: None,
                }
            })
        })
        .collect();
    Ok((route, truth, batches))
}

fn truth(spec: &ScenarioSpec) -> Result<(Route, GroundTruth)> {
    let route = spec.build_route()?;
    let dist = route.cumulative_distance_m();
    let regions = spec.region_indices(&dist)?;
    let locations = route
        .locations
        .iter()
        .enumerate()
        .map(|(i, l)| TruthLocation {
            index: i,
            distance_m: dist[i],
            location: *l,
            region: regions[i],
        })
        .collect();
    Ok((
        route,
        GroundTruth {
            seed: spec.seed,
            mode: spec.mode,
            samples_per_location: spec.samples_per_location,
            channels: spec.channels.clone(),
            regions: spec.regions.clone(),
            locations,
        },
    ))
}

/// Per-subcarrier power frames for one (location, channel) in power mode.
pub fn power_rows(
    sources: &[InterferenceSource],
    cfg: &PlatoonConfig,
    frames: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let k = cfg.active_subcarriers;
    let noise = cfg.noise_power_mw();
    (0..frames)
        .map(|_| {
            let mut row = vec![noise; k];
            for s in sources {
                if !rng.random_bool(s.duty_cycle) {
                    continue;
                }
                let targets: Vec<usize> = match &s.subcarriers {
                    Some(v) => v.clone(),
                    None => (0..k).collect(),
                };
                for t in targets {
                    let db = if s.sigma_db > 0.0 {
                        Normal::new(s.mean_dbm, s.sigma_db).expect("validated").sample(rng)
                    } else {
                        s.mean_dbm
                    };
                    row[t] += dbm_to_mw(db);
                }
            }
            row
        })
        .collect()
}

/// Files written by [`generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedFiles {
    pub route: PathBuf,
    pub ground_truth: PathBuf,
    /// χ CSV (χ mode) or trace manifests (power mode).
    pub data: Vec<PathBuf>,
}

/// Writes `route.json`, `ground_truth.json` and the data files into `out_dir`.
/// Output is a pure function of the spec.
pub fn generate(spec: &ScenarioSpec, out_dir: &Path) -> Result<GeneratedFiles> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    let (route, truth, data) = match spec.mode {
        ScenarioMode::Chi => {
            let (route, truth, batches) = generate_chi(spec)?;
            let path = out_dir.join("chi.csv");
            write_chi_csv(BufWriter::new(fs::File::create(&path)?), &batches)?;
            (route, truth, vec![path])
        }
        ScenarioMode::Power => {
            let (route, truth) = truth(spec)?;
            let traces = out_dir.join("traces");
            let jobs: Vec<(usize, ChannelId)> = truth
                .locations
                .iter()
                .flat_map(|tl| spec.channels.iter().map(move |c| (tl.index, *c)))
                .collect();
            let paths = jobs
                .par_iter()
                .map(|&(l, ch)| {
                    let planted = truth.planted(l, ch.index).expect("validated");
                    let mut rng = stream_rng(spec.seed, l, ch.index);
                    let rows = power_rows(&planted.sources, &spec.platoon, spec.samples_per_location, &mut rng);
                    let manifest = TraceManifest {
                        channel: ch,
                        location: truth.locations[l].location,
                        timestamp: format!("frame-{l}"),
                        sample_rate_hz: spec.platoon.subcarrier_spacing_hz
                            * spec.platoon.active_subcarriers as f64,
                        record_kind: RecordKind::Powers,
                        record_len: 0,
                        records: 0,
                        calibration: Some(1.0),
                        data_file: String::new(),
                    };
                    write_trace(&traces, &format!("loc{l:05}_ch{}", ch.index), manifest, &TraceRecords::Powers(rows))
                })
                .collect::<Result<Vec<_>>>()?;
            (route, truth, paths)
        }
    };
    let route_path = out_dir.join("route.json");
    fs::write(&route_path, serde_json::to_vec_pretty(&route)?)?;
    let truth_path = out_dir.join("ground_truth.json");
    fs::write(&truth_path, serde_json::to_vec_pretty(&truth)?)?;
    Ok(GeneratedFiles {
        route: route_path,
        ground_truth: truth_path,
        data,
    })
}
