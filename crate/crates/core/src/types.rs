//! Shared domain types: positions, channels, routes and the platoon radio
//! configuration.
//!
//! Positions are earth-centered earth-fixed (ECEF) metres. Geodetic input is
//! converted once, at the boundary, with [`Location::from_geodetic`].
//! Configuration powers are carried in dBm (that is the on-disk schema) and
//! exposed to the numerics in linear milliwatts through accessor methods.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;

/// Sanity band for the ECEF norm of a point on or near the earth's surface.
pub const EARTH_NORM_RANGE_M: (f64, f64) = (6.2e6, 6.5e6);

/// An ECEF position in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Location {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let loc = Location { x, y, z };
        loc.validate()?;
        Ok(loc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "location ({}, {}, {}) has a non-finite coordinate",
                self.x, self.y, self.z
            )));
        }
        Ok(())
    }

    /// Checks that the point lies in the band of plausible terrestrial radii.
    pub fn validate_on_earth(&self) -> Result<()> {
        self.validate()?;
        let r = self.norm();
        if r < EARTH_NORM_RANGE_M.0 || r > EARTH_NORM_RANGE_M.1 {
            return Err(Error::InvalidInput(format!(
                "location norm {r:.1} m outside [{}, {}] m",
                EARTH_NORM_RANGE_M.0, EARTH_NORM_RANGE_M.1
            )));
        }
        Ok(())
    }

    /// WGS-84 latitude/longitude (degrees) and ellipsoidal height (metres) to ECEF.
    pub fn from_geodetic(lat_deg: f64, lon_deg: f64, alt_m: f64) -> Result<Self> {
        let e2 = WGS84_F * (2.0 - WGS84_F);
        let (sin_lat, cos_lat) = lat_deg.to_radians().sin_cos();
        let (sin_lon, cos_lon) = lon_deg.to_radians().sin_cos();
        let n = WGS84_A / (1.0 - e2 * sin_lat * sin_lat).sqrt();
        Location::new(
            (n + alt_m) * cos_lat * cos_lon,
            (n + alt_m) * cos_lat * sin_lon,
            (n * (1.0 - e2) + alt_m) * sin_lat,
        )
    }

    /// Offsets this point by a local east/north/up displacement, using the
    /// tangent frame at the given geodetic latitude/longitude.
    pub fn offset_enu(&self, lat_deg: f64, lon_deg: f64, east: f64, north: f64, up: f64) -> Self {
        let (sp, cp) = lat_deg.to_radians().sin_cos();
        let (sl, cl) = lon_deg.to_radians().sin_cos();
        Location {
            x: self.x - sl * east - sp * cl * north + cp * cl * up,
            y: self.y + cl * east - sp * sl * north + cp * sl * up,
            z: self.z + cp * north + sp * up,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Euclidean distance in metres.
    pub fn distance(&self, other: &Location) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Exact bit pattern, used where location tags are compared for identity.
    pub fn key(&self) -> [u64; 3] {
        [self.x.to_bits(), self.y.to_bits(), self.z.to_bits()]
    }
}

/// A secondary spectrum channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelId {
    pub index: u16,
    /// Informational only.
    pub center_frequency_hz: f64,
}

impl ChannelId {
    pub fn new(index: u16, center_frequency_hz: f64) -> Self {
        ChannelId {
            index,
            center_frequency_hz,
        }
    }
}

/// Checks that channel indices are unique.
pub fn validate_channel_set(channels: &[ChannelId]) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::EmptyChannelSet);
    }
    let mut seen: Vec<u16> = channels.iter().map(|c| c.index).collect();
    seen.sort_unstable();
    if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput(format!(
            "channel index {} appears more than once",
            w[0]
        )));
    }
    Ok(())
}

/// An ordered list of positions the platoon will pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub locations: Vec<Location>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl Route {
    pub fn new(locations: Vec<Location>) -> Result<Self> {
        let route = Route {
            locations,
            labels: None,
        };
        route.validate()?;
        Ok(route)
    }

    pub fn validate(&self) -> Result<()> {
        if self.locations.is_empty() {
            return Err(Error::InvalidInput("route has no locations".into()));
        }
        for loc in &self.locations {
            loc.validate()?;
        }
        if let Some(i) = self
            .locations
            .windows(2)
            .position(|w| w[0].key() == w[1].key())
        {
            return Err(Error::InvalidInput(format!(
                "route locations {} and {} coincide",
                i,
                i + 1
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.locations.len() {
                return Err(Error::InvalidInput(format!(
                    "route has {} labels for {} locations",
                    labels.len(),
                    self.locations.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Cumulative travelled distance at each location, starting at 0.
    pub fn cumulative_distance_m(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.locations.len());
        let mut acc = 0.0;
        for (i, loc) in self.locations.iter().enumerate() {
            if i > 0 {
                acc += self.locations[i - 1].distance(loc);
            }
            out.push(acc);
        }
        out
    }
}

/// Platoon configuration and radio parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonConfig {
    pub subcarrier_spacing_hz: f64,
    pub active_subcarriers: usize,
    pub tx_power_per_subcarrier_dbm: f64,
    pub capacity_threshold_bps: f64,
    pub max_outage: f64,
    pub range_m: f64,
    pub noise_power_dbm_per_subcarrier: f64,
    pub carrier_frequency_hz: f64,
}

impl PlatoonConfig {
    /// Reference parameters: 802.11p numerology, 20 dBm spread over 48
    /// subcarriers, 3 Mbit/s requirement, 200 m platoon length.
    pub fn reference() -> Self {
        let spacing = 156.3e3;
        PlatoonConfig {
            subcarrier_spacing_hz: spacing,
            active_subcarriers: 48,
            tx_power_per_subcarrier_dbm: 20.0 - 10.0 * 48f64.log10(),
            capacity_threshold_bps: 3.0e6,
            max_outage: 1e-4,
            range_m: 200.0,
            noise_power_dbm_per_subcarrier: default_noise_dbm_per_subcarrier(spacing),
            carrier_frequency_hz: 2.4e9,
        }
    }

    pub fn tx_power_mw(&self) -> f64 {
        dbm_to_mw(self.tx_power_per_subcarrier_dbm)
    }

    pub fn noise_power_mw(&self) -> f64 {
        dbm_to_mw(self.noise_power_dbm_per_subcarrier)
    }
}

impl Default for PlatoonConfig {
    fn default() -> Self {
        PlatoonConfig::reference()
    }
}

/// Per-subcarrier thermal noise derived from a -84 dBm floor measured over 20 MHz.
pub fn default_noise_dbm_per_subcarrier(subcarrier_spacing_hz: f64) -> f64 {
    -84.0 - 10.0 * (20.0e6 / subcarrier_spacing_hz).log10()
}

/// Returns the configuration unchanged when every field satisfies its invariant.
pub fn validate_config(cfg: PlatoonConfig) -> Result<PlatoonConfig> {
    fn positive(name: &str, v: f64) -> Result<()> {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("{name} must be positive")))
        }
    }
    positive("subcarrier_spacing_hz", cfg.subcarrier_spacing_hz)?;
    if cfg.active_subcarriers == 0 {
        return Err(Error::InvalidConfig(
            "active_subcarriers must be at least 1".into(),
        ));
    }
    positive("capacity_threshold_bps", cfg.capacity_threshold_bps)?;
    if !(cfg.max_outage > 0.0 && cfg.max_outage < 1.0) {
        return Err(Error::InvalidConfig("max_outage must lie in (0,1)".into()));
    }
    positive("range_m", cfg.range_m)?;
    positive("carrier_frequency_hz", cfg.carrier_frequency_hz)?;
    for (name, v) in [
        ("tx_power_per_subcarrier_dbm", cfg.tx_power_per_subcarrier_dbm),
        (
            "noise_power_dbm_per_subcarrier",
            cfg.noise_power_dbm_per_subcarrier,
        ),
    ] {
        if !v.is_finite() {
            return Err(Error::InvalidConfig(format!("{name} must be finite")));
        }
    }
    Ok(cfg)
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_is_valid() {
        let cfg = PlatoonConfig::reference();
        assert_eq!(validate_config(cfg.clone()).unwrap(), cfg);
        assert!((cfg.tx_power_mw() - 100.0 / 48.0).abs() < 1e-12);
    }

    #[test]
    fn zero_capacity_rejected() {
        let mut cfg = PlatoonConfig::reference();
        cfg.capacity_threshold_bps = 0.0;
        let err = validate_config(cfg).unwrap_err();
        assert_eq!(err.to_string(), "capacity_threshold_bps must be positive");
    }

    #[test]
    fn outage_cap_out_of_range_rejected() {
        let mut cfg = PlatoonConfig::reference();
        cfg.max_outage = 1.5;
        let err = validate_config(cfg).unwrap_err();
        assert_eq!(err.to_string(), "max_outage must lie in (0,1)");
    }

    #[test]
    fn default_noise_floor() {
        // 20 MHz / 156.3 kHz is about 128 bins, about 21.07 dB.
        let n = default_noise_dbm_per_subcarrier(156.3e3);
        assert!((n - (-84.0 - 21.0705)).abs() < 1e-3, "{n}");
    }

    #[test]
    fn geodetic_equator_prime_meridian() {
        let p = Location::from_geodetic(0.0, 0.0, 0.0).unwrap();
        assert!((p.x - WGS84_A).abs() < 1e-6);
        assert!(p.y.abs() < 1e-6 && p.z.abs() < 1e-6);
        let pole = Location::from_geodetic(90.0, 0.0, 0.0).unwrap();
        assert!((pole.z - 6_356_752.314_245).abs() < 1e-3);
        pole.validate_on_earth().unwrap();
    }

    #[test]
    fn enu_offset_preserves_distance() {
        let (lat, lon) = (52.3, 16.9);
        let o = Location::from_geodetic(lat, lon, 80.0).unwrap();
        let p = o.offset_enu(lat, lon, 300.0, 400.0, 0.0);
        assert!((o.distance(&p) - 500.0).abs() < 1e-6);
        let up = o.offset_enu(lat, lon, 0.0, 0.0, 10.0);
        assert!((up.norm() - o.norm() - 10.0).abs() < 0.01);
    }

    #[test]
    fn route_rejects_repeats_and_empty() {
        assert!(Route::new(vec![]).is_err());
        let a = Location::new(1.0, 2.0, 3.0).unwrap();
        assert!(Route::new(vec![a, a]).is_err());
        assert!(Route::new(vec![a]).is_ok());
    }

    #[test]
    fn non_finite_location_rejected() {
        assert!(Location::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(Location::new(0.0, 0.0, 0.0)
            .unwrap()
            .validate_on_earth()
            .is_err());
    }

    #[test]
    fn duplicate_channels_rejected() {
        let chans = [ChannelId::new(1, 2.412e9), ChannelId::new(1, 2.437e9)];
        assert!(validate_channel_set(&chans).is_err());
    }

    fn finite() -> impl Strategy<Value = f64> {
        -1e7..1e7f64
    }

    fn location() -> impl Strategy<Value = Location> {
        (finite(), finite(), finite()).prop_map(|(x, y, z)| Location { x, y, z })
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in location(), b in location(), c in location()) {
            prop_assert_eq!(a.distance(&b), b.distance(&a));
            prop_assert!(a.distance(&c) <= a.distance(&b) + b.distance(&c) + 1e-6);
        }

        #[test]
        fn location_json_roundtrip(a in location()) {
            let s = serde_json::to_string(&a).unwrap();
            let back: Location = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(a.key(), back.key());
        }

        #[test]
        fn config_json_roundtrip(b in 1.0..1e7f64, k in 1usize..256, p in -30.0..30.0f64,
                                 c in 1.0..1e9f64, pm in 1e-9..0.999f64) {
            let cfg = PlatoonConfig {
                subcarrier_spacing_hz: b,
                active_subcarriers: k,
                tx_power_per_subcarrier_dbm: p,
                capacity_threshold_bps: c,
                max_outage: pm,
                ..PlatoonConfig::reference()
            };
            let s = serde_json::to_string(&cfg).unwrap();
            let back: PlatoonConfig = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(cfg, back);
        }
    }
}
