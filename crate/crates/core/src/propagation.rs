//! Two-slope distance-dependent path gain with optional log-normal shadowing.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSlopeParams {
    pub d0_m: f64,
    pub dc_m: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub sigma1_db: f64,
    pub sigma2_db: f64,
    pub carrier_frequency_hz: f64,
    /// Combined TX+RX antenna gain folded into the path gain.
    #[serde(default)]
    pub antenna_gain_db: f64,
}

impl TwoSlopeParams {
    /// Two-lane street parameters at 2.4 GHz.
    pub fn reference() -> Self {
        TwoSlopeParams {
            d0_m: 1.0,
            dc_m: 100.0,
            gamma1: 2.0,
            gamma2: 4.0,
            sigma1_db: 5.6,
            sigma2_db: 8.4,
            carrier_frequency_hz: 2.4e9,
            antenna_gain_db: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.d0_m > 0.0 && self.d0_m <= self.dc_m && self.dc_m.is_finite()) {
            return bad("propagation requires 0 < d0_m <= dc_m");
        }
        if !(self.gamma1 > 0.0 && self.gamma2 > 0.0) {
            return bad("propagation path loss exponents must be positive");
        }
        if !(self.sigma1_db >= 0.0 && self.sigma2_db >= 0.0) {
            return bad("propagation shadowing deviations must be non-negative");
        }
        if !(self.carrier_frequency_hz > 0.0 && self.carrier_frequency_hz.is_finite()) {
            return bad("propagation carrier_frequency_hz must be positive");
        }
        if !self.antenna_gain_db.is_finite() {
            return bad("propagation antenna_gain_db must be finite");
        }
        Ok(())
    }
}

impl Default for TwoSlopeParams {
    fn default() -> Self {
        TwoSlopeParams::reference()
    }
}

/// Free-space gain at `d0_m`: `−20·log10(4π·d0·f/c)` dB.
pub fn fsl_reference(d0_m: f64, f_hz: f64) -> f64 {
    -20.0 * (4.0 * std::f64::consts::PI * d0_m * f_hz / SPEED_OF_LIGHT_M_S).log10()
}

pub enum Shadowing<'a, R: Rng + ?Sized> {
    Off,
    Seeded(&'a mut R),
}

impl Shadowing<'static, rand::rngs::ThreadRng> {
    /// Shadowing disabled, with the generic parameter pinned.
    pub fn off() -> Self {
        Shadowing::Off
    }
}

/// Median two-slope gain in dB (no shadowing), antenna gain included.
pub fn two_slope_gain_db(d_m: f64, p: &TwoSlopeParams) -> Result<f64> {
    if !(d_m >= p.d0_m) {
        return Err(Error::BelowReferenceDistance {
            d_m,
            d0_m: p.d0_m,
        });
    }
    let base = fsl_reference(p.d0_m, p.carrier_frequency_hz) + p.antenna_gain_db;
    Ok(if d_m <= p.dc_m {
        base - 10.0 * p.gamma1 * (d_m / p.d0_m).log10()
    } else {
        base - 10.0 * p.gamma1 * (p.dc_m / p.d0_m).log10() - 10.0 * p.gamma2 * (d_m / p.dc_m).log10()
    })
}

/// Linear two-slope gain L(d). With seeded shadowing a zero-mean Gaussian
/// with the branch's deviation is added in the dB domain.
pub fn two_slope_gain<R: Rng + ?Sized>(
    d_m: f64,
    p: &TwoSlopeParams,
    shadowing: Shadowing<'_, R>,
) -> Result<f64> {
    let mut db = two_slope_gain_db(d_m, p)?;
    if let Shadowing::Seeded(rng) = shadowing {
        let sigma = if d_m <= p.dc_m { p.sigma1_db } else { p.sigma2_db };
        if sigma > 0.0 {
            db += Normal::new(0.0, sigma)
                .expect("validated deviation")
                .sample(rng);
        }
    }
    Ok(10f64.powf(db / 10.0))
}
