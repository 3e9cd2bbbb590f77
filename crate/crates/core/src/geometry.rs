//! Solar position and extraterrestrial irradiance.
//!
//! Position follows the NOAA solar calculator formulation (Meeus series
//! truncated to the terms used by the NOAA worksheet), with the worksheet's
//! piecewise refraction correction applied so zenith angles are apparent.
//! Accuracy is well inside 0.1 degree for 1950..2100 away from the horizon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{self, Timestamp};

/// A measurement site. Serialised with the field names used by site JSON
/// files: `name, latitude, longitude, altitude_m, utc_offset_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Site {
    pub name: String,
    /// Degrees north.
    pub latitude: f64,
    /// Degrees east.
    pub longitude: f64,
    #[serde(rename = "altitude_m")]
    pub altitude: f64,
    /// Standard-time offset from UTC in seconds (e.g. -28800 for UTC-8).
    #[serde(rename = "utc_offset_s")]
    pub utc_offset: i64,
}

impl Site {
    pub fn new(
        name: impl Into<String>,
        latitude: f64,
        longitude: f64,
        altitude: f64,
        utc_offset: i64,
    ) -> Result<Self> {
        let site = Site {
            name: name.into(),
            latitude,
            longitude,
            altitude,
            utc_offset,
        };
        site.validate()?;
        Ok(site)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::Range(format!(
                "latitude {} outside [-90, 90]",
                self.latitude
            )));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::Range(format!(
                "longitude {} outside [-180, 180]",
                self.longitude
            )));
        }
        if !(-50_400..=50_400).contains(&self.utc_offset) {
            return Err(Error::Range(format!(
                "utc offset {} s outside [-50400, 50400]",
                self.utc_offset
            )));
        }
        if !self.altitude.is_finite() {
            return Err(Error::Range("altitude must be finite".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let site: Site = serde_json::from_str(s)?;
        site.validate()?;
        Ok(site)
    }

    /// Folsom, California.
    pub fn folsom() -> Self {
        Site::new("folsom", 38.642, -121.148, 100.0, -8 * 3600).unwrap()
    }

    /// SIRTA observatory, Palaiseau.
    pub fn sirta() -> Self {
        Site::new("sirta", 48.713, 2.208, 156.0, 3600).unwrap()
    }

    /// NREL Solar Radiation Research Laboratory, Golden, Colorado.
    pub fn nrel() -> Self {
        Site::new("nrel", 39.742, -105.18, 1829.0, -7 * 3600).unwrap()
    }
}

/// Apparent solar zenith and azimuth, in degrees. Azimuth is measured
/// clockwise from north and normalised to `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolarPosition {
    pub zenith: f64,
    pub azimuth: f64,
}

impl SolarPosition {
    pub fn new(zenith: f64, azimuth: f64) -> Self {
        SolarPosition {
            zenith,
            azimuth: azimuth.rem_euclid(360.0),
        }
    }

    pub fn cos_zenith(&self) -> f64 {
        self.zenith.to_radians().cos()
    }

    pub fn elevation(&self) -> f64 {
        90.0 - self.zenith
    }
}

/// Total solar irradiance at mean Sun-Earth distance, W/m².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SolarConstant(f64);

impl SolarConstant {
    pub const DEFAULT: SolarConstant = SolarConstant(1366.0);

    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(SolarConstant(value))
        } else {
            Err(Error::Range(format!(
                "solar constant must be > 0, got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for SolarConstant {
    fn default() -> Self {
        Self::DEFAULT
    }
}

const MIN_SUPPORTED: Timestamp = -631_152_000; // 1950-01-01T00:00:00Z
const MAX_SUPPORTED: Timestamp = 4_133_980_799; // 2100-12-31T23:59:59Z

/// Solar position at `instant` for `site`.
pub fn solar_position(site: &Site, instant: Timestamp) -> Result<SolarPosition> {
    if !(MIN_SUPPORTED..=MAX_SUPPORTED).contains(&instant) {
        return Err(Error::Range(format!(
            "instant {} outside supported years 1950..2100",
            time::format_iso(instant)
        )));
    }
    Ok(solar_position_unchecked(
        site.latitude,
        site.longitude,
        instant as f64,
    ))
}

/// Same as [`solar_position`] for a fractional-second instant, without the
/// range check. Used by tight inner loops that already validated the span.
pub fn solar_position_unchecked(latitude: f64, longitude: f64, instant: f64) -> SolarPosition {
    let jd = instant / 86_400.0 + 2_440_587.5;
    let jc = (jd - 2_451_545.0) / 36_525.0;

    let mean_long = (280.466_46 + jc * (36_000.769_83 + jc * 0.000_303_2)).rem_euclid(360.0);
    let mean_anom = 357.529_11 + jc * (35_999.050_29 - 0.000_153_7 * jc);
    let ecc = 0.016_708_634 - jc * (0.000_042_037 + 0.000_000_126_7 * jc);

    let m = mean_anom.to_radians();
    let center = m.sin() * (1.914_602 - jc * (0.004_817 + 0.000_014 * jc))
        + (2.0 * m).sin() * (0.019_993 - 0.000_101 * jc)
        + (3.0 * m).sin() * 0.000_289;
    let true_long = mean_long + center;
    let omega = (125.04 - 1934.136 * jc).to_radians();
    let app_long = true_long - 0.005_69 - 0.004_78 * omega.sin();

    let mean_obliq =
        23.0 + (26.0 + (21.448 - jc * (46.815 + jc * (0.000_59 - jc * 0.001_813))) / 60.0) / 60.0;
    let obliq = (mean_obliq + 0.002_56 * omega.cos()).to_radians();

    let decl = (obliq.sin() * app_long.to_radians().sin()).asin();

    let y = (obliq / 2.0).tan().powi(2);
    let l0 = mean_long.to_radians();
    let eq_time_min = 4.0
        * (y * (2.0 * l0).sin() - 2.0 * ecc * m.sin() + 4.0 * ecc * y * m.sin() * (2.0 * l0).cos()
            - 0.5 * y * y * (4.0 * l0).sin()
            - 1.25 * ecc * ecc * (2.0 * m).sin())
        .to_degrees();

    let minutes_utc = (instant.rem_euclid(86_400.0)) / 60.0;
    let true_solar_min = (minutes_utc + eq_time_min + 4.0 * longitude).rem_euclid(1440.0);
    let ha = (true_solar_min / 4.0 - 180.0).to_radians();
    let lat = latitude.to_radians();

    let cos_zen = (lat.sin() * decl.sin() + lat.cos() * decl.cos() * ha.cos()).clamp(-1.0, 1.0);
    let zenith = cos_zen.acos().to_degrees();

    let azimuth = (ha
        .sin()
        .atan2(ha.cos() * lat.sin() - decl.tan() * lat.cos())
        .to_degrees()
        + 180.0)
        .rem_euclid(360.0);

    let refraction = refraction_deg(90.0 - zenith);
    SolarPosition::new(zenith - refraction, azimuth)
}

/// Atmospheric refraction (degrees) for a true elevation, NOAA worksheet
/// approximation.
fn refraction_deg(elevation: f64) -> f64 {
    let arcsec = if elevation > 85.0 {
        0.0
    } else if elevation > 5.0 {
        let t = elevation.to_radians().tan();
        58.1 / t - 0.07 / t.powi(3) + 0.000_086 / t.powi(5)
    } else if elevation > -0.575 {
        let e = elevation;
        1735.0 + e * (-518.2 + e * (103.4 + e * (-12.79 + e * 0.711)))
    } else {
        -20.772 / elevation.to_radians().tan()
    };
    arcsec / 3600.0
}

/// `I0 * cos(zenith)`, zero once the sun is at or below the horizon.
pub fn extraterrestrial_ghi(pos: &SolarPosition, i0: SolarConstant) -> f64 {
    if pos.zenith >= 90.0 {
        0.0
    } else {
        (i0.value() * pos.cos_zenith()).max(0.0)
    }
}

/// Direct normal irradiance recovered from global and diffuse, guarded to
/// `cos(zenith) >= cos(80 deg)`.
pub fn dni_from_ghi_dhi(ghi: f64, dhi: f64, pos: &SolarPosition) -> Option<f64> {
    let cz = pos.cos_zenith();
    if cz < 80f64.to_radians().cos() {
        None
    } else {
        Some(((ghi - dhi) / cz).max(0.0))
    }
}
