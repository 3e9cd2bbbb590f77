//! Clear-sky irradiance models, clear-sky/clearness indices and Reno-style
//! clear period detection.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, extraterrestrial_ghi, Site, SolarConstant, SolarPosition};
use crate::irradiance::IrradianceSeries;
use crate::par;
use crate::time::Timestamp;

/// Clear-sky GHI model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClearSkyModel {
    /// `I_clr = I0 cos(zenith)`.
    Extraterrestrial {
        #[serde(default)]
        solar_constant: SolarConstant,
    },
    /// Ineichen's simplified Solis model.
    SimplifiedSolis {
        /// Aerosol optical depth at 700 nm.
        #[serde(default = "default_aod700")]
        aod700: f64,
        /// Precipitable water column, cm.
        #[serde(default = "default_precipitable_water")]
        precipitable_water: f64,
        #[serde(default)]
        solar_constant: SolarConstant,
    },
}

fn default_aod700() -> f64 {
    0.1
}

fn default_precipitable_water() -> f64 {
    1.0
}

impl Default for ClearSkyModel {
    fn default() -> Self {
        ClearSkyModel::SimplifiedSolis {
            aod700: default_aod700(),
            precipitable_water: default_precipitable_water(),
            solar_constant: SolarConstant::DEFAULT,
        }
    }
}

impl ClearSkyModel {
    pub fn extraterrestrial() -> Self {
        ClearSkyModel::Extraterrestrial {
            solar_constant: SolarConstant::DEFAULT,
        }
    }

    /// Builds a model from a kind name and a scalar parameter map, e.g. the
    /// `[clear_sky]` table of a pipeline config.
    pub fn from_parts(kind: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let i0 = match params.get("solar_constant") {
            Some(&v) => SolarConstant::new(v)?,
            None => SolarConstant::DEFAULT,
        };
        let allowed: &[&str] = match kind {
            "extraterrestrial" => &["solar_constant"],
            "simplified_solis" => &["solar_constant", "aod700", "precipitable_water"],
            other => {
                return Err(Error::Config(format!(
                    "unknown clear-sky model kind '{other}'"
                )))
            }
        };
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "parameter '{k}' not valid for model '{kind}'"
            )));
        }
        let model = match kind {
            "extraterrestrial" => ClearSkyModel::Extraterrestrial { solar_constant: i0 },
            _ => ClearSkyModel::SimplifiedSolis {
                aod700: params.get("aod700").copied().unwrap_or_else(default_aod700),
                precipitable_water: params
                    .get("precipitable_water")
                    .copied()
                    .unwrap_or_else(default_precipitable_water),
                solar_constant: i0,
            },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if let ClearSkyModel::SimplifiedSolis {
            aod700,
            precipitable_water,
            ..
        } = *self
        {
            if !(0.0..=0.45).contains(&aod700) {
                return Err(Error::Config(format!("aod700 {aod700} outside [0, 0.45]")));
            }
            if !(precipitable_water > 0.0 && precipitable_water <= 10.0) {
                return Err(Error::Config(format!(
                    "precipitable water {precipitable_water} cm outside (0, 10]"
                )));
            }
        }
        Ok(())
    }

    pub fn solar_constant(&self) -> SolarConstant {
        match *self {
            ClearSkyModel::Extraterrestrial { solar_constant }
            | ClearSkyModel::SimplifiedSolis { solar_constant, .. } => solar_constant,
        }
    }
}

/// Clear-sky and extraterrestrial GHI at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearSkyContext {
    pub i_clr: f64,
    pub i_extr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkyCondition {
    Clear,
    Cloudy,
}

impl fmt::Display for SkyCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkyCondition::Clear => "clear",
            SkyCondition::Cloudy => "cloudy",
        })
    }
}

impl FromStr for SkyCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clear" => Ok(SkyCondition::Clear),
            "cloudy" => Ok(SkyCondition::Cloudy),
            other => Err(Error::Data(format!("unknown sky condition '{other}'"))),
        }
    }
}

/// Standard-atmosphere pressure (Pa) at `altitude` metres.
pub fn altitude_to_pressure(altitude: f64) -> f64 {
    100.0 * ((44_331.514 - altitude) / 11_880.516).powf(1.0 / 0.190_263_2)
}

/// Simplified Solis global horizontal irradiance.
fn solis_ghi(elevation_deg: f64, aod700: f64, w: f64, pressure: f64, i0: f64) -> f64 {
    if elevation_deg <= 0.0 {
        return 0.0;
    }
    let w = w.max(0.2);
    let lnw = w.ln();
    let lnp = (pressure / 101_325.0).ln();

    let io0 = 1.08 * w.powf(0.0051);
    let i01 = 0.97 * w.powf(0.032);
    let i02 = 0.12 * w.powf(0.56);
    let i0p = i0 * (i02 * aod700 * aod700 + i01 * aod700 + io0 + 0.071 * lnp);

    let tg1 = 1.24 + 0.047 * lnw + 0.0061 * lnw * lnw;
    let tg0 = 0.27 + 0.043 * lnw + 0.0090 * lnw * lnw;
    let tgp = 0.0079 * w + 0.1;
    let taug = tg1 * aod700 + tg0 + tgp * lnp;

    let g = -0.0147 * lnw - 0.3079 * aod700 * aod700 + 0.2846 * aod700 + 0.3798;

    let sin_elev = elevation_deg.to_radians().sin();
    i0p * (-taug / sin_elev.powf(g)).exp() * sin_elev
}

/// Clear-sky context for `pos` at `site`. Both values are zero with the sun
/// at or below the horizon, and `0 <= i_clr <= i_extr` always holds.
pub fn predict_clear_sky(
    model: &ClearSkyModel,
    pos: &SolarPosition,
    site: &Site,
) -> ClearSkyContext {
    let i0 = model.solar_constant();
    let i_extr = extraterrestrial_ghi(pos, i0);
    if i_extr <= 0.0 {
        return ClearSkyContext {
            i_clr: 0.0,
            i_extr: 0.0,
        };
    }
    let i_clr = match *model {
        ClearSkyModel::Extraterrestrial { .. } => i_extr,
        ClearSkyModel::SimplifiedSolis {
            aod700,
            precipitable_water,
            ..
        } => solis_ghi(
            pos.elevation(),
            aod700,
            precipitable_water,
            altitude_to_pressure(site.altitude),
            i0.value(),
        ),
    };
    ClearSkyContext {
        i_clr: i_clr.clamp(0.0, i_extr),
        i_extr,
    }
}

/// Convenience: solar position then clear-sky context.
pub fn clear_sky_at(
    model: &ClearSkyModel,
    site: &Site,
    t: Timestamp,
) -> Result<(SolarPosition, ClearSkyContext)> {
    let pos = geometry::solar_position(site, t)?;
    Ok((pos, predict_clear_sky(model, &pos, site)))
}

/// `kt = I / I_clr`. Values above one (overirradiance) are returned as is.
pub fn clear_sky_index(i: f64, ctx: &ClearSkyContext) -> Result<f64> {
    if ctx.i_clr > 0.0 {
        Ok(i / ctx.i_clr)
    } else {
        Err(Error::UndefinedIndex {
            normaliser: ctx.i_clr,
        })
    }
}

/// `Kt = I / I_extr`.
pub fn clearness_index(i: f64, ctx: &ClearSkyContext) -> Result<f64> {
    if ctx.i_extr > 0.0 {
        Ok(i / ctx.i_extr)
    } else {
        Err(Error::UndefinedIndex {
            normaliser: ctx.i_extr,
        })
    }
}

/// Thresholds of the five window statistics. Defaults are the published
/// values of the original method for 10-minute windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenoThresholds {
    pub window_s: i64,
    /// |mean(meas) - mean(clear)| < mean_diff, W/m².
    pub mean_diff: f64,
    /// |max(meas) - max(clear)| < max_diff, W/m².
    pub max_diff: f64,
    /// lower < line_length(meas) - line_length(clear) < upper.
    pub lower_line_length: f64,
    pub upper_line_length: f64,
    /// std(slope) / mean(meas) < var_diff.
    pub var_diff: f64,
    /// max |diff(meas) - diff(clear)| < slope_dev.
    pub slope_dev: f64,
    /// Iterations of the clear-sky rescaling loop. Only 0 is supported.
    pub rescale_iterations: u32,
}

impl Default for RenoThresholds {
    fn default() -> Self {
        RenoThresholds {
            window_s: 600,
            mean_diff: 75.0,
            max_diff: 75.0,
            lower_line_length: -5.0,
            upper_line_length: 10.0,
            var_diff: 0.005,
            slope_dev: 8.0,
            rescale_iterations: 0,
        }
    }
}

/// Per-sample sky flags for an irradiance series against `model`.
///
/// The series is cut into regularly sampled segments (a timestamp step other
/// than the dominant interval starts a new segment) and every window lies
/// inside one segment. A sample is `Clear` iff at least one window that
/// contains it passes all criteria; samples in segments shorter than a
/// window are `Cloudy`.
pub fn detect_clear_periods(
    series: &IrradianceSeries,
    model: &ClearSkyModel,
    thresholds: &RenoThresholds,
) -> Result<Vec<SkyCondition>> {
    let times: Vec<Timestamp> = series.samples.iter().map(|s| s.timestamp).collect();
    let measured: Vec<f64> = series
        .samples
        .iter()
        .map(|s| s.ghi.unwrap_or(f64::NAN))
        .collect();
    let clear: Vec<f64> = par::try_map(&times, |&t| {
        clear_sky_at(model, &series.site, t).map(|(_, c)| c.i_clr)
    })?;
    let flags = detect_clear_samples(&times, &measured, &clear, thresholds)?;
    Ok(flags
        .into_iter()
        .map(|c| {
            if c {
                SkyCondition::Clear
            } else {
                SkyCondition::Cloudy
            }
        })
        .collect())
}

/// Core of [`detect_clear_periods`] on raw arrays; `true` = clear.
pub fn detect_clear_samples(
    times: &[Timestamp],
    measured: &[f64],
    clear: &[f64],
    th: &RenoThresholds,
) -> Result<Vec<bool>> {
    if times.len() != measured.len() || times.len() != clear.len() {
        return Err(Error::Shape(
            "times, measured and clear lengths differ".into(),
        ));
    }
    if th.rescale_iterations != 0 {
        return Err(Error::Config(
            "clear-sky rescaling iterations are not supported".into(),
        ));
    }
    if times.len() < 2 {
        return Ok(vec![false; times.len()]);
    }
    let interval = dominant_interval(times);
    let window = (th.window_s / interval) as usize;
    if window < 3 {
        return Err(Error::InsufficientData(format!(
            "window of {} s holds {window} samples at {interval} s spacing; need at least 3",
            th.window_s
        )));
    }
    let interval_min = interval as f64 / 60.0;

    let mut segments = Vec::new();
    let mut start = 0;
    for i in 1..times.len() {
        if times[i] - times[i - 1] != interval {
            segments.push(start..i);
            start = i;
        }
    }
    segments.push(start..times.len());

    let flagged = par::map(&segments, |seg| {
        flag_segment(
            &measured[seg.clone()],
            &clear[seg.clone()],
            window,
            interval_min,
            th,
        )
    });
    Ok(flagged.into_iter().flatten().collect())
}

fn dominant_interval(times: &[Timestamp]) -> i64 {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for w in times.windows(2) {
        let d = w[1] - w[0];
        if d > 0 {
            *counts.entry(d).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(d, _)| d)
        .unwrap_or(60)
}

fn flag_segment(
    meas: &[f64],
    clear: &[f64],
    window: usize,
    dt: f64,
    th: &RenoThresholds,
) -> Vec<bool> {
    let n = meas.len();
    let mut out = vec![false; n];
    if n < window {
        return out;
    }
    let mut clear_until = 0usize;
    for s in 0..=n - window {
        let m = &meas[s..s + window];
        let c = &clear[s..s + window];
        if window_is_clear(m, c, dt, th) {
            for flag in out.iter_mut().take(s + window).skip(s.max(clear_until)) {
                *flag = true;
            }
            clear_until = s + window;
        }
    }
    out
}

fn window_is_clear(m: &[f64], c: &[f64], dt: f64, th: &RenoThresholds) -> bool {
    let h = m.len() as f64;
    let mean_m = m.iter().sum::<f64>() / h;
    let mean_c = c.iter().sum::<f64>() / h;
    if mean_c == 0.0 || !mean_c.is_finite() || !mean_m.is_finite() {
        return false;
    }
    let max_m = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_c = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut line_m = 0.0;
    let mut line_c = 0.0;
    let mut slope_dev_max: f64 = 0.0;
    let slopes: Vec<f64> = m.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    for (wm, wc) in m.windows(2).zip(c.windows(2)) {
        let dm = wm[1] - wm[0];
        let dc = wc[1] - wc[0];
        line_m += (dm * dm + dt * dt).sqrt();
        line_c += (dc * dc + dt * dt).sqrt();
        slope_dev_max = slope_dev_max.max((dm - dc).abs());
    }
    let k = slopes.len() as f64;
    let slope_mean = slopes.iter().sum::<f64>() / k;
    let slope_var = slopes.iter().map(|s| (s - slope_mean).powi(2)).sum::<f64>() / (k - 1.0);
    let slope_nstd = slope_var.sqrt() / mean_m;

    let line_diff = line_m - line_c;
    (mean_m - mean_c).abs() < th.mean_diff
        && (max_m - max_c).abs() < th.max_diff
        && line_diff > th.lower_line_length
        && line_diff < th.upper_line_length
        && slope_nstd < th.var_diff
        && slope_dev_max < th.slope_dev
}
