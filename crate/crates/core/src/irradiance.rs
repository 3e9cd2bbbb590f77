//! Irradiance ingestion and processing: multi-sensor median fusion, linear
//! interpolation to 1 s, zenith filtering and training-set time shifting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Site, SolarPosition};
use crate::par;
use crate::time::{self, Timestamp};

/// Consecutive samples further apart than this are never bridged.
pub const MAX_INTERPOLATION_GAP_S: i64 = 60;
pub const DEFAULT_MAX_ZENITH: f64 = 80.0;
pub const DEFAULT_CONSISTENCY_TOL: f64 = 10.0;
pub const MAX_TIME_SHIFT_S: i64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrradianceSample {
    pub timestamp: Timestamp,
    pub ghi: Option<f64>,
    pub dhi: Option<f64>,
    pub dni: Option<f64>,
    /// True when produced by interpolation rather than measured.
    pub interpolated: bool,
}

impl IrradianceSample {
    pub fn ghi_only(timestamp: Timestamp, ghi: f64) -> Self {
        IrradianceSample {
            timestamp,
            ghi: Some(ghi),
            dhi: None,
            dni: None,
            interpolated: false,
        }
    }
}

/// Time-ordered measurements of one (possibly fused) source at one site.
#[derive(Debug, Clone, PartialEq)]
pub struct IrradianceSeries {
    pub site: Site,
    pub source: String,
    pub samples: Vec<IrradianceSample>,
    /// Nominal spacing of the measured samples, seconds.
    pub native_interval: i64,
    /// Accumulated time shift applied so far.
    pub time_shift: i64,
    /// Set once [`zenith_filter`] ran; time shifting is refused afterwards.
    pub zenith_filtered: bool,
}

impl IrradianceSeries {
    pub fn new(
        site: Site,
        source: impl Into<String>,
        samples: Vec<IrradianceSample>,
        native_interval: i64,
    ) -> Result<Self> {
        if let Some(w) = samples
            .windows(2)
            .find(|w| w[1].timestamp <= w[0].timestamp)
        {
            return Err(Error::Data(format!(
                "timestamps not strictly increasing at {}",
                time::format_iso(w[1].timestamp)
            )));
        }
        if native_interval <= 0 {
            return Err(Error::Data("native interval must be positive".into()));
        }
        Ok(IrradianceSeries {
            site,
            source: source.into(),
            samples,
            native_interval,
            time_shift: 0,
            zenith_filtered: false,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample at exactly `t`, by binary search.
    pub fn at(&self, t: Timestamp) -> Option<&IrradianceSample> {
        self.samples
            .binary_search_by_key(&t, |s| s.timestamp)
            .ok()
            .map(|i| &self.samples[i])
    }

    pub fn timestamps(&self) -> Vec<Timestamp> {
        self.samples.iter().map(|s| s.timestamp).collect()
    }

    /// Splits the samples by UTC calendar day.
    pub fn by_day(&self) -> BTreeMap<NaiveDate, &[IrradianceSample]> {
        let mut out = BTreeMap::new();
        let mut start = 0;
        for i in 1..=self.samples.len() {
            let boundary = i == self.samples.len()
                || time::utc_date(self.samples[i].timestamp)
                    != time::utc_date(self.samples[start].timestamp);
            if boundary {
                out.insert(
                    time::utc_date(self.samples[start].timestamp),
                    &self.samples[start..i],
                );
                start = i;
            }
        }
        out
    }

    fn with_samples(&self, samples: Vec<IrradianceSample>) -> Self {
        IrradianceSeries {
            site: self.site.clone(),
            source: self.source.clone(),
            samples,
            native_interval: self.native_interval,
            time_shift: self.time_shift,
            zenith_filtered: self.zenith_filtered,
        }
    }
}

/// Seconds excluded from interpolation, per UTC day of the gap start.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gaps: usize,
    pub dropped_seconds: BTreeMap<NaiveDate, i64>,
}

impl GapReport {
    pub fn total_dropped(&self) -> i64 {
        self.dropped_seconds.values().sum()
    }
}

fn lerp(a: Option<f64>, b: Option<f64>, frac: f64) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a + (b - a) * frac),
        _ => None,
    }
}

/// Linear interpolation onto every whole second between consecutive samples
/// at most 60 s apart. Longer gaps are left empty and reported. Original
/// samples are copied unchanged, so evaluating at a knot returns the
/// measured value exactly.
pub fn interpolate_1s(series: &IrradianceSeries) -> (IrradianceSeries, GapReport) {
    let mut report = GapReport::default();
    let mut out = Vec::with_capacity(series.samples.len());
    for (i, s) in series.samples.iter().enumerate() {
        out.push(*s);
        let Some(next) = series.samples.get(i + 1) else {
            break;
        };
        let gap = next.timestamp - s.timestamp;
        if gap > MAX_INTERPOLATION_GAP_S {
            report.gaps += 1;
            *report
                .dropped_seconds
                .entry(time::utc_date(s.timestamp))
                .or_default() += gap - 1;
            continue;
        }
        for t in s.timestamp + 1..next.timestamp {
            let frac = (t - s.timestamp) as f64 / gap as f64;
            out.push(IrradianceSample {
                timestamp: t,
                ghi: lerp(s.ghi, next.ghi, frac),
                dhi: lerp(s.dhi, next.dhi, frac),
                dni: lerp(s.dni, next.dni, frac),
                interpolated: true,
            });
        }
    }
    (series.with_samples(out), report)
}

/// Keeps the samples with apparent solar zenith `<= max_zenith`.
pub fn zenith_filter(series: &IrradianceSeries, max_zenith: f64) -> Result<IrradianceSeries> {
    let keep = par::try_map(&series.samples, |s| {
        geometry::solar_position(&series.site, s.timestamp).map(|p| p.zenith <= max_zenith)
    })?;
    let samples = series
        .samples
        .iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(*s))
        .collect();
    let mut out = series.with_samples(samples);
    out.zenith_filtered = true;
    Ok(out)
}

/// A time offset applied to irradiance timestamps: `T_new = T + delta_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct TimeShift(i64);

impl TimeShift {
    pub fn new(delta_t: i64) -> Result<Self> {
        if delta_t.abs() > MAX_TIME_SHIFT_S {
            return Err(Error::Config(format!(
                "time shift {delta_t} s exceeds +/-{MAX_TIME_SHIFT_S} s"
            )));
        }
        Ok(TimeShift(delta_t))
    }

    pub fn seconds(self) -> i64 {
        self.0
    }
}

impl TryFrom<i64> for TimeShift {
    type Error = Error;

    fn try_from(v: i64) -> Result<Self> {
        TimeShift::new(v)
    }
}

impl From<TimeShift> for i64 {
    fn from(s: TimeShift) -> i64 {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

/// Shifts every timestamp by `shift`. Only training series may be shifted,
/// and only before zenith filtering.
pub fn apply_time_shift(
    series: &IrradianceSeries,
    shift: TimeShift,
    role: Role,
) -> Result<IrradianceSeries> {
    let dt = shift.seconds();
    if dt == 0 {
        return Ok(series.clone());
    }
    if role == Role::Test {
        return Err(Error::Contract(format!(
            "time shift of {dt} s requested for a test series; shifts apply to training data only"
        )));
    }
    if series.zenith_filtered {
        return Err(Error::Contract(
            "time shift must be applied before the zenith filter".into(),
        ));
    }
    let samples = series
        .samples
        .iter()
        .map(|s| IrradianceSample {
            timestamp: s.timestamp + dt,
            ..*s
        })
        .collect();
    let mut out = series.with_samples(samples);
    out.time_shift += dt;
    Ok(out)
}

/// Processing chain for a single-source series: interpolate to 1 s, shift
/// (train role only), then drop samples above `max_zenith`.
pub fn process_series(
    series: &IrradianceSeries,
    shift: TimeShift,
    role: Role,
    max_zenith: f64,
) -> Result<(IrradianceSeries, GapReport)> {
    let (dense, gaps) = interpolate_1s(series);
    let shifted = apply_time_shift(&dense, shift, role)?;
    Ok((zenith_filter(&shifted, max_zenith)?, gaps))
}

/// Lazy equivalent of [`process_series`] for GHI lookups: answers
/// "value of the processed 1 s series at `t`" straight from the native
/// samples without materialising every second.
#[derive(Debug, Clone, Copy)]
pub struct ProcessedView<'a> {
    pub native: &'a IrradianceSeries,
    pub shift: TimeShift,
    pub max_zenith: f64,
}

impl<'a> ProcessedView<'a> {
    pub fn new(
        native: &'a IrradianceSeries,
        shift: TimeShift,
        role: Role,
        max_zenith: f64,
    ) -> Result<Self> {
        if shift.seconds() != 0 && role == Role::Test {
            return Err(Error::Contract(format!(
                "time shift of {} s requested for a test series; shifts apply to training data only",
                shift.seconds()
            )));
        }
        if shift.seconds() != 0 && native.zenith_filtered {
            return Err(Error::Contract(
                "time shift must be applied before the zenith filter".into(),
            ));
        }
        Ok(ProcessedView {
            native,
            shift,
            max_zenith,
        })
    }

    pub fn ghi_at(&self, t: Timestamp) -> Option<f64> {
        let pos = geometry::solar_position(&self.native.site, t).ok()?;
        if pos.zenith > self.max_zenith {
            return None;
        }
        let src = t - self.shift.seconds();
        let samples = &self.native.samples;
        match samples.binary_search_by_key(&src, |s| s.timestamp) {
            Ok(i) => samples[i].ghi,
            Err(i) if i > 0 && i < samples.len() => {
                let (a, b) = (&samples[i - 1], &samples[i]);
                let gap = b.timestamp - a.timestamp;
                if gap > MAX_INTERPOLATION_GAP_S {
                    return None;
                }
                lerp(a.ghi, b.ghi, (src - a.timestamp) as f64 / gap as f64)
            }
            Err(_) => None,
        }
    }
}

/// One row of a (possibly multi-sensor) irradiance file.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorReading {
    pub timestamp: Timestamp,
    pub ghi: Option<f64>,
    pub dhi: Option<f64>,
    pub dni: Option<f64>,
    pub sensor_id: Option<String>,
}

/// All readings of the three components at one instant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorSet {
    pub ghi: Vec<f64>,
    pub dhi: Vec<f64>,
    pub dni: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingGhi,
    MissingDhi,
    MissingDni,
    /// |GHI_calc - M(GHI)| exceeded the tolerance.
    Inconsistent {
        diff: f64,
    },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::MissingGhi => f.write_str("missing_ghi"),
            RejectReason::MissingDhi => f.write_str("missing_dhi"),
            RejectReason::MissingDni => f.write_str("missing_dni"),
            RejectReason::Inconsistent { .. } => f.write_str("inconsistent"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Consistency {
    Accepted { ghi: f64, dhi: f64, dni: f64 },
    Rejected(RejectReason),
}

/// Median; the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median consistency check of redundant sensors: the instant is accepted
/// iff `|M(DNI) cos(zenith) + M(DHI) - M(GHI)| <= tol`, with `M(GHI)` as the
/// label.
pub fn median_consistency_filter(set: &SensorSet, pos: &SolarPosition, tol: f64) -> Consistency {
    let Some(m_ghi) = median(&set.ghi) else {
        return Consistency::Rejected(RejectReason::MissingGhi);
    };
    let Some(m_dhi) = median(&set.dhi) else {
        return Consistency::Rejected(RejectReason::MissingDhi);
    };
    let Some(m_dni) = median(&set.dni) else {
        return Consistency::Rejected(RejectReason::MissingDni);
    };
    let calc = m_dni * pos.cos_zenith() + m_dhi;
    let diff = (calc - m_ghi).abs();
    if diff <= tol {
        Consistency::Accepted {
            ghi: m_ghi,
            dhi: m_dhi,
            dni: m_dni,
        }
    } else {
        Consistency::Rejected(RejectReason::Inconsistent { diff })
    }
}

/// How raw readings become a single series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum FusionMode {
    /// One reading per instant; DNI back-filled from GHI and DHI when absent.
    Single,
    /// Redundant sensors fused by the median consistency check.
    MedianConsistency { tol: f64 },
}

/// Fused series plus the instants that were rejected.
#[derive(Debug, Clone)]
pub struct Fused {
    pub series: IrradianceSeries,
    pub rejected: Vec<(Timestamp, RejectReason)>,
}

/// Groups readings by timestamp and fuses them according to `mode`.
pub fn fuse_readings(
    readings: &[SensorReading],
    site: &Site,
    native_interval: i64,
    mode: FusionMode,
) -> Result<Fused> {
    let mut groups: BTreeMap<Timestamp, Vec<&SensorReading>> = BTreeMap::new();
    for r in readings {
        groups.entry(r.timestamp).or_default().push(r);
    }
    let groups: Vec<(Timestamp, Vec<&SensorReading>)> = groups.into_iter().collect();

    let outcomes = par::try_map(
        &groups,
        |(t, rows)| -> Result<std::result::Result<IrradianceSample, RejectReason>> {
            let pos = geometry::solar_position(site, *t)?;
            match mode {
                FusionMode::Single => {
                    if rows.len() > 1 {
                        return Err(Error::Data(format!(
                            "{} readings at {} in single-sensor mode",
                            rows.len(),
                            time::format_iso(*t)
                        )));
                    }
                    let r = rows[0];
                    let Some(ghi) = r.ghi else {
                        return Ok(Err(RejectReason::MissingGhi));
                    };
                    let dni = r
                        .dni
                        .or_else(|| r.dhi.and_then(|d| geometry::dni_from_ghi_dhi(ghi, d, &pos)));
                    Ok(Ok(IrradianceSample {
                        timestamp: *t,
                        ghi: Some(ghi),
                        dhi: r.dhi,
                        dni,
                        interpolated: false,
                    }))
                }
                FusionMode::MedianConsistency { tol } => {
                    let set = SensorSet {
                        ghi: rows.iter().filter_map(|r| r.ghi).collect(),
                        dhi: rows.iter().filter_map(|r| r.dhi).collect(),
                        dni: rows.iter().filter_map(|r| r.dni).collect(),
                    };
                    Ok(match median_consistency_filter(&set, &pos, tol) {
                        Consistency::Accepted { ghi, dhi, dni } => Ok(IrradianceSample {
                            timestamp: *t,
                            ghi: Some(ghi),
                            dhi: Some(dhi),
                            dni: Some(dni),
                            interpolated: false,
                        }),
                        Consistency::Rejected(r) => Err(r),
                    })
                }
            }
        },
    )?;

    let mut samples = Vec::new();
    let mut rejected = Vec::new();
    for ((t, _), o) in groups.iter().zip(outcomes) {
        match o {
            Ok(s) => samples.push(s),
            Err(r) => rejected.push((*t, r)),
        }
    }
    let source = match mode {
        FusionMode::Single => "single",
        FusionMode::MedianConsistency { .. } => "median",
    };
    Ok(Fused {
        series: IrradianceSeries::new(site.clone(), source, samples, native_interval)?,
        rejected,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ReadingRow {
    timestamp_utc: String,
    ghi: Option<f64>,
    dhi: Option<f64>,
    dni: Option<f64>,
    #[serde(default)]
    sensor_id: Option<String>,
}

/// Reads `timestamp_utc, ghi, dhi, dni[, sensor_id]`. Empty cells are
/// missing values.
pub fn read_readings_csv<R: Read>(reader: R) -> Result<Vec<SensorReading>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<ReadingRow>() {
        let row = row?;
        for v in [row.ghi, row.dhi, row.dni].into_iter().flatten() {
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite irradiance at {}",
                    row.timestamp_utc
                )));
            }
        }
        out.push(SensorReading {
            timestamp: time::parse_timestamp(&row.timestamp_utc)?,
            ghi: row.ghi,
            dhi: row.dhi,
            dni: row.dni,
            sensor_id: row.sensor_id.filter(|s| !s.is_empty()),
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct SeriesRow {
    timestamp_utc: String,
    ghi: Option<f64>,
    dhi: Option<f64>,
    dni: Option<f64>,
    #[serde(default)]
    sensor_id: Option<String>,
    #[serde(default)]
    interpolated: Option<bool>,
    #[serde(default)]
    rejected_reason: Option<String>,
}

/// Writes the series schema: the input columns plus `interpolated` and
/// `rejected_reason`. Rejected instants are interleaved in time order with
/// empty values.
pub fn write_series_csv<W: Write>(
    writer: W,
    series: &IrradianceSeries,
    rejected: &[(Timestamp, RejectReason)],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut rej = rejected.to_vec();
    rej.sort_by_key(|r| r.0);
    let mut ri = rej.iter().peekable();
    let mut write_rejects_before =
        |wtr: &mut csv::Writer<W>, limit: Option<Timestamp>| -> Result<()> {
            while let Some((t, r)) = ri.peek() {
                if limit.is_some_and(|l| *t >= l) {
                    break;
                }
                wtr.serialize(SeriesRow {
                    timestamp_utc: time::format_iso(*t),
                    ghi: None,
                    dhi: None,
                    dni: None,
                    sensor_id: Some(series.source.clone()),
                    interpolated: Some(false),
                    rejected_reason: Some(r.to_string()),
                })?;
                ri.next();
            }
            Ok(())
        };
    for s in &series.samples {
        write_rejects_before(&mut wtr, Some(s.timestamp))?;
        wtr.serialize(SeriesRow {
            timestamp_utc: time::format_iso(s.timestamp),
            ghi: s.ghi,
            dhi: s.dhi,
            dni: s.dni,
            sensor_id: Some(series.source.clone()),
            interpolated: Some(s.interpolated),
            rejected_reason: None,
        })?;
    }
    write_rejects_before(&mut wtr, None)?;
    wtr.flush()?;
    Ok(())
}

/// Reads a series file (either schema). Rows carrying a rejection reason
/// are skipped.
pub fn read_series_csv<R: Read>(
    reader: R,
    site: &Site,
    native_interval: i64,
) -> Result<IrradianceSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut samples = Vec::new();
    let mut source = None;
    for row in rdr.deserialize::<SeriesRow>() {
        let row = row?;
        if row
            .rejected_reason
            .as_deref()
            .is_some_and(|r| !r.is_empty())
        {
            continue;
        }
        if source.is_none() {
            source = row.sensor_id.clone();
        }
        samples.push(IrradianceSample {
            timestamp: time::parse_timestamp(&row.timestamp_utc)?,
            ghi: row.ghi,
            dhi: row.dhi,
            dni: row.dni,
            interpolated: row.interpolated.unwrap_or(false),
        });
    }
    IrradianceSeries::new(
        site.clone(),
        source.unwrap_or_else(|| "file".into()),
        samples,
        native_interval,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::from_ymd_hms;

    fn series(points: &[(i64, f64)]) -> IrradianceSeries {
        IrradianceSeries::new(
            Site::folsom(),
            "test",
            points
                .iter()
                .map(|&(t, v)| IrradianceSample::ghi_only(t, v))
                .collect(),
            60,
        )
        .unwrap()
    }

    #[test]
    fn rejects_unordered() {
        let r = IrradianceSeries::new(
            Site::folsom(),
            "x",
            vec![
                IrradianceSample::ghi_only(10, 1.0),
                IrradianceSample::ghi_only(10, 2.0),
            ],
            60,
        );
        assert!(r.is_err());
    }

    #[test]
    fn interpolation_midpoint_and_knots() {
        let s = series(&[(0, 100.0), (60, 160.0)]);
        let (d, gaps) = interpolate_1s(&s);
        assert_eq!(d.len(), 61);
        assert_eq!(d.at(30).unwrap().ghi, Some(130.0));
        assert!(d.at(30).unwrap().interpolated);
        assert_eq!(d.at(0).unwrap().ghi, Some(100.0));
        assert_eq!(d.at(60).unwrap().ghi, Some(160.0));
        assert!(!d.at(60).unwrap().interpolated);
        assert_eq!(gaps.gaps, 0);
    }

    #[test]
    fn long_gaps_not_bridged() {
        let s = series(&[(0, 100.0), (180, 160.0), (240, 10.0)]);
        let (d, gaps) = interpolate_1s(&s);
        assert!(d
            .samples
            .iter()
            .all(|x| x.timestamp == 0 || x.timestamp >= 180));
        assert_eq!(d.len(), 2 + 60);
        assert_eq!(gaps.gaps, 1);
        assert_eq!(gaps.total_dropped(), 179);
        // 61..119 s is also not bridged
        let (d, _) = interpolate_1s(&series(&[(0, 1.0), (90, 2.0)]));
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn processed_view_matches_materialised_series() {
        let t0 = from_ymd_hms(2016, 6, 21, 13, 0, 0);
        let mut pts: Vec<(i64, f64)> = (0..240)
            .map(|k| (t0 + k * 60, 200.0 + (k as f64 * 0.7).sin() * 90.0))
            .collect();
        pts.retain(|&(t, _)| t < t0 + 100 * 60 || t > t0 + 103 * 60);
        let native = series(&pts);
        for dt in [-30, -20, 0, 10] {
            let shift = TimeShift::new(dt).unwrap();
            let (dense, _) = process_series(&native, shift, Role::Train, 80.0).unwrap();
            let view = ProcessedView::new(&native, shift, Role::Train, 80.0).unwrap();
            for t in (t0 - 120)..(t0 + 245 * 60) {
                assert_eq!(
                    view.ghi_at(t),
                    dense.at(t).and_then(|s| s.ghi),
                    "dt {dt} t {t}"
                );
            }
        }
        assert!(
            ProcessedView::new(&native, TimeShift::new(-20).unwrap(), Role::Test, 80.0).is_err()
        );
    }

    #[test]
    fn interpolation_idempotent() {
        let s = series(&[
            (0, 100.0),
            (60, 160.0),
            (120, 90.0),
            (400, 50.0),
            (430, 10.0),
        ]);
        let (once, _) = interpolate_1s(&s);
        let (twice, _) = interpolate_1s(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn zenith_threshold_inclusive() {
        let site = Site::folsom();
        // find instants straddling 80 degrees on a June morning
        let start = from_ymd_hms(2016, 6, 21, 12, 0, 0);
        let mut below = None;
        let mut above = None;
        for k in 0..4 * 3600 {
            let z = geometry::solar_position(&site, start + k).unwrap().zenith;
            if (80.0..80.2).contains(&z) && above.is_none() {
                above = Some(start + k);
            }
            if (79.8..80.0).contains(&z) && below.is_none() {
                below = Some(start + k);
            }
        }
        let (below, above) = (below.unwrap(), above.unwrap());
        let s = series(&[(above, 1.0), (below, 2.0)]);
        let f = zenith_filter(&s, 80.0).unwrap();
        assert_eq!(f.timestamps(), vec![below]);
        assert!(f.zenith_filtered);
    }

    #[test]
    fn time_shift_examples() {
        let t = from_ymd_hms(2016, 6, 21, 14, 0, 0);
        let s = series(&[(t, 500.0)]);
        let shifted = apply_time_shift(&s, TimeShift::new(-20).unwrap(), Role::Train).unwrap();
        assert_eq!(
            time::format_iso(shifted.samples[0].timestamp),
            "2016-06-21T13:59:40Z"
        );
        assert_eq!(shifted.samples[0].ghi, Some(500.0));

        let same = apply_time_shift(&s, TimeShift::default(), Role::Test).unwrap();
        assert_eq!(same, s);

        let there = apply_time_shift(&s, TimeShift::new(10).unwrap(), Role::Train).unwrap();
        let back = apply_time_shift(&there, TimeShift::new(-10).unwrap(), Role::Train).unwrap();
        assert_eq!(back.samples, s.samples);
    }

    #[test]
    fn time_shift_contracts() {
        let s = series(&[(0, 1.0)]);
        let r = apply_time_shift(&s, TimeShift::new(10).unwrap(), Role::Test);
        assert!(matches!(r, Err(Error::Contract(_))));
        assert!(TimeShift::new(301).is_err());
        assert!(TimeShift::new(-300).is_ok());
        let mut filtered = s.clone();
        filtered.zenith_filtered = true;
        assert!(matches!(
            apply_time_shift(&filtered, TimeShift::new(10).unwrap(), Role::Train),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn consistency_threshold() {
        let pos = SolarPosition::new(60.0, 180.0);
        let mut set = SensorSet {
            ghi: vec![509.0],
            dhi: vec![100.0],
            dni: vec![800.0],
        };
        assert!(
            matches!(median_consistency_filter(&set, &pos, 10.0), Consistency::Accepted { ghi, .. } if ghi == 509.0)
        );
        set.ghi = vec![511.0];
        assert!(matches!(
            median_consistency_filter(&set, &pos, 10.0),
            Consistency::Rejected(RejectReason::Inconsistent { .. })
        ));
    }

    #[test]
    fn consistency_outlier_and_missing() {
        let pos = SolarPosition::new(60.0, 180.0);
        let set = SensorSet {
            ghi: vec![505.0, 809.0, 503.0, 504.0, 506.0],
            dhi: vec![100.0, 101.0, 99.0, 100.0, 100.0],
            dni: vec![800.0, 801.0, 799.0, 1100.0, 800.0],
        };
        assert!(
            matches!(median_consistency_filter(&set, &pos, 10.0), Consistency::Accepted { ghi, .. } if ghi == 505.0)
        );
        let missing = SensorSet {
            ghi: vec![500.0],
            dhi: vec![],
            dni: vec![800.0],
        };
        assert_eq!(
            median_consistency_filter(&missing, &pos, 10.0),
            Consistency::Rejected(RejectReason::MissingDhi)
        );
    }

    #[test]
    fn fuse_multi_sensor() {
        let site = Site::nrel();
        let t = from_ymd_hms(2021, 6, 21, 19, 0, 0);
        let pos = geometry::solar_position(&site, t).unwrap();
        let dni = 850.0;
        let dhi = 90.0;
        let ghi = dni * pos.cos_zenith() + dhi;
        let mut rows = Vec::new();
        for k in 0..5 {
            rows.push(SensorReading {
                timestamp: t,
                ghi: Some(ghi + k as f64 - 2.0),
                dhi: Some(dhi),
                dni: Some(dni),
                sensor_id: Some(format!("s{k}")),
            });
        }
        rows.push(SensorReading {
            timestamp: t + 60,
            ghi: Some(ghi + 50.0),
            dhi: Some(dhi),
            dni: Some(dni),
            sensor_id: Some("s0".into()),
        });
        let fused = fuse_readings(
            &rows,
            &site,
            60,
            FusionMode::MedianConsistency { tol: 10.0 },
        )
        .unwrap();
        assert_eq!(fused.series.len(), 1);
        assert!((fused.series.samples[0].ghi.unwrap() - ghi).abs() < 1e-9);
        assert_eq!(fused.rejected.len(), 1);
        assert_eq!(fused.rejected[0].0, t + 60);
    }

    #[test]
    fn csv_round_trip() {
        let s = series(&[(1_451_606_400, 10.5), (1_451_606_460, 20.25)]);
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &s, &[(1_451_606_430, RejectReason::MissingDni)]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(
            text.starts_with("timestamp_utc,ghi,dhi,dni,sensor_id,interpolated,rejected_reason")
        );
        assert!(text.contains("2016-01-01T00:00:30Z,,,,test,false,missing_dni"));
        let back = read_series_csv(&buf[..], &Site::folsom(), 60).unwrap();
        assert_eq!(back.samples, s.samples);

        let raw = "timestamp_utc,ghi,dhi,dni\n2016-01-01T00:00:00Z,1.5,,\n";
        let r = read_readings_csv(raw.as_bytes()).unwrap();
        assert_eq!(r[0].ghi, Some(1.5));
        assert_eq!(r[0].dhi, None);
        assert_eq!(r[0].sensor_id, None);
    }
}
