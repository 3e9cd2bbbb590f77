//! Pairing of sky images with irradiance labels, plus audits of the two
//! image timestamps (file name vs. filesystem date modified).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::clearsky::{self, ClearSkyContext, ClearSkyModel, SkyCondition};
use crate::error::{Error, Result};
use crate::geometry::Site;
use crate::imaging::ManifestEntry;
use crate::irradiance::{IrradianceSeries, ProcessedView, MAX_INTERPOLATION_GAP_S};
use crate::par;
use crate::time::{self, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampSource {
    FileName,
    DateModified,
}

impl TimestampSource {
    pub fn pick(self, entry: &ManifestEntry) -> Option<Timestamp> {
        match self {
            TimestampSource::FileName => entry.ts_file_name,
            TimestampSource::DateModified => entry.ts_date_modified,
        }
    }
}

impl fmt::Display for TimestampSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimestampSource::FileName => "file_name",
            TimestampSource::DateModified => "date_modified",
        })
    }
}

/// Which image timestamp keys the label lookup, and an optional discard rule
/// on the disagreement between the two timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimestampPolicy {
    pub source: TimestampSource,
    #[serde(default, rename = "max_fn_dm_gap_s")]
    pub max_fn_dm_gap: Option<i64>,
}

impl TimestampPolicy {
    pub fn new(source: TimestampSource, max_fn_dm_gap: Option<i64>) -> Result<Self> {
        let p = TimestampPolicy {
            source,
            max_fn_dm_gap,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self.max_fn_dm_gap {
            Some(g) if g <= 0 => Err(Error::Config(format!("max_fn_dm_gap must be > 0, got {g}"))),
            _ => Ok(()),
        }
    }

    pub fn folsom() -> Self {
        TimestampPolicy {
            source: TimestampSource::DateModified,
            max_fn_dm_gap: None,
        }
    }

    pub fn sirta() -> Self {
        TimestampPolicy {
            source: TimestampSource::FileName,
            max_fn_dm_gap: None,
        }
    }

    pub fn nrel() -> Self {
        TimestampPolicy {
            source: TimestampSource::FileName,
            max_fn_dm_gap: Some(30),
        }
    }
}

/// An image with its label at the policy-selected instant.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub image_ref: String,
    pub instant: Timestamp,
    pub label_ghi: f64,
    pub ctx: ClearSkyContext,
    pub sky: SkyCondition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// The policy's timestamp is absent (or, with a gap rule, either one).
    MissingTimestamp,
    /// |FN - DM| above the policy threshold.
    GapExceeded,
    /// No label at the instant: outside the series, inside an
    /// un-interpolated gap, or removed by the zenith filter.
    NoLabel,
    /// Label present but the sun position could not be computed.
    OutOfRange,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::MissingTimestamp => "missing_timestamp",
            DropReason::GapExceeded => "gap_exceeded",
            DropReason::NoLabel => "no_label",
            DropReason::OutOfRange => "out_of_range",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Alignment {
    /// Sorted by `(instant, image_ref)`.
    pub pairs: Vec<AlignedPair>,
    /// Sorted by `image_ref`.
    pub dropped: Vec<(String, DropReason)>,
}

impl Alignment {
    pub fn drop_counts(&self) -> BTreeMap<DropReason, usize> {
        let mut out = BTreeMap::new();
        for (_, r) in &self.dropped {
            *out.entry(*r).or_insert(0) += 1;
        }
        out
    }
}

/// Clear/cloudy flags of the native (un-interpolated) samples, queried at
/// arbitrary instants.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkyFlags {
    times: Vec<Timestamp>,
    clear: Vec<bool>,
}

impl SkyFlags {
    pub fn new(times: Vec<Timestamp>, flags: &[SkyCondition]) -> Result<Self> {
        if times.len() != flags.len() {
            return Err(Error::Shape("flag and timestamp counts differ".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data(
                "flag timestamps not strictly increasing".into(),
            ));
        }
        Ok(SkyFlags {
            times,
            clear: flags.iter().map(|&f| f == SkyCondition::Clear).collect(),
        })
    }

    /// Runs clear-period detection on the native series.
    pub fn detect(
        native: &IrradianceSeries,
        model: &ClearSkyModel,
        thresholds: &clearsky::RenoThresholds,
    ) -> Result<Self> {
        let flags = clearsky::detect_clear_periods(native, model, thresholds)?;
        SkyFlags::new(native.timestamps(), &flags)
    }

    pub fn shifted(&self, dt: i64) -> SkyFlags {
        SkyFlags {
            times: self.times.iter().map(|t| t + dt).collect(),
            clear: self.clear.clone(),
        }
    }

    /// Clear iff `t` is a clear native sample, or lies strictly between two
    /// clear native samples no more than the interpolation gap apart.
    pub fn at(&self, t: Timestamp) -> SkyCondition {
        let clear = match self.times.binary_search(&t) {
            Ok(i) => self.clear[i],
            Err(i) if i > 0 && i < self.times.len() => {
                self.clear[i - 1]
                    && self.clear[i]
                    && self.times[i] - self.times[i - 1] <= MAX_INTERPOLATION_GAP_S
            }
            Err(_) => false,
        };
        if clear {
            SkyCondition::Clear
        } else {
            SkyCondition::Cloudy
        }
    }
}

/// Exact-second GHI labels of a processed series.
pub trait LabelSource: Sync {
    fn site(&self) -> &Site;
    fn ghi_at(&self, t: Timestamp) -> Option<f64>;
}

/// A series already interpolated to 1 s (and filtered): exact lookup.
impl LabelSource for IrradianceSeries {
    fn site(&self) -> &Site {
        &self.site
    }

    fn ghi_at(&self, t: Timestamp) -> Option<f64> {
        self.at(t).and_then(|s| s.ghi)
    }
}

impl LabelSource for ProcessedView<'_> {
    fn site(&self) -> &Site {
        &self.native.site
    }

    fn ghi_at(&self, t: Timestamp) -> Option<f64> {
        ProcessedView::ghi_at(self, t)
    }
}

enum Outcome {
    Pair(AlignedPair),
    Dropped(String, DropReason),
}

fn align_one(
    entry: &ManifestEntry,
    labels: &dyn LabelSource,
    flags: &SkyFlags,
    policy: &TimestampPolicy,
    model: &ClearSkyModel,
) -> Outcome {
    let drop = |r| Outcome::Dropped(entry.path.clone(), r);
    let Some(instant) = policy.source.pick(entry) else {
        return drop(DropReason::MissingTimestamp);
    };
    if let Some(max_gap) = policy.max_fn_dm_gap {
        match (entry.ts_file_name, entry.ts_date_modified) {
            (Some(f), Some(d)) if (f - d).abs() > max_gap => return drop(DropReason::GapExceeded),
            (Some(_), Some(_)) => {}
            _ => return drop(DropReason::MissingTimestamp),
        }
    }
    let Some(label) = labels.ghi_at(instant) else {
        return drop(DropReason::NoLabel);
    };
    let Ok((_, ctx)) = clearsky::clear_sky_at(model, labels.site(), instant) else {
        return drop(DropReason::OutOfRange);
    };
    Outcome::Pair(AlignedPair {
        image_ref: entry.path.clone(),
        instant,
        label_ghi: label,
        ctx,
        sky: flags.at(instant),
    })
}

/// Labels every manifest entry with the exact-second value of the 1 s
/// series at its policy instant. Each entry yields either a pair or a drop
/// record; output order does not depend on manifest order.
pub fn align(
    manifest: &[ManifestEntry],
    series_1s: &dyn LabelSource,
    flags: &SkyFlags,
    policy: &TimestampPolicy,
    model: &ClearSkyModel,
) -> Result<Alignment> {
    policy.validate()?;
    let outcomes = par::map(manifest, |e| align_one(e, series_1s, flags, policy, model));
    let mut out = Alignment::default();
    for o in outcomes {
        match o {
            Outcome::Pair(p) => out.pairs.push(p),
            Outcome::Dropped(path, r) => out.dropped.push((path, r)),
        }
    }
    out.pairs.sort_by(|a, b| {
        a.instant
            .cmp(&b.instant)
            .then_with(|| a.image_ref.cmp(&b.image_ref))
    });
    out.dropped.sort();
    if out.pairs.is_empty() && !manifest.is_empty() {
        log::warn!(
            "no image of {} overlaps the irradiance series at {}; drops: {:?}",
            manifest.len(),
            series_1s.site().name,
            out.drop_counts()
        );
    }
    Ok(out)
}

/// Mean `FN - DM` of one site-local day (positive: file name ahead).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftDay {
    pub day: NaiveDate,
    pub mean_s: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub days: Vec<DriftDay>,
    /// Images without both timestamps.
    pub excluded: usize,
}

/// Daily mean of `FN - DM`, days taken in site-local time from the
/// date-modified stamp.
pub fn drift_report(manifest: &[ManifestEntry], utc_offset_s: i64) -> DriftReport {
    let mut acc: BTreeMap<NaiveDate, (i64, usize)> = BTreeMap::new();
    let mut excluded = 0;
    for e in manifest {
        match (e.ts_file_name, e.ts_date_modified) {
            (Some(f), Some(d)) => {
                let a = acc
                    .entry(time::local_date(d, utc_offset_s))
                    .or_insert((0, 0));
                a.0 += f - d;
                a.1 += 1;
            }
            _ => excluded += 1,
        }
    }
    DriftReport {
        days: acc
            .into_iter()
            .map(|(day, (sum, n))| DriftDay {
                day,
                mean_s: sum as f64 / n as f64,
                n,
            })
            .collect(),
        excluded,
    }
}

/// Counts of the seconds field of the chosen timestamp; entries without that
/// timestamp are skipped.
pub fn second_histogram(manifest: &[ManifestEntry], source: TimestampSource) -> [u64; 60] {
    let mut hist = [0u64; 60];
    for t in manifest.iter().filter_map(|e| source.pick(e)) {
        hist[time::second_of_minute(t) as usize] += 1;
    }
    hist
}

/// Pearson chi-square statistic of `hist` against the uniform distribution.
pub fn chi_square_uniform(hist: &[u64]) -> f64 {
    let n: u64 = hist.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let expected = n as f64 / hist.len() as f64;
    hist.iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}

/// Upper 1% point of the chi-square distribution with 59 degrees of freedom.
pub const CHI2_59_CRITICAL_001: f64 = 87.16571139978757;

#[derive(Debug, Serialize, Deserialize)]
struct PairRow {
    instant_utc: String,
    image_path: String,
    ghi: f64,
    i_clr: f64,
    i_extr: f64,
    sky_condition: String,
}

/// CSV columns `instant_utc, image_path, ghi, i_clr, i_extr, sky_condition`.
pub fn write_pairs_csv<W: Write>(writer: W, pairs: &[AlignedPair]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    if pairs.is_empty() {
        wtr.write_record([
            "instant_utc",
            "image_path",
            "ghi",
            "i_clr",
            "i_extr",
            "sky_condition",
        ])?;
    }
    for p in pairs {
        wtr.serialize(PairRow {
            instant_utc: time::format_iso(p.instant),
            image_path: p.image_ref.clone(),
            ghi: p.label_ghi,
            i_clr: p.ctx.i_clr,
            i_extr: p.ctx.i_extr,
            sky_condition: p.sky.to_string(),
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_pairs_csv<R: Read>(reader: R) -> Result<Vec<AlignedPair>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize::<PairRow>()
        .map(|row| {
            let row = row?;
            Ok(AlignedPair {
                image_ref: row.image_path,
                instant: time::parse_timestamp(&row.instant_utc)?,
                label_ghi: row.ghi,
                ctx: ClearSkyContext {
                    i_clr: row.i_clr,
                    i_extr: row.i_extr,
                },
                sky: row.sky_condition.parse()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Site;
    use crate::irradiance::IrradianceSample;

    fn entry(path: &str, f: Option<Timestamp>, d: Option<Timestamp>) -> ManifestEntry {
        ManifestEntry {
            path: path.into(),
            ts_file_name: f,
            ts_date_modified: d,
            exposure: Default::default(),
            site: "folsom".into(),
        }
    }

    fn dense_series(start: Timestamp, n: i64) -> IrradianceSeries {
        let samples = (0..n)
            .map(|k| IrradianceSample::ghi_only(start + k, 300.0 + k as f64 * 0.01))
            .collect();
        IrradianceSeries::new(Site::folsom(), "test", samples, 1).unwrap()
    }

    #[test]
    fn exact_second_label_and_drops() {
        let t0 = time::from_ymd_hms(2016, 6, 21, 18, 0, 0);
        let series = dense_series(t0, 3600);
        let model = ClearSkyModel::default();
        let flags = SkyFlags::default();
        let target = t0 + 937;
        let manifest = vec![
            entry("b", Some(target), Some(target)),
            entry("a", Some(target + 45), Some(target)),
            entry("c", None, Some(target)),
            entry("d", Some(t0 - 10), Some(t0 - 10)),
        ];
        let dm = align(
            &manifest,
            &series,
            &flags,
            &TimestampPolicy::folsom(),
            &model,
        )
        .unwrap();
        assert_eq!(dm.pairs.len(), 3);
        assert!(dm
            .pairs
            .iter()
            .all(|p| p.instant == target || p.image_ref == "c"));
        assert_eq!(
            dm.pairs[0].label_ghi,
            series.at(target).unwrap().ghi.unwrap()
        );
        assert_eq!(dm.dropped, vec![("d".to_string(), DropReason::NoLabel)]);

        let nrel = align(&manifest, &series, &flags, &TimestampPolicy::nrel(), &model).unwrap();
        let reasons: BTreeMap<_, _> = nrel.dropped.iter().cloned().collect();
        assert_eq!(reasons["a"], DropReason::GapExceeded);
        assert_eq!(reasons["c"], DropReason::MissingTimestamp);
        assert_eq!(nrel.pairs.len() + nrel.dropped.len(), manifest.len());
    }

    #[test]
    fn policy_validation() {
        assert!(TimestampPolicy::new(TimestampSource::FileName, Some(0)).is_err());
        assert!(TimestampPolicy::new(TimestampSource::FileName, Some(30)).is_ok());
    }

    #[test]
    fn drift_constant_offset() {
        let t0 = time::from_ymd_hms(2015, 3, 1, 17, 0, 0);
        let manifest: Vec<_> = (0..100)
            .map(|k| {
                let d = t0 + k * 3600 * 7;
                entry(&k.to_string(), Some(d + 690), Some(d))
            })
            .chain([entry("x", Some(t0), None)])
            .collect();
        let rep = drift_report(&manifest, -8 * 3600);
        assert_eq!(rep.excluded, 1);
        assert!(rep.days.iter().all(|d| d.mean_s == 690.0));
        assert_eq!(rep.days.iter().map(|d| d.n).sum::<usize>(), 100);
    }

    #[test]
    fn histogram_all_zero_second() {
        let manifest: Vec<_> = (0..50).map(|k| entry("p", Some(k * 60), None)).collect();
        let h = second_histogram(&manifest, TimestampSource::FileName);
        assert_eq!(h[0], 50);
        assert_eq!(h[1..].iter().sum::<u64>(), 0);
        assert_eq!(
            second_histogram(&manifest, TimestampSource::DateModified),
            [0; 60]
        );
    }

    #[test]
    fn flags_between_native_samples() {
        let flags = SkyFlags::new(
            vec![0, 60, 120, 300],
            &[
                SkyCondition::Clear,
                SkyCondition::Clear,
                SkyCondition::Cloudy,
                SkyCondition::Clear,
            ],
        )
        .unwrap();
        assert_eq!(flags.at(30), SkyCondition::Clear);
        assert_eq!(flags.at(90), SkyCondition::Cloudy);
        assert_eq!(flags.at(200), SkyCondition::Cloudy);
        assert_eq!(flags.at(300), SkyCondition::Clear);
        assert_eq!(flags.at(301), SkyCondition::Cloudy);
        assert_eq!(flags.shifted(-30).at(0), SkyCondition::Clear);
    }

    #[test]
    fn pairs_csv_round_trip() {
        let p = AlignedPair {
            image_ref: "img/20160101_120000.skt".into(),
            instant: 1_451_649_600,
            label_ghi: 512.25,
            ctx: ClearSkyContext {
                i_clr: 700.5,
                i_extr: 900.0,
            },
            sky: SkyCondition::Clear,
        };
        let mut buf = Vec::new();
        write_pairs_csv(&mut buf, std::slice::from_ref(&p)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("instant_utc,image_path,ghi,i_clr,i_extr,sky_condition"));
        assert_eq!(read_pairs_csv(&buf[..]).unwrap(), vec![p]);
    }
}
