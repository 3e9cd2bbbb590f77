//! Year-based train/test partition, stratified group K-fold over days, and
//! sample-interval thinning.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::AlignedPair;
use crate::clearsky::SkyCondition;
use crate::error::{Error, Result};
use crate::time;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub test_years: Vec<i32>,
    pub k: usize,
    pub n_bins: usize,
    /// W/m².
    pub bin_width: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_years: Vec::new(),
            k: 5,
            n_bins: 14,
            bin_width: 100.0,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k must be >= 2, got {}", self.k)));
        }
        if !(self.bin_width > 0.0)
            || self.n_bins == 0
            || (self.n_bins as f64) * self.bin_width < 1367.0
        {
            return Err(Error::Config(format!(
                "{} bins of {} W/m² do not cover [0, 1367)",
                self.n_bins, self.bin_width
            )));
        }
        Ok(())
    }

    /// Histogram bin of a GHI value; negatives fall in the first bin and
    /// values beyond the last edge in the last.
    pub fn bin(&self, ghi: f64) -> usize {
        ((ghi / self.bin_width).floor().max(0.0) as usize).min(self.n_bins - 1)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTest {
    pub train: Vec<AlignedPair>,
    pub test: Vec<AlignedPair>,
    pub test_clear: Vec<AlignedPair>,
    pub test_cloudy: Vec<AlignedPair>,
}

/// Pairs whose UTC year is in `test_years` form the test set, the rest the
/// training set.
pub fn split_train_test(pairs: &[AlignedPair], spec: &SplitSpec) -> Result<TrainTest> {
    let years: BTreeSet<i32> = spec.test_years.iter().copied().collect();
    let mut out = TrainTest::default();
    for p in pairs {
        if years.contains(&time::utc_year(p.instant)) {
            out.test.push(p.clone());
            match p.sky {
                SkyCondition::Clear => out.test_clear.push(p.clone()),
                SkyCondition::Cloudy => out.test_cloudy.push(p.clone()),
            }
        } else {
            out.train.push(p.clone());
        }
    }
    if out.test.is_empty() {
        return Err(Error::Config(format!(
            "no pairs fall in test years {:?}",
            spec.test_years
        )));
    }
    if out.train.is_empty() {
        return Err(Error::Config(
            "every pair falls in the test years; training set is empty".into(),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkyCounts {
    pub total: usize,
    pub clear: usize,
    pub cloudy: usize,
}

impl SkyCounts {
    pub fn of(pairs: &[AlignedPair]) -> Self {
        let clear = pairs
            .iter()
            .filter(|p| p.sky == SkyCondition::Clear)
            .count();
        SkyCounts {
            total: pairs.len(),
            clear,
            cloudy: pairs.len() - clear,
        }
    }
}

/// Per-set counts, exported as the split manifest JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train_years: Vec<i32>,
    pub test_years: Vec<i32>,
    pub train: SkyCounts,
    pub test: SkyCounts,
}

impl SplitSummary {
    pub fn of(split: &TrainTest) -> Self {
        let years = |ps: &[AlignedPair]| -> Vec<i32> {
            ps.iter()
                .map(|p| time::utc_year(p.instant))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        SplitSummary {
            train_years: years(&split.train),
            test_years: years(&split.test),
            train: SkyCounts::of(&split.train),
            test: SkyCounts::of(&split.test),
        }
    }
}

/// Day to fold index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<NaiveDate, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, day: NaiveDate) -> Option<usize> {
        self.folds.get(&day).copied()
    }

    /// Indices of `pairs` in each fold; pairs of unassigned days are left
    /// out.
    pub fn partition(&self, pairs: &[AlignedPair], utc_offset_s: i64) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, p) in pairs.iter().enumerate() {
            if let Some(f) = self.fold_of(time::local_date(p.instant, utc_offset_s)) {
                out[f].push(i);
            }
        }
        out
    }
}

/// Per-day GHI histograms in site-local days.
pub fn day_histograms(
    pairs: &[AlignedPair],
    spec: &SplitSpec,
    utc_offset_s: i64,
) -> BTreeMap<NaiveDate, Vec<u64>> {
    let mut out: BTreeMap<NaiveDate, Vec<u64>> = BTreeMap::new();
    for p in pairs {
        out.entry(time::local_date(p.instant, utc_offset_s))
            .or_insert_with(|| vec![0; spec.n_bins])[spec.bin(p.label_ghi)] += 1;
    }
    out
}

/// Greedy stratified group K-fold with days as groups.
///
/// Days are placed largest first (ties by date). Each goes to the fold whose
/// per-bin counts move least away from the ideal share `global / k`, measured
/// as a chi-square distance; ties go to the fold with fewer samples, then the
/// lower index. Fold labels are finally permuted by `spec.seed`.
pub fn stratified_group_kfold(
    train: &[AlignedPair],
    spec: &SplitSpec,
    utc_offset_s: i64,
) -> Result<FoldAssignment> {
    spec.validate()?;
    let hists = day_histograms(train, spec, utc_offset_s);
    if hists.len() < spec.k {
        return Err(Error::Config(format!(
            "{} distinct days cannot fill {} folds",
            hists.len(),
            spec.k
        )));
    }
    let k = spec.k;
    let mut global = vec![0f64; spec.n_bins];
    for h in hists.values() {
        for (g, &c) in global.iter_mut().zip(h) {
            *g += c as f64;
        }
    }
    let target: Vec<f64> = global.iter().map(|g| g / k as f64).collect();

    let mut days: Vec<(&NaiveDate, &Vec<u64>)> = hists.iter().collect();
    days.sort_by(|a, b| {
        let na: u64 = a.1.iter().sum();
        let nb: u64 = b.1.iter().sum();
        nb.cmp(&na).then(a.0.cmp(b.0))
    });

    let mut counts = vec![vec![0f64; spec.n_bins]; k];
    let mut totals = vec![0u64; k];
    let mut raw = BTreeMap::new();
    for (day, h) in days {
        let mut best: Option<(f64, u64, usize)> = None;
        for f in 0..k {
            let delta: f64 = (0..spec.n_bins)
                .filter(|&b| target[b] > 0.0)
                .map(|b| {
                    let cur = counts[f][b] - target[b];
                    let new = cur + h[b] as f64;
                    (new * new - cur * cur) / target[b]
                })
                .sum();
            let better = match best {
                None => true,
                Some((bd, bt, _)) => delta < bd || (delta == bd && totals[f] < bt),
            };
            if better {
                best = Some((delta, totals[f], f));
            }
        }
        let f = best.expect("k >= 2").2;
        for (c, &v) in counts[f].iter_mut().zip(h) {
            *c += v as f64;
        }
        totals[f] += h.iter().sum::<u64>();
        raw.insert(*day, f);
    }

    let mut labels: Vec<usize> = (0..k).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    Ok(FoldAssignment {
        k,
        folds: raw.into_iter().map(|(d, f)| (d, labels[f])).collect(),
    })
}

/// Keeps the earliest pair of every `interval_min` bucket of each site-local
/// day. Output is sorted by instant.
pub fn thin_by_interval(
    pairs: &[AlignedPair],
    interval_min: u32,
    utc_offset_s: i64,
) -> Vec<AlignedPair> {
    let mut sorted: Vec<&AlignedPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| {
        a.instant
            .cmp(&b.instant)
            .then_with(|| a.image_ref.cmp(&b.image_ref))
    });
    let width = i64::from(interval_min.max(1)) * 60;
    let mut seen = BTreeSet::new();
    sorted
        .into_iter()
        .filter(|p| {
            let local = p.instant + utc_offset_s;
            let day = local.div_euclid(time::SECONDS_PER_DAY);
            let bucket = local.rem_euclid(time::SECONDS_PER_DAY) / width;
            seen.insert((day, bucket))
        })
        .cloned()
        .collect()
}

/// CSV `day, fold`.
pub fn write_folds_csv<W: Write>(writer: W, folds: &FoldAssignment) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["day", "fold"])?;
    for (day, f) in &folds.folds {
        wtr.write_record([day.to_string(), f.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_folds_csv<R: Read>(reader: R) -> Result<FoldAssignment> {
    #[derive(Deserialize)]
    struct Row {
        day: NaiveDate,
        fold: usize,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut folds = BTreeMap::new();
    for row in rdr.deserialize::<Row>() {
        let row = row?;
        folds.insert(row.day, row.fold);
    }
    let k = folds.values().max().map_or(0, |m| m + 1);
    Ok(FoldAssignment { k, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clearsky::ClearSkyContext;

    fn pair(instant: i64, ghi: f64, sky: SkyCondition) -> AlignedPair {
        AlignedPair {
            image_ref: format!("{instant}"),
            instant,
            label_ghi: ghi,
            ctx: ClearSkyContext {
                i_clr: 800.0,
                i_extr: 1000.0,
            },
            sky,
        }
    }

    #[test]
    fn year_split() {
        let mut pairs = Vec::new();
        for year in 2014..=2016 {
            for d in 0..3 {
                let t = time::from_ymd_hms(year, 5, 1 + d, 18, 0, 0);
                pairs.push(pair(
                    t,
                    500.0,
                    if d == 0 {
                        SkyCondition::Clear
                    } else {
                        SkyCondition::Cloudy
                    },
                ));
            }
        }
        let spec = SplitSpec {
            test_years: vec![2016],
            ..Default::default()
        };
        let s = split_train_test(&pairs, &spec).unwrap();
        assert!(s.train.iter().all(|p| time::utc_year(p.instant) < 2016));
        assert_eq!(s.test.len(), 3);
        assert_eq!(s.test_clear.len() + s.test_cloudy.len(), s.test.len());
        let bad = SplitSpec {
            test_years: vec![2020],
            ..Default::default()
        };
        assert!(matches!(
            split_train_test(&pairs, &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identical_days_one_per_fold() {
        let pairs: Vec<_> = (0..5)
            .flat_map(|d| {
                (0..10).map(move |m| {
                    pair(
                        time::from_ymd_hms(2015, 1, 1 + d, 18, m, 0),
                        100.0 * m as f64,
                        SkyCondition::Cloudy,
                    )
                })
            })
            .collect();
        let spec = SplitSpec::default();
        let folds = stratified_group_kfold(&pairs, &spec, 0).unwrap();
        let used: BTreeSet<_> = folds.folds.values().copied().collect();
        assert_eq!(used.len(), 5);
        let few = &pairs[..30];
        assert!(matches!(
            stratified_group_kfold(few, &spec, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(SplitSpec {
            k: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SplitSpec {
            n_bins: 13,
            ..Default::default()
        }
        .validate()
        .is_err());
        let s = SplitSpec::default();
        assert_eq!(s.bin(-3.0), 0);
        assert_eq!(s.bin(1399.9), 13);
        assert_eq!(s.bin(5000.0), 13);
    }

    #[test]
    fn thinning() {
        let pairs: Vec<_> = (0..120)
            .map(|m| {
                pair(
                    time::from_ymd_hms(2015, 1, 1, 18, 0, 0) + m * 60,
                    1.0,
                    SkyCondition::Clear,
                )
            })
            .collect();
        assert_eq!(thin_by_interval(&pairs, 1, 0), pairs);
        let thin = thin_by_interval(&pairs, 10, 0);
        assert_eq!(thin.len(), 12);
        assert!(thin.iter().all(|p| pairs.contains(p)));
    }

    #[test]
    fn folds_csv_round_trip() {
        let mut folds = BTreeMap::new();
        folds.insert(NaiveDate::from_ymd_opt(2015, 1, 2).unwrap(), 1);
        folds.insert(NaiveDate::from_ymd_opt(2015, 1, 3).unwrap(), 0);
        let fa = FoldAssignment { k: 2, folds };
        let mut buf = Vec::new();
        write_folds_csv(&mut buf, &fa).unwrap();
        assert_eq!(read_folds_csv(&buf[..]).unwrap(), fa);
    }
}
