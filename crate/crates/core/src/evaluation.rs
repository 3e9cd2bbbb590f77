//! RMSE / MAE / nRMSE and reports stratified by sky condition, season and
//! local hour.

use std::io::Write;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::clearsky::SkyCondition;
use crate::error::{Error, Result};
use crate::time::{self, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub nrmse: f64,
}

impl MetricSet {
    pub fn mse(&self) -> f64 {
        self.rmse * self.rmse
    }
}

/// RMSE, MAE and RMSE divided by the mean of `truth`.
pub fn metrics(truth: &[f64], pred: &[f64]) -> Result<MetricSet> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} truths vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData("no samples to score".into()));
    }
    let n = truth.len() as f64;
    let (mut se, mut ae, mut sum) = (0.0, 0.0, 0.0);
    for (t, p) in truth.iter().zip(pred) {
        let e = t - p;
        se += e * e;
        ae += e.abs();
        sum += t;
    }
    let mean = sum / n;
    if mean == 0.0 {
        return Err(Error::UndefinedMetric(
            "nRMSE undefined: mean of truth is zero".into(),
        ));
    }
    let rmse = (se / n).sqrt();
    Ok(MetricSet {
        n: truth.len(),
        rmse,
        mae: ae / n,
        nrmse: rmse / mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Season {
    #[serde(rename = "DJF")]
    Djf,
    #[serde(rename = "MAM")]
    Mam,
    #[serde(rename = "JJA")]
    Jja,
    #[serde(rename = "SON")]
    Son,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Djf, Season::Mam, Season::Jja, Season::Son];

    pub fn of_month(month: u32) -> Season {
        match month {
            12 | 1 | 2 => Season::Djf,
            3..=5 => Season::Mam,
            6..=8 => Season::Jja,
            _ => Season::Son,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Djf => "DJF",
            Season::Mam => "MAM",
            Season::Jja => "JJA",
            Season::Son => "SON",
        }
    }
}

/// One subgroup; `metrics` is absent when the subgroup is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub group: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub model: String,
    pub overall: MetricSet,
    pub by_sky: Vec<Stratum>,
    pub by_season: Vec<Stratum>,
    pub by_hour: Vec<Stratum>,
}

/// One scored sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub instant: Timestamp,
    pub truth: f64,
    pub pred: f64,
    pub sky: SkyCondition,
}

fn stratum<K: PartialEq>(
    name: String,
    samples: &[Scored],
    key: impl Fn(&Scored) -> K,
    want: K,
) -> Result<Stratum> {
    let (t, p): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .filter(|s| key(s) == want)
        .map(|s| (s.truth, s.pred))
        .unzip();
    let metrics = if t.is_empty() {
        None
    } else {
        Some(metrics(&t, &p)?)
    };
    Ok(Stratum {
        group: name,
        n: t.len(),
        metrics,
    })
}

/// Overall metrics plus the sky, meteorological-season and local-hour
/// partitions. Hours are site-local standard time (`utc_offset_s`).
pub fn stratify(
    samples: &[Scored],
    utc_offset_s: i64,
    dataset: &str,
    model: &str,
) -> Result<EvaluationReport> {
    let (t, p): (Vec<f64>, Vec<f64>) = samples.iter().map(|s| (s.truth, s.pred)).unzip();
    let overall = metrics(&t, &p)?;
    let by_sky = [SkyCondition::Clear, SkyCondition::Cloudy]
        .into_iter()
        .map(|c| stratum(c.to_string(), samples, |s| s.sky, c))
        .collect::<Result<_>>()?;
    let season_of =
        |s: &Scored| Season::of_month(time::to_datetime(s.instant + utc_offset_s).month());
    let by_season = Season::ALL
        .into_iter()
        .map(|season| stratum(season.name().into(), samples, season_of, season))
        .collect::<Result<_>>()?;
    let by_hour = (0..24)
        .map(|h| {
            stratum(
                format!("{h:02}"),
                samples,
                |s| time::local_hour(s.instant, utc_offset_s),
                h,
            )
        })
        .collect::<Result<_>>()?;
    Ok(EvaluationReport {
        dataset: dataset.into(),
        model: model.into(),
        overall,
        by_sky,
        by_season,
        by_hour,
    })
}

impl EvaluationReport {
    pub fn partitions(&self) -> [(&'static str, &[Stratum]); 3] {
        [
            ("sky", &self.by_sky),
            ("season", &self.by_season),
            ("hour", &self.by_hour),
        ]
    }

    pub fn sky(&self, c: SkyCondition) -> Option<&MetricSet> {
        let name = c.to_string();
        self.by_sky
            .iter()
            .find(|s| s.group == name)
            .and_then(|s| s.metrics.as_ref())
    }

    /// Flat CSV `partition, group, n, rmse, mae, nrmse`; empty groups leave
    /// the metric columns blank.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["partition", "group", "n", "rmse", "mae", "nrmse"])?;
        let row = |m: Option<&MetricSet>| -> [String; 3] {
            match m {
                Some(m) => [m.rmse.to_string(), m.mae.to_string(), m.nrmse.to_string()],
                None => Default::default(),
            }
        };
        let [r, a, n] = row(Some(&self.overall));
        wtr.write_record(["overall", "all", &self.overall.n.to_string(), &r, &a, &n])?;
        for (part, strata) in self.partitions() {
            for s in strata {
                let [r, a, n] = row(s.metrics.as_ref());
                wtr.write_record([part, &s.group, &s.n.to_string(), &r, &a, &n])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}
