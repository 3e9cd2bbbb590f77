//! Forecast sequences, smart persistence, video predictors and the
//! single-/two-step forecast harnesses.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::alignment::AlignedPair;
use crate::clearsky::ClearSkyContext;
use crate::error::{Error, Result};
use crate::imaging::{self, ImageStore, Raster};
use crate::modeling::Estimator;
use crate::par;
use crate::time::{self, Timestamp};

/// Context frames relative to the forecast origin, minutes.
pub const CONTEXT_MIN: [i64; 5] = [-8, -6, -4, -2, 0];
/// Forecast horizons, minutes.
pub const LEADS_MIN: [i64; 5] = [2, 4, 6, 8, 10];

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub t: Timestamp,
    pub context_refs: [String; 5],
    pub target_refs: [String; 5],
    pub target_ghi: [f64; 5],
    pub target_kt: [f64; 5],
    pub target_ctx: [ClearSkyContext; 5],
    pub ghi_now: f64,
    pub kt_now: f64,
    pub ctx_now: ClearSkyContext,
}

impl SequenceSample {
    pub fn target_instant(&self, k: usize) -> Timestamp {
        self.t + LEADS_MIN[k] * 60
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceOptions {
    /// Keep only origins on odd site-local days of the month (test role).
    pub odd_days_only: bool,
    pub utc_offset_s: i64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceSet {
    pub samples: Vec<SequenceSample>,
    /// Origins dropped because one of the ten instants had no usable pair.
    pub incomplete: usize,
    /// Origins dropped by the odd-day filter.
    pub filtered: usize,
}

/// Every pair instant whose ten surrounding instants (t-8 .. t+10 min every
/// 2 min) all carry a pair with a positive clear-sky value becomes a sample.
/// With several pairs at one instant the first by image path is used.
pub fn build_sequences(pairs: &[AlignedPair], opts: &SequenceOptions) -> SequenceSet {
    let mut by_instant: BTreeMap<Timestamp, &AlignedPair> = BTreeMap::new();
    for p in pairs {
        by_instant
            .entry(p.instant)
            .and_modify(|q| {
                if p.image_ref < q.image_ref {
                    *q = p;
                }
            })
            .or_insert(p);
    }
    let usable = |t: Timestamp| by_instant.get(&t).copied().filter(|p| p.ctx.i_clr > 0.0);
    let mut out = SequenceSet::default();
    for &t in by_instant.keys() {
        let ctx: Option<Vec<&AlignedPair>> =
            CONTEXT_MIN.iter().map(|m| usable(t + m * 60)).collect();
        let tgt: Option<Vec<&AlignedPair>> = LEADS_MIN.iter().map(|m| usable(t + m * 60)).collect();
        let (Some(ctx), Some(tgt)) = (ctx, tgt) else {
            out.incomplete += 1;
            continue;
        };
        if opts.odd_days_only
            && time::local_date(t, opts.utc_offset_s)
                .day()
                .is_multiple_of(2)
        {
            out.filtered += 1;
            continue;
        }
        let now = ctx[4];
        out.samples.push(SequenceSample {
            t,
            context_refs: std::array::from_fn(|k| ctx[k].image_ref.clone()),
            target_refs: std::array::from_fn(|k| tgt[k].image_ref.clone()),
            target_ghi: std::array::from_fn(|k| tgt[k].label_ghi),
            target_kt: std::array::from_fn(|k| tgt[k].label_ghi / tgt[k].ctx.i_clr),
            target_ctx: std::array::from_fn(|k| tgt[k].ctx),
            ghi_now: now.label_ghi,
            kt_now: now.label_ghi / now.ctx.i_clr,
            ctx_now: now.ctx,
        });
    }
    out
}

/// `I(t+h) = kt(t) * I_clr(t+h)` for each future context.
pub fn smart_persistence(kt_now: f64, clr_future: &[ClearSkyContext]) -> Vec<f64> {
    clr_future.iter().map(|c| kt_now * c.i_clr).collect()
}

pub fn spm_forecast(sample: &SequenceSample) -> [f64; 5] {
    std::array::from_fn(|k| sample.kt_now * sample.target_ctx[k].i_clr)
}

/// Generates the five future frames of a sample. Implementations are shared
/// read-only across threads.
pub trait VideoPredictor: Send + Sync {
    fn name(&self) -> &str;
    fn predict(&self, sample: &SequenceSample, store: &dyn ImageStore) -> Result<Vec<Raster>>;
}

/// Repeats the frame at `t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenPersistence;

impl VideoPredictor for FrozenPersistence {
    fn name(&self) -> &str {
        "frozen"
    }

    fn predict(&self, sample: &SequenceSample, store: &dyn ImageStore) -> Result<Vec<Raster>> {
        let now = store.load(&sample.context_refs[4])?;
        Ok(vec![now; 5])
    }
}

/// Returns the real future frames: the perfect-predictor lower bound.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthPassthrough;

impl VideoPredictor for GroundTruthPassthrough {
    fn name(&self) -> &str {
        "ground_truth"
    }

    fn predict(&self, sample: &SequenceSample, store: &dyn ImageStore) -> Result<Vec<Raster>> {
        sample.target_refs.iter().map(|r| store.load(r)).collect()
    }
}

/// Frames written by an outside model as tensor files named by
/// [`predicted_frame_key`] plus the tensor extension, under `root`.
#[derive(Debug, Clone)]
pub struct ExternalPredictor {
    pub root: PathBuf,
}

impl VideoPredictor for ExternalPredictor {
    fn name(&self) -> &str {
        "external"
    }

    fn predict(&self, sample: &SequenceSample, _store: &dyn ImageStore) -> Result<Vec<Raster>> {
        (0..5)
            .map(|k| {
                let name = format!(
                    "{}.{}",
                    predicted_frame_key(sample, k),
                    imaging::TENSOR_EXTENSION
                );
                imaging::load_tensor(&self.root.join(name))
            })
            .collect()
    }
}

/// `YYYYMMDD_HHMMSS_pLL`: origin stamp and lead in minutes.
pub fn predicted_frame_key(sample: &SequenceSample, k: usize) -> String {
    format!(
        "{}_p{:02}",
        time::format_filename_stamp(sample.t),
        LEADS_MIN[k]
    )
}

/// Predicts future frames, then estimates GHI from each with the clear-sky
/// context of its own target instant.
pub fn two_step_forecast(
    sample: &SequenceSample,
    vp: &dyn VideoPredictor,
    est: &dyn Estimator,
    store: &dyn ImageStore,
) -> Result<[f64; 5]> {
    let frames = vp.predict(sample, store)?;
    if frames.len() != 5 {
        return Err(Error::Shape(format!(
            "predictor returned {} frames, expected 5",
            frames.len()
        )));
    }
    let shape = (frames[0].height(), frames[0].width(), frames[0].channels());
    if frames
        .iter()
        .any(|f| (f.height(), f.width(), f.channels()) != shape)
    {
        return Err(Error::Shape("predicted frames differ in shape".into()));
    }
    let mut out = [0.0; 5];
    for (k, frame) in frames.iter().enumerate() {
        let resized;
        let frame = match est.input_width() {
            Some(w) if frame.width() != w || frame.height() != w => {
                resized = imaging::resize_area(frame, w, w);
                &resized
            }
            _ => frame,
        };
        out[k] = est.estimate(
            &predicted_frame_key(sample, k),
            frame,
            &sample.target_ctx[k],
        )?;
    }
    Ok(out)
}

/// Direct sequence-to-kt model used by the single-step path.
pub trait SequenceModel: Send + Sync {
    fn predict_kt(&self, sample: &SequenceSample, store: &dyn ImageStore) -> Result<[f64; 5]>;
}

/// Holds the current clear-sky index for every lead.
#[derive(Debug, Clone, Copy, Default)]
pub struct PersistKt;

impl SequenceModel for PersistKt {
    fn predict_kt(&self, sample: &SequenceSample, _store: &dyn ImageStore) -> Result<[f64; 5]> {
        Ok([sample.kt_now; 5])
    }
}

pub fn single_step_forecast(
    sample: &SequenceSample,
    model: &dyn SequenceModel,
    store: &dyn ImageStore,
) -> Result<[f64; 5]> {
    let kt = model.predict_kt(sample, store)?;
    Ok(std::array::from_fn(|k| kt[k] * sample.target_ctx[k].i_clr))
}

/// Applies `f` to every sample in parallel, keeping order.
pub fn forecast_all<F>(samples: &[SequenceSample], f: F) -> Result<Vec<[f64; 5]>>
where
    F: Fn(&SequenceSample) -> Result<[f64; 5]> + Sync + Send,
{
    par::try_map(samples, f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadScore {
    pub lead_min: i64,
    pub n: usize,
    pub rmse: f64,
    pub rmse_spm: f64,
    /// `1 - rmse / rmse_spm`; absent when the baseline is perfect.
    pub fs: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub leads: Vec<LeadScore>,
}

impl ForecastReport {
    /// CSV `lead_min, rmse, fs, n`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["lead_min", "rmse", "fs", "n"])?;
        for l in &self.leads {
            wtr.write_record([
                l.lead_min.to_string(),
                l.rmse.to_string(),
                l.fs.map(|v| v.to_string()).unwrap_or_default(),
                l.n.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Target instants reached by every lead of some sample. Scoring each lead
/// on exactly these instants makes the leads comparable.
pub fn common_target_instants(samples: &[SequenceSample]) -> BTreeSet<Timestamp> {
    let mut common: Option<BTreeSet<Timestamp>> = None;
    for k in 0..5 {
        let set: BTreeSet<Timestamp> = samples.iter().map(|s| s.target_instant(k)).collect();
        common = Some(match common {
            None => set,
            Some(c) => c.intersection(&set).copied().collect(),
        });
    }
    common.unwrap_or_default()
}

fn rmse(errors: impl Iterator<Item = f64>) -> (f64, usize) {
    let (mut se, mut n) = (0.0, 0usize);
    for e in errors {
        se += e * e;
        n += 1;
    }
    ((se / n.max(1) as f64).sqrt(), n)
}

/// Per-lead RMSE of `forecasts` and of `baseline` (smart persistence on the
/// same samples) and the resulting forecast skill. Each lead is scored on
/// [`common_target_instants`]; leads left without samples are omitted.
pub fn evaluate_forecasts(
    samples: &[SequenceSample],
    forecasts: &[[f64; 5]],
    baseline: &[[f64; 5]],
) -> Result<ForecastReport> {
    if samples.len() != forecasts.len() || samples.len() != baseline.len() {
        return Err(Error::Shape(
            "samples, forecasts and baseline differ in length".into(),
        ));
    }
    let common = common_target_instants(samples);
    let mut leads = Vec::new();
    for k in 0..5 {
        let rows: Vec<usize> = (0..samples.len())
            .filter(|&i| common.contains(&samples[i].target_instant(k)))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let (r, n) = rmse(
            rows.iter()
                .map(|&i| forecasts[i][k] - samples[i].target_ghi[k]),
        );
        let (r_spm, _) = rmse(
            rows.iter()
                .map(|&i| baseline[i][k] - samples[i].target_ghi[k]),
        );
        leads.push(LeadScore {
            lead_min: LEADS_MIN[k],
            n,
            rmse: r,
            rmse_spm: r_spm,
            fs: (r_spm > 0.0).then(|| 1.0 - r / r_spm),
        });
    }
    Ok(ForecastReport { leads })
}
