//! Target transforms, losses, training-schedule utilities and linear
//! reference estimators behind a pluggable [`Estimator`] interface.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::AlignedPair;
use crate::clearsky::ClearSkyContext;
use crate::error::{Error, Result};
use crate::geometry::SolarConstant;
use crate::imaging::{self, ImageStore, Raster};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetVariable {
    Ghi,
    /// `kt = I / I_clr`
    ClearSkyIndex,
    /// `Kt = I / I_extr`
    ClearnessIndex,
}

/// Regression target and whether the loss is rescaled back to GHI space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetKind {
    pub kind: TargetVariable,
    #[serde(default)]
    pub weighted: bool,
}

impl TargetKind {
    pub fn new(kind: TargetVariable, weighted: bool) -> Result<Self> {
        let t = TargetKind { kind, weighted };
        t.validate()?;
        Ok(t)
    }

    pub const GHI: TargetKind = TargetKind {
        kind: TargetVariable::Ghi,
        weighted: false,
    };
    pub const KT: TargetKind = TargetKind {
        kind: TargetVariable::ClearSkyIndex,
        weighted: false,
    };
    pub const KT_WEIGHTED: TargetKind = TargetKind {
        kind: TargetVariable::ClearSkyIndex,
        weighted: true,
    };
    pub const KT_CLEARNESS: TargetKind = TargetKind {
        kind: TargetVariable::ClearnessIndex,
        weighted: false,
    };
    pub const KT_CLEARNESS_WEIGHTED: TargetKind = TargetKind {
        kind: TargetVariable::ClearnessIndex,
        weighted: true,
    };

    /// The five target/loss combinations.
    pub const ALL: [TargetKind; 5] = [
        TargetKind::GHI,
        TargetKind::KT,
        TargetKind::KT_WEIGHTED,
        TargetKind::KT_CLEARNESS,
        TargetKind::KT_CLEARNESS_WEIGHTED,
    ];

    pub fn validate(&self) -> Result<()> {
        if self.weighted && self.kind == TargetVariable::Ghi {
            return Err(Error::Config(
                "a weighted loss needs a normalised target (kt or Kt)".into(),
            ));
        }
        Ok(())
    }
}

impl Default for TargetKind {
    fn default() -> Self {
        TargetKind::KT
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.kind {
            TargetVariable::Ghi => "ghi",
            TargetVariable::ClearSkyIndex => "kt",
            TargetVariable::ClearnessIndex => "Kt",
        };
        if self.weighted {
            write!(f, "{base}_weighted")
        } else {
            f.write_str(base)
        }
    }
}

/// Factor mapping the target back to W/m² (`I = normaliser * y`).
pub fn normaliser(ctx: &ClearSkyContext, kind: TargetKind) -> Result<f64> {
    let n = match kind.kind {
        TargetVariable::Ghi => return Ok(1.0),
        TargetVariable::ClearSkyIndex => ctx.i_clr,
        TargetVariable::ClearnessIndex => ctx.i_extr,
    };
    if n > 0.0 {
        Ok(n)
    } else {
        Err(Error::UndefinedIndex { normaliser: n })
    }
}

pub fn to_target(ghi: f64, ctx: &ClearSkyContext, kind: TargetKind) -> Result<f64> {
    Ok(ghi / normaliser(ctx, kind)?)
}

pub fn from_target(y: f64, ctx: &ClearSkyContext, kind: TargetKind) -> Result<f64> {
    Ok(y * normaliser(ctx, kind)?)
}

/// Mean squared error in target space, or, for weighted kinds, of
/// `normaliser * (y - yhat)`, which is the GHI-space MSE.
pub fn loss(y: &[f64], yhat: &[f64], ctx: &[ClearSkyContext], kind: TargetKind) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    if y.len() != yhat.len() || y.len() != ctx.len() {
        return Err(Error::Shape("batch arrays differ in length".into()));
    }
    let mut sum = 0.0;
    for ((a, b), c) in y.iter().zip(yhat).zip(ctx) {
        let w = if kind.weighted {
            normaliser(c, kind)?
        } else {
            1.0
        };
        sum += (w * (a - b)).powi(2);
    }
    Ok(sum / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSchedule {
    pub lr0: f64,
    pub n_epochs: usize,
    pub batch: usize,
}

impl TrainingSchedule {
    pub fn new(lr0: f64, n_epochs: usize, batch: usize) -> Result<Self> {
        let s = TrainingSchedule {
            lr0,
            n_epochs,
            batch,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if self.n_epochs < 4 {
            return Err(Error::Config(format!(
                "n_epochs must be >= 4, got {}",
                self.n_epochs
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        Ok(())
    }

    /// First epoch run at the floor rate; weight snapshots are averaged
    /// from here on.
    pub fn averaging_start(&self) -> usize {
        (0.75 * self.n_epochs as f64).ceil() as usize
    }
}

/// Per-epoch exponential decay to `lr0 / 10` over the first 75% of
/// training, constant afterwards.
pub fn lr_at(schedule: &TrainingSchedule, epoch: usize) -> f64 {
    let span = 0.75 * schedule.n_epochs as f64;
    let decayed = schedule.lr0 * (0.1f64.ln() * epoch as f64 / span).exp();
    decayed.max(schedule.lr0 / 10.0)
}

/// Elementwise mean of equally sized parameter vectors.
pub fn average_weights(snapshots: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = snapshots
        .first()
        .ok_or_else(|| Error::InsufficientData("no snapshots to average".into()))?;
    if let Some(bad) = snapshots.iter().find(|s| s.len() != first.len()) {
        return Err(Error::Shape(format!(
            "snapshot of length {} vs {}",
            bad.len(),
            first.len()
        )));
    }
    let n = snapshots.len() as f64;
    Ok((0..first.len())
        .map(|i| snapshots.iter().map(|s| s[i]).sum::<f64>() / n)
        .collect())
}

/// Image features: area-pooled channels scaled to [0, 1], optionally the
/// sun-mask channel, optionally `cos(zenith)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSpec {
    /// Frames are resized to `input_width` before pooling.
    pub input_width: usize,
    /// Side of the pooled grid.
    pub pool: usize,
    pub include_mask: bool,
    pub include_cos_zenith: bool,
    pub solar_constant: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            input_width: 64,
            pool: 8,
            include_mask: false,
            include_cos_zenith: true,
            solar_constant: SolarConstant::DEFAULT.value(),
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pool == 0 || self.input_width == 0 || self.pool > self.input_width {
            return Err(Error::Config(format!(
                "pool {} must be in 1..={}",
                self.pool, self.input_width
            )));
        }
        SolarConstant::new(self.solar_constant)?;
        Ok(())
    }

    pub fn channels(&self) -> usize {
        if self.include_mask {
            4
        } else {
            3
        }
    }

    pub fn dim(&self) -> usize {
        self.pool * self.pool * self.channels() + usize::from(self.include_cos_zenith)
    }

    pub fn extract(&self, frame: &Raster, ctx: &ClearSkyContext) -> Result<Vec<f64>> {
        Ok(self.assemble(&self.pixel_features(frame)?, ctx))
    }

    /// The image part of the features, independent of the label instant.
    pub fn pixel_features(&self, frame: &Raster) -> Result<Vec<f64>> {
        let c = self.channels();
        if frame.channels() < c {
            return Err(Error::Shape(format!(
                "features need {c} channels, frame has {}",
                frame.channels()
            )));
        }
        let resized;
        let frame = if frame.width() != self.input_width || frame.height() != self.input_width {
            resized = imaging::resize_area(frame, self.input_width, self.input_width);
            &resized
        } else {
            frame
        };
        let pooled = imaging::area_average(frame, self.pool, self.pool);
        let fc = frame.channels();
        let mut out = Vec::with_capacity(self.dim());
        for px in pooled.chunks_exact(fc) {
            out.extend(px[..c].iter().map(|v| v / 255.0));
        }
        Ok(out)
    }

    /// Full feature vector from cached pixel features.
    pub fn assemble(&self, pixels: &[f64], ctx: &ClearSkyContext) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(pixels);
        if self.include_cos_zenith {
            out.push(ctx.i_extr / self.solar_constant);
        }
        out
    }
}

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub d: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(d: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::Shape(format!(
                    "row of length {} in a {d}-column matrix",
                    r.len()
                )));
            }
            data.extend(r);
        }
        Ok(FeatureMatrix { d, data })
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.d).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

/// Features of every pair, loading frames from `store` in parallel.
pub fn build_features(
    pairs: &[AlignedPair],
    store: &dyn ImageStore,
    spec: &FeatureSpec,
) -> Result<FeatureMatrix> {
    spec.validate()?;
    let rows = par::try_map(pairs, |p| {
        let frame = store.load(&p.image_ref)?;
        spec.extract(&frame, &p.ctx)
    })?;
    FeatureMatrix::from_rows(spec.dim(), rows)
}

/// Targets and per-sample loss weights (`normaliser²` for weighted kinds,
/// else 1).
pub fn targets_and_weights(
    pairs: &[AlignedPair],
    kind: TargetKind,
) -> Result<(Vec<f64>, Vec<f64>)> {
    kind.validate()?;
    let mut y = Vec::with_capacity(pairs.len());
    let mut w = Vec::with_capacity(pairs.len());
    for p in pairs {
        y.push(to_target(p.label_ghi, &p.ctx, kind)?);
        w.push(if kind.weighted {
            normaliser(&p.ctx, kind)?.powi(2)
        } else {
            1.0
        });
    }
    Ok((y, w))
}

const GRAM_CHUNK: usize = 256;

/// Weighted first and second moments of a set of feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GramStats {
    pub d: usize,
    pub count: f64,
    pub weight: f64,
    pub sx: Vec<f64>,
    /// Upper triangle is authoritative; stored full.
    pub sxx: Vec<f64>,
}

impl GramStats {
    pub fn zeros(d: usize) -> Self {
        GramStats {
            d,
            count: 0.0,
            weight: 0.0,
            sx: vec![0.0; d],
            sxx: vec![0.0; d * d],
        }
    }

    pub fn accumulate(x: &FeatureMatrix, rows: &[usize], weights: &[f64]) -> Self {
        let d = x.d;
        par::chunked_reduce(
            rows,
            GRAM_CHUNK,
            |chunk| {
                let mut g = GramStats::zeros(d);
                for &i in chunk {
                    let r = x.row(i);
                    let s = weights[i];
                    g.count += 1.0;
                    g.weight += s;
                    for a in 0..d {
                        let sa = s * r[a];
                        g.sx[a] += sa;
                        let row = &mut g.sxx[a * d..(a + 1) * d];
                        for b in a..d {
                            row[b] += sa * r[b];
                        }
                    }
                }
                g
            },
            |mut a, b| {
                a.add(&b);
                a
            },
        )
        .unwrap_or_else(|| GramStats::zeros(d))
    }

    pub fn add(&mut self, o: &GramStats) {
        self.count += o.count;
        self.weight += o.weight;
        self.sx.iter_mut().zip(&o.sx).for_each(|(a, b)| *a += b);
        self.sxx.iter_mut().zip(&o.sxx).for_each(|(a, b)| *a += b);
    }

    pub fn sub(&mut self, o: &GramStats) {
        self.count -= o.count;
        self.weight -= o.weight;
        self.sx.iter_mut().zip(&o.sx).for_each(|(a, b)| *a -= b);
        self.sxx.iter_mut().zip(&o.sxx).for_each(|(a, b)| *a -= b);
    }
}

/// Weighted target moments matching a [`GramStats`].
#[derive(Debug, Clone, PartialEq)]
pub struct CrossStats {
    pub sy: f64,
    pub sxy: Vec<f64>,
}

impl CrossStats {
    pub fn accumulate(x: &FeatureMatrix, rows: &[usize], weights: &[f64], y: &[f64]) -> Self {
        let d = x.d;
        let zero = || CrossStats {
            sy: 0.0,
            sxy: vec![0.0; d],
        };
        par::chunked_reduce(
            rows,
            GRAM_CHUNK,
            |chunk| {
                let mut c = zero();
                for &i in chunk {
                    let sy = weights[i] * y[i];
                    c.sy += sy;
                    for (acc, v) in c.sxy.iter_mut().zip(x.row(i)) {
                        *acc += sy * v;
                    }
                }
                c
            },
            |mut a, b| {
                a.add(&b);
                a
            },
        )
        .unwrap_or_else(zero)
    }

    pub fn add(&mut self, o: &CrossStats) {
        self.sy += o.sy;
        self.sxy.iter_mut().zip(&o.sxy).for_each(|(a, b)| *a += b);
    }

    pub fn sub(&mut self, o: &CrossStats) {
        self.sy -= o.sy;
        self.sxy.iter_mut().zip(&o.sxy).for_each(|(a, b)| *a -= b);
    }
}

/// Minimises `(1/N) Σ s_i (y_i - w·x_i - b)² + λ‖w‖²` with the intercept
/// unpenalised. Returns `(w, b)`.
pub fn solve_ridge(g: &GramStats, c: &CrossStats, lambda: f64) -> Result<(Vec<f64>, f64)> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if g.count < 1.0 || g.weight <= 0.0 {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    let d = g.d;
    let mean_x: Vec<f64> = g.sx.iter().map(|v| v / g.weight).collect();
    let mean_y = c.sy / g.weight;
    let a = DMatrix::from_fn(d, d, |i, j| {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let centered = g.sxx[lo * d + hi] - g.sx[lo] * mean_x[hi];
        centered / g.count + if i == j { lambda } else { 0.0 }
    });
    let rhs = DVector::from_fn(d, |i, _| (c.sxy[i] - g.sx[i] * mean_y) / g.count);
    let singular = || {
        Error::Numerical(format!(
            "normal matrix is singular at lambda = {lambda}; use lambda > 0"
        ))
    };
    let max_diag = (0..d).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
    let chol = a.cholesky().ok_or_else(singular)?;
    let l = chol.l_dirty();
    let min_pivot = (0..d)
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if d > 0 && !(min_pivot > 1e-11 * max_diag.max(f64::MIN_POSITIVE)) {
        return Err(singular());
    }
    let w = chol.solve(&rhs);
    let b = mean_y - w.iter().zip(&mean_x).map(|(a, b)| a * b).sum::<f64>();
    Ok((w.iter().copied().collect(), b))
}

/// Fitted linear map from features to the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub feature_spec: FeatureSpec,
    pub target: TargetKind,
}

impl LinearModel {
    pub fn predict_features(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: LinearModel = serde_json::from_str(s)?;
        m.feature_spec.validate()?;
        m.target.validate()?;
        if m.weights.len() != m.feature_spec.dim() {
            return Err(Error::Shape(format!(
                "{} weights for {} features",
                m.weights.len(),
                m.feature_spec.dim()
            )));
        }
        Ok(m)
    }
}

/// Closed-form ridge on precomputed features of `pairs`.
pub fn fit_ridge(
    features: &FeatureMatrix,
    pairs: &[AlignedPair],
    spec: &FeatureSpec,
    kind: TargetKind,
    lambda: f64,
) -> Result<LinearModel> {
    if features.rows() != pairs.len() || features.d != spec.dim() {
        return Err(Error::Shape(
            "feature matrix does not match pairs / spec".into(),
        ));
    }
    let (y, s) = targets_and_weights(pairs, kind)?;
    let rows: Vec<usize> = (0..pairs.len()).collect();
    let g = GramStats::accumulate(features, &rows, &s);
    let c = CrossStats::accumulate(features, &rows, &s, &y);
    let (weights, intercept) = solve_ridge(&g, &c, lambda)?;
    Ok(LinearModel {
        weights,
        intercept,
        feature_spec: *spec,
        target: kind,
    })
}

/// Minibatch SGD on the ridge objective with the per-epoch decaying rate and
/// averaging of end-of-epoch snapshots from [`TrainingSchedule::averaging_start`].
pub fn fit_sgd(
    x: &FeatureMatrix,
    y: &[f64],
    s: &[f64],
    lambda: f64,
    schedule: &TrainingSchedule,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    schedule.validate()?;
    let n = x.rows();
    if n == 0 || y.len() != n || s.len() != n {
        return Err(Error::Shape(
            "SGD inputs differ in length or are empty".into(),
        ));
    }
    let d = x.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    // parameters: weights then intercept
    let mut theta = vec![0.0; d + 1];
    let mut grad = vec![0.0; d + 1];
    let mut snapshots = Vec::new();
    for epoch in 0..schedule.n_epochs {
        let lr = lr_at(schedule, epoch);
        order.shuffle(&mut rng);
        for batch in order.chunks(schedule.batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let r = x.row(i);
                let pred = theta[d] + theta[..d].iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
                let e = 2.0 * s[i] * (pred - y[i]);
                for (g, v) in grad[..d].iter_mut().zip(r) {
                    *g += e * v;
                }
                grad[d] += e;
            }
            let m = batch.len() as f64;
            for j in 0..d {
                theta[j] -= lr * (grad[j] / m + 2.0 * lambda * theta[j]);
            }
            theta[d] -= lr * grad[d] / m;
        }
        if epoch >= schedule.averaging_start() {
            snapshots.push(theta.clone());
        }
    }
    if snapshots.is_empty() {
        snapshots.push(theta);
    }
    let mut avg = average_weights(&snapshots)?;
    let b = avg.pop().expect("intercept");
    if avg.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Numerical("SGD diverged; lower lr0".into()));
    }
    Ok((avg, b))
}

/// SGD counterpart of [`fit_ridge`].
pub fn fit_linear_sgd(
    features: &FeatureMatrix,
    pairs: &[AlignedPair],
    spec: &FeatureSpec,
    kind: TargetKind,
    lambda: f64,
    schedule: &TrainingSchedule,
    seed: u64,
) -> Result<LinearModel> {
    if features.rows() != pairs.len() || features.d != spec.dim() {
        return Err(Error::Shape(
            "feature matrix does not match pairs / spec".into(),
        ));
    }
    let (y, s) = targets_and_weights(pairs, kind)?;
    let (weights, intercept) = fit_sgd(features, &y, &s, lambda, schedule, seed)?;
    Ok(LinearModel {
        weights,
        intercept,
        feature_spec: *spec,
        target: kind,
    })
}

/// Estimates the concurrent GHI from one frame.
///
/// `key` identifies the frame (the manifest path, or a synthetic key for
/// predicted frames); implementations backed by precomputed outputs use it,
/// pixel-based ones ignore it.
pub trait Estimator: Send + Sync {
    fn target(&self) -> TargetKind;

    /// Frame side expected by [`Estimator::predict_target`], if fixed.
    fn input_width(&self) -> Option<usize>;

    fn predict_target(&self, key: &str, frame: &Raster, ctx: &ClearSkyContext) -> Result<f64>;

    fn estimate(&self, key: &str, frame: &Raster, ctx: &ClearSkyContext) -> Result<f64> {
        from_target(self.predict_target(key, frame, ctx)?, ctx, self.target())
    }
}

impl Estimator for LinearModel {
    fn target(&self) -> TargetKind {
        self.target
    }

    fn input_width(&self) -> Option<usize> {
        Some(self.feature_spec.input_width)
    }

    fn predict_target(&self, _key: &str, frame: &Raster, ctx: &ClearSkyContext) -> Result<f64> {
        Ok(self.predict_features(&self.feature_spec.extract(frame, ctx)?))
    }
}

/// Target-space predictions produced outside this crate, keyed by frame key.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalEstimator {
    pub target: TargetKind,
    pub predictions: HashMap<String, f64>,
}

impl ExternalEstimator {
    /// CSV with columns `key, prediction`.
    pub fn read_csv<R: Read>(reader: R, target: TargetKind) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            key: String,
            prediction: f64,
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut predictions = HashMap::new();
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            predictions.insert(row.key, row.prediction);
        }
        Ok(ExternalEstimator {
            target,
            predictions,
        })
    }
}

impl Estimator for ExternalEstimator {
    fn target(&self) -> TargetKind {
        self.target
    }

    fn input_width(&self) -> Option<usize> {
        None
    }

    fn predict_target(&self, key: &str, _frame: &Raster, _ctx: &ClearSkyContext) -> Result<f64> {
        self.predictions
            .get(key)
            .copied()
            .ok_or_else(|| Error::Data(format!("no external prediction for '{key}'")))
    }
}

/// Optimiser settings consumed only by external (deep) estimators; kept so
/// their configs validate against a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalTrainingConfig {
    pub optimizer: String,
    pub dropout: f64,
    pub schedule: TrainingSchedule,
}

impl ExternalTrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        self.schedule.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(i_clr: f64, i_extr: f64) -> ClearSkyContext {
        ClearSkyContext { i_clr, i_extr }
    }

    #[test]
    fn target_examples() {
        let c = ctx(900.0, 1000.0);
        assert_eq!(to_target(450.0, &c, TargetKind::GHI).unwrap(), 450.0);
        assert_eq!(to_target(450.0, &c, TargetKind::KT).unwrap(), 0.5);
        assert_eq!(
            to_target(450.0, &c, TargetKind::KT_CLEARNESS).unwrap(),
            0.45
        );
        assert_eq!(from_target(0.5, &c, TargetKind::KT).unwrap(), 450.0);
        assert!(matches!(
            to_target(1.0, &ctx(0.0, 10.0), TargetKind::KT),
            Err(Error::UndefinedIndex { .. })
        ));
        assert!(TargetKind::new(TargetVariable::Ghi, true).is_err());
    }

    #[test]
    fn loss_examples() {
        let c = [ctx(1000.0, 1200.0)];
        assert_eq!(
            loss(&[1.0], &[1.0], &c, TargetKind::KT_WEIGHTED).unwrap(),
            0.0
        );
        let l = loss(&[1.0], &[0.9], &c, TargetKind::KT_WEIGHTED).unwrap();
        assert!((l - 1e4).abs() < 1e-6);
        assert!(loss(&[], &[], &[], TargetKind::KT).is_err());
    }

    #[test]
    fn lr_schedule() {
        let s = TrainingSchedule::new(1e-3, 16, 32).unwrap();
        assert_eq!(lr_at(&s, 0), 1e-3);
        assert!((lr_at(&s, 12) / 1e-4 - 1.0).abs() < 1e-12);
        let oracle = 1e-3 * (0.1f64.ln() / 12.0).exp();
        assert!((lr_at(&s, 1) - oracle).abs() < 1e-15);
        assert!((lr_at(&s, 1) - 8.254e-4).abs() < 1e-7);
        assert_eq!(s.averaging_start(), 12);
        assert!(TrainingSchedule::new(1e-3, 3, 1).is_err());
        assert!(TrainingSchedule::new(0.0, 8, 1).is_err());
    }

    #[test]
    fn averaging() {
        let v = vec![1.0, -2.0, 3.5];
        assert_eq!(average_weights(std::slice::from_ref(&v)).unwrap(), v);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(average_weights(&[v.clone(), neg]).unwrap(), vec![0.0; 3]);
        assert!(matches!(
            average_weights(&[v, vec![1.0]]),
            Err(Error::Shape(_))
        ));
    }

    fn linear_problem(n: usize, noise: bool) -> (FeatureMatrix, Vec<f64>, [f64; 3], f64) {
        let w = [1.5, -2.0, 0.25];
        let b = 0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y = rows
            .iter()
            .map(|r| {
                b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>()
                    + if noise { rng.gen_range(-0.1..0.1) } else { 0.0 }
            })
            .collect();
        (FeatureMatrix::from_rows(3, rows).unwrap(), y, w, b)
    }

    fn ridge(x: &FeatureMatrix, y: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
        let rows: Vec<usize> = (0..x.rows()).collect();
        let s = vec![1.0; x.rows()];
        solve_ridge(
            &GramStats::accumulate(x, &rows, &s),
            &CrossStats::accumulate(x, &rows, &s, y),
            lambda,
        )
    }

    #[test]
    fn ridge_recovers_exact_weights() {
        let (x, y, w, b) = linear_problem(500, false);
        let (fw, fb) = ridge(&x, &y, 0.0).unwrap();
        for (a, c) in fw.iter().zip(&w) {
            assert!((a - c).abs() < 1e-6);
        }
        assert!((fb - b).abs() < 1e-6);
    }

    #[test]
    fn ridge_large_lambda_gives_mean() {
        let (x, y, _, _) = linear_problem(300, true);
        let (fw, fb) = ridge(&x, &y, 1e12).unwrap();
        assert!(fw.iter().all(|v| v.abs() < 1e-9));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((fb - mean).abs() < 1e-6);
    }

    #[test]
    fn ridge_singular_without_lambda() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![i as f64 * 0.1, i as f64 * 0.2])
            .collect();
        let x = FeatureMatrix::from_rows(2, rows).unwrap();
        let y: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert!(matches!(ridge(&x, &y, 0.0), Err(Error::Numerical(_))));
        assert!(ridge(&x, &y, 1e-3).is_ok());
    }

    #[test]
    fn sgd_matches_closed_form() {
        let (x, y, _, _) = linear_problem(2000, true);
        let lambda = 0.01;
        let (rw, rb) = ridge(&x, &y, lambda).unwrap();
        let s = vec![1.0; x.rows()];
        let sched = TrainingSchedule::new(0.05, 80, 16).unwrap();
        let (gw, gb) = fit_sgd(&x, &y, &s, lambda, &sched, 11).unwrap();
        for (a, c) in gw.iter().zip(&rw) {
            assert!((a - c).abs() < 1e-3, "{a} vs {c}");
        }
        assert!((gb - rb).abs() < 1e-3);
    }

    #[test]
    fn features_shape() {
        let spec = FeatureSpec::default();
        let frame = Raster::filled(64, 64, 3, 255);
        let f = spec.extract(&frame, &ctx(500.0, 683.0)).unwrap();
        assert_eq!(f.len(), spec.dim());
        assert!(f[..192].iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!((f[192] - 0.5).abs() < 1e-12);
        let masked = FeatureSpec {
            include_mask: true,
            ..spec
        };
        assert!(matches!(
            masked.extract(&frame, &ctx(1.0, 1.0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let spec = FeatureSpec {
            pool: 2,
            ..Default::default()
        };
        let m = LinearModel {
            weights: (0..spec.dim()).map(|i| i as f64 * 0.5).collect(),
            intercept: 0.25,
            feature_spec: spec,
            target: TargetKind::KT_WEIGHTED,
        };
        assert_eq!(LinearModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
