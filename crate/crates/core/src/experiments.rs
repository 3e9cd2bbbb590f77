//! Ablation drivers on top of the pipeline: the training time-shift sweep,
//! timestamp-policy comparison and target-variable comparison, all with the
//! ridge reference estimator.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::alignment::{self, AlignedPair, Alignment, SkyFlags, TimestampPolicy};
use crate::clearsky::{ClearSkyModel, RenoThresholds, SkyCondition};
use crate::error::{Error, Result};
use crate::evaluation::{self, MetricSet};
use crate::imaging::{ImageStore, ManifestEntry};
use crate::irradiance::{IrradianceSeries, ProcessedView, Role, TimeShift};
use crate::modeling::{
    self, CrossStats, FeatureMatrix, FeatureSpec, GramStats, LinearModel, TargetKind,
};
use crate::par;
use crate::splits::{self, SplitSpec};
use crate::time;

/// Everything needed to turn images and a native irradiance series into
/// labelled pairs.
#[derive(Clone, Copy)]
pub struct Corpus<'a> {
    pub manifest: &'a [ManifestEntry],
    /// Measured series at its native resolution.
    pub native: &'a IrradianceSeries,
    pub store: &'a dyn ImageStore,
    pub clear_sky: &'a ClearSkyModel,
    pub reno: &'a RenoThresholds,
    pub max_zenith: f64,
}

impl Corpus<'_> {
    pub fn sky_flags(&self) -> Result<SkyFlags> {
        SkyFlags::detect(self.native, self.clear_sky, self.reno)
    }

    /// Aligns the manifest against the processed series (interpolated, then
    /// shifted by `shift` for training, then zenith filtered).
    pub fn label(
        &self,
        flags: &SkyFlags,
        policy: &TimestampPolicy,
        shift: TimeShift,
        role: Role,
    ) -> Result<Alignment> {
        let view = ProcessedView::new(self.native, shift, role, self.max_zenith)?;
        let flags = flags.shifted(shift.seconds());
        alignment::align(self.manifest, &view, &flags, policy, self.clear_sky)
    }

    pub fn utc_offset(&self) -> i64 {
        self.native.site.utc_offset
    }
}

/// Estimator settings shared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RidgeSetup {
    pub features: FeatureSpec,
    pub target: TargetKind,
    pub lambda: f64,
}

impl Default for RidgeSetup {
    fn default() -> Self {
        RidgeSetup {
            features: FeatureSpec::default(),
            target: TargetKind::KT,
            lambda: 1e-4,
        }
    }
}

/// Pixel features per image path, computed once.
pub struct PixelCache {
    spec: FeatureSpec,
    index: HashMap<String, usize>,
    pixels: FeatureMatrix,
}

impl PixelCache {
    pub fn build(paths: &[String], store: &dyn ImageStore, spec: &FeatureSpec) -> Result<Self> {
        spec.validate()?;
        let unique: Vec<String> = paths
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let rows = par::try_map(&unique, |p| spec.pixel_features(&store.load(p)?))?;
        let d = spec.dim() - usize::from(spec.include_cos_zenith);
        Ok(PixelCache {
            spec: *spec,
            index: unique
                .into_iter()
                .enumerate()
                .map(|(i, p)| (p, i))
                .collect(),
            pixels: FeatureMatrix::from_rows(d, rows)?,
        })
    }

    pub fn for_pairs(
        pairs: &[AlignedPair],
        store: &dyn ImageStore,
        spec: &FeatureSpec,
    ) -> Result<Self> {
        let paths: Vec<String> = pairs.iter().map(|p| p.image_ref.clone()).collect();
        PixelCache::build(&paths, store, spec)
    }

    pub fn features(&self, pairs: &[AlignedPair]) -> Result<FeatureMatrix> {
        let mut data = Vec::with_capacity(pairs.len() * self.spec.dim());
        for p in pairs {
            let &i = self
                .index
                .get(&p.image_ref)
                .ok_or_else(|| Error::Data(format!("no cached features for '{}'", p.image_ref)))?;
            data.extend(self.spec.assemble(self.pixels.row(i), &p.ctx));
        }
        Ok(FeatureMatrix {
            d: self.spec.dim(),
            data,
        })
    }
}

/// GHI-space predictions of `model` for pairs with precomputed features.
pub fn predict_ghi(
    model: &LinearModel,
    x: &FeatureMatrix,
    pairs: &[AlignedPair],
) -> Result<Vec<f64>> {
    (0..pairs.len())
        .map(|i| {
            modeling::from_target(
                model.predict_features(x.row(i)),
                &pairs[i].ctx,
                model.target,
            )
        })
        .collect()
}

/// Fits on `train` and scores `test`, split by the test pairs' sky flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutScore {
    pub n_train: usize,
    pub overall: MetricSet,
    pub clear: Option<MetricSet>,
    pub cloudy: Option<MetricSet>,
}

pub fn fit_and_score(
    cache: &PixelCache,
    train: &[AlignedPair],
    test: &[AlignedPair],
    setup: &RidgeSetup,
) -> Result<(LinearModel, HoldoutScore)> {
    let xtr = cache.features(train)?;
    let model = modeling::fit_ridge(&xtr, train, &setup.features, setup.target, setup.lambda)?;
    let xte = cache.features(test)?;
    let pred = predict_ghi(&model, &xte, test)?;
    let truth: Vec<f64> = test.iter().map(|p| p.label_ghi).collect();
    let subset = |c: SkyCondition| -> Result<Option<MetricSet>> {
        let (t, p): (Vec<f64>, Vec<f64>) = test
            .iter()
            .zip(&pred)
            .filter(|(q, _)| q.sky == c)
            .map(|(q, &p)| (q.label_ghi, p))
            .unzip();
        if t.is_empty() {
            Ok(None)
        } else {
            evaluation::metrics(&t, &p).map(Some)
        }
    };
    let score = HoldoutScore {
        n_train: train.len(),
        overall: evaluation::metrics(&truth, &pred)?,
        clear: subset(SkyCondition::Clear)?,
        cloudy: subset(SkyCondition::Cloudy)?,
    };
    Ok((model, score))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftScore {
    pub delta_t_s: i64,
    /// Cross-validated RMSE against the shifted training labels.
    pub cv_rmse: f64,
    /// RMSE on the never-shifted test set of a model fit on all training
    /// days with this shift.
    pub test_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSweep {
    pub scores: Vec<ShiftScore>,
    /// Shift with the lowest cross-validated RMSE.
    pub selected_s: i64,
    pub n_train: usize,
    pub n_test: usize,
}

impl ShiftSweep {
    pub fn score(&self, dt: i64) -> Option<&ShiftScore> {
        self.scores.iter().find(|s| s.delta_t_s == dt)
    }
}

/// Selects the training time shift by stratified-group K-fold CV.
///
/// For every candidate the training labels are shifted, the folds (fixed
/// from the unshifted labels) are scored against the shifted labels, and a
/// model fit on all training days is scored on the unshifted test set. All
/// candidates use the same training images: those labelled under every
/// shift.
pub fn delta_t_sweep(
    corpus: &Corpus,
    policy: &TimestampPolicy,
    split: &SplitSpec,
    setup: &RidgeSetup,
    candidates: &[i64],
) -> Result<ShiftSweep> {
    if candidates.is_empty() {
        return Err(Error::Config("no time-shift candidates".into()));
    }
    let shifts: Vec<TimeShift> = candidates
        .iter()
        .map(|&d| TimeShift::new(d))
        .collect::<Result<_>>()?;
    let flags = corpus.sky_flags()?;
    let base = corpus.label(&flags, policy, TimeShift::default(), Role::Test)?;
    let test = splits::split_train_test(&base.pairs, split)?.test;
    let test_years: BTreeSet<i32> = split.test_years.iter().copied().collect();
    let is_train = |p: &AlignedPair| !test_years.contains(&time::utc_year(p.instant));

    let mut labelled: Vec<HashMap<String, AlignedPair>> = Vec::with_capacity(shifts.len());
    for &s in &shifts {
        let a = corpus.label(&flags, policy, s, Role::Train)?;
        labelled.push(
            a.pairs
                .into_iter()
                .filter(|p| is_train(p))
                .map(|p| (p.image_ref.clone(), p))
                .collect(),
        );
    }
    // training images usable under every shift, in base order
    let common: Vec<&AlignedPair> = base
        .pairs
        .iter()
        .filter(|p| is_train(p) && labelled.iter().all(|m| m.contains_key(&p.image_ref)))
        .collect();
    if common.is_empty() {
        return Err(Error::InsufficientData(
            "no training image is labelled under every shift".into(),
        ));
    }
    let base_train: Vec<AlignedPair> = common.iter().map(|p| (*p).clone()).collect();
    let folds = splits::stratified_group_kfold(&base_train, split, corpus.utc_offset())?;
    let fold_rows = folds.partition(&base_train, corpus.utc_offset());

    let mut all_paths: Vec<AlignedPair> = base_train.clone();
    all_paths.extend(test.iter().cloned());
    let cache = PixelCache::for_pairs(&all_paths, corpus.store, &setup.features)?;
    // features and loss weights depend on the image instant only, not on
    // the label shift
    let x = cache.features(&base_train)?;
    let (_, weights) = modeling::targets_and_weights(&base_train, setup.target)?;
    let fold_gram: Vec<GramStats> = fold_rows
        .iter()
        .map(|r| GramStats::accumulate(&x, r, &weights))
        .collect();
    let mut total_gram = GramStats::zeros(x.d);
    fold_gram.iter().for_each(|g| total_gram.add(g));
    let x_test = cache.features(&test)?;
    let test_truth: Vec<f64> = test.iter().map(|p| p.label_ghi).collect();

    let mut scores = Vec::with_capacity(shifts.len());
    for (si, &shift) in shifts.iter().enumerate() {
        let train: Vec<AlignedPair> = base_train
            .iter()
            .map(|p| labelled[si][&p.image_ref].clone())
            .collect();
        let (y, _) = modeling::targets_and_weights(&train, setup.target)?;
        let fold_cross: Vec<CrossStats> = fold_rows
            .iter()
            .map(|r| CrossStats::accumulate(&x, r, &weights, &y))
            .collect();
        let mut total_cross = CrossStats {
            sy: 0.0,
            sxy: vec![0.0; x.d],
        };
        fold_cross.iter().for_each(|c| total_cross.add(c));

        let mut se = 0.0;
        let mut n = 0usize;
        for (f, rows) in fold_rows.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let mut g = total_gram.clone();
            g.sub(&fold_gram[f]);
            let mut c = total_cross.clone();
            c.sub(&fold_cross[f]);
            let (w, b) = modeling::solve_ridge(&g, &c, setup.lambda)?;
            let model = LinearModel {
                weights: w,
                intercept: b,
                feature_spec: setup.features,
                target: setup.target,
            };
            for &i in rows {
                let pred = modeling::from_target(
                    model.predict_features(x.row(i)),
                    &train[i].ctx,
                    setup.target,
                )?;
                se += (pred - train[i].label_ghi).powi(2);
                n += 1;
            }
        }
        let (w, b) = modeling::solve_ridge(&total_gram, &total_cross, setup.lambda)?;
        let model = LinearModel {
            weights: w,
            intercept: b,
            feature_spec: setup.features,
            target: setup.target,
        };
        let pred = predict_ghi(&model, &x_test, &test)?;
        scores.push(ShiftScore {
            delta_t_s: shift.seconds(),
            cv_rmse: (se / n.max(1) as f64).sqrt(),
            test_rmse: evaluation::metrics(&test_truth, &pred)?.rmse,
        });
    }
    let selected_s = scores
        .iter()
        .min_by(|a, b| a.cv_rmse.total_cmp(&b.cv_rmse))
        .map(|s| s.delta_t_s)
        .expect("non-empty");
    Ok(ShiftSweep {
        scores,
        selected_s,
        n_train: base_train.len(),
        n_test: test.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScore {
    pub policy: TimestampPolicy,
    pub score: HoldoutScore,
    pub dropped: usize,
}

/// Labels, trains and tests once per timestamp policy.
pub fn policy_comparison(
    corpus: &Corpus,
    policies: &[TimestampPolicy],
    split: &SplitSpec,
    setup: &RidgeSetup,
) -> Result<Vec<PolicyScore>> {
    let flags = corpus.sky_flags()?;
    let cache = PixelCache::build(
        &corpus
            .manifest
            .iter()
            .map(|e| e.path.clone())
            .collect::<Vec<_>>(),
        corpus.store,
        &setup.features,
    )?;
    policies
        .iter()
        .map(|policy| {
            let a = corpus.label(&flags, policy, TimeShift::default(), Role::Test)?;
            let s = splits::split_train_test(&a.pairs, split)?;
            let (_, score) = fit_and_score(&cache, &s.train, &s.test, setup)?;
            Ok(PolicyScore {
                policy: *policy,
                score,
                dropped: a.dropped.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScore {
    pub target: TargetKind,
    pub score: HoldoutScore,
}

/// One ridge fit per target kind on identical train/test pairs.
pub fn target_ablation(
    corpus: &Corpus,
    policy: &TimestampPolicy,
    split: &SplitSpec,
    setup: &RidgeSetup,
    targets: &[TargetKind],
) -> Result<Vec<TargetScore>> {
    let flags = corpus.sky_flags()?;
    let a = corpus.label(&flags, policy, TimeShift::default(), Role::Test)?;
    // every target must be defined on every pair
    let pairs: Vec<AlignedPair> = a.pairs.into_iter().filter(|p| p.ctx.i_clr > 0.0).collect();
    let s = splits::split_train_test(&pairs, split)?;
    let cache = PixelCache::for_pairs(&pairs, corpus.store, &setup.features)?;
    targets
        .iter()
        .map(|&target| {
            let setup = RidgeSetup { target, ..*setup };
            let (_, score) = fit_and_score(&cache, &s.train, &s.test, &setup)?;
            Ok(TargetScore { target, score })
        })
        .collect()
}
