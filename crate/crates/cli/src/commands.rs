use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use chrono::NaiveDate;
use clap::Args;
use serde::Serialize;
use sha2::{Digest, Sha256};

use skynow::alignment::{self, AlignedPair, DriftReport, DropReason, TimestampSource};
use skynow::config::SiteConfig;
use skynow::evaluation::{self, Scored};
use skynow::experiments::{self, Corpus, PixelCache, ShiftSweep};
use skynow::imaging::{self, CameraModel, DirStore, ImageStore, ManifestEntry, TENSOR_EXTENSION};
use skynow::irradiance::{self, FusionMode, IrradianceSeries, Role, TimeShift};
use skynow::modeling::{Estimator, LinearModel, TargetKind};
use skynow::nowcast::{
    self, ExternalPredictor, FrozenPersistence, GroundTruthPassthrough, SequenceOptions,
    VideoPredictor,
};
use skynow::splits::{self, SplitSummary, TrainTest};
use skynow::synth::{self, Averaging, CloudModel, DriftSchedule, SyntheticScenario};
use skynow::{geometry, par, time, Error, Result};

use crate::workspace::{open_input, write_if_changed, Workspace};
use crate::Context;

const MANIFEST: &str = "manifest.csv";
const FRAMES_MANIFEST: &str = "frames_manifest.csv";
const FRAMES: &str = "frames";
const REJECTS: &str = "rejects.csv";
const PROCESS_REJECTS: &str = "process_rejects.csv";
const SERIES: &str = "series.csv";
const INGEST_HASH: &str = "ingest.sha256";
const PAIRS: &str = "pairs.csv";
const PAIRS_SHIFTED: &str = "pairs_shifted.csv";
const ALIGNMENT: &str = "alignment.json";
const TRAIN: &str = "train.csv";
const TEST: &str = "test.csv";
const FOLDS: &str = "folds.csv";
const SPLIT_SUMMARY: &str = "split_summary.json";
const MODEL: &str = "model.json";
const SWEEP: &str = "sweep.json";
const EVALUATION_CSV: &str = "evaluation.csv";
const EVALUATION_JSON: &str = "evaluation.json";
const FORECAST_CSV: &str = "forecast.csv";
const FORECAST_JSON: &str = "forecast.json";
const TRUTH: &str = "truth.csv";
const SCENARIO: &str = "scenario.json";

/// Prints the step's inputs and outputs under `--dry-run`; returns whether
/// the step should stop there.
fn plan(ctx: &Context, step: &str, reads: &[PathBuf], writes: &[&str]) -> bool {
    if !ctx.dry_run {
        return false;
    }
    println!("{step} (site {}, seed {})", ctx.site, ctx.seed);
    for r in reads {
        println!("  read  {}", r.display());
    }
    for w in writes {
        println!("  write {}", ctx.out.join(w).display());
    }
    true
}

fn site(ctx: &Context) -> Result<&SiteConfig> {
    ctx.config.site(&ctx.site)
}

fn frames_root(ctx: &Context, frames: &Option<PathBuf>) -> PathBuf {
    frames.clone().unwrap_or_else(|| ctx.out.join(FRAMES))
}

fn read_pairs(ctx: &Context, name: &str, producer: &str) -> Result<Vec<AlignedPair>> {
    alignment::read_pairs_csv(open_input(&ctx.out.join(name), producer)?)
}

fn read_series(ctx: &Context, site: &SiteConfig) -> Result<IrradianceSeries> {
    irradiance::read_series_csv(
        open_input(&ctx.out.join(SERIES), "ingest")?,
        &site.site,
        site.native_interval_s,
    )
}

/// Processed frames when present, the raw index otherwise.
fn manifest_path(ctx: &Context) -> PathBuf {
    let processed = ctx.out.join(FRAMES_MANIFEST);
    if processed.exists() {
        processed
    } else {
        ctx.out.join(MANIFEST)
    }
}

fn read_manifest(ctx: &Context) -> Result<Vec<ManifestEntry>> {
    imaging::read_manifest(open_input(&manifest_path(ctx), "ingest")?)
}

fn open_user(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn write_rejects(w: &mut Vec<u8>, rejects: &[(String, String)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["path", "reason"])?;
    for (p, r) in rejects {
        wtr.write_record([p, r])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Directory searched recursively for .jpg, .jpeg, .png and .skt images.
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    /// Sensor readings CSV (timestamp_utc, ghi, dhi, dni[, sensor_id]).
    #[arg(long, value_name = "FILE")]
    pub readings: Option<PathBuf>,
    /// Fuse redundant sensors with the median consistency check.
    #[arg(long)]
    pub median_fusion: bool,
}

const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", TENSOR_EXTENSION];

/// Image paths under `root`, relative and `/`-separated, sorted.
fn list_images(root: &Path) -> Result<Vec<String>> {
    let meta = fs::metadata(root).map_err(|e| Error::Data(format!("{}: {e}", root.display())))?;
    if !meta.is_dir() {
        return Err(Error::Data(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let path = entry.path();
            if entry.file_name().to_string_lossy().starts_with('.') {
                continue;
            }
            if entry.file_type()?.is_dir() {
                stack.push(path);
                continue;
            }
            let ext = path
                .extension()
                .map(|e| e.to_string_lossy().to_ascii_lowercase());
            if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
                let rel = path.strip_prefix(root).expect("walk stays under root");
                let parts: Vec<String> = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect();
                out.push(parts.join("/"));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn modified_secs(path: &Path) -> Option<i64> {
    let m = fs::metadata(path).ok()?.modified().ok()?;
    Some(m.duration_since(UNIX_EPOCH).ok()?.as_secs() as i64)
}

/// Hash of everything ingest reads: settings, and per file its path,
/// modification time and content.
fn ingest_digest(ctx: &Context, a: &IngestArgs, files: &[String]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(format!(
        "site={}\nmedian_fusion={}\n",
        ctx.site, a.median_fusion
    ));
    h.update(format!("tol={}\n", ctx.config.irradiance.consistency_tol));
    h.update(format!("interval={}\n", site(ctx)?.native_interval_s));
    if let Some(root) = &a.images {
        let per_file = par::try_map(files, |rel| -> Result<Vec<u8>> {
            let full = root.join(rel);
            let mut fh = Sha256::new();
            fh.update(rel.as_bytes());
            fh.update(modified_secs(&full).unwrap_or(-1).to_le_bytes());
            fh.update(fs::read(&full)?);
            Ok(fh.finalize().to_vec())
        })?;
        for d in per_file {
            h.update(d);
        }
    }
    if let Some(r) = &a.readings {
        h.update(b"readings\n");
        h.update(fs::read(r).map_err(|e| Error::Data(format!("{}: {e}", r.display())))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Decodes every image; undecodable ones are returned as rejects.
fn index_images(
    root: &Path,
    files: &[String],
    site: &str,
) -> (Vec<ManifestEntry>, Vec<(String, String)>) {
    let store = DirStore::new(root);
    let results = par::map(files, |rel| match store.load(rel) {
        Ok(_) => {
            let name = Path::new(rel)
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let exposure = if name.to_ascii_lowercase().contains("short") {
                imaging::Exposure::Short
            } else {
                imaging::Exposure::Long
            };
            Ok(ManifestEntry {
                path: rel.clone(),
                ts_file_name: time::parse_filename_stamp(&name),
                ts_date_modified: modified_secs(&root.join(rel)),
                exposure,
                site: site.to_string(),
            })
        }
        Err(e) => Err((rel.clone(), e.to_string())),
    });
    let mut manifest = Vec::new();
    let mut rejects = Vec::new();
    for r in results {
        match r {
            Ok(m) => manifest.push(m),
            Err(x) => rejects.push(x),
        }
    }
    (manifest, rejects)
}

pub fn ingest(ctx: &Context, a: &IngestArgs) -> Result<()> {
    if a.images.is_none() && a.readings.is_none() {
        return Err(Error::Config(
            "ingest needs --images, --readings or both".into(),
        ));
    }
    let site = site(ctx)?;
    let mut writes = Vec::new();
    if a.images.is_some() {
        writes.extend([MANIFEST, REJECTS]);
    }
    if a.readings.is_some() {
        writes.push(SERIES);
    }
    writes.push(INGEST_HASH);
    let reads: Vec<PathBuf> = a.images.iter().chain(&a.readings).cloned().collect();
    if plan(ctx, "ingest", &reads, &writes) {
        return Ok(());
    }
    let files = match &a.images {
        Some(root) => list_images(root)?,
        None => Vec::new(),
    };
    let digest = ingest_digest(ctx, a, &files)?;
    let ws = Workspace::lock(&ctx.out)?;
    let unchanged = fs::read_to_string(ws.path(INGEST_HASH)).is_ok_and(|h| h.trim() == digest)
        && writes.iter().all(|w| ws.path(w).exists());
    if unchanged {
        log::info!("inputs unchanged since the last ingest, skipping");
        return Ok(());
    }
    if let Some(root) = &a.images {
        if files.is_empty() {
            log::warn!("no images found under {}", root.display());
        }
        let (manifest, rejects) = index_images(root, &files, &site.site.name);
        if !rejects.is_empty() {
            log::warn!(
                "{} of {} images could not be decoded, see {REJECTS}",
                rejects.len(),
                files.len()
            );
        }
        ws.write_with(MANIFEST, |w| imaging::write_manifest(w, &manifest))?;
        ws.write_with(REJECTS, |w| write_rejects(w, &rejects))?;
        log::info!("indexed {} images", manifest.len());
    }
    if let Some(path) = &a.readings {
        let readings = irradiance::read_readings_csv(open_user(path)?)?;
        let mode = if a.median_fusion {
            FusionMode::MedianConsistency {
                tol: ctx.config.irradiance.consistency_tol,
            }
        } else {
            FusionMode::Single
        };
        let fused = irradiance::fuse_readings(&readings, &site.site, site.native_interval_s, mode)?;
        ws.write_with(SERIES, |w| {
            irradiance::write_series_csv(w, &fused.series, &fused.rejected)
        })?;
        log::info!(
            "{} samples, {} instants rejected",
            fused.series.len(),
            fused.rejected.len()
        );
    }
    ws.write(INGEST_HASH, format!("{digest}\n").as_bytes())?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct ProcessArgs {
    /// Root the manifest paths are relative to.
    #[arg(long, value_name = "DIR")]
    pub images: PathBuf,
    /// Output frame side (default: the site camera width).
    #[arg(long)]
    pub width: Option<usize>,
    /// Append the sun-position mask as a fourth channel.
    #[arg(long)]
    pub sun_mask: bool,
}

fn tensor_path(path: &str) -> String {
    match path.rsplit_once('.') {
        Some((stem, _)) if !stem.is_empty() && !stem.ends_with('/') => {
            format!("{stem}.{TENSOR_EXTENSION}")
        }
        _ => format!("{path}.{TENSOR_EXTENSION}"),
    }
}

pub fn process(ctx: &Context, a: &ProcessArgs) -> Result<()> {
    let site = site(ctx)?;
    let width = a.width.unwrap_or(site.camera.width);
    let camera = CameraModel {
        width,
        ..site.camera
    };
    camera.validate()?;
    let reads = [ctx.out.join(MANIFEST), a.images.clone()];
    if plan(
        ctx,
        "process",
        &reads,
        &[FRAMES, FRAMES_MANIFEST, PROCESS_REJECTS],
    ) {
        return Ok(());
    }
    let manifest = imaging::read_manifest(open_input(&ctx.out.join(MANIFEST), "ingest")?)?;
    let ws = Workspace::lock(&ctx.out)?;
    let store = DirStore::new(&a.images);
    let frames = ws.path(FRAMES);
    let results = par::map(
        &manifest,
        |e| -> std::result::Result<ManifestEntry, String> {
            let run = || -> Result<ManifestEntry> {
                let raw = store.load(&e.path)?;
                let raw = if raw.channels() > 3 {
                    raw.take_channels(3)?
                } else {
                    raw
                };
                let masked = imaging::apply_roi(&raw, &site.roi)?;
                let mut frame = imaging::crop_and_resize(&masked, &site.roi, width);
                if a.sun_mask {
                    let t = site.policy.source.pick(e).ok_or_else(|| {
                        Error::Data(format!(
                            "no {} timestamp for the sun mask",
                            site.policy.source
                        ))
                    })?;
                    let pos = geometry::solar_position(&site.site, t)?;
                    frame = imaging::append_mask_channel(
                        &frame,
                        &imaging::render_sun_mask(&camera, &pos)?,
                    )?;
                }
                let rel = tensor_path(&e.path);
                let mut buf = Vec::new();
                imaging::write_tensor(&mut buf, &frame)?;
                write_if_changed(&frames.join(&rel), &buf)?;
                Ok(ManifestEntry {
                    path: rel,
                    ..e.clone()
                })
            };
            run().map_err(|err| err.to_string())
        },
    );
    let mut processed = Vec::new();
    let mut rejects = Vec::new();
    for (e, r) in manifest.iter().zip(results) {
        match r {
            Ok(m) => processed.push(m),
            Err(reason) => rejects.push((e.path.clone(), reason)),
        }
    }
    if !rejects.is_empty() {
        log::warn!(
            "{} of {} images could not be processed, see {PROCESS_REJECTS}",
            rejects.len(),
            manifest.len()
        );
    }
    ws.write_with(FRAMES_MANIFEST, |w| imaging::write_manifest(w, &processed))?;
    ws.write_with(PROCESS_REJECTS, |w| write_rejects(w, &rejects))?;
    log::info!("wrote {} frames of {width}x{width}", processed.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Training time shift, seconds (default: the site setting).
    #[arg(long, allow_hyphen_values = true)]
    pub delta_t: Option<i64>,
}

#[derive(Serialize)]
struct AlignmentSummary {
    manifest: String,
    policy_source: TimestampSource,
    delta_t_s: i64,
    images: usize,
    pairs: usize,
    dropped: BTreeMap<DropReason, usize>,
    shifted_pairs: usize,
    shifted_dropped: BTreeMap<DropReason, usize>,
    chi_square_file_name: f64,
    chi_square_date_modified: f64,
    chi_square_critical: f64,
    drift: DriftReport,
}

fn corpus<'a>(
    ctx: &Context,
    site: &'a SiteConfig,
    manifest: &'a [ManifestEntry],
    series: &'a IrradianceSeries,
    store: &'a dyn ImageStore,
    reno: &'a skynow::clearsky::RenoThresholds,
) -> Corpus<'a> {
    Corpus {
        manifest,
        native: series,
        store,
        clear_sky: &site.clear_sky,
        reno,
        max_zenith: ctx.config.irradiance.max_zenith,
    }
}

pub fn align(ctx: &Context, a: &AlignArgs) -> Result<()> {
    let site = site(ctx)?;
    let shift = match a.delta_t {
        Some(d) => TimeShift::new(d)?,
        None => site.delta_t_s,
    };
    if plan(
        ctx,
        "align",
        &[manifest_path(ctx), ctx.out.join(SERIES)],
        &[PAIRS, PAIRS_SHIFTED, ALIGNMENT],
    ) {
        return Ok(());
    }
    let manifest = read_manifest(ctx)?;
    let series = read_series(ctx, site)?;
    let ws = Workspace::lock(&ctx.out)?;
    let store = DirStore::new(ws.path(FRAMES));
    let c = corpus(ctx, site, &manifest, &series, &store, &ctx.config.reno);
    let flags = c.sky_flags()?;
    let base = c.label(&flags, &site.policy, TimeShift::new(0)?, Role::Test)?;
    let shifted = c.label(&flags, &site.policy, shift, Role::Train)?;
    let chi = |src| alignment::chi_square_uniform(&alignment::second_histogram(&manifest, src));
    let summary = AlignmentSummary {
        manifest: manifest_path(ctx)
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned(),
        policy_source: site.policy.source,
        delta_t_s: shift.seconds(),
        images: manifest.len(),
        pairs: base.pairs.len(),
        dropped: base.drop_counts(),
        shifted_pairs: shifted.pairs.len(),
        shifted_dropped: shifted.drop_counts(),
        chi_square_file_name: chi(TimestampSource::FileName),
        chi_square_date_modified: chi(TimestampSource::DateModified),
        chi_square_critical: alignment::CHI2_59_CRITICAL_001,
        drift: alignment::drift_report(&manifest, site.site.utc_offset),
    };
    ws.write_with(PAIRS, |w| alignment::write_pairs_csv(w, &base.pairs))?;
    ws.write_with(PAIRS_SHIFTED, |w| {
        alignment::write_pairs_csv(w, &shifted.pairs)
    })?;
    ws.write_json(ALIGNMENT, &summary)?;
    log::info!(
        "{} pairs, {} with the {} s shift",
        base.pairs.len(),
        shifted.pairs.len(),
        shift.seconds()
    );
    Ok(())
}

pub fn split(ctx: &Context) -> Result<()> {
    let site = site(ctx)?;
    let reads = [ctx.out.join(PAIRS), ctx.out.join(PAIRS_SHIFTED)];
    if plan(ctx, "split", &reads, &[TRAIN, TEST, FOLDS, SPLIT_SUMMARY]) {
        return Ok(());
    }
    let base = read_pairs(ctx, PAIRS, "align")?;
    let shifted = read_pairs(ctx, PAIRS_SHIFTED, "align")?;
    let ws = Workspace::lock(&ctx.out)?;
    let spec = ctx.config.split_spec(&ctx.site, ctx.seed);
    let offset = site.site.utc_offset;
    let test = splits::split_train_test(&base, &spec)?.test;
    let mut train = splits::split_train_test(&shifted, &spec)?.train;
    if let Some(m) = ctx.config.split.sample_interval_min {
        let m = u32::try_from(m)
            .map_err(|_| Error::Config(format!("sample_interval_min {m} out of range")))?;
        train = splits::thin_by_interval(&train, m, offset);
    }
    if test.is_empty() {
        log::warn!("no pairs fall in the test years {:?}", spec.test_years);
    }
    let folds = splits::stratified_group_kfold(&train, &spec, offset)?;
    let summary = SplitSummary::of(&TrainTest {
        train: train.clone(),
        test: test.clone(),
        ..Default::default()
    });
    ws.write_with(TRAIN, |w| alignment::write_pairs_csv(w, &train))?;
    ws.write_with(TEST, |w| alignment::write_pairs_csv(w, &test))?;
    ws.write_with(FOLDS, |w| splits::write_folds_csv(w, &folds))?;
    ws.write_json(SPLIT_SUMMARY, &summary)?;
    log::info!(
        "{} train pairs in {} folds, {} test pairs",
        train.len(),
        folds.k,
        test.len()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Frame directory (default: <out>/frames).
    #[arg(long, value_name = "DIR")]
    pub frames: Option<PathBuf>,
    /// Also cross-validate the configured training shifts.
    #[arg(long)]
    pub sweep: bool,
}

pub fn fit(ctx: &Context, a: &FitArgs) -> Result<()> {
    let site = site(ctx)?;
    let root = frames_root(ctx, &a.frames);
    let mut reads = vec![ctx.out.join(TRAIN), root.clone()];
    let mut writes = vec![MODEL];
    if a.sweep {
        reads.extend([manifest_path(ctx), ctx.out.join(SERIES)]);
        writes.push(SWEEP);
    }
    if plan(ctx, "fit", &reads, &writes) {
        return Ok(());
    }
    let train = read_pairs(ctx, TRAIN, "split")?;
    let ws = Workspace::lock(&ctx.out)?;
    let store = DirStore::new(&root);
    let setup = ctx.config.ridge_setup();
    let cache = PixelCache::for_pairs(&train, &store, &setup.features)?;
    let x = cache.features(&train)?;
    let model =
        skynow::modeling::fit_ridge(&x, &train, &setup.features, setup.target, setup.lambda)?;
    ws.write(MODEL, model.to_json()?.as_bytes())?;
    log::info!("fit on {} pairs", train.len());
    if a.sweep {
        let manifest = read_manifest(ctx)?;
        let series = read_series(ctx, site)?;
        let c = corpus(ctx, site, &manifest, &series, &store, &ctx.config.reno);
        let spec = ctx.config.split_spec(&ctx.site, ctx.seed);
        let sweep: ShiftSweep = experiments::delta_t_sweep(
            &c,
            &site.policy,
            &spec,
            &setup,
            &ctx.config.model.delta_t_candidates,
        )?;
        ws.write_json(SWEEP, &sweep)?;
        log::info!("cross-validation selects a {} s shift", sweep.selected_s);
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Frame directory (default: <out>/frames).
    #[arg(long, value_name = "DIR")]
    pub frames: Option<PathBuf>,
    /// CSV `key, prediction` of GHI estimates keyed by image path, scored
    /// instead of the fitted model.
    #[arg(long, value_name = "FILE")]
    pub predictions: Option<PathBuf>,
}

pub fn evaluate(ctx: &Context, a: &EvaluateArgs) -> Result<()> {
    let site = site(ctx)?;
    let root = frames_root(ctx, &a.frames);
    let reads = match &a.predictions {
        Some(p) => vec![ctx.out.join(TEST), p.clone()],
        None => vec![ctx.out.join(TEST), ctx.out.join(MODEL), root.clone()],
    };
    if plan(ctx, "evaluate", &reads, &[EVALUATION_CSV, EVALUATION_JSON]) {
        return Ok(());
    }
    let test = read_pairs(ctx, TEST, "split")?;
    let (preds, name) = match &a.predictions {
        Some(p) => {
            let est =
                skynow::modeling::ExternalEstimator::read_csv(open_user(p)?, TargetKind::GHI)?;
            let preds = test
                .iter()
                .map(|pair| {
                    est.predictions
                        .get(&pair.image_ref)
                        .copied()
                        .ok_or_else(|| {
                            Error::Data(format!("no prediction for '{}'", pair.image_ref))
                        })
                })
                .collect::<Result<Vec<f64>>>()?;
            (preds, "external")
        }
        None => {
            let model = read_model(ctx)?;
            let store = DirStore::new(&root);
            let x = PixelCache::for_pairs(&test, &store, &model.feature_spec)?.features(&test)?;
            (experiments::predict_ghi(&model, &x, &test)?, "ridge")
        }
    };
    let ws = Workspace::lock(&ctx.out)?;
    let scored: Vec<Scored> = test
        .iter()
        .zip(&preds)
        .map(|(p, &pred)| Scored {
            instant: p.instant,
            truth: p.label_ghi,
            pred,
            sky: p.sky,
        })
        .collect();
    let report = evaluation::stratify(&scored, site.site.utc_offset, &ctx.site, name)?;
    ws.write_with(EVALUATION_CSV, |w| report.write_csv(w))?;
    ws.write_json(EVALUATION_JSON, &report)?;
    log::info!(
        "test RMSE {:.3} W/m² over {} pairs",
        report.overall.rmse,
        report.overall.n
    );
    Ok(())
}

fn read_model(ctx: &Context) -> Result<LinearModel> {
    let path = ctx.out.join(MODEL);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Data(format!(
            "missing input {} (run `skynow fit` first)",
            path.display()
        )),
        _ => e.into(),
    })?;
    LinearModel::from_json(&text)
}

#[derive(Debug, Clone)]
pub enum PredictorArg {
    Frozen,
    GroundTruth,
    External(PathBuf),
}

fn parse_predictor(s: &str) -> std::result::Result<PredictorArg, String> {
    match s {
        "frozen" => Ok(PredictorArg::Frozen),
        "ground-truth" => Ok(PredictorArg::GroundTruth),
        _ => match s.strip_prefix("external:") {
            Some(dir) if !dir.is_empty() => Ok(PredictorArg::External(PathBuf::from(dir))),
            _ => Err(format!(
                "expected frozen, ground-truth or external:DIR, got '{s}'"
            )),
        },
    }
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    /// Frame directory (default: <out>/frames).
    #[arg(long, value_name = "DIR")]
    pub frames: Option<PathBuf>,
    /// frozen, ground-truth, or external:DIR holding predicted frames.
    #[arg(long, default_value = "frozen", value_parser = parse_predictor)]
    pub predictor: PredictorArg,
    /// Score origins on every day, not only odd days of the month.
    #[arg(long)]
    pub all_days: bool,
}

#[derive(Serialize)]
struct ForecastSummary {
    predictor: String,
    samples: usize,
    incomplete: usize,
    filtered: usize,
    report: nowcast::ForecastReport,
}

pub fn forecast(ctx: &Context, a: &ForecastArgs) -> Result<()> {
    let site = site(ctx)?;
    let root = frames_root(ctx, &a.frames);
    let mut reads = vec![ctx.out.join(TEST), ctx.out.join(MODEL), root.clone()];
    if let PredictorArg::External(d) = &a.predictor {
        reads.push(d.clone());
    }
    if plan(ctx, "forecast", &reads, &[FORECAST_CSV, FORECAST_JSON]) {
        return Ok(());
    }
    let test = read_pairs(ctx, TEST, "split")?;
    let model = read_model(ctx)?;
    let ws = Workspace::lock(&ctx.out)?;
    let store = DirStore::new(&root);
    let opts = SequenceOptions {
        odd_days_only: ctx.config.nowcast.odd_days_only && !a.all_days,
        utc_offset_s: site.site.utc_offset,
    };
    let set = nowcast::build_sequences(&test, &opts);
    if set.samples.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no complete forecast sequence among {} test pairs",
            test.len()
        )));
    }
    let vp: Box<dyn VideoPredictor> = match &a.predictor {
        PredictorArg::Frozen => Box::new(FrozenPersistence),
        PredictorArg::GroundTruth => Box::new(GroundTruthPassthrough),
        PredictorArg::External(d) => Box::new(ExternalPredictor { root: d.clone() }),
    };
    let est: &dyn Estimator = &model;
    let forecasts = nowcast::forecast_all(&set.samples, |s| {
        nowcast::two_step_forecast(s, vp.as_ref(), est, &store)
    })?;
    let baseline: Vec<[f64; 5]> = set.samples.iter().map(nowcast::spm_forecast).collect();
    let report = nowcast::evaluate_forecasts(&set.samples, &forecasts, &baseline)?;
    ws.write_with(FORECAST_CSV, |w| report.write_csv(w))?;
    ws.write_json(
        FORECAST_JSON,
        &ForecastSummary {
            predictor: vp.name().to_string(),
            samples: set.samples.len(),
            incomplete: set.incomplete,
            filtered: set.filtered,
            report,
        },
    )?;
    log::info!("scored {} forecast origins", set.samples.len());
    Ok(())
}

fn parse_averaging(s: &str) -> std::result::Result<Averaging, String> {
    let window = |w: &str| {
        w.parse::<i64>()
            .map_err(|e| format!("bad window '{w}': {e}"))
    };
    match s.split_once(':') {
        None if s == "none" => Ok(Averaging::None),
        Some(("backward", w)) => Ok(Averaging::Backward {
            window_s: window(w)?,
        }),
        Some(("forward", w)) => Ok(Averaging::Forward {
            window_s: window(w)?,
        }),
        _ => Err(format!(
            "expected none, backward:SECONDS or forward:SECONDS, got '{s}'"
        )),
    }
}

fn parse_drift(s: &str) -> std::result::Result<DriftSchedule, String> {
    let int = |v: &str| {
        v.parse::<i64>()
            .map_err(|e| format!("bad number '{v}': {e}"))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["none"] => Ok(DriftSchedule::None),
        ["constant", v] => Ok(DriftSchedule::Constant { seconds: int(v)? }),
        ["sawtooth", period, peak] => {
            let period = usize::try_from(int(period)?).map_err(|e| e.to_string())?;
            Ok(DriftSchedule::sawtooth(period, int(peak)?))
        }
        _ => Err(format!(
            "expected none, constant:SECONDS or sawtooth:DAYS:PEAK, got '{s}'"
        )),
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value = "2015-01-03")]
    pub start: NaiveDate,
    #[arg(long, default_value_t = 30)]
    pub days: usize,
    /// Simulate every n-th day from the start.
    #[arg(long, default_value_t = 1)]
    pub day_step: usize,
    /// Clouds per day; 0 gives clear skies.
    #[arg(long, default_value_t = 6)]
    pub clouds: usize,
    /// Frame pixels per minute.
    #[arg(long, default_value_t = 1.5)]
    pub cloud_speed: f64,
    #[arg(long, default_value_t = 0.8)]
    pub opacity: f64,
    /// Sensor averaging: none, backward:SECONDS or forward:SECONDS.
    #[arg(long, default_value = "none", value_parser = parse_averaging)]
    pub averaging: Averaging,
    /// Camera clock drift: none, constant:SECONDS or sawtooth:DAYS:PEAK.
    #[arg(long, default_value = "none", value_parser = parse_drift, allow_hyphen_values = true)]
    pub drift: DriftSchedule,
    /// Write the index and series but no frame tensors.
    #[arg(long)]
    pub no_frames: bool,
}

fn write_truth(w: &mut Vec<u8>, truth: &[synth::TruthSample]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["instant_utc", "kt", "ghi"])?;
    for t in truth {
        wtr.write_record([
            time::format_iso(t.instant),
            t.kt.to_string(),
            t.ghi.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn synth(ctx: &Context, a: &SynthArgs) -> Result<()> {
    let site = site(ctx)?;
    let mut sc = SyntheticScenario::new(site.site.clone(), a.start, a.days, ctx.seed);
    sc.day_step = a.day_step;
    sc.cloud_model = if a.clouds == 0 {
        CloudModel::None
    } else {
        CloudModel::moving_discs(a.cloud_speed, a.opacity, a.clouds)
    };
    sc.drift = a.drift.clone();
    sc.averaging = a.averaging;
    sc.camera = site.camera;
    sc.clear_sky = site.clear_sky;
    sc.interval_s = site.native_interval_s;
    sc.max_zenith = ctx.config.irradiance.max_zenith;
    sc.validate()?;
    let mut writes = vec![MANIFEST, SERIES, TRUTH, SCENARIO];
    if !a.no_frames {
        writes.push(FRAMES);
    }
    if plan(ctx, "synth", &[], &writes) {
        return Ok(());
    }
    let ws = Workspace::lock(&ctx.out)?;
    let corpus = synth::generate(&sc)?;
    if !a.no_frames {
        corpus.write_frames(&ws.path(FRAMES))?;
    }
    ws.write_with(MANIFEST, |w| imaging::write_manifest(w, &corpus.manifest))?;
    ws.write_with(SERIES, |w| {
        irradiance::write_series_csv(w, &corpus.series, &[])
    })?;
    ws.write_with(TRUTH, |w| write_truth(w, &corpus.truth))?;
    ws.write_json(SCENARIO, &sc)?;
    // a stale processed index would shadow the new corpus in later steps
    let stale = ws.path(FRAMES_MANIFEST);
    if stale.exists() {
        fs::remove_file(stale)?;
    }
    log::info!(
        "{} images over {} days",
        corpus.manifest.len(),
        sc.dates().len()
    );
    Ok(())
}
