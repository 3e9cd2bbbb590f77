//! Synthetic sky corpora with known ground truth.
//!
//! Each simulated day holds a set of cloud discs drifting at a common
//! velocity across the (already cropped) fisheye frame, wrapping
//! toroidally. The instantaneous clear-sky index is a function of how much
//! of the sun disc the clouds cover: `kt = 1 - (1 - floor) * occlusion`.
//! Frames are rendered on demand from the scene, so a corpus of many days
//! costs almost no memory.

use std::collections::HashMap;
use std::f64::consts::PI;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clearsky::{self, ClearSkyModel};
use crate::error::{Error, Result};
use crate::geometry::{self, Site, SolarPosition};
use crate::imaging::{self, CameraModel, Exposure, ImageStore, ManifestEntry, Raster};
use crate::irradiance::{IrradianceSample, IrradianceSeries};
use crate::nowcast::{SequenceSample, VideoPredictor, LEADS_MIN};
use crate::par;
use crate::time::{self, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CloudModel {
    None,
    MovingDiscs {
        /// Mean drift speed, pixels of the output frame per minute.
        speed_px_per_min: f64,
        opacity: f64,
        /// Upper bound of clouds per day.
        count: usize,
        radius_min_px: f64,
        radius_max_px: f64,
        /// Probability that a day has no clouds at all.
        clear_day_prob: f64,
    },
}

impl CloudModel {
    pub fn moving_discs(speed_px_per_min: f64, opacity: f64, count: usize) -> Self {
        CloudModel::MovingDiscs {
            speed_px_per_min,
            opacity,
            count,
            radius_min_px: 4.0,
            radius_max_px: 10.0,
            clear_day_prob: 0.2,
        }
    }
}

/// How the emitted irradiance value at minute `m` relates to the
/// instantaneous signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Averaging {
    None,
    /// Mean over the `window_s` seconds ending at `m`, i.e. `(m - w, m]`.
    Backward {
        window_s: i64,
    },
    /// Mean over `[m, m + w)`.
    Forward {
        window_s: i64,
    },
}

impl Averaging {
    fn window(self) -> Option<(i64, i64)> {
        match self {
            Averaging::None => None,
            Averaging::Backward { window_s } => Some((-window_s + 1, 0)),
            Averaging::Forward { window_s } => Some((0, window_s - 1)),
        }
    }
}

/// File-name minus date-modified offset per simulated day, seconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSchedule {
    None,
    Constant {
        seconds: i64,
    },
    /// Indexed by day, repeated cyclically.
    PerDay {
        seconds: Vec<i64>,
    },
}

impl DriftSchedule {
    pub fn at_day(&self, day: usize) -> i64 {
        match self {
            DriftSchedule::None => 0,
            DriftSchedule::Constant { seconds } => *seconds,
            DriftSchedule::PerDay { seconds } if seconds.is_empty() => 0,
            DriftSchedule::PerDay { seconds } => seconds[day % seconds.len()],
        }
    }

    /// Drift growing linearly from zero to `peak_s` over `period` days, then
    /// resetting, as when a camera clock is corrected now and then.
    pub fn sawtooth(period: usize, peak_s: i64) -> Self {
        let period = period.max(1);
        DriftSchedule::PerDay {
            seconds: (0..period)
                .map(|d| peak_s * (d as i64 + 1) / period as i64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScenario {
    pub site: Site,
    pub start: NaiveDate,
    pub days: usize,
    /// Simulate every `day_step`-th day from `start`.
    pub day_step: usize,
    pub cloud_model: CloudModel,
    pub drift: DriftSchedule,
    pub averaging: Averaging,
    pub seed: u64,
    pub camera: CameraModel,
    pub clear_sky: ClearSkyModel,
    /// Image cadence and emitted-series spacing, seconds.
    pub interval_s: i64,
    /// Images are produced while the sun is below this zenith angle.
    pub max_zenith: f64,
    /// kt under complete occlusion.
    pub diffuse_floor: f64,
}

impl SyntheticScenario {
    pub fn new(site: Site, start: NaiveDate, days: usize, seed: u64) -> Self {
        SyntheticScenario {
            site,
            start,
            days,
            day_step: 1,
            cloud_model: CloudModel::None,
            drift: DriftSchedule::None,
            averaging: Averaging::None,
            seed,
            camera: CameraModel::folsom(),
            clear_sky: ClearSkyModel::default(),
            interval_s: 60,
            max_zenith: 85.0,
            diffuse_floor: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.site.validate()?;
        self.camera.validate()?;
        self.clear_sky.validate()?;
        if self.days == 0 || self.day_step == 0 {
            return Err(Error::Config("days and day_step must be >= 1".into()));
        }
        if self.interval_s <= 0 || 60 % self.interval_s != 0 && self.interval_s % 60 != 0 {
            return Err(Error::Config(format!(
                "interval {} s must divide or be a multiple of a minute",
                self.interval_s
            )));
        }
        if !(0.0..=1.0).contains(&self.diffuse_floor) {
            return Err(Error::Config("diffuse_floor outside [0, 1]".into()));
        }
        if let CloudModel::MovingDiscs {
            opacity,
            radius_min_px,
            radius_max_px,
            clear_day_prob,
            speed_px_per_min,
            ..
        } = self.cloud_model
        {
            if !(0.0..=1.0).contains(&opacity) {
                return Err(Error::Config(format!("opacity {opacity} outside [0, 1]")));
            }
            if !(0.0..=1.0).contains(&clear_day_prob) {
                return Err(Error::Config("clear_day_prob outside [0, 1]".into()));
            }
            if !(radius_min_px > 0.0 && radius_min_px <= radius_max_px) {
                return Err(Error::Config("cloud radius range is empty".into()));
            }
            if !(speed_px_per_min >= 0.0) {
                return Err(Error::Config("cloud speed must be >= 0".into()));
            }
        }
        match self.averaging {
            Averaging::Backward { window_s } | Averaging::Forward { window_s }
                if !(1..=120).contains(&window_s) =>
            {
                Err(Error::Config(format!(
                    "averaging window {window_s} s outside [1, 120]"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        (0..self.days)
            .map(|d| self.start + Duration::days((d * self.day_step) as i64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cloud {
    x: f64,
    y: f64,
    r: f64,
    vx: f64,
    vy: f64,
    opacity: f64,
}

/// Clouds of one simulated day; positions refer to `t_ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct DayScene {
    pub date: NaiveDate,
    pub index: usize,
    pub t_ref: Timestamp,
    clouds: Vec<Cloud>,
}

/// Per-day RNG stream derived from the master seed.
fn day_rng(seed: u64, day: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(day as u64);
    rng
}

fn make_scene(sc: &SyntheticScenario, index: usize, date: NaiveDate) -> DayScene {
    let t_ref = time::from_ymd_hms(
        chrono::Datelike::year(&date),
        chrono::Datelike::month(&date),
        chrono::Datelike::day(&date),
        0,
        0,
        0,
    ) - sc.site.utc_offset;
    let mut rng = day_rng(sc.seed, index);
    let w = sc.camera.width as f64;
    let clouds = match sc.cloud_model {
        CloudModel::None => Vec::new(),
        CloudModel::MovingDiscs {
            speed_px_per_min,
            opacity,
            count,
            radius_min_px,
            radius_max_px,
            clear_day_prob,
        } => {
            if count == 0 || rng.gen_bool(clear_day_prob) {
                Vec::new()
            } else {
                let n = rng.gen_range(1..=count);
                let heading = rng.gen_range(0.0..2.0 * PI);
                let speed = speed_px_per_min * rng.gen_range(0.5..1.5);
                let (vx, vy) = (speed * heading.cos(), speed * heading.sin());
                let scale = sc.camera.width as f64 / 64.0;
                (0..n)
                    .map(|_| Cloud {
                        x: rng.gen_range(0.0..w),
                        y: rng.gen_range(0.0..w),
                        r: rng.gen_range(radius_min_px..=radius_max_px) * scale,
                        vx,
                        vy,
                        opacity,
                    })
                    .collect()
            }
        }
    };
    DayScene {
        date,
        index,
        t_ref,
        clouds,
    }
}

/// Fixed sample points of the unit disc: centre plus three rings.
fn disc_points() -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, 0.0)];
    for (ring, n) in [(1.0 / 3.0, 6), (2.0 / 3.0, 12), (1.0, 18)] {
        for k in 0..n {
            let a = 2.0 * PI * k as f64 / n as f64;
            pts.push((ring * a.cos(), ring * a.sin()));
        }
    }
    pts
}

/// Frame-space geometry and radiometry shared by rendering and labelling.
#[derive(Debug, Clone)]
struct Optics {
    site: Site,
    camera: CameraModel,
    clear_sky: ClearSkyModel,
    floor: f64,
    sun_radius: f64,
    points: Vec<(f64, f64)>,
}

impl Optics {
    fn new(sc: &SyntheticScenario) -> Self {
        Optics {
            site: sc.site.clone(),
            camera: sc.camera,
            clear_sky: sc.clear_sky,
            floor: sc.diffuse_floor,
            sun_radius: 2.0 * sc.camera.width as f64 / 64.0,
            points: disc_points(),
        }
    }

    fn sun_pos(&self, t: Timestamp) -> SolarPosition {
        geometry::solar_position_unchecked(self.site.latitude, self.site.longitude, t as f64)
    }

    /// Fraction of light passing the clouds at `(x, y)`.
    fn transmittance(&self, scene: &DayScene, t: Timestamp, x: f64, y: f64) -> f64 {
        let w = self.camera.width as f64;
        let minutes = (t - scene.t_ref) as f64 / 60.0;
        let mut trans = 1.0;
        for c in &scene.clouds {
            let cx = c.x + c.vx * minutes;
            let cy = c.y + c.vy * minutes;
            let dx = (x - cx + w / 2.0).rem_euclid(w) - w / 2.0;
            let dy = (y - cy + w / 2.0).rem_euclid(w) - w / 2.0;
            if dx * dx + dy * dy <= c.r * c.r {
                trans *= 1.0 - c.opacity;
            }
        }
        trans
    }

    /// Sun-disc occlusion in [0, 1]; zero with the sun below the horizon.
    fn occlusion(&self, scene: &DayScene, t: Timestamp) -> f64 {
        if scene.clouds.is_empty() {
            return 0.0;
        }
        let pos = self.sun_pos(t);
        let Ok((sx, sy)) = imaging::sun_center(&self.camera, &pos) else {
            return 0.0;
        };
        let mean_t = self
            .points
            .iter()
            .map(|(u, v)| {
                self.transmittance(scene, t, sx + u * self.sun_radius, sy + v * self.sun_radius)
            })
            .sum::<f64>()
            / self.points.len() as f64;
        1.0 - mean_t
    }

    fn kt(&self, scene: &DayScene, t: Timestamp) -> f64 {
        kt_from_occlusion(self.occlusion(scene, t), self.floor)
    }

    fn ghi(&self, scene: &DayScene, t: Timestamp) -> (f64, f64) {
        let pos = self.sun_pos(t);
        let ctx = clearsky::predict_clear_sky(&self.clear_sky, &pos, &self.site);
        let kt = self.kt(scene, t);
        (kt * ctx.i_clr, kt)
    }

    fn render(&self, scene: &DayScene, t: Timestamp) -> Raster {
        let w = self.camera.width;
        let wf = w as f64;
        let pos = self.sun_pos(t);
        let brightness = 0.35 + 0.65 * pos.cos_zenith().max(0.0);
        let sun = imaging::sun_center(&self.camera, &pos).ok();
        let glow_sigma = 3.0 * wf / 64.0;
        // veiling glare over the whole lens, from the unobstructed sun
        let flare = FLARE_GAIN * (1.0 - self.occlusion(scene, t));
        let mut data = Vec::with_capacity(w * w * 3);
        for j in 0..w {
            for i in 0..w {
                let x = i as f64 + 0.5;
                let y = j as f64 + 0.5;
                let rx = x - wf / 2.0;
                let ry = y - wf / 2.0;
                if rx * rx + ry * ry > wf * wf / 4.0 {
                    data.extend([0, 0, 0]);
                    continue;
                }
                let mut px = [60.0 * brightness, 115.0 * brightness, 200.0 * brightness];
                if let Some((sx, sy)) = sun {
                    let d2 = (x - sx).powi(2) + (y - sy).powi(2);
                    if d2 <= self.sun_radius * self.sun_radius {
                        px = [255.0; 3];
                    } else {
                        let g = 150.0 * (-d2 / (2.0 * glow_sigma * glow_sigma)).exp();
                        px.iter_mut().for_each(|v| *v += g);
                    }
                }
                let trans = self.transmittance(scene, t, x, y);
                if trans < 1.0 {
                    let a = 1.0 - trans;
                    let grey = [200.0, 200.0, 205.0].map(|c| c * (0.45 + 0.55 * brightness));
                    for (v, g) in px.iter_mut().zip(grey) {
                        *v = (1.0 - a) * *v + a * g;
                    }
                }
                px.iter_mut().for_each(|v| *v += flare);
                data.extend(px.map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8));
            }
        }
        Raster::new(w, w, 3, data).expect("frame dimensions")
    }
}

const FLARE_GAIN: f64 = 45.0;

/// Monotone map from sun-disc occlusion to clear-sky index.
pub fn kt_from_occlusion(occlusion: f64, floor: f64) -> f64 {
    let o = occlusion.clamp(0.0, 1.0);
    floor * o + (1.0 - o)
}

/// Renders frames on demand from manifest paths.
#[derive(Debug, Clone)]
pub struct SyntheticStore {
    optics: Optics,
    scenes: Vec<DayScene>,
    /// path -> (scene index, true capture instant)
    index: HashMap<String, (usize, Timestamp)>,
}

impl SyntheticStore {
    /// Frame of the scene holding `t`, at `t`.
    pub fn render_at(&self, t: Timestamp) -> Option<Raster> {
        self.scene_of(t).map(|s| self.optics.render(s, t))
    }

    pub fn kt_at(&self, t: Timestamp) -> Option<f64> {
        self.scene_of(t).map(|s| self.optics.kt(s, t))
    }

    fn scene_of(&self, t: Timestamp) -> Option<&DayScene> {
        let date = time::local_date(t, self.optics.site.utc_offset);
        self.scenes.iter().find(|s| s.date == date)
    }

    pub fn capture_instant(&self, path: &str) -> Option<Timestamp> {
        self.index.get(path).map(|&(_, t)| t)
    }
}

impl ImageStore for SyntheticStore {
    fn load(&self, path: &str) -> Result<Raster> {
        let &(scene, t) = self
            .index
            .get(path)
            .ok_or_else(|| Error::Data(format!("'{path}' is not part of the synthetic corpus")))?;
        Ok(self.optics.render(&self.scenes[scene], t))
    }
}

/// Renders the true future scene: a video predictor with perfect knowledge
/// of the cloud motion.
#[derive(Debug, Clone, Copy)]
pub struct OracleMotion<'a>(pub &'a SyntheticStore);

impl VideoPredictor for OracleMotion<'_> {
    fn name(&self) -> &str {
        "oracle_motion"
    }

    fn predict(&self, sample: &SequenceSample, _store: &dyn ImageStore) -> Result<Vec<Raster>> {
        let origin = self
            .0
            .capture_instant(&sample.context_refs[4])
            .unwrap_or(sample.t);
        LEADS_MIN
            .iter()
            .map(|m| {
                let t = origin + m * 60;
                self.0
                    .render_at(t)
                    .ok_or_else(|| Error::Data(format!("no scene at {}", time::format_iso(t))))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub instant: Timestamp,
    pub kt: f64,
    pub ghi: f64,
}

pub struct SyntheticCorpus {
    pub scenario: SyntheticScenario,
    pub manifest: Vec<ManifestEntry>,
    /// Emitted (possibly averaged) series at `interval_s` spacing.
    pub series: IrradianceSeries,
    /// Instantaneous kt and GHI at each true capture instant.
    pub truth: Vec<TruthSample>,
    pub store: SyntheticStore,
}

struct DayOutput {
    manifest: Vec<ManifestEntry>,
    samples: Vec<IrradianceSample>,
    truth: Vec<TruthSample>,
    index: Vec<(String, usize, Timestamp)>,
}

fn generate_day(sc: &SyntheticScenario, optics: &Optics, scene: &DayScene) -> DayOutput {
    let drift = sc.drift.at_day(scene.index);
    let mut out = DayOutput {
        manifest: Vec::new(),
        samples: Vec::new(),
        truth: Vec::new(),
        index: Vec::new(),
    };
    let day_len = time::SECONDS_PER_DAY;
    let mut t = scene.t_ref;
    while t < scene.t_ref + day_len {
        let zenith = optics.sun_pos(t).zenith;
        if zenith < 89.0 {
            let value = match sc.averaging.window() {
                None => optics.ghi(scene, t).0,
                Some((lo, hi)) => {
                    let sum: f64 = (lo..=hi).map(|s| optics.ghi(scene, t + s).0).sum();
                    sum / (hi - lo + 1) as f64
                }
            };
            out.samples.push(IrradianceSample::ghi_only(t, value));
        }
        if zenith < sc.max_zenith {
            let (ghi, kt) = optics.ghi(scene, t);
            out.truth.push(TruthSample {
                instant: t,
                kt,
                ghi,
            });
            let fname = t + drift;
            let path = format!(
                "{}/{}/{}.{}",
                sc.site.name,
                scene.date.format("%Y%m%d"),
                time::format_filename_stamp(fname),
                imaging::TENSOR_EXTENSION
            );
            out.index.push((path.clone(), scene.index, t));
            out.manifest.push(ManifestEntry {
                path,
                ts_file_name: Some(fname),
                ts_date_modified: Some(t),
                exposure: Exposure::Long,
                site: sc.site.name.clone(),
            });
        }
        t += sc.interval_s;
    }
    out
}

/// Builds the corpus; bit-reproducible from the scenario (seed included).
pub fn generate(sc: &SyntheticScenario) -> Result<SyntheticCorpus> {
    sc.validate()?;
    let optics = Optics::new(sc);
    let scenes: Vec<DayScene> = sc
        .dates()
        .into_iter()
        .enumerate()
        .map(|(i, d)| make_scene(sc, i, d))
        .collect();
    let days = par::map(&scenes, |s| generate_day(sc, &optics, s));
    let mut manifest = Vec::new();
    let mut samples = Vec::new();
    let mut truth = Vec::new();
    let mut index = HashMap::new();
    for d in days {
        manifest.extend(d.manifest);
        samples.extend(d.samples);
        truth.extend(d.truth);
        for (p, s, t) in d.index {
            index.insert(p, (s, t));
        }
    }
    let series = IrradianceSeries::new(sc.site.clone(), "synthetic", samples, sc.interval_s)?;
    Ok(SyntheticCorpus {
        scenario: sc.clone(),
        manifest,
        series,
        truth,
        store: SyntheticStore {
            optics,
            scenes,
            index,
        },
    })
}

impl SyntheticCorpus {
    /// Writes every frame as a tensor file under `root`, at its manifest path.
    pub fn write_frames(&self, root: &std::path::Path) -> Result<()> {
        let results = par::map(&self.manifest, |e| -> Result<()> {
            let path = root.join(&e.path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            imaging::save_tensor(&path, &self.store.load(&e.path)?)
        });
        results.into_iter().collect()
    }
}
