//! Sky image processing: circular ROI masking, centre crop with area
//! resampling, fisheye sun localisation, sun masks, and the raw tensor
//! container used to persist processed frames.
//!
//! Pixel `(i, j)` is column `i`, row `j`; its centre sits at
//! `(i + 0.5, j + 0.5)`. Circle membership (ROI and sun mask) is tested at
//! pixel centres.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SolarPosition;
use crate::time::{self, Timestamp};

/// Row-major `H x W x C` u8 pixel grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "empty raster {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} bytes for a {height}x{width}x{channels} raster",
                data.len()
            )));
        }
        Ok(Raster {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Self {
        Raster::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
        .unwrap()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let o = self.offset(x, y);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    pub fn count_nonzero_pixels(&self) -> usize {
        self.data
            .chunks_exact(self.channels)
            .filter(|p| p.iter().any(|&v| v != 0))
            .count()
    }

    pub fn flip_horizontal(&self) -> Raster {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.pixel_mut(self.width - 1 - x, y)
                    .copy_from_slice(self.pixel(x, y));
            }
        }
        out
    }

    /// First `n` channels of every pixel.
    pub fn take_channels(&self, n: usize) -> Result<Raster> {
        if n == 0 || n > self.channels {
            return Err(Error::Shape(format!(
                "cannot take {n} of {} channels",
                self.channels
            )));
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .flat_map(|p| p[..n].iter().copied())
            .collect();
        Raster::new(self.height, self.width, n, data)
    }

    /// Decodes a JPEG/PNG file into 3-channel RGB.
    pub fn load(path: &Path) -> Result<Raster> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Raster::new(h as usize, w as usize, 3, img.into_raw())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exposure {
    #[default]
    Long,
    Short,
}

impl fmt::Display for Exposure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Exposure::Long => "long",
            Exposure::Short => "short",
        })
    }
}

impl FromStr for Exposure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "long" | "" => Ok(Exposure::Long),
            "short" => Ok(Exposure::Short),
            other => Err(Error::Data(format!("unknown exposure '{other}'"))),
        }
    }
}

/// A sky image with its two timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct SkyImage {
    pub raster: Raster,
    pub ts_file_name: Option<Timestamp>,
    pub ts_date_modified: Option<Timestamp>,
    pub exposure: Exposure,
    pub site: String,
}

impl SkyImage {
    pub fn with_raster(&self, raster: Raster) -> SkyImage {
        SkyImage {
            raster,
            ts_file_name: self.ts_file_name,
            ts_date_modified: self.ts_date_modified,
            exposure: self.exposure,
            site: self.site.clone(),
        }
    }

    pub fn apply_roi(&self, roi: &RoiSpec) -> Result<SkyImage> {
        Ok(self.with_raster(apply_roi(&self.raster, roi)?))
    }

    pub fn crop_and_resize(&self, roi: &RoiSpec, out_w: usize) -> SkyImage {
        self.with_raster(crop_and_resize(&self.raster, roi, out_w))
    }

    pub fn append_mask_channel(&self, mask: &SunMask) -> Result<SkyImage> {
        Ok(self.with_raster(append_mask_channel(&self.raster, mask)?))
    }
}

/// Circular region of interest in original-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSpec {
    pub radius_px: f64,
    /// `(x, y)` of the circle centre.
    pub center_px: (f64, f64),
}

impl RoiSpec {
    pub fn folsom() -> Self {
        RoiSpec {
            radius_px: 755.0,
            center_px: (768.0, 768.0),
        }
    }

    pub fn sirta() -> Self {
        RoiSpec {
            radius_px: 340.0,
            center_px: (502.0, 394.0),
        }
    }

    pub fn nrel() -> Self {
        RoiSpec {
            radius_px: 755.0,
            center_px: (768.0, 768.0),
        }
    }

    /// Whole-pixel crop window `(x0, y0, side)`; the side is `2R`.
    pub fn crop_window(&self) -> (i64, i64, usize) {
        let x0 = (self.center_px.0 - self.radius_px).round() as i64;
        let y0 = (self.center_px.1 - self.radius_px).round() as i64;
        let side = (2.0 * self.radius_px).round().max(1.0) as usize;
        (x0, y0, side)
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        let (cx, cy) = self.center_px;
        let r = self.radius_px;
        if !(r > 0.0)
            || cx - r < 0.0
            || cy - r < 0.0
            || cx + r > width as f64
            || cy + r > height as f64
        {
            return Err(Error::Config(format!(
                "ROI radius {r} at ({cx}, {cy}) does not fit a {width}x{height} image"
            )));
        }
        Ok(())
    }

    /// Mirror of this ROI under a horizontal flip of a `width`-wide image.
    pub fn mirrored(&self, width: usize) -> RoiSpec {
        RoiSpec {
            radius_px: self.radius_px,
            center_px: (width as f64 - self.center_px.0, self.center_px.1),
        }
    }
}

#[inline]
fn inside_circle(i: usize, j: usize, cx: f64, cy: f64, r2: f64) -> bool {
    let dx = i as f64 + 0.5 - cx;
    let dy = j as f64 + 0.5 - cy;
    dx * dx + dy * dy <= r2
}

/// Zeroes every pixel whose centre lies outside the ROI circle.
pub fn apply_roi(raster: &Raster, roi: &RoiSpec) -> Result<Raster> {
    roi.check_within(raster.width(), raster.height())?;
    let (cx, cy) = roi.center_px;
    let r2 = roi.radius_px * roi.radius_px;
    let mut out = raster.clone();
    for j in 0..raster.height() {
        for i in 0..raster.width() {
            if !inside_circle(i, j, cx, cy, r2) {
                out.pixel_mut(i, j).fill(0);
            }
        }
    }
    Ok(out)
}

/// Square crop of side `2R` around the ROI centre (zero padding outside the
/// frame) followed by area-averaging resize to `out_w x out_w`.
pub fn crop_and_resize(raster: &Raster, roi: &RoiSpec, out_w: usize) -> Raster {
    let (x0, y0, side) = roi.crop_window();
    let c = raster.channels();
    let mut crop = vec![0u8; side * side * c];
    for j in 0..side {
        let sy = y0 + j as i64;
        if sy < 0 || sy >= raster.height() as i64 {
            continue;
        }
        for i in 0..side {
            let sx = x0 + i as i64;
            if sx < 0 || sx >= raster.width() as i64 {
                continue;
            }
            let o = (j * side + i) * c;
            crop[o..o + c].copy_from_slice(raster.pixel(sx as usize, sy as usize));
        }
    }
    let crop = Raster::new(side, side, c, crop).expect("crop dimensions");
    resize_area(&crop, out_w, out_w)
}

/// Source index ranges and overlap weights for each output cell along one
/// axis of length `n` mapped onto `m` cells.
fn area_weights(n: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n as f64 / m as f64;
    (0..m)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n);
            (first..last)
                .filter_map(|s| {
                    let w = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (w > 1e-12).then_some((s, w))
                })
                .collect()
        })
        .collect()
}

/// Area-averaged values (unrounded) of `raster` on an `out_w x out_h` grid,
/// row-major with interleaved channels.
pub fn area_average(raster: &Raster, out_w: usize, out_h: usize) -> Vec<f64> {
    let wx = area_weights(raster.width(), out_w);
    let wy = area_weights(raster.height(), out_h);
    let c = raster.channels();
    let norm = (raster.width() as f64 / out_w as f64) * (raster.height() as f64 / out_h as f64);
    let mut out = vec![0.0; out_w * out_h * c];
    let mut acc = vec![0.0; c];
    for (oy, ys) in wy.iter().enumerate() {
        for (ox, xs) in wx.iter().enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &(sy, wyv) in ys {
                for &(sx, wxv) in xs {
                    let w = wyv * wxv;
                    for (a, &v) in acc.iter_mut().zip(raster.pixel(sx, sy)) {
                        *a += w * v as f64;
                    }
                }
            }
            let o = (oy * out_w + ox) * c;
            for k in 0..c {
                out[o + k] = acc[k] / norm;
            }
        }
    }
    out
}

/// Area-averaging (box) resize, rounded to nearest.
pub fn resize_area(raster: &Raster, out_w: usize, out_h: usize) -> Raster {
    if raster.width() == out_w && raster.height() == out_h {
        return raster.clone();
    }
    let data = area_average(raster, out_w, out_h)
        .into_iter()
        .map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect();
    Raster::new(out_h, out_w, raster.channels(), data).expect("resize dimensions")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    /// `R = 2 f tan(theta / 2)`
    Stereographic,
    /// `R = f theta`, theta in radians
    Equidistant,
}

/// Fisheye mapping from sun angles to pixel coordinates of the processed
/// (square, `width`-wide) image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub projection: Projection,
    pub focal: f64,
    /// Orientation correction, degrees.
    pub theta_c: f64,
    pub width: usize,
}

impl CameraModel {
    pub fn new(projection: Projection, focal: f64, theta_c: f64, width: usize) -> Result<Self> {
        let cam = CameraModel {
            projection,
            focal,
            theta_c: theta_c.rem_euclid(360.0),
            width,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) {
            return Err(Error::Config(format!("focal {} must be > 0", self.focal)));
        }
        if !(0.0..360.0).contains(&self.theta_c) {
            return Err(Error::Config(format!(
                "theta_c {} outside [0, 360)",
                self.theta_c
            )));
        }
        if self.width == 0 {
            return Err(Error::Config("camera width must be > 0".into()));
        }
        Ok(())
    }

    pub fn folsom() -> Self {
        CameraModel::new(Projection::Stereographic, 0.48, 165.0, 64).unwrap()
    }

    pub fn sirta() -> Self {
        CameraModel::new(Projection::Equidistant, 0.63, 182.0, 64).unwrap()
    }

    pub fn nrel() -> Self {
        CameraModel::new(Projection::Equidistant, 0.67, 180.0, 64).unwrap()
    }

    /// Normalised radial distance of a direction `zenith` degrees off the
    /// optical axis.
    pub fn radial_distance(&self, zenith_deg: f64) -> f64 {
        let phi = zenith_deg.to_radians();
        match self.projection {
            Projection::Stereographic => 2.0 * self.focal * (phi / 2.0).tan(),
            Projection::Equidistant => self.focal * phi,
        }
    }

    pub fn sun_mask_radius(&self) -> f64 {
        5.0 * self.width as f64 / 64.0
    }
}

/// Sun centre `(x_p, y_p)` in pixel coordinates.
pub fn sun_center(cam: &CameraModel, pos: &SolarPosition) -> Result<(f64, f64)> {
    if pos.zenith >= 90.0 {
        return Err(Error::BelowHorizon { zenith: pos.zenith });
    }
    let r = cam.radial_distance(pos.zenith);
    let rel = (pos.azimuth - cam.theta_c).to_radians();
    let xc = r * rel.sin();
    let yc = r * rel.cos();
    let half = cam.width as f64 / 2.0;
    Ok((half * (1.0 + xc), half * (1.0 + yc)))
}

/// Binary `W x W` sun disc.
#[derive(Debug, Clone, PartialEq)]
pub struct SunMask {
    pub width: usize,
    pub center: (f64, f64),
    pub radius_px: f64,
    /// Row-major.
    pub mask: Vec<bool>,
}

impl SunMask {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[j * self.width + i]
    }

    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Rasterises the sun disc (radius `5 W / 64`) at the projected sun centre.
pub fn render_sun_mask(cam: &CameraModel, pos: &SolarPosition) -> Result<SunMask> {
    let center = sun_center(cam, pos)?;
    Ok(rasterize_disc(cam.width, center, cam.sun_mask_radius()))
}

pub fn rasterize_disc(width: usize, center: (f64, f64), radius: f64) -> SunMask {
    let r2 = radius * radius;
    let mut mask = vec![false; width * width];
    for j in 0..width {
        for i in 0..width {
            mask[j * width + i] = inside_circle(i, j, center.0, center.1, r2);
        }
    }
    let out = SunMask {
        width,
        center,
        radius_px: radius,
        mask,
    };
    if out.area() == 0 {
        log::warn!(
            "sun mask centred at ({:.2}, {:.2}) lies entirely outside the {width}x{width} frame",
            center.0,
            center.1
        );
    }
    out
}

/// Appends the mask as a fourth channel valued 0 or 255.
pub fn append_mask_channel(raster: &Raster, mask: &SunMask) -> Result<Raster> {
    if raster.channels() != 3 {
        return Err(Error::Shape(format!(
            "expected 3 channels, got {}",
            raster.channels()
        )));
    }
    if raster.width() != mask.width || raster.height() != mask.width {
        return Err(Error::Shape(format!(
            "image {}x{} vs mask {}x{}",
            raster.height(),
            raster.width(),
            mask.width,
            mask.width
        )));
    }
    let mut data = Vec::with_capacity(raster.data().len() / 3 * 4);
    for (p, &m) in raster.data().chunks_exact(3).zip(&mask.mask) {
        data.extend_from_slice(p);
        data.push(if m { 255 } else { 0 });
    }
    Raster::new(raster.height(), raster.width(), 4, data)
}

pub const TENSOR_MAGIC: [u8; 8] = *b"SKYTNSR\0";
pub const TENSOR_VERSION: u16 = 1;
pub const TENSOR_HEADER_LEN: usize = 64;
const DTYPE_U8: u8 = 0;

/// Writes the raw tensor container: a 64-byte header followed by the pixel
/// bytes in row-major HWC order.
///
/// | bytes  | content                          |
/// |--------|----------------------------------|
/// | 0..8   | magic `SKYTNSR\0`                |
/// | 8..10  | version, u16 LE (1)              |
/// | 10     | dtype (0 = u8)                   |
/// | 11..16 | reserved, zero                   |
/// | 16..28 | H, W, C as u32 LE                |
/// | 28..64 | reserved, zero                   |
pub fn write_tensor<W: Write>(mut w: W, raster: &Raster) -> Result<()> {
    let mut header = [0u8; TENSOR_HEADER_LEN];
    header[..8].copy_from_slice(&TENSOR_MAGIC);
    header[8..10].copy_from_slice(&TENSOR_VERSION.to_le_bytes());
    header[10] = DTYPE_U8;
    header[16..20].copy_from_slice(&(raster.height() as u32).to_le_bytes());
    header[20..24].copy_from_slice(&(raster.width() as u32).to_le_bytes());
    header[24..28].copy_from_slice(&(raster.channels() as u32).to_le_bytes());
    w.write_all(&header)?;
    w.write_all(raster.data())?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Raster> {
    let mut header = [0u8; TENSOR_HEADER_LEN];
    r.read_exact(&mut header)?;
    if header[..8] != TENSOR_MAGIC {
        return Err(Error::Data("not a tensor file (bad magic)".into()));
    }
    let version = u16::from_le_bytes([header[8], header[9]]);
    if version != TENSOR_VERSION {
        return Err(Error::Data(format!("unsupported tensor version {version}")));
    }
    if header[10] != DTYPE_U8 {
        return Err(Error::Data(format!(
            "unsupported tensor dtype {}",
            header[10]
        )));
    }
    let dim = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(16), dim(20), dim(24));
    let mut data = vec![0u8; h * w * c];
    r.read_exact(&mut data)?;
    Raster::new(h, w, c, data)
}

pub fn save_tensor(path: &Path, raster: &Raster) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_tensor(&mut w, raster)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Raster> {
    read_tensor(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// One image in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ManifestEntry {
    pub path: String,
    pub ts_file_name: Option<Timestamp>,
    pub ts_date_modified: Option<Timestamp>,
    pub exposure: Exposure,
    pub site: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    path: String,
    ts_file_name: String,
    ts_date_modified: String,
    exposure: String,
    site: String,
}

fn opt_ts(s: &str) -> Result<Option<Timestamp>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        time::parse_timestamp(s).map(Some)
    }
}

/// Writes `path, ts_file_name, ts_date_modified, exposure, site`.
pub fn write_manifest<W: Write>(writer: W, entries: &[ManifestEntry]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for e in entries {
        wtr.serialize(ManifestRow {
            path: e.path.clone(),
            ts_file_name: e.ts_file_name.map(time::format_iso).unwrap_or_default(),
            ts_date_modified: e.ts_date_modified.map(time::format_iso).unwrap_or_default(),
            exposure: e.exposure.to_string(),
            site: e.site.clone(),
        })?;
    }
    if entries.is_empty() {
        wtr.write_record([
            "path",
            "ts_file_name",
            "ts_date_modified",
            "exposure",
            "site",
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize::<ManifestRow>()
        .map(|row| {
            let row = row?;
            Ok(ManifestEntry {
                path: row.path,
                ts_file_name: opt_ts(&row.ts_file_name)?,
                ts_date_modified: opt_ts(&row.ts_date_modified)?,
                exposure: row.exposure.parse()?,
                site: row.site,
            })
        })
        .collect()
}

/// Source of frames addressed by manifest path.
pub trait ImageStore: Send + Sync {
    fn load(&self, path: &str) -> Result<Raster>;
}

/// Files under a root directory: `.skt` tensors or JPEG/PNG images.
#[derive(Debug, Clone)]
pub struct DirStore {
    pub root: std::path::PathBuf,
}

impl DirStore {
    pub fn new(root: impl Into<std::path::PathBuf>) -> Self {
        DirStore { root: root.into() }
    }
}

impl ImageStore for DirStore {
    fn load(&self, path: &str) -> Result<Raster> {
        let full = self.root.join(path);
        if full.extension().is_some_and(|e| e == TENSOR_EXTENSION) {
            load_tensor(&full)
        } else {
            Raster::load(&full)
        }
    }
}

pub const TENSOR_EXTENSION: &str = "skt";

#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    pub frames: std::collections::HashMap<String, Raster>,
}

impl ImageStore for MemoryStore {
    fn load(&self, path: &str) -> Result<Raster> {
        self.frames
            .get(path)
            .cloned()
            .ok_or_else(|| Error::Data(format!("no frame stored under '{path}'")))
    }
}
