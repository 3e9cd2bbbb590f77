//! Sky-image based solar irradiance estimation and nowcasting pipeline.
//!
//! The crate covers the full data path from raw pyranometer series and
//! all-sky camera frames to evaluated forecasts:
//!
//! * [`geometry`]: solar position and extraterrestrial irradiance.
//! * [`clearsky`]: clear-sky models, clear-sky / clearness indices and
//!   Reno-style clear period detection.
//! * [`irradiance`]: interpolation to 1 s, zenith filtering, multi-sensor
//!   median fusion and training-set time shifting.
//! * [`imaging`]: ROI masking, crop/resize, sun localisation, sun masks and
//!   the raw tensor container.
//! * [`alignment`]: image/label pairing and timestamp drift audits.
//! * [`splits`]: year-based splits, stratified group K-fold, thinning.
//! * [`modeling`]: target transforms, losses, schedules and linear estimators.
//! * [`evaluation`]: RMSE/MAE/nRMSE and stratified reports.
//! * [`nowcast`]: sequence construction, smart persistence and the
//!   single-/two-step forecast harnesses.
//! * [`synth`]: synthetic sky corpora with known ground truth.
//! * [`experiments`]: ablation drivers (time-shift sweep, timestamp policy,
//!   target variable).
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod alignment;
pub mod clearsky;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod geometry;
pub mod imaging;
pub mod irradiance;
pub mod modeling;
pub mod nowcast;
pub mod par;
pub mod splits;
pub mod synth;
pub mod time;

pub use error::{Error, Result};
