//! Pipeline configuration file (TOML).
//!
//! A user file is merged key by key over the built-in defaults, so a file
//! containing only `[sites.folsom] delta_t_s = -10` is complete. Unknown
//! keys anywhere are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::TimestampPolicy;
use crate::clearsky::{ClearSkyModel, RenoThresholds};
use crate::error::{Error, Result};
use crate::experiments::RidgeSetup;
use crate::geometry::Site;
use crate::imaging::{CameraModel, RoiSpec};
use crate::irradiance::{TimeShift, DEFAULT_CONSISTENCY_TOL, DEFAULT_MAX_ZENITH};
use crate::modeling::{ExternalTrainingConfig, FeatureSpec, TargetKind};
use crate::splits::SplitSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub site: Site,
    pub roi: RoiSpec,
    pub camera: CameraModel,
    pub policy: TimestampPolicy,
    /// Training-label shift, seconds.
    pub delta_t_s: TimeShift,
    /// Spacing of the published irradiance series, seconds.
    pub native_interval_s: i64,
    pub test_years: Vec<i32>,
    pub clear_sky: ClearSkyModel,
}

impl SiteConfig {
    pub fn folsom() -> Self {
        SiteConfig {
            site: Site::folsom(),
            roi: RoiSpec::folsom(),
            camera: CameraModel::folsom(),
            policy: TimestampPolicy::folsom(),
            delta_t_s: TimeShift::new(-20).unwrap(),
            native_interval_s: 60,
            test_years: vec![2016],
            clear_sky: ClearSkyModel::default(),
        }
    }

    pub fn sirta() -> Self {
        SiteConfig {
            site: Site::sirta(),
            roi: RoiSpec::sirta(),
            camera: CameraModel::sirta(),
            policy: TimestampPolicy::sirta(),
            delta_t_s: TimeShift::new(10).unwrap(),
            native_interval_s: 60,
            test_years: vec![2019],
            clear_sky: ClearSkyModel::default(),
        }
    }

    pub fn nrel() -> Self {
        SiteConfig {
            site: Site::nrel(),
            roi: RoiSpec::nrel(),
            camera: CameraModel::nrel(),
            policy: TimestampPolicy::nrel(),
            delta_t_s: TimeShift::new(-30).unwrap(),
            native_interval_s: 60,
            test_years: vec![2023],
            clear_sky: ClearSkyModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.site.validate()?;
        self.camera.validate()?;
        self.policy.validate()?;
        self.clear_sky.validate()?;
        if !(self.roi.radius_px > 0.0) {
            return Err(Error::Config(format!(
                "{}: ROI radius must be > 0",
                self.site.name
            )));
        }
        if self.native_interval_s <= 0 {
            return Err(Error::Config(format!(
                "{}: native_interval_s must be > 0",
                self.site.name
            )));
        }
        if self.test_years.is_empty() {
            return Err(Error::Config(format!("{}: no test year", self.site.name)));
        }
        Ok(())
    }
}

/// Split settings shared by all sites; test years come from the site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub k: usize,
    pub n_bins: usize,
    pub bin_width: f64,
    /// Train-set thinning, minutes; absent keeps every pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_interval_min: Option<i64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSpec::default();
        SplitConfig {
            k: s.k,
            n_bins: s.n_bins,
            bin_width: s.bin_width,
            sample_interval_min: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrradianceConfig {
    pub max_zenith: f64,
    /// Median-consistency tolerance for multi-sensor sites, W/m².
    pub consistency_tol: f64,
}

impl Default for IrradianceConfig {
    fn default() -> Self {
        IrradianceConfig {
            max_zenith: DEFAULT_MAX_ZENITH,
            consistency_tol: DEFAULT_CONSISTENCY_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lambda: f64,
    pub features: FeatureSpec,
    /// Delta-t candidates for the cross-validated sweep, seconds.
    pub delta_t_candidates: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalTrainingConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lambda: RidgeSetup::default().lambda,
            features: FeatureSpec::default(),
            delta_t_candidates: vec![-30, -20, -10, 0, 10, 20, 30],
            external: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NowcastConfig {
    pub odd_days_only: bool,
    /// Side of the frames fed to video predictors.
    pub frame_width: usize,
}

impl Default for NowcastConfig {
    fn default() -> Self {
        NowcastConfig {
            odd_days_only: true,
            frame_width: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub sites: BTreeMap<String, SiteConfig>,
    pub split: SplitConfig,
    pub target: TargetKind,
    pub model: ModelConfig,
    pub reno: RenoThresholds,
    pub irradiance: IrradianceConfig,
    pub nowcast: NowcastConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sites: [
                SiteConfig::folsom(),
                SiteConfig::sirta(),
                SiteConfig::nrel(),
            ]
            .into_iter()
            .map(|s| (s.site.name.clone(), s))
            .collect(),
            split: SplitConfig::default(),
            target: TargetKind::KT_WEIGHTED,
            model: ModelConfig::default(),
            reno: RenoThresholds::default(),
            irradiance: IrradianceConfig::default(),
            nowcast: NowcastConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses `text` and merges it over the defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(PipelineConfig::default())
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: PipelineConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config '{}': {e}", path.display())))?;
        PipelineConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        for (key, s) in &self.sites {
            if *key != s.site.name {
                return Err(Error::Config(format!(
                    "site section '{key}' names site '{}'",
                    s.site.name
                )));
            }
            s.validate()?;
        }
        self.split_spec("", 0).validate()?;
        if let Some(i) = self.split.sample_interval_min {
            if i < 1 {
                return Err(Error::Config(format!(
                    "sample_interval_min must be >= 1, got {i}"
                )));
            }
        }
        self.target.validate()?;
        self.model.features.validate()?;
        if !(self.model.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda {} must be >= 0",
                self.model.lambda
            )));
        }
        if self.model.delta_t_candidates.is_empty() {
            return Err(Error::Config("delta_t_candidates is empty".into()));
        }
        for &d in &self.model.delta_t_candidates {
            TimeShift::new(d)?;
        }
        if let Some(e) = &self.model.external {
            e.validate()?;
        }
        if !(0.0..=90.0).contains(&self.irradiance.max_zenith) {
            return Err(Error::Config(format!(
                "max_zenith {} outside [0, 90]",
                self.irradiance.max_zenith
            )));
        }
        if self.nowcast.frame_width == 0 {
            return Err(Error::Config("nowcast frame_width must be > 0".into()));
        }
        Ok(())
    }

    pub fn site(&self, name: &str) -> Result<&SiteConfig> {
        self.sites.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.sites.keys().map(String::as_str).collect();
            Error::Config(format!(
                "unknown site '{name}' (configured: {})",
                known.join(", ")
            ))
        })
    }

    /// Split settings for `site` with the run seed; unknown sites get no
    /// test years.
    pub fn split_spec(&self, site: &str, seed: u64) -> SplitSpec {
        SplitSpec {
            test_years: self
                .sites
                .get(site)
                .map(|s| s.test_years.clone())
                .unwrap_or_default(),
            k: self.split.k,
            n_bins: self.split.n_bins,
            bin_width: self.split.bin_width,
            seed,
        }
    }

    pub fn ridge_setup(&self) -> RidgeSetup {
        RidgeSetup {
            features: self.model.features,
            target: self.target,
            lambda: self.model.lambda,
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::TimestampSource;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn site_defaults() {
        let cfg = PipelineConfig::default();
        let dt = |s: &str| cfg.site(s).unwrap().delta_t_s.seconds();
        assert_eq!((dt("folsom"), dt("sirta"), dt("nrel")), (-20, 10, -30));
        assert_eq!(
            cfg.site("folsom").unwrap().policy.source,
            TimestampSource::DateModified
        );
        assert_eq!(cfg.site("nrel").unwrap().policy.max_fn_dm_gap, Some(30));
        assert_eq!(cfg.split_spec("sirta", 3).test_years, vec![2019]);
        assert!(cfg.site("mars").is_err());
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let cfg =
            PipelineConfig::from_toml("[sites.folsom]\ndelta_t_s = -10\n[model]\nlambda = 0.5\n")
                .unwrap();
        assert_eq!(cfg.site("folsom").unwrap().delta_t_s.seconds(), -10);
        assert_eq!(cfg.site("folsom").unwrap().roi, RoiSpec::folsom());
        assert_eq!(cfg.model.lambda, 0.5);
        assert_eq!(cfg.sites.len(), 3);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(PipelineConfig::from_toml("colour = 1").is_err());
        assert!(PipelineConfig::from_toml("[sites.folsom]\ndelta_tee = 1").is_err());
        assert!(PipelineConfig::from_toml("[sites.folsom]\ndelta_t_s = 400").is_err());
        assert!(PipelineConfig::from_toml("[split]\nk = 1").is_err());
        assert!(PipelineConfig::from_toml("[target]\nkind = \"ghi\"\nweighted = true").is_err());
        // a new site must be complete
        assert!(PipelineConfig::from_toml("[sites.x]\ndelta_t_s = 0").is_err());
    }
}
