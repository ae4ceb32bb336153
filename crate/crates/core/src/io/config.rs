//! The JSON run configuration.
//!
//! Every section and leaf has a default, unknown keys are rejected, and
//! `a.b.c=value` overrides replace existing leaves only.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::SRAD_MAX_DT;
use crate::error::{Error, Result};
use crate::io::read_file;
use crate::metrics::{RoiSpec, DEFAULT_DYNAMIC_RANGE, DEFAULT_GCNR_BINS};
use crate::phantom::PhantomSpec;
use crate::sweep::SweepConfig;
use crate::ttt::TttConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub phantom: PhantomSpec,
    pub ttt: TttConfig,
    pub metrics: MetricsConfig,
    pub baselines: BaselineConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub dynamic_range: f64,
    pub gcnr_bins: usize,
    /// Explicit regions; `null` derives them from the phantom geometry.
    pub roi: Option<RoiConfig>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            dynamic_range: DEFAULT_DYNAMIC_RANGE,
            gcnr_bins: DEFAULT_GCNR_BINS,
            roi: None,
        }
    }
}

/// A region in pixel coordinates, `(row, column)` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum Region {
    Disk { center: (f64, f64), radius: f64 },
    Annulus { center: (f64, f64), inner: f64, outer: f64 },
    Rect { top: usize, left: usize, height: usize, width: usize },
}

impl Region {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (py, px) = (y as f64, x as f64);
        match *self {
            Region::Disk { center, radius } => (py - center.0).hypot(px - center.1) <= radius,
            Region::Annulus { center, inner, outer } => {
                let d = (py - center.0).hypot(px - center.1);
                d > inner && d <= outer
            }
            Region::Rect {
                top,
                left,
                height,
                width,
            } => y >= top && y < top + height && x >= left && x < left + width,
        }
    }

    pub fn mask(&self, h: usize, w: usize) -> Vec<bool> {
        (0..h * w).map(|i| self.contains(i / w, i % w)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiConfig {
    pub signal: Region,
    pub background: Region,
    pub noise: Region,
}

impl RoiConfig {
    pub fn to_spec(&self, h: usize, w: usize) -> Result<RoiSpec> {
        let roi = RoiSpec {
            h,
            w,
            signal: self.signal.mask(h, w),
            background: self.background.mask(h, w),
            noise: self.noise.mask(h, w),
        };
        roi.validate()?;
        Ok(roi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub pcf_gamma: f64,
    pub srad_steps: usize,
    pub srad_dt: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            pcf_gamma: crate::baselines::PCF_DEFAULT_GAMMA,
            srad_steps: 50,
            srad_dt: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(config_err)
    }

    /// Reads `path` (defaults when `None`), applies `overrides` and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => {
                let bytes = read_file(p)?;
                let text = std::str::from_utf8(&bytes).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                Self::from_json_str(text)?
            }
            None => Self::default(),
        };
        let cfg = base.with_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut v = serde_json::to_value(self).map_err(config_err)?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        serde_json::from_value(v).map_err(config_err)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>| {
            r.map_err(|e| match e {
                Error::Config(_) => e,
                other => Error::Config(other.to_string()),
            })
        };
        wrap(self.phantom.validate())?;
        wrap(self.ttt.validate())?;
        let m = &self.metrics;
        if !(m.dynamic_range.is_finite() && m.dynamic_range > 0.0) {
            return Err(config_err("metrics.dynamic_range must be positive"));
        }
        if m.gcnr_bins < 2 {
            return Err(config_err("metrics.gcnr_bins must be at least 2"));
        }
        if let Some(r) = &m.roi {
            wrap(r.to_spec(self.phantom.height, self.phantom.width).map(|_| ()))?;
        }
        let b = &self.baselines;
        if !(b.pcf_gamma.is_finite() && b.pcf_gamma > 0.0) {
            return Err(config_err("baselines.pcf_gamma must be positive"));
        }
        if !(b.srad_dt > 0.0 && b.srad_dt <= SRAD_MAX_DT) {
            return Err(config_err(format!("baselines.srad_dt must lie in (0, {SRAD_MAX_DT}]")));
        }
        wrap(self.sweep.validate())?;
        Ok(())
    }

    /// Regions for images of the configured phantom.
    pub fn roi(&self) -> Result<RoiSpec> {
        match &self.metrics.roi {
            Some(r) => r.to_spec(self.phantom.height, self.phantom.width),
            None => RoiSpec::for_phantom(&self.phantom),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sets the leaf at a dotted path. The value is parsed as JSON and taken
/// as a plain string when that fails.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {assignment:?} is not of the form key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("override path {path:?} is malformed")));
    }
    let mut cur = root;
    for (i, k) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| config_err(format!("{} is not a section", keys[..i].join("."))))?;
        cur = obj
            .get_mut(*k)
            .ok_or_else(|| config_err(format!("unknown config key {}", keys[..=i].join("."))))?;
    }
    *cur = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}
