//! Command line front end and HTTP job service.

use calli_core::config::Config;
use calli_core::sim::Mismatch;
use calli_core::Error;
use serde::{Deserialize, Serialize};

pub mod commands;
pub mod service;

/// Per-run changes applied on top of a loaded [`Config`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_speed: Option<f64>,
    pub baseline_planning: bool,
    pub no_contact_compensation: bool,
    pub mismatch: Option<Mismatch>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: Config) -> calli_core::Result<Config> {
        if let Some(seed) = self.seed {
            cfg.plant.seed = seed;
        }
        if let Some(v) = self.max_speed {
            cfg = cfg.with_max_speed(v)?;
        }
        cfg.ablation.baseline_planning |= self.baseline_planning;
        cfg.controller.no_contact_compensation |= self.no_contact_compensation;
        if let Some(m) = self.mismatch {
            cfg.plant.mismatch = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `default`, `none` or a list like `mass=1.1,mu=1.3`.
pub fn parse_mismatch(text: &str) -> Result<Mismatch, String> {
    match text.trim() {
        "default" => return Ok(Mismatch::default()),
        "none" => return Ok(Mismatch::NONE),
        _ => {}
    }
    let mut m = Mismatch::NONE;
    for part in text.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{part}`"))?;
        let value: f64 = value.trim().parse().map_err(|e| format!("`{part}`: {e}"))?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(format!("`{part}`: scale must be > 0"));
        }
        match key.trim() {
            "mass" => m.mass_scale = value,
            "mu" => m.mu_scale = value,
            other => return Err(format!("unknown mismatch key `{other}`")),
        }
    }
    Ok(m)
}

/// Input errors exit with 2, everything else with 1.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Strokes { .. }
        | Error::Format { .. }
        | Error::Config(_)
        | Error::InvalidParameter { .. }
        | Error::InvalidWaypoints(_)
        | Error::Image(_) => 2,
        _ => 1,
    }
}

/// Field named by an input error, if any.
pub fn error_field(err: &Error) -> Option<String> {
    match err {
        Error::Strokes { field, .. } | Error::InvalidParameter { field, .. } => Some(field.clone()),
        Error::Format { line, .. } => Some(format!("line {line}")),
        _ => None,
    }
}
