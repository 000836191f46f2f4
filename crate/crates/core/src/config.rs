//! TOML documents for runs, analyses, design problems and spacetime audits.
//!
//! Parse errors carry the line, column and field name reported by the TOML
//! deserializer.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::DesignProblem;
use crate::quantum::EntangledStateModel;
use crate::simulator::{ExperimentConfig, CENTER_SLOT, DEFAULT_SLOTS};
use crate::spacetime::{ExperimentGeometry, TrialChronology};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{context}: {message}")]
    Parse { context: String, message: String },
    #[error("{context}: invalid value for `{field}`: {message}")]
    Invalid {
        context: String,
        field: &'static str,
        message: String,
    },
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse<T: DeserializeOwned>(text: &str, context: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        context: context.to_string(),
        message: e.to_string().trim_end().to_string(),
    })
}

fn invalid(context: &str, field: &'static str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        context: context.to_string(),
        field,
        message: message.to_string(),
    }
}

/// Serializes any document back to TOML.
pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string_pretty(value).expect("config types serialize to TOML")
}

/// Parses and validates a run configuration. State amplitudes are
/// rescaled to unit norm.
pub fn parse_experiment(text: &str, context: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut config: ExperimentConfig = parse(text, context)?;
    let s = config.state;
    if !(s.c1.hypot(s.c2) > 0.0) {
        return Err(invalid(context, "state", "amplitudes c1 and c2 are both zero"));
    }
    config.state = EntangledStateModel::normalized(s.c1, s.c2).with_noise(s.dephasing, s.extinction);
    config
        .validate()
        .map_err(|e| invalid(context, "experiment", e))?;
    Ok(config)
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    parse_experiment(&read(path)?, &path.display().to_string())
}

pub fn parse_design_problem(text: &str, context: &str) -> Result<DesignProblem, ConfigError> {
    let problem: DesignProblem = parse(text, context)?;
    problem
        .validate()
        .map_err(|e| invalid(context, "problem", e))?;
    Ok(problem)
}

pub fn load_design_problem(path: &Path) -> Result<DesignProblem, ConfigError> {
    parse_design_problem(&read(path)?, &path.display().to_string())
}

/// Geometry, center-slot chronology and audit options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeDocument {
    pub geometry: ExperimentGeometry,
    pub chronology: TrialChronology,
    #[serde(default = "default_widths")]
    pub widths: Vec<u32>,
    /// Degrees between sampled boundary directions.
    #[serde(default = "default_resolution")]
    pub angular_resolution: f64,
    #[serde(default = "default_slots")]
    pub n_slots: usize,
    #[serde(default = "default_center")]
    pub center_slot: usize,
}

fn default_widths() -> Vec<u32> {
    vec![1, 3, 5, 7]
}

fn default_resolution() -> f64 {
    1.0
}

fn default_slots() -> usize {
    DEFAULT_SLOTS
}

fn default_center() -> usize {
    CENTER_SLOT
}

impl SpacetimeDocument {
    pub fn calibrated() -> Self {
        Self {
            geometry: ExperimentGeometry::calibrated(),
            chronology: TrialChronology::calibrated(),
            widths: default_widths(),
            angular_resolution: default_resolution(),
            n_slots: DEFAULT_SLOTS,
            center_slot: CENTER_SLOT,
        }
    }
}

pub fn parse_spacetime(text: &str, context: &str) -> Result<SpacetimeDocument, ConfigError> {
    let doc: SpacetimeDocument = parse(text, context)?;
    doc.geometry
        .validate()
        .map_err(|e| invalid(context, "geometry", e))?;
    doc.chronology
        .validate()
        .map_err(|e| invalid(context, "chronology", e))?;
    if doc.center_slot == 0 || doc.center_slot > doc.n_slots {
        return Err(invalid(context, "center_slot", "must lie within 1..=n_slots"));
    }
    Ok(doc)
}

pub fn load_spacetime(path: &Path) -> Result<SpacetimeDocument, ConfigError> {
    parse_spacetime(&read(path)?, &path.display().to_string())
}

/// Analysis options; command-line flags override them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub n_stop: Option<u64>,
    pub epsilon: Option<f64>,
    /// `CENTER:WIDTH`.
    pub slots: Option<String>,
    /// Stopping rule for each single-slot test (defaults to `n_stop`).
    pub slot_n_stop: Option<u64>,
    pub n_slots: Option<usize>,
    /// Spacetime document supplying the per-slot separation flags.
    pub spacetime: Option<PathBuf>,
}

pub fn parse_analysis(text: &str, context: &str) -> Result<AnalysisConfig, ConfigError> {
    parse(text, context)
}

pub fn load_analysis(path: &Path) -> Result<AnalysisConfig, ConfigError> {
    parse_analysis(&read(path)?, &path.display().to_string())
}

/// Parses `CENTER:WIDTH`.
pub fn parse_slot_window(text: &str) -> Result<(usize, usize), String> {
    let (center, width) = text
        .split_once(':')
        .ok_or_else(|| format!("expected CENTER:WIDTH, got `{text}`"))?;
    let num = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad number `{s}` in `{text}`: {e}"))
    };
    Ok((num(center)?, num(width)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_config_round_trips() {
        let config = ExperimentConfig::published(100, 9);
        let text = to_toml(&config);
        let back = parse_experiment(&text, "inline").unwrap();
        assert_eq!(back.detection, config.detection);
        assert_eq!(back.settings, config.settings);
        assert!((back.state.c1 - config.state.c1).abs() < 1e-15);
    }

    #[test]
    fn missing_field_is_named() {
        let text = to_toml(&ExperimentConfig::published(10, 1)).replace("eta_A = 0.747\n", "");
        let err = parse_experiment(&text, "cfg.toml").unwrap_err().to_string();
        assert!(err.contains("eta_A"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn amplitudes_are_normalized() {
        let text = to_toml(&ExperimentConfig::published(10, 1))
            .replace("c1 = 0.96", "c1 = 1.96");
        let config = parse_experiment(&text, "x").unwrap();
        assert!((config.state.c1.hypot(config.state.c2) - 1.0).abs() < 1e-12);
        assert!(config.state.c1 > 0.99);
    }

    #[test]
    fn design_problem_documents() {
        let p = DesignProblem::published();
        assert_eq!(parse_design_problem(&to_toml(&p), "x").unwrap(), p);
        let text = "objective = \"max_ch_value\"\n[detection]\neta_A = 1.0\neta_B = 1.0\nbg_A = 0.0\nbg_B = 0.0\np_pair = 5e-4\n[noise]\ndephasing = 1.0\nextinction = inf\n";
        let q = parse_design_problem(text, "x").unwrap();
        assert_eq!(q.restarts, 20);
    }

    #[test]
    fn spacetime_document_round_trips() {
        let doc = SpacetimeDocument::calibrated();
        assert_eq!(parse_spacetime(&to_toml(&doc), "x").unwrap(), doc);
        let mut bad = doc.clone();
        bad.chronology.t_emission_last = -5.0;
        assert!(matches!(
            parse_spacetime(&to_toml(&bad), "x"),
            Err(ConfigError::Invalid { field: "chronology", .. })
        ));
    }

    #[test]
    fn slot_window_syntax() {
        assert_eq!(parse_slot_window("6:5"), Ok((6, 5)));
        assert!(parse_slot_window("6").is_err());
        assert!(parse_slot_window("a:1").is_err());
    }
}
