//! Audit configuration: defaults, an optional TOML file, then command-line
//! flags, each layer overriding the previous one.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curve;
use crate::error::{Error, Result};
use crate::similarity::{DEFAULT_THRESHOLD, DEFAULT_UNIQUENESS_BAND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Md),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Md => "md",
        })
    }
}

/// Parses `json,csv,md`; duplicates collapse, order is preserved.
pub fn parse_formats(s: &str) -> Result<Vec<ReportFormat>> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let f: ReportFormat = part.parse()?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no report format selected".into()));
    }
    Ok(out)
}

/// Parses a comma-separated list of retained fractions.
pub fn parse_steps(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("curve step {p:?} is not a number")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub threshold: f64,
    pub uniqueness_band: f64,
    pub curve_steps: Vec<f64>,
    pub real: Option<PathBuf>,
    pub gen: Option<PathBuf>,
    /// Separate FVD feature files; the similarity descriptors are used when absent.
    pub real_fvd: Option<PathBuf>,
    pub gen_fvd: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub formats: Vec<ReportFormat>,
    pub per_real: bool,
    pub diagonal_epsilon: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            uniqueness_band: DEFAULT_UNIQUENESS_BAND,
            curve_steps: curve::default_steps(),
            real: None,
            gen: None,
            real_fvd: None,
            gen_fvd: None,
            output_dir: None,
            formats: vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Md],
            per_real: false,
            diagonal_epsilon: 0.0,
        }
    }
}

/// One configuration layer; unset fields leave the lower layer untouched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub threshold: Option<f64>,
    pub uniqueness_band: Option<f64>,
    pub curve_steps: Option<Vec<f64>>,
    pub real: Option<PathBuf>,
    pub gen: Option<PathBuf>,
    pub real_fvd: Option<PathBuf>,
    pub gen_fvd: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub formats: Option<Vec<ReportFormat>>,
    pub per_real: Option<bool>,
    pub diagonal_epsilon: Option<f64>,
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }
}

impl AuditConfig {
    pub fn apply(&mut self, layer: ConfigLayer) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = layer.$field { self.$field = v; })*
            };
        }
        macro_rules! take_opt {
            ($($field:ident),*) => {
                $(if layer.$field.is_some() { self.$field = layer.$field; })*
            };
        }
        take!(
            threshold,
            uniqueness_band,
            curve_steps,
            formats,
            per_real,
            diagonal_epsilon
        );
        take_opt!(real, gen, real_fvd, gen_fvd, output_dir);
    }

    /// Defaults, then `file`, then `flags`.
    pub fn resolve(file: Option<ConfigLayer>, flags: ConfigLayer) -> Result<Self> {
        let mut cfg = AuditConfig::default();
        if let Some(file) = file {
            cfg.apply(file);
        }
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.uniqueness_band
            && self.uniqueness_band <= self.threshold
            && self.threshold <= 1.0;
        if !ordered {
            return Err(Error::Config(format!(
                "need 0 <= uniqueness_band ({}) <= threshold ({}) <= 1",
                self.uniqueness_band, self.threshold
            )));
        }
        if self.curve_steps.first() != Some(&1.0) {
            return Err(Error::Config("curve steps must start at 1.0".into()));
        }
        if self.curve_steps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config(
                "curve steps must be strictly decreasing".into(),
            ));
        }
        if self.curve_steps.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("curve steps must be positive".into()));
        }
        if self.formats.is_empty() {
            return Err(Error::Config("no report format selected".into()));
        }
        if self.real_fvd.is_some() != self.gen_fvd.is_some() {
            return Err(Error::Config(
                "real_fvd and gen_fvd must be given together".into(),
            ));
        }
        if !(self.diagonal_epsilon.is_finite() && self.diagonal_epsilon >= 0.0) {
            return Err(Error::Config("diagonal_epsilon must be >= 0".into()));
        }
        Ok(())
    }

    pub fn wants(&self, format: ReportFormat) -> bool {
        self.formats.contains(&format)
    }

    pub fn require_real(&self) -> Result<&Path> {
        self.real
            .as_deref()
            .ok_or_else(|| Error::Config("--real is required".into()))
    }

    pub fn require_gen(&self) -> Result<&Path> {
        self.gen
            .as_deref()
            .ok_or_else(|| Error::Config("--gen is required".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = AuditConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.threshold, 0.6);
        assert_eq!(cfg.uniqueness_band, 0.5);
        assert_eq!(cfg.curve_steps.len(), 11);
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file = ConfigLayer::from_toml(
            "threshold = 0.7\nuniqueness_band = 0.4\ncurve_steps = [1.0, 0.8]\n",
        )
        .unwrap();
        let flags = ConfigLayer {
            threshold: Some(0.9),
            ..ConfigLayer::default()
        };
        let cfg = AuditConfig::resolve(Some(file), flags).unwrap();
        assert_eq!(cfg.threshold, 0.9);
        assert_eq!(cfg.uniqueness_band, 0.4);
        assert_eq!(cfg.curve_steps, vec![1.0, 0.8]);
        assert_eq!(cfg.formats.len(), 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigLayer::from_toml("thresold = 0.7").is_err());
    }

    #[test]
    fn ordering_rules() {
        let bad = |layer: ConfigLayer| AuditConfig::resolve(None, layer).is_err();
        assert!(bad(ConfigLayer {
            uniqueness_band: Some(0.7),
            ..Default::default()
        }));
        assert!(bad(ConfigLayer {
            threshold: Some(1.2),
            ..Default::default()
        }));
        assert!(bad(ConfigLayer {
            curve_steps: Some(vec![0.9, 0.8]),
            ..Default::default()
        }));
        assert!(bad(ConfigLayer {
            curve_steps: Some(vec![1.0, 0.8, 0.8]),
            ..Default::default()
        }));
        assert!(bad(ConfigLayer {
            real_fvd: Some("a".into()),
            ..Default::default()
        }));
    }

    #[test]
    fn list_parsing() {
        assert_eq!(
            parse_formats("json, md,json").unwrap(),
            vec![ReportFormat::Json, ReportFormat::Md]
        );
        assert!(parse_formats("xml").is_err());
        assert!(parse_formats("").is_err());
        assert_eq!(parse_steps("1.0,0.9, 0.5").unwrap(), vec![1.0, 0.9, 0.5]);
        assert!(parse_steps("1.0,x").is_err());
    }
}
