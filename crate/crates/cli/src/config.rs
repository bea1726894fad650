//! TOML job configuration. Every section is optional; missing keys fall back
//! to library defaults and unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use qrsr::qr::{CodeConfig, EcLevel};
use qrsr::refine::RefineConfig;
use qrsr::tilt::TiltSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Table,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub ec_levels: Vec<EcLevel>,
    pub angles: Vec<f64>,
    pub messages: Vec<String>,
    pub blend_alpha: f64,
    /// Input images; relative paths resolve against the config file.
    pub inputs: Vec<PathBuf>,
    /// Number of procedural photos (seeds 0..n) used when no inputs are given.
    pub desk_photos: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        let spec = qrsr::verify::SweepSpec::default();
        SweepSection {
            ec_levels: spec.ec_levels,
            angles: spec.angles,
            messages: spec.messages,
            blend_alpha: spec.blend_alpha,
            inputs: Vec::new(),
            desk_photos: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JobConfig {
    pub format: Option<Format>,
    /// Reserved; the pipeline is deterministic and does not draw random numbers.
    pub seed: Option<u64>,
    pub code: CodeConfig,
    pub refine: RefineConfig,
    pub tilt: TiltSpec,
    pub sweep: SweepSection,
    /// Whether `refine.tau` was given; otherwise it follows the EC level.
    #[serde(skip)]
    pub tau_explicit: bool,
}

impl JobConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: JobConfig = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let raw: toml::Table = text.parse()?;
        cfg.tau_explicit = raw.get("refine").and_then(|r| r.get("tau")).is_some();
        let base = path.parent().unwrap_or(Path::new("."));
        for input in &mut cfg.sweep.inputs {
            if input.is_relative() {
                *input = base.join(&*input);
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg: JobConfig = toml::from_str("[code]\nec_level = \"H\"\n[refine]\nlambda2 = 5.0\n").unwrap();
        assert_eq!(
            cfg.code,
            CodeConfig {
                ec_level: EcLevel::H,
                ..CodeConfig::default()
            }
        );
        assert_eq!(cfg.refine.lambda2, 5.0);
        assert_eq!(cfg.refine.lambda1, RefineConfig::default().lambda1);
        assert_eq!(cfg.format, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<JobConfig>("[code]\nmodule_size = 4\n").is_err());
        assert!(toml::from_str::<JobConfig>("colour = 1\n").is_err());
    }

    #[test]
    fn step_rule_is_tagged() {
        let cfg: JobConfig = toml::from_str("[refine.step]\nrule = \"fixed\"\ngamma = 2.0\n").unwrap();
        assert_eq!(cfg.refine.step, qrsr::refine::StepRule::Fixed { gamma: 2.0 });
    }
}
